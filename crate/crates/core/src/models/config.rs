use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Cvae,
    Cuae,
    GmmCvae,
    GmmCuae,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Cvae, Variant::Cuae, Variant::GmmCvae, Variant::GmmCuae];

    pub fn is_gmm(self) -> bool {
        matches!(self, Variant::GmmCvae | Variant::GmmCuae)
    }

    /// Sigma-point decoding rather than random latent samples.
    pub fn is_unscented(self) -> bool {
        matches!(self, Variant::Cuae | Variant::GmmCuae)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Cvae => "cvae",
            Variant::Cuae => "cuae",
            Variant::GmmCvae => "gmm-cvae",
            Variant::GmmCuae => "gmm-cuae",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant `{s}`")))
    }
}

/// Training and architecture settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub latent_dim: usize,
    /// Latent mixture components; forced to 1 for the single-Gaussian variants.
    pub components: usize,
    /// Latent samples or sigma points decoded per component.
    pub samples: usize,
    /// Standard deviation of the reconstruction likelihood, meters.
    pub sigma: f64,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub weights_hidden: usize,
    pub batch_norm: bool,
    /// Positions are divided by this before entering a network.
    pub pos_scale: f64,
    /// Added to the diagonal of decoded per-timestep covariances, m².
    pub cov_floor: f64,
}

impl ModelConfig {
    pub fn new(variant: Variant) -> Self {
        let latent_dim = 8;
        Self {
            variant,
            latent_dim,
            components: if variant.is_gmm() { 3 } else { 1 },
            samples: if variant.is_unscented() { 2 * latent_dim + 1 } else { 16 },
            sigma: 1.0,
            seed: 0,
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            hidden: vec![128, 128],
            weights_hidden: 64,
            batch_norm: true,
            pos_scale: 10.0,
            cov_floor: 0.01,
        }
    }

    /// Effective component count.
    pub fn c(&self) -> usize {
        if self.variant.is_gmm() {
            self.components
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive");
        }
        if self.variant.is_gmm() && self.components == 0 {
            return bad("components must be positive");
        }
        if self.samples == 0 {
            return bad("samples must be positive");
        }
        if self.variant.is_unscented() && self.samples > 2 * self.latent_dim + 1 {
            return bad("samples exceed the 2n+1 sigma points");
        }
        if !(self.sigma > 0.0) || !(self.pos_scale > 0.0) || !(self.cov_floor >= 0.0) {
            return bad("sigma and pos_scale must be positive, cov_floor non-negative");
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return bad("batch_size and learning_rate must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) || self.weights_hidden == 0 {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }

    /// Flat `key = value` text, one setting per line.
    pub fn to_kv(&self) -> String {
        let hidden: Vec<String> = self.hidden.iter().map(ToString::to_string).collect();
        format!(
            "variant = {}\nlatent_dim = {}\ncomponents = {}\nsamples = {}\nsigma = {}\nseed = {}\n\
             epochs = {}\nbatch_size = {}\nlearning_rate = {}\nhidden = {}\nweights_hidden = {}\n\
             batch_norm = {}\npos_scale = {}\ncov_floor = {}\n",
            self.variant,
            self.latent_dim,
            self.components,
            self.samples,
            self.sigma,
            self.seed,
            self.epochs,
            self.batch_size,
            self.learning_rate,
            hidden.join(","),
            self.weights_hidden,
            self.batch_norm,
            self.pos_scale,
            self.cov_floor
        )
    }

    /// Parses `key = value` lines; `#` starts a comment. Keys not present keep
    /// the defaults of the given (or parsed) variant.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(Error::Parse {
                line: i + 1,
                msg: "expected `key = value`".into(),
            })?;
            pairs.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let variant = match pairs.iter().find(|(_, k, _)| k == "variant") {
            Some((_, _, v)) => v.parse()?,
            None => Variant::Cvae,
        };
        let mut cfg = ModelConfig::new(variant);
        for (line, k, v) in &pairs {
            cfg.set(k, v).map_err(|e| Error::Parse { line: *line, msg: e.to_string() })?;
        }
        Ok(cfg)
    }

    /// Sets one setting from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::InvalidArgument(format!("bad value `{v}` for {key}")))
        }
        match key {
            "variant" => self.variant = value.parse()?,
            "latent_dim" => self.latent_dim = num(key, value)?,
            "components" => self.components = num(key, value)?,
            "samples" => self.samples = num(key, value)?,
            "sigma" => self.sigma = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "hidden" => {
                self.hidden = value.split(',').map(|w| num(key, w.trim())).collect::<Result<_>>()?
            }
            "weights_hidden" => self.weights_hidden = num(key, value)?,
            "batch_norm" => self.batch_norm = num(key, value)?,
            "pos_scale" => self.pos_scale = num(key, value)?,
            "cov_floor" => self.cov_floor = num(key, value)?,
            _ => return Err(Error::InvalidArgument(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }
}
