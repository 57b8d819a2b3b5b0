use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::{Dims, Model};
use super::objective::{batch_loss, latent_noise};
use crate::datasets::Example;
use crate::error::{Error, Result};
use crate::neural::{adam_step, lr_schedule, AdamState, Graph, BN_MOMENTUM};

/// Mean losses of one training epoch; `loss_total = loss_rec + loss_kl`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_rec: f64,
    pub loss_kl: f64,
}

/// Model, optimizer state and progress; enough to resume bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: Model,
    pub adam: AdamState,
    /// Number of completed epochs.
    pub epoch: usize,
    pub log: Vec<EpochLog>,
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        let adam = AdamState::new(&model.store);
        Self { model, adam, epoch: 0, log: Vec::new() }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Training log as CSV: `epoch,lr,loss_total,loss_rec,loss_kl`.
pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,lr,loss_total,loss_rec,loss_kl\n");
    for r in log {
        writeln!(out, "{},{:e},{:.17e},{:.17e},{:.17e}", r.epoch, r.lr, r.loss_total, r.loss_rec, r.loss_kl).unwrap();
    }
    out
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F))
}

fn check_data(model: &Model, data: &[Example]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    for e in data {
        let d = Dims::of(&e.context, &e.future);
        if d != model.dims {
            return Err(Error::InvalidArgument(format!("scene {} has dimensions {d:?}", e.scene_id)));
        }
    }
    Ok(())
}

/// Runs one epoch over `data` and appends its log entry.
pub fn train_epoch(ckpt: &mut Checkpoint, data: &[Example]) -> Result<EpochLog> {
    check_data(&ckpt.model, data)?;
    let epoch = ckpt.epoch;
    let cfg = ckpt.model.config.clone();
    let lr = lr_schedule(epoch, cfg.learning_rate);
    let mut rng = epoch_rng(cfg.seed, epoch);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let (mut rec_sum, mut kl_sum, mut seen) = (0.0, 0.0, 0usize);
    for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
        if cfg.batch_norm && chunk.len() < 2 {
            continue;
        }
        let batch: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
        let noise = latent_noise(&ckpt.model, batch.len(), &mut rng)?;
        let mut g = Graph::new();
        let loss = batch_loss(&ckpt.model, &mut g, &batch, &noise, true)?;
        let (rec, kl) = (g.scalar(loss.rec), g.scalar(loss.kl));
        if !(rec.is_finite() && kl.is_finite()) {
            return Err(Error::NanLoss { epoch, batch: bi });
        }
        let grads = g.backward(loss.total, &ckpt.model.store)?;
        let stats = g.take_batch_stats();
        adam_step(&mut ckpt.adam, &mut ckpt.model.store, &grads, lr)?;
        ckpt.model.store.update_running(&stats, BN_MOMENTUM);
        rec_sum += rec * batch.len() as f64;
        kl_sum += kl * batch.len() as f64;
        seen += batch.len();
    }
    let seen = seen.max(1) as f64;
    let (loss_rec, loss_kl) = (rec_sum / seen, kl_sum / seen);
    let entry = EpochLog { epoch, lr, loss_total: loss_rec + loss_kl, loss_rec, loss_kl };
    ckpt.log.push(entry);
    ckpt.epoch += 1;
    Ok(entry)
}

/// Continues training until `ckpt.model.config.epochs` epochs are complete.
pub fn resume(ckpt: &mut Checkpoint, data: &[Example]) -> Result<()> {
    while ckpt.epoch < ckpt.model.config.epochs {
        train_epoch(ckpt, data)?;
    }
    Ok(())
}

/// Builds a model for the shapes of `data` and trains it for `config.epochs`.
pub fn train(config: ModelConfig, data: &[Example]) -> Result<Checkpoint> {
    let first = data.first().ok_or_else(|| Error::InvalidArgument("empty training set".into()))?;
    let model = Model::new(config, Dims::of(&first.context, &first.future))?;
    let mut ckpt = Checkpoint::new(model);
    resume(&mut ckpt, data)?;
    Ok(ckpt)
}

/// Mean training objective over `data` in eval mode, with latent offsets
/// drawn from `seed`: `(total, rec, kl)`.
pub fn evaluate_loss(model: &Model, data: &[Example], seed: u64) -> Result<(f64, f64, f64)> {
    check_data(model, data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut rec_sum, mut kl_sum) = (0.0, 0.0);
    for chunk in data.chunks(model.config.batch_size) {
        let batch: Vec<&Example> = chunk.iter().collect();
        let noise = latent_noise(model, batch.len(), &mut rng)?;
        let mut g = Graph::new();
        let loss = batch_loss(model, &mut g, &batch, &noise, false)?;
        rec_sum += g.scalar(loss.rec) * batch.len() as f64;
        kl_sum += g.scalar(loss.kl) * batch.len() as f64;
    }
    let n = data.len() as f64;
    Ok(((rec_sum + kl_sum) / n, rec_sum / n, kl_sum / n))
}
