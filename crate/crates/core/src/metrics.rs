//! minADE / minFDE and per-scene evaluation reports.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::datasets::Example;
use crate::error::{Error, Result};
use crate::gaussmath::GaussianMixture;
use crate::models::{Model, PredictOptions};
use crate::postprocess::{mixture_nll, winner_nll, NLL_SENTINEL};
use crate::types::{PredictionSet, Trajectory};

/// Horizons of the NLL columns, seconds.
pub const HORIZONS: [f64; 3] = [1.0, 2.0, 3.0];

fn check_candidates(candidates: &[Trajectory]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate trajectories".into()));
    }
    Ok(())
}

pub fn min_ade(candidates: &[Trajectory], y: &Trajectory) -> Result<f64> {
    check_candidates(candidates)?;
    candidates.iter().try_fold(f64::INFINITY, |best, c| Ok(best.min(c.ade(y)?)))
}

pub fn min_fde(candidates: &[Trajectory], y: &Trajectory) -> Result<f64> {
    check_candidates(candidates)?;
    candidates.iter().try_fold(f64::INFINITY, |best, c| Ok(best.min(c.fde(y)?)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneMetrics {
    pub scene_id: u64,
    pub min_ade: f64,
    pub min_fde: f64,
    pub mix_nll: [f64; 3],
    pub win_nll: [f64; 3],
}

impl SceneMetrics {
    fn values(&self) -> [f64; 8] {
        let [m1, m2, m3] = self.mix_nll;
        let [w1, w2, w3] = self.win_nll;
        [self.min_ade, self.min_fde, m1, m2, m3, w1, w2, w3]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub variant: String,
    pub scenes: Vec<SceneMetrics>,
    /// Unweighted means over scenes, in column order.
    pub mean: [f64; 8],
    /// Scenes whose mixture NLL underflowed to the sentinel at any horizon.
    pub underflow_scenes: Vec<u64>,
}

impl Report {
    pub fn mean_min_ade(&self) -> f64 {
        self.mean[0]
    }

    pub fn mean_min_fde(&self) -> f64 {
        self.mean[1]
    }

    /// Per-scene rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("scene_id,variant,minADE,minFDE,mixNLL_1s,mixNLL_2s,mixNLL_3s,winNLL_1s,winNLL_2s,winNLL_3s\n");
        let row = |out: &mut String, id: &str, vals: &[f64; 8]| {
            write!(out, "{id},{}", self.variant).unwrap();
            for v in vals {
                write!(out, ",{v:.10e}").unwrap();
            }
            out.push('\n');
        };
        for s in &self.scenes {
            row(&mut out, &s.scene_id.to_string(), &s.values());
        }
        row(&mut out, "mean", &self.mean);
        out
    }
}

pub fn scene_metrics(scene_id: u64, pred: &PredictionSet, y: &Trajectory) -> Result<SceneMetrics> {
    let mut mix_nll = [0.0; 3];
    let mut win_nll = [0.0; 3];
    for (i, h) in HORIZONS.iter().enumerate() {
        mix_nll[i] = mixture_nll(pred, y, *h)?;
        win_nll[i] = winner_nll(pred, y, *h)?;
    }
    Ok(SceneMetrics {
        scene_id,
        min_ade: min_ade(&pred.trajectories, y)?,
        min_fde: min_fde(&pred.trajectories, y)?,
        mix_nll,
        win_nll,
    })
}

/// Scores predictions keyed by scene id against every scene of the split.
/// Scenes are reported in split order; the mean is order-independent.
pub fn evaluate_predictions(
    variant: &str,
    predictions: &HashMap<u64, PredictionSet>,
    scenes: &[Example],
) -> Result<Report> {
    let missing: Vec<u64> =
        scenes.iter().map(|s| s.scene_id).filter(|id| !predictions.contains_key(id)).collect();
    if !missing.is_empty() {
        return Err(Error::MissingScenes(missing));
    }
    let rows = scenes
        .iter()
        .map(|s| scene_metrics(s.scene_id, &predictions[&s.scene_id], &s.future))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(variant, rows))
}

fn aggregate(variant: &str, scenes: Vec<SceneMetrics>) -> Report {
    let mut sorted: Vec<[f64; 8]> = scenes.iter().map(SceneMetrics::values).collect();
    // Sum in a canonical order so the mean does not depend on scene order.
    sorted.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    let mut mean = [0.0; 8];
    for v in &sorted {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let n = scenes.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let underflow_scenes =
        scenes.iter().filter(|s| s.mix_nll.contains(&NLL_SENTINEL)).map(|s| s.scene_id).collect();
    Report { variant: variant.to_string(), scenes, mean, underflow_scenes }
}

/// Predicts every scene with `model` and scores the result.
pub fn evaluate(
    model: &Model,
    scenes: &[Example],
    opts: &PredictOptions,
    joint: Option<&GaussianMixture>,
) -> Result<Report> {
    let rows = scenes
        .iter()
        .map(|s| scene_metrics(s.scene_id, &model.predict(&s.context, opts, joint)?.set, &s.future))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(model.config.variant.name(), rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate, GeneratorConfig};
    use proptest::prelude::*;

    fn offset(y: &Trajectory, dx: f64, dy: f64) -> Trajectory {
        Trajectory { positions: y.positions.iter().map(|p| [p[0] + dx, p[1] + dy]).collect() }
    }

    fn line(t: usize) -> Trajectory {
        Trajectory { positions: (0..t).map(|i| [i as f64, 0.5 * i as f64]).collect() }
    }

    #[test]
    fn min_ade_examples() {
        let y = line(5);
        assert_eq!(min_ade(&[offset(&y, 3.0, 1.0), y.clone()], &y).unwrap(), 0.0);
        assert!((min_ade(&[offset(&y, 1.0, 0.0)], &y).unwrap() - 1.0).abs() < 1e-12);
        let two = [offset(&y, 2.0, 0.0), offset(&y, 0.0, 1.0)];
        assert!((min_ade(&two, &y).unwrap() - 1.0).abs() < 1e-12);
        assert!(min_ade(&[], &y).is_err());
        assert!(min_ade(&[line(4)], &y).is_err());
    }

    #[test]
    fn min_fde_examples() {
        let y = line(5);
        let mut end_hit = offset(&y, 1.0, 1.0);
        end_hit.positions[4] = y.positions[4];
        assert_eq!(min_fde(&[end_hit], &y).unwrap(), 0.0);
        assert!((min_fde(&[offset(&y, 3.0, 4.0)], &y).unwrap() - 5.0).abs() < 1e-12);
        let pair = [offset(&y, 3.0, 4.0), offset(&y, 0.0, 2.0)];
        assert!((min_fde(&pair, &y).unwrap() - 2.0).abs() < 1e-12);
    }

    fn split(n: usize) -> Vec<Example> {
        let cfg = GeneratorConfig { n_scenes: n, val_fraction: 0.0, ..GeneratorConfig::default() };
        generate(&cfg).unwrap().train.iter().map(|s| s.example()).collect()
    }

    #[test]
    fn perfect_prediction_hits_floors() {
        let scenes = split(1);
        let preds = HashMap::from([(scenes[0].scene_id, PredictionSet::uniform(vec![scenes[0].future.clone()]))]);
        let r = evaluate_predictions("cvae", &preds, &scenes).unwrap();
        assert_eq!(r.mean[0], 0.0);
        assert_eq!(r.mean[1], 0.0);
        for v in &r.mean[2..] {
            assert!((v - 1.8378770664093453).abs() < 1e-12);
        }
        assert!(r.to_csv().lines().last().unwrap().starts_with("mean,cvae,0.0000000000e0"));
    }

    #[test]
    fn duplicates_shuffles_and_missing() {
        let scenes = split(6);
        let preds: HashMap<u64, PredictionSet> = scenes
            .iter()
            .enumerate()
            .map(|(i, s)| (s.scene_id, PredictionSet::uniform(vec![offset(&s.future, 0.1 * i as f64, 0.3)])))
            .collect();
        let one = vec![scenes[2].clone(); 4];
        let dup = evaluate_predictions("x", &preds, &one).unwrap();
        let single = evaluate_predictions("x", &preds, &scenes[2..3]).unwrap();
        assert_eq!(dup.mean, single.mean);

        let base = evaluate_predictions("x", &preds, &scenes).unwrap();
        let mut shuffled = scenes.clone();
        shuffled.reverse();
        shuffled.swap(0, 3);
        assert_eq!(evaluate_predictions("x", &preds, &shuffled).unwrap().mean, base.mean);

        let mut partial = preds.clone();
        partial.remove(&scenes[1].scene_id);
        partial.remove(&scenes[4].scene_id);
        match evaluate_predictions("x", &partial, &scenes) {
            Err(Error::MissingScenes(ids)) => assert_eq!(ids, vec![scenes[1].scene_id, scenes[4].scene_id]),
            other => panic!("expected missing scenes, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn min_is_a_lower_bound(offsets in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..6),
                                extra in (-3.0f64..3.0, -3.0f64..3.0)) {
            let y = line(6);
            let mut cands: Vec<Trajectory> = offsets.iter().map(|(a, b)| offset(&y, *a, *b)).collect();
            let ade = min_ade(&cands, &y).unwrap();
            let fde = min_fde(&cands, &y).unwrap();
            for c in &cands {
                prop_assert!(ade <= c.ade(&y).unwrap());
            }
            cands.push(offset(&y, extra.0, extra.1));
            prop_assert!(min_ade(&cands, &y).unwrap() <= ade);
            prop_assert!(min_fde(&cands, &y).unwrap() <= fde);
        }
    }
}
