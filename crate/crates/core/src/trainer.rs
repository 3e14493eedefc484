//! Gradient-descent training with optional gradient-information targets,
//! per-epoch history, and the accuracy measures used across experiments.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{GiBatch, Mlp};
use crate::numerics::{mean, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Minibatch size; values ≥ the training-set size give full-batch descent.
    pub batch_size: usize,
    pub lr: f64,
    /// Weight on the target loss; `1 − alpha` goes to the Jacobian loss.
    pub alpha: f64,
    pub use_gi: bool,
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: usize::MAX,
            lr: 0.01,
            alpha: 0.5,
            use_gi: true,
            seed: 0,
            train_size: 250,
            test_size: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.train_size == 0 || self.test_size == 0 {
            return Err(Error::Config("batch_size, train_size and test_size must be ≥ 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::BadAlpha(self.alpha));
        }
        Ok(())
    }

    /// Weight actually applied to the target loss.
    pub fn effective_alpha(&self) -> f64 {
        if self.use_gi {
            self.alpha
        } else {
            1.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_rmse: f64,
    pub test_rmse: f64,
    /// Sum over the epoch's updates of the mean absolute parameter delta.
    pub param_delta: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_rmse,test_rmse,param_delta\n");
        for r in &self.records {
            writeln!(out, "{},{},{},{}", r.epoch, r.train_rmse, r.test_rmse, r.param_delta)
                .expect("writing to String");
        }
        out
    }

    /// Epoch-wise mean of equally long histories.
    pub fn average(runs: &[TrainHistory]) -> Result<TrainHistory> {
        let first = runs.first().ok_or(Error::Empty("histories to average"))?;
        if let Some(bad) = runs.iter().find(|h| h.len() != first.len()) {
            return Err(Error::shape("TrainHistory::average", first.len(), bad.len()));
        }
        let k = runs.len() as f64;
        let records = (0..first.len())
            .map(|e| {
                let sum = |f: fn(&EpochRecord) -> f64| runs.iter().map(|h| f(&h.records[e])).sum::<f64>() / k;
                EpochRecord {
                    epoch: first.records[e].epoch,
                    train_rmse: sum(|r| r.train_rmse),
                    test_rmse: sum(|r| r.test_rmse),
                    param_delta: sum(|r| r.param_delta),
                }
            })
            .collect();
        Ok(TrainHistory { records })
    }
}

/// RMSE of the network's predictions over every output of a batch.
pub fn batch_rmse(net: &Mlp, batch: &GiBatch) -> Result<f64> {
    let pred = net.forward_rows(batch.inputs())?;
    rmse(pred.data(), batch.targets().data())
}

/// Trains a copy of `net`, recording train and test RMSE after every epoch.
///
/// Conventional and GI runs sharing a seed see the same minibatch order, so
/// the comparison isolates the update rule. With `use_gi = false` or
/// `alpha = 1` the Jacobian loss is never evaluated.
pub fn train(net: &Mlp, train: &GiBatch, test: &GiBatch, cfg: &TrainConfig) -> Result<(Mlp, TrainHistory)> {
    run(net, train, Some(test), cfg)
}

/// Same updates as [`train`] without per-epoch evaluation.
pub fn fit(net: &Mlp, train: &GiBatch, cfg: &TrainConfig) -> Result<Mlp> {
    Ok(run(net, train, None, cfg)?.0)
}

fn run(net: &Mlp, train: &GiBatch, test: Option<&GiBatch>, cfg: &TrainConfig) -> Result<(Mlp, TrainHistory)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut net = net.clone();
    let mut history = TrainHistory::default();
    let alpha = cfg.effective_alpha();
    let with_gi = alpha < 1.0;
    let n = train.len();
    let full_batch = cfg.batch_size >= n;
    let mut rng = Rng::derive(cfg.seed, 0x7124);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        let mut param_delta = 0.0;
        if full_batch {
            param_delta += step(&mut net, train, with_gi, cfg.lr, alpha)?;
        } else {
            rng.shuffle(&mut order);
            for chunk in order.chunks(cfg.batch_size) {
                let batch = train.select(chunk);
                param_delta += step(&mut net, &batch, with_gi, cfg.lr, alpha)?;
            }
        }
        if !param_delta.is_finite() {
            return Err(Error::NonFinite(format!("train: diverged at epoch {epoch}")));
        }
        if let Some(test) = test {
            let record = EpochRecord {
                epoch,
                train_rmse: batch_rmse(&net, train)?,
                test_rmse: batch_rmse(&net, test)?,
                param_delta,
            };
            if !(record.train_rmse.is_finite() && record.test_rmse.is_finite()) {
                return Err(Error::NonFinite(format!("train: diverged at epoch {epoch}")));
            }
            history.records.push(record);
        }
    }
    if !net.params().iter().all(|p| p.is_finite()) {
        return Err(Error::NonFinite("train: non-finite parameters".into()));
    }
    Ok((net, history))
}

fn step(net: &mut Mlp, batch: &GiBatch, with_gi: bool, lr: f64, alpha: f64) -> Result<f64> {
    let (g_target, g_gi) = net.param_grads(batch, with_gi)?;
    Ok(net.apply_update(&g_target, g_gi.as_deref(), lr, alpha)?.mean_abs_delta)
}

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::shape("prediction length", truth.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let sq: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

/// Sample correlation coefficient.
pub fn pearson(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let (mp, mt) = (mean(pred), mean(truth));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let (dp, dt) = (p - mp, t - mt);
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("predictions"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("truth"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::OutputActivation;
    use crate::numerics::dot;
    use crate::processes::{gen_quadratic, ProcessSpec, ProcessKind};
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};

    fn setup(seed: u64) -> (Mlp, GiBatch, GiBatch) {
        let spec = ProcessSpec::new(ProcessKind::Quadratic);
        let mut rng = Rng::new(seed);
        let train = gen_quadratic(40, &mut rng, &spec).unwrap();
        let test = gen_quadratic(40, &mut rng, &spec.noiseless()).unwrap();
        let net = Mlp::init(&[1, 8, 1], OutputActivation::Identity, &mut rng).unwrap();
        (net, train, test)
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (net, train_set, test) = setup(1);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (out, hist) = train(&net, &train_set, &test, &cfg).unwrap();
        assert_eq!(out, net);
        assert!(hist.is_empty());
    }

    #[test]
    fn alpha_one_matches_conventional_bitwise() {
        let (net, train_set, test) = setup(2);
        for batch_size in [usize::MAX, 7] {
            let base = TrainConfig {
                epochs: 20,
                batch_size,
                lr: 0.002,
                seed: 5,
                ..TrainConfig::default()
            };
            let gi = TrainConfig {
                use_gi: true,
                alpha: 1.0,
                ..base.clone()
            };
            let conv = TrainConfig {
                use_gi: false,
                alpha: 0.3,
                ..base
            };
            let a = train(&net, &train_set, &test, &gi).unwrap();
            let b = train(&net, &train_set, &test, &conv).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn history_is_complete_and_deterministic() {
        let (net, train_set, test) = setup(3);
        let cfg = TrainConfig {
            epochs: 15,
            batch_size: 10,
            lr: 0.001,
            ..TrainConfig::default()
        };
        let (a, ha) = train(&net, &train_set, &test, &cfg).unwrap();
        let (b, hb) = train(&net, &train_set, &test, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha.to_csv(), hb.to_csv());
        assert_eq!(ha.len(), 15);
        assert!(ha
            .records
            .iter()
            .all(|r| r.train_rmse.is_finite() && r.test_rmse.is_finite() && r.param_delta.is_finite()));
        assert!(ha.last().unwrap().train_rmse < batch_rmse(&net, &train_set).unwrap());
    }

    #[test]
    fn fit_matches_train() {
        let (net, train_set, test) = setup(6);
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 8,
            lr: 0.001,
            ..TrainConfig::default()
        };
        assert_eq!(fit(&net, &train_set, &cfg).unwrap(), train(&net, &train_set, &test, &cfg).unwrap().0);
    }

    #[test]
    fn rejects_bad_config() {
        let (net, train_set, test) = setup(4);
        let bad = [
            TrainConfig { lr: 0.0, ..TrainConfig::default() },
            TrainConfig { alpha: 1.5, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
        ];
        for cfg in bad {
            assert!(train(&net, &train_set, &test, &cfg).is_err());
        }
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5f64.sqrt());
        assert!(matches!(rmse(&[], &[]), Err(Error::Empty(_))));
        let mut rng = Rng::new(11);
        let data: Vec<f64> = (0..100_000).map(|_| rng.standard_normal()).collect();
        let m = mean(&data);
        let r = rmse(&vec![m; data.len()], &data).unwrap();
        assert!((r - 1.0).abs() < 0.01, "{r}");
    }

    #[test]
    fn pearson_examples() {
        let t = [1.0, 3.0, 2.0, 5.0];
        assert!((pearson(&t, &t).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = t.iter().map(|v| -v).collect();
        assert!((pearson(&neg, &t).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::ZeroVariance(_))));

        // Gram–Schmidt a random vector against a centred truth vector.
        let mut rng = Rng::new(12);
        let centre = |v: Vec<f64>| {
            let m = mean(&v);
            v.into_iter().map(|x| x - m).collect::<Vec<_>>()
        };
        let truth = centre((0..50).map(|_| rng.standard_normal()).collect());
        let raw = centre((0..50).map(|_| rng.standard_normal()).collect());
        let k = dot(&raw, &truth) / dot(&truth, &truth);
        let orth: Vec<f64> = raw.iter().zip(&truth).map(|(r, t)| r - k * t).collect();
        assert!(pearson(&orth, &truth).unwrap().abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn pearson_in_unit_interval(v in prop::collection::vec(-1e3f64..1e3, 3..40), s in 0u64..1000) {
            let mut rng = Rng::new(s);
            let w: Vec<f64> = v.iter().map(|x| x + rng.standard_normal()).collect();
            if let Ok(r) = pearson(&v, &w) {
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }

        #[test]
        fn rmse_is_nonnegative_and_symmetric(v in prop::collection::vec(-1e3f64..1e3, 1..40)) {
            let w: Vec<f64> = v.iter().rev().copied().collect();
            let a = rmse(&v, &w).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert_eq!(a, rmse(&w, &v).unwrap());
        }
    }
}
