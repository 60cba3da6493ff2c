//! Mini-batch training with the NPCC loss.

#[allow(unused_imports)]
use num_traits::Float as _;

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::adam::AdamState;
use super::loss::npcc_batch;
use super::network::{Network, NetworkConfig};
use super::tensor::Tensor;
use crate::grid::Grid;
use crate::rng::{derive_seed, seeded};
use crate::{Error, Result};

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 5,
            epochs: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(
                "learning_rate",
                "must be positive and finite",
            ));
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::config(field, "must lie in (0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

/// One measurement and the phase that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub measurement: Grid,
    pub phase: Grid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean per-batch NPCC over the epoch.
    pub mean_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }
}

/// Network input for one intensity measurement.
pub fn encode_measurement(measurement: &Grid, cfg: &NetworkConfig) -> Result<Vec<f64>> {
    measurement.expect_square(cfg.input_side)?;
    Ok(measurement
        .as_slice()
        .iter()
        .map(|g| (g - cfg.input_offset) * cfg.input_gain)
        .collect())
}

fn stack(grids: impl Iterator<Item = Vec<f64>>, n: usize) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut b = 0;
    for g in grids {
        data.extend(g);
        b += 1;
    }
    Tensor::from_vec(&[b, 1, n, n], data)
}

/// Trains `net` in place. `on_epoch` runs after every epoch (checkpointing,
/// progress) and may abort training by returning an error.
pub fn train(
    net: &mut Network,
    pairs: &[TrainingPair],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport, &Network) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let ncfg = net.config().clone();
    let n = ncfg.input_side;
    let inputs: Vec<Vec<f64>> = pairs
        .iter()
        .map(|p| encode_measurement(&p.measurement, &ncfg))
        .collect::<Result<_>>()?;
    for p in pairs {
        p.phase.expect_square(n)?;
    }

    let mut adam = AdamState::for_params(&net.params_mut());
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = seeded(derive_seed(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let x = stack(chunk.iter().map(|&i| inputs[i].clone()), n)?;
            let t = stack(chunk.iter().map(|&i| pairs[i].phase.as_slice().to_vec()), n)?;
            let y = net.forward(&x)?;
            let (loss, grad) = match npcc_batch(&y, &t) {
                Ok(v) => v,
                Err(Error::Degenerate(_)) => {
                    net.clear_cache();
                    return Err(Error::NonFiniteLoss { epoch, step });
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            net.zero_grad();
            net.backward(&grad)?;
            adam.update(&mut net.params_mut(), cfg)?;
            total += loss;
            batches += 1;
        }
        let rep = EpochReport {
            epoch,
            mean_loss: total / batches as f64,
        };
        report.epochs.push(rep);
        on_epoch(&rep, net)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tiny() -> NetworkConfig {
        NetworkConfig {
            n_down_blocks: 1,
            n_up_blocks: 1,
            n_res_blocks: 1,
            base_channels: 4,
            input_side: 8,
            ..Default::default()
        }
    }

    fn pair(k: usize) -> TrainingPair {
        let phase = Grid::from_fn(8, 8, |r, c| {
            ((r * 3 + c * (k + 1)) as f64 * 0.4).sin() * 0.3
        });
        let measurement = phase.map(|p| 1.0 + 0.5 * p);
        TrainingPair { measurement, phase }
    }

    #[test]
    fn memorizes_one_sample() {
        let mut net = Network::build(&tiny(), 3).unwrap();
        let pairs = vec![pair(0)];
        let cfg = TrainConfig {
            epochs: 400,
            batch_size: 1,
            ..Default::default()
        };
        let rep = train(&mut net, &pairs, &cfg, |_, _| Ok(())).unwrap();
        assert!(rep.final_loss().unwrap() < -0.99, "{:?}", rep.final_loss());
    }

    #[test]
    fn reproducible_and_reports_every_epoch() {
        let pairs: Vec<_> = (0..7).map(pair).collect();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 3,
            seed: 11,
            ..Default::default()
        };
        let run = || {
            let mut net = Network::build(&tiny(), 5).unwrap();
            let mut seen = 0;
            let rep = train(&mut net, &pairs, &cfg, |e, _| {
                assert_eq!(e.epoch, seen);
                seen += 1;
                Ok(())
            })
            .unwrap();
            assert_eq!(seen, 3);
            rep.losses()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_empty_and_bad_config() {
        let mut net = Network::build(&tiny(), 1).unwrap();
        let cfg = TrainConfig::default();
        assert!(matches!(
            train(&mut net, &[], &cfg, |_, _| Ok(())),
            Err(Error::Empty(_))
        ));
        let bad = TrainConfig {
            beta1: 1.0,
            ..Default::default()
        };
        assert!(train(&mut net, &[pair(0)], &bad, |_, _| Ok(())).is_err());
        let wrong = TrainingPair {
            measurement: Grid::zeros(4, 4),
            phase: Grid::zeros(4, 4),
        };
        assert!(train(&mut net, &[wrong], &cfg, |_, _| Ok(())).is_err());
    }

    #[test]
    fn constant_truth_aborts_with_diagnostics() {
        let mut net = Network::build(&tiny(), 1).unwrap();
        let p = TrainingPair {
            measurement: Grid::filled(8, 8, 1.0),
            phase: Grid::zeros(8, 8),
        };
        let err = train(&mut net, &[p], &TrainConfig::default(), |_, _| Ok(())).unwrap_err();
        assert_eq!(err, Error::NonFiniteLoss { epoch: 0, step: 0 });
    }
}
