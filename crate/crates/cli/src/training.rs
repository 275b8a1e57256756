//! Turning labeled simulator traces into predictor training data.

use eaf_core::rbf::{build_features, init_network, GridInit, RbfError, RbfNetwork, TrainReport, TrainingSample};
use eaf_core::telemetry::{PhaseHistory, TelemetrySample, PHASES};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::PredictorConfig;
use crate::files::LabelRecord;

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub positives: Vec<TrainingSample>,
    pub negatives: Vec<TrainingSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Features from one trace. `labels` must hold one row per sample per
    /// phase, in telemetry order.
    pub fn extend_from_trace(
        &mut self,
        samples: &[TelemetrySample],
        labels: &[LabelRecord],
        n: usize,
        i_set: f64,
        dt: f64,
    ) -> Result<(), String> {
        if labels.len() != samples.len() * PHASES {
            return Err(format!(
                "labels hold {} rows but telemetry has {} samples ({} expected)",
                labels.len(),
                samples.len(),
                samples.len() * PHASES
            ));
        }
        for k in 0..PHASES {
            let mut history = PhaseHistory::new(n + 1, dt);
            for (i, s) in samples.iter().enumerate() {
                let label = &labels[i * PHASES + k];
                if label.phase != k + 1 || (label.t - s.t).abs() > 1e-9 {
                    return Err(format!(
                        "label row {} (t={}, phase {}) does not match telemetry t={} phase {}",
                        i * PHASES + k + 2,
                        label.t,
                        label.phase,
                        s.t,
                        k + 1
                    ));
                }
                history.push(s.ia[k] - i_set).map_err(|e| e.to_string())?;
                if label.valid == 0 {
                    continue;
                }
                let Ok(x) = build_features(&history, n) else { continue };
                let sample = TrainingSample { x, target: [label.a1, label.cf, label.a3] };
                if label.collapse != 0 {
                    self.positives.push(sample);
                } else {
                    self.negatives.push(sample);
                }
            }
        }
        Ok(())
    }

    /// All positives plus a seeded random subset of `ratio` negatives per
    /// positive. Without positives every negative is kept.
    pub fn balanced(&self, ratio: f64, seed: u64) -> Vec<TrainingSample> {
        let mut negatives = self.negatives.clone();
        if !self.positives.is_empty() {
            let keep = ((self.positives.len() as f64 * ratio).round() as usize).min(negatives.len());
            negatives.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            negatives.truncate(keep);
        }
        self.positives.iter().cloned().chain(negatives).collect()
    }
}

/// Initializes rules on the data's quantile grid and trains.
pub fn fit(
    data: &[TrainingSample],
    n: usize,
    cfg: &PredictorConfig,
    seed: u64,
) -> Result<(RbfNetwork, TrainReport), RbfError> {
    if data.is_empty() {
        return Err(RbfError::EmptyDataset);
    }
    let features: Vec<Vec<f64>> = data.iter().map(|s| s.x.clone()).collect();
    let grid = GridInit { rules: cfg.rules, range: (-1.0, 1.0), sigma_floor: cfg.sigma_floor };
    let mut net = init_network(n, cfg.eta, &grid, Some(&features))?;
    let report = net.train(data, cfg.epochs, seed)?;
    Ok((net, report))
}
