//! Charge-collapse alerts.
//!
//! The derivation heuristic watches the last five one-step arc-current
//! differences: all must exceed a minimum rise, and the two newest must
//! outpace the three older ones by a fixed gap. The predictive alert fires
//! when the assessment says the dynamics are turning bad with enough
//! confidence.

use std::collections::VecDeque;

use crate::assessment::Assessment;
use crate::protection::{CommandSource, ElectrodeCommand, ProtectionConfig};

pub const WINDOW: usize = 5;

/// Last five arc-current derivations, newest first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HeuristicState {
    derivs: VecDeque<f64>,
}

impl HeuristicState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a state from derivations listed newest first. Entries beyond
    /// the fifth are dropped.
    pub fn from_newest_first(derivs: &[f64]) -> Self {
        Self { derivs: derivs.iter().take(WINDOW).copied().collect() }
    }

    pub fn push(&mut self, deriv: f64) {
        self.derivs.push_front(deriv);
        self.derivs.truncate(WINDOW);
    }

    pub fn derivs(&self) -> impl Iterator<Item = f64> + '_ {
        self.derivs.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.derivs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.derivs.is_empty()
    }
}

pub fn heuristic_alert(state: &HeuristicState, cfg: &ProtectionConfig) -> Option<ElectrodeCommand> {
    if state.len() < WINDOW {
        return None;
    }
    let d = &state.derivs;
    if !d.iter().all(|v| *v > cfg.heuristic_deriv_min) {
        return None;
    }
    let recent = d[0] + d[1];
    let older = d[2] + d[3] + d[4];
    (recent - older > cfg.heuristic_sum_gap)
        .then(|| ElectrodeCommand::new(cfg.predict_lift_frac, CommandSource::HeuristicCollapse))
}

pub fn predictive_alert(assessment: &Assessment, cfg: &ProtectionConfig) -> Option<ElectrodeCommand> {
    (assessment.cf > cfg.cf_alert && assessment.a3 == -1.0)
        .then(|| ElectrodeCommand::new(cfg.predict_lift_frac, CommandSource::PredictedCollapse))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn alert(d: &[f64]) -> Option<ElectrodeCommand> {
        heuristic_alert(&HeuristicState::from_newest_first(d), &ProtectionConfig::default())
    }

    #[test]
    fn gap_below_threshold_is_quiet() {
        // 7100 - 1200 = 5900
        assert_eq!(alert(&[3600.0, 3500.0, 400.0, 400.0, 400.0]), None);
    }

    #[test]
    fn gap_above_threshold_alerts_at_thirty_percent() {
        // 7800 - 1250 = 6550
        let cmd = alert(&[4000.0, 3800.0, 500.0, 400.0, 350.0]).unwrap();
        assert_eq!(cmd.source, CommandSource::HeuristicCollapse);
        assert_eq!(cmd.velocity, 0.3);
    }

    #[test]
    fn small_derivation_fails_gate() {
        assert_eq!(alert(&[4000.0, 3800.0, 500.0, 400.0, 200.0]), None);
        assert_eq!(alert(&[4000.0, 3800.0, 500.0, 400.0, 300.0]), None, "strict comparison");
    }

    #[test]
    fn needs_five_derivations() {
        assert_eq!(alert(&[9000.0, 9000.0, 400.0, 400.0]), None);
    }

    #[test]
    fn push_keeps_newest_first() {
        let mut s = HeuristicState::new();
        for v in 1..=7 {
            s.push(v as f64);
        }
        assert_eq!(s.derivs().collect::<Vec<_>>(), vec![7.0, 6.0, 5.0, 4.0, 3.0]);
    }

    #[test]
    fn predictive_examples() {
        let cfg = ProtectionConfig::default();
        let a = |cf, a3| Assessment { a0: 0.5, a1: 0.9, cf, a3 };
        let cmd = predictive_alert(&a(0.7, -1.0), &cfg).unwrap();
        assert_eq!((cmd.velocity, cmd.source), (0.3, CommandSource::PredictedCollapse));
        assert_eq!(predictive_alert(&a(0.7, 1.0), &cfg), None);
        assert_eq!(predictive_alert(&a(0.6, -1.0), &cfg), None);
    }

    proptest! {
        #[test]
        fn raising_newest_two_keeps_alert(
            d in proptest::array::uniform5(0.0f64..10_000.0),
            up0 in 0.0f64..5_000.0,
            up1 in 0.0f64..5_000.0,
        ) {
            if alert(&d).is_some() {
                let raised = [d[0] + up0, d[1] + up1, d[2], d[3], d[4]];
                prop_assert!(alert(&raised).is_some());
            }
        }
    }
}
