//! Per-tick orchestration: validate a sample, update each phase's history,
//! run the protection loops and both collapse alerts, and arbitrate one
//! command per electrode.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::assessment::{assess, lyapunov_pair, predicted_v, Assessment, AssessmentError, LyapunovConfig, VdotMax};
use crate::heuristic::{heuristic_alert, predictive_alert, HeuristicState};
use crate::protection::{
    arbitrate, eval_danger, eval_lowvolt, eval_nonmetal, eval_over, CommandSource, ConfigError, ElectrodeCommand,
    LoopState, ProtectionConfig,
};
use crate::rbf::{build_features, RbfNetwork};
use crate::sim::{PiGains, PiRegulator};
use crate::telemetry::{PhaseHistory, TelemetryError, TelemetrySample, TelemetryValidator, PHASES};

/// Alerts closer together than this belong to one cluster.
pub const ALERT_CLUSTER_GAP_S: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("model uses {model} lags but the Lyapunov matrix is {lyapunov}x{lyapunov}")]
    LagMismatch { model: usize, lyapunov: usize },
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Assessment(#[from] AssessmentError),
}

/// Where the engine's confidence factor comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CfSource {
    /// The network's CF output.
    #[default]
    Network,
    /// |a1| plus the firing rule's mean memberships.
    Memberships,
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub protection: ProtectionConfig,
    pub lyapunov: LyapunovConfig,
    pub model: Option<RbfNetwork>,
    pub cf_source: CfSource,
}

impl EngineConfig {
    pub fn protection_only(protection: ProtectionConfig) -> Self {
        Self {
            protection,
            lyapunov: LyapunovConfig::identity(5, VdotMax::running()),
            model: None,
            cf_source: CfSource::Network,
        }
    }

    pub fn with_model(protection: ProtectionConfig, lyapunov: LyapunovConfig, model: RbfNetwork) -> Self {
        Self { protection, lyapunov, model: Some(model), cf_source: CfSource::Network }
    }

    pub fn lags(&self) -> usize {
        self.model.as_ref().map_or(self.lyapunov.dim(), RbfNetwork::lags)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorStatus {
    /// No model loaded.
    Disabled,
    /// Fewer than n + 1 samples seen on this phase.
    ColdStart,
    /// No rule covers the current input.
    Uncovered,
    Ran,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub t: f64,
    /// Zero-based phase.
    pub phase: usize,
    /// Arbitrated command sent to the electrode.
    pub command: ElectrodeCommand,
    /// Every protection command raised this tick.
    pub fired: Vec<ElectrodeCommand>,
    pub assessment: Option<Assessment>,
    pub predictor: PredictorStatus,
}

impl TickRecord {
    pub fn raised(&self, source: CommandSource) -> bool {
        self.fired.iter().any(|c| c.source == source)
    }
}

#[derive(Debug, Clone)]
struct PhaseState {
    history: PhaseHistory,
    loops: LoopState,
    heuristic: HeuristicState,
    lyapunov: LyapunovConfig,
}

#[derive(Debug, Clone)]
pub struct Engine {
    cfg: EngineConfig,
    phases: [PhaseState; PHASES],
    validator: TelemetryValidator,
    warnings: Vec<String>,
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Result<Self, EngineError> {
        let warnings = cfg.protection.validate()?;
        if let Some(model) = &cfg.model {
            if model.lags() != cfg.lyapunov.dim() {
                return Err(EngineError::LagMismatch { model: model.lags(), lyapunov: cfg.lyapunov.dim() });
            }
        }
        let capacity = PhaseHistory::default_capacity(cfg.lags());
        let phase = PhaseState {
            history: PhaseHistory::new(capacity, cfg.protection.dt_s),
            loops: LoopState::default(),
            heuristic: HeuristicState::new(),
            lyapunov: cfg.lyapunov.clone(),
        };
        Ok(Self {
            phases: [(); PHASES].map(|_| phase.clone()),
            validator: TelemetryValidator::new(),
            warnings,
            cfg,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    /// Configuration warnings collected at construction.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Processes one sample. `regulator` carries the baseline command for
    /// each phase, used when no protection loop fires.
    pub fn tick(
        &mut self,
        sample: &TelemetrySample,
        regulator: [ElectrodeCommand; PHASES],
    ) -> Result<[TickRecord; PHASES], EngineError> {
        let sample = self.validator.validate(*sample)?;
        let mut out = Vec::with_capacity(PHASES);
        for (k, reg) in regulator.into_iter().enumerate() {
            out.push(self.tick_phase(k, &sample, reg)?);
        }
        Ok(out.try_into().expect("one record per phase"))
    }

    fn tick_phase(
        &mut self,
        k: usize,
        s: &TelemetrySample,
        regulator: ElectrodeCommand,
    ) -> Result<TickRecord, EngineError> {
        let cfg = &self.cfg;
        let p = &cfg.protection;
        let ph = &mut self.phases[k];
        let (ia, e2, pressure) = (s.ia[k], s.e2[k], s.pressure[k]);

        let first = ph.history.is_empty();
        ph.history.push(ia - p.i_set)?;
        if !first {
            ph.heuristic.push(ph.history.lag(0).expect("just pushed").deriv);
        }

        let mut fired = Vec::new();
        fired.extend(eval_danger(ia, p));
        let (over, loops) = eval_over(ia, &ph.loops, p);
        fired.extend(over);
        let (nonmetal, loops) = eval_nonmetal(pressure, &loops, p);
        fired.extend(nonmetal);
        let (lowvolt, loops) = eval_lowvolt(e2, ia, s.t, &loops, p);
        fired.extend(lowvolt);
        ph.loops = loops;
        fired.extend(heuristic_alert(&ph.heuristic, p));

        let (assessment, predictor) = match &cfg.model {
            None => (None, PredictorStatus::Disabled),
            Some(model) => match build_features(&ph.history, model.lags()) {
                Err(_) => (None, PredictorStatus::ColdStart),
                Ok(x) => match model.infer(&x) {
                    Err(_) => (None, PredictorStatus::Uncovered),
                    Ok(inf) => {
                        let (v_now, _) = lyapunov_pair(&ph.history, &ph.lyapunov)?;
                        let v_pred = predicted_v(v_now, inf.y[0].clamp(-1.0, 1.0), ph.history.period(), &ph.lyapunov);
                        let mut a = assess(&ph.history, v_pred, (inf.mu1_bar, inf.mu2_bar), &mut ph.lyapunov)?;
                        if cfg.cf_source == CfSource::Network {
                            a.cf = inf.y[1].clamp(0.0, 1.0);
                        }
                        (Some(a), PredictorStatus::Ran)
                    }
                },
            },
        };
        if let Some(a) = &assessment {
            fired.extend(predictive_alert(a, p));
        }

        Ok(TickRecord {
            t: s.t,
            phase: k,
            command: arbitrate(&fired, regulator),
            fired,
            assessment,
            predictor,
        })
    }
}

/// A non-regulator command that won arbitration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRow {
    pub t: f64,
    pub phase: usize,
    pub source: CommandSource,
    pub velocity: f64,
    pub ia: f64,
    pub e2: f64,
    pub pressure: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub t: f64,
    pub phase: usize,
    pub cf: f64,
    pub a3: f64,
    pub alert: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplaySummary {
    pub samples: usize,
    /// Times each source raised a command, per phase-tick.
    pub raised: BTreeMap<CommandSource, usize>,
    /// Times each source won arbitration.
    pub won: BTreeMap<CommandSource, usize>,
    pub cf_min: Option<f64>,
    pub cf_max: Option<f64>,
    pub cf_mean: Option<f64>,
    pub alerts: usize,
    pub alert_clusters: usize,
    /// Phase-ticks where no rule covered the predictor input.
    pub predictor_gaps: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayOutput {
    pub events: Vec<EventRow>,
    pub curve: Vec<CurveRow>,
    pub summary: ReplaySummary,
}

/// Groups sorted times into clusters separated by more than `gap`.
/// Returns (first, last) of each cluster.
pub fn cluster_times(times: &[f64], gap: f64) -> Vec<(f64, f64)> {
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out: Vec<(f64, f64)> = Vec::new();
    for t in sorted {
        match out.last_mut() {
            Some(last) if t - last.1 <= gap => last.1 = t,
            _ => out.push((t, t)),
        }
    }
    out
}

/// Runs a recorded trace through the engine. A shadow PI regulator on the
/// measured current supplies the baseline command.
pub fn replay(engine: &mut Engine, samples: &[TelemetrySample], gains: PiGains) -> Result<ReplayOutput, EngineError> {
    let dt = engine.config().protection.dt_s;
    let i_set = engine.config().protection.i_set;
    let mut regulators = [(); PHASES].map(|_| PiRegulator::new(gains));
    let mut out = ReplayOutput::default();
    let mut cf_sum = 0.0;
    let mut alert_times = Vec::new();
    for s in samples {
        let reg: [ElectrodeCommand; PHASES] = std::array::from_fn(|k| regulators[k].step(s.ia[k] - i_set, dt));
        let records = engine.tick(s, reg)?;
        out.summary.samples += 1;
        for r in &records {
            for c in &r.fired {
                *out.summary.raised.entry(c.source).or_default() += 1;
            }
            *out.summary.won.entry(r.command.source).or_default() += 1;
            if r.command.source != CommandSource::Regulator {
                out.events.push(EventRow {
                    t: r.t,
                    phase: r.phase,
                    source: r.command.source,
                    velocity: r.command.velocity,
                    ia: s.ia[r.phase],
                    e2: s.e2[r.phase],
                    pressure: s.pressure[r.phase],
                });
            }
            if r.predictor == PredictorStatus::Uncovered {
                out.summary.predictor_gaps += 1;
            }
            if let Some(a) = r.assessment {
                let alert = r.raised(CommandSource::PredictedCollapse);
                if alert {
                    alert_times.push(r.t);
                }
                cf_sum += a.cf;
                let sm = &mut out.summary;
                sm.cf_min = Some(sm.cf_min.map_or(a.cf, |m| m.min(a.cf)));
                sm.cf_max = Some(sm.cf_max.map_or(a.cf, |m| m.max(a.cf)));
                out.curve.push(CurveRow { t: r.t, phase: r.phase, cf: a.cf, a3: a.a3, alert });
            }
        }
    }
    if !out.curve.is_empty() {
        out.summary.cf_mean = Some(cf_sum / out.curve.len() as f64);
    }
    out.summary.alerts = alert_times.len();
    out.summary.alert_clusters = cluster_times(&alert_times, ALERT_CLUSTER_GAP_S).len();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbf::{RbfRule, OUTPUTS};

    fn sample(t: f64, ia: f64) -> TelemetrySample {
        TelemetrySample { t, ia: [ia; PHASES], e2: [ia * 0.011; PHASES], pressure: [1.0; PHASES] }
    }

    fn hold() -> [ElectrodeCommand; PHASES] {
        [ElectrodeCommand::hold(); PHASES]
    }

    fn protection_engine() -> Engine {
        Engine::new(EngineConfig::protection_only(ProtectionConfig::default())).unwrap()
    }

    /// One broad rule that always fires and predicts a steep rise with high
    /// confidence.
    fn alarming_model(n: usize) -> RbfNetwork {
        let rule = RbfRule {
            theta1: vec![0.0; n],
            sigma1: vec![1e6; n],
            theta2: vec![0.0; n],
            sigma2: vec![1e6; n],
            conclusions: [1.0, 0.9, -1.0],
        };
        RbfNetwork::new(vec![rule], n, 0.1).unwrap()
    }

    #[test]
    fn regulator_passes_through_when_quiet() {
        let mut e = protection_engine();
        let reg = [ElectrodeCommand::new(-0.2, CommandSource::Regulator); PHASES];
        let r = e.tick(&sample(0.0, 40_000.0), reg).unwrap();
        assert!(r.iter().all(|r| r.command.velocity == -0.2 && r.fired.is_empty()));
        assert!(r.iter().all(|r| r.predictor == PredictorStatus::Disabled));
    }

    #[test]
    fn danger_wins() {
        let mut e = protection_engine();
        let r = e.tick(&sample(0.0, 56_000.0), hold()).unwrap();
        assert_eq!(r[0].command.source, CommandSource::DangerLoop);
        assert!(r[0].raised(CommandSource::OverLoop));
    }

    #[test]
    fn over_current_escalates_after_hold() {
        let mut e = protection_engine();
        let sources: Vec<CommandSource> =
            (0..15).map(|i| e.tick(&sample(i as f64 * 0.1, 48_000.0), hold()).unwrap()[1].command.source).collect();
        assert_eq!(sources[9], CommandSource::OverLoop);
        assert_eq!(sources[10], CommandSource::OverSustained);
    }

    #[test]
    fn rejects_time_regression() {
        let mut e = protection_engine();
        e.tick(&sample(1.0, 40_000.0), hold()).unwrap();
        assert!(matches!(e.tick(&sample(0.5, 40_000.0), hold()), Err(EngineError::Telemetry(_))));
    }

    #[test]
    fn lag_mismatch_is_rejected() {
        let cfg = EngineConfig::with_model(
            ProtectionConfig::default(),
            LyapunovConfig::identity(4, VdotMax::Fixed(1.0)),
            alarming_model(5),
        );
        assert_eq!(Engine::new(cfg).unwrap_err(), EngineError::LagMismatch { model: 5, lyapunov: 4 });
    }

    #[test]
    fn predictor_waits_for_history_then_alerts_on_rise() {
        let n = 3;
        let cfg = EngineConfig::with_model(
            ProtectionConfig::default(),
            LyapunovConfig::identity(n, VdotMax::Fixed(1e9)),
            alarming_model(n),
        );
        let mut e = Engine::new(cfg).unwrap();
        let mut statuses = Vec::new();
        let mut last = None;
        for i in 0..6 {
            let r = e.tick(&sample(i as f64 * 0.1, 40_000.0 + 500.0 * i as f64), hold()).unwrap();
            statuses.push(r[0].predictor);
            last = Some(r);
        }
        assert_eq!(&statuses[..n], &[PredictorStatus::ColdStart; 3]);
        assert!(statuses[n..].iter().all(|s| *s == PredictorStatus::Ran));
        let r = &last.unwrap()[0];
        let a = r.assessment.unwrap();
        assert_eq!((a.a3, a.cf), (-1.0, 0.9));
        assert_eq!(r.command.source, CommandSource::PredictedCollapse);
        assert_eq!(r.command.velocity, 0.3);
    }

    #[test]
    fn uncovered_input_is_a_gap_not_an_error() {
        let n = 2;
        let rule = RbfRule {
            theta1: vec![1e7; n],
            sigma1: vec![1.0; n],
            theta2: vec![0.0; n],
            sigma2: vec![1.0; n],
            conclusions: [0.0; OUTPUTS],
        };
        let model = RbfNetwork::new(vec![rule], n, 0.1).unwrap();
        let cfg = EngineConfig::with_model(
            ProtectionConfig::default(),
            LyapunovConfig::identity(n, VdotMax::running()),
            model,
        );
        let mut e = Engine::new(cfg).unwrap();
        let samples: Vec<_> = (0..10).map(|i| sample(i as f64 * 0.1, 40_000.0)).collect();
        let out = replay(&mut e, &samples, PiGains::default()).unwrap();
        assert_eq!(out.summary.predictor_gaps, 3 * (10 - n));
        assert!(out.curve.is_empty());
    }

    #[test]
    fn replay_summary_counts() {
        let mut e = protection_engine();
        let samples: Vec<_> = (0..30).map(|i| sample(i as f64 * 0.1, if i < 20 { 40_000.0 } else { 48_000.0 })).collect();
        let out = replay(&mut e, &samples, PiGains::default()).unwrap();
        assert_eq!(out.summary.samples, 30);
        assert_eq!(out.summary.raised[&CommandSource::OverLoop], 3 * 10);
        assert_eq!(out.events.len(), 30);
        assert!(out.events.iter().all(|ev| ev.source == CommandSource::OverLoop && ev.ia == 48_000.0));
        assert_eq!(out.summary.cf_mean, None);
        assert_eq!(out.summary.alerts, 0);
    }

    #[test]
    fn clustering() {
        assert_eq!(cluster_times(&[], 1.0), vec![]);
        assert_eq!(cluster_times(&[5.0, 1.0, 1.5, 9.0, 5.5], 1.0), vec![(1.0, 1.5), (5.0, 5.5), (9.0, 9.0)]);
    }
}
