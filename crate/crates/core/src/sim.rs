//! Synthetic furnace used as the test bed.
//!
//! Each electrode is an independent single-phase circuit: a source EMF
//! behind a supply reactance feeding the secondary circuit (reactance X,
//! system resistance R_f, arc resistance R_a). The arc resistance is
//! proportional to arc length, which integrates the lift command. The
//! secondary phase voltage is the voltage across the secondary circuit,
//! `E_2 = I_a * sqrt(X^2 + (R_a + R_f)^2)`, so `E_2 >= I_a * X` always.
//!
//! A charge collapse is modelled as the charge slumping onto the electrode:
//! arc resistance first sags quadratically over a short precursor, then
//! drops by the event magnitude (the arc is shorted) for the event duration.

use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::assessment::{confidence, lyapunov, lyapunov_pair, normalized_deltas, orientation, LyapunovConfig};
use crate::engine::{Engine, TickRecord};
use crate::protection::{CommandSource, ElectrodeCommand};
use crate::telemetry::{PhaseHistory, TelemetrySample, PHASES};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("script line {line}: {message}")]
    Script { line: usize, message: String },
    #[error("invalid plant parameter `{field}` = {value}")]
    Parameter { field: &'static str, value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantConfig {
    /// Setpoint used to size the source EMF, amperes.
    pub i_set: f64,
    /// Secondary-circuit reactance X, ohms.
    pub reactance_x: f64,
    /// Supply-side reactance in front of the secondary, ohms.
    pub x_supply: f64,
    /// System resistance R_f, ohms.
    pub r_furnace: f64,
    /// Arc resistance per unit of normalized arc length, ohms.
    pub arc_gain: f64,
    /// Gaussian current measurement noise, amperes.
    pub noise_sigma: f64,
    /// Gaussian pressure measurement noise, fraction of normal.
    pub pressure_noise: f64,
    /// Arc-length change per second at full lift velocity.
    pub max_lift_v: f64,
    pub collapse_precursor_s: f64,
    /// Fraction of the collapse magnitude reached by the end of the precursor.
    pub collapse_precursor_depth: f64,
    pub seed: u64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            i_set: 40_000.0,
            reactance_x: 0.004,
            x_supply: 0.001,
            r_furnace: 0.0005,
            arc_gain: 0.01,
            noise_sigma: 400.0,
            pressure_noise: 0.003,
            max_lift_v: 0.1,
            collapse_precursor_s: 3.0,
            collapse_precursor_depth: 0.3,
            seed: 0,
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("i_set", self.i_set),
            ("reactance_x", self.reactance_x),
            ("r_furnace", self.r_furnace),
            ("arc_gain", self.arc_gain),
            ("max_lift_v", self.max_lift_v),
        ];
        let non_negative = [
            ("x_supply", self.x_supply),
            ("noise_sigma", self.noise_sigma),
            ("pressure_noise", self.pressure_noise),
            ("collapse_precursor_s", self.collapse_precursor_s),
            ("collapse_precursor_depth", self.collapse_precursor_depth),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(SimError::Parameter { field, value });
            }
        }
        for (field, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(SimError::Parameter { field, value });
            }
        }
        if self.collapse_precursor_depth > 1.0 {
            return Err(SimError::Parameter {
                field: "collapse_precursor_depth",
                value: self.collapse_precursor_depth,
            });
        }
        Ok(())
    }

    /// Source EMF that drives exactly `i_set` at unit arc length.
    pub fn source_emf(&self) -> f64 {
        self.i_set * self.total_impedance(self.arc_gain)
    }

    fn total_impedance(&self, r_arc: f64) -> f64 {
        (self.reactance_x + self.x_supply).hypot(r_arc + self.r_furnace)
    }

    fn load_impedance(&self, r_arc: f64) -> f64 {
        self.reactance_x.hypot(r_arc + self.r_furnace)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Collapse,
    NonMetal,
    OverTransient,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Collapse => "Collapse",
            EventKind::NonMetal => "NonMetal",
            EventKind::OverTransient => "OverTransient",
        })
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "collapse" => Ok(EventKind::Collapse),
            "nonmetal" => Ok(EventKind::NonMetal),
            "overtransient" => Ok(EventKind::OverTransient),
            _ => Err(format!("unknown event kind `{s}`")),
        }
    }
}

/// Scripted disturbance.
///
/// * `Collapse`: fraction of arc resistance lost while the arc is shorted.
/// * `NonMetal`: cylinder pressure (fraction of normal) while pressing.
/// * `OverTransient`: additive current surge, amperes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub magnitude: f64,
    pub duration: f64,
    /// Zero-based phase, or every phase when `None`.
    pub phase: Option<usize>,
}

impl Event {
    pub fn affects(&self, phase: usize) -> bool {
        self.phase.is_none_or(|p| p == phase)
    }

    fn active(&self, t: f64) -> bool {
        t >= self.time && t < self.time + self.duration
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventScript {
    events: Vec<Event>,
}

impl EventScript {
    pub fn new(events: Vec<Event>) -> Result<Self, SimError> {
        for (i, e) in events.iter().enumerate() {
            let line = i + 1;
            if !(e.duration.is_finite() && e.duration > 0.0) {
                return Err(SimError::Script { line, message: "duration must be > 0".into() });
            }
            if !e.time.is_finite() || !e.magnitude.is_finite() {
                return Err(SimError::Script { line, message: "non-finite field".into() });
            }
            if e.phase.is_some_and(|p| p >= PHASES) {
                return Err(SimError::Script { line, message: "phase must be 1, 2 or 3".into() });
            }
            if i > 0 && e.time < events[i - 1].time {
                return Err(SimError::Script { line, message: "event times must be non-decreasing".into() });
            }
        }
        Ok(Self { events })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Parses `time kind magnitude duration [phase]` lines; `#` starts a
    /// comment. Phases are numbered 1-3.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self, SimError> {
        let mut events = Vec::new();
        let mut lines = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| SimError::Script { line: line_no, message: e.to_string() })?;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let err = |message: String| SimError::Script { line: line_no, message };
            let parts: Vec<&str> = body.split_whitespace().collect();
            if !(4..=5).contains(&parts.len()) {
                return Err(err("expected `time kind magnitude duration [phase]`".into()));
            }
            let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| err(format!("bad {what} `{s}`")));
            let phase = match parts.get(4) {
                None => None,
                Some(p) => match p.parse::<usize>() {
                    Ok(v @ 1..=3) => Some(v - 1),
                    _ => return Err(err(format!("bad phase `{p}`"))),
                },
            };
            events.push(Event {
                time: num(parts[0], "time")?,
                kind: parts[1].parse().map_err(err)?,
                magnitude: num(parts[2], "magnitude")?,
                duration: num(parts[3], "duration")?,
                phase,
            });
            lines.push(line_no);
        }
        Self::new(events).map_err(|e| match e {
            SimError::Script { line, message } => SimError::Script { line: lines[line - 1], message },
            other => other,
        })
    }

    /// `count` single-phase collapses, one at a random instant inside each of
    /// `count` equal slots of `duration`, at least 20 s from slot edges.
    pub fn random_collapses(count: usize, duration: f64, seed: u64) -> Result<Self, SimError> {
        const MARGIN: f64 = 20.0;
        if count == 0 {
            return Ok(Self::default());
        }
        let slot = duration / count as f64;
        if !(slot > 2.0 * MARGIN) {
            return Err(SimError::Parameter { field: "duration", value: duration });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let events = (0..count)
            .map(|i| {
                let offset = rng.random_range(MARGIN..slot - MARGIN);
                Event {
                    time: ((i as f64 * slot + offset) * 10.0).round() / 10.0,
                    kind: EventKind::Collapse,
                    magnitude: (rng.random_range(0.85..1.0) * 100.0f64).round() / 100.0,
                    duration: (rng.random_range(1.0..2.0) * 10.0f64).round() / 10.0,
                    phase: Some(rng.random_range(0..PHASES)),
                }
            })
            .collect();
        Self::new(events)
    }

    pub fn to_text(&self) -> String {
        self.events
            .iter()
            .map(|e| match e.phase {
                Some(p) => format!("{} {} {} {} {}\n", e.time, e.kind, e.magnitude, e.duration, p + 1),
                None => format!("{} {} {} {}\n", e.time, e.kind, e.magnitude, e.duration),
            })
            .collect()
    }

    /// True when `t` lies within `horizon` seconds before (or at) the onset
    /// of a collapse on `phase`.
    pub fn collapse_pending(&self, phase: usize, t: f64, horizon: f64) -> bool {
        self.events.iter().any(|e| {
            e.kind == EventKind::Collapse && e.affects(phase) && t >= e.time - horizon && t <= e.time
        })
    }
}

/// Noise-free quantities behind one emitted phase reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseTruth {
    pub arc_length: f64,
    pub r_arc: f64,
    /// |Z| of the secondary circuit, sqrt(X^2 + (R_a + R_f)^2).
    pub z_load: f64,
    pub ia: f64,
    pub e2: f64,
}

/// Three independent electrode circuits driven by an event script.
#[derive(Debug, Clone)]
pub struct Furnace {
    cfg: PlantConfig,
    script: EventScript,
    e_src: f64,
    lengths: [f64; PHASES],
    t: f64,
    rng: ChaCha8Rng,
    current_noise: Normal<f64>,
    pressure_noise: Normal<f64>,
}

impl Furnace {
    pub fn new(cfg: PlantConfig, script: EventScript) -> Result<Self, SimError> {
        cfg.validate()?;
        Ok(Self {
            e_src: cfg.source_emf(),
            lengths: [1.0; PHASES],
            t: 0.0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            current_noise: Normal::new(0.0, cfg.noise_sigma).expect("validated"),
            pressure_noise: Normal::new(0.0, cfg.pressure_noise).expect("validated"),
            cfg,
            script,
        })
    }

    pub fn config(&self) -> &PlantConfig {
        &self.cfg
    }

    pub fn script(&self) -> &EventScript {
        &self.script
    }

    pub fn set_arc_length(&mut self, phase: usize, length: f64) {
        self.lengths[phase] = length.max(0.0);
    }

    /// Fraction of arc resistance removed by collapses on `phase` at `t`.
    fn collapse_reduction(&self, phase: usize, t: f64) -> f64 {
        let pre = self.cfg.collapse_precursor_s;
        self.script
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Collapse && e.affects(phase))
            .map(|e| {
                if e.active(t) {
                    e.magnitude
                } else if pre > 0.0 && t >= e.time - pre && t < e.time {
                    let s = (t - (e.time - pre)) / pre;
                    self.cfg.collapse_precursor_depth * e.magnitude * s * s
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
            .clamp(0.0, 1.0)
    }

    fn active_sum(&self, kind: EventKind, phase: usize, t: f64) -> Option<f64> {
        let mut hit = false;
        let mut total = 0.0;
        for e in self.script.events.iter().filter(|e| e.kind == kind && e.affects(phase) && e.active(t)) {
            hit = true;
            total += e.magnitude;
        }
        hit.then_some(total)
    }

    fn truth(&self, phase: usize, t: f64) -> PhaseTruth {
        let length = self.lengths[phase];
        let r_arc = self.cfg.arc_gain * length * (1.0 - self.collapse_reduction(phase, t));
        let surge = self.active_sum(EventKind::OverTransient, phase, t).unwrap_or(0.0);
        let ia = (self.e_src / self.cfg.total_impedance(r_arc) + surge).max(0.0);
        let z_load = self.cfg.load_impedance(r_arc);
        PhaseTruth { arc_length: length, r_arc, z_load, ia, e2: ia * z_load }
    }

    /// Integrates the lift velocities from the previous step up to `t`, then
    /// measures. Measurement noise scales current and voltage together so
    /// every emitted pair keeps E_2 / I_a equal to the circuit impedance.
    pub fn step(&mut self, velocities: [f64; PHASES], t: f64) -> (TelemetrySample, [PhaseTruth; PHASES]) {
        let dt = (t - self.t).max(0.0);
        for (len, v) in self.lengths.iter_mut().zip(velocities) {
            *len = (*len + v.clamp(-1.0, 1.0) * self.cfg.max_lift_v * dt).max(0.0);
        }
        self.t = t;
        let mut sample = TelemetrySample::zero(t);
        let truths: [PhaseTruth; PHASES] = std::array::from_fn(|k| self.truth(k, t));
        for (k, truth) in truths.iter().enumerate() {
            let noisy = (truth.ia + self.current_noise.sample(&mut self.rng)).max(0.0);
            sample.ia[k] = noisy;
            sample.e2[k] = noisy * truth.z_load;
            let base = self.active_sum(EventKind::NonMetal, k, t).unwrap_or(1.0);
            sample.pressure[k] = (base + self.pressure_noise.sample(&mut self.rng)).max(0.0);
        }
        (sample, truths)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiGains {
    /// Lift fraction per ampere of error.
    pub kp: f64,
    /// Lift fraction per ampere-second of integrated error.
    pub ki: f64,
}

impl Default for PiGains {
    fn default() -> Self {
        Self { kp: 2e-4, ki: 2e-6 }
    }
}

/// Baseline electrode-lift regulator. Positive error (current above
/// setpoint) lifts the electrode.
#[derive(Debug, Clone, Default)]
pub struct PiRegulator {
    pub gains: PiGains,
    integral: f64,
}

impl PiRegulator {
    pub fn new(gains: PiGains) -> Self {
        Self { gains, integral: 0.0 }
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    pub fn step(&mut self, error: f64, dt: f64) -> ElectrodeCommand {
        self.integral += error * dt;
        // keep the integral term within the actuator range
        if self.gains.ki > 0.0 {
            let limit = 1.0 / self.gains.ki;
            self.integral = self.integral.clamp(-limit, limit);
        }
        let v = self.gains.kp * error + self.gains.ki * self.integral;
        ElectrodeCommand::new(v, CommandSource::Regulator)
    }
}

/// Output of a closed-loop run.
#[derive(Debug, Clone, Default)]
pub struct SimRun {
    pub samples: Vec<TelemetrySample>,
    pub truths: Vec<[PhaseTruth; PHASES]>,
    pub records: Vec<[TickRecord; PHASES]>,
}

/// Runs `steps` regulator cycles of the furnace under the PI regulator and
/// the protection engine. Commands issued at one step act on the next.
pub fn run_closed_loop(furnace: &mut Furnace, engine: &mut Engine, gains: PiGains, steps: usize) -> SimRun {
    let dt = engine.config().protection.dt_s;
    let i_set = engine.config().protection.i_set;
    let mut regulators = [(); PHASES].map(|_| PiRegulator::new(gains));
    let mut velocities = [0.0; PHASES];
    let mut run = SimRun::default();
    for i in 0..steps {
        let t = i as f64 * dt;
        let (sample, truth) = furnace.step(velocities, t);
        let reg: [ElectrodeCommand; PHASES] =
            std::array::from_fn(|k| regulators[k].step(sample.ia[k] - i_set, dt));
        let records = engine.tick(&sample, reg).expect("simulator emits valid samples");
        velocities = std::array::from_fn(|k| records[k].command.velocity);
        run.samples.push(sample);
        run.truths.push(truth);
        run.records.push(records);
    }
    run
}

/// Training targets for one phase at one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelRow {
    pub t: f64,
    /// Zero-based phase.
    pub phase: usize,
    /// Within the label horizon before a scripted collapse.
    pub collapse: bool,
    /// Targets are defined (enough history and a next sample exist).
    pub valid: bool,
    pub a1: f64,
    pub cf: f64,
    pub a3: f64,
}

/// Labels a telemetry trace for predictor training, one row per sample per
/// phase.
///
/// The a1 target is the realized next-step Lyapunov rate, normalized like
/// the engine does; a3 follows from the observed and realized rates. The
/// CF target is the confidence factor with the membership means set to 1
/// inside the collapse horizon and 0 outside it.
pub fn label_trace(
    samples: &[TelemetrySample],
    script: &EventScript,
    lyapunov_cfg: &LyapunovConfig,
    i_set: f64,
    dt: f64,
    horizon: f64,
) -> Vec<LabelRow> {
    let n = lyapunov_cfg.dim();
    let mut rows = Vec::with_capacity(samples.len() * PHASES);
    let mut histories = [(); PHASES].map(|_| PhaseHistory::new(n + 1, dt));
    let mut cfgs = [(); PHASES].map(|_| lyapunov_cfg.clone());
    for (i, s) in samples.iter().enumerate() {
        for k in 0..PHASES {
            let history = &mut histories[k];
            history.push(s.ia[k] - i_set).expect("validated sample");
            let collapse = script.collapse_pending(k, s.t, horizon);
            let mut row = LabelRow { t: s.t, phase: k, collapse, valid: false, a1: 0.0, cf: 0.0, a3: 0.0 };
            if let (Ok((v_now, v_prev)), Some(next)) = (lyapunov_pair(history, &cfgs[k]), samples.get(i + 1)) {
                let mut lags: Vec<f64> = vec![next.ia[k] - i_set];
                lags.extend((0..n - 1).map(|j| history.lag(j).expect("n + 1 entries").error));
                let v_next = lyapunov(&lags, &cfgs[k]).expect("dimension matches");
                let (a0, a1) = normalized_deltas(v_now, v_prev, v_next, dt, &mut cfgs[k]).expect("finite");
                let mu = if collapse { 1.0 } else { 0.0 };
                row.valid = true;
                row.a1 = a1;
                row.cf = confidence(a1, mu, mu).expect("in range");
                row.a3 = orientation(a0, a1);
            }
            rows.push(row);
        }
    }
    rows
}
