//! Threshold protection loops for the electrode lift: dangerous current,
//! over-current (with escalation after a hold time), non-metal detection from
//! hydraulic pressure, and low-voltage charge-collapse detection, plus the
//! arbitration that merges their outputs with the regulator command.
//!
//! Every evaluator is a pure function of its inputs and an explicit
//! [`LoopState`], so a replay of the same stream reproduces the same commands.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Slack on hold-time comparisons so that accumulating `dt` in floating
/// point cannot turn "exactly the hold time" into "more than the hold time".
const HOLD_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("`{field}` must be {requirement}, got {value}")]
    OutOfRange {
        field: &'static str,
        requirement: &'static str,
        value: f64,
    },
}

/// Setpoints, thresholds and hold times of the protection system.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtectionConfig {
    /// Arc-current setpoint I_s, amperes.
    pub i_set: f64,
    /// I_danger = i_set + danger_bias.
    pub danger_bias: f64,
    /// I_over = i_set + over_bias.
    pub over_bias: f64,
    pub over_hold_s: f64,
    /// Non-metal threshold as a fraction of normal cylinder pressure.
    pub pressure_factor: f64,
    pub pressure_hold_s: f64,
    /// Collapse when E_2 <= lowvolt_factor * I_a * X.
    pub lowvolt_factor: f64,
    /// Secondary-circuit reactance X, ohms.
    pub reactance_x: f64,
    pub collapse_lift_s: f64,
    pub heuristic_deriv_min: f64,
    pub heuristic_sum_gap: f64,
    pub cf_alert: f64,
    pub predict_lift_frac: f64,
    /// Lower edge of the normal range; below it the arc is still being struck.
    pub arc_on_min: f64,
    /// Regulator cycle, seconds.
    pub dt_s: f64,
}

impl Default for ProtectionConfig {
    fn default() -> Self {
        Self {
            i_set: 40_000.0,
            danger_bias: 15_000.0,
            over_bias: 7_500.0,
            over_hold_s: 1.0,
            pressure_factor: 0.9,
            pressure_hold_s: 1.5,
            lowvolt_factor: 1.2,
            reactance_x: 0.004,
            collapse_lift_s: 2.0,
            heuristic_deriv_min: 300.0,
            heuristic_sum_gap: 6_000.0,
            cf_alert: 0.6,
            predict_lift_frac: 0.3,
            arc_on_min: 5_000.0,
            dt_s: 0.1,
        }
    }
}

impl ProtectionConfig {
    pub const SETPOINT_BAND: (f64, f64) = (35_000.0, 45_000.0);

    pub fn danger_threshold(&self) -> f64 {
        self.i_set + self.danger_bias
    }

    pub fn over_threshold(&self) -> f64 {
        self.i_set + self.over_bias
    }

    /// Checks the hard invariants. Returns warnings for soft ones (setpoint
    /// outside the furnace's 35-45 kA band).
    pub fn validate(&self) -> Result<Vec<String>, ConfigError> {
        let positive = [
            ("i_set", self.i_set),
            ("danger_bias", self.danger_bias),
            ("over_bias", self.over_bias),
            ("over_hold_s", self.over_hold_s),
            ("pressure_factor", self.pressure_factor),
            ("pressure_hold_s", self.pressure_hold_s),
            ("lowvolt_factor", self.lowvolt_factor),
            ("reactance_x", self.reactance_x),
            ("collapse_lift_s", self.collapse_lift_s),
            ("heuristic_deriv_min", self.heuristic_deriv_min),
            ("heuristic_sum_gap", self.heuristic_sum_gap),
            ("cf_alert", self.cf_alert),
            ("predict_lift_frac", self.predict_lift_frac),
            ("arc_on_min", self.arc_on_min),
            ("dt_s", self.dt_s),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ConfigError::OutOfRange { field, requirement: "finite and > 0", value });
            }
        }
        if self.pressure_factor >= 1.0 {
            return Err(ConfigError::OutOfRange {
                field: "pressure_factor",
                requirement: "< 1",
                value: self.pressure_factor,
            });
        }
        if self.lowvolt_factor <= 1.0 {
            return Err(ConfigError::OutOfRange {
                field: "lowvolt_factor",
                requirement: "> 1",
                value: self.lowvolt_factor,
            });
        }
        if self.predict_lift_frac > 1.0 {
            return Err(ConfigError::OutOfRange {
                field: "predict_lift_frac",
                requirement: "<= 1",
                value: self.predict_lift_frac,
            });
        }
        let mut warnings = Vec::new();
        let (lo, hi) = Self::SETPOINT_BAND;
        if self.i_set < lo || self.i_set > hi {
            warnings.push(format!(
                "i_set = {} A is outside the furnace setpoint band {lo}-{hi} A",
                self.i_set
            ));
        }
        Ok(warnings)
    }
}

/// Which mechanism produced a command. Declaration order is arbitration
/// priority, highest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CommandSource {
    DangerLoop,
    OverSustained,
    LowVoltCollapse,
    HeuristicCollapse,
    PredictedCollapse,
    OverLoop,
    NonMetal,
    Regulator,
}

impl CommandSource {
    pub const ALL: [CommandSource; 8] = [
        CommandSource::DangerLoop,
        CommandSource::OverSustained,
        CommandSource::LowVoltCollapse,
        CommandSource::HeuristicCollapse,
        CommandSource::PredictedCollapse,
        CommandSource::OverLoop,
        CommandSource::NonMetal,
        CommandSource::Regulator,
    ];

    /// Larger is more important.
    pub fn priority(self) -> u8 {
        (Self::ALL.len() - self as usize) as u8
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CommandSource::DangerLoop => "DangerLoop",
            CommandSource::OverSustained => "OverSustained",
            CommandSource::LowVoltCollapse => "LowVoltCollapse",
            CommandSource::HeuristicCollapse => "HeuristicCollapse",
            CommandSource::PredictedCollapse => "PredictedCollapse",
            CommandSource::OverLoop => "OverLoop",
            CommandSource::NonMetal => "NonMetal",
            CommandSource::Regulator => "Regulator",
        }
    }
}

impl fmt::Display for CommandSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CommandSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown command source `{s}`"))
    }
}

/// Electrode lift command. `velocity` is a fraction of the maximum lift
/// velocity: +1 lifts fastest, -1 lowers fastest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElectrodeCommand {
    pub velocity: f64,
    pub source: CommandSource,
    pub latch_until: Option<f64>,
}

impl ElectrodeCommand {
    pub fn new(velocity: f64, source: CommandSource) -> Self {
        Self { velocity: velocity.clamp(-1.0, 1.0), source, latch_until: None }
    }

    pub fn hold() -> Self {
        Self::new(0.0, CommandSource::Regulator)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LoopState {
    pub over_timer_s: f64,
    pub pressure_timer_s: f64,
    pub collapse_latch_until: Option<f64>,
}

/// Loop 1: at or above the dangerous current, lift fastest.
pub fn eval_danger(ia: f64, cfg: &ProtectionConfig) -> Option<ElectrodeCommand> {
    (ia >= cfg.danger_threshold()).then(|| ElectrodeCommand::new(1.0, CommandSource::DangerLoop))
}

/// Loop 2: over-current lifts at half speed, escalating to full speed once
/// the condition has held for more than `over_hold_s`.
pub fn eval_over(
    ia: f64,
    state: &LoopState,
    cfg: &ProtectionConfig,
) -> (Option<ElectrodeCommand>, LoopState) {
    let mut next = *state;
    if ia >= cfg.over_threshold() {
        next.over_timer_s += cfg.dt_s;
        let cmd = if next.over_timer_s > cfg.over_hold_s + HOLD_EPS {
            ElectrodeCommand::new(1.0, CommandSource::OverSustained)
        } else {
            ElectrodeCommand::new(0.5, CommandSource::OverLoop)
        };
        (Some(cmd), next)
    } else {
        next.over_timer_s = 0.0;
        (None, next)
    }
}

/// Loop 3: cylinder pressure below `pressure_factor` of normal for more than
/// `pressure_hold_s` means the electrode is pressing on non-conductive charge.
pub fn eval_nonmetal(
    pressure: f64,
    state: &LoopState,
    cfg: &ProtectionConfig,
) -> (Option<ElectrodeCommand>, LoopState) {
    let mut next = *state;
    if pressure < cfg.pressure_factor {
        next.pressure_timer_s += cfg.dt_s;
        let cmd = (next.pressure_timer_s > cfg.pressure_hold_s + HOLD_EPS)
            .then(|| ElectrodeCommand::new(0.5, CommandSource::NonMetal));
        (cmd, next)
    } else {
        next.pressure_timer_s = 0.0;
        (None, next)
    }
}

/// Loop 4: secondary voltage collapsing toward the reactance drop means the
/// arc is shorted by charge. Lift fastest and keep lifting for
/// `collapse_lift_s` even if the voltage recovers.
pub fn eval_lowvolt(
    e2: f64,
    ia: f64,
    now: f64,
    state: &LoopState,
    cfg: &ProtectionConfig,
) -> (Option<ElectrodeCommand>, LoopState) {
    let mut next = *state;
    if ia >= cfg.arc_on_min && e2 <= cfg.lowvolt_factor * ia * cfg.reactance_x {
        next.collapse_latch_until = Some(now + cfg.collapse_lift_s);
    } else if next.collapse_latch_until.is_some_and(|until| now > until) {
        next.collapse_latch_until = None;
    }
    let cmd = next.collapse_latch_until.map(|until| ElectrodeCommand {
        velocity: 1.0,
        source: CommandSource::LowVoltCollapse,
        latch_until: Some(until),
    });
    (cmd, next)
}

/// Picks the highest-priority command; ties go to the larger velocity. With
/// no protection command the regulator's output passes through.
pub fn arbitrate(commands: &[ElectrodeCommand], regulator: ElectrodeCommand) -> ElectrodeCommand {
    commands
        .iter()
        .copied()
        .max_by(|a, b| {
            a.source
                .priority()
                .cmp(&b.source.priority())
                .then(a.velocity.total_cmp(&b.velocity))
        })
        .unwrap_or(regulator)
}
