//! Run configuration.
//!
//! Flat `section.key = value` lines; `#` starts a comment and blank lines
//! are ignored. Every key is optional. See `docs/config.md` for the schema.

use std::path::Path;

use eaf_core::assessment::{LyapunovConfig, VdotMax};
use eaf_core::engine::CfSource;
use eaf_core::protection::ProtectionConfig;
use eaf_core::sim::{PiGains, PlantConfig};
use thiserror::Error;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigFileError {
    #[error("line {line}: expected `section.key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}`: {message}")]
    Value { line: usize, key: String, message: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorConfig {
    pub rules: usize,
    pub epochs: usize,
    pub eta: f64,
    /// Lower bound on initial rule widths, amperes.
    pub sigma_floor: f64,
    /// Negative training samples kept per positive sample.
    pub negative_ratio: f64,
    /// Samples this many seconds before a collapse onset are positive.
    pub horizon_s: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self { rules: 7, epochs: 20, eta: 0.1, sigma_floor: 2000.0, negative_ratio: 4.0, horizon_s: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportConfig {
    /// Half-width of the event match window, seconds.
    pub window_s: f64,
    /// Out-of-window alerts closer than this count as one false alarm.
    pub cluster_gap_s: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { window_s: 5.0, cluster_gap_s: eaf_core::engine::ALERT_CLUSTER_GAP_S }
    }
}

#[derive(Debug, Clone)]
pub struct AppConfig {
    pub protection: ProtectionConfig,
    pub lyapunov: LyapunovConfig,
    /// The plant shares `i_set` and `reactance_x` with `protection`.
    pub plant: PlantConfig,
    pub regulator: PiGains,
    pub predictor: PredictorConfig,
    pub report: ReportConfig,
    pub cf_source: CfSource,
}

impl Default for AppConfig {
    fn default() -> Self {
        let protection = ProtectionConfig::default();
        let plant = PlantConfig {
            i_set: protection.i_set,
            reactance_x: protection.reactance_x,
            ..PlantConfig::default()
        };
        Self {
            protection,
            lyapunov: LyapunovConfig::identity(5, VdotMax::Fixed(1e9)),
            plant,
            regulator: PiGains::default(),
            predictor: PredictorConfig::default(),
            report: ReportConfig::default(),
            cf_source: CfSource::Network,
        }
    }
}

fn num(line: usize, key: &str, v: &str) -> Result<f64, ConfigFileError> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(ConfigFileError::Value { line, key: key.into(), message: format!("expected a number, found `{v}`") }),
    }
}

fn count(line: usize, key: &str, v: &str) -> Result<usize, ConfigFileError> {
    v.parse::<usize>().map_err(|_| ConfigFileError::Value {
        line,
        key: key.into(),
        message: format!("expected a non-negative integer, found `{v}`"),
    })
}

/// Rows separated by `;`, entries by whitespace or commas.
fn matrix(line: usize, key: &str, v: &str) -> Result<Vec<Vec<f64>>, ConfigFileError> {
    v.split(';')
        .map(|row| {
            row.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| num(line, key, s))
                .collect()
        })
        .collect()
}

pub fn parse_config(text: &str) -> Result<AppConfig, ConfigFileError> {
    let mut cfg = AppConfig::default();
    let mut seen: Vec<String> = Vec::new();
    let mut lyap_n: Option<(usize, usize)> = None;
    let mut lyap_p: Option<(usize, Vec<Vec<f64>>)> = None;
    let mut vdot = VdotMax::Fixed(1e9);

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(ConfigFileError::Syntax { line });
        };
        let (key, v) = (key.trim(), value.trim());
        if !key.contains('.') || v.is_empty() {
            return Err(ConfigFileError::Syntax { line });
        }
        if seen.iter().any(|k| k == key) {
            return Err(ConfigFileError::Duplicate { line, key: key.into() });
        }
        seen.push(key.into());

        let p = &mut cfg.protection;
        let plant = &mut cfg.plant;
        let pred = &mut cfg.predictor;
        match key {
            "protection.i_set" => p.i_set = num(line, key, v)?,
            "protection.danger_bias" => p.danger_bias = num(line, key, v)?,
            "protection.over_bias" => p.over_bias = num(line, key, v)?,
            "protection.over_hold_s" => p.over_hold_s = num(line, key, v)?,
            "protection.pressure_factor" => p.pressure_factor = num(line, key, v)?,
            "protection.pressure_hold_s" => p.pressure_hold_s = num(line, key, v)?,
            "protection.lowvolt_factor" => p.lowvolt_factor = num(line, key, v)?,
            "protection.reactance_x" => p.reactance_x = num(line, key, v)?,
            "protection.collapse_lift_s" => p.collapse_lift_s = num(line, key, v)?,
            "protection.heuristic_deriv_min" => p.heuristic_deriv_min = num(line, key, v)?,
            "protection.heuristic_sum_gap" => p.heuristic_sum_gap = num(line, key, v)?,
            "protection.cf_alert" => p.cf_alert = num(line, key, v)?,
            "protection.predict_lift_frac" => p.predict_lift_frac = num(line, key, v)?,
            "protection.arc_on_min" => p.arc_on_min = num(line, key, v)?,
            "protection.dt_s" => p.dt_s = num(line, key, v)?,
            "lyapunov.n" => lyap_n = Some((line, count(line, key, v)?)),
            "lyapunov.p" => lyap_p = Some((line, matrix(line, key, v)?)),
            "lyapunov.vdot_max" => {
                vdot = if v == "running" {
                    VdotMax::running()
                } else {
                    let x = num(line, key, v)?;
                    if x <= 0.0 {
                        return Err(ConfigFileError::Value { line, key: key.into(), message: "must be > 0".into() });
                    }
                    VdotMax::Fixed(x)
                }
            }
            "plant.x_supply" => plant.x_supply = num(line, key, v)?,
            "plant.r_furnace" => plant.r_furnace = num(line, key, v)?,
            "plant.arc_gain" => plant.arc_gain = num(line, key, v)?,
            "plant.noise_sigma" => plant.noise_sigma = num(line, key, v)?,
            "plant.pressure_noise" => plant.pressure_noise = num(line, key, v)?,
            "plant.max_lift_v" => plant.max_lift_v = num(line, key, v)?,
            "plant.collapse_precursor_s" => plant.collapse_precursor_s = num(line, key, v)?,
            "plant.collapse_precursor_depth" => plant.collapse_precursor_depth = num(line, key, v)?,
            "plant.seed" => plant.seed = count(line, key, v)? as u64,
            "regulator.kp" => cfg.regulator.kp = num(line, key, v)?,
            "regulator.ki" => cfg.regulator.ki = num(line, key, v)?,
            "predictor.rules" => pred.rules = count(line, key, v)?,
            "predictor.epochs" => pred.epochs = count(line, key, v)?,
            "predictor.eta" => pred.eta = num(line, key, v)?,
            "predictor.sigma_floor" => pred.sigma_floor = num(line, key, v)?,
            "predictor.negative_ratio" => pred.negative_ratio = num(line, key, v)?,
            "predictor.horizon_s" => pred.horizon_s = num(line, key, v)?,
            "predictor.cf_source" => {
                cfg.cf_source = match v {
                    "network" => CfSource::Network,
                    "memberships" => CfSource::Memberships,
                    _ => {
                        return Err(ConfigFileError::Value {
                            line,
                            key: key.into(),
                            message: "expected `network` or `memberships`".into(),
                        })
                    }
                }
            }
            "report.window_s" => cfg.report.window_s = num(line, key, v)?,
            "report.cluster_gap_s" => cfg.report.cluster_gap_s = num(line, key, v)?,
            _ => return Err(ConfigFileError::UnknownKey { line, key: key.into() }),
        }
    }

    cfg.lyapunov = match (lyap_n, lyap_p) {
        (Some((line, 0)), _) => {
            return Err(ConfigFileError::Value { line, key: "lyapunov.n".into(), message: "must be >= 1".into() })
        }
        (n, Some((line, rows))) => {
            if let Some((_, n)) = n.filter(|(_, n)| *n != rows.len()) {
                return Err(ConfigFileError::Value {
                    line,
                    key: "lyapunov.p".into(),
                    message: format!("matrix has {} rows but lyapunov.n = {n}", rows.len()),
                });
            }
            LyapunovConfig::new(&rows, vdot).map_err(|e| ConfigFileError::Value {
                line,
                key: "lyapunov.p".into(),
                message: e.to_string(),
            })?
        }
        (n, None) => LyapunovConfig::identity(n.map_or(5, |(_, n)| n), vdot),
    };
    cfg.plant.i_set = cfg.protection.i_set;
    cfg.plant.reactance_x = cfg.protection.reactance_x;
    cfg.validate()?;
    Ok(cfg)
}

impl AppConfig {
    fn validate(&self) -> Result<(), ConfigFileError> {
        let invalid = |m: String| Err(ConfigFileError::Invalid(m));
        self.protection.validate().map_err(|e| ConfigFileError::Invalid(e.to_string()))?;
        self.plant.validate().map_err(|e| ConfigFileError::Invalid(e.to_string()))?;
        let pred = &self.predictor;
        if pred.rules == 0 {
            return invalid("predictor.rules must be >= 1".into());
        }
        if !(pred.eta > 0.0) {
            return invalid("predictor.eta must be > 0".into());
        }
        if !(pred.negative_ratio >= 0.0) || !(pred.horizon_s >= 0.0) || !(pred.sigma_floor > 0.0) {
            return invalid("predictor.negative_ratio and horizon_s must be >= 0, sigma_floor > 0".into());
        }
        if !(self.report.window_s >= 0.0) || !(self.report.cluster_gap_s >= 0.0) {
            return invalid("report.window_s and report.cluster_gap_s must be >= 0".into());
        }
        if !(self.regulator.kp.is_finite() && self.regulator.ki.is_finite()) {
            return invalid("regulator gains must be finite".into());
        }
        Ok(())
    }
}

/// Reads a config file, or returns the defaults when no path is given. A
/// missing or unreadable config is a user error.
pub fn load_config(path: Option<&Path>) -> Result<AppConfig, CliError> {
    let Some(path) = path else {
        return Ok(AppConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}
