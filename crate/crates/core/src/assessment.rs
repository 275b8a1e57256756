//! Change assessment of the melting dynamics.
//!
//! A quadratic Lyapunov function over recent current-error lags serves as a
//! change-energy signal. Its observed and predicted deviations, normalized by
//! a maximum rate, give the pair (a0, a1); their signs select the change
//! orientation a3, and a confidence factor grades the assessment.

use thiserror::Error;

use crate::telemetry::PhaseHistory;

/// Tolerance for the symmetry check on P.
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssessmentError {
    #[error("vector of length {got} does not match {expected}x{expected} matrix")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("matrix is not positive definite (leading minor {order} is not > 0)")]
    NotPositiveDefinite { order: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{name} = {value} is outside {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("history holds {have} entries, need {need}")]
    InsufficientHistory { have: usize, need: usize },
}

/// Normalizer for V-dot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VdotMax {
    Fixed(f64),
    /// Tracks the largest |V-dot| seen so far, never below `floor`.
    Running { max: f64, floor: f64 },
}

impl VdotMax {
    pub fn running() -> Self {
        VdotMax::Running { max: 0.0, floor: 1e-9 }
    }

    pub fn value(&self) -> f64 {
        match *self {
            VdotMax::Fixed(v) => v,
            VdotMax::Running { max, floor } => max.max(floor),
        }
    }

    fn observe(&mut self, rate: f64) {
        if let VdotMax::Running { max, .. } = self {
            *max = max.max(rate.abs());
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovConfig {
    /// Row-major n x n symmetric positive-definite matrix.
    p: Vec<f64>,
    n: usize,
    pub vdot_max: VdotMax,
}

impl LyapunovConfig {
    pub fn identity(n: usize, vdot_max: VdotMax) -> Self {
        let mut p = vec![0.0; n * n];
        for i in 0..n {
            p[i * n + i] = 1.0;
        }
        Self { p, n, vdot_max }
    }

    /// Builds a config from rows of P, checking symmetry and positive
    /// definiteness (every leading principal minor > 0).
    pub fn new(rows: &[Vec<f64>], vdot_max: VdotMax) -> Result<Self, AssessmentError> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(AssessmentError::DimensionMismatch { expected: n, got: bad.len() });
        }
        if let VdotMax::Fixed(v) = vdot_max {
            if !(v.is_finite() && v > 0.0) {
                return Err(AssessmentError::OutOfRange {
                    name: "vdot_max",
                    value: v,
                    range: "(0, inf)",
                });
            }
        }
        let p: Vec<f64> = rows.iter().flatten().copied().collect();
        if p.iter().any(|v| !v.is_finite()) {
            return Err(AssessmentError::NonFinite("P"));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (p[i * n + j], p[j * n + i]);
                if (a - b).abs() > SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0) {
                    return Err(AssessmentError::NotSymmetric { row: i, col: j });
                }
            }
        }
        // Elimination without pivoting: the k-th pivot is the ratio of the
        // k-th and (k-1)-th leading minors, so all minors are positive iff
        // every pivot is.
        let mut m = p.clone();
        for k in 0..n {
            let pivot = m[k * n + k];
            if !(pivot > 0.0) {
                return Err(AssessmentError::NotPositiveDefinite { order: k + 1 });
            }
            for i in (k + 1)..n {
                let factor = m[i * n + k] / pivot;
                for j in k..n {
                    m[i * n + j] -= factor * m[k * n + j];
                }
            }
        }
        Ok(Self { p, n, vdot_max })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn p(&self, row: usize, col: usize) -> f64 {
        self.p[row * self.n + col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assessment {
    pub a0: f64,
    pub a1: f64,
    pub cf: f64,
    pub a3: f64,
}

/// V = x' P x.
pub fn lyapunov(x1: &[f64], cfg: &LyapunovConfig) -> Result<f64, AssessmentError> {
    let n = cfg.n;
    if x1.len() != n {
        return Err(AssessmentError::DimensionMismatch { expected: n, got: x1.len() });
    }
    if x1.iter().any(|v| !v.is_finite()) {
        return Err(AssessmentError::NonFinite("x1"));
    }
    let mut v = 0.0;
    for i in 0..n {
        let row = &cfg.p[i * n..(i + 1) * n];
        let px: f64 = row.iter().zip(x1).map(|(p, x)| p * x).sum();
        v += x1[i] * px;
    }
    Ok(v)
}

/// Forward-difference rates of V, normalized and clamped to [-1, 1].
/// In running mode the normalizer first absorbs both rates.
pub fn normalized_deltas(
    v_now: f64,
    v_prev: f64,
    v_pred: f64,
    dt: f64,
    cfg: &mut LyapunovConfig,
) -> Result<(f64, f64), AssessmentError> {
    if !(v_now.is_finite() && v_prev.is_finite() && v_pred.is_finite()) {
        return Err(AssessmentError::NonFinite("V"));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(AssessmentError::OutOfRange { name: "dt", value: dt, range: "(0, inf)" });
    }
    let observed = (v_now - v_prev) / dt;
    let predicted = (v_pred - v_now) / dt;
    cfg.vdot_max.observe(observed);
    cfg.vdot_max.observe(predicted);
    let scale = cfg.vdot_max.value();
    Ok(((observed / scale).clamp(-1.0, 1.0), (predicted / scale).clamp(-1.0, 1.0)))
}

/// Orientation code a3 from the signs of (a0, a1), first matching row wins:
///
/// | a0   | a1  | a3   | meaning                      |
/// |------|-----|------|------------------------------|
/// | <= 0 | < 0 | 1    | changing toward fine         |
/// | >= 0 | > 0 | -1   | changing toward bad          |
/// | = 0  | = 0 | 0    | no change                    |
/// | <= 0 | > 0 | -0.5 | oscillating, turning bad     |
/// | >= 0 | < 0 | 0.5  | oscillating, turning good    |
///
/// The table leaves a1 = 0 with a0 != 0 uncovered; no predicted change
/// maps to 0 there as well.
pub fn orientation(a0: f64, a1: f64) -> f64 {
    if a0 <= 0.0 && a1 < 0.0 {
        1.0
    } else if a0 >= 0.0 && a1 > 0.0 {
        -1.0
    } else if a0 == 0.0 && a1 == 0.0 {
        0.0
    } else if a0 <= 0.0 && a1 > 0.0 {
        -0.5
    } else if a0 >= 0.0 && a1 < 0.0 {
        0.5
    } else {
        0.0
    }
}

/// CF = (|a1| + mean membership of the error lags + mean membership of the
/// derivation lags) / 3.
pub fn confidence(a1: f64, mu1_bar: f64, mu2_bar: f64) -> Result<f64, AssessmentError> {
    if !(a1.abs() <= 1.0) {
        return Err(AssessmentError::OutOfRange { name: "a1", value: a1, range: "[-1, 1]" });
    }
    for (name, mu) in [("mu1_bar", mu1_bar), ("mu2_bar", mu2_bar)] {
        if !(0.0..=1.0).contains(&mu) {
            return Err(AssessmentError::OutOfRange { name, value: mu, range: "[0, 1]" });
        }
    }
    Ok((a1.abs() + mu1_bar + mu2_bar) / 3.0)
}

/// Error-lag vector ending `offset` steps back: (e(t-offset), ...,
/// e(t-offset-n+1)).
fn error_lags(history: &PhaseHistory, n: usize, offset: usize) -> Option<Vec<f64>> {
    (offset..offset + n).map(|k| history.lag(k).map(|e| e.error)).collect()
}

/// Current and previous Lyapunov values of a history: V over the newest n
/// errors, and V over the n errors before the newest.
pub fn lyapunov_pair(history: &PhaseHistory, cfg: &LyapunovConfig) -> Result<(f64, f64), AssessmentError> {
    let n = cfg.n;
    let need = n + 1;
    let (Some(now), Some(prev)) = (error_lags(history, n, 0), error_lags(history, n, 1)) else {
        return Err(AssessmentError::InsufficientHistory { have: history.len(), need });
    };
    Ok((lyapunov(&now, cfg)?, lyapunov(&prev, cfg)?))
}

/// Predicted next V from a normalized rate, the inverse of the a1 mapping.
pub fn predicted_v(v_now: f64, a1: f64, dt: f64, cfg: &LyapunovConfig) -> f64 {
    v_now + a1 * cfg.vdot_max.value() * dt
}

/// Full assessment of one phase at the newest history entry, given a
/// predicted next V and the mean memberships of the firing rule.
pub fn assess(
    history: &PhaseHistory,
    v_pred: f64,
    mu_bars: (f64, f64),
    cfg: &mut LyapunovConfig,
) -> Result<Assessment, AssessmentError> {
    let (v_now, v_prev) = lyapunov_pair(history, cfg)?;
    let (a0, a1) = normalized_deltas(v_now, v_prev, v_pred, history.period(), cfg)?;
    let cf = confidence(a1, mu_bars.0, mu_bars.1)?;
    Ok(Assessment { a0, a1, cf, a3: orientation(a0, a1) })
}
