//! Fuzzy-rule RBF predictor.
//!
//! Each rule is one hidden cell: Gaussian memberships over the error lags
//! and the derivation lags, combined by product into a firing strength, and
//! three constant conclusions. The network output is the firing-weighted
//! average of the conclusions, read as (a1, CF, a3).
//!
//! # Gradients
//!
//! With `L_j = ln w_j = -sum_i (x_i - theta_ji)^2 / (2 sigma_ji^2)` over all
//! 2n inputs, normalized weights `v_j = w_j / sum w`, outputs
//! `y_k = sum_j v_j a_jk` and loss `E = 1/2 sum_k (T_k - y_k)^2`:
//!
//! ```text
//! dE/da_jk    = -(T_k - y_k) v_j
//! dy_k/dL_j   =  v_j (a_jk - y_k)
//! g_j         =  sum_k (T_k - y_k) v_j (a_jk - y_k)      (= -dE/dL_j)
//! dE/dtheta_ji = -g_j (x_i - theta_ji) / sigma_ji^2
//! dE/dsigma_ji = -g_j (x_i - theta_ji)^2 / sigma_ji^3
//! ```
//!
//! Parameters move by `U += eta * dU` with `dU = -dE/dU`. The finite
//! difference tests in this module and in the acceptance suite check these
//! expressions.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::telemetry::PhaseHistory;

/// Below this total firing strength the rule base does not cover the input.
pub const FIRING_EPS: f64 = 1e-12;

/// Widths are projected back above this after each update.
pub const SIGMA_MIN: f64 = 1e-6;

pub const OUTPUTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RbfError {
    #[error("Gaussian width must be > 0, got {0}")]
    NonPositiveSigma(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no rule fires (total firing strength {total:e} < {FIRING_EPS:e})")]
    NoRuleFires { total: f64 },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid rule count {0}")]
    InvalidCount(usize),
    #[error("history holds {have} entries, need {need}")]
    InsufficientHistory { have: usize, need: usize },
    #[error("invalid network: {0}")]
    Invalid(String),
    #[error("model file line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// One fuzzy rule / RBF cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfRule {
    pub theta1: Vec<f64>,
    pub sigma1: Vec<f64>,
    pub theta2: Vec<f64>,
    pub sigma2: Vec<f64>,
    /// (a_j1, a_j2, a_j3).
    pub conclusions: [f64; OUTPUTS],
}

impl RbfRule {
    fn lags(&self) -> usize {
        self.theta1.len()
    }

    fn check(&self, n: usize) -> Result<(), RbfError> {
        for v in [&self.theta1, &self.sigma1, &self.theta2, &self.sigma2] {
            if v.len() != n {
                return Err(RbfError::DimensionMismatch { expected: n, got: v.len() });
            }
        }
        if let Some(&s) = self.sigma1.iter().chain(&self.sigma2).find(|s| !(**s > 0.0)) {
            return Err(RbfError::NonPositiveSigma(s));
        }
        let all = self.theta1.iter().chain(&self.sigma1).chain(&self.theta2).chain(&self.sigma2);
        if all.chain(&self.conclusions).any(|v| !v.is_finite()) {
            return Err(RbfError::Invalid("non-finite parameter".into()));
        }
        let [_, a2, a3] = self.conclusions;
        if !(0.0..=1.0).contains(&a2) || !(-1.0..=1.0).contains(&a3) {
            return Err(RbfError::Invalid(format!("conclusions out of range: a2={a2}, a3={a3}")));
        }
        Ok(())
    }

    /// Log firing strengths (ln w_j1, ln w_j2) for a 2n feature vector.
    fn log_firing(&self, x: &[f64]) -> (f64, f64) {
        let n = self.lags();
        let half = |xs: &[f64], th: &[f64], sg: &[f64]| -> f64 {
            xs.iter()
                .zip(th)
                .zip(sg)
                .map(|((x, t), s)| {
                    let d = x - t;
                    -d * d / (2.0 * s * s)
                })
                .sum()
        };
        (
            half(&x[..n], &self.theta1, &self.sigma1),
            half(&x[n..], &self.theta2, &self.sigma2),
        )
    }

    /// Mean memberships over the error lags and the derivation lags.
    fn mean_memberships(&self, x: &[f64]) -> (f64, f64) {
        let n = self.lags();
        let mean = |xs: &[f64], th: &[f64], sg: &[f64]| -> f64 {
            xs.iter()
                .zip(th)
                .zip(sg)
                .map(|((x, t), s)| gaussian(*x, *t, *s))
                .sum::<f64>()
                / n as f64
        };
        (
            mean(&x[..n], &self.theta1, &self.sigma1),
            mean(&x[n..], &self.theta2, &self.sigma2),
        )
    }
}

fn gaussian(x: f64, theta: f64, sigma: f64) -> f64 {
    let d = x - theta;
    (-d * d / (2.0 * sigma * sigma)).exp()
}

/// Gaussian membership exp(-(x - theta)^2 / (2 sigma^2)).
pub fn membership(x: f64, theta: f64, sigma: f64) -> Result<f64, RbfError> {
    if !(sigma > 0.0) {
        return Err(RbfError::NonPositiveSigma(sigma));
    }
    Ok(gaussian(x, theta, sigma))
}

/// Firing strength of one rule: (w_j, w_j1, w_j2) with w_j = w_j1 * w_j2.
pub fn firing_strength(x: &[f64], rule: &RbfRule) -> Result<(f64, f64, f64), RbfError> {
    let n = rule.lags();
    if x.len() != 2 * n {
        return Err(RbfError::DimensionMismatch { expected: 2 * n, got: x.len() });
    }
    rule.check(n)?;
    let (l1, l2) = rule.log_firing(x);
    let (w1, w2) = (l1.exp(), l2.exp());
    Ok((w1 * w2, w1, w2))
}

/// Input vector and target outputs (T1, T2, T3).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub x: Vec<f64>,
    pub target: [f64; OUTPUTS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    /// (y1, y2, y3) = (a1, CF, a3).
    pub y: [f64; OUTPUTS],
    /// Mean memberships of the most strongly firing rule.
    pub mu1_bar: f64,
    pub mu2_bar: f64,
    /// Index of the most strongly firing rule.
    pub fired: usize,
    /// Normalized firing strengths, summing to one.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbfNetwork {
    rules: Vec<RbfRule>,
    n: usize,
    eta: f64,
}

impl RbfNetwork {
    pub fn new(rules: Vec<RbfRule>, n: usize, eta: f64) -> Result<Self, RbfError> {
        if rules.is_empty() {
            return Err(RbfError::InvalidCount(0));
        }
        if n == 0 {
            return Err(RbfError::Invalid("lag count must be >= 1".into()));
        }
        if !(eta.is_finite() && eta > 0.0) {
            return Err(RbfError::Invalid(format!("learning rate must be > 0, got {eta}")));
        }
        for r in &rules {
            r.check(n)?;
        }
        Ok(Self { rules, n, eta })
    }

    pub fn rules(&self) -> &[RbfRule] {
        &self.rules
    }

    pub fn lags(&self) -> usize {
        self.n
    }

    pub fn input_len(&self) -> usize {
        2 * self.n
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn set_eta(&mut self, eta: f64) {
        assert!(eta.is_finite() && eta > 0.0);
        self.eta = eta;
    }

    fn check_input(&self, x: &[f64]) -> Result<(), RbfError> {
        if x.len() != self.input_len() {
            return Err(RbfError::DimensionMismatch { expected: self.input_len(), got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(RbfError::Invalid("non-finite input".into()));
        }
        Ok(())
    }

    /// Normalized firing strengths, or `NoRuleFires` when the rule base does
    /// not cover `x`.
    fn normalized_weights(&self, x: &[f64]) -> Result<Vec<f64>, RbfError> {
        let mut w: Vec<f64> = self
            .rules
            .iter()
            .map(|r| {
                let (l1, l2) = r.log_firing(x);
                l1.exp() * l2.exp()
            })
            .collect();
        let total: f64 = w.iter().sum();
        if !(total >= FIRING_EPS) {
            return Err(RbfError::NoRuleFires { total });
        }
        w.iter_mut().for_each(|v| *v /= total);
        Ok(w)
    }

    fn outputs(&self, weights: &[f64]) -> [f64; OUTPUTS] {
        let mut y = [0.0; OUTPUTS];
        for (r, v) in self.rules.iter().zip(weights) {
            for (yk, a) in y.iter_mut().zip(r.conclusions) {
                *yk += v * a;
            }
        }
        y
    }

    pub fn infer(&self, x: &[f64]) -> Result<Inference, RbfError> {
        self.check_input(x)?;
        let weights = self.normalized_weights(x)?;
        let y = self.outputs(&weights);
        let fired = weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (mu1_bar, mu2_bar) = self.rules[fired].mean_memberships(x);
        Ok(Inference { y, mu1_bar, mu2_bar, fired, weights })
    }

    pub fn loss(&self, sample: &TrainingSample) -> Result<f64, RbfError> {
        let inf = self.infer(&sample.x)?;
        Ok(half_squared_error(&sample.target, &inf.y))
    }

    /// Number of trainable parameters: per rule 4n widths/means plus three
    /// conclusions.
    pub fn param_count(&self) -> usize {
        self.rules.len() * (4 * self.n + OUTPUTS)
    }

    /// Flat parameter vector, per rule: theta1, sigma1, theta2, sigma2, a.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for r in &self.rules {
            out.extend_from_slice(&r.theta1);
            out.extend_from_slice(&r.sigma1);
            out.extend_from_slice(&r.theta2);
            out.extend_from_slice(&r.sigma2);
            out.extend_from_slice(&r.conclusions);
        }
        out
    }

    /// Overwrites all parameters from a flat vector laid out as [`Self::params`].
    /// No projection is applied.
    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count(), "parameter vector length");
        let n = self.n;
        for (r, chunk) in self.rules.iter_mut().zip(params.chunks_exact(4 * n + OUTPUTS)) {
            r.theta1.copy_from_slice(&chunk[..n]);
            r.sigma1.copy_from_slice(&chunk[n..2 * n]);
            r.theta2.copy_from_slice(&chunk[2 * n..3 * n]);
            r.sigma2.copy_from_slice(&chunk[3 * n..4 * n]);
            r.conclusions.copy_from_slice(&chunk[4 * n..]);
        }
    }

    /// Loss and its gradient dE/dU, laid out as [`Self::params`].
    pub fn gradient(&self, sample: &TrainingSample) -> Result<(f64, Vec<f64>), RbfError> {
        self.check_input(&sample.x)?;
        let x = &sample.x;
        let n = self.n;
        let weights = self.normalized_weights(x)?;
        let y = self.outputs(&weights);
        let residual: [f64; OUTPUTS] = std::array::from_fn(|k| sample.target[k] - y[k]);
        let mut grad = Vec::with_capacity(self.param_count());
        for (r, &v) in self.rules.iter().zip(&weights) {
            let g: f64 = (0..OUTPUTS).map(|k| residual[k] * v * (r.conclusions[k] - y[k])).sum();
            let halves = [(&x[..n], &r.theta1, &r.sigma1), (&x[n..], &r.theta2, &r.sigma2)];
            let start = grad.len();
            grad.resize(start + 4 * n, 0.0);
            for (h, (xs, th, sg)) in halves.into_iter().enumerate() {
                let base = start + 2 * n * h;
                for i in 0..n {
                    let d = xs[i] - th[i];
                    let s2 = sg[i] * sg[i];
                    grad[base + i] = -g * d / s2;
                    grad[base + n + i] = -g * d * d / (s2 * sg[i]);
                }
            }
            grad.extend((0..OUTPUTS).map(|k| -residual[k] * v));
        }
        Ok((half_squared_error(&sample.target, &y), grad))
    }

    /// One gradient-descent update on a single sample. Returns the loss
    /// before the update.
    pub fn train_step(&mut self, sample: &TrainingSample) -> Result<f64, RbfError> {
        let (loss, grad) = self.gradient(sample)?;
        let mut params = self.params();
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= self.eta * g;
        }
        self.set_params(&params);
        self.project();
        Ok(loss)
    }

    /// Restores parameter constraints after an unconstrained step.
    fn project(&mut self) {
        for r in &mut self.rules {
            for s in r.sigma1.iter_mut().chain(r.sigma2.iter_mut()) {
                *s = s.max(SIGMA_MIN);
            }
            r.conclusions[1] = r.conclusions[1].clamp(0.0, 1.0);
            r.conclusions[2] = r.conclusions[2].clamp(-1.0, 1.0);
        }
    }

    /// Per-sample gradient descent for `epochs` passes over `data`, visiting
    /// samples in a seeded shuffled order. Samples the rule base does not
    /// cover are skipped and counted.
    pub fn train(
        &mut self,
        data: &[TrainingSample],
        epochs: usize,
        seed: u64,
    ) -> Result<TrainReport, RbfError> {
        if data.is_empty() {
            return Err(RbfError::EmptyDataset);
        }
        if let Some(bad) = data.iter().find(|s| s.x.len() != self.input_len()) {
            return Err(RbfError::DimensionMismatch { expected: self.input_len(), got: bad.x.len() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut report = TrainReport::default();
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut used = 0usize;
            let mut skipped = 0usize;
            for &i in &order {
                match self.train_step(&data[i]) {
                    Ok(loss) => {
                        total += loss;
                        used += 1;
                    }
                    Err(RbfError::NoRuleFires { .. }) => skipped += 1,
                    Err(e) => return Err(e),
                }
            }
            report.trace.push(if used > 0 { total / used as f64 } else { f64::NAN });
            report.skipped.push(skipped);
        }
        Ok(report)
    }

    /// Mean loss over a dataset, counting uncovered samples separately.
    pub fn mean_loss(&self, data: &[TrainingSample]) -> Result<(f64, usize), RbfError> {
        let mut total = 0.0;
        let mut used = 0usize;
        let mut skipped = 0usize;
        for s in data {
            match self.loss(s) {
                Ok(l) => {
                    total += l;
                    used += 1;
                }
                Err(RbfError::NoRuleFires { .. }) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        if used == 0 {
            return Err(RbfError::EmptyDataset);
        }
        Ok((total / used as f64, skipped))
    }

    pub fn save<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "rbfnet v1 n={} M={} eta={}", self.n, self.rules.len(), self.eta)?;
        for r in &self.rules {
            let fields: Vec<String> = r
                .theta1
                .iter()
                .chain(&r.sigma1)
                .chain(&r.theta2)
                .chain(&r.sigma2)
                .chain(&r.conclusions)
                .map(|v| v.to_string())
                .collect();
            writeln!(w, "{}", fields.join(" "))?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(reader: R) -> Result<Self, RbfError> {
        let parse_err = |line: usize, message: String| RbfError::Parse { line, message };
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty model file".into()))?
            .map_err(|e| parse_err(1, e.to_string()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 5 || parts[0] != "rbfnet" || parts[1] != "v1" {
            return Err(parse_err(1, "expected `rbfnet v1 n=<n> M=<M> eta=<eta>`".into()));
        }
        let field = |s: &str, key: &str| -> Result<String, RbfError> {
            s.strip_prefix(key)
                .map(str::to_owned)
                .ok_or_else(|| parse_err(1, format!("expected `{key}...`, found `{s}`")))
        };
        let n: usize = field(parts[2], "n=")?.parse().map_err(|_| parse_err(1, "bad n".into()))?;
        let m: usize = field(parts[3], "M=")?.parse().map_err(|_| parse_err(1, "bad M".into()))?;
        let eta: f64 = field(parts[4], "eta=")?.parse().map_err(|_| parse_err(1, "bad eta".into()))?;
        let width = 4 * n + OUTPUTS;
        let mut rules = Vec::with_capacity(m);
        for (idx, line) in lines.enumerate() {
            let line_no = idx + 2;
            let line = line.map_err(|e| parse_err(line_no, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| parse_err(line_no, format!("bad number `{t}`"))))
                .collect::<Result<_, _>>()?;
            if values.len() != width {
                return Err(parse_err(line_no, format!("expected {width} values, found {}", values.len())));
            }
            rules.push(RbfRule {
                theta1: values[..n].to_vec(),
                sigma1: values[n..2 * n].to_vec(),
                theta2: values[2 * n..3 * n].to_vec(),
                sigma2: values[3 * n..4 * n].to_vec(),
                conclusions: [values[4 * n], values[4 * n + 1], values[4 * n + 2]],
            });
        }
        if rules.len() != m {
            return Err(parse_err(1, format!("header declares {m} rules, file has {}", rules.len())));
        }
        Self::new(rules, n, eta)
    }
}

fn half_squared_error(target: &[f64; OUTPUTS], y: &[f64; OUTPUTS]) -> f64 {
    0.5 * target.iter().zip(y).map(|(t, y)| (t - y) * (t - y)).sum::<f64>()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean pre-update loss per epoch.
    pub trace: Vec<f64>,
    /// Samples skipped per epoch because no rule fired.
    pub skipped: Vec<usize>,
}

/// Predictor inputs at the newest history entry:
/// (e(t-1), ..., e(t-n), de(t-1), ..., de(t-n)).
pub fn build_features(history: &PhaseHistory, n: usize) -> Result<Vec<f64>, RbfError> {
    if history.len() < n + 1 {
        return Err(RbfError::InsufficientHistory { have: history.len(), need: n + 1 });
    }
    let entries: Vec<_> = (1..=n).map(|k| history.lag(k).expect("length checked")).collect();
    Ok(entries.iter().map(|e| e.error).chain(entries.iter().map(|e| e.deriv)).collect())
}

/// Explicit rule placement for [`init_from_seeds`].
#[derive(Debug, Clone, PartialEq)]
pub struct RuleSeed {
    /// Length 2n: error-lag means then derivation-lag means.
    pub center: Vec<f64>,
    pub conclusions: [f64; OUTPUTS],
}

/// Grid placement for [`init_network`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridInit {
    pub rules: usize,
    /// Input range used for every dimension when no data is given.
    pub range: (f64, f64),
    /// Lower bound on initial widths (input units).
    pub sigma_floor: f64,
}

const DEFAULT_CONCLUSIONS: [f64; OUTPUTS] = [0.0, 0.5, 0.0];

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Half the mean spacing of sorted centers; `fallback` spacing when there is
/// only one center.
fn half_spacing(centers: &[f64], fallback: f64) -> f64 {
    let k = centers.len();
    let spacing = if k >= 2 { (centers[k - 1] - centers[0]) / (k - 1) as f64 } else { fallback };
    spacing / 2.0
}

/// Places `rules` cells on the diagonal quantile grid of the data: rule j's
/// mean in every input dimension is that dimension's (j+1)/(k+1) quantile.
/// Without data the same fractions of `range` are used. Widths start at half
/// the mean inter-center spacing; conclusions at (0, 0.5, 0).
pub fn init_network(
    n: usize,
    eta: f64,
    grid: &GridInit,
    data: Option<&[Vec<f64>]>,
) -> Result<RbfNetwork, RbfError> {
    let k = grid.rules;
    if k == 0 {
        return Err(RbfError::InvalidCount(0));
    }
    let dims = 2 * n;
    let fractions: Vec<f64> = (0..k).map(|j| (j + 1) as f64 / (k + 1) as f64).collect();
    let mut centers = vec![vec![0.0; dims]; k];
    let mut sigmas = vec![vec![0.0; dims]; k];
    for d in 0..dims {
        let (column, lo, hi) = match data {
            Some(rows) if !rows.is_empty() => {
                if let Some(bad) = rows.iter().find(|r| r.len() != dims) {
                    return Err(RbfError::DimensionMismatch { expected: dims, got: bad.len() });
                }
                let mut col: Vec<f64> = rows.iter().map(|r| r[d]).collect();
                col.sort_by(f64::total_cmp);
                let (lo, hi) = (col[0], col[col.len() - 1]);
                let c: Vec<f64> = fractions.iter().map(|q| quantile(&col, *q)).collect();
                (c, lo, hi)
            }
            _ => {
                let (lo, hi) = grid.range;
                (fractions.iter().map(|q| lo + q * (hi - lo)).collect(), lo, hi)
            }
        };
        let sigma = half_spacing(&column, (hi - lo) / 2.0).max(grid.sigma_floor).max(SIGMA_MIN);
        for j in 0..k {
            centers[j][d] = column[j];
            sigmas[j][d] = sigma;
        }
    }
    let rules = centers
        .into_iter()
        .zip(sigmas)
        .map(|(c, s)| RbfRule {
            theta1: c[..n].to_vec(),
            sigma1: s[..n].to_vec(),
            theta2: c[n..].to_vec(),
            sigma2: s[n..].to_vec(),
            conclusions: DEFAULT_CONCLUSIONS,
        })
        .collect();
    RbfNetwork::new(rules, n, eta)
}

/// One rule per seed; widths per dimension are half the mean spacing of the
/// seeds' sorted centers in that dimension.
pub fn init_from_seeds(
    n: usize,
    eta: f64,
    seeds: &[RuleSeed],
    sigma_floor: f64,
) -> Result<RbfNetwork, RbfError> {
    if seeds.is_empty() {
        return Err(RbfError::InvalidCount(0));
    }
    let dims = 2 * n;
    if let Some(bad) = seeds.iter().find(|s| s.center.len() != dims) {
        return Err(RbfError::DimensionMismatch { expected: dims, got: bad.center.len() });
    }
    let sigma: Vec<f64> = (0..dims)
        .map(|d| {
            let mut col: Vec<f64> = seeds.iter().map(|s| s.center[d]).collect();
            col.sort_by(f64::total_cmp);
            half_spacing(&col, 0.0).max(sigma_floor).max(SIGMA_MIN)
        })
        .collect();
    let rules = seeds
        .iter()
        .map(|s| RbfRule {
            theta1: s.center[..n].to_vec(),
            sigma1: sigma[..n].to_vec(),
            theta2: s.center[n..].to_vec(),
            sigma2: sigma[n..].to_vec(),
            conclusions: s.conclusions,
        })
        .collect();
    RbfNetwork::new(rules, n, eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn rule(n: usize, theta: f64, sigma: f64, a: [f64; 3]) -> RbfRule {
        RbfRule {
            theta1: vec![theta; n],
            sigma1: vec![sigma; n],
            theta2: vec![theta; n],
            sigma2: vec![sigma; n],
            conclusions: a,
        }
    }

    fn random_net(rng: &mut ChaCha8Rng, n: usize, m: usize) -> RbfNetwork {
        let mut v = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let rules = (0..m)
            .map(|_| RbfRule {
                theta1: (0..n).map(|_| v(-1.0, 1.0)).collect(),
                sigma1: (0..n).map(|_| v(0.4, 1.5)).collect(),
                theta2: (0..n).map(|_| v(-1.0, 1.0)).collect(),
                sigma2: (0..n).map(|_| v(0.4, 1.5)).collect(),
                conclusions: [v(-1.0, 1.0), v(0.0, 1.0), v(-1.0, 1.0)],
            })
            .collect();
        RbfNetwork::new(rules, n, 0.05).unwrap()
    }

    #[test]
    fn membership_examples() {
        assert_eq!(membership(3.0, 3.0, 2.0).unwrap(), 1.0);
        assert!((membership(5.0, 3.0, 2.0).unwrap() - 0.606_530_659_712_633_4).abs() < 1e-15);
        assert_eq!(membership(1.0, 0.0, 0.0), Err(RbfError::NonPositiveSigma(0.0)));
        assert!(membership(1.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn firing_strength_examples() {
        let r = rule(2, 0.5, 1.0, [0.0, 0.5, 0.0]);
        assert_eq!(firing_strength(&[0.5; 4], &r).unwrap(), (1.0, 1.0, 1.0));

        let r1 = rule(1, 2.0, 0.5, [0.0, 0.5, 0.0]);
        let (w, w1, w2) = firing_strength(&[2.5, 2.0], &r1).unwrap();
        assert!((w - (-0.5f64).exp()).abs() < 1e-15);
        assert!((w1 - (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(w2, 1.0);

        let r2 = rule(2, 0.0, 1.0, [0.0, 0.5, 0.0]);
        let (_, w1, _) = firing_strength(&[1.0, -1.0, 0.0, 0.0], &r2).unwrap();
        assert!((w1 - (-1.0f64).exp()).abs() < 1e-15);

        assert!(matches!(
            firing_strength(&[0.0; 3], &r2),
            Err(RbfError::DimensionMismatch { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn single_rule_outputs_its_conclusions() {
        let net = RbfNetwork::new(vec![rule(2, 0.0, 1.0, [0.3, 0.7, -0.5])], 2, 0.1).unwrap();
        for x in [[0.0; 4], [1.0, -2.0, 3.0, 0.5]] {
            let inf = net.infer(&x).unwrap();
            assert_eq!(inf.y, [0.3, 0.7, -0.5]);
            assert_eq!(inf.fired, 0);
        }
    }

    #[test]
    fn equal_firing_averages_conclusions() {
        let net = RbfNetwork::new(
            vec![rule(1, -1.0, 1.0, [0.2, 0.5, 0.0]), rule(1, 1.0, 1.0, [0.6, 0.5, 0.0])],
            1,
            0.1,
        )
        .unwrap();
        // x = (0, 0): both rules see one unit of distance in the first input
        // and both centers differ by 1 in the second input too
        let inf = net.infer(&[0.0, 0.0]).unwrap();
        assert!((inf.y[0] - 0.4).abs() < 1e-15);
        assert!((inf.weights[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn far_input_is_not_covered() {
        let net = RbfNetwork::new(vec![rule(1, 0.0, 1.0, [0.0, 0.5, 0.0])], 1, 0.1).unwrap();
        assert!(matches!(net.infer(&[1e6, 0.0]), Err(RbfError::NoRuleFires { .. })));
    }

    #[test]
    fn infer_reports_memberships_of_strongest_rule() {
        let net = RbfNetwork::new(
            vec![rule(2, 0.0, 1.0, [0.0, 0.5, 0.0]), rule(2, 5.0, 1.0, [0.0, 0.5, 0.0])],
            2,
            0.1,
        )
        .unwrap();
        let inf = net.infer(&[4.0, 5.0, 5.0, 5.0]).unwrap();
        assert_eq!(inf.fired, 1);
        let expected_mu1 = (membership(4.0, 5.0, 1.0).unwrap() + 1.0) / 2.0;
        assert!((inf.mu1_bar - expected_mu1).abs() < 1e-15);
        assert_eq!(inf.mu2_bar, 1.0);
    }

    #[test]
    fn loss_examples() {
        let zero = RbfNetwork::new(vec![rule(1, 0.0, 1.0, [0.0, 0.0, 0.0])], 1, 0.1).unwrap();
        let s = TrainingSample { x: vec![0.0, 0.0], target: [1.0, 0.0, 0.0] };
        assert_eq!(zero.loss(&s).unwrap(), 0.5);

        let half = RbfNetwork::new(vec![rule(1, 0.0, 1.0, [0.5, 0.5, 0.5])], 1, 0.1).unwrap();
        let s = TrainingSample { x: vec![0.3, -0.2], target: [1.0, 1.0, 1.0] };
        assert_eq!(half.loss(&s).unwrap(), 0.375);

        let s = TrainingSample { x: vec![0.3, -0.2], target: [0.5, 0.5, 0.5] };
        assert_eq!(half.loss(&s).unwrap(), 0.0);
    }

    #[test]
    fn fixed_point_sample_leaves_network_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = random_net(&mut rng, 2, 3);
        let x = vec![0.1, -0.2, 0.3, 0.05];
        let y = net.infer(&x).unwrap().y;
        let before = net.clone();
        net.train_step(&TrainingSample { x, target: y }).unwrap();
        assert_eq!(net, before);
    }

    fn central_difference(net: &RbfNetwork, sample: &TrainingSample, h: f64) -> Vec<f64> {
        let base = net.params();
        let mut probe = net.clone();
        (0..base.len())
            .map(|i| {
                let mut p = base.clone();
                p[i] = base[i] + h;
                probe.set_params(&p);
                let plus = probe.loss(sample).unwrap();
                p[i] = base[i] - h;
                probe.set_params(&p);
                let minus = probe.loss(sample).unwrap();
                (plus - minus) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(n, m) in &[(1, 1), (1, 3), (2, 2), (3, 4)] {
            for _ in 0..10 {
                let net = random_net(&mut rng, n, m);
                let x: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let target = [rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0), rng.random_range(-1.0..1.0)];
                let sample = TrainingSample { x, target };
                let (_, analytic) = net.gradient(&sample).unwrap();
                let numeric = central_difference(&net, &sample, 1e-6);
                for (a, f) in analytic.iter().zip(&numeric) {
                    let diff = (a - f).abs();
                    assert!(
                        diff < 1e-8 || diff / a.abs().max(f.abs()) < 1e-5,
                        "analytic {a} vs numeric {f}"
                    );
                }
            }
        }
    }

    #[test]
    fn repeated_steps_descend() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = random_net(&mut rng, 2, 3);
        net.set_eta(0.01);
        let sample = TrainingSample { x: vec![0.2, -0.4, 0.1, 0.3], target: [0.9, 0.1, -0.8] };
        let mut last = f64::INFINITY;
        for _ in 0..100 {
            let loss = net.train_step(&sample).unwrap();
            assert!(loss <= last + 1e-15, "loss went up: {loss} > {last}");
            last = loss;
        }
        assert!(net.loss(&sample).unwrap() < last);
    }

    #[test]
    fn train_on_one_sample_reduces_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = random_net(&mut rng, 1, 2);
        let data = vec![TrainingSample { x: vec![0.3, -0.3], target: [0.5, 0.9, -1.0] }];
        let initial = net.loss(&data[0]).unwrap();
        let report = net.train(&data, 200, 1).unwrap();
        assert_eq!(report.trace.len(), 200);
        assert!(net.loss(&data[0]).unwrap() < initial);
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = random_net(&mut rng, 1, 2);
        let before = net.clone();
        let data = vec![TrainingSample { x: vec![0.3, -0.3], target: [0.5, 0.9, -1.0] }];
        let report = net.train(&data, 0, 1).unwrap();
        assert!(report.trace.is_empty());
        assert_eq!(net, before);
    }

    #[test]
    fn train_rejects_bad_datasets() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = random_net(&mut rng, 1, 2);
        assert_eq!(net.train(&[], 1, 0), Err(RbfError::EmptyDataset));
        let bad = vec![TrainingSample { x: vec![0.0; 3], target: [0.0; 3] }];
        assert!(matches!(net.train(&bad, 1, 0), Err(RbfError::DimensionMismatch { .. })));
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = random_net(&mut rng, 2, 3);
        let data: Vec<_> = (0..20)
            .map(|i| {
                let f = i as f64 / 20.0;
                TrainingSample { x: vec![f, -f, f * f, 0.1], target: [f, 0.5, -f] }
            })
            .collect();
        let (mut a, mut b) = (net.clone(), net);
        let ra = a.train(&data, 15, 77).unwrap();
        let rb = b.train(&data, 15, 77).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
    }

    #[test]
    fn projection_keeps_conclusions_in_range() {
        let mut net = RbfNetwork::new(vec![rule(1, 0.0, 1.0, [0.0, 0.95, 0.95])], 1, 10.0).unwrap();
        net.train_step(&TrainingSample { x: vec![0.0, 0.0], target: [0.0, 1.0, 1.0] }).unwrap();
        let a = net.rules()[0].conclusions;
        assert_eq!(a[1], 1.0);
        assert_eq!(a[2], 1.0);
    }

    #[test]
    fn features_from_history() {
        let mut h = PhaseHistory::new(6, 0.1);
        for v in [5.0, 4.0, 3.0, 2.0, 1.0] {
            h.push(v).unwrap();
        }
        assert_eq!(build_features(&h, 2).unwrap(), vec![2.0, 3.0, -1.0, -1.0]);

        let mut c = PhaseHistory::new(6, 0.1);
        for _ in 0..6 {
            c.push(42.0).unwrap();
        }
        assert_eq!(&build_features(&c, 5).unwrap()[5..], &[0.0; 5]);

        assert_eq!(
            build_features(&h, 5),
            Err(RbfError::InsufficientHistory { have: 5, need: 6 })
        );
    }

    #[test]
    fn grid_init_without_data() {
        let grid = GridInit { rules: 1, range: (-1.0, 1.0), sigma_floor: 0.0 };
        let net = init_network(2, 0.1, &grid, None).unwrap();
        let r = &net.rules()[0];
        assert_eq!(r.theta1, vec![0.0, 0.0]);
        assert_eq!(r.theta2, vec![0.0, 0.0]);
        assert_eq!(r.sigma1, vec![0.5, 0.5]);
        assert_eq!(r.conclusions, [0.0, 0.5, 0.0]);
    }

    #[test]
    fn grid_init_uses_data_quantiles() {
        let data: Vec<Vec<f64>> = (0..10).map(|i| vec![100.0 * i as f64, 0.0]).collect();
        let grid = GridInit { rules: 3, range: (0.0, 1.0), sigma_floor: 1.0 };
        let net = init_network(1, 0.1, &grid, Some(&data)).unwrap();
        let means: Vec<f64> = net.rules().iter().map(|r| r.theta1[0]).collect();
        assert_eq!(means, vec![225.0, 450.0, 675.0]);
        assert_eq!(net.rules()[0].sigma1[0], 112.5);
        // degenerate column falls back to the floor
        assert_eq!(net.rules()[0].sigma2[0], 1.0);
    }

    #[test]
    fn grid_init_rejects_zero_rules() {
        let grid = GridInit { rules: 0, range: (0.0, 1.0), sigma_floor: 1.0 };
        assert_eq!(init_network(1, 0.1, &grid, None), Err(RbfError::InvalidCount(0)));
        assert_eq!(init_from_seeds(1, 0.1, &[], 1.0), Err(RbfError::InvalidCount(0)));
    }

    #[test]
    fn seeds_place_rules() {
        let seeds = vec![
            RuleSeed { center: vec![0.0, 0.0], conclusions: [0.0, 0.1, 0.0] },
            RuleSeed { center: vec![4.0, 2.0], conclusions: [1.0, 0.9, -1.0] },
        ];
        let net = init_from_seeds(1, 0.1, &seeds, 0.1).unwrap();
        assert_eq!(net.rules()[1].theta1, vec![4.0]);
        assert_eq!(net.rules()[1].sigma1, vec![2.0]);
        assert_eq!(net.rules()[1].sigma2, vec![1.0]);
        assert_eq!(net.rules()[1].conclusions, [1.0, 0.9, -1.0]);
    }

    #[test]
    fn model_file_roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = random_net(&mut rng, 3, 4);
        let mut buf = Vec::new();
        net.save(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("rbfnet v1 n=3 M=4 eta=0.05\n"));
        let back = RbfNetwork::load(buf.as_slice()).unwrap();
        assert_eq!(back.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   net.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(back, net);
    }

    #[test]
    fn model_file_errors_name_lines() {
        let text = "rbfnet v1 n=1 M=1 eta=0.1\n0 1 0 1 0 0.5\n";
        assert!(matches!(RbfNetwork::load(text.as_bytes()), Err(RbfError::Parse { line: 2, .. })));
        let text = "rbfnet v2 n=1 M=1 eta=0.1\n";
        assert!(matches!(RbfNetwork::load(text.as_bytes()), Err(RbfError::Parse { line: 1, .. })));
        let text = "rbfnet v1 n=1 M=2 eta=0.1\n0 1 0 1 0 0.5 0\n";
        assert!(matches!(RbfNetwork::load(text.as_bytes()), Err(RbfError::Parse { .. })));
        let text = "rbfnet v1 n=1 M=1 eta=0.1\n0 -1 0 1 0 0.5 0\n";
        assert!(matches!(RbfNetwork::load(text.as_bytes()), Err(RbfError::NonPositiveSigma(_))));
    }

    proptest! {
        #[test]
        fn translation_leaves_outputs_unchanged(seed in 0u64..1000, shift in -50.0f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = random_net(&mut rng, 2, 3);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut shifted = net.clone();
            let mut params = shifted.params();
            let n = 2;
            for chunk in params.chunks_exact_mut(4 * n + OUTPUTS) {
                for i in 0..n {
                    chunk[i] += shift;
                    chunk[2 * n + i] += shift;
                }
            }
            shifted.set_params(&params);
            let xs: Vec<f64> = x.iter().map(|v| v + shift).collect();
            let a = net.infer(&x).unwrap();
            let b = shifted.infer(&xs).unwrap();
            for (wa, wb) in a.weights.iter().zip(&b.weights) {
                prop_assert!((wa - wb).abs() < 1e-9);
            }
            for k in 0..OUTPUTS {
                prop_assert!((a.y[k] - b.y[k]).abs() < 1e-9);
            }
        }
    }
}
