//! Signal types shared by every protection mechanism: one telemetry sample
//! per regulator cycle, per-phase error history, and the control-range
//! classifier.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::protection::ProtectionConfig;

/// Number of electrodes (and phases) on the furnace.
pub const PHASES: usize = 3;

/// Header of the wide telemetry CSV.
pub const TELEMETRY_HEADER: &str = "t,ia1,ia2,ia3,e21,e22,e23,p1,p2,p3";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TelemetryError {
    #[error("non-finite value in field `{field}`")]
    NonFinite { field: &'static str },
    #[error("negative value {value} in field `{field}`")]
    NegativeSignal { field: &'static str, value: f64 },
    #[error("time went backwards: t={t} after t={previous}")]
    TimeRegression { t: f64, previous: f64 },
}

/// One reading of the three electrodes.
///
/// `pressure` is hydraulic cylinder pressure as a fraction of that
/// electrode's normal pressure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelemetrySample {
    pub t: f64,
    pub ia: [f64; PHASES],
    pub e2: [f64; PHASES],
    pub pressure: [f64; PHASES],
}

impl TelemetrySample {
    pub fn zero(t: f64) -> Self {
        Self {
            t,
            ia: [0.0; PHASES],
            e2: [0.0; PHASES],
            pressure: [0.0; PHASES],
        }
    }

    /// Checks the per-sample invariants (finite, non-negative). Time
    /// ordering is the job of [`TelemetryValidator`].
    pub fn check(&self) -> Result<(), TelemetryError> {
        if !self.t.is_finite() {
            return Err(TelemetryError::NonFinite { field: "t" });
        }
        let groups: [(&'static str, &[f64; PHASES]); 3] =
            [("ia", &self.ia), ("e2", &self.e2), ("pressure", &self.pressure)];
        for (field, values) in groups {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(TelemetryError::NonFinite { field });
            }
        }
        for (field, values) in groups {
            if let Some(&value) = values.iter().find(|v| **v < 0.0) {
                return Err(TelemetryError::NegativeSignal { field, value });
            }
        }
        Ok(())
    }
}

/// Stream validator: per-sample invariants plus monotone time.
#[derive(Debug, Clone, Default)]
pub struct TelemetryValidator {
    last_t: Option<f64>,
}

impl TelemetryValidator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn validate(&mut self, sample: TelemetrySample) -> Result<TelemetrySample, TelemetryError> {
        sample.check()?;
        if let Some(previous) = self.last_t {
            if sample.t < previous {
                return Err(TelemetryError::TimeRegression { t: sample.t, previous });
            }
        }
        self.last_t = Some(sample.t);
        Ok(sample)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    /// Arc-current error e(t) = I_a(t) - I_s, amperes.
    pub error: f64,
    /// e(t) - e(t-1), amperes per step. Zero for the first sample ever seen.
    pub deriv: f64,
}

/// Bounded window of one phase's current error and its one-step derivation.
#[derive(Debug, Clone)]
pub struct PhaseHistory {
    window: VecDeque<HistoryEntry>,
    capacity: usize,
    period: f64,
    last_error: Option<f64>,
}

impl PhaseHistory {
    /// Capacity used when serving a predictor with `lags` lags and the
    /// five-derivation heuristic from one buffer.
    pub fn default_capacity(lags: usize) -> usize {
        (lags + 1).max(6)
    }

    pub fn new(capacity: usize, period: f64) -> Self {
        assert!(capacity >= 1, "history capacity must be at least 1");
        Self {
            window: VecDeque::with_capacity(capacity),
            capacity,
            period,
            last_error: None,
        }
    }

    pub fn push(&mut self, error: f64) -> Result<(), TelemetryError> {
        if !error.is_finite() {
            return Err(TelemetryError::NonFinite { field: "error" });
        }
        let deriv = self.last_error.map_or(0.0, |prev| error - prev);
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(HistoryEntry { error, deriv });
        self.last_error = Some(error);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Entry `lag` steps back from the newest (lag 0 is the newest).
    pub fn lag(&self, lag: usize) -> Option<HistoryEntry> {
        let len = self.window.len();
        (lag < len).then(|| self.window[len - 1 - lag])
    }

    /// Entries oldest first.
    pub fn entries(&self) -> impl DoubleEndedIterator<Item = &HistoryEntry> + ExactSizeIterator {
        self.window.iter()
    }
}

/// Electrode-lift control range of an arc current.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Range {
    ArcGenerating,
    Normal,
    OverCurrent,
    Dangerous,
}

pub fn classify_range(ia: f64, cfg: &ProtectionConfig) -> Range {
    if ia >= cfg.danger_threshold() {
        Range::Dangerous
    } else if ia >= cfg.over_threshold() {
        Range::OverCurrent
    } else if ia >= cfg.arc_on_min {
        Range::Normal
    } else {
        Range::ArcGenerating
    }
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: TelemetryError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads a wide telemetry CSV.
///
/// With `pressure_normal` set, the pressure columns are absolute and are
/// divided by the per-electrode normal pressure on ingest.
pub fn read_telemetry<R: BufRead>(
    reader: R,
    pressure_normal: Option<[f64; PHASES]>,
) -> Result<Vec<TelemetrySample>, CsvError> {
    let mut validator = TelemetryValidator::new();
    let mut out = Vec::new();
    let mut lines = reader.lines();
    match lines.next() {
        None => return Ok(out),
        Some(header) => {
            let header = header?;
            if header.trim_end_matches('\r') != TELEMETRY_HEADER {
                return Err(CsvError::Malformed {
                    line: 1,
                    message: format!("expected header `{TELEMETRY_HEADER}`"),
                });
            }
        }
    }
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields = parse_fields(&line, 10, line_no)?;
        let mut sample = TelemetrySample {
            t: fields[0],
            ia: [fields[1], fields[2], fields[3]],
            e2: [fields[4], fields[5], fields[6]],
            pressure: [fields[7], fields[8], fields[9]],
        };
        if let Some(normal) = pressure_normal {
            for (p, n) in sample.pressure.iter_mut().zip(normal) {
                *p /= n;
            }
        }
        let sample = validator
            .validate(sample)
            .map_err(|source| CsvError::Invalid { line: line_no, source })?;
        out.push(sample);
    }
    Ok(out)
}

/// Splits one CSV row into exactly `expected` floats.
pub fn parse_fields(line: &str, expected: usize, line_no: usize) -> Result<Vec<f64>, CsvError> {
    let parts: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
    if parts.len() != expected {
        return Err(CsvError::Malformed {
            line: line_no,
            message: format!("expected {expected} fields, found {}", parts.len()),
        });
    }
    parts
        .iter()
        .map(|p| {
            p.trim().parse::<f64>().map_err(|_| CsvError::Malformed {
                line: line_no,
                message: format!("cannot parse `{}` as a number", p.trim()),
            })
        })
        .collect()
}

pub fn write_telemetry_header<W: Write>(mut w: W) -> std::io::Result<()> {
    writeln!(w, "{TELEMETRY_HEADER}")
}

pub fn write_telemetry_row<W: Write>(mut w: W, s: &TelemetrySample) -> std::io::Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{},{}",
        s.t, s.ia[0], s.ia[1], s.ia[2], s.e2[0], s.e2[1], s.e2[2], s.pressure[0], s.pressure[1],
        s.pressure[2]
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> ProtectionConfig {
        ProtectionConfig { i_set: 40_000.0, ..ProtectionConfig::default() }
    }

    #[test]
    fn zero_sample_is_valid() {
        let mut v = TelemetryValidator::new();
        assert!(v.validate(TelemetrySample::zero(0.0)).is_ok());
    }

    #[test]
    fn nan_current_rejected() {
        let mut s = TelemetrySample::zero(0.0);
        s.ia[0] = f64::NAN;
        let err = TelemetryValidator::new().validate(s).unwrap_err();
        assert_eq!(err, TelemetryError::NonFinite { field: "ia" });
    }

    #[test]
    fn negative_pressure_rejected() {
        let mut s = TelemetrySample::zero(0.0);
        s.pressure[2] = -0.1;
        assert!(matches!(s.check(), Err(TelemetryError::NegativeSignal { field: "pressure", .. })));
    }

    #[test]
    fn time_regression_rejected() {
        let mut v = TelemetryValidator::new();
        v.validate(TelemetrySample::zero(5.1)).unwrap();
        let err = v.validate(TelemetrySample::zero(5.0)).unwrap_err();
        assert!(matches!(err, TelemetryError::TimeRegression { .. }));
        // equal timestamps are allowed
        v.validate(TelemetrySample::zero(5.1)).unwrap();
    }

    #[test]
    fn first_push_has_zero_derivation() {
        let mut h = PhaseHistory::new(6, 0.1);
        h.push(100.0).unwrap();
        assert_eq!(h.lag(0), Some(HistoryEntry { error: 100.0, deriv: 0.0 }));
    }

    #[test]
    fn derivation_is_successive_difference() {
        let mut h = PhaseHistory::new(6, 0.1);
        h.push(150.0).unwrap();
        h.push(130.0).unwrap();
        assert_eq!(h.lag(0).unwrap().deriv, -20.0);
    }

    #[test]
    fn capacity_evicts_oldest() {
        let mut h = PhaseHistory::new(6, 0.1);
        for i in 0..7 {
            h.push(i as f64).unwrap();
        }
        assert_eq!(h.len(), 6);
        assert_eq!(h.entries().next().unwrap().error, 1.0);
        // the derivation of the surviving oldest entry still refers to the evicted value
        assert_eq!(h.entries().next().unwrap().deriv, 1.0);
    }

    #[test]
    fn push_rejects_non_finite() {
        let mut h = PhaseHistory::new(6, 0.1);
        assert!(h.push(f64::INFINITY).is_err());
        assert!(h.is_empty());
    }

    #[test]
    fn default_capacity_serves_both_consumers() {
        assert_eq!(PhaseHistory::default_capacity(5), 6);
        assert_eq!(PhaseHistory::default_capacity(8), 9);
        assert_eq!(PhaseHistory::default_capacity(1), 6);
    }

    #[test]
    fn range_examples() {
        let c = cfg();
        assert_eq!(classify_range(55_000.0, &c), Range::Dangerous);
        assert_eq!(classify_range(48_000.0, &c), Range::OverCurrent);
        assert_eq!(classify_range(47_499.0, &c), Range::Normal);
        assert_eq!(classify_range(0.0, &c), Range::ArcGenerating);
        assert_eq!(classify_range(c.arc_on_min, &c), Range::Normal);
    }

    #[test]
    fn csv_reads_and_normalizes_pressure() {
        let text = format!("{TELEMETRY_HEADER}\n0,1,2,3,4,5,6,90,100,110\n0.1,1,2,3,4,5,6,90,100,110\n");
        let rows = read_telemetry(text.as_bytes(), Some([100.0, 100.0, 100.0])).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].pressure, [0.9, 1.0, 1.1]);
    }

    #[test]
    fn csv_bad_row_names_line() {
        let mut text = format!("{TELEMETRY_HEADER}\n");
        for i in 0..5 {
            text.push_str(&format!("{i},1,1,1,1,1,1,1,1,1\n"));
        }
        text.push_str("5,1,1,oops,1,1,1,1,1,1\n");
        let err = read_telemetry(text.as_bytes(), None).unwrap_err();
        assert!(matches!(err, CsvError::Malformed { line: 7, .. }), "{err}");
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let s = TelemetrySample {
            t: 0.30000000000000004,
            ia: [40_123.456789, 1e-7, 39_999.99],
            e2: [450.1, 451.0 / 3.0, 0.0],
            pressure: [1.0, 0.899_999_9, 1.000_000_1],
        };
        let mut buf = Vec::new();
        write_telemetry_header(&mut buf).unwrap();
        write_telemetry_row(&mut buf, &s).unwrap();
        let back = read_telemetry(buf.as_slice(), None).unwrap();
        assert_eq!(back, vec![s]);
    }

    proptest! {
        #[test]
        fn range_is_monotone(a in 0.0f64..100_000.0, b in 0.0f64..100_000.0) {
            let c = cfg();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(classify_range(lo, &c) <= classify_range(hi, &c));
        }

        #[test]
        fn derivations_reconstruct_errors(values in proptest::collection::vec(-1e5f64..1e5, 1..40)) {
            let mut h = PhaseHistory::new(6, 0.1);
            for v in &values {
                h.push(*v).unwrap();
            }
            let newest = h.lag(0).unwrap().error;
            for k in 0..h.len() {
                let base = h.lag(k).unwrap().error;
                let sum: f64 = (0..k).map(|j| h.lag(j).unwrap().deriv).sum();
                prop_assert!((base + sum - newest).abs() <= 1e-9 * (1.0 + newest.abs()));
            }
        }
    }
}
