//! Scoring prediction curves against labeled collapses.

use std::collections::HashMap;

use eaf_core::engine::cluster_times;
use serde::Serialize;

use crate::files::{CurveRecord, LabelRecord};

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollapseEvent {
    pub t: f64,
    /// 1-based.
    pub phase: usize,
}

/// Collapse onsets: the last instant of each run of positive labels on a
/// phase.
pub fn events_from_labels(labels: &[LabelRecord]) -> Vec<CollapseEvent> {
    let mut events = Vec::new();
    for phase in 1..=3 {
        let mut run_end: Option<f64> = None;
        for l in labels.iter().filter(|l| l.phase == phase) {
            if l.collapse != 0 {
                run_end = Some(l.t);
            } else if let Some(t) = run_end.take() {
                events.push(CollapseEvent { t, phase });
            }
        }
        if let Some(t) = run_end {
            events.push(CollapseEvent { t, phase });
        }
    }
    events.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.phase.cmp(&b.phase)));
    events
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceScore {
    pub events: usize,
    pub detected: usize,
    /// Onset time minus first matching alert, per detected event.
    pub leads: Vec<f64>,
    pub false_alarms: usize,
    pub seconds: f64,
}

/// Scores one curve against its labels. Alerts match events on the same
/// phase within `window` seconds either side; the remaining alerts are
/// clustered with `gap` and each cluster counts as one false alarm.
pub fn score_trace(curve: &[CurveRecord], labels: &[LabelRecord], window: f64, gap: f64) -> Result<TraceScore, String> {
    let Some(t0) = labels.iter().map(|l| l.t).min_by(f64::total_cmp) else {
        return Err("label file is empty".into());
    };
    let t1 = labels.iter().map(|l| l.t).max_by(f64::total_cmp).expect("non-empty");
    if let Some(c) = curve.iter().find(|c| c.t < t0 - TIME_EPS || c.t > t1 + TIME_EPS) {
        return Err(format!("curve time {} lies outside the labeled range [{t0}, {t1}]", c.t));
    }
    let mut times: Vec<f64> = labels.iter().map(|l| l.t).collect();
    times.dedup();
    let step = if times.len() >= 2 { times[1] - times[0] } else { 0.0 };

    let events = events_from_labels(labels);
    let alerts: Vec<&CurveRecord> = curve.iter().filter(|c| c.alert != 0).collect();
    let near = |a: &CurveRecord, e: &CollapseEvent| a.phase == e.phase && (a.t - e.t).abs() <= window + TIME_EPS;

    let mut score = TraceScore { events: events.len(), seconds: t1 - t0 + step, ..TraceScore::default() };
    for e in &events {
        if let Some(first) = alerts.iter().filter(|a| near(a, e)).map(|a| a.t).min_by(f64::total_cmp) {
            score.detected += 1;
            score.leads.push(e.t - first);
        }
    }
    let stray: Vec<f64> = alerts.iter().filter(|a| !events.iter().any(|e| near(a, e))).map(|a| a.t).collect();
    score.false_alarms = cluster_times(&stray, gap).len();
    Ok(score)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeadStats {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub window_s: f64,
    pub cluster_gap_s: f64,
    pub traces: usize,
    pub events: usize,
    pub detected: usize,
    pub detection_rate: Option<f64>,
    pub false_alarms: usize,
    pub hours: f64,
    pub false_alarms_per_hour: Option<f64>,
    /// Seconds of warning before onset; negative when the alert came late.
    pub lead_time_s: Option<LeadStats>,
}

pub fn aggregate(scores: &[TraceScore], window: f64, gap: f64) -> Metrics {
    let events: usize = scores.iter().map(|s| s.events).sum();
    let detected: usize = scores.iter().map(|s| s.detected).sum();
    let false_alarms: usize = scores.iter().map(|s| s.false_alarms).sum();
    let hours = scores.iter().map(|s| s.seconds).sum::<f64>() / 3600.0;
    let mut leads: Vec<f64> = scores.iter().flat_map(|s| s.leads.iter().copied()).collect();
    leads.sort_by(f64::total_cmp);
    let lead_time_s = (!leads.is_empty()).then(|| {
        let m = leads.len();
        let median = if m % 2 == 1 { leads[m / 2] } else { (leads[m / 2 - 1] + leads[m / 2]) / 2.0 };
        LeadStats { mean: leads.iter().sum::<f64>() / m as f64, median, min: leads[0], max: leads[m - 1] }
    });
    Metrics {
        window_s: window,
        cluster_gap_s: gap,
        traces: scores.len(),
        events,
        detected,
        detection_rate: (events > 0).then(|| detected as f64 / events as f64),
        false_alarms,
        hours,
        false_alarms_per_hour: (hours > 0.0).then(|| false_alarms as f64 / hours),
        lead_time_s,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotRow {
    pub trace: usize,
    pub t: f64,
    pub phase: usize,
    pub cf: f64,
    pub alert: u8,
    pub collapse: u8,
}

pub const PLOT_HEADER: [&str; 6] = ["trace", "t", "phase", "cf", "alert", "collapse"];

/// (t, cf) series for external plotting, with the label's collapse flag.
pub fn plot_rows(trace: usize, curve: &[CurveRecord], labels: &[LabelRecord]) -> Vec<PlotRow> {
    let key = |t: f64, phase: usize| ((t * 1e6).round() as i64, phase);
    let flags: HashMap<(i64, usize), u8> = labels.iter().map(|l| (key(l.t, l.phase), l.collapse)).collect();
    curve
        .iter()
        .map(|c| PlotRow {
            trace,
            t: c.t,
            phase: c.phase,
            cf: c.cf,
            alert: c.alert,
            collapse: flags.get(&key(c.t, c.phase)).copied().unwrap_or(0),
        })
        .collect()
}
