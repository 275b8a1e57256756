use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use eaf_core::engine::{replay as run_replay, Engine, EngineConfig, ReplaySummary};
use eaf_core::protection::CommandSource;
use eaf_core::rbf::RbfNetwork;
use eaf_core::sim::{label_trace, run_closed_loop, EventScript, Furnace};
use serde_json::json;

use crate::config::{load_config, AppConfig};
use crate::error::CliError;
use crate::files::{self, CurveRecord, EventRecord, LabelRecord, CURVE_HEADER, EVENT_HEADER, LABEL_HEADER};
use crate::manifest::RunManifest;
use crate::report::{aggregate, plot_rows, score_trace, Metrics, PLOT_HEADER};
use crate::training::{fit, Dataset};

pub const TELEMETRY_FILE: &str = "telemetry.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const SCRIPT_FILE: &str = "script.txt";
pub const MODEL_FILE: &str = "model.txt";
pub const LOSS_FILE: &str = "loss.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const CURVE_FILE: &str = "curve.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const PLOT_FILE: &str = "plot.csv";

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Common {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<AppConfig, CliError> {
        let cfg = load_config(self.config.as_deref())?;
        files::ensure_dir(&self.out)?;
        Ok(cfg)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

#[derive(Debug, Clone, Default)]
pub enum ScriptSource {
    #[default]
    None,
    File(PathBuf),
    /// Randomly placed single-phase collapses.
    Random(usize),
}

#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub samples: usize,
    pub events: usize,
    pub manifest: RunManifest,
}

pub fn simulate(common: &Common, script: &ScriptSource, duration: f64) -> Result<SimulateOutcome, CliError> {
    let mut cfg = common.load()?;
    if !(duration.is_finite() && duration >= 0.0) {
        return Err(CliError::input(format!("duration must be >= 0, got {duration}")));
    }
    let seed = common.seed.unwrap_or(cfg.plant.seed);
    cfg.plant.seed = seed;
    let mut manifest = RunManifest::new("simulate", common.config.as_deref(), &common.out, seed).arg("duration", duration);
    let script = match script {
        ScriptSource::None => EventScript::default(),
        ScriptSource::File(path) => {
            manifest = manifest.input(path);
            EventScript::parse(files::open_input(path)?)
                .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?
        }
        ScriptSource::Random(count) => {
            manifest = manifest.arg("collapses", count);
            EventScript::random_collapses(*count, duration, seed).map_err(|e| CliError::input(e.to_string()))?
        }
    };

    let dt = cfg.protection.dt_s;
    let steps = (duration / dt).round() as usize;
    let mut furnace = Furnace::new(cfg.plant.clone(), script.clone()).map_err(|e| CliError::input(e.to_string()))?;
    let mut engine = Engine::new(EngineConfig::protection_only(cfg.protection.clone()))
        .map_err(|e| CliError::input(e.to_string()))?;
    let run = run_closed_loop(&mut furnace, &mut engine, cfg.regulator, steps);
    let labels = label_trace(&run.samples, &script, &cfg.lyapunov, cfg.protection.i_set, dt, cfg.predictor.horizon_s);

    files::save_telemetry(&common.path(TELEMETRY_FILE), &run.samples)?;
    files::write_csv(&common.path(LABELS_FILE), &LABEL_HEADER, labels.iter().map(LabelRecord::from))?;
    files::write_text(&common.path(SCRIPT_FILE), &script.to_text())?;
    let manifest = manifest.finish(&[TELEMETRY_FILE, LABELS_FILE, SCRIPT_FILE])?;
    Ok(SimulateOutcome { samples: run.samples.len(), events: script.events().len(), manifest })
}

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub telemetry: Vec<PathBuf>,
    pub labels: Vec<PathBuf>,
    pub rules: Option<usize>,
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RbfNetwork,
    pub samples: usize,
    pub positives: usize,
    pub final_loss: Option<f64>,
    pub manifest: RunManifest,
}

pub fn train(common: &Common, args: &TrainArgs) -> Result<TrainOutcome, CliError> {
    let mut cfg = common.load()?;
    if args.telemetry.is_empty() || args.telemetry.len() != args.labels.len() {
        return Err(CliError::input(format!(
            "need matching --telemetry and --labels files, got {} and {}",
            args.telemetry.len(),
            args.labels.len()
        )));
    }
    if let Some(r) = args.rules {
        if r == 0 {
            return Err(CliError::input("--rules must be >= 1"));
        }
        cfg.predictor.rules = r;
    }
    if let Some(e) = args.epochs {
        cfg.predictor.epochs = e;
    }
    let seed = common.seed.unwrap_or(0);
    let n = cfg.lyapunov.dim();
    let mut manifest = RunManifest::new("train", common.config.as_deref(), &common.out, seed)
        .arg("rules", cfg.predictor.rules)
        .arg("epochs", cfg.predictor.epochs);

    let mut dataset = Dataset::default();
    for (tel, lab) in args.telemetry.iter().zip(&args.labels) {
        manifest = manifest.input(tel).input(lab);
        let samples = files::load_telemetry(tel)?;
        let labels = files::read_labels(lab)?;
        dataset
            .extend_from_trace(&samples, &labels, n, cfg.protection.i_set, cfg.protection.dt_s)
            .map_err(|e| CliError::input(format!("{} vs {}: {e}", lab.display(), tel.display())))?;
    }
    let data = dataset.balanced(cfg.predictor.negative_ratio, seed);
    let (model, report) = fit(&data, n, &cfg.predictor, seed).map_err(|e| CliError::input(e.to_string()))?;

    let model_path = common.path(MODEL_FILE);
    let mut w = files::create(&model_path)?;
    model.save(&mut w).map_err(|e| CliError::io(&model_path, e))?;
    drop(w);
    let rows = report.trace.iter().zip(&report.skipped).enumerate().map(|(i, (loss, skipped))| (i + 1, *loss, *skipped));
    files::write_csv(&common.path(LOSS_FILE), &["epoch", "loss", "skipped"], rows)?;
    let manifest = manifest.finish(&[MODEL_FILE, LOSS_FILE])?;
    Ok(TrainOutcome {
        model,
        samples: data.len(),
        positives: dataset.positives.len(),
        final_loss: report.trace.last().copied(),
        manifest,
    })
}

pub fn load_model(path: &Path) -> Result<RbfNetwork, CliError> {
    RbfNetwork::load(files::open_input(path)?).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn count_map(counts: &BTreeMap<CommandSource, usize>) -> serde_json::Map<String, serde_json::Value> {
    CommandSource::ALL
        .iter()
        .map(|s| (s.to_string(), json!(counts.get(s).copied().unwrap_or(0))))
        .collect()
}

pub fn summary_json(summary: &ReplaySummary, warnings: &[String]) -> serde_json::Value {
    json!({
        "samples": summary.samples,
        "raised": count_map(&summary.raised),
        "won": count_map(&summary.won),
        "cf": { "min": summary.cf_min, "max": summary.cf_max, "mean": summary.cf_mean },
        "alerts": summary.alerts,
        "alert_clusters": summary.alert_clusters,
        "predictor_gaps": summary.predictor_gaps,
        "warnings": warnings,
    })
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub summary: ReplaySummary,
    pub manifest: RunManifest,
}

pub fn replay(common: &Common, telemetry: &Path, model: Option<&Path>) -> Result<ReplayOutcome, CliError> {
    let cfg = common.load()?;
    let mut manifest =
        RunManifest::new("replay", common.config.as_deref(), &common.out, common.seed.unwrap_or(0)).input(telemetry);
    let engine_cfg = match model {
        Some(path) => {
            manifest = manifest.input(path);
            let mut c = EngineConfig::with_model(cfg.protection.clone(), cfg.lyapunov.clone(), load_model(path)?);
            c.cf_source = cfg.cf_source;
            c
        }
        None => EngineConfig::protection_only(cfg.protection.clone()),
    };
    let mut engine = Engine::new(engine_cfg).map_err(|e| CliError::input(e.to_string()))?;
    let samples = files::load_telemetry(telemetry)?;
    let out = run_replay(&mut engine, &samples, cfg.regulator)
        .map_err(|e| CliError::input(format!("{}: {e}", telemetry.display())))?;

    files::write_csv(&common.path(EVENTS_FILE), &EVENT_HEADER, out.events.iter().map(EventRecord::from))?;
    files::write_csv(&common.path(CURVE_FILE), &CURVE_HEADER, out.curve.iter().map(CurveRecord::from))?;
    files::write_json(&common.path(SUMMARY_FILE), &summary_json(&out.summary, engine.warnings()))?;
    let manifest = manifest.finish(&[EVENTS_FILE, CURVE_FILE, SUMMARY_FILE])?;
    Ok(ReplayOutcome { summary: out.summary, manifest })
}

#[derive(Debug, Clone)]
pub struct ReportOutcome {
    pub metrics: Metrics,
    pub manifest: RunManifest,
}

pub fn report(
    common: &Common,
    curves: &[PathBuf],
    labels: &[PathBuf],
    window: Option<f64>,
) -> Result<ReportOutcome, CliError> {
    let cfg = common.load()?;
    if curves.is_empty() || curves.len() != labels.len() {
        return Err(CliError::input(format!(
            "need matching --curve and --labels files, got {} and {}",
            curves.len(),
            labels.len()
        )));
    }
    let window = window.unwrap_or(cfg.report.window_s);
    if !(window.is_finite() && window >= 0.0) {
        return Err(CliError::input(format!("window must be >= 0, got {window}")));
    }
    let gap = cfg.report.cluster_gap_s;
    let mut manifest = RunManifest::new("report", common.config.as_deref(), &common.out, common.seed.unwrap_or(0))
        .arg("window_s", window);
    let mut scores = Vec::new();
    let mut plot = Vec::new();
    for (i, (c, l)) in curves.iter().zip(labels).enumerate() {
        manifest = manifest.input(c).input(l);
        let curve = files::read_curve(c)?;
        let lab = files::read_labels(l)?;
        let score = score_trace(&curve, &lab, window, gap)
            .map_err(|e| CliError::input(format!("{} vs {}: {e}", c.display(), l.display())))?;
        scores.push(score);
        plot.extend(plot_rows(i + 1, &curve, &lab));
    }
    let metrics = aggregate(&scores, window, gap);
    let value = serde_json::to_value(&metrics).expect("metrics serialize");
    files::write_json(&common.path(METRICS_FILE), &value)?;
    files::write_csv(&common.path(PLOT_FILE), &PLOT_HEADER, plot)?;
    let manifest = manifest.finish(&[METRICS_FILE, PLOT_FILE])?;
    Ok(ReportOutcome { metrics, manifest })
}
