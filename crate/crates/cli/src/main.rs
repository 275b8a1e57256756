use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eaf_cli::commands::{self, Common, ScriptSource, TrainArgs};
use eaf_cli::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "eaf", version, about = "Arc furnace electrode protection: simulate, train, replay, report")]
struct Cli {
    /// Configuration file (`section.key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for simulation noise, event placement and training order.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the closed-loop furnace simulator and label the trace.
    Simulate {
        /// Seconds of simulated time.
        #[arg(long)]
        duration: f64,
        /// Event script: `time kind magnitude duration [phase]` per line.
        #[arg(long, conflicts_with = "collapses")]
        script: Option<PathBuf>,
        /// Place this many random single-phase collapses instead of a script.
        #[arg(long)]
        collapses: Option<usize>,
    },
    /// Train the collapse predictor on labeled traces.
    Train {
        /// Telemetry CSV; repeat for several traces.
        #[arg(long, required = true)]
        telemetry: Vec<PathBuf>,
        /// Label CSV matching each --telemetry, in the same order.
        #[arg(long, required = true)]
        labels: Vec<PathBuf>,
        #[arg(long)]
        rules: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run a recorded trace through the protection engine.
    Replay {
        #[arg(long)]
        telemetry: PathBuf,
        /// Trained predictor; without it only the fixed loops run.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Score prediction curves against labels.
    Report {
        /// Prediction curve CSV; repeat for several traces.
        #[arg(long, required = true)]
        curve: Vec<PathBuf>,
        /// Label CSV matching each --curve, in the same order.
        #[arg(long, required = true)]
        labels: Vec<PathBuf>,
        /// Match window half-width in seconds.
        #[arg(long)]
        window: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = Common { config: cli.config, seed: cli.seed, out: cli.out };
    match cli.command {
        Command::Simulate { duration, script, collapses } => {
            let source = match (script, collapses) {
                (Some(p), _) => ScriptSource::File(p),
                (None, Some(k)) => ScriptSource::Random(k),
                (None, None) => ScriptSource::None,
            };
            let o = commands::simulate(&common, &source, duration)?;
            println!("simulated {} samples with {} scripted events -> {}", o.samples, o.events, common.out.display());
        }
        Command::Train { telemetry, labels, rules, epochs } => {
            let o = commands::train(&common, &TrainArgs { telemetry, labels, rules, epochs })?;
            let loss = o.final_loss.map_or("n/a".to_string(), |l| format!("{l:.6}"));
            println!(
                "trained {} rules on {} samples ({} positive), final loss {loss} -> {}",
                o.model.rules().len(),
                o.samples,
                o.positives,
                common.out.display()
            );
        }
        Command::Replay { telemetry, model } => {
            let o = commands::replay(&common, &telemetry, model.as_deref())?;
            let s = &o.summary;
            println!("replayed {} samples", s.samples);
            for (source, n) in &s.won {
                println!("  {source:<18} {n}");
            }
            println!("  alerts {} in {} clusters, predictor gaps {}", s.alerts, s.alert_clusters, s.predictor_gaps);
        }
        Command::Report { curve, labels, window } => {
            let o = commands::report(&common, &curve, &labels, window)?;
            let m = &o.metrics;
            let rate = m.detection_rate.map_or("n/a".to_string(), |r| format!("{r:.3}"));
            let fa = m.false_alarms_per_hour.map_or("n/a".to_string(), |r| format!("{r:.2}"));
            println!(
                "detected {}/{} collapses (rate {rate}), {} false alarms in {:.2} h ({fa}/h), window +/-{} s",
                m.detected, m.events, m.false_alarms, m.hours, m.window_s
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
