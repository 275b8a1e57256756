use eaf_core::engine::{replay, Engine, EngineConfig};
use eaf_core::protection::{CommandSource, ElectrodeCommand, ProtectionConfig};
use eaf_core::rbf::{RbfNetwork, RbfRule};
use eaf_core::assessment::{LyapunovConfig, VdotMax};
use eaf_core::sim::{run_closed_loop, Event, EventKind, EventScript, Furnace, PiGains, PlantConfig};
use eaf_core::telemetry::{read_telemetry, write_telemetry_header, write_telemetry_row, TelemetrySample, PHASES};
use proptest::prelude::*;

fn protection_engine() -> Engine {
    Engine::new(EngineConfig::protection_only(ProtectionConfig::default())).unwrap()
}

fn collapse(time: f64, magnitude: f64, phase: usize) -> Event {
    Event { time, kind: EventKind::Collapse, magnitude, duration: 1.5, phase: Some(phase) }
}

fn simulate(script: Vec<Event>, seed: u64, steps: usize) -> eaf_core::sim::SimRun {
    let mut f = Furnace::new(PlantConfig { seed, ..PlantConfig::default() }, EventScript::new(script).unwrap()).unwrap();
    run_closed_loop(&mut f, &mut protection_engine(), PiGains::default(), steps)
}

#[test]
fn lowvolt_fires_at_the_voltage_crossing() {
    let cfg = ProtectionConfig::default();
    let run = simulate(vec![collapse(20.0, 1.0, 0), collapse(45.0, 0.9, 1), collapse(70.0, 0.95, 2)], 5, 900);
    for k in 0..PHASES {
        let crossing = run
            .samples
            .iter()
            .position(|s| s.ia[k] >= cfg.arc_on_min && s.e2[k] <= cfg.lowvolt_factor * s.ia[k] * cfg.reactance_x)
            .expect("scripted collapse drives E2 below the limit");
        let first_fire = run.records.iter().position(|r| r[k].raised(CommandSource::LowVoltCollapse)).unwrap();
        assert!(first_fire >= crossing && first_fire <= crossing + 1, "phase {k}: {first_fire} vs {crossing}");
    }
}

#[test]
fn lowvolt_latch_holds_two_seconds_after_recovery() {
    let run = simulate(vec![collapse(20.0, 1.0, 0)], 2, 400);
    let fired: Vec<f64> =
        run.records.iter().filter(|r| r[0].raised(CommandSource::LowVoltCollapse)).map(|r| r[0].t).collect();
    let last_low = run
        .samples
        .iter()
        .filter(|s| s.e2[0] <= 1.2 * s.ia[0] * 0.004)
        .map(|s| s.t)
        .fold(f64::MIN, f64::max);
    let last_fire = *fired.last().unwrap();
    assert!((last_fire - (last_low + 2.0)).abs() < 1e-6, "{last_fire} vs {last_low}");
}

#[test]
fn voltage_never_below_reactance_drop() {
    let run = simulate(vec![collapse(10.0, 1.0, 0), collapse(30.0, 0.85, 2)], 9, 600);
    for s in &run.samples {
        for k in 0..PHASES {
            assert!(s.e2[k] >= s.ia[k] * 0.004, "t={} phase {k}", s.t);
        }
    }
}

#[test]
fn scripted_faults_reach_their_loops() {
    let script = vec![
        Event { time: 10.0, kind: EventKind::NonMetal, magnitude: 0.85, duration: 3.0, phase: Some(0) },
        Event { time: 20.0, kind: EventKind::OverTransient, magnitude: 9_000.0, duration: 2.0, phase: Some(1) },
    ];
    let run = simulate(script, 1, 300);
    let raised = |k: usize, s: CommandSource| run.records.iter().filter(|r| r[k].raised(s)).count();
    // 3 s below 0.9 with a 1.5 s hold
    assert_eq!(raised(0, CommandSource::NonMetal), 15);
    assert!(raised(1, CommandSource::OverSustained) >= 1);
    assert_eq!(raised(2, CommandSource::OverLoop), 0);
}

#[test]
fn all_mechanisms_are_evaluated_each_tick() {
    // one rule that always fires and predicts a rise with full confidence
    let rule = RbfRule {
        theta1: vec![0.0; 2],
        sigma1: vec![1e9; 2],
        theta2: vec![0.0; 2],
        sigma2: vec![1e9; 2],
        conclusions: [1.0, 1.0, -1.0],
    };
    let model = RbfNetwork::new(vec![rule], 2, 0.1).unwrap();
    let cfg = EngineConfig::with_model(
        ProtectionConfig::default(),
        LyapunovConfig::identity(2, VdotMax::Fixed(1e9)),
        model,
    );
    let mut e = Engine::new(cfg).unwrap();
    let mut last = None;
    // steady rise through the over-current band, then two steep steps into
    // the danger band, with collapsed voltage and lost cylinder pressure
    for i in 0..25usize {
        let ia = 46_000.0 + 400.0 * i.min(22) as f64 + 4_000.0 * i.saturating_sub(22) as f64;
        let s = TelemetrySample { t: i as f64 * 0.1, ia: [ia; PHASES], e2: [ia * 0.0041; PHASES], pressure: [0.5; PHASES] };
        last = Some(e.tick(&s, [ElectrodeCommand::hold(); PHASES]).unwrap());
    }
    let r = &last.unwrap()[0];
    for source in [
        CommandSource::DangerLoop,
        CommandSource::OverSustained,
        CommandSource::LowVoltCollapse,
        CommandSource::HeuristicCollapse,
        CommandSource::PredictedCollapse,
        CommandSource::NonMetal,
    ] {
        assert!(r.raised(source), "{source} missing from {:?}", r.fired);
    }
    assert_eq!(r.command.source, CommandSource::DangerLoop);
}

#[test]
fn replay_is_deterministic() {
    let run = simulate(vec![collapse(20.0, 0.95, 1)], 3, 400);
    let go = || replay(&mut protection_engine(), &run.samples, PiGains::default()).unwrap();
    assert_eq!(go(), go());
}

#[test]
fn replay_of_empty_stream_is_empty() {
    let out = replay(&mut protection_engine(), &[], PiGains::default()).unwrap();
    assert!(out.events.is_empty() && out.curve.is_empty());
    assert_eq!(out.summary.samples, 0);
    assert!(out.summary.raised.is_empty());
}

#[test]
fn simulated_trace_survives_csv() {
    let run = simulate(vec![collapse(5.0, 0.9, 2)], 4, 120);
    let mut buf = Vec::new();
    write_telemetry_header(&mut buf).unwrap();
    for s in &run.samples {
        write_telemetry_row(&mut buf, s).unwrap();
    }
    let back = read_telemetry(buf.as_slice(), None).unwrap();
    assert_eq!(back, run.samples);
    assert_eq!(back.len(), 120);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arbitrated_velocity_is_bounded(
        ia in proptest::collection::vec(0.0f64..80_000.0, 12),
        ratio in proptest::collection::vec(0.0041f64..0.02, 12),
        pressure in proptest::collection::vec(0.0f64..1.2, 12),
        reg in -3.0f64..3.0,
    ) {
        let mut e = protection_engine();
        for i in 0..12 {
            let s = TelemetrySample {
                t: i as f64 * 0.1,
                ia: [ia[i]; PHASES],
                e2: [ia[i] * ratio[i]; PHASES],
                pressure: [pressure[i]; PHASES],
            };
            let regulator = ElectrodeCommand { velocity: reg, source: CommandSource::Regulator, latch_until: None };
            for r in e.tick(&s, [regulator; PHASES]).unwrap() {
                if r.command.source != CommandSource::Regulator {
                    prop_assert!(r.command.velocity.abs() <= 1.0);
                }
                let best = r.fired.iter().map(|c| c.source).min();
                prop_assert_eq!(best.unwrap_or(CommandSource::Regulator), r.command.source);
            }
        }
    }
}
