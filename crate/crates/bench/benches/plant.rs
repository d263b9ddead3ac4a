use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};

use teer_core::kinematics::{chain_fk, sheath_fk, PlantOffsets};
use teer_core::scenarios::all_scenarios;
use teer_core::trials::{run_trial, ScriptAction, Simulator, TrialMetrics};
use teer_core::{ControlMode, ControlPath, GamepadFrame, SessionConfig};

fn kinematics(c: &mut Criterion) {
    let cfg = SessionConfig::default();
    let js = cfg.initial_state;
    c.bench_function("sheath_fk", |b| {
        b.iter(|| sheath_fk(black_box(40.0), black_box(15.0), black_box(30.0), &cfg.geometry.transseptal))
    });
    c.bench_function("chain_fk", |b| b.iter(|| chain_fk(black_box(&js), &PlantOffsets::rigid(&js), &cfg.geometry)));
}

fn simulator(c: &mut Criterion) {
    let cfg = SessionConfig::default();
    let frame = GamepadFrame { left_stick: [0.8, 0.0], right_stick: [0.0, 0.5], ..GamepadFrame::default() };
    for (name, control) in [("tick_robotic", ControlPath::Robotic), ("tick_manual", ControlPath::Manual)] {
        c.bench_function(name, |b| {
            let mut sim = Simulator::new(&cfg, control, cfg.initial_state, ControlMode::ALL[0], false);
            if control == ControlPath::Robotic {
                sim.apply(&ScriptAction::Frame { frame }).unwrap();
            }
            b.iter(|| {
                sim.step();
                // Keep the record buffer from growing across iterations.
                sim.forget_history();
            })
        });
    }
}

fn trials(c: &mut Criterion) {
    let cfg = SessionConfig::default();
    let scenarios = all_scenarios(&cfg).unwrap();
    let delivery = scenarios.iter().find(|s| s.name == "delivery_a2p2").unwrap();
    let script = delivery.canonical_for(ControlPath::Robotic).unwrap();
    let log = run_trial(script, &cfg).unwrap();

    // Clip path from a real trial, one pose per tick.
    let path: Vec<_> = log.ticks().map(|t| chain_fk(&t.js, &PlantOffsets::rigid(&t.js), &cfg.geometry).clip).collect();

    let mut group = c.benchmark_group("trial");
    group.sample_size(10);
    group.bench_function("swept_hull", |b| b.iter(|| cfg.phantom.check_atrium_collision(black_box(&path))));
    group.bench_function("metrics", |b| b.iter(|| TrialMetrics::compute(black_box(&log), &cfg).unwrap()));
    group.bench_function("run_delivery_robotic", |b| {
        b.iter_batched(|| script.clone(), |s| run_trial(&s, &cfg).unwrap(), BatchSize::SmallInput)
    });
    group.finish();
}

criterion_group!(benches, kinematics, simulator, trials);
criterion_main!(benches);
