use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::Vector6;
use uvms_coop::checks;
use uvms_coop::navfun::propagate_reference;
use uvms_coop::nmpc::{solve_fhocp, AgentPrediction};
use uvms_coop::par::Execution;
use uvms_coop::scenario::ScenarioConfig;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn identity_batch(c: &mut Criterion) {
    let mut g = c.benchmark_group("identity_batch");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(checks::identity(200, exec).unwrap()))
        });
    }
    g.finish();
}

fn horizon_solve(c: &mut Criterion) {
    let cfg = ScenarioConfig::bundled().unwrap();
    let s = cfg.build().unwrap();
    let agent = &s.agents[0];
    let x0 = &s.initial.agents[0];
    let m = AgentPrediction::new(agent, cfg.nmpc.tightening, &cfg.nmpc.penalty);
    let steps = cfg.nmpc.steps();
    let reference =
        propagate_reference(&s.initial.object, &s.waypoints[0], &s.world, &s.nav, steps, cfg.nmpc.h, agent.pitch_margin())
            .unwrap();
    let warm = vec![Vector6::repeat(0.2); steps];

    let mut g = c.benchmark_group("horizon_solve");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(solve_fhocp(&m, x0, &reference, Some(&warm), &cfg.nmpc, exec).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, identity_batch, horizon_solve);
criterion_main!(benches);
