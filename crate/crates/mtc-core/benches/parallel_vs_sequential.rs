//! Sequential vs rayon timings for the data-parallel inner loops: objective
//! assembly with gradients, batched network evaluation, and the grid
//! solver. Both paths share fixed-size chunking with an ordered reduction,
//! so the outputs are bit-identical; only the wall clock changes.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mtc_core::control::ControlParams;
use mtc_core::exec::Parallelism;
use mtc_core::grid::{GridSpec, TrainingGrid};
use mtc_core::net::{ArchPreset, NetParams};
use mtc_core::scenario::benchmark_scenario;
use mtc_core::trainer::{Assembler, EvalRequest, LossWeights};
use mtc_core::validate::{solve, GridSolverConfig};

fn modes() -> Vec<(&'static str, Parallelism)> {
    vec![
        ("sequential", Parallelism::Sequential),
        ("rayon", Parallelism::Rayon),
    ]
}

fn bench_objective_gradient(c: &mut Criterion) {
    let scenario = benchmark_scenario();
    let spec = GridSpec {
        interior_t: 12,
        interior_x: [10, 10],
        ic_x: [10, 10],
        bc_t: 12,
        bc_edge: 10,
        safe_t: 12,
        safe_x: [4, 4],
    };
    let grid = TrainingGrid::build(&scenario, spec).unwrap();
    let net = NetParams::preset(ArchPreset::Small, 2, 0);
    let controls = ControlParams::benchmark(scenario.horizon);
    let weights = LossWeights::default();
    let mut assembler = Assembler::new(&scenario, &grid);

    let mut group = c.benchmark_group("objective_gradient");
    for (name, mode) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| {
                assembler
                    .evaluate(
                        &scenario,
                        &grid,
                        &EvalRequest {
                            net: &net,
                            controls: &controls,
                            weights: &weights,
                            mode,
                            want_grad: true,
                            subset: None,
                        },
                    )
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn bench_breakdown_only(c: &mut Criterion) {
    let scenario = benchmark_scenario();
    let grid = TrainingGrid::build(&scenario, GridSpec::paper_small()).unwrap();
    let net = NetParams::preset(ArchPreset::Small, 2, 0);
    let controls = ControlParams::benchmark(scenario.horizon);
    let weights = LossWeights::default();
    let mut assembler = Assembler::new(&scenario, &grid);

    let mut group = c.benchmark_group("loss_breakdown_paper_small");
    group.sample_size(10);
    for (name, mode) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| {
                assembler
                    .evaluate(
                        &scenario,
                        &grid,
                        &EvalRequest {
                            net: &net,
                            controls: &controls,
                            weights: &weights,
                            mode,
                            want_grad: false,
                            subset: None,
                        },
                    )
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn bench_grid_solver(c: &mut Criterion) {
    let scenario = benchmark_scenario();
    let controls = ControlParams::benchmark(scenario.horizon);

    let mut group = c.benchmark_group("grid_solver_40x40");
    group.sample_size(10);
    for (name, mode) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            let cfg = GridSolverConfig {
                nx: [40, 40],
                nt: 50,
                parallelism: mode,
                ..Default::default()
            };
            b.iter(|| solve(&scenario, &controls, &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_objective_gradient,
    bench_breakdown_only,
    bench_grid_solver
);
criterion_main!(benches);
