//! Bit-level reproducibility of the data-parallel assembly: the chunked
//! ordered reduction must make rayon and sequential execution identical,
//! and the fast shared-node lattice path must agree with the per-test-
//! function reference path.

use mtc_core::control::ControlParams;
use mtc_core::exec::Parallelism;
use mtc_core::grid::{GridSpec, InteriorLayout, TrainingGrid};
use mtc_core::net::NetParams;
use mtc_core::scenario::benchmark_scenario;
use mtc_core::trainer::{Assembler, EvalRequest, LossWeights};

fn small_spec() -> GridSpec {
    GridSpec {
        interior_t: 6,
        interior_x: [5, 5],
        ic_x: [5, 5],
        bc_t: 5,
        bc_edge: 5,
        safe_t: 4,
        safe_x: [2, 2],
    }
}

fn test_controls(horizon: f64) -> ControlParams {
    let mut c = ControlParams::benchmark(horizon);
    c.alpha[0] = vec![0.5, -0.2, 0.1, 0.0, 0.3];
    c.alpha[1] = vec![-0.4, 0.6, 0.0, 0.2, 0.0];
    c.beta[0] = vec![0.0, 0.7, -0.3, 0.1];
    c.beta[1] = vec![3.0f64.ln(), -0.5, 0.2, 0.0];
    c
}

#[test]
fn rayon_and_sequential_gradients_are_bit_identical() {
    let sc = benchmark_scenario();
    let grid = TrainingGrid::build(&sc, small_spec()).unwrap();
    let net = NetParams::new(vec![3, 8, 6, 1], 5);
    let controls = test_controls(sc.horizon);
    let weights = LossWeights::default();

    let mut results = Vec::new();
    for mode in [Parallelism::Sequential, Parallelism::Rayon] {
        let mut assembler = Assembler::new(&sc, &grid);
        let (breakdown, grad) = assembler
            .evaluate(
                &sc,
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
            .unwrap();
        results.push((breakdown, grad.unwrap()));
    }
    let (b_seq, g_seq) = &results[0];
    let (b_par, g_par) = &results[1];
    assert_eq!(b_seq.objective.to_bits(), b_par.objective.to_bits());
    assert_eq!(b_seq.variational_sq_sum.to_bits(), b_par.variational_sq_sum.to_bits());
    assert_eq!(g_seq.len(), g_par.len());
    for (a, b) in g_seq.iter().zip(g_par.iter()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn lattice_fast_path_matches_per_test_function_reference() {
    let sc = benchmark_scenario();
    let grid = TrainingGrid::build(&sc, small_spec()).unwrap();
    // The same centers as an explicit scattered list force the reference
    // path through the public API.
    let centers: Vec<(f64, [f64; 2])> = (0..grid.n_interior())
        .map(|k| grid.interior_center(k))
        .collect();
    let mut scattered = grid.clone();
    scattered.layout = InteriorLayout::Scattered(centers);

    let net = NetParams::new(vec![3, 8, 6, 1], 9);
    let controls = test_controls(sc.horizon);
    let weights = LossWeights::default();

    let mut run = |g: &TrainingGrid| {
        let mut assembler = Assembler::new(&sc, g);
        assembler
            .evaluate(
                &sc,
                g,
                &EvalRequest {
                    net: &net,
                    controls: &controls,
                    weights: &weights,
                    mode: Parallelism::Sequential,
                    want_grad: true,
                    subset: None,
                },
            )
            .unwrap()
    };
    let (b_fast, g_fast) = run(&grid);
    let (b_ref, g_ref) = run(&scattered);
    let (g_fast, g_ref) = (g_fast.unwrap(), g_ref.unwrap());

    let rel = (b_fast.variational_sq_sum - b_ref.variational_sq_sum).abs()
        / b_ref.variational_sq_sum.abs().max(1e-300);
    assert!(rel < 1e-10, "variational term mismatch: rel {rel:.3e}");
    assert!((b_fast.objective - b_ref.objective).abs() / b_ref.objective.abs() < 1e-10);

    let diff: f64 = g_fast
        .iter()
        .zip(&g_ref)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = g_ref.iter().map(|g| g * g).sum::<f64>().sqrt();
    assert!(diff / norm < 1e-9, "gradient mismatch: rel {:.3e}", diff / norm);
}

#[test]
#[ignore = "manual timing probe"]
fn timing_probe() {
    let sc = benchmark_scenario();
    for (name, spec, sizes) in [
        ("paper-small", GridSpec::paper_small(), vec![3, 10, 20, 1]),
        ("paper-full", GridSpec::paper_full(), vec![3, 10, 20, 30, 1]),
        ("281-dense", GridSpec::paper_full(), vec![3, 10, 20, 1]),
    ] {
        let grid = TrainingGrid::build(&sc, spec).unwrap();
        let net = NetParams::new(sizes, 0);
        let controls = test_controls(sc.horizon);
        let weights = LossWeights::default();
        let mut assembler = Assembler::new(&sc, &grid);
        let iters = 5;
        for want_grad in [false, true] {
            let start = std::time::Instant::now();
            for _ in 0..iters {
                assembler
                    .evaluate(
                        &sc,
                        &grid,
                        &EvalRequest {
                            net: &net,
                            controls: &controls,
                            weights: &weights,
                            mode: Parallelism::Rayon,
                            want_grad,
                            subset: None,
                        },
                    )
                    .unwrap();
            }
            println!(
                "{name} (grad={want_grad}): {:.1} ms / iteration",
                start.elapsed().as_secs_f64() * 1000.0 / iters as f64
            );
        }
    }
}

#[test]
#[ignore = "manual timing probe"]
fn timing_probe_modes() {
    let sc = benchmark_scenario();
    let grid = TrainingGrid::build(&sc, GridSpec::paper_full()).unwrap();
    let net = NetParams::new(vec![3, 10, 20, 30, 1], 0);
    let controls = test_controls(sc.horizon);
    let weights = LossWeights::default();
    let mut assembler = Assembler::new(&sc, &grid);
    for (name, mode) in [("seq", Parallelism::Sequential), ("rayon", Parallelism::Rayon)] {
        let start = std::time::Instant::now();
        for _ in 0..3 {
            assembler
                .evaluate(
                    &sc,
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
                .unwrap();
        }
        println!("paper-full {name}: {:.0} ms/iter", start.elapsed().as_secs_f64() * 1000.0 / 3.0);
    }
}
