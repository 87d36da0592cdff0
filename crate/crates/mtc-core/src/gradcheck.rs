//! Finite-difference oracles for every analytic derivative in the crate.
//!
//! Each check compares an analytic gradient against central finite
//! differences on randomized configurations and reports the worst relative
//! error. The CLI exposes these as the `gradcheck` subcommand; the test
//! suites run them directly.

use crate::control::ControlParams;
use crate::error::Result;
use crate::exec::Parallelism;
use crate::grid::{GridSpec, TrainingGrid};
use crate::net::{EvalCotangent, NetParams};
use crate::scenario::{benchmark_scenario, ScenarioConfig};
use crate::trainer::{Assembler, EvalRequest, LossWeights, ParamLayout};
use crate::weakform::{residual_gradients, weak_residual, TestFunction};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub threshold: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.threshold
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checks: Vec<CheckResult>,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed())
    }
}

fn rel_scalar(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-8)
}

/// Fourth-order central difference d/dε f(ε) at ε = 0: two Richardson-
/// combined central stencils, which suppresses the h² truncation term that
/// plain central differences leave on sharply curved maps.
pub fn central_diff4(mut f: impl FnMut(f64) -> f64, h: f64) -> f64 {
    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
}

fn rel_vec(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let norm: f64 = b.iter().map(|y| y * y).sum();
    diff.sqrt() / norm.sqrt().max(1e-12)
}

/// Run the full oracle suite. `corrupt` injects a deliberate error into the
/// objective gradient as a negative control (the suite must then fail).
pub fn run(seed: u64, draws: usize, corrupt: bool) -> Result<GradCheckReport> {
    let mut checks = Vec::new();
    checks.push(net_input_derivatives(seed, draws));
    checks.push(net_value_gradient(seed, draws));
    checks.push(net_derivative_gradient(seed, draws));
    checks.push(xi_time_derivative(seed, draws));
    checks.push(xi_beta_gradient(seed, draws));
    checks.push(source_gradients(seed, draws));
    checks.push(collision_gradient(seed, draws));
    checks.push(residual_gradient_check(seed, draws.min(8))?);
    checks.push(objective_gradient_check(seed, corrupt)?);
    Ok(GradCheckReport { checks })
}

fn net_input_derivatives(seed: u64, draws: usize) -> CheckResult {
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for d in 0..draws as u64 {
        let net = NetParams::new(vec![3, 6, 5, 1], seed ^ d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(d).wrapping_mul(31));
        let t = rng.gen_range(0.0..1.0);
        let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let eval = net.forward_with_input_grad(t, &x);
        let fd_t = (net.forward(t + step, &x) - net.forward(t - step, &x)) / (2.0 * step);
        worst = worst.max(rel_scalar(eval.time_derivative, fd_t));
        for a in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[a] += step;
            xm[a] -= step;
            let fd = (net.forward(t, &xp) - net.forward(t, &xm)) / (2.0 * step);
            worst = worst.max(rel_scalar(eval.spatial_gradient[a], fd));
        }
    }
    CheckResult {
        name: "net input derivatives",
        max_rel_err: worst,
        threshold: 1e-6,
    }
}

fn net_value_gradient(seed: u64, draws: usize) -> CheckResult {
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for d in 0..draws as u64 {
        let net = NetParams::new(vec![3, 5, 4, 1], seed ^ (d + 1000));
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(d).wrapping_mul(37));
        let t = rng.gen_range(0.0..1.0);
        let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let f = net.forward(t, &x);
        let grad = net
            .backprop_scalar(
                &[(t, x)],
                &[EvalCotangent {
                    value: 2.0 * f,
                    ..Default::default()
                }],
            )
            .expect("matching batch");
        let mut fd = vec![0.0; grad.len()];
        for (i, slot) in fd.iter_mut().enumerate() {
            let mut p = net.clone();
            p.theta[i] += step;
            let fp = p.forward(t, &x).powi(2);
            p.theta[i] -= 2.0 * step;
            let fm = p.forward(t, &x).powi(2);
            *slot = (fp - fm) / (2.0 * step);
        }
        worst = worst.max(rel_vec(&grad, &fd));
    }
    CheckResult {
        name: "net parameter gradient of f^2",
        max_rel_err: worst,
        threshold: 1e-6,
    }
}

fn net_derivative_gradient(seed: u64, draws: usize) -> CheckResult {
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for d in 0..draws as u64 {
        let net = NetParams::new(vec![3, 5, 4, 1], seed ^ (d + 2000));
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(d).wrapping_mul(41));
        let t = rng.gen_range(0.0..1.0);
        let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let grad = net
            .backprop_scalar(
                &[(t, x)],
                &[EvalCotangent {
                    spatial_gradient: [1.0, 0.0],
                    ..Default::default()
                }],
            )
            .expect("matching batch");
        let mut fd = vec![0.0; grad.len()];
        for (i, slot) in fd.iter_mut().enumerate() {
            let mut p = net.clone();
            p.theta[i] += step;
            let fp = p.forward_with_input_grad(t, &x).spatial_gradient[0];
            p.theta[i] -= 2.0 * step;
            let fm = p.forward_with_input_grad(t, &x).spatial_gradient[0];
            *slot = (fp - fm) / (2.0 * step);
        }
        worst = worst.max(rel_vec(&grad, &fd));
    }
    CheckResult {
        name: "net parameter gradient of df/dx1",
        max_rel_err: worst,
        threshold: 1e-6,
    }
}

fn random_controls(rng: &mut ChaCha8Rng, horizon: f64) -> ControlParams {
    let mut c = ControlParams::benchmark(horizon);
    for a in c.alpha.iter_mut().flatten() {
        *a = rng.gen_range(-1.0..1.0);
    }
    for b in c.beta.iter_mut().flatten() {
        *b = rng.gen_range(-1.0..1.0);
    }
    c
}

fn xi_time_derivative(seed: u64, draws: usize) -> CheckResult {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(43));
    for _ in 0..draws {
        let c = random_controls(&mut rng, 1.0);
        let t = rng.gen_range(0.05..0.95);
        let h = 1e-6;
        for j in 0..2 {
            let fd = (c.xi(j, t + h) - c.xi(j, t - h)) / (2.0 * h);
            worst = worst.max(rel_scalar(c.xi_time_deriv(j, t), fd));
        }
    }
    CheckResult {
        name: "path parameter time derivative",
        max_rel_err: worst,
        threshold: 1e-7,
    }
}

fn xi_beta_gradient(seed: u64, draws: usize) -> CheckResult {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(47));
    for _ in 0..draws {
        let c = random_controls(&mut rng, 1.0);
        let t = rng.gen_range(0.0..1.0);
        let h = 1e-6;
        for j in 0..2 {
            let grad = c.xi_beta_grad(j, t);
            let mut fd = vec![0.0; grad.len()];
            for (k, slot) in fd.iter_mut().enumerate() {
                let mut cp = c.clone();
                cp.beta[j][k] += h;
                let fp = cp.xi(j, t);
                cp.beta[j][k] -= 2.0 * h;
                let fm = cp.xi(j, t);
                *slot = (fp - fm) / (2.0 * h);
            }
            worst = worst.max(rel_vec(&grad, &fd));
        }
    }
    CheckResult {
        name: "path parameter coefficient gradient",
        max_rel_err: worst,
        threshold: 1e-6,
    }
}

fn source_gradients(seed: u64, draws: usize) -> CheckResult {
    let sc = benchmark_scenario();
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(53));
    for _ in 0..draws {
        let c = random_controls(&mut rng, sc.horizon);
        let t = rng.gen_range(0.0..1.0);
        let anchor = sc.curve.eval(rng.gen_range(0.0..1.0));
        let x = [
            anchor[0] + rng.gen_range(-0.1..0.1),
            anchor[1] + rng.gen_range(-0.1..0.1),
        ];
        let (_, d_alpha, d_beta) = c.source_with_grads(&sc, t, &x);
        let h = 1e-5;
        for j in 0..2 {
            let mut fd_a = vec![0.0; d_alpha[j].len()];
            for (k, slot) in fd_a.iter_mut().enumerate() {
                *slot = central_diff4(
                    |d| {
                        let mut cp = c.clone();
                        cp.alpha[j][k] += d;
                        cp.source_field(&sc, t, &x)
                    },
                    h,
                );
            }
            worst = worst.max(rel_vec(&d_alpha[j], &fd_a));
            let mut fd_b = vec![0.0; d_beta[j].len()];
            for (k, slot) in fd_b.iter_mut().enumerate() {
                *slot = central_diff4(
                    |d| {
                        let mut cp = c.clone();
                        cp.beta[j][k] += d;
                        cp.source_field(&sc, t, &x)
                    },
                    h,
                );
            }
            if d_beta[j].iter().map(|g| g * g).sum::<f64>().sqrt() > 1e-9 {
                worst = worst.max(rel_vec(&d_beta[j], &fd_b));
            }
        }
    }
    CheckResult {
        name: "source field control gradients",
        max_rel_err: worst,
        threshold: 1e-6,
    }
}

fn collision_gradient(seed: u64, draws: usize) -> CheckResult {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(59));
    for _ in 0..draws {
        let mut c = ControlParams::zeros(3, 1, 3, 1.0);
        for b in c.beta.iter_mut().flatten() {
            *b = rng.gen_range(-0.3..0.3);
        }
        let t = rng.gen_range(0.0..1.0);
        let grads = c.collision_beta_grad(t);
        let flat: Vec<f64> = grads.iter().flatten().copied().collect();
        let mut fd = Vec::with_capacity(flat.len());
        for j in 0..3 {
            for k in 0..3 {
                fd.push(central_diff4(
                    |d| {
                        let mut cp = c.clone();
                        cp.beta[j][k] += d;
                        cp.collision_penalty(t)
                    },
                    1e-5,
                ));
            }
        }
        worst = worst.max(rel_vec(&flat, &fd));
    }
    CheckResult {
        name: "collision penalty gradient",
        max_rel_err: worst,
        threshold: 1e-6,
    }
}

fn residual_gradient_check(seed: u64, draws: usize) -> Result<CheckResult> {
    let sc = benchmark_scenario();
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(61));
    for d in 0..draws as u64 {
        let net = NetParams::new(vec![3, 4, 3, 1], seed ^ (d + 3000));
        let controls = random_controls(&mut rng, sc.horizon);
        // Anchor the support near the robot circle so the source-path
        // gradients are not exponentially small.
        let anchor = sc.curve.eval(rng.gen_range(0.0..1.0));
        let tf = TestFunction::new(
            2,
            rng.gen_range(0.2..0.8),
            [
                (anchor[0] + rng.gen_range(-0.05..0.05)).clamp(-0.85, 0.85),
                (anchor[1] + rng.gen_range(-0.05..0.05)).clamp(-0.85, 0.85),
            ],
            0.08,
            [0.1, 0.1],
        );
        let grads = residual_gradients(&net, &tf, &sc, &controls)?;
        let h = 1e-6;
        let mut fd_theta = vec![0.0; grads.theta.len()];
        for (i, slot) in fd_theta.iter_mut().enumerate() {
            let mut p = net.clone();
            p.theta[i] += h;
            let fp = weak_residual(&p, &tf, &sc, &controls);
            p.theta[i] -= 2.0 * h;
            let fm = weak_residual(&p, &tf, &sc, &controls);
            *slot = (fp - fm) / (2.0 * h);
        }
        worst = worst.max(rel_vec(&grads.theta, &fd_theta));
        let flat: Vec<f64> = grads
            .alpha
            .iter()
            .flatten()
            .chain(grads.beta.iter().flatten())
            .copied()
            .collect();
        let mut fd_ctrl = Vec::with_capacity(flat.len());
        for j in 0..2 {
            for k in 0..controls.alpha[j].len() {
                fd_ctrl.push(central_diff4(
                    |d| {
                        let mut c = controls.clone();
                        c.alpha[j][k] += d;
                        weak_residual(&net, &tf, &sc, &c)
                    },
                    1e-5,
                ));
            }
        }
        for j in 0..2 {
            for k in 0..controls.beta[j].len() {
                fd_ctrl.push(central_diff4(
                    |d| {
                        let mut c = controls.clone();
                        c.beta[j][k] += d;
                        weak_residual(&net, &tf, &sc, &c)
                    },
                    1e-5,
                ));
            }
        }
        if fd_ctrl.iter().map(|g| g * g).sum::<f64>().sqrt() > 1e-10 {
            worst = worst.max(rel_vec(&flat, &fd_ctrl));
        }
    }
    Ok(CheckResult {
        name: "weak residual gradients",
        max_rel_err: worst,
        threshold: 1e-5,
    })
}

/// A desk-size configuration: tiny network, 3×3×3 interior lattice.
pub fn tiny_setup(seed: u64) -> (ScenarioConfig, TrainingGrid, NetParams, ControlParams) {
    let sc = benchmark_scenario();
    let spec = GridSpec {
        interior_t: 3,
        interior_x: [3, 3],
        ic_x: [3, 3],
        bc_t: 3,
        bc_edge: 3,
        safe_t: 3,
        safe_x: [2, 2],
    };
    let grid = TrainingGrid::build(&sc, spec).expect("tiny grid");
    let net = NetParams::new(vec![3, 2, 2, 1], seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(67));
    let mut controls = ControlParams::new(
        vec![vec![0.0; 2]; 2],
        vec![vec![0.0; 2], {
            let mut b = vec![0.0; 2];
            b[0] = 3.0f64.ln();
            b
        }],
        sc.horizon,
    )
    .expect("tiny controls");
    for a in controls.alpha.iter_mut().flatten() {
        *a = rng.gen_range(-0.5..0.5);
    }
    for b in controls.beta.iter_mut().flatten().skip(1) {
        *b = rng.gen_range(-0.5..0.5);
    }
    (sc, grid, net, controls)
}

fn objective_gradient_check(seed: u64, corrupt: bool) -> Result<CheckResult> {
    let (sc, grid, net, controls) = tiny_setup(seed);
    let weights = LossWeights::default();
    let layout = ParamLayout::of(&net, &controls);
    let mut assembler = Assembler::new(&sc, &grid);
    let (_, grad) = assembler.evaluate(
        &sc,
        &grid,
        &EvalRequest {
            net: &net,
            controls: &controls,
            weights: &weights,
            mode: Parallelism::Sequential,
            want_grad: true,
            subset: None,
        },
    )?;
    let mut grad = grad.expect("gradient requested");
    if corrupt {
        grad[0] += 1e-3;
    }

    let packed = layout.pack(&net, &controls);
    let h = 1e-6;
    let mut fd = vec![0.0; packed.len()];
    for (i, slot) in fd.iter_mut().enumerate() {
        let mut eval_at = |delta: f64| -> Result<f64> {
            let mut p = packed.clone();
            p[i] += delta;
            let mut n = net.clone();
            let mut c = controls.clone();
            layout.unpack(&p, &mut n, &mut c);
            let (b, _) = assembler.evaluate(
                &sc,
                &grid,
                &EvalRequest {
                    net: &n,
                    controls: &c,
                    weights: &weights,
                    mode: Parallelism::Sequential,
                    want_grad: false,
                    subset: None,
                },
            )?;
            Ok(b.objective)
        };
        let fp = eval_at(h)?;
        let fm = eval_at(-h)?;
        *slot = (fp - fm) / (2.0 * h);
    }
    Ok(CheckResult {
        name: "full objective gradient",
        max_rel_err: rel_vec(&grad, &fd),
        threshold: 1e-5,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_across_seeds() {
        for seed in [1u64, 17, 202] {
            let report = run(seed, 6, false).unwrap();
            for check in &report.checks {
                assert!(
                    check.passed(),
                    "seed {seed}: {} rel err {:.3e} > {:.1e}",
                    check.name,
                    check.max_rel_err,
                    check.threshold
                );
            }
        }
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let report = run(7, 3, true).unwrap();
        assert!(!report.all_passed());
    }
}
