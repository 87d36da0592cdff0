//! Compactly supported space-time test functions, tensor-product
//! Gauss-Legendre quadrature, and the variational residual
//!
//! l(f, v) = ∫∫ [ ∇f · (κ∇v + u v) − f v̇ − s v ] dx dt
//!
//! evaluated over the support of v. The test functions are multilinear
//! hats, so the quadrature runs per octant of the support where the hat is
//! a polynomial of degree one per dimension and the 2-point rule is exact
//! for the hat factors.

use crate::control::ControlParams;
use crate::error::Result;
use crate::net::NetParams;
use crate::scenario::ScenarioConfig;

/// Positions of the 2-point Gauss nodes inside a cell, as fractions of the
/// cell width: (1 ∓ 1/√3)/2.
pub(crate) fn gauss2_fractions() -> [f64; 2] {
    let r = 1.0 / 3.0f64.sqrt();
    [(1.0 - r) / 2.0, (1.0 + r) / 2.0]
}

/// Gauss-Legendre nodes and unit-weight pairs on [-1, 1], computed by
/// Newton iteration on the Legendre polynomial.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n and P_n' by the recurrence.
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    nodes.reverse();
    weights.reverse();
    (nodes, weights)
}

/// Tensor-product piecewise-multilinear hat over a space-time box: value 1
/// at the center, 0 on and outside the support boundary.
#[derive(Debug, Clone, Copy)]
pub struct TestFunction {
    pub dim: usize,
    pub center_t: f64,
    pub center_x: [f64; 2],
    pub half_width_t: f64,
    pub half_width_x: [f64; 2],
}

impl TestFunction {
    pub fn new(dim: usize, center_t: f64, center_x: [f64; 2], half_width_t: f64, half_width_x: [f64; 2]) -> Self {
        TestFunction {
            dim,
            center_t,
            center_x,
            half_width_t,
            half_width_x,
        }
    }

    fn offsets(&self, t: f64, x: &[f64; 2]) -> Vec<(f64, f64)> {
        // (normalized offset u, half width) per dimension, time first.
        let mut out = Vec::with_capacity(self.dim + 1);
        out.push(((t - self.center_t) / self.half_width_t, self.half_width_t));
        for a in 0..self.dim {
            out.push(((x[a] - self.center_x[a]) / self.half_width_x[a], self.half_width_x[a]));
        }
        out
    }

    /// Value, time derivative, and spatial gradient of the hat. Outside the
    /// support everything is zero. Exactly on an octant interface the
    /// derivative along that axis uses the centered convention (zero), so
    /// the apex reports ∇v = 0.
    pub fn eval(&self, t: f64, x: &[f64; 2]) -> (f64, f64, [f64; 2]) {
        let offs = self.offsets(t, x);
        if offs.iter().any(|&(u, _)| u.abs() > 1.0) {
            return (0.0, 0.0, [0.0, 0.0]);
        }
        let factors: Vec<f64> = offs.iter().map(|&(u, _)| 1.0 - u.abs()).collect();
        let dfactors: Vec<f64> = offs
            .iter()
            .map(|&(u, h)| if u == 0.0 { 0.0 } else { -u.signum() / h })
            .collect();
        let v: f64 = factors.iter().product();
        let deriv = |axis: usize| -> f64 {
            let mut d = dfactors[axis];
            for (k, &f) in factors.iter().enumerate() {
                if k != axis {
                    d *= f;
                }
            }
            d
        };
        let vdot = deriv(0);
        let mut grad = [0.0; 2];
        for a in 0..self.dim {
            grad[a] = deriv(a + 1);
        }
        (v, vdot, grad)
    }

    /// Quadrature nodes `(t, x, weight)` covering the support: an `n`-point
    /// Gauss-Legendre rule per dimension on each octant.
    pub fn quad_nodes(&self, n: usize) -> Vec<(f64, [f64; 2], f64)> {
        let (ref_nodes, ref_weights) = gauss_legendre(n);
        let ndim = self.dim + 1;
        let centers = {
            let mut c = vec![self.center_t];
            c.extend_from_slice(&self.center_x[..self.dim]);
            c
        };
        let halves = {
            let mut h = vec![self.half_width_t];
            h.extend_from_slice(&self.half_width_x[..self.dim]);
            h
        };
        let mut out = Vec::with_capacity((2 * n).pow(ndim as u32));
        // Octant o per dimension: 0 = [c-h, c], 1 = [c, c+h].
        let n_oct = 1usize << ndim;
        for oct in 0..n_oct {
            let mut idx = vec![0usize; ndim];
            loop {
                let mut w = 1.0;
                let mut coords = [0.0f64; 3];
                for (a, coord) in coords.iter_mut().enumerate().take(ndim) {
                    let side = (oct >> a) & 1;
                    let lo = if side == 0 { centers[a] - halves[a] } else { centers[a] };
                    // Map the reference node from [-1, 1] onto the octant.
                    *coord = lo + (ref_nodes[idx[a]] + 1.0) * 0.5 * halves[a];
                    w *= ref_weights[idx[a]] * 0.5 * halves[a];
                }
                out.push((coords[0], [coords[1], coords[2]], w));
                // Advance the mixed-radix index.
                let mut a = 0;
                loop {
                    idx[a] += 1;
                    if idx[a] < n {
                        break;
                    }
                    idx[a] = 0;
                    a += 1;
                    if a == ndim {
                        break;
                    }
                }
                if a == ndim {
                    break;
                }
            }
        }
        out
    }

    /// Total quadrature mass Σ w = support volume.
    pub fn support_volume(&self) -> f64 {
        let mut vol = 2.0 * self.half_width_t;
        for a in 0..self.dim {
            vol *= 2.0 * self.half_width_x[a];
        }
        vol
    }
}

/// Anything that can play the role of the approximate solution in the
/// variational residual: a value and spatial gradient per point. The
/// network implements this; tests inject closed-form fields.
pub trait FieldEval: Sync {
    fn value_and_grad(&self, t: f64, x: &[f64; 2]) -> (f64, [f64; 2]);

    fn value(&self, t: f64, x: &[f64; 2]) -> f64 {
        self.value_and_grad(t, x).0
    }
}

impl FieldEval for NetParams {
    fn value_and_grad(&self, t: f64, x: &[f64; 2]) -> (f64, [f64; 2]) {
        let eval = self.forward_with_input_grad(t, x);
        (eval.value, eval.spatial_gradient)
    }
}

impl<F: Fn(f64, &[f64; 2]) -> (f64, [f64; 2]) + Sync> FieldEval for F {
    fn value_and_grad(&self, t: f64, x: &[f64; 2]) -> (f64, [f64; 2]) {
        self(t, x)
    }
}

/// Source term seen by the residual.
pub trait SourceEval: Sync {
    fn source(&self, t: f64, x: &[f64; 2]) -> f64;
}

/// The robots' Gaussian source field.
pub struct ControlSource<'a> {
    pub controls: &'a ControlParams,
    pub scenario: &'a ScenarioConfig,
}

impl SourceEval for ControlSource<'_> {
    fn source(&self, t: f64, x: &[f64; 2]) -> f64 {
        self.controls.source_field(self.scenario, t, x)
    }
}

impl<F: Fn(f64, &[f64; 2]) -> f64 + Sync> SourceEval for F {
    fn source(&self, t: f64, x: &[f64; 2]) -> f64 {
        self(t, x)
    }
}

/// Variational residual of one test function with an arbitrary field and
/// source, using an `n`-point rule per dimension per octant.
pub fn weak_residual_with(
    field: &dyn FieldEval,
    source: &dyn SourceEval,
    tf: &TestFunction,
    scenario: &ScenarioConfig,
    n: usize,
) -> f64 {
    let mut total = 0.0;
    for (t, x, w) in tf.quad_nodes(n) {
        let (v, vdot, grad_v) = tf.eval(t, &x);
        let (f, grad_f) = field.value_and_grad(t, &x);
        let kappa = scenario.eval_diffusivity(t, &x);
        let u = scenario.eval_velocity(t, &x);
        let s = source.source(t, &x);
        let mut integrand = -f * vdot - s * v;
        for a in 0..scenario.dim {
            integrand += grad_f[a] * (kappa * grad_v[a] + u[a] * v);
        }
        total += w * integrand;
    }
    total
}

/// Variational residual l(f, v) of the network field with the robots'
/// source, 2-point rule.
pub fn weak_residual(
    net: &NetParams,
    tf: &TestFunction,
    scenario: &ScenarioConfig,
    controls: &ControlParams,
) -> f64 {
    weak_residual_with(net, &ControlSource { controls, scenario }, tf, scenario, 2)
}

/// Gradients of the residual value with respect to θ, α and β.
pub struct ResidualGrads {
    pub value: f64,
    pub theta: Vec<f64>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

/// Exact gradients of [`weak_residual`]: the θ gradient flows through the
/// field value and its spatial gradient at every quadrature node; the α and
/// β gradients flow linearly through the source term −s·v.
pub fn residual_gradients(
    net: &NetParams,
    tf: &TestFunction,
    scenario: &ScenarioConfig,
    controls: &ControlParams,
) -> Result<ResidualGrads> {
    let nodes = tf.quad_nodes(2);
    let mut points = Vec::with_capacity(nodes.len());
    let mut cots = Vec::with_capacity(nodes.len());
    let mut value = 0.0;
    let mut alpha: Vec<Vec<f64>> = controls.alpha.iter().map(|a| vec![0.0; a.len()]).collect();
    let mut beta: Vec<Vec<f64>> = controls.beta.iter().map(|b| vec![0.0; b.len()]).collect();
    for (t, x, w) in nodes {
        let (v, vdot, grad_v) = tf.eval(t, &x);
        let kappa = scenario.eval_diffusivity(t, &x);
        let u = scenario.eval_velocity(t, &x);
        let (f, grad_f) = net.value_and_grad(t, &x);
        let (s, ds_alpha, ds_beta) = controls.source_with_grads(scenario, t, &x);

        let mut integrand = -f * vdot - s * v;
        for a in 0..scenario.dim {
            integrand += grad_f[a] * (kappa * grad_v[a] + u[a] * v);
        }
        value += w * integrand;

        let mut spatial = [0.0; 2];
        for a in 0..scenario.dim {
            spatial[a] = w * (kappa * grad_v[a] + u[a] * v);
        }
        points.push((t, x));
        cots.push(crate::net::EvalCotangent {
            value: -w * vdot,
            time_derivative: 0.0,
            spatial_gradient: spatial,
        });

        let sv = -w * v;
        for (acc, ds) in alpha.iter_mut().zip(&ds_alpha) {
            for (a, d) in acc.iter_mut().zip(ds) {
                *a += sv * d;
            }
        }
        for (acc, ds) in beta.iter_mut().zip(&ds_beta) {
            for (b, d) in acc.iter_mut().zip(ds) {
                *b += sv * d;
            }
        }
    }
    let theta = net.backprop_scalar(&points, &cots)?;
    Ok(ResidualGrads {
        value,
        theta,
        alpha,
        beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::benchmark_scenario;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_source(_t: f64, _x: &[f64; 2]) -> f64 {
        0.0
    }

    #[test]
    fn gauss_two_point_nodes() {
        let (nodes, weights) = gauss_legendre(2);
        let r = 1.0 / 3.0f64.sqrt();
        assert!((nodes[0] + r).abs() < 1e-15);
        assert!((nodes[1] - r).abs() < 1e-15);
        assert!((weights[0] - 1.0).abs() < 1e-15);
        assert!((weights[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hat_values_at_landmarks() {
        let tf = TestFunction::new(1, 0.5, [0.0, 0.0], 1.0, [1.0, 0.0]);
        // Apex: value one, centered-convention derivatives zero.
        let (v, vdot, grad) = tf.eval(0.5, &[0.0, 0.0]);
        assert_eq!(v, 1.0);
        assert_eq!(vdot, 0.0);
        assert_eq!(grad, [0.0, 0.0]);
        // Support corner.
        let (v, _, _) = tf.eval(1.5, &[1.0, 0.0]);
        assert_eq!(v, 0.0);
        // Midpoint of the positive-t axis from the apex, 1+1 dims.
        let (v, _, _) = tf.eval(1.0, &[0.0, 0.0]);
        assert_eq!(v, 0.5);
        // Outside the support everything is zero.
        let (v, vdot, grad) = tf.eval(3.0, &[0.0, 0.0]);
        assert_eq!((v, vdot, grad), (0.0, 0.0, [0.0, 0.0]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        /// 2-point tensor quadrature integrates per-dimension degree ≤ 3
        /// polynomials exactly over each octant.
        #[test]
        fn quadrature_exact_for_cubic_tensor_polynomials(
            ct in -1.0f64..1.0,
            cx in -1.0f64..1.0,
            cy in -1.0f64..1.0,
            ht in 0.05f64..0.8,
            hx in 0.05f64..0.8,
            hy in 0.05f64..0.8,
            pt in 0usize..4,
            px in 0usize..4,
            py in 0usize..4,
        ) {
            let tf = TestFunction::new(2, ct, [cx, cy], ht, [hx, hy]);
            let quad: f64 = tf
                .quad_nodes(2)
                .iter()
                .map(|&(t, x, w)| w * t.powi(pt as i32) * x[0].powi(px as i32) * x[1].powi(py as i32))
                .sum();
            // Analytic integral of the monomial over the whole support box.
            let mono = |c: f64, h: f64, p: usize| {
                ((c + h).powi(p as i32 + 1) - (c - h).powi(p as i32 + 1)) / (p as f64 + 1.0)
            };
            let exact = mono(ct, ht, pt) * mono(cx, hx, px) * mono(cy, hy, py);
            let scale = exact.abs().max(tf.support_volume());
            prop_assert!((quad - exact).abs() <= 1e-13 * scale);
        }

        /// The integrals of v̇ and ∂v/∂x over the support vanish.
        #[test]
        fn compact_support_integral_identities(
            ct in 0.0f64..1.0,
            ht in 0.05f64..0.5,
            hx in 0.05f64..0.5,
            hy in 0.05f64..0.5,
        ) {
            let tf = TestFunction::new(2, ct, [0.2, -0.3], ht, [hx, hy]);
            let mut int_vdot = 0.0;
            let mut int_grad = [0.0f64; 2];
            for (t, x, w) in tf.quad_nodes(2) {
                let (_, vdot, grad) = tf.eval(t, &x);
                int_vdot += w * vdot;
                int_grad[0] += w * grad[0];
                int_grad[1] += w * grad[1];
            }
            prop_assert!(int_vdot.abs() <= 1e-13);
            prop_assert!(int_grad[0].abs() <= 1e-13);
            prop_assert!(int_grad[1].abs() <= 1e-13);
        }
    }

    #[test]
    fn constant_field_no_source_gives_zero_residual() {
        let sc = {
            let mut sc = benchmark_scenario();
            sc.velocity = crate::scenario::VelocityField::Constant([0.7, -0.2]);
            sc
        };
        let field = |_t: f64, _x: &[f64; 2]| (3.25, [0.0, 0.0]);
        let tf = TestFunction::new(2, 0.5, [0.1, -0.2], 0.1, [0.15, 0.15]);
        let l = weak_residual_with(&field, &zero_source, &tf, &sc, 2);
        assert!(l.abs() <= 1e-12, "residual {l:.3e}");
    }

    /// Manufactured solution: c = e^{-t} sin(πx) sin(πy) with the source
    /// that satisfies the transport equation exactly. The residual is pure
    /// quadrature error.
    #[test]
    fn manufactured_solution_residual_is_quadrature_error() {
        let sc = benchmark_scenario();
        let pi = std::f64::consts::PI;
        let field = move |t: f64, x: &[f64; 2]| {
            let c = (-t).exp() * (pi * x[0]).sin() * (pi * x[1]).sin();
            let gx = (-t).exp() * pi * (pi * x[0]).cos() * (pi * x[1]).sin();
            let gy = (-t).exp() * pi * (pi * x[0]).sin() * (pi * x[1]).cos();
            (c, [gx, gy])
        };
        let sc2 = sc.clone();
        let source = move |t: f64, x: &[f64; 2]| {
            // s = ċ - κΔc + u·∇c for the manufactured field.
            let (c, g) = field(t, x);
            let u = sc2.eval_velocity(t, x);
            let lap = -2.0 * pi * pi * c;
            -c - lap + u[0] * g[0] + u[1] * g[1]
        };
        // Benchmark-scale supports at a few interior centers.
        let (ht, hx) = (1.0 / 51.0, 2.0 / 41.0);
        for &(ct, cx, cy) in &[(0.3, 0.25, -0.4), (0.62, -0.51, 0.33), (0.5, 0.0, 0.0)] {
            let tf = TestFunction::new(2, ct, [cx, cy], ht, [hx, hx]);
            let l2 = weak_residual_with(&field, &source, &tf, &sc, 2);
            let l16 = weak_residual_with(&field, &source, &tf, &sc, 16);
            assert!(l2.abs() <= 1e-8, "2-point residual {l2:.3e}");
            assert!(l16.abs() <= 1e-12, "dense-rule residual {l16:.3e}");
            assert!((l2 - l16).abs() <= 1e-8);
        }
    }

    #[test]
    fn residual_matches_brute_force_riemann_sum() {
        // Sharp Gaussian sources are not resolvable by the 2-point rule, so
        // this oracle pins the field terms with a smooth wide source; the
        // source path is covered by the linearity and manufactured-solution
        // tests.
        let sc = {
            let mut sc = benchmark_scenario();
            sc.source_length_scale = 0.25;
            sc
        };
        let net = NetParams::new(vec![3, 6, 5, 1], 31);
        let controls = {
            let mut c = ControlParams::benchmark(sc.horizon);
            c.alpha[0] = vec![0.4, -0.2, 0.0, 0.0, 0.0];
            c.alpha[1] = vec![-0.1, 0.3, 0.0, 0.0, 0.0];
            c
        };
        // Support near the curve so the source contributes.
        let tf = TestFunction::new(2, 0.5, [-0.4, -0.1], 0.05, [0.08, 0.08]);
        let l = weak_residual(&net, &tf, &sc, &controls);

        // Midpoint Riemann sums with even cell counts per dimension (cell
        // edges align with the octant interfaces, so every Riemann cell
        // sees a smooth integrand), Richardson-extrapolated to kill the h²
        // midpoint error.
        let src = ControlSource {
            controls: &controls,
            scenario: &sc,
        };
        let riemann = |n: usize| -> f64 {
            let (t0, x0, y0) = (
                tf.center_t - tf.half_width_t,
                tf.center_x[0] - tf.half_width_x[0],
                tf.center_x[1] - tf.half_width_x[1],
            );
            let (dt, dx, dy) = (
                2.0 * tf.half_width_t / n as f64,
                2.0 * tf.half_width_x[0] / n as f64,
                2.0 * tf.half_width_x[1] / n as f64,
            );
            let mut total = 0.0;
            for it in 0..n {
                let t = t0 + (it as f64 + 0.5) * dt;
                for ix in 0..n {
                    let x1 = x0 + (ix as f64 + 0.5) * dx;
                    for iy in 0..n {
                        let x = [x1, y0 + (iy as f64 + 0.5) * dy];
                        let (v, vdot, grad_v) = tf.eval(t, &x);
                        let (f, grad_f) = net.value_and_grad(t, &x);
                        let kappa = sc.eval_diffusivity(t, &x);
                        let u = sc.eval_velocity(t, &x);
                        let s = src.source(t, &x);
                        let mut integrand = -f * vdot - s * v;
                        for a in 0..2 {
                            integrand += grad_f[a] * (kappa * grad_v[a] + u[a] * v);
                        }
                        total += integrand * dt * dx * dy;
                    }
                }
            }
            total
        };
        let coarse = riemann(64);
        let fine = riemann(128);
        let extrapolated = fine + (fine - coarse) / 3.0;
        let rel = (l - extrapolated).abs() / extrapolated.abs().max(1e-12);
        assert!(
            rel <= 1e-4,
            "relative gap {rel:.3e} ({l:.6e} vs {extrapolated:.6e})"
        );
    }

    #[test]
    fn residual_gradients_match_finite_differences() {
        let sc = benchmark_scenario();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let net = NetParams::new(vec![3, 5, 4, 1], 7);
        let mut controls = ControlParams::benchmark(sc.horizon);
        for a in controls.alpha.iter_mut().flatten() {
            *a = rng.gen_range(-0.5..0.5);
        }
        for b in controls.beta.iter_mut().flatten() {
            *b = rng.gen_range(-0.5..0.5);
        }
        let tf = TestFunction::new(2, 0.5, [-0.45, 0.68], 0.08, [0.1, 0.1]);
        let grads = residual_gradients(&net, &tf, &sc, &controls).unwrap();
        assert!((grads.value - weak_residual(&net, &tf, &sc, &controls)).abs() < 1e-14);

        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..net.param_len() {
            let mut p = net.clone();
            p.theta[i] += h;
            let fp = weak_residual(&p, &tf, &sc, &controls);
            p.theta[i] -= 2.0 * h;
            let fm = weak_residual(&p, &tf, &sc, &controls);
            let fd = (fp - fm) / (2.0 * h);
            worst = worst.max((grads.theta[i] - fd).abs() / fd.abs().max(1e-7));
        }
        for j in 0..2 {
            for k in 0..controls.alpha[j].len() {
                let mut c = controls.clone();
                c.alpha[j][k] += h;
                let fp = weak_residual(&net, &tf, &sc, &c);
                c.alpha[j][k] -= 2.0 * h;
                let fm = weak_residual(&net, &tf, &sc, &c);
                let fd = (fp - fm) / (2.0 * h);
                worst = worst.max((grads.alpha[j][k] - fd).abs() / fd.abs().max(1e-7));
            }
            for k in 0..controls.beta[j].len() {
                let mut c = controls.clone();
                c.beta[j][k] += h;
                let fp = weak_residual(&net, &tf, &sc, &c);
                c.beta[j][k] -= 2.0 * h;
                let fm = weak_residual(&net, &tf, &sc, &c);
                let fd = (fp - fm) / (2.0 * h);
                worst = worst.max((grads.beta[j][k] - fd).abs() / fd.abs().max(1e-7));
            }
        }
        assert!(worst <= 1e-5, "max rel err {worst:.3e}");
    }

    #[test]
    fn source_gradient_obeys_gaussian_tail_bound() {
        let sc = benchmark_scenario();
        let net = NetParams::new(vec![3, 4, 1], 1);
        let mut controls = ControlParams::benchmark(sc.horizon);
        controls.alpha[0][0] = 1.0;
        controls.alpha[1][0] = -0.5;
        // Support centered far from the circle: every point of the support
        // is beyond 6 length scales from every robot position.
        let tf = TestFunction::new(2, 0.5, [0.85, -0.85], 0.05, [0.05, 0.05]);
        let ls = sc.source_length_scale;
        for (t, x, _) in tf.quad_nodes(2) {
            for j in 0..2 {
                let p = sc.curve.eval(controls.xi(j, t));
                let d = ((p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2)).sqrt();
                assert!(d > 6.0 * ls, "test geometry violated: d = {d}");
            }
        }
        let grads = residual_gradients(&net, &tf, &sc, &controls).unwrap();
        let norm: f64 = grads
            .alpha
            .iter()
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        let bound = (-18.0f64).exp() * tf.support_volume();
        assert!(norm <= bound, "‖dl/dα‖ = {norm:.3e} > bound {bound:.3e}");
    }

    #[test]
    fn residual_is_linear_in_release_rates() {
        let sc = benchmark_scenario();
        let net = NetParams::new(vec![3, 5, 1], 3);
        let mut controls = ControlParams::benchmark(sc.horizon);
        controls.alpha[0] = vec![0.7, -0.3, 0.1, 0.0, 0.0];
        controls.alpha[1] = vec![0.2, 0.4, 0.0, -0.2, 0.0];
        let mut doubled = controls.clone();
        for a in doubled.alpha.iter_mut().flatten() {
            *a *= 2.0;
        }
        let tf = TestFunction::new(2, 0.4, [-0.35, -0.12], 0.06, [0.09, 0.09]);
        let l1 = weak_residual(&net, &tf, &sc, &controls);
        let l2 = weak_residual(&net, &tf, &sc, &doubled);
        // l_{2α} - l_{α} = -∫ s_α v.
        let src = ControlSource {
            controls: &controls,
            scenario: &sc,
        };
        let mut s_term = 0.0;
        for (t, x, w) in tf.quad_nodes(2) {
            let (v, _, _) = tf.eval(t, &x);
            s_term += w * src.source(t, &x) * v;
        }
        assert!(
            ((l2 - l1) + s_term).abs() <= 1e-12,
            "linearity defect {:.3e}",
            (l2 - l1) + s_term
        );
    }
}
