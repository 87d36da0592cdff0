//! Batched evaluation kernel for the fully connected field approximator.
//!
//! A forward sweep carries, next to each activation value, the directional
//! derivatives of the requested input components (the input Jacobian
//! columns). The reverse sweep propagates cotangents for both the value
//! chain and the derivative chains, which yields exact parameter gradients
//! of scalars that depend on the network value *and* on its input
//! derivatives (the mixed second-order terms flow through the tangent
//! buffers).
//!
//! Layout: structure-of-arrays with the batch index innermost, padded to a
//! multiple of eight lanes. The per-layer loops are register-blocked
//! 8-lane micro-kernels, monomorphized over the tangent count.

use super::{Activation, NetParams};

const LANES: usize = 8;

/// Dot product with eight independent accumulator lanes; reductions with a
/// single accumulator serialize on the floating-point latency chain.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f64; LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for k in 0..LANES {
            lanes[k] = xa[k].mul_add(xb[k], lanes[k]);
        }
    }
    let mut sum: f64 = lanes.iter().sum();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        sum += x * y;
    }
    sum
}

/// Sum with independent accumulator lanes (see [`dot`]).
#[inline]
fn lane_sum(a: &[f64]) -> f64 {
    let mut lanes = [0.0f64; LANES];
    let mut ca = a.chunks_exact(LANES);
    for xa in &mut ca {
        for k in 0..LANES {
            lanes[k] += xa[k];
        }
    }
    lanes.iter().sum::<f64>() + ca.remainder().iter().sum::<f64>()
}

const LOG2E: f64 = std::f64::consts::LOG2_E;
// ln(2) split so that n·LN2_HI is exact for |n| up to 2^10 (Cody-Waite).
const LN2_HI: f64 = 6.931_471_803_691_238_164_9e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
// Round-to-nearest-even by adding and subtracting 1.5·2^52.
const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;
// Taylor coefficients 1/k! for e^r on |r| ≤ ln(2)/2, highest degree first.
const EXP_POLY: [f64; 13] = [
    1.605_904_383_682_161_3e-10,  // 1/13!
    2.087_675_698_786_809_9e-9,   // 1/12!
    2.505_210_838_544_172e-8,     // 1/11!
    2.755_731_922_398_589_1e-7,   // 1/10!
    2.755_731_922_398_589_4e-6,   // 1/9!
    2.480_158_730_158_730_2e-5,   // 1/8!
    1.984_126_984_126_984_1e-4,   // 1/7!
    1.388_888_888_888_888_9e-3,   // 1/6!
    8.333_333_333_333_333_3e-3,   // 1/5!
    4.166_666_666_666_666_4e-2,   // 1/4!
    1.666_666_666_666_666_6e-1,   // 1/3!
    5e-1,                         // 1/2!
    1.0,                          // 1/1!
];

/// Vectorizable e^x over fixed lanes: range reduction x = n·ln2 + r, a
/// Taylor polynomial on |r| ≤ ln(2)/2, and an exponent-bit scale by 2^n.
/// Inputs are clamped to ±700, which saturates the sigmoid cleanly and
/// keeps 2^n inside the normal range. Accurate to a few ulp.
#[inline]
pub(crate) fn exp_lanes(x: [f64; LANES]) -> [f64; LANES] {
    let mut n = [0.0f64; LANES];
    let mut r = [0.0f64; LANES];
    for k in 0..LANES {
        let xc = x[k].clamp(-700.0, 700.0);
        let nf = (xc * LOG2E + ROUND_MAGIC) - ROUND_MAGIC;
        n[k] = nf;
        r[k] = (xc - nf * LN2_HI) - nf * LN2_LO;
    }
    let mut p = [EXP_POLY[0]; LANES];
    for &c in &EXP_POLY[1..] {
        for k in 0..LANES {
            p[k] = p[k].mul_add(r[k], c);
        }
    }
    let mut out = [0.0f64; LANES];
    for k in 0..LANES {
        let er = p[k].mul_add(r[k], 1.0);
        let bits = ((n[k] as i64 + 1023) as u64) << 52;
        out[k] = er * f64::from_bits(bits);
    }
    out
}

/// σ(a) = 1/(1 + e^{-a}) per lane.
#[inline]
fn sigmoid_lanes(a: [f64; LANES]) -> [f64; LANES] {
    let mut neg = [0.0f64; LANES];
    for k in 0..LANES {
        neg[k] = -a[k];
    }
    let e = exp_lanes(neg);
    let mut out = [0.0f64; LANES];
    for k in 0..LANES {
        out[k] = 1.0 / (1.0 + e[k]);
    }
    out
}

/// Reusable buffers for one batch. Sized lazily for the largest batch seen.
#[derive(Default)]
pub struct Scratch {
    batch: usize,
    /// Batch rounded up to a whole number of lanes; all strides use it.
    batch_p: usize,
    n_tan: usize,
    /// Padded inputs, `dim_in * batch_p`.
    inputs: Vec<f64>,
    /// Post-activation values per layer, `n_l * batch_p`.
    z: Vec<Vec<f64>>,
    /// Pre-activation tangents per layer, `n_l * n_tan * batch_p`.
    jpre: Vec<Vec<f64>>,
    /// Post-activation tangents per layer.
    jpost: Vec<Vec<f64>>,
    zbar: Vec<Vec<f64>>,
    jbar: Vec<Vec<f64>>,
}

impl Scratch {
    pub fn new() -> Self {
        Self::default()
    }

    fn stage(&mut self, params: &NetParams, inputs: &[f64], batch: usize, n_tan: usize) {
        let batch_p = batch.div_ceil(LANES) * LANES;
        self.batch = batch;
        self.batch_p = batch_p;
        self.n_tan = n_tan;
        let dim_in = params.layer_sizes[0];
        self.inputs.clear();
        self.inputs.resize(dim_in * batch_p, 0.0);
        for i in 0..dim_in {
            self.inputs[i * batch_p..i * batch_p + batch]
                .copy_from_slice(&inputs[i * batch..(i + 1) * batch]);
        }
        let n_layers = params.layer_count();
        for store in [
            &mut self.z,
            &mut self.jpre,
            &mut self.jpost,
            &mut self.zbar,
            &mut self.jbar,
        ] {
            store.resize(n_layers, Vec::new());
        }
        for l in 0..n_layers {
            let n = params.layer_sizes[l + 1];
            self.z[l].resize(n * batch_p, 0.0);
            self.zbar[l].resize(n * batch_p, 0.0);
            self.jpre[l].resize(n * n_tan.max(1) * batch_p, 0.0);
            self.jpost[l].resize(n * n_tan.max(1) * batch_p, 0.0);
            self.jbar[l].resize(n * n_tan.max(1) * batch_p, 0.0);
        }
    }
}

/// One layer's forward sweep, register-blocked, monomorphized over the
/// tangent count.
#[allow(clippy::too_many_arguments)]
fn layer_forward<const NT: usize>(
    w: &[f64],
    bias: &[f64],
    n_in: usize,
    n_out: usize,
    first_layer: bool,
    tan_dirs: &[usize],
    activation: Activation,
    bp: usize,
    src_z: &[f64],
    jprev: &[f64],
    z_out: &mut [f64],
    jpre_out: &mut [f64],
    jpost_out: &mut [f64],
) {
    let nblk = bp / LANES;
    for i in 0..n_out {
        let wrow = &w[i * n_in..(i + 1) * n_in];
        for blk in 0..nblk {
            let off = blk * LANES;
            let mut acc_v = [bias[i]; LANES];
            let mut acc_t = [[0.0f64; LANES]; NT];
            if first_layer {
                // Input tangents are the identity: the pre-activation
                // tangent of direction c is the weight column, batch-wide.
                for c in 0..NT {
                    acc_t[c] = [wrow[tan_dirs[c]]; LANES];
                }
                for (j, &wij) in wrow.iter().enumerate() {
                    let s = &src_z[j * bp + off..j * bp + off + LANES];
                    for k in 0..LANES {
                        acc_v[k] = wij.mul_add(s[k], acc_v[k]);
                    }
                }
            } else {
                for (j, &wij) in wrow.iter().enumerate() {
                    let s = &src_z[j * bp + off..j * bp + off + LANES];
                    for k in 0..LANES {
                        acc_v[k] = wij.mul_add(s[k], acc_v[k]);
                    }
                    for c in 0..NT {
                        let js = &jprev[(j * NT + c) * bp + off..(j * NT + c) * bp + off + LANES];
                        for k in 0..LANES {
                            acc_t[c][k] = wij.mul_add(js[k], acc_t[c][k]);
                        }
                    }
                }
            }
            match activation {
                Activation::Sigmoid => {
                    let z = sigmoid_lanes(acc_v);
                    z_out[i * bp + off..i * bp + off + LANES].copy_from_slice(&z);
                    for c in 0..NT {
                        let base = (i * NT + c) * bp + off;
                        jpre_out[base..base + LANES].copy_from_slice(&acc_t[c]);
                        let mut jp = [0.0f64; LANES];
                        for k in 0..LANES {
                            jp[k] = z[k] * (1.0 - z[k]) * acc_t[c][k];
                        }
                        jpost_out[base..base + LANES].copy_from_slice(&jp);
                    }
                }
                Activation::Linear => {
                    z_out[i * bp + off..i * bp + off + LANES].copy_from_slice(&acc_v);
                    for c in 0..NT {
                        let base = (i * NT + c) * bp + off;
                        jpre_out[base..base + LANES].copy_from_slice(&acc_t[c]);
                        jpost_out[base..base + LANES].copy_from_slice(&acc_t[c]);
                    }
                }
            }
        }
    }
}

/// Forward sweep. `inputs` holds the batch coordinates SoA, tightly packed:
/// `inputs[i * batch + b]` is input component `i` of point `b`. Results
/// stay in the scratch; read them with [`output_values`] /
/// [`copy_output_tangents`].
pub fn forward_batch(
    params: &NetParams,
    inputs: &[f64],
    batch: usize,
    tan_dirs: &[usize],
    scratch: &mut Scratch,
) {
    let n_tan = tan_dirs.len();
    scratch.stage(params, inputs, batch, n_tan);
    let bp = scratch.batch_p;
    let n_layers = params.layer_count();

    for l in 0..n_layers {
        let n_in = params.layer_sizes[l];
        let n_out = params.layer_sizes[l + 1];
        let (w, bias) = params.layer(l);
        let (lower, rest) = scratch.z.split_at_mut(l);
        let src_z: &[f64] = if l == 0 { &scratch.inputs } else { &lower[l - 1] };
        let z_out = &mut rest[0];
        let (jlower, jrest) = scratch.jpost.split_at_mut(l);
        let jprev: &[f64] = if l == 0 { &[] } else { &jlower[l - 1] };
        let jpost_out = &mut jrest[0];
        let jpre_out = &mut scratch.jpre[l];
        let act = params.activations[l];
        match n_tan {
            0 => layer_forward::<0>(w, bias, n_in, n_out, l == 0, tan_dirs, act, bp, src_z, jprev, z_out, jpre_out, jpost_out),
            1 => layer_forward::<1>(w, bias, n_in, n_out, l == 0, tan_dirs, act, bp, src_z, jprev, z_out, jpre_out, jpost_out),
            2 => layer_forward::<2>(w, bias, n_in, n_out, l == 0, tan_dirs, act, bp, src_z, jprev, z_out, jpre_out, jpost_out),
            3 => layer_forward::<3>(w, bias, n_in, n_out, l == 0, tan_dirs, act, bp, src_z, jprev, z_out, jpre_out, jpost_out),
            _ => unreachable!("at most time plus two spatial tangents"),
        }
    }
}

/// Backward cotangent propagation to the layer below, register-blocked.
#[allow(clippy::too_many_arguments)]
fn layer_backward_propagate<const NT: usize>(
    w: &[f64],
    n_in: usize,
    n_out: usize,
    bp: usize,
    abar: &[f64],
    apre_bar: &[f64],
    zbar_prev: &mut [f64],
    jbar_prev: &mut [f64],
) {
    let nblk = bp / LANES;
    for j in 0..n_in {
        for blk in 0..nblk {
            let off = blk * LANES;
            let mut acc_v = [0.0f64; LANES];
            let mut acc_t = [[0.0f64; LANES]; NT];
            for i in 0..n_out {
                let wij = w[i * n_in + j];
                let s = &abar[i * bp + off..i * bp + off + LANES];
                for k in 0..LANES {
                    acc_v[k] = wij.mul_add(s[k], acc_v[k]);
                }
                for c in 0..NT {
                    let cs = &apre_bar[(i * NT + c) * bp + off..(i * NT + c) * bp + off + LANES];
                    for k in 0..LANES {
                        acc_t[c][k] = wij.mul_add(cs[k], acc_t[c][k]);
                    }
                }
            }
            zbar_prev[j * bp + off..j * bp + off + LANES].copy_from_slice(&acc_v);
            for c in 0..NT {
                let base = (j * NT + c) * bp + off;
                jbar_prev[base..base + LANES].copy_from_slice(&acc_t[c]);
            }
        }
    }
}

/// Reverse sweep over a batch already swept by [`forward_batch`] with the
/// same arguments. `cot_value[b]` weights the output value of point `b`;
/// `cot_tan[c * batch + b]` weights the tangent along `tan_dirs[c]`.
/// Parameter gradients are accumulated into `grad` (same layout as θ).
pub fn backward_batch(
    params: &NetParams,
    batch: usize,
    tan_dirs: &[usize],
    cot_value: &[f64],
    cot_tan: &[f64],
    scratch: &mut Scratch,
    grad: &mut [f64],
) {
    debug_assert_eq!(grad.len(), params.theta.len());
    debug_assert_eq!(batch, scratch.batch);
    let n_tan = tan_dirs.len();
    debug_assert_eq!(n_tan, scratch.n_tan);
    let bp = scratch.batch_p;
    let n_layers = params.layer_count();
    let last = n_layers - 1;

    // Seed the output cotangents; padding lanes stay zero so they cannot
    // contribute to any gradient.
    scratch.zbar[last][..bp].fill(0.0);
    scratch.zbar[last][..batch].copy_from_slice(cot_value);
    scratch.jbar[last][..n_tan * bp].fill(0.0);
    for c in 0..n_tan {
        scratch.jbar[last][c * bp..c * bp + batch]
            .copy_from_slice(&cot_tan[c * batch..(c + 1) * batch]);
    }

    for l in (0..n_layers).rev() {
        let n_in = params.layer_sizes[l];
        let n_out = params.layer_sizes[l + 1];
        let (w, _) = params.layer(l);
        let (gw, gb) = layer_grad_slices(params, l, grad);

        // Pull the cotangents through the activation in place: afterwards
        // zbar[l] holds ā (pre-activation value cotangent) and jbar[l]
        // holds Ā (pre-activation tangent cotangent).
        if let Activation::Sigmoid = params.activations[l] {
            let z = &scratch.z[l];
            let jpre = &scratch.jpre[l];
            let zbar = &mut scratch.zbar[l];
            let jbar = &mut scratch.jbar[l];
            for i in 0..n_out {
                for b in 0..bp {
                    let zv = z[i * bp + b];
                    let phi1 = zv * (1.0 - zv);
                    let phi2 = phi1 * (1.0 - 2.0 * zv);
                    let mut acc = zbar[i * bp + b] * phi1;
                    for c in 0..n_tan {
                        let off = (i * n_tan + c) * bp + b;
                        acc += jbar[off] * jpre[off] * phi2;
                        jbar[off] *= phi1;
                    }
                    zbar[i * bp + b] = acc;
                }
            }
        }

        // Parameter gradients.
        {
            let abar = &scratch.zbar[l];
            let apre_bar = &scratch.jbar[l];
            let src_z: &[f64] = if l == 0 { &scratch.inputs } else { &scratch.z[l - 1] };
            for i in 0..n_out {
                let abar_i = &abar[i * bp..(i + 1) * bp];
                for j in 0..n_in {
                    let src = &src_z[j * bp..(j + 1) * bp];
                    let mut acc = dot(abar_i, src);
                    if l > 0 {
                        let jprev = &scratch.jpost[l - 1];
                        for c in 0..n_tan {
                            let cot = &apre_bar[(i * n_tan + c) * bp..(i * n_tan + c + 1) * bp];
                            let jsrc = &jprev[(j * n_tan + c) * bp..(j * n_tan + c + 1) * bp];
                            acc += dot(cot, jsrc);
                        }
                    }
                    gw[i * n_in + j] += acc;
                }
                if l == 0 {
                    // Identity input tangents: the tangent cotangent lands
                    // directly on the weight column of its direction.
                    for (c, &dir) in tan_dirs.iter().enumerate() {
                        let cot = &apre_bar[(i * n_tan + c) * bp..(i * n_tan + c + 1) * bp];
                        gw[i * n_in + dir] += lane_sum(cot);
                    }
                }
                gb[i] += lane_sum(abar_i);
            }
        }

        // Propagate cotangents to the layer below.
        if l > 0 {
            let (zbar_lower, zbar_rest) = scratch.zbar.split_at_mut(l);
            let (jbar_lower, jbar_rest) = scratch.jbar.split_at_mut(l);
            let abar = &zbar_rest[0];
            let apre_bar = &jbar_rest[0];
            let zbar_prev = &mut zbar_lower[l - 1];
            let jbar_prev = &mut jbar_lower[l - 1];
            match n_tan {
                0 => layer_backward_propagate::<0>(w, n_in, n_out, bp, abar, apre_bar, zbar_prev, jbar_prev),
                1 => layer_backward_propagate::<1>(w, n_in, n_out, bp, abar, apre_bar, zbar_prev, jbar_prev),
                2 => layer_backward_propagate::<2>(w, n_in, n_out, bp, abar, apre_bar, zbar_prev, jbar_prev),
                3 => layer_backward_propagate::<3>(w, n_in, n_out, bp, abar, apre_bar, zbar_prev, jbar_prev),
                _ => unreachable!(),
            }
        }
    }
}

/// Output values of the last layer after a forward sweep.
pub fn output_values<'a>(params: &NetParams, scratch: &'a Scratch, batch: usize) -> &'a [f64] {
    debug_assert_eq!(*params.layer_sizes.last().unwrap(), 1);
    &scratch.z[params.layer_count() - 1][..batch]
}

/// Copy the output tangents of the last layer into a tightly packed buffer
/// `out[c * batch + b]`.
pub fn copy_output_tangents(
    params: &NetParams,
    scratch: &Scratch,
    n_tan: usize,
    batch: usize,
    out: &mut [f64],
) {
    let bp = scratch.batch_p;
    let jpost = &scratch.jpost[params.layer_count() - 1];
    for c in 0..n_tan {
        out[c * batch..(c + 1) * batch].copy_from_slice(&jpost[c * bp..c * bp + batch]);
    }
}

fn layer_grad_slices<'a>(
    params: &NetParams,
    l: usize,
    grad: &'a mut [f64],
) -> (&'a mut [f64], &'a mut [f64]) {
    let (w_off, b_off, end) = params.layer_span(l);
    let (gw, gb) = grad[w_off..end].split_at_mut(b_off - w_off);
    (gw, gb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[ignore = "manual timing probe"]
    fn micro_kernel_timing() {
        let net = crate::net::NetParams::new(vec![3, 10, 20, 30, 1], 0);
        let b = 64;
        let dirs = [1usize, 2];
        let mut scratch = Scratch::new();
        let inputs: Vec<f64> = (0..3 * b).map(|i| (i as f64 * 0.01).sin()).collect();
        let cot_val = vec![0.3; b];
        let cot_tan = vec![0.1; 2 * b];
        let mut grad = vec![0.0; net.param_len()];
        let reps = 20_000;
        let start = std::time::Instant::now();
        for _ in 0..reps {
            forward_batch(&net, &inputs, b, &dirs, &mut scratch);
        }
        let fwd = start.elapsed().as_secs_f64();
        let start = std::time::Instant::now();
        for _ in 0..reps {
            forward_batch(&net, &inputs, b, &dirs, &mut scratch);
            backward_batch(&net, b, &dirs, &cot_val, &cot_tan, &mut scratch, &mut grad);
        }
        let both = start.elapsed().as_secs_f64();
        println!(
            "forward: {:.1} ns/node, forward+backward: {:.1} ns/node",
            fwd * 1e9 / (reps * b) as f64,
            both * 1e9 / (reps * b) as f64
        );
    }

    #[test]
    fn lane_exponential_matches_libm() {
        let mut worst: f64 = 0.0;
        let mut x = -60.0;
        while x < 60.0 {
            let lanes = exp_lanes([x, -x, x * 0.5, x + 0.37, -0.001, 0.0, 1.0, x * 0.123]);
            let refs = [x, -x, x * 0.5, x + 0.37, -0.001, 0.0, 1.0, x * 0.123];
            for k in 0..8 {
                let exact = refs[k].exp();
                worst = worst.max((lanes[k] - exact).abs() / exact);
            }
            x += 0.137;
        }
        assert!(worst < 5e-16, "max rel err {worst:.3e}");
        // Saturation behavior.
        let sat = exp_lanes([-1000.0, 1000.0, -700.0, 700.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(sat[0] > 0.0 && sat[0] < 1e-300);
        assert!(sat[1].is_finite() && sat[1] > 1e300);
    }
}
