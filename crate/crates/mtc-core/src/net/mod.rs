//! The concentration field approximator f(t, x; θ): a fully connected
//! feed-forward network with sigmoid hidden layers and a linear scalar
//! output, evaluated together with its first derivatives with respect to
//! the inputs, and differentiable with respect to θ for scalars that mix
//! values and input derivatives.

pub(crate) mod kernel;

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Linear,
}

impl Activation {
    fn tag(&self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Linear => "linear",
        }
    }

    fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "sigmoid" => Ok(Activation::Sigmoid),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::config(format!("unknown activation tag `{other}`"))),
        }
    }
}

/// Value and first input-derivatives of the field at one space-time point.
/// Also used as the cotangent bundle fed to [`NetParams::backprop_scalar`]:
/// each field then weights the corresponding evaluated quantity.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NetEval {
    pub value: f64,
    pub time_derivative: f64,
    pub spatial_gradient: [f64; 2],
}

pub type EvalCotangent = NetEval;

/// Trainable parameters θ with the layer layout.
///
/// θ stores, for each layer, the weight matrix row-major (`fan_out × fan_in`)
/// followed by the biases (`fan_out`).
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    /// Sizes including the input layer: `[d+1, hidden..., 1]`.
    pub layer_sizes: Vec<usize>,
    /// Activation per non-input layer.
    pub activations: Vec<Activation>,
    pub theta: Vec<f64>,
    /// Seed used for initialization; 0 when constructed from a raw vector.
    pub init_seed: u64,
}

/// Architecture presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchPreset {
    /// Two hidden layers, 10 and 20 neurons.
    Small,
    /// Three hidden layers, 10, 20 and 30 neurons.
    Full,
}

impl ArchPreset {
    pub fn layer_sizes(&self, spatial_dim: usize) -> Vec<usize> {
        match self {
            ArchPreset::Small => vec![spatial_dim + 1, 10, 20, 1],
            ArchPreset::Full => vec![spatial_dim + 1, 10, 20, 30, 1],
        }
    }
}

/// Total number of parameters for the given layer sizes.
pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes
        .windows(2)
        .map(|w| w[0] * w[1] + w[1])
        .sum()
}

impl NetParams {
    /// Fresh network with sigmoid hidden layers, linear output, and uniform
    /// initialization in ±sqrt(6 / (fan_in + fan_out)) per layer.
    pub fn new(layer_sizes: Vec<usize>, seed: u64) -> Self {
        assert!(layer_sizes.len() >= 2, "need at least input and output layer");
        assert_eq!(*layer_sizes.last().unwrap(), 1, "output must be scalar");
        let n_layers = layer_sizes.len() - 1;
        let mut activations = vec![Activation::Sigmoid; n_layers];
        activations[n_layers - 1] = Activation::Linear;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = Vec::with_capacity(param_count(&layer_sizes));
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out + fan_out {
                theta.push(rng.gen_range(-a..=a));
            }
        }
        NetParams {
            layer_sizes,
            activations,
            theta,
            init_seed: seed,
        }
    }

    /// Preset constructor; asserts the documented parameter counts for the
    /// 2-D architectures as a layout regression check.
    pub fn preset(preset: ArchPreset, spatial_dim: usize, seed: u64) -> Self {
        let sizes = preset.layer_sizes(spatial_dim);
        let net = Self::new(sizes, seed);
        if spatial_dim == 2 {
            let expect = match preset {
                ArchPreset::Small => 281,
                ArchPreset::Full => 921,
            };
            assert_eq!(net.theta.len(), expect, "preset parameter count drifted");
        }
        net
    }

    /// Wrap an existing parameter vector; validates length and finiteness.
    pub fn from_theta(
        layer_sizes: Vec<usize>,
        activations: Vec<Activation>,
        theta: Vec<f64>,
    ) -> Result<Self> {
        let expect = param_count(&layer_sizes);
        if theta.len() != expect {
            return Err(Error::Shape(format!(
                "theta has {} entries, layout requires {expect}",
                theta.len()
            )));
        }
        if activations.len() != layer_sizes.len() - 1 {
            return Err(Error::Shape("one activation tag per layer required".into()));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "network parameters".into(),
            });
        }
        Ok(NetParams {
            layer_sizes,
            activations,
            theta,
            init_seed: 0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn spatial_dim(&self) -> usize {
        self.layer_sizes[0] - 1
    }

    pub fn layer_count(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn param_len(&self) -> usize {
        self.theta.len()
    }

    /// (weight offset, bias offset, end offset) of layer `l` inside θ.
    pub(crate) fn layer_span(&self, l: usize) -> (usize, usize, usize) {
        let mut off = 0;
        for k in 0..l {
            off += self.layer_sizes[k] * self.layer_sizes[k + 1] + self.layer_sizes[k + 1];
        }
        let w_len = self.layer_sizes[l] * self.layer_sizes[l + 1];
        (off, off + w_len, off + w_len + self.layer_sizes[l + 1])
    }

    /// Weight and bias slices of layer `l`.
    pub(crate) fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (w_off, b_off, end) = self.layer_span(l);
        (&self.theta[w_off..b_off], &self.theta[b_off..end])
    }

    fn pack_input(&self, t: f64, x: &[f64; 2]) -> Vec<f64> {
        let mut input = vec![t];
        input.extend_from_slice(&x[..self.spatial_dim()]);
        input
    }

    /// Field value at (t, x).
    pub fn forward(&self, t: f64, x: &[f64; 2]) -> f64 {
        let mut scratch = kernel::Scratch::new();
        let input = self.pack_input(t, x);
        kernel::forward_batch(self, &input, 1, &[], &mut scratch);
        kernel::output_values(self, &scratch, 1)[0]
    }

    /// Field value together with ∂f/∂t and ∇_x f, computed analytically by
    /// the layerwise chain rule.
    pub fn forward_with_input_grad(&self, t: f64, x: &[f64; 2]) -> NetEval {
        let dim_in = self.input_dim();
        let dirs: Vec<usize> = (0..dim_in).collect();
        let mut scratch = kernel::Scratch::new();
        let input = self.pack_input(t, x);
        kernel::forward_batch(self, &input, 1, &dirs, &mut scratch);
        let mut tan = vec![0.0; dim_in];
        kernel::copy_output_tangents(self, &scratch, dim_in, 1, &mut tan);
        let mut spatial = [0.0; 2];
        spatial[..dim_in - 1].copy_from_slice(&tan[1..dim_in]);
        NetEval {
            value: kernel::output_values(self, &scratch, 1)[0],
            time_derivative: tan[0],
            spatial_gradient: spatial,
        }
    }

    /// Exact gradient dL/dθ of a scalar L declared through its cotangents:
    /// at each point `k`, `cotangents[k]` holds ∂L/∂f, ∂L/∂(∂f/∂t) and
    /// ∂L/∂(∇_x f). Mixed second-order terms ∂²f/(∂θ∂x) are included.
    pub fn backprop_scalar(
        &self,
        points: &[(f64, [f64; 2])],
        cotangents: &[EvalCotangent],
    ) -> Result<Vec<f64>> {
        if points.len() != cotangents.len() {
            return Err(Error::Shape(format!(
                "{} points vs {} cotangents",
                points.len(),
                cotangents.len()
            )));
        }
        let dim_in = self.input_dim();
        let dirs: Vec<usize> = (0..dim_in).collect();
        let mut grad = vec![0.0; self.theta.len()];
        let mut scratch = kernel::Scratch::new();
        let batch_cap = crate::exec::CHUNK;
        let mut inputs = vec![0.0; dim_in * batch_cap];
        let mut cot_val = vec![0.0; batch_cap];
        let mut cot_tan = vec![0.0; dim_in * batch_cap];
        for (pts, cots) in points.chunks(batch_cap).zip(cotangents.chunks(batch_cap)) {
            let b = pts.len();
            for (k, &(t, x)) in pts.iter().enumerate() {
                inputs[k] = t;
                for a in 0..dim_in - 1 {
                    inputs[(a + 1) * b + k] = x[a];
                }
            }
            for (k, c) in cots.iter().enumerate() {
                cot_val[k] = c.value;
                cot_tan[k] = c.time_derivative;
                for a in 0..dim_in - 1 {
                    cot_tan[(a + 1) * b + k] = c.spatial_gradient[a];
                }
            }
            kernel::forward_batch(self, &inputs[..dim_in * b], b, &dirs, &mut scratch);
            kernel::backward_batch(
                self,
                b,
                &dirs,
                &cot_val[..b],
                &cot_tan[..dim_in * b],
                &mut scratch,
                &mut grad,
            );
        }
        Ok(grad)
    }

    /// Write the parameter vector with a header recording the layout.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        text.push_str("# mtc net checkpoint v1\n");
        text.push_str(&format!(
            "# layer_sizes: {}\n",
            self.layer_sizes
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ));
        text.push_str(&format!(
            "# activations: {}\n",
            self.activations
                .iter()
                .map(|a| a.tag())
                .collect::<Vec<_>>()
                .join(",")
        ));
        text.push_str(&format!("# seed: {}\n", self.init_seed));
        text.push_str("theta\n");
        for v in &self.theta {
            text.push_str(&format!("{v:?}\n"));
        }
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut layer_sizes: Option<Vec<usize>> = None;
        let mut activations: Option<Vec<Activation>> = None;
        let mut seed = 0u64;
        let mut theta = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line == "theta" {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(v) = rest.strip_prefix("layer_sizes:") {
                    layer_sizes = Some(
                        v.trim()
                            .split(',')
                            .map(|s| {
                                s.trim().parse::<usize>().map_err(|e| {
                                    Error::parse(path.display().to_string(), e.to_string())
                                })
                            })
                            .collect::<Result<_>>()?,
                    );
                } else if let Some(v) = rest.strip_prefix("activations:") {
                    activations = Some(
                        v.trim()
                            .split(',')
                            .map(|s| Activation::from_tag(s.trim()))
                            .collect::<Result<_>>()?,
                    );
                } else if let Some(v) = rest.strip_prefix("seed:") {
                    seed = v.trim().parse().unwrap_or(0);
                }
                continue;
            }
            theta.push(
                line.parse::<f64>()
                    .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?,
            );
        }
        let layer_sizes = layer_sizes
            .ok_or_else(|| Error::parse(path.display().to_string(), "missing layer_sizes header"))?;
        let activations = activations
            .ok_or_else(|| Error::parse(path.display().to_string(), "missing activations header"))?;
        let mut net = Self::from_theta(layer_sizes, activations, theta)?;
        net.init_seed = seed;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-12)
    }

    #[test]
    fn preset_parameter_counts() {
        assert_eq!(NetParams::preset(ArchPreset::Full, 2, 0).param_len(), 921);
        assert_eq!(NetParams::preset(ArchPreset::Small, 2, 0).param_len(), 281);
    }

    #[test]
    fn zero_parameters_give_zero_everything() {
        let mut net = NetParams::new(vec![3, 4, 1], 0);
        net.theta.iter_mut().for_each(|v| *v = 0.0);
        let eval = net.forward_with_input_grad(0.3, &[0.1, -0.2]);
        assert_eq!(eval.value, 0.0);
        assert_eq!(eval.time_derivative, 0.0);
        assert_eq!(eval.spatial_gradient, [0.0, 0.0]);
    }

    #[test]
    fn single_hidden_neuron_closed_form() {
        // f = w2 * sigmoid(w1·[t,x] + b1) + b2 for d = 1.
        let w1 = [0.7, -1.3];
        let (b1, w2, b2) = (0.2, 1.9, -0.4);
        let net = NetParams::from_theta(
            vec![2, 1, 1],
            vec![Activation::Sigmoid, Activation::Linear],
            vec![w1[0], w1[1], b1, w2, b2],
        )
        .unwrap();
        let (t, x) = (0.4, -0.6);
        let pre = w1[0] * t + w1[1] * x + b1;
        let expect = w2 * sigmoid(pre) + b2;
        assert!((net.forward(t, &[x, 0.0]) - expect).abs() < 1e-15);
        // Analytic derivative of the composition.
        let eval = net.forward_with_input_grad(t, &[x, 0.0]);
        let s = sigmoid(pre);
        assert!((eval.time_derivative - w2 * s * (1.0 - s) * w1[0]).abs() < 1e-15);
        assert!((eval.spatial_gradient[0] - w2 * s * (1.0 - s) * w1[1]).abs() < 1e-15);
    }

    #[test]
    fn pure_linear_layer_gradient_is_weight_row() {
        let net = NetParams::from_theta(
            vec![3, 1],
            vec![Activation::Linear],
            vec![1.5, -2.0, 0.25, 0.1],
        )
        .unwrap();
        let eval = net.forward_with_input_grad(0.3, &[0.7, -0.1]);
        assert_eq!(eval.time_derivative, 1.5);
        assert_eq!(eval.spatial_gradient, [-2.0, 0.25]);
        assert!((eval.value - (1.5 * 0.3 - 2.0 * 0.7 + 0.25 * -0.1 + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn input_derivatives_match_finite_differences() {
        let step = 1e-5;
        for draw in 0..100 {
            let net = NetParams::new(vec![3, 6, 5, 1], draw);
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + draw);
            let t = rng.gen_range(0.0..1.0);
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let eval = net.forward_with_input_grad(t, &x);
            let fd_t = (net.forward(t + step, &x) - net.forward(t - step, &x)) / (2.0 * step);
            assert!(rel_err(eval.time_derivative, fd_t) < 1e-6, "draw {draw}");
            for a in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[a] += step;
                xm[a] -= step;
                let fd = (net.forward(t, &xp) - net.forward(t, &xm)) / (2.0 * step);
                assert!(rel_err(eval.spatial_gradient[a], fd) < 1e-6, "draw {draw} axis {a}");
            }
        }
    }

    #[test]
    fn backprop_zero_cotangents_zero_gradient() {
        let net = NetParams::new(vec![3, 5, 1], 3);
        let g = net
            .backprop_scalar(&[(0.2, [0.3, 0.4])], &[EvalCotangent::default()])
            .unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backprop_value_square_matches_finite_differences() {
        // L = f(t0, x0)^2  =>  cotangent 2 f on the value slot.
        let net = NetParams::new(vec![3, 6, 4, 1], 11);
        let (t, x) = (0.37, [0.21, -0.55]);
        let f = net.forward(t, &x);
        let grad = net
            .backprop_scalar(
                &[(t, x)],
                &[EvalCotangent {
                    value: 2.0 * f,
                    ..Default::default()
                }],
            )
            .unwrap();
        let step = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..net.param_len() {
            let mut p = net.clone();
            p.theta[i] += step;
            let fp = p.forward(t, &x).powi(2);
            p.theta[i] -= 2.0 * step;
            let fm = p.forward(t, &x).powi(2);
            let fd = (fp - fm) / (2.0 * step);
            worst = worst.max((grad[i] - fd).abs() / fd.abs().max(1e-8));
        }
        assert!(worst < 1e-6, "max rel err {worst:.3e}");
    }

    #[test]
    fn backprop_spatial_derivative_matches_finite_differences() {
        // L = (∂f/∂x1)(t0, x0)  =>  unit cotangent on the x1 tangent slot.
        let net = NetParams::new(vec![3, 6, 4, 1], 12);
        let (t, x) = (0.61, [-0.13, 0.35]);
        let grad = net
            .backprop_scalar(
                &[(t, x)],
                &[EvalCotangent {
                    spatial_gradient: [1.0, 0.0],
                    ..Default::default()
                }],
            )
            .unwrap();
        let step = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..net.param_len() {
            let mut p = net.clone();
            p.theta[i] += step;
            let fp = p.forward_with_input_grad(t, &x).spatial_gradient[0];
            p.theta[i] -= 2.0 * step;
            let fm = p.forward_with_input_grad(t, &x).spatial_gradient[0];
            let fd = (fp - fm) / (2.0 * step);
            worst = worst.max((grad[i] - fd).abs() / fd.abs().max(1e-8));
        }
        assert!(worst < 1e-6, "max rel err {worst:.3e}");
    }

    #[test]
    fn batched_and_single_point_evaluations_agree_bitwise() {
        let net = NetParams::new(vec![3, 7, 5, 1], 21);
        let dirs = [0usize, 1, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<(f64, [f64; 2])> = (0..301)
            .map(|_| {
                (
                    rng.gen_range(0.0..1.0),
                    [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                )
            })
            .collect();
        let b = pts.len();
        let mut inputs = vec![0.0; 3 * b];
        for (k, &(t, x)) in pts.iter().enumerate() {
            inputs[k] = t;
            inputs[b + k] = x[0];
            inputs[2 * b + k] = x[1];
        }
        let mut scratch = kernel::Scratch::new();
        kernel::forward_batch(&net, &inputs, b, &dirs, &mut scratch);
        let vals = kernel::output_values(&net, &scratch, b).to_vec();
        let mut tans = vec![0.0; 3 * b];
        kernel::copy_output_tangents(&net, &scratch, 3, b, &mut tans);
        for (k, &(t, x)) in pts.iter().enumerate() {
            let single = net.forward_with_input_grad(t, &x);
            assert_eq!(single.value.to_bits(), vals[k].to_bits());
            assert_eq!(single.time_derivative.to_bits(), tans[k].to_bits());
            assert_eq!(single.spatial_gradient[0].to_bits(), tans[b + k].to_bits());
            assert_eq!(single.spatial_gradient[1].to_bits(), tans[2 * b + k].to_bits());
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let net = NetParams::new(vec![3, 4, 1], 0);
        assert!(net.backprop_scalar(&[(0.0, [0.0, 0.0])], &[]).is_err());
    }

    #[test]
    fn non_finite_parameters_rejected() {
        let err = NetParams::from_theta(
            vec![2, 1],
            vec![Activation::Linear],
            vec![f64::NAN, 0.0, 0.0],
        );
        assert!(err.is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.csv");
        let net = NetParams::preset(ArchPreset::Small, 2, 99);
        net.save_checkpoint(&path).unwrap();
        let loaded = NetParams::load_checkpoint(&path).unwrap();
        assert_eq!(net.layer_sizes, loaded.layer_sizes);
        assert_eq!(net.activations, loaded.activations);
        assert_eq!(net.init_seed, loaded.init_seed);
        assert_eq!(net.theta.len(), loaded.theta.len());
        for (a, b) in net.theta.iter().zip(loaded.theta.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
