//! Joint training of the field approximator and the robot controls: the
//! penalty loss over the training grid, the planning objective, and a
//! first-order moment-based optimizer with bias correction.

mod assemble;

pub use assemble::{Assembler, EvalRequest, ParamLayout};

use crate::control::ControlParams;
use crate::error::{Error, Result};
use crate::exec::Parallelism;
use crate::grid::TrainingGrid;
use crate::net::NetParams;
use crate::scenario::ScenarioConfig;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Penalty weights of the loss and objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// (variational, initial-condition, boundary) weights.
    pub w: [f64; 3],
    /// Weight of the collision penalty in the objective.
    pub collision_weight: f64,
    /// Asymmetric safe-zone penalty (above, below); `None` is plain squared
    /// error, and `Some([1, 1])` recovers it exactly.
    pub asymmetry: Option<[f64; 2]>,
    /// Divide the variational sum by n_v. Off by default: the loss uses the
    /// raw sum over test functions.
    pub normalize_variational: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w: [1.0, 1.0, 10.0],
            collision_weight: 1e-2,
            asymmetry: None,
            normalize_variational: false,
        }
    }
}

/// All loss/objective terms of one evaluation. The `*_avg` fields are
/// unweighted per-training-point averages used for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub n_v: usize,
    pub n_ic: usize,
    pub n_bc: usize,
    pub n_safe: usize,
    /// Σ_k l(f, v_k)² (raw, unnormalized).
    pub variational_sq_sum: f64,
    pub variational_avg: f64,
    pub ic_avg: f64,
    pub bc_avg: f64,
    pub safe_avg: f64,
    pub collision_mean: f64,
    /// ℓ = w1·var + (w2/n0)·Σ + (w3/n̄b)·Σ.
    pub loss: f64,
    /// J = safe + ℓ + w_c·mean_t J_c.
    pub objective: f64,
}

impl Breakdown {
    pub(crate) fn check_finite(&self) -> Result<()> {
        for (name, value) in [
            ("variational term", self.variational_sq_sum),
            ("initial-condition term", self.ic_avg),
            ("boundary term", self.bc_avg),
            ("safe-zone term", self.safe_avg),
            ("collision term", self.collision_mean),
        ] {
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    context: name.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Loss ℓ (Breakdown::loss is the headline value).
pub fn assemble_loss(
    net: &NetParams,
    controls: &ControlParams,
    scenario: &ScenarioConfig,
    grid: &TrainingGrid,
    weights: &LossWeights,
) -> Result<Breakdown> {
    let mut assembler = Assembler::new(scenario, grid);
    let (breakdown, _) = assembler.evaluate(
        scenario,
        grid,
        &EvalRequest {
            net,
            controls,
            weights,
            mode: Parallelism::default(),
            want_grad: false,
            subset: None,
        },
    )?;
    Ok(breakdown)
}

/// Planning objective J (Breakdown::objective is the headline value).
pub fn assemble_objective(
    net: &NetParams,
    controls: &ControlParams,
    scenario: &ScenarioConfig,
    grid: &TrainingGrid,
    weights: &LossWeights,
) -> Result<Breakdown> {
    assemble_loss(net, controls, scenario, grid, weights)
}

/// First-order optimizer settings (moment-based step rule with
/// bias-corrected first and second moments).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    /// Stop when the best objective has not improved by `plateau_rel_tol`
    /// (relative) for this many iterations.
    pub plateau_window: usize,
    pub plateau_rel_tol: f64,
    /// Abort when ℓ stays above `divergence_factor`× its initial value for
    /// `divergence_patience` consecutive iterations.
    pub divergence_factor: f64,
    pub divergence_patience: usize,
    pub log_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            step_size: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_iters: 50_000,
            plateau_window: 2000,
            plateau_rel_tol: 1e-6,
            divergence_factor: 10.0,
            divergence_patience: 500,
            log_every: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub weights: LossWeights,
    pub seed: u64,
    pub parallelism: Parallelism,
    /// Test functions per iteration; `None` trains full batch.
    pub minibatch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerConfig::default(),
            weights: LossWeights::default(),
            seed: 0,
            parallelism: Parallelism::default(),
            minibatch: None,
        }
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub loss_var: f64,
    pub loss_ic: f64,
    pub loss_bc: f64,
    pub obj_safe: f64,
    pub obj_collision: f64,
    pub total: f64,
}

impl HistoryRow {
    fn from_breakdown(iteration: usize, b: &Breakdown) -> Self {
        HistoryRow {
            iteration,
            loss_var: b.variational_avg,
            loss_ic: b.ic_avg,
            loss_bc: b.bc_avg,
            obj_safe: b.safe_avg,
            obj_collision: b.collision_mean,
            total: b.objective,
        }
    }
}

/// Everything needed to reproduce a run, plus its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub layer_sizes: Vec<usize>,
    pub parameter_count: usize,
    pub robot_count: usize,
    pub grid: GridCounts,
    pub weights: LossWeights,
    pub optimizer: OptimizerConfig,
    pub minibatch: Option<usize>,
    pub iterations_run: usize,
    pub stop_reason: String,
    pub final_terms: FinalTerms,
    pub timing: Timing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCounts {
    pub n_v: usize,
    pub n_ic: usize,
    pub n_bc: usize,
    pub n_safe: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalTerms {
    pub variational_avg: f64,
    pub ic_avg: f64,
    pub bc_avg: f64,
    pub safe_avg: f64,
    pub collision_mean: f64,
    pub loss: f64,
    pub objective: f64,
}

impl From<&Breakdown> for FinalTerms {
    fn from(b: &Breakdown) -> Self {
        FinalTerms {
            variational_avg: b.variational_avg,
            ic_avg: b.ic_avg,
            bc_avg: b.bc_avg,
            safe_avg: b.safe_avg,
            collision_mean: b.collision_mean,
            loss: b.loss,
            objective: b.objective,
        }
    }
}

/// Wall-clock section; excluded from reproducibility comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
    }

    /// Equality up to timing, for reproducibility checks.
    pub fn same_run(&self, other: &Self) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.timing = Timing {
            wall_clock_seconds: 0.0,
        };
        b.timing = a.timing;
        a == b
    }
}

pub struct TrainOutcome {
    pub net: NetParams,
    pub controls: ControlParams,
    pub manifest: RunManifest,
    pub history: Vec<HistoryRow>,
    pub final_breakdown: Breakdown,
}

/// Run the joint optimization of (θ, α, β_free) on the given grid.
pub fn train(
    scenario: &ScenarioConfig,
    grid: &TrainingGrid,
    net_init: NetParams,
    controls_init: ControlParams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let start = std::time::Instant::now();
    let opt = &cfg.optimizer;
    let mut net = net_init;
    let mut controls = controls_init;
    let layout = ParamLayout::of(&net, &controls);
    let mut assembler = Assembler::new(scenario, grid);
    let mut params = layout.pack(&net, &controls);

    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut history = Vec::new();
    let mut initial_loss = f64::INFINITY;
    let mut best_objective = f64::INFINITY;
    let mut plateau_streak = 0usize;
    let mut divergence_streak = 0usize;
    let mut iterations_run = 0usize;
    let mut stop_reason = "budget".to_string();
    let mut minibatch_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6d69_6e69);

    for iter in 0..opt.max_iters {
        let subset: Option<Vec<usize>> = cfg.minibatch.map(|m_size| {
            rand::seq::index::sample(&mut minibatch_rng, grid.n_interior(), m_size.min(grid.n_interior()))
                .into_vec()
        });
        let (breakdown, grad) = assembler.evaluate(
            scenario,
            grid,
            &EvalRequest {
                net: &net,
                controls: &controls,
                weights: &cfg.weights,
                mode: cfg.parallelism,
                want_grad: true,
                subset: subset.as_deref(),
            },
        )?;
        let grad = grad.expect("gradient requested");

        if iter == 0 {
            initial_loss = breakdown.loss;
        }
        if breakdown.loss > opt.divergence_factor * initial_loss {
            divergence_streak += 1;
            if divergence_streak >= opt.divergence_patience {
                return Err(Error::Diverged {
                    factor: opt.divergence_factor,
                    patience: opt.divergence_patience,
                    iteration: iter,
                });
            }
        } else {
            divergence_streak = 0;
        }

        if iter % opt.log_every == 0 {
            history.push(HistoryRow::from_breakdown(iter, &breakdown));
        }

        // Plateau detection on the total objective.
        if best_objective - breakdown.objective > opt.plateau_rel_tol * best_objective.abs().max(1e-300)
        {
            best_objective = breakdown.objective;
            plateau_streak = 0;
        } else {
            plateau_streak += 1;
            if plateau_streak >= opt.plateau_window {
                stop_reason = "plateau".to_string();
                iterations_run = iter;
                break;
            }
        }

        // Bias-corrected moment step.
        let t = (iter + 1) as f64;
        let lr_t = opt.step_size * (1.0 - opt.beta2.powf(t)).sqrt() / (1.0 - opt.beta1.powf(t));
        for i in 0..params.len() {
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * grad[i];
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * grad[i] * grad[i];
            params[i] -= lr_t * m[i] / (v[i].sqrt() + opt.epsilon);
        }
        layout.unpack(&params, &mut net, &mut controls);
        iterations_run = iter + 1;
    }

    // Final state of the terms after the last step.
    let (final_breakdown, _) = assembler.evaluate(
        scenario,
        grid,
        &EvalRequest {
            net: &net,
            controls: &controls,
            weights: &cfg.weights,
            mode: cfg.parallelism,
            want_grad: false,
            subset: None,
        },
    )?;
    history.push(HistoryRow::from_breakdown(iterations_run, &final_breakdown));

    let manifest = RunManifest {
        seed: cfg.seed,
        layer_sizes: net.layer_sizes.clone(),
        parameter_count: net.param_len(),
        robot_count: controls.robot_count(),
        grid: GridCounts {
            n_v: grid.n_interior(),
            n_ic: grid.n_ic(),
            n_bc: grid.n_bc(),
            n_safe: grid.n_safe(),
        },
        weights: cfg.weights,
        optimizer: *opt,
        minibatch: cfg.minibatch,
        iterations_run,
        stop_reason,
        final_terms: FinalTerms::from(&final_breakdown),
        timing: Timing {
            wall_clock_seconds: start.elapsed().as_secs_f64(),
        },
    };

    Ok(TrainOutcome {
        net,
        controls,
        manifest,
        history,
        final_breakdown,
    })
}

/// Dense field values on a time × space lattice, row-major over
/// (time, x1, x2).
pub fn eval_field_grid(net: &NetParams, times: &[f64], xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let dim = net.spatial_dim();
    let ny = if dim == 2 { ys.len() } else { 1 };
    let mut out = Vec::with_capacity(times.len() * xs.len() * ny);
    for &t in times {
        for &x in xs {
            if dim == 2 {
                for &y in ys {
                    out.push(net.forward(t, &[x, y]));
                }
            } else {
                out.push(net.forward(t, &[x, 0.0]));
            }
        }
    }
    out
}

/// Write the loss history CSV: one row per logged iteration.
pub fn write_history(path: &Path, history: &[HistoryRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer
        .write_record(["iteration", "l_var", "l_ic", "l_bc", "j_safe", "j_c", "total"])
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    for row in history {
        writer
            .write_record([
                row.iteration.to_string(),
                format!("{:?}", row.loss_var),
                format!("{:?}", row.loss_ic),
                format!("{:?}", row.loss_bc),
                format!("{:?}", row.obj_safe),
                format!("{:?}", row.obj_collision),
                format!("{:?}", row.total),
            ])
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    }
    writer
        .flush()
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    Ok(())
}
