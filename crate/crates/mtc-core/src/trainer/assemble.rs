//! Loss and objective assembly with exact gradients.
//!
//! On a lattice grid the hat supports of neighboring test functions overlap:
//! every space-time cell carries one set of 2^(d+1) Gauss nodes shared by
//! the up-to-2^(d+1) test functions whose support covers the cell. The
//! assembly therefore evaluates the network once per unique node and
//! scatters per-test-function residual coefficients back onto the nodes,
//! instead of re-evaluating the field per test function.
//!
//! Every pass runs over fixed-size chunks with an ordered reduction, so the
//! result is bit-identical for any thread count.

use crate::control::{ControlParams, RobotSnapshot};
use crate::error::{Error, Result};
use crate::exec::{self, Parallelism, CHUNK};
use crate::grid::{InteriorLayout, TrainingGrid};
use crate::net::{kernel, NetParams};
use crate::scenario::ScenarioConfig;
use crate::trainer::{Breakdown, LossWeights};
use crate::weakform::{gauss2_fractions, residual_gradients, weak_residual};

/// Flat parameter layout used by the optimizer:
/// `[θ | α (all robots) | β without the fixed intercepts]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub n_theta: usize,
    pub alpha_lens: Vec<usize>,
    pub beta_lens: Vec<usize>,
}

impl ParamLayout {
    pub fn of(net: &NetParams, controls: &ControlParams) -> Self {
        ParamLayout {
            n_theta: net.param_len(),
            alpha_lens: controls.alpha.iter().map(|a| a.len()).collect(),
            beta_lens: controls.beta.iter().map(|b| b.len()).collect(),
        }
    }

    pub fn n_alpha(&self) -> usize {
        self.alpha_lens.iter().sum()
    }

    pub fn n_beta_free(&self) -> usize {
        self.beta_lens.iter().map(|l| l.saturating_sub(1)).sum()
    }

    pub fn total(&self) -> usize {
        self.n_theta + self.n_alpha() + self.n_beta_free()
    }

    pub fn pack(&self, net: &NetParams, controls: &ControlParams) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total());
        out.extend_from_slice(&net.theta);
        controls.pack_free(&mut out);
        out
    }

    pub fn unpack(&self, packed: &[f64], net: &mut NetParams, controls: &mut ControlParams) {
        net.theta.copy_from_slice(&packed[..self.n_theta]);
        controls.unpack_free(&packed[self.n_theta..]);
    }

    /// Fold full per-robot control gradients (α then β, intercepts included)
    /// into the packed layout, dropping the intercept slots.
    fn fold_control_grads(&self, full: &[f64], packed: &mut [f64]) {
        let mut src = 0;
        let mut dst = self.n_theta;
        for len in &self.alpha_lens {
            packed[dst..dst + len].iter_mut().zip(&full[src..src + len]).for_each(|(p, g)| *p += g);
            src += len;
            dst += len;
        }
        for len in &self.beta_lens {
            // Skip the fixed intercept's gradient slot.
            packed[dst..dst + len - 1]
                .iter_mut()
                .zip(&full[src + 1..src + len])
                .for_each(|(p, g)| *p += g);
            src += len;
            dst += len - 1;
        }
    }
}

/// One point set (initial condition, one big boundary batch, or safe zone)
/// stored SoA for batched evaluation.
struct PointSet {
    t: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    target: Vec<f64>,
}

impl PointSet {
    fn len(&self) -> usize {
        self.t.len()
    }
}

/// Static per-node data of the interior lattice.
struct Lattice {
    dim: usize,
    /// Cells per dimension (time, x1, x2); 1 when the axis is absent.
    nc: [usize; 3],
    /// Test-function centers per dimension.
    ncen: [usize; 3],
    /// Gauss nodes per cell, 2^(dim+1).
    npc: usize,
    /// Constant quadrature weight per node, Π h/2.
    weight: f64,
    // Hat tables indexed [corner * npc + gauss]; the corner bits select
    // which cell corner the test function sits at, per dimension.
    tab_v: Vec<f64>,
    tab_vt: Vec<f64>,
    tab_vx: Vec<f64>,
    tab_vy: Vec<f64>,
    node_t: Vec<f64>,
    node_x: Vec<f64>,
    node_y: Vec<f64>,
    node_kappa: Vec<f64>,
    node_ux: Vec<f64>,
    node_uy: Vec<f64>,
    /// Index into `time_values` per node (nodes in a time slab share t).
    node_tidx: Vec<u32>,
    time_values: Vec<f64>,
    // Per-iteration buffers.
    node_f: Vec<f64>,
    node_gx: Vec<f64>,
    node_gy: Vec<f64>,
    node_s: Vec<f64>,
    cot_f: Vec<f64>,
    cot_gx: Vec<f64>,
    cot_gy: Vec<f64>,
    cot_s: Vec<f64>,
    l_values: Vec<f64>,
}

impl Lattice {
    fn new(scenario: &ScenarioConfig, grid: &TrainingGrid) -> Self {
        let dim = grid.dim;
        let ndim = dim + 1;
        let npc = 1usize << ndim;
        let ncen = [
            grid.spec.interior_t,
            grid.spec.interior_x[0],
            if dim == 2 { grid.spec.interior_x[1] } else { 1 },
        ];
        let nc = [
            ncen[0] + 1,
            ncen[1] + 1,
            if dim == 2 { ncen[2] + 1 } else { 1 },
        ];
        let h = [grid.ht, grid.hx[0], if dim == 2 { grid.hx[1] } else { 1.0 }];
        let frac = gauss2_fractions();

        let mut weight = 1.0;
        for a in 0..ndim {
            weight *= h[a] / 2.0;
        }

        // Hat factor tables per (corner, gauss) pair.
        let mut tab_v = vec![0.0; npc * npc];
        let mut tab_vt = vec![0.0; npc * npc];
        let mut tab_vx = vec![0.0; npc * npc];
        let mut tab_vy = vec![0.0; npc * npc];
        for eps in 0..npc {
            for g in 0..npc {
                let factor = |a: usize| {
                    let z = frac[(g >> a) & 1];
                    if (eps >> a) & 1 == 0 {
                        (1.0 - z, -1.0 / h[a])
                    } else {
                        (z, 1.0 / h[a])
                    }
                };
                let mut v = 1.0;
                for a in 0..ndim {
                    v *= factor(a).0;
                }
                let dtab = |axis: usize| {
                    let mut d = factor(axis).1;
                    for a in 0..ndim {
                        if a != axis {
                            d *= factor(a).0;
                        }
                    }
                    d
                };
                tab_v[eps * npc + g] = v;
                tab_vt[eps * npc + g] = dtab(0);
                tab_vx[eps * npc + g] = dtab(1);
                if ndim == 3 {
                    tab_vy[eps * npc + g] = dtab(2);
                }
            }
        }

        let n_cells = nc[0] * nc[1] * nc[2];
        let n_nodes = n_cells * npc;
        let mut node_t = vec![0.0; n_nodes];
        let mut node_x = vec![0.0; n_nodes];
        let mut node_y = vec![0.0; n_nodes];
        let mut node_kappa = vec![0.0; n_nodes];
        let mut node_ux = vec![0.0; n_nodes];
        let mut node_uy = vec![0.0; n_nodes];
        let mut node_tidx = vec![0u32; n_nodes];
        let mut time_values = vec![0.0; nc[0] * 2];
        for (ct, tv) in time_values.iter_mut().enumerate().take(nc[0] * 2) {
            *tv = (ct / 2) as f64 * h[0] + frac[ct % 2] * h[0];
        }

        let mut idx = 0;
        for ct in 0..nc[0] {
            for cx in 0..nc[1] {
                for cy in 0..nc[2] {
                    for g in 0..npc {
                        let (gt, gx, gy) = (g & 1, (g >> 1) & 1, (g >> 2) & 1);
                        let t = (ct as f64 + frac[gt]) * h[0];
                        let x = grid.x0[0] + (cx as f64 + frac[gx]) * h[1];
                        let y = if dim == 2 {
                            grid.x0[1] + (cy as f64 + frac[gy]) * h[2]
                        } else {
                            0.0
                        };
                        let p = [x, y];
                        node_t[idx] = t;
                        node_x[idx] = x;
                        node_y[idx] = y;
                        node_kappa[idx] = scenario.eval_diffusivity(t, &p);
                        let u = scenario.eval_velocity(t, &p);
                        node_ux[idx] = u[0];
                        node_uy[idx] = if dim == 2 { u[1] } else { 0.0 };
                        node_tidx[idx] = (ct * 2 + gt) as u32;
                        idx += 1;
                    }
                }
            }
        }

        let n_v = ncen[0] * ncen[1] * ncen[2];
        Lattice {
            dim,
            nc,
            ncen,
            npc,
            weight,
            tab_v,
            tab_vt,
            tab_vx,
            tab_vy,
            node_t,
            node_x,
            node_y,
            node_kappa,
            node_ux,
            node_uy,
            node_tidx,
            time_values,
            node_f: vec![0.0; n_nodes],
            node_gx: vec![0.0; n_nodes],
            node_gy: vec![0.0; n_nodes],
            node_s: vec![0.0; n_nodes],
            cot_f: vec![0.0; n_nodes],
            cot_gx: vec![0.0; n_nodes],
            cot_gy: vec![0.0; n_nodes],
            cot_s: vec![0.0; n_nodes],
            l_values: vec![0.0; n_v],
        }
    }

    fn tan_dirs(&self) -> Vec<usize> {
        (1..=self.dim).collect()
    }

    fn fill_inputs(&self, start: usize, b: usize, inputs: &mut [f64]) {
        inputs[..b].copy_from_slice(&self.node_t[start..start + b]);
        inputs[b..2 * b].copy_from_slice(&self.node_x[start..start + b]);
        if self.dim == 2 {
            inputs[2 * b..3 * b].copy_from_slice(&self.node_y[start..start + b]);
        }
    }

    /// Variational term Σ_k l_k² and, when requested, its gradients with
    /// respect to θ and the full control coefficient vector.
    #[allow(clippy::too_many_arguments)]
    fn interior_pass(
        &mut self,
        net: &NetParams,
        controls: &ControlParams,
        scenario: &ScenarioConfig,
        mode: Parallelism,
        w1_eff: f64,
        want_grad: bool,
    ) -> (f64, Option<(Vec<f64>, Vec<f64>)>) {
        let dim = self.dim;
        let npc = self.npc;
        let tan_dirs = self.tan_dirs();
        let ls2 = scenario.source_length_scale * scenario.source_length_scale;
        let snaps: Vec<Vec<RobotSnapshot>> = self
            .time_values
            .iter()
            .map(|&t| {
                (0..controls.robot_count())
                    .map(|j| controls.snapshot(scenario, j, t))
                    .collect()
            })
            .collect();

        // Network values and spatial gradients at every unique node.
        let mut f = std::mem::take(&mut self.node_f);
        let mut gx = std::mem::take(&mut self.node_gx);
        let mut gy = std::mem::take(&mut self.node_gy);
        exec::zip3_chunks_mut(mode, CHUNK, &mut f, &mut gx, &mut gy, |start, fc, gxc, gyc| {
            let b = fc.len();
            let mut scratch = kernel::Scratch::new();
            let mut inputs = vec![0.0; (dim + 1) * b];
            self.fill_inputs(start, b, &mut inputs);
            kernel::forward_batch(net, &inputs, b, &tan_dirs, &mut scratch);
            fc.copy_from_slice(kernel::output_values(net, &scratch, b));
            let mut tans = vec![0.0; dim * b];
            kernel::copy_output_tangents(net, &scratch, dim, b, &mut tans);
            gxc.copy_from_slice(&tans[..b]);
            if dim == 2 {
                gyc.copy_from_slice(&tans[b..2 * b]);
            }
        });

        // Robot source at every node (snapshots shared per time slab).
        let mut s = std::mem::take(&mut self.node_s);
        exec::map_chunks_mut(mode, CHUNK, &mut s, |start, chunk| {
            for (k, sv) in chunk.iter_mut().enumerate() {
                let node = start + k;
                let slab = &snaps[self.node_tidx[node] as usize];
                let (px, py) = (self.node_x[node], self.node_y[node]);
                let mut acc = 0.0;
                for sn in slab {
                    let dx = sn.position[0] - px;
                    let dy = sn.position[1] - py;
                    acc += sn.release * (-(dx * dx + dy * dy) / (2.0 * ls2)).exp();
                }
                *sv = acc;
            }
        });

        // Residual of every test function, gathered from its 2^(d+1) cells.
        let mut l_values = std::mem::take(&mut self.l_values);
        let (nc, ncen, weight) = (self.nc, self.ncen, self.weight);
        exec::map_chunks_mut(mode, CHUNK, &mut l_values, |start, chunk| {
            for (k0, lv) in chunk.iter_mut().enumerate() {
                let k = start + k0;
                let iy = k % ncen[2];
                let ix = (k / ncen[2]) % ncen[1];
                let it = k / (ncen[1] * ncen[2]);
                let mut acc = 0.0;
                for corner in 0..npc {
                    let (at, ax, ay) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
                    let cell = ((it + at) * nc[1] + (ix + ax)) * nc[2] + (iy + ay);
                    let eps = corner ^ (npc - 1);
                    let base = cell * npc;
                    let tb = eps * npc;
                    for g in 0..npc {
                        let node = base + g;
                        let v = self.tab_v[tb + g];
                        let kap = self.node_kappa[node];
                        acc += gx[node] * (kap * self.tab_vx[tb + g] + self.node_ux[node] * v)
                            + gy[node] * (kap * self.tab_vy[tb + g] + self.node_uy[node] * v)
                            - f[node] * self.tab_vt[tb + g]
                            - s[node] * v;
                    }
                }
                *lv = weight * acc;
            }
        });

        let var_sq_sum: f64 = l_values.iter().map(|l| l * l).sum();

        let grads = if want_grad {
            // Scatter the residual coefficients back onto the nodes.
            let mut cf = std::mem::take(&mut self.cot_f);
            let mut cgx = std::mem::take(&mut self.cot_gx);
            let mut cgy = std::mem::take(&mut self.cot_gy);
            let mut cs = std::mem::take(&mut self.cot_s);
            let cell_chunk = CHUNK * npc;
            exec::zip4_chunks_mut(
                mode,
                cell_chunk,
                &mut cf,
                &mut cgx,
                &mut cgy,
                &mut cs,
                |start, cfc, cgxc, cgyc, csc| {
                    let cell0 = start / npc;
                    for local_cell in 0..cfc.len() / npc {
                        let cell = cell0 + local_cell;
                        let cy = cell % nc[2];
                        let cx = (cell / nc[2]) % nc[1];
                        let ct = cell / (nc[1] * nc[2]);
                        for g in 0..npc {
                            let node = cell * npc + g;
                            let local = local_cell * npc + g;
                            let (mut a_f, mut a_gx, mut a_gy, mut a_s) = (0.0, 0.0, 0.0, 0.0);
                            for eps in 0..npc {
                                let (et, ex, ey) = (eps & 1, (eps >> 1) & 1, (eps >> 2) & 1);
                                // Center index per dimension (0-based); the
                                // corner must name an interior lattice node.
                                let (kt, kx, ky) = (ct + et, cx + ex, cy + ey);
                                if kt == 0
                                    || kt > ncen[0]
                                    || kx == 0
                                    || kx > ncen[1]
                                    || (self.dim == 2 && (ky == 0 || ky > ncen[2]))
                                {
                                    continue;
                                }
                                let k = ((kt - 1) * ncen[1] + (kx - 1)) * ncen[2]
                                    + if self.dim == 2 { ky - 1 } else { 0 };
                                let coef = 2.0 * w1_eff * l_values[k] * weight;
                                let tb = eps * npc + g;
                                let v = self.tab_v[tb];
                                let kap = self.node_kappa[node];
                                a_f -= coef * self.tab_vt[tb];
                                a_gx += coef * (kap * self.tab_vx[tb] + self.node_ux[node] * v);
                                a_gy += coef * (kap * self.tab_vy[tb] + self.node_uy[node] * v);
                                a_s -= coef * v;
                            }
                            cfc[local] = a_f;
                            cgxc[local] = a_gx;
                            cgyc[local] = a_gy;
                            csc[local] = a_s;
                        }
                    }
                },
            );

            // Reverse sweep per node chunk, ordered reduction.
            let theta_parts = exec::chunked_map(mode, &cf, |start, cfc| {
                let b = cfc.len();
                let mut grad = vec![0.0; net.param_len()];
                let mut scratch = kernel::Scratch::new();
                let mut inputs = vec![0.0; (dim + 1) * b];
                self.fill_inputs(start, b, &mut inputs);
                let mut cot_tan = vec![0.0; dim * b];
                cot_tan[..b].copy_from_slice(&cgx[start..start + b]);
                if dim == 2 {
                    cot_tan[b..2 * b].copy_from_slice(&cgy[start..start + b]);
                }
                kernel::forward_batch(net, &inputs, b, &tan_dirs, &mut scratch);
                kernel::backward_batch(net, b, &tan_dirs, cfc, &cot_tan, &mut scratch, &mut grad);
                grad
            });
            let grad_theta = exec::sum_vectors(theta_parts);

            // Source-path gradients for the control coefficients.
            let n_alpha: usize = controls.alpha.iter().map(|a| a.len()).sum();
            let n_beta: usize = controls.beta.iter().map(|b| b.len()).sum();
            let ctrl_parts = exec::chunked_map(mode, &cs, |start, csc| {
                let mut g = vec![0.0; n_alpha + n_beta];
                for (k, &cs_v) in csc.iter().enumerate() {
                    let node = start + k;
                    let slab = &snaps[self.node_tidx[node] as usize];
                    let (px, py) = (self.node_x[node], self.node_y[node]);
                    let mut a_off = 0;
                    let mut b_off = n_alpha;
                    for (j, sn) in slab.iter().enumerate() {
                        let dx = sn.position[0] - px;
                        let dy = sn.position[1] - py;
                        let gauss = (-(dx * dx + dy * dy) / (2.0 * ls2)).exp();
                        let na = controls.alpha[j].len();
                        for (kk, gv) in g[a_off..a_off + na].iter_mut().enumerate() {
                            *gv += cs_v * sn.tau_powers[kk] * gauss;
                        }
                        let dot = dx * sn.path_tangent[0] + dy * sn.path_tangent[1];
                        let base = -cs_v * sn.release * gauss * dot / ls2;
                        let nb = controls.beta[j].len();
                        for (kk, gv) in g[b_off..b_off + nb].iter_mut().enumerate() {
                            *gv += base * sn.tau_powers[kk];
                        }
                        a_off += na;
                        b_off += nb;
                    }
                }
                g
            });
            let grad_ctrl = exec::sum_vectors(ctrl_parts);

            self.cot_f = cf;
            self.cot_gx = cgx;
            self.cot_gy = cgy;
            self.cot_s = cs;
            Some((grad_theta, grad_ctrl))
        } else {
            None
        };

        self.node_f = f;
        self.node_gx = gx;
        self.node_gy = gy;
        self.node_s = s;
        self.l_values = l_values;
        (var_sq_sum, grads)
    }
}

/// Assembles the loss/objective and gradients for one (scenario, grid) pair.
/// Holds the precomputed node data; reuse it across iterations.
pub struct Assembler {
    dim: usize,
    lattice: Option<Lattice>,
    ic: PointSet,
    bc: PointSet,
    safe: PointSet,
    n_v: usize,
}

/// What to evaluate.
pub struct EvalRequest<'a> {
    pub net: &'a NetParams,
    pub controls: &'a ControlParams,
    pub weights: &'a LossWeights,
    pub mode: Parallelism,
    pub want_grad: bool,
    /// Train on a subset of test functions (minibatch); the variational
    /// term is scaled by n_v / subset.len() to stay unbiased.
    pub subset: Option<&'a [usize]>,
}

impl Assembler {
    pub fn new(scenario: &ScenarioConfig, grid: &TrainingGrid) -> Self {
        let lattice = match grid.layout {
            InteriorLayout::Lattice => Some(Lattice::new(scenario, grid)),
            InteriorLayout::Scattered(_) => None,
        };
        let to_set = |pts: &[(f64, [f64; 2])], targets: &[f64]| PointSet {
            t: pts.iter().map(|p| p.0).collect(),
            x: pts.iter().map(|p| p.1[0]).collect(),
            y: pts.iter().map(|p| p.1[1]).collect(),
            target: targets.to_vec(),
        };
        let ic_pts: Vec<(f64, [f64; 2])> = grid.ic_points.iter().map(|&x| (0.0, x)).collect();
        let bc_pts: Vec<(f64, [f64; 2])> = grid.bc_points.iter().map(|&(_, t, x, _)| (t, x)).collect();
        let bc_targets: Vec<f64> = grid.bc_points.iter().map(|&(_, _, _, g)| g).collect();
        Assembler {
            dim: grid.dim,
            lattice,
            ic: to_set(&ic_pts, &grid.ic_targets),
            bc: to_set(&bc_pts, &bc_targets),
            safe: to_set(&grid.safe_points, &grid.safe_targets),
            n_v: grid.n_interior(),
        }
    }

    /// Evaluate the full objective (Breakdown) and optionally the packed
    /// gradient `[dθ | dα | dβ_free]`.
    pub fn evaluate(
        &mut self,
        scenario: &ScenarioConfig,
        grid: &TrainingGrid,
        req: &EvalRequest,
    ) -> Result<(Breakdown, Option<Vec<f64>>)> {
        let weights = req.weights;
        weights.validate()?;
        let layout = ParamLayout::of(req.net, req.controls);
        let mut packed = req.want_grad.then(|| vec![0.0; layout.total()]);

        let w1_eff = if weights.normalize_variational {
            weights.w[0] / self.n_v as f64
        } else {
            weights.w[0]
        };

        // Interior variational term.
        let var_sq_sum = match (&mut self.lattice, req.subset) {
            (Some(lat), None) => {
                let (sum, grads) =
                    lat.interior_pass(req.net, req.controls, scenario, req.mode, w1_eff, req.want_grad);
                if let (Some(packed), Some((gt, gc))) = (packed.as_mut(), grads) {
                    for (p, g) in packed[..layout.n_theta].iter_mut().zip(&gt) {
                        *p += g;
                    }
                    layout.fold_control_grads(&gc, packed);
                }
                sum
            }
            _ => {
                let (sum, grads) = interior_per_tf(
                    req.net,
                    req.controls,
                    scenario,
                    grid,
                    req.mode,
                    w1_eff,
                    req.want_grad,
                    req.subset,
                )?;
                if let (Some(packed), Some((gt, gc))) = (packed.as_mut(), grads) {
                    for (p, g) in packed[..layout.n_theta].iter_mut().zip(&gt) {
                        *p += g;
                    }
                    layout.fold_control_grads(&gc, packed);
                }
                sum
            }
        };

        // Point terms: squared mismatch for IC/BC, the (possibly
        // asymmetric) penalty for the safe zone.
        let n0 = self.ic.len() as f64;
        let nb = self.bc.len() as f64;
        let nd = self.safe.len() as f64;
        let (w2, w3) = (weights.w[1], weights.w[2]);

        let ic_factor = 2.0 * w2 / n0;
        let (ic_sq_sum, ic_grad) = point_set_pass(
            req.net,
            &self.ic,
            self.dim,
            req.mode,
            req.want_grad,
            |r| r * r,
            move |r| ic_factor * r,
        );
        let bc_factor = 2.0 * w3 / nb;
        let (bc_sq_sum, bc_grad) = point_set_pass(
            req.net,
            &self.bc,
            self.dim,
            req.mode,
            req.want_grad,
            |r| r * r,
            move |r| bc_factor * r,
        );
        let asym = weights.asymmetry;
        let safe_factor = 1.0 / nd;
        let (safe_sum, safe_grad) = point_set_pass(
            req.net,
            &self.safe,
            self.dim,
            req.mode,
            req.want_grad,
            move |r| match asym {
                None => r * r,
                Some([wa, wb]) => wa * r.max(0.0).powi(2) + wb * (-r).max(0.0).powi(2),
            },
            move |r| {
                safe_factor
                    * match asym {
                        None => 2.0 * r,
                        Some([wa, wb]) => 2.0 * wa * r.max(0.0) - 2.0 * wb * (-r).max(0.0),
                    }
            },
        );
        if let Some(packed) = packed.as_mut() {
            for part in [ic_grad, bc_grad, safe_grad].into_iter().flatten() {
                for (p, g) in packed[..layout.n_theta].iter_mut().zip(&part) {
                    *p += g;
                }
            }
        }

        // Collision penalty, averaged over the time samples.
        let n_times = grid.collision_times.len() as f64;
        let mut collision_mean = 0.0;
        for &t in &grid.collision_times {
            collision_mean += req.controls.collision_penalty(t);
        }
        collision_mean /= n_times;
        if let Some(packed) = packed.as_mut() {
            let wc = weights.collision_weight / n_times;
            let n_alpha = layout.n_alpha();
            let mut full = vec![0.0; n_alpha + layout.beta_lens.iter().sum::<usize>()];
            for &t in &grid.collision_times {
                let grads = req.controls.collision_beta_grad(t);
                let mut off = n_alpha;
                for g in grads {
                    for (slot, v) in full[off..off + g.len()].iter_mut().zip(&g) {
                        *slot += wc * v;
                    }
                    off += g.len();
                }
            }
            layout.fold_control_grads(&full, packed);
        }

        let breakdown = Breakdown {
            n_v: self.n_v,
            n_ic: self.ic.len(),
            n_bc: self.bc.len(),
            n_safe: self.safe.len(),
            variational_sq_sum: var_sq_sum,
            variational_avg: var_sq_sum / self.n_v as f64,
            ic_avg: ic_sq_sum / n0,
            bc_avg: bc_sq_sum / nb,
            safe_avg: safe_sum / nd,
            collision_mean,
            loss: w1_eff * var_sq_sum + w2 * ic_sq_sum / n0 + w3 * bc_sq_sum / nb,
            objective: safe_sum / nd
                + w1_eff * var_sq_sum
                + w2 * ic_sq_sum / n0
                + w3 * bc_sq_sum / nb
                + weights.collision_weight * collision_mean,
        };
        breakdown.check_finite()?;
        Ok((breakdown, packed))
    }
}

/// Value-only batched pass over one point set: returns Σ value_fn(f - g)
/// and, when requested, the θ-gradient of Σ weighted by `cot_fn` (which
/// must already include all global factors).
fn point_set_pass(
    net: &NetParams,
    set: &PointSet,
    dim: usize,
    mode: Parallelism,
    want_grad: bool,
    value_fn: impl Fn(f64) -> f64 + Sync,
    cot_fn: impl Fn(f64) -> f64 + Sync,
) -> (f64, Option<Vec<f64>>) {
    if set.len() == 0 {
        return (0.0, want_grad.then(|| vec![0.0; net.param_len()]));
    }
    let items: Vec<usize> = (0..set.len()).collect();
    let parts = exec::chunked_map(mode, &items, |start, chunk| {
        let b = chunk.len();
        let mut scratch = kernel::Scratch::new();
        let mut inputs = vec![0.0; (dim + 1) * b];
        inputs[..b].copy_from_slice(&set.t[start..start + b]);
        inputs[b..2 * b].copy_from_slice(&set.x[start..start + b]);
        if dim == 2 {
            inputs[2 * b..3 * b].copy_from_slice(&set.y[start..start + b]);
        }
        kernel::forward_batch(net, &inputs, b, &[], &mut scratch);
        let values = kernel::output_values(net, &scratch, b);
        let mut sum = 0.0;
        let mut cots = vec![0.0; b];
        for k in 0..b {
            let r = values[k] - set.target[start + k];
            sum += value_fn(r);
            cots[k] = cot_fn(r);
        }
        let grad = if want_grad {
            let mut grad = vec![0.0; net.param_len()];
            kernel::backward_batch(net, b, &[], &cots, &[], &mut scratch, &mut grad);
            grad
        } else {
            Vec::new()
        };
        (sum, grad)
    });
    let sum = parts.iter().map(|(s, _)| s).sum();
    let grad = want_grad.then(|| exec::sum_vectors(parts.into_iter().map(|(_, g)| g).collect()));
    (sum, grad)
}

/// Reference interior path: one residual (and gradient) per test function.
/// Used for scattered layouts, minibatching, and as the slow cross-check of
/// the shared-node fast path.
#[allow(clippy::too_many_arguments, clippy::type_complexity)]
pub(crate) fn interior_per_tf(
    net: &NetParams,
    controls: &ControlParams,
    scenario: &ScenarioConfig,
    grid: &TrainingGrid,
    mode: Parallelism,
    w1_eff: f64,
    want_grad: bool,
    subset: Option<&[usize]>,
) -> Result<(f64, Option<(Vec<f64>, Vec<f64>)>)> {
    let indices: Vec<usize> = match subset {
        Some(s) => s.to_vec(),
        None => (0..grid.n_interior()).collect(),
    };
    let scale = grid.n_interior() as f64 / indices.len() as f64;
    let n_alpha: usize = controls.alpha.iter().map(|a| a.len()).sum();
    let n_beta: usize = controls.beta.iter().map(|b| b.len()).sum();

    let parts: Vec<Result<(f64, Vec<f64>, Vec<f64>)>> =
        exec::chunked_map(mode, &indices, |_, chunk| {
            let mut sq_sum = 0.0;
            let mut gt = vec![0.0; if want_grad { net.param_len() } else { 0 }];
            let mut gc = vec![0.0; if want_grad { n_alpha + n_beta } else { 0 }];
            for &k in chunk {
                let tf = grid.test_function(k);
                if want_grad {
                    let grads = residual_gradients(net, &tf, scenario, controls)?;
                    sq_sum += grads.value * grads.value;
                    let coef = 2.0 * w1_eff * scale * grads.value;
                    for (slot, g) in gt.iter_mut().zip(&grads.theta) {
                        *slot += coef * g;
                    }
                    let mut off = 0;
                    for a in &grads.alpha {
                        for (slot, g) in gc[off..off + a.len()].iter_mut().zip(a) {
                            *slot += coef * g;
                        }
                        off += a.len();
                    }
                    for b in &grads.beta {
                        for (slot, g) in gc[off..off + b.len()].iter_mut().zip(b) {
                            *slot += coef * g;
                        }
                        off += b.len();
                    }
                } else {
                    let l = weak_residual(net, &tf, scenario, controls);
                    sq_sum += l * l;
                }
            }
            Ok((sq_sum, gt, gc))
        });

    let mut sq_sum = 0.0;
    let mut gt_parts = Vec::new();
    let mut gc_parts = Vec::new();
    for part in parts {
        let (s, gt, gc) = part?;
        sq_sum += s;
        if want_grad {
            gt_parts.push(gt);
            gc_parts.push(gc);
        }
    }
    let grads = want_grad.then(|| (exec::sum_vectors(gt_parts), exec::sum_vectors(gc_parts)));
    Ok((sq_sum * scale, grads))
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.w.iter().any(|w| *w < 0.0) || self.collision_weight < 0.0 {
            return Err(Error::config("penalty weights must be non-negative"));
        }
        if let Some(a) = self.asymmetry {
            if a[0] < 0.0 || a[1] < 0.0 {
                return Err(Error::config("asymmetry weights must be non-negative"));
            }
        }
        Ok(())
    }
}
