//! Robot release-rate and path parameterizations on the constraint curve,
//! and the induced source field s(t, x).
//!
//! Release rates are polynomials in normalized time τ = t/T; the path
//! parameter is a sigmoid of another polynomial, ξ_j(t) = σ(b_j(τ)), which
//! keeps ξ in (0, 1) and the robot speed bounded. Polynomial intercepts
//! β_{j0} encode the initial angular positions and are never trained.

use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

/// Default collision margin: 4 degrees.
pub const DEFAULT_COLLISION_MARGIN: f64 = 4.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ControlParams {
    /// Release-rate coefficients per robot (constant term first).
    pub alpha: Vec<Vec<f64>>,
    /// Path coefficients per robot; entry 0 is the fixed intercept.
    pub beta: Vec<Vec<f64>>,
    /// Horizon used to normalize time inside the polynomials.
    pub horizon: f64,
    /// Collision margin ϑ0 in radians.
    pub collision_margin: f64,
    /// Wrap the angular separation in the collision penalty around the
    /// circle. Off by default: the penalty uses the raw difference.
    pub wrap_collision: bool,
}

/// Kinematic state of one robot at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub time: f64,
    pub xi: f64,
    /// Angular position ϑ = 2πξ in radians.
    pub angle: f64,
    pub position: [f64; 2],
    pub release_rate: f64,
}

/// Per-robot quantities at a fixed time, precomputed for batched source
/// evaluation: dp/dβ_k = `path_tangent` · τ^k.
#[derive(Debug, Clone)]
pub struct RobotSnapshot {
    pub position: [f64; 2],
    pub release: f64,
    pub path_tangent: [f64; 2],
    pub tau_powers: Vec<f64>,
}

fn sigmoid(b: f64) -> f64 {
    1.0 / (1.0 + (-b).exp())
}

fn horner(coeffs: &[f64], tau: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * tau + c)
}

fn poly_deriv(coeffs: &[f64], tau: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (k, &c)| acc * tau + k as f64 * c)
}

impl ControlParams {
    pub fn new(alpha: Vec<Vec<f64>>, beta: Vec<Vec<f64>>, horizon: f64) -> Result<Self> {
        if alpha.len() != beta.len() {
            return Err(Error::Shape(format!(
                "{} release-rate vectors vs {} path vectors",
                alpha.len(),
                beta.len()
            )));
        }
        if alpha.iter().flatten().chain(beta.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "control coefficients".into(),
            });
        }
        Ok(ControlParams {
            alpha,
            beta,
            horizon,
            collision_margin: DEFAULT_COLLISION_MARGIN,
            wrap_collision: false,
        })
    }

    /// Two robots with 5 release and 4 path coefficients each, all
    /// trainable entries zero; intercepts place the robots at 180° and 270°.
    pub fn benchmark(horizon: f64) -> Self {
        let alpha = vec![vec![0.0; 5]; 2];
        let beta = vec![
            vec![0.0; 4],
            {
                let mut b = vec![0.0; 4];
                b[0] = 3.0f64.ln();
                b
            },
        ];
        Self::new(alpha, beta, horizon).unwrap()
    }

    /// Zeroed controls with the given robot count and coefficient counts.
    pub fn zeros(robots: usize, n_alpha: usize, n_beta: usize, horizon: f64) -> Self {
        Self::new(vec![vec![0.0; n_alpha]; robots], vec![vec![0.0; n_beta]; robots], horizon)
            .unwrap()
    }

    pub fn robot_count(&self) -> usize {
        self.alpha.len()
    }

    fn tau(&self, t: f64) -> f64 {
        t / self.horizon
    }

    /// Path parameter ξ_j(t) = σ(b_j(τ)).
    pub fn xi(&self, j: usize, t: f64) -> f64 {
        sigmoid(horner(&self.beta[j], self.tau(t)))
    }

    /// dξ_j/dt, analytic.
    pub fn xi_time_deriv(&self, j: usize, t: f64) -> f64 {
        let tau = self.tau(t);
        let s = sigmoid(horner(&self.beta[j], tau));
        s * (1.0 - s) * poly_deriv(&self.beta[j], tau) / self.horizon
    }

    /// dξ_j/dβ_{jk} for every coefficient, analytic.
    pub fn xi_beta_grad(&self, j: usize, t: f64) -> Vec<f64> {
        let tau = self.tau(t);
        let s = sigmoid(horner(&self.beta[j], tau));
        let sp = s * (1.0 - s);
        let mut pow = 1.0;
        self.beta[j]
            .iter()
            .map(|_| {
                let g = sp * pow;
                pow *= tau;
                g
            })
            .collect()
    }

    /// Release rate a_j(t), a polynomial in normalized time.
    pub fn release_rate(&self, j: usize, t: f64) -> f64 {
        horner(&self.alpha[j], self.tau(t))
    }

    /// da_j/dα_{jk}: the monomial vector (τ^0, τ^1, ...).
    pub fn release_alpha_grad(&self, j: usize, t: f64) -> Vec<f64> {
        let tau = self.tau(t);
        let mut pow = 1.0;
        self.alpha[j]
            .iter()
            .map(|_| {
                let g = pow;
                pow *= tau;
                g
            })
            .collect()
    }

    pub fn robot_state(&self, scenario: &ScenarioConfig, j: usize, t: f64) -> RobotState {
        let xi = self.xi(j, t);
        RobotState {
            time: t,
            xi,
            angle: TAU * xi,
            position: scenario.curve.eval(xi),
            release_rate: self.release_rate(j, t),
        }
    }

    /// Everything the batched source evaluation needs at time `t`.
    pub fn snapshot(&self, scenario: &ScenarioConfig, j: usize, t: f64) -> RobotSnapshot {
        let tau = self.tau(t);
        let b = horner(&self.beta[j], tau);
        let s = sigmoid(b);
        let sp = s * (1.0 - s);
        let gamma_d = scenario.curve.deriv(s);
        let n_pow = self.alpha[j].len().max(self.beta[j].len());
        let mut tau_powers = Vec::with_capacity(n_pow);
        let mut pow = 1.0;
        for _ in 0..n_pow {
            tau_powers.push(pow);
            pow *= tau;
        }
        RobotSnapshot {
            position: scenario.curve.eval(s),
            release: horner(&self.alpha[j], tau),
            path_tangent: [gamma_d[0] * sp, gamma_d[1] * sp],
            tau_powers,
        }
    }

    /// Source field s(t, x) = Σ_j a_j(t) exp(-|p_j(t) - x|² / (2 l_s²)).
    pub fn source_field(&self, scenario: &ScenarioConfig, t: f64, x: &[f64; 2]) -> f64 {
        let ls2 = scenario.source_length_scale * scenario.source_length_scale;
        (0..self.robot_count())
            .map(|j| {
                let p = scenario.curve.eval(self.xi(j, t));
                let dx = p[0] - x[0];
                let dy = p[1] - x[1];
                self.release_rate(j, t) * (-(dx * dx + dy * dy) / (2.0 * ls2)).exp()
            })
            .sum()
    }

    /// Source value together with ds/dα and ds/dβ (one vector per robot).
    pub fn source_with_grads(
        &self,
        scenario: &ScenarioConfig,
        t: f64,
        x: &[f64; 2],
    ) -> (f64, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let ls2 = scenario.source_length_scale * scenario.source_length_scale;
        let mut s = 0.0;
        let mut d_alpha = Vec::with_capacity(self.robot_count());
        let mut d_beta = Vec::with_capacity(self.robot_count());
        for j in 0..self.robot_count() {
            let snap = self.snapshot(scenario, j, t);
            let dx = snap.position[0] - x[0];
            let dy = snap.position[1] - x[1];
            let gauss = (-(dx * dx + dy * dy) / (2.0 * ls2)).exp();
            s += snap.release * gauss;
            d_alpha.push(
                (0..self.alpha[j].len())
                    .map(|k| snap.tau_powers[k] * gauss)
                    .collect(),
            );
            // d/dβ of the exponent: -(p-x)·dp/dβ / l_s².
            let dot = dx * snap.path_tangent[0] + dy * snap.path_tangent[1];
            let base = -snap.release * gauss * dot / ls2;
            d_beta.push(
                (0..self.beta[j].len())
                    .map(|k| base * snap.tau_powers[k])
                    .collect(),
            );
        }
        (s, d_alpha, d_beta)
    }

    fn angular_separation(&self, xi_j: f64, xi_k: f64) -> f64 {
        let mut delta = TAU * (xi_j - xi_k);
        if self.wrap_collision {
            delta = (delta + std::f64::consts::PI).rem_euclid(TAU) - std::f64::consts::PI;
        }
        delta
    }

    /// Pairwise collision penalty J_c(t) = Σ_{j<k} exp(-(2π(ξj-ξk)/ϑ0)²).
    pub fn collision_penalty(&self, t: f64) -> f64 {
        let n = self.robot_count();
        let xis: Vec<f64> = (0..n).map(|j| self.xi(j, t)).collect();
        let mut total = 0.0;
        for j in 0..n {
            for k in j + 1..n {
                let ratio = self.angular_separation(xis[j], xis[k]) / self.collision_margin;
                total += (-ratio * ratio).exp();
            }
        }
        total
    }

    /// dJ_c/dβ for every robot and coefficient.
    pub fn collision_beta_grad(&self, t: f64) -> Vec<Vec<f64>> {
        let n = self.robot_count();
        let xis: Vec<f64> = (0..n).map(|j| self.xi(j, t)).collect();
        let xi_grads: Vec<Vec<f64>> = (0..n).map(|j| self.xi_beta_grad(j, t)).collect();
        let mut grads: Vec<Vec<f64>> = self.beta.iter().map(|b| vec![0.0; b.len()]).collect();
        for j in 0..n {
            for k in j + 1..n {
                let delta = self.angular_separation(xis[j], xis[k]);
                let ratio = delta / self.collision_margin;
                // dJ/dΔ, with dΔ/dξ_j = 2π and dΔ/dξ_k = -2π.
                let d_pair = (-ratio * ratio).exp() * (-2.0 * ratio / self.collision_margin) * TAU;
                for (g, dxi) in grads[j].iter_mut().zip(&xi_grads[j]) {
                    *g += d_pair * dxi;
                }
                for (g, dxi) in grads[k].iter_mut().zip(&xi_grads[k]) {
                    *g -= d_pair * dxi;
                }
            }
        }
        grads
    }

    /// Suprema of |dξ/dt| and ‖dp/dt‖ over a time grid.
    pub fn speed_bound_check(
        &self,
        scenario: &ScenarioConfig,
        j: usize,
        times: &[f64],
    ) -> (f64, f64) {
        let mut max_dxi: f64 = 0.0;
        let mut max_speed: f64 = 0.0;
        for &t in times {
            let dxi = self.xi_time_deriv(j, t);
            let g = scenario.curve.deriv(self.xi(j, t));
            let speed = dxi.abs() * (g[0] * g[0] + g[1] * g[1]).sqrt();
            max_dxi = max_dxi.max(dxi.abs());
            max_speed = max_speed.max(speed);
        }
        (max_dxi, max_speed)
    }

    /// Indices of the trainable coefficients inside the packed control
    /// vector: all α entries, then β entries with each intercept skipped.
    pub fn free_len(&self) -> usize {
        self.alpha.iter().map(|a| a.len()).sum::<usize>()
            + self.beta.iter().map(|b| b.len().saturating_sub(1)).sum::<usize>()
    }

    pub fn pack_free(&self, out: &mut Vec<f64>) {
        for a in &self.alpha {
            out.extend_from_slice(a);
        }
        for b in &self.beta {
            out.extend_from_slice(&b[1..]);
        }
    }

    pub fn unpack_free(&mut self, packed: &[f64]) {
        let mut it = packed.iter();
        for a in &mut self.alpha {
            for v in a.iter_mut() {
                *v = *it.next().expect("packed control vector too short");
            }
        }
        for b in &mut self.beta {
            for v in b.iter_mut().skip(1) {
                *v = *it.next().expect("packed control vector too short");
            }
        }
        debug_assert!(it.next().is_none(), "packed control vector too long");
    }

    /// Export per-robot trajectories as CSV rows of (t, ξ, ϑ in degrees,
    /// position, release rate). One file per robot.
    pub fn export_trajectories(
        &self,
        scenario: &ScenarioConfig,
        dir: &Path,
        times: &[f64],
    ) -> Result<Vec<PathBuf>> {
        let mut paths = Vec::new();
        for j in 0..self.robot_count() {
            let path = dir.join(format!("controls_robot{}.csv", j + 1));
            let mut writer = csv::Writer::from_path(&path)?;
            writer
                .write_record(["t", "xi", "theta_deg", "p_x", "p_y", "a"])
                .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
            for &t in times {
                let st = self.robot_state(scenario, j, t);
                writer
                    .write_record([
                        format!("{t:?}"),
                        format!("{:?}", st.xi),
                        format!("{:?}", st.angle.to_degrees()),
                        format!("{:?}", st.position[0]),
                        format!("{:?}", st.position[1]),
                        format!("{:?}", st.release_rate),
                    ])
                    .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
            }
            writer
                .flush()
                .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
            paths.push(path);
        }
        Ok(paths)
    }
}

/// Serialized control coefficients (the trajectory CSVs are derived data;
/// this file is what `validate` reloads).
#[derive(Debug, Serialize, Deserialize)]
struct ControlsDto {
    horizon: f64,
    collision_margin_deg: f64,
    wrap_collision: bool,
    robots: Vec<RobotDto>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RobotDto {
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

pub fn save_controls(controls: &ControlParams, path: &Path) -> Result<()> {
    let dto = ControlsDto {
        horizon: controls.horizon,
        collision_margin_deg: controls.collision_margin.to_degrees(),
        wrap_collision: controls.wrap_collision,
        robots: controls
            .alpha
            .iter()
            .zip(&controls.beta)
            .map(|(a, b)| RobotDto {
                alpha: a.clone(),
                beta: b.clone(),
            })
            .collect(),
    };
    let text = toml::to_string_pretty(&dto)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_controls(path: &Path) -> Result<ControlParams> {
    let text = std::fs::read_to_string(path)?;
    let dto: ControlsDto = toml::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let mut controls = ControlParams::new(
        dto.robots.iter().map(|r| r.alpha.clone()).collect(),
        dto.robots.iter().map(|r| r.beta.clone()).collect(),
        dto.horizon,
    )?;
    controls.collision_margin = dto.collision_margin_deg.to_radians();
    controls.wrap_collision = dto.wrap_collision;
    Ok(controls)
}
