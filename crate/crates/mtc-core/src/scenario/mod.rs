//! PDE input data: geometry, horizon, diffusivity and velocity fields,
//! initial and boundary conditions, the safe zone, and the robot constraint
//! curve.
//!
//! Faces of the 2-D box are indexed counterclockwise: 1 = bottom (x2 low),
//! 2 = right (x1 high), 3 = top (x2 high), 4 = left (x1 low); faces 3 and 4
//! share the top-left corner. In 1-D there are two faces: 1 = left, 2 = right.

mod curve;
mod field;
mod file;

pub use curve::CurveDescriptor;
pub use field::{RampPeak, ScalarField, SpaceTimeTable, VelocityField};
pub use file::{load_scenario, save_scenario};

use crate::error::{Error, Result};
use std::f64::consts::FRAC_PI_2;

/// Absolute tolerance for the t=0 agreement between boundary profiles and
/// the initial condition.
pub const COMPAT_TOL: f64 = 1e-9;

/// Geometric tolerance (relative to the domain span) for deciding whether a
/// query point lies on a boundary face.
const FACE_TOL_REL: f64 = 1e-9;

/// Full description of one transport problem.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    /// Spatial dimension, 1 or 2.
    pub dim: usize,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    /// Time horizon T.
    pub horizon: f64,
    pub diffusivity: ScalarField,
    pub velocity: VelocityField,
    pub initial: ScalarField,
    /// One profile per boundary face, in face order.
    pub boundaries: Vec<ScalarField>,
    pub safe_lower: [f64; 2],
    pub safe_upper: [f64; 2],
    /// Desired concentration inside the safe zone.
    pub desired: ScalarField,
    pub curve: CurveDescriptor,
    pub robot_count: usize,
    /// Length scale of the Gaussian source carried by each robot.
    pub source_length_scale: f64,
}

/// Geometry of one boundary face of the box.
#[derive(Debug, Clone, Copy)]
pub struct FaceGeometry {
    /// Axis held fixed on this face.
    pub fixed_axis: usize,
    /// Coordinate value along the fixed axis.
    pub fixed_value: f64,
    /// Axis that varies along the face (2-D only; equals `fixed_axis` in 1-D).
    pub free_axis: usize,
}

impl ScenarioConfig {
    pub fn n_faces(&self) -> usize {
        2 * self.dim
    }

    /// Geometry of face `face` (1-based).
    pub fn face_geometry(&self, face: usize) -> Result<FaceGeometry> {
        let count = self.n_faces();
        if face == 0 || face > count {
            return Err(Error::FaceIndexOutOfRange { index: face, count });
        }
        Ok(match (self.dim, face) {
            (1, 1) => FaceGeometry {
                fixed_axis: 0,
                fixed_value: self.lower[0],
                free_axis: 0,
            },
            (1, 2) => FaceGeometry {
                fixed_axis: 0,
                fixed_value: self.upper[0],
                free_axis: 0,
            },
            (2, 1) => FaceGeometry {
                fixed_axis: 1,
                fixed_value: self.lower[1],
                free_axis: 0,
            },
            (2, 2) => FaceGeometry {
                fixed_axis: 0,
                fixed_value: self.upper[0],
                free_axis: 1,
            },
            (2, 3) => FaceGeometry {
                fixed_axis: 1,
                fixed_value: self.upper[1],
                free_axis: 0,
            },
            (2, 4) => FaceGeometry {
                fixed_axis: 0,
                fixed_value: self.lower[0],
                free_axis: 1,
            },
            _ => unreachable!(),
        })
    }

    /// Boundary condition g_i(t, x) for a point on face `face`.
    pub fn eval_bc(&self, face: usize, t: f64, x: &[f64; 2]) -> Result<f64> {
        let geom = self.face_geometry(face)?;
        let span = self.upper[geom.fixed_axis] - self.lower[geom.fixed_axis];
        let tol = FACE_TOL_REL * span.max(1.0);
        let distance = (x[geom.fixed_axis] - geom.fixed_value).abs();
        let mut off = distance > tol;
        if self.dim == 2 {
            let free = x[geom.free_axis];
            off |= free < self.lower[geom.free_axis] - tol || free > self.upper[geom.free_axis] + tol;
        }
        if off {
            return Err(Error::PointOffFace {
                face,
                point: *x,
                distance,
            });
        }
        Ok(self.bc_profile_value(face, &geom, t, x))
    }

    fn bc_profile_value(&self, face: usize, geom: &FaceGeometry, t: f64, x: &[f64; 2]) -> f64 {
        match &self.boundaries[face - 1] {
            ScalarField::Constant(v) => *v,
            ScalarField::CornerRamp { cap, rate, peak } => {
                let ramp = ScalarField::ramp_value(*cap, *rate, t);
                if self.dim == 1 {
                    return ramp;
                }
                let lo = self.lower[geom.free_axis];
                let hi = self.upper[geom.free_axis];
                let frac = (x[geom.free_axis] - lo) / (hi - lo);
                match peak {
                    RampPeak::Start => ramp * (1.0 - frac),
                    RampPeak::End => ramp * frac,
                }
            }
            ScalarField::Table(tab) => tab.eval(t, x)[0],
        }
    }

    pub fn eval_velocity(&self, t: f64, x: &[f64; 2]) -> [f64; 2] {
        self.velocity.eval(t, x, self.horizon)
    }

    pub fn eval_diffusivity(&self, t: f64, x: &[f64; 2]) -> f64 {
        self.diffusivity.eval(t, x)
    }

    pub fn eval_ic(&self, x: &[f64; 2]) -> f64 {
        self.initial.eval(0.0, x)
    }

    pub fn eval_desired(&self, t: f64, x: &[f64; 2]) -> f64 {
        self.desired.eval(t, x)
    }

    pub fn safe_center(&self) -> [f64; 2] {
        [
            0.5 * (self.safe_lower[0] + self.safe_upper[0]),
            0.5 * (self.safe_lower[1] + self.safe_upper[1]),
        ]
    }

    pub fn point_in_safe_zone(&self, x: &[f64; 2]) -> bool {
        (0..self.dim).all(|a| x[a] >= self.safe_lower[a] && x[a] <= self.safe_upper[a])
    }

    /// Check all structural invariants. Called by the scenario loader and by
    /// run-configuration validation before training starts.
    pub fn validate(&self) -> Result<()> {
        if self.dim != 1 && self.dim != 2 {
            return Err(Error::config(format!(
                "spatial dimension must be 1 or 2, got {}",
                self.dim
            )));
        }
        if self.horizon <= 0.0 || !self.horizon.is_finite() {
            return Err(Error::config("horizon must be positive and finite"));
        }
        if self.source_length_scale <= 0.0 {
            return Err(Error::config("source_length_scale must be positive"));
        }
        for a in 0..self.dim {
            if !(self.upper[a] > self.lower[a]) {
                return Err(Error::config(format!("domain axis {a} has non-positive extent")));
            }
            let clearance_lo = self.safe_lower[a] - self.lower[a];
            let clearance_hi = self.upper[a] - self.safe_upper[a];
            if self.safe_upper[a] <= self.safe_lower[a] {
                return Err(Error::config(format!("safe zone axis {a} has non-positive extent")));
            }
            if clearance_lo <= 0.0 || clearance_hi <= 0.0 {
                return Err(Error::config(
                    "safe zone must lie strictly inside the domain with positive clearance",
                ));
            }
        }
        if self.boundaries.len() != self.n_faces() {
            return Err(Error::config(format!(
                "expected {} boundary profiles, got {}",
                self.n_faces(),
                self.boundaries.len()
            )));
        }
        if matches!(self.diffusivity, ScalarField::CornerRamp { .. })
            || matches!(self.initial, ScalarField::CornerRamp { .. })
            || matches!(self.desired, ScalarField::CornerRamp { .. })
        {
            return Err(Error::config(
                "corner-ramp profiles are only valid as boundary conditions",
            ));
        }
        self.curve.validate()?;

        self.check_sampled_fields()?;
        self.check_compatibility()?;
        self.check_curve_clearance()?;
        Ok(())
    }

    /// κ > 0 and finite everywhere sampled; IC finite.
    fn check_sampled_fields(&self) -> Result<()> {
        for &t in &linspace(0.0, self.horizon, 7) {
            for x in self.domain_samples(9) {
                let kappa = self.eval_diffusivity(t, &x);
                if !(kappa > 0.0) || !kappa.is_finite() {
                    return Err(Error::config(format!(
                        "diffusivity must be positive and finite; got {kappa} at t={t}, x={x:?}"
                    )));
                }
                let u = self.eval_velocity(t, &x);
                if !u[0].is_finite() || !u[1].is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("velocity at t={t}, x={x:?}"),
                    });
                }
            }
        }
        for x in self.domain_samples(9) {
            if !self.eval_ic(&x).is_finite() {
                return Err(Error::NonFinite {
                    context: format!("initial condition at x={x:?}"),
                });
            }
        }
        Ok(())
    }

    /// At t = 0 every boundary profile must match the initial condition on
    /// its face within `COMPAT_TOL`.
    fn check_compatibility(&self) -> Result<()> {
        for face in 1..=self.n_faces() {
            for x in self.face_samples(face, 33)? {
                let g = self.eval_bc(face, 0.0, &x)?;
                if !g.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("boundary condition on face {face} at x={x:?}"),
                    });
                }
                let g0 = self.eval_ic(&x);
                if (g - g0).abs() > COMPAT_TOL {
                    return Err(Error::config(format!(
                        "boundary face {face} is incompatible with the initial condition at x={x:?}: |{g} - {g0}| > {COMPAT_TOL}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The curve must stay inside the domain and outside the safe zone,
    /// checked on a dense parameter grid.
    fn check_curve_clearance(&self) -> Result<()> {
        for i in 0..10_000 {
            let xi = i as f64 / 9_999.0;
            let p = self.curve.eval(xi);
            for a in 0..self.dim {
                if p[a] < self.lower[a] || p[a] > self.upper[a] {
                    return Err(Error::config(format!(
                        "curve leaves the domain at xi={xi}: {p:?}"
                    )));
                }
            }
            if self.point_in_safe_zone(&p) {
                return Err(Error::config(format!(
                    "curve enters the safe zone at xi={xi}: {p:?}"
                )));
            }
        }
        Ok(())
    }

    fn domain_samples(&self, per_axis: usize) -> Vec<[f64; 2]> {
        let xs = linspace(self.lower[0], self.upper[0], per_axis);
        if self.dim == 1 {
            return xs.iter().map(|&x| [x, 0.0]).collect();
        }
        let ys = linspace(self.lower[1], self.upper[1], per_axis);
        let mut out = Vec::with_capacity(xs.len() * ys.len());
        for &x in &xs {
            for &y in &ys {
                out.push([x, y]);
            }
        }
        out
    }

    /// Evenly spaced points on a face (a single point in 1-D).
    pub fn face_samples(&self, face: usize, count: usize) -> Result<Vec<[f64; 2]>> {
        let geom = self.face_geometry(face)?;
        if self.dim == 1 {
            return Ok(vec![[geom.fixed_value, 0.0]]);
        }
        let lo = self.lower[geom.free_axis];
        let hi = self.upper[geom.free_axis];
        Ok(linspace(lo, hi, count)
            .into_iter()
            .map(|s| {
                let mut x = [0.0; 2];
                x[geom.fixed_axis] = geom.fixed_value;
                x[geom.free_axis] = s;
                x
            })
            .collect())
    }
}

/// The built-in reference scenario: unit-square domain [-1,1]^2, horizon 1,
/// zero initial state, a concentration ramp entering at the top-left corner
/// through the top and left faces, a rotating unit inflow that turns from
/// [1,0] to [0,-1] over the first half of the horizon, a 0.2-side safe zone
/// at [-0.4, 0.3], and two robots on a circle of radius 0.4 around it.
pub fn benchmark_scenario() -> ScenarioConfig {
    let horizon = 1.0;
    ScenarioConfig {
        dim: 2,
        lower: [-1.0, -1.0],
        upper: [1.0, 1.0],
        horizon,
        diffusivity: ScalarField::Constant(1.0),
        velocity: VelocityField::RotatingUnit {
            turn_fraction: 0.5,
            total_turn_rad: -FRAC_PI_2,
        },
        initial: ScalarField::Constant(0.0),
        boundaries: vec![
            ScalarField::Constant(0.0),
            ScalarField::Constant(0.0),
            // Top face: peak min(1, 2t/T) at the corner with the left face.
            ScalarField::CornerRamp {
                cap: 1.0,
                rate: 2.0 / horizon,
                peak: RampPeak::Start,
            },
            // Left face: mirrored profile, peak at the same corner.
            ScalarField::CornerRamp {
                cap: 1.0,
                rate: 2.0 / horizon,
                peak: RampPeak::End,
            },
        ],
        safe_lower: [-0.5, 0.2],
        safe_upper: [-0.3, 0.4],
        desired: ScalarField::Constant(0.0),
        curve: CurveDescriptor::circle([-0.4, 0.3], 0.4),
        robot_count: 2,
        source_length_scale: 0.04,
    }
}

/// `count` evenly spaced values from `a` to `b` with both endpoints exact.
pub fn linspace(a: f64, b: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![a];
    }
    (0..count)
        .map(|i| {
            if i == count - 1 {
                b
            } else {
                a + (b - a) * i as f64 / (count - 1) as f64
            }
        })
        .collect()
}
