//! Training point sets: interior test-function centers on a uniform
//! space-time lattice (supports spanning two cells per dimension, so
//! neighboring hats overlap and share quadrature cells), plus point
//! lattices for the initial condition, the boundary faces, and the safe
//! zone.

use crate::error::{Error, Result};
use crate::scenario::{linspace, ScenarioConfig};
use crate::weakform::TestFunction;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Point counts per set. `interior_*` counts are lattice nodes per
/// dimension (n_v = interior_t · Π interior_x); `bc_edge` points are placed
/// along each face and `bc_t` along time; `safe_*` sample the safe zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub interior_t: usize,
    pub interior_x: [usize; 2],
    pub ic_x: [usize; 2],
    pub bc_t: usize,
    pub bc_edge: usize,
    pub safe_t: usize,
    pub safe_x: [usize; 2],
}

impl GridSpec {
    /// Coarse reference grid: 25 time and 20 spatial samples per axis.
    pub fn paper_small() -> Self {
        GridSpec {
            interior_t: 25,
            interior_x: [20, 20],
            ic_x: [20, 20],
            bc_t: 25,
            bc_edge: 20,
            safe_t: 25,
            safe_x: [4, 4],
        }
    }

    /// Dense reference grid: 50 time and 40 spatial samples per axis.
    pub fn paper_full() -> Self {
        GridSpec {
            interior_t: 50,
            interior_x: [40, 40],
            ic_x: [40, 40],
            bc_t: 50,
            bc_edge: 40,
            safe_t: 50,
            safe_x: [4, 4],
        }
    }
}

/// How the interior test functions are placed.
#[derive(Debug, Clone)]
pub enum InteriorLayout {
    /// Centers on the uniform lattice (cells shared between neighbors).
    Lattice,
    /// Random centers at least one half-width from the space-time boundary.
    Scattered(Vec<(f64, [f64; 2])>),
}

#[derive(Debug, Clone)]
pub struct TrainingGrid {
    pub dim: usize,
    pub spec: GridSpec,
    pub layout: InteriorLayout,
    /// Interior lattice origin and spacing; centers sit at
    /// `t0 + i·ht` for i in 1..=interior_t (same per spatial axis).
    pub t0: f64,
    pub ht: f64,
    pub x0: [f64; 2],
    pub hx: [f64; 2],
    pub ic_points: Vec<[f64; 2]>,
    pub ic_targets: Vec<f64>,
    /// (face, t, x, g_i(t, x)) per boundary training point.
    pub bc_points: Vec<(usize, f64, [f64; 2], f64)>,
    pub safe_points: Vec<(f64, [f64; 2])>,
    pub safe_targets: Vec<f64>,
    /// Time samples for the collision penalty mean.
    pub collision_times: Vec<f64>,
}

impl TrainingGrid {
    pub fn build(scenario: &ScenarioConfig, spec: GridSpec) -> Result<Self> {
        Self::build_with_layout(scenario, spec, None)
    }

    /// Random-sampling variant: interior centers drawn uniformly from the
    /// margin-respecting box instead of the lattice.
    pub fn build_random(scenario: &ScenarioConfig, spec: GridSpec, seed: u64) -> Result<Self> {
        Self::build_with_layout(scenario, spec, Some(seed))
    }

    fn build_with_layout(
        scenario: &ScenarioConfig,
        spec: GridSpec,
        random_seed: Option<u64>,
    ) -> Result<Self> {
        let dim = scenario.dim;
        let ht = scenario.horizon / (spec.interior_t + 1) as f64;
        let mut hx = [0.0; 2];
        for a in 0..dim {
            hx[a] = (scenario.upper[a] - scenario.lower[a]) / (spec.interior_x[a] + 1) as f64;
        }

        let layout = match random_seed {
            None => InteriorLayout::Lattice,
            Some(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n_v = spec.interior_t * (0..dim).map(|a| spec.interior_x[a]).product::<usize>();
                let centers = (0..n_v)
                    .map(|_| {
                        let t = rng.gen_range(ht..scenario.horizon - ht);
                        let mut x = [0.0; 2];
                        for a in 0..dim {
                            x[a] = rng.gen_range(scenario.lower[a] + hx[a]..scenario.upper[a] - hx[a]);
                        }
                        (t, x)
                    })
                    .collect();
                InteriorLayout::Scattered(centers)
            }
        };

        // Initial-condition lattice over the closed domain at t = 0.
        let mut ic_points = Vec::new();
        let xs = linspace(scenario.lower[0], scenario.upper[0], spec.ic_x[0]);
        if dim == 1 {
            ic_points.extend(xs.iter().map(|&x| [x, 0.0]));
        } else {
            let ys = linspace(scenario.lower[1], scenario.upper[1], spec.ic_x[1]);
            for &x in &xs {
                for &y in &ys {
                    ic_points.push([x, y]);
                }
            }
        }
        let ic_targets: Vec<f64> = ic_points.iter().map(|x| scenario.eval_ic(x)).collect();

        // Boundary lattices: time × edge per face.
        let bc_times = linspace(0.0, scenario.horizon, spec.bc_t);
        let mut bc_points = Vec::new();
        for face in 1..=scenario.n_faces() {
            let samples = scenario.face_samples(face, spec.bc_edge)?;
            for &t in &bc_times {
                for x in &samples {
                    let target = scenario.eval_bc(face, t, x)?;
                    bc_points.push((face, t, *x, target));
                }
            }
        }

        // Safe-zone lattice.
        let safe_times = linspace(0.0, scenario.horizon, spec.safe_t);
        let sxs = linspace(scenario.safe_lower[0], scenario.safe_upper[0], spec.safe_x[0]);
        let mut safe_points = Vec::new();
        for &t in &safe_times {
            if dim == 1 {
                for &x in &sxs {
                    safe_points.push((t, [x, 0.0]));
                }
            } else {
                let sys = linspace(scenario.safe_lower[1], scenario.safe_upper[1], spec.safe_x[1]);
                for &x in &sxs {
                    for &y in &sys {
                        safe_points.push((t, [x, y]));
                    }
                }
            }
        }
        let safe_targets: Vec<f64> = safe_points
            .iter()
            .map(|(t, x)| scenario.eval_desired(*t, x))
            .collect();

        let grid = TrainingGrid {
            dim,
            spec,
            layout,
            t0: 0.0,
            ht,
            x0: scenario.lower,
            hx,
            ic_points,
            ic_targets,
            bc_points,
            safe_points,
            safe_targets,
            collision_times: safe_times,
        };
        grid.check_invariants(scenario)?;
        Ok(grid)
    }

    fn check_invariants(&self, scenario: &ScenarioConfig) -> Result<()> {
        for k in 0..self.n_interior() {
            let tf = self.test_function(k);
            let inside = tf.center_t - tf.half_width_t >= -1e-12
                && tf.center_t + tf.half_width_t <= scenario.horizon + 1e-12
                && (0..self.dim).all(|a| {
                    tf.center_x[a] - tf.half_width_x[a] >= scenario.lower[a] - 1e-12
                        && tf.center_x[a] + tf.half_width_x[a] <= scenario.upper[a] + 1e-12
                });
            if !inside {
                return Err(Error::config(format!(
                    "test-function support {k} leaves the space-time box"
                )));
            }
        }
        for (t, x) in &self.safe_points {
            if !scenario.point_in_safe_zone(x) || *t < 0.0 || *t > scenario.horizon {
                return Err(Error::config("safe-zone point outside the safe zone"));
            }
        }
        Ok(())
    }

    /// Number of interior test functions n_v.
    pub fn n_interior(&self) -> usize {
        match &self.layout {
            InteriorLayout::Lattice => {
                self.spec.interior_t
                    * (0..self.dim)
                        .map(|a| self.spec.interior_x[a])
                        .product::<usize>()
            }
            InteriorLayout::Scattered(centers) => centers.len(),
        }
    }

    pub fn n_ic(&self) -> usize {
        self.ic_points.len()
    }

    pub fn n_bc(&self) -> usize {
        self.bc_points.len()
    }

    pub fn n_safe(&self) -> usize {
        self.safe_points.len()
    }

    /// Center of interior test function `k` (lattice order: time-major,
    /// then x1, then x2).
    pub fn interior_center(&self, k: usize) -> (f64, [f64; 2]) {
        match &self.layout {
            InteriorLayout::Lattice => {
                let (nx1, nx2) = (
                    self.spec.interior_x[0],
                    if self.dim == 2 { self.spec.interior_x[1] } else { 1 },
                );
                let iy = k % nx2;
                let ix = (k / nx2) % nx1;
                let it = k / (nx1 * nx2);
                let mut x = [0.0; 2];
                x[0] = self.x0[0] + (ix + 1) as f64 * self.hx[0];
                if self.dim == 2 {
                    x[1] = self.x0[1] + (iy + 1) as f64 * self.hx[1];
                }
                (self.t0 + (it + 1) as f64 * self.ht, x)
            }
            InteriorLayout::Scattered(centers) => centers[k],
        }
    }

    /// The hat test function at interior center `k`; half-widths equal the
    /// lattice spacing per dimension.
    pub fn test_function(&self, k: usize) -> TestFunction {
        let (t, x) = self.interior_center(k);
        TestFunction::new(self.dim, t, x, self.ht, self.hx)
    }
}
