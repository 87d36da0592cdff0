//! Scalar and velocity field evaluators: built-in analytic forms or
//! tabulated space-time grids with multilinear interpolation.

use crate::error::{Error, Result};
use std::path::Path;

/// Which end of a boundary face carries the peak of a corner ramp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RampPeak {
    /// Peak at the lower-coordinate end of the face.
    Start,
    /// Peak at the upper-coordinate end.
    End,
}

/// Scalar field over space-time.
#[derive(Debug, Clone)]
pub enum ScalarField {
    Constant(f64),
    /// Boundary profile that ramps up at a corner as `min(cap, rate*t)` and
    /// decays linearly to zero toward the opposite end of the face. Only
    /// meaningful as a boundary condition.
    CornerRamp { cap: f64, rate: f64, peak: RampPeak },
    Table(SpaceTimeTable),
}

impl ScalarField {
    /// Evaluate at (t, x). `CornerRamp` cannot be evaluated without face
    /// geometry; boundary evaluation handles it in `ScenarioConfig::eval_bc`.
    pub fn eval(&self, t: f64, x: &[f64; 2]) -> f64 {
        match self {
            ScalarField::Constant(v) => *v,
            ScalarField::CornerRamp { .. } => {
                panic!("corner-ramp profile requires face geometry; use eval_bc")
            }
            ScalarField::Table(tab) => tab.eval(t, x)[0],
        }
    }

    pub fn ramp_value(cap: f64, rate: f64, t: f64) -> f64 {
        (rate * t).min(cap)
    }
}

/// Velocity field over space-time.
#[derive(Debug, Clone)]
pub enum VelocityField {
    Constant([f64; 2]),
    /// Unit vector whose direction turns linearly from angle 0 to
    /// `total_turn_rad` during the first `turn_fraction` of the horizon,
    /// then stays fixed.
    RotatingUnit {
        turn_fraction: f64,
        total_turn_rad: f64,
    },
    Table(SpaceTimeTable),
}

impl VelocityField {
    pub fn eval(&self, t: f64, x: &[f64; 2], horizon: f64) -> [f64; 2] {
        match self {
            VelocityField::Constant(u) => *u,
            VelocityField::RotatingUnit {
                turn_fraction,
                total_turn_rad,
            } => {
                let t_switch = turn_fraction * horizon;
                let angle = total_turn_rad * t.min(t_switch) / t_switch;
                [angle.cos(), angle.sin()]
            }
            VelocityField::Table(tab) => {
                let v = tab.eval(t, x);
                [v[0], if v.len() > 1 { v[1] } else { 0.0 }]
            }
        }
    }
}

/// Tabulated field on a regular (t, x1[, x2]) grid with multilinear
/// interpolation; queries outside the tabulated range are clamped.
#[derive(Debug, Clone)]
pub struct SpaceTimeTable {
    pub dim: usize,
    pub n_comp: usize,
    t_axis: Vec<f64>,
    x_axes: [Vec<f64>; 2],
    /// Row-major over (t, x1, x2, component).
    values: Vec<f64>,
}

fn axis_locate(axis: &[f64], q: f64) -> (usize, f64) {
    // Clamped bracketing: returns lower index and interpolation fraction.
    if axis.len() == 1 || q <= axis[0] {
        return (0, 0.0);
    }
    let last = axis.len() - 1;
    if q >= axis[last] {
        return (last - 1, 1.0);
    }
    let i = axis.partition_point(|&a| a <= q) - 1;
    let frac = (q - axis[i]) / (axis[i + 1] - axis[i]);
    (i, frac)
}

impl SpaceTimeTable {
    pub fn new(
        dim: usize,
        n_comp: usize,
        t_axis: Vec<f64>,
        x_axes: [Vec<f64>; 2],
        values: Vec<f64>,
    ) -> Result<Self> {
        let nx2 = if dim == 2 { x_axes[1].len() } else { 1 };
        let expect = t_axis.len() * x_axes[0].len() * nx2 * n_comp;
        if values.len() != expect {
            return Err(Error::Shape(format!(
                "table has {} values, expected {}",
                values.len(),
                expect
            )));
        }
        for axis in std::iter::once(&t_axis).chain(x_axes.iter().take(dim)) {
            if axis.is_empty() {
                return Err(Error::config("table axis is empty"));
            }
            if axis.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::config("table axis values must be strictly increasing"));
            }
        }
        Ok(Self {
            dim,
            n_comp,
            t_axis,
            x_axes,
            values,
        })
    }

    fn value_at(&self, it: usize, i1: usize, i2: usize) -> &[f64] {
        let nx1 = self.x_axes[0].len();
        let nx2 = if self.dim == 2 { self.x_axes[1].len() } else { 1 };
        let idx = ((it * nx1 + i1) * nx2 + i2) * self.n_comp;
        &self.values[idx..idx + self.n_comp]
    }

    pub fn eval(&self, t: f64, x: &[f64; 2]) -> Vec<f64> {
        let (it, ft) = axis_locate(&self.t_axis, t);
        let (i1, f1) = axis_locate(&self.x_axes[0], x[0]);
        let (i2, f2) = if self.dim == 2 {
            axis_locate(&self.x_axes[1], x[1])
        } else {
            (0, 0.0)
        };
        let it1 = (it + 1).min(self.t_axis.len() - 1);
        let j1 = (i1 + 1).min(self.x_axes[0].len() - 1);
        let j2 = if self.dim == 2 {
            (i2 + 1).min(self.x_axes[1].len() - 1)
        } else {
            0
        };
        let mut out = vec![0.0; self.n_comp];
        for c in 0..self.n_comp {
            let corner = |a: usize, b: usize, d: usize| self.value_at(a, b, d)[c];
            let lerp = |a: f64, b: f64, f: f64| a + f * (b - a);
            let c00 = lerp(corner(it, i1, i2), corner(it1, i1, i2), ft);
            let c10 = lerp(corner(it, j1, i2), corner(it1, j1, i2), ft);
            let c01 = lerp(corner(it, i1, j2), corner(it1, i1, j2), ft);
            let c11 = lerp(corner(it, j1, j2), corner(it1, j1, j2), ft);
            let a = lerp(c00, c10, f1);
            let b = lerp(c01, c11, f1);
            out[c] = lerp(a, b, f2);
        }
        out
    }

    /// Load from CSV with columns `t, x1[, x2], value...`. The rows must
    /// cover a complete regular grid (any row order).
    pub fn from_csv(path: &Path, dim: usize, n_comp: usize) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let n_coord = 1 + dim;
        let mut rows: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
            if record.len() != n_coord + n_comp {
                return Err(Error::parse(
                    path.display().to_string(),
                    format!(
                        "expected {} columns (t, x coords, values), found {}",
                        n_coord + n_comp,
                        record.len()
                    ),
                ));
            }
            let nums: Vec<f64> = record
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
                })
                .collect::<Result<_>>()?;
            rows.push((nums[..n_coord].to_vec(), nums[n_coord..].to_vec()));
        }
        if rows.is_empty() {
            return Err(Error::parse(path.display().to_string(), "no data rows"));
        }

        let mut axes: Vec<Vec<f64>> = vec![Vec::new(); n_coord];
        for (coords, _) in &rows {
            for (a, &v) in axes.iter_mut().zip(coords.iter()) {
                if !a.iter().any(|&x| x == v) {
                    a.push(v);
                }
            }
        }
        for a in &mut axes {
            a.sort_by(|p, q| p.partial_cmp(q).unwrap());
        }
        let sizes: Vec<usize> = axes.iter().map(|a| a.len()).collect();
        let total: usize = sizes.iter().product();
        if rows.len() != total {
            return Err(Error::parse(
                path.display().to_string(),
                format!(
                    "rows do not form a complete regular grid: {} rows vs {} grid points",
                    rows.len(),
                    total
                ),
            ));
        }

        let mut values = vec![f64::NAN; total * n_comp];
        for (coords, vals) in &rows {
            let mut idx = 0usize;
            for (a, &v) in axes.iter().zip(coords.iter()) {
                let i = a.iter().position(|&x| x == v).unwrap();
                idx = idx * a.len() + i;
            }
            values[idx * n_comp..(idx + 1) * n_comp].copy_from_slice(vals);
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::parse(
                path.display().to_string(),
                "duplicate grid points leave holes in the table",
            ));
        }

        let t_axis = axes[0].clone();
        let x_axes = if dim == 2 {
            [axes[1].clone(), axes[2].clone()]
        } else {
            [axes[1].clone(), Vec::new()]
        };
        SpaceTimeTable::new(dim, n_comp, t_axis, x_axes, values)
    }
}
