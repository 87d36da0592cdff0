//! The constraint curve the robots move on: a simple differentiable map
//! from [0, 1] into the domain, with its first derivative.

use crate::error::{Error, Result};
use std::f64::consts::TAU;

#[derive(Debug, Clone)]
pub enum CurveDescriptor {
    Circle { center: [f64; 2], radius: f64 },
    /// Piecewise-linear parametric table; `params` strictly increasing and
    /// spanning [0, 1]. The derivative is the segment slope (left segment
    /// at interior knots).
    Table {
        params: Vec<f64>,
        points: Vec<[f64; 2]>,
    },
}

impl CurveDescriptor {
    pub fn circle(center: [f64; 2], radius: f64) -> Self {
        CurveDescriptor::Circle { center, radius }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CurveDescriptor::Circle { radius, .. } => {
                if *radius <= 0.0 {
                    return Err(Error::config("curve radius must be positive"));
                }
            }
            CurveDescriptor::Table { params, points } => {
                if params.len() != points.len() {
                    return Err(Error::config("curve table: params/points length mismatch"));
                }
                if params.len() < 2 {
                    return Err(Error::config("curve table needs at least two points"));
                }
                if params[0] != 0.0 || *params.last().unwrap() != 1.0 {
                    return Err(Error::config("curve table params must span [0, 1]"));
                }
                if params.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::config("curve table params must be strictly increasing"));
                }
            }
        }
        Ok(())
    }

    /// Position on the curve at parameter `xi` (clamped to [0, 1]).
    pub fn eval(&self, xi: f64) -> [f64; 2] {
        let xi = xi.clamp(0.0, 1.0);
        match self {
            CurveDescriptor::Circle { center, radius } => {
                let angle = TAU * xi;
                [
                    center[0] + radius * angle.cos(),
                    center[1] + radius * angle.sin(),
                ]
            }
            CurveDescriptor::Table { params, points } => {
                let (i, f) = locate(params, xi);
                let a = points[i];
                let b = points[i + 1];
                [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]
            }
        }
    }

    /// First derivative dγ/dξ.
    pub fn deriv(&self, xi: f64) -> [f64; 2] {
        let xi = xi.clamp(0.0, 1.0);
        match self {
            CurveDescriptor::Circle { radius, .. } => {
                let angle = TAU * xi;
                [-TAU * radius * angle.sin(), TAU * radius * angle.cos()]
            }
            CurveDescriptor::Table { params, points } => {
                let (i, _) = locate(params, xi);
                let dp = params[i + 1] - params[i];
                [
                    (points[i + 1][0] - points[i][0]) / dp,
                    (points[i + 1][1] - points[i][1]) / dp,
                ]
            }
        }
    }
}

fn locate(params: &[f64], xi: f64) -> (usize, f64) {
    let last = params.len() - 1;
    if xi >= params[last] {
        return (last - 1, 1.0);
    }
    let i = params.partition_point(|&p| p <= xi) - 1;
    (i, (xi - params[i]) / (params[i + 1] - params[i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_geometry() {
        let c = CurveDescriptor::circle([-0.4, 0.3], 0.4);
        let p0 = c.eval(0.0);
        assert!((p0[0] - 0.0).abs() < 1e-15 && (p0[1] - 0.3).abs() < 1e-15);
        let p_half = c.eval(0.5);
        assert!((p_half[0] + 0.8).abs() < 1e-12);
        // |dγ/dξ| = 2πr everywhere on a circle.
        for i in 0..20 {
            let d = c.deriv(i as f64 / 19.0);
            let norm = (d[0] * d[0] + d[1] * d[1]).sqrt();
            assert!((norm - TAU * 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn table_interpolation_and_derivative() {
        let c = CurveDescriptor::Table {
            params: vec![0.0, 0.5, 1.0],
            points: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 2.0]],
        };
        c.validate().unwrap();
        assert_eq!(c.eval(0.25), [0.5, 0.0]);
        assert_eq!(c.deriv(0.25), [2.0, 0.0]);
        assert_eq!(c.eval(0.75), [1.0, 1.0]);
        assert_eq!(c.deriv(0.75), [0.0, 4.0]);
    }
}
