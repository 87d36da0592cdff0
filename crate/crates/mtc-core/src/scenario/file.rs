//! Scenario files: a TOML schema mirroring `ScenarioConfig`.
//! See `docs/scenario-format.md` for the documented schema.

use super::{CurveDescriptor, RampPeak, ScalarField, ScenarioConfig, SpaceTimeTable, VelocityField};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct ScenarioDto {
    dim: usize,
    horizon: f64,
    domain: BoxDto,
    safe_zone: BoxDto,
    robot_count: usize,
    source_length_scale: f64,
    diffusivity: FieldDto,
    velocity: FieldDto,
    initial: FieldDto,
    desired: FieldDto,
    curve: CurveDto,
    #[serde(rename = "boundary")]
    boundaries: Vec<BoundaryDto>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BoxDto {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldDto {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    value: Option<toml::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    turn_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    total_turn_deg: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BoundaryDto {
    face: usize,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    peak: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    file: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveDto {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    center: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    params: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    points: Option<Vec<Vec<f64>>>,
}

fn to_point(v: &[f64], dim: usize, what: &str) -> Result<[f64; 2]> {
    if v.len() != dim {
        return Err(Error::config(format!(
            "{what} must have {dim} components, got {}",
            v.len()
        )));
    }
    Ok([v[0], if dim == 2 { v[1] } else { 0.0 }])
}

fn scalar_field(dto: &FieldDto, dim: usize, base: &Path, what: &str) -> Result<ScalarField> {
    match dto.kind.as_str() {
        "constant" => {
            let v = dto
                .value
                .as_ref()
                .and_then(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)))
                .ok_or_else(|| Error::config(format!("{what}: constant field needs `value`")))?;
            Ok(ScalarField::Constant(v))
        }
        "table" => {
            let file = dto
                .file
                .as_ref()
                .ok_or_else(|| Error::config(format!("{what}: table field needs `file`")))?;
            Ok(ScalarField::Table(SpaceTimeTable::from_csv(
                &base.join(file),
                dim,
                1,
            )?))
        }
        other => Err(Error::config(format!("{what}: unknown field kind `{other}`"))),
    }
}

fn velocity_field(dto: &FieldDto, dim: usize, base: &Path) -> Result<VelocityField> {
    match dto.kind.as_str() {
        "constant" => {
            let arr = dto
                .value
                .as_ref()
                .and_then(|v| v.as_array())
                .ok_or_else(|| Error::config("velocity: constant field needs array `value`"))?;
            let comps: Vec<f64> = arr
                .iter()
                .map(|v| {
                    v.as_float()
                        .or_else(|| v.as_integer().map(|i| i as f64))
                        .ok_or_else(|| Error::config("velocity: non-numeric component"))
                })
                .collect::<Result<_>>()?;
            Ok(VelocityField::Constant(to_point(&comps, dim, "velocity")?))
        }
        "rotating-unit" => Ok(VelocityField::RotatingUnit {
            turn_fraction: dto.turn_fraction.unwrap_or(0.5),
            total_turn_rad: dto.total_turn_deg.unwrap_or(-90.0).to_radians(),
        }),
        "table" => {
            let file = dto
                .file
                .as_ref()
                .ok_or_else(|| Error::config("velocity: table field needs `file`"))?;
            Ok(VelocityField::Table(SpaceTimeTable::from_csv(
                &base.join(file),
                dim,
                dim,
            )?))
        }
        other => Err(Error::config(format!("velocity: unknown field kind `{other}`"))),
    }
}

/// Load and validate a scenario from a TOML file. Table CSV paths are
/// resolved relative to the scenario file's directory.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    let dto: ScenarioDto = toml::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let dim = dto.dim;

    let mut boundaries = vec![None; 2 * dim];
    for b in &dto.boundaries {
        if b.face == 0 || b.face > 2 * dim {
            return Err(Error::FaceIndexOutOfRange {
                index: b.face,
                count: 2 * dim,
            });
        }
        let profile = match b.kind.as_str() {
            "constant" => ScalarField::Constant(
                b.value
                    .ok_or_else(|| Error::config(format!("boundary {}: needs `value`", b.face)))?,
            ),
            "corner-ramp" => ScalarField::CornerRamp {
                cap: b.cap.unwrap_or(1.0),
                rate: b
                    .rate
                    .ok_or_else(|| Error::config(format!("boundary {}: needs `rate`", b.face)))?,
                peak: match b.peak.as_deref() {
                    Some("start") | None => RampPeak::Start,
                    Some("end") => RampPeak::End,
                    Some(other) => {
                        return Err(Error::config(format!(
                            "boundary {}: peak must be `start` or `end`, got `{other}`",
                            b.face
                        )))
                    }
                },
            },
            "table" => {
                let file = b
                    .file
                    .as_ref()
                    .ok_or_else(|| Error::config(format!("boundary {}: needs `file`", b.face)))?;
                ScalarField::Table(SpaceTimeTable::from_csv(&base.join(file), dim, 1)?)
            }
            other => {
                return Err(Error::config(format!(
                    "boundary {}: unknown kind `{other}`",
                    b.face
                )))
            }
        };
        if boundaries[b.face - 1].replace(profile).is_some() {
            return Err(Error::config(format!("boundary {} given twice", b.face)));
        }
    }
    let boundaries: Vec<ScalarField> = boundaries
        .into_iter()
        .enumerate()
        .map(|(i, b)| b.ok_or_else(|| Error::config(format!("boundary {} missing", i + 1))))
        .collect::<Result<_>>()?;

    let curve = match dto.curve.kind.as_str() {
        "circle" => CurveDescriptor::Circle {
            center: to_point(
                dto.curve
                    .center
                    .as_ref()
                    .ok_or_else(|| Error::config("curve: circle needs `center`"))?,
                dim.max(2),
                "curve center",
            )
            .or_else(|_| {
                to_point(dto.curve.center.as_ref().unwrap(), dim, "curve center")
            })?,
            radius: dto
                .curve
                .radius
                .ok_or_else(|| Error::config("curve: circle needs `radius`"))?,
        },
        "table" => CurveDescriptor::Table {
            params: dto
                .curve
                .params
                .clone()
                .ok_or_else(|| Error::config("curve: table needs `params`"))?,
            points: dto
                .curve
                .points
                .as_ref()
                .ok_or_else(|| Error::config("curve: table needs `points`"))?
                .iter()
                .map(|p| to_point(p, dim, "curve point"))
                .collect::<Result<_>>()?,
        },
        other => return Err(Error::config(format!("curve: unknown kind `{other}`"))),
    };

    let config = ScenarioConfig {
        dim,
        lower: to_point(&dto.domain.lower, dim, "domain lower")?,
        upper: to_point(&dto.domain.upper, dim, "domain upper")?,
        horizon: dto.horizon,
        diffusivity: scalar_field(&dto.diffusivity, dim, &base, "diffusivity")?,
        velocity: velocity_field(&dto.velocity, dim, &base)?,
        initial: scalar_field(&dto.initial, dim, &base, "initial")?,
        boundaries,
        safe_lower: to_point(&dto.safe_zone.lower, dim, "safe zone lower")?,
        safe_upper: to_point(&dto.safe_zone.upper, dim, "safe zone upper")?,
        desired: scalar_field(&dto.desired, dim, &base, "desired")?,
        curve,
        robot_count: dto.robot_count,
        source_length_scale: dto.source_length_scale,
    };
    config.validate()?;
    Ok(config)
}

/// Write a scenario to TOML. Tabulated fields are not serializable here;
/// scenarios using them must keep their CSV files alongside.
pub fn save_scenario(config: &ScenarioConfig, path: &Path) -> Result<()> {
    let dim = config.dim;
    let coords = |p: &[f64; 2]| p[..dim].to_vec();
    let scalar_dto = |f: &ScalarField, what: &str| -> Result<FieldDto> {
        match f {
            ScalarField::Constant(v) => Ok(FieldDto {
                kind: "constant".into(),
                value: Some(toml::Value::Float(*v)),
                file: None,
                turn_fraction: None,
                total_turn_deg: None,
            }),
            _ => Err(Error::config(format!(
                "{what}: only analytic fields can be written to a scenario file"
            ))),
        }
    };
    let velocity = match &config.velocity {
        VelocityField::Constant(u) => FieldDto {
            kind: "constant".into(),
            value: Some(toml::Value::Array(
                u[..dim].iter().map(|&c| toml::Value::Float(c)).collect(),
            )),
            file: None,
            turn_fraction: None,
            total_turn_deg: None,
        },
        VelocityField::RotatingUnit {
            turn_fraction,
            total_turn_rad,
        } => FieldDto {
            kind: "rotating-unit".into(),
            value: None,
            file: None,
            turn_fraction: Some(*turn_fraction),
            total_turn_deg: Some(total_turn_rad.to_degrees()),
        },
        VelocityField::Table(_) => {
            return Err(Error::config(
                "velocity: only analytic fields can be written to a scenario file",
            ))
        }
    };
    let boundaries = config
        .boundaries
        .iter()
        .enumerate()
        .map(|(i, b)| match b {
            ScalarField::Constant(v) => Ok(BoundaryDto {
                face: i + 1,
                kind: "constant".into(),
                value: Some(*v),
                cap: None,
                rate: None,
                peak: None,
                file: None,
            }),
            ScalarField::CornerRamp { cap, rate, peak } => Ok(BoundaryDto {
                face: i + 1,
                kind: "corner-ramp".into(),
                value: None,
                cap: Some(*cap),
                rate: Some(*rate),
                peak: Some(match peak {
                    RampPeak::Start => "start".into(),
                    RampPeak::End => "end".into(),
                }),
                file: None,
            }),
            ScalarField::Table(_) => Err(Error::config(
                "boundary tables cannot be written to a scenario file",
            )),
        })
        .collect::<Result<Vec<_>>>()?;
    let curve = match &config.curve {
        CurveDescriptor::Circle { center, radius } => CurveDto {
            kind: "circle".into(),
            center: Some(coords(center)),
            radius: Some(*radius),
            params: None,
            points: None,
        },
        CurveDescriptor::Table { params, points } => CurveDto {
            kind: "table".into(),
            center: None,
            radius: None,
            params: Some(params.clone()),
            points: Some(points.iter().map(|p| coords(p)).collect()),
        },
    };
    let dto = ScenarioDto {
        dim,
        horizon: config.horizon,
        domain: BoxDto {
            lower: coords(&config.lower),
            upper: coords(&config.upper),
        },
        safe_zone: BoxDto {
            lower: coords(&config.safe_lower),
            upper: coords(&config.safe_upper),
        },
        robot_count: config.robot_count,
        source_length_scale: config.source_length_scale,
        diffusivity: scalar_dto(&config.diffusivity, "diffusivity")?,
        velocity,
        initial: scalar_dto(&config.initial, "initial")?,
        desired: scalar_dto(&config.desired, "desired")?,
        curve,
        boundaries,
    };
    let text = toml::to_string_pretty(&dto)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::benchmark_scenario;

    #[test]
    fn benchmark_round_trips_through_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.toml");
        let sc = benchmark_scenario();
        save_scenario(&sc, &path).unwrap();
        let loaded = load_scenario(&path).unwrap();
        assert_eq!(loaded.dim, 2);
        assert_eq!(loaded.robot_count, 2);
        assert_eq!(loaded.source_length_scale, 0.04);
        // Spot-check evaluators agree.
        for &(t, x) in &[(0.2, [0.0, 1.0]), (0.7, [-1.0, 1.0])] {
            assert_eq!(
                sc.eval_bc(3, t, &x).unwrap(),
                loaded.eval_bc(3, t, &x).unwrap()
            );
        }
        let u_a = sc.eval_velocity(0.3, &[0.0, 0.0]);
        let u_b = loaded.eval_velocity(0.3, &[0.0, 0.0]);
        assert_eq!(u_a, u_b);
    }

    #[test]
    fn missing_boundary_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.toml");
        let text = r#"
dim = 1
horizon = 1.0
robot_count = 0
source_length_scale = 0.05
domain = { lower = [0.0], upper = [1.0] }
safe_zone = { lower = [0.4], upper = [0.6] }
[diffusivity]
kind = "constant"
value = 0.1
[velocity]
kind = "constant"
value = [0.0]
[initial]
kind = "constant"
value = 0.0
[desired]
kind = "constant"
value = 0.0
[curve]
kind = "table"
params = [0.0, 1.0]
points = [[0.1], [0.2]]
[[boundary]]
face = 1
kind = "constant"
value = 0.0
"#;
        std::fs::write(&path, text).unwrap();
        let err = load_scenario(&path).unwrap_err();
        assert!(err.to_string().contains("boundary 2 missing"), "{err}");
    }
}
