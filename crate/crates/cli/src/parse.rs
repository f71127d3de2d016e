//! Parsers for the small textual arguments.

use std::path::Path;

use canonvo::appearance::{AffineModel, AppearanceTransform};
use canonvo::pipeline::FrameSource;
use canonvo::se3::Pose;
use nalgebra::Vector3;

fn numbers(text: &str, count: usize, what: &str) -> Result<Vec<f64>, String> {
    let values = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| format!("{what}: {s:?} is not a number")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != count || values.iter().any(|v| !v.is_finite()) {
        return Err(format!("{what}: expected {count} finite comma-separated numbers, got {text:?}"));
    }
    Ok(values)
}

/// `identity`, `affine:A,B`, `affine:meta` (per-frame parameters recorded
/// with the condition) or `external:DIR`. An external directory may be the
/// frame directory itself or a root holding `<condition>-to-<canonical>/`.
pub fn transform(spec: &str, source: &dyn FrameSource, canonical: &str) -> Result<AppearanceTransform, String> {
    if spec == "identity" {
        return Ok(AppearanceTransform::Identity);
    }
    if let Some(rest) = spec.strip_prefix("affine:") {
        if rest == "meta" {
            let table = source
                .affine_params()
                .ok_or_else(|| format!("condition {:?} records no affine parameters", source.condition()))?;
            return Ok(AppearanceTransform::AffineCorrection(AffineModel::PerFrame(table)));
        }
        let v = numbers(rest, 2, "affine transform")?;
        return Ok(AppearanceTransform::affine(v[0], v[1]));
    }
    if let Some(dir) = spec.strip_prefix("external:") {
        let root = Path::new(dir);
        let nested = AppearanceTransform::external(root, source.condition(), canonical);
        return match &nested {
            AppearanceTransform::ExternalPrecomputed { dir } if dir.is_dir() => Ok(nested),
            _ if root.is_dir() => Ok(AppearanceTransform::ExternalPrecomputed { dir: root.to_path_buf() }),
            _ => Err(format!("external transform directory {dir:?} does not exist")),
        };
    }
    Err(format!(
        "unknown transform {spec:?}; expected identity, affine:A,B, affine:meta or external:DIR"
    ))
}

/// `tx,ty,tz,qx,qy,qz,qw`.
pub fn pose(text: &str) -> Result<Pose, String> {
    let v = numbers(text, 7, "initial pose")?;
    let q = [v[3], v[4], v[5], v[6]];
    if q.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-9 {
        return Err("initial pose: quaternion must be non-zero".into());
    }
    Ok(Pose::from_quaternion_xyzw(Vector3::new(v[0], v[1], v[2]), q))
}

/// `NAME=A,B`.
pub fn affine_condition(text: &str) -> Result<(String, f64, f64), String> {
    let (name, params) = text
        .split_once('=')
        .ok_or_else(|| format!("affine condition {text:?}: expected NAME=A,B"))?;
    if name.is_empty() || name.contains(['/', '\\']) {
        return Err(format!("affine condition {text:?}: invalid name"));
    }
    let v = numbers(params, 2, "affine condition")?;
    Ok((name.to_string(), v[0], v[1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_poses_and_conditions() {
        let p = pose("1,2,3,0,0,0,1").unwrap();
        assert_eq!(p.translation(), &Vector3::new(1.0, 2.0, 3.0));
        assert!(pose("1,2,3,0,0,0,0").is_err());
        assert!(pose("1,2,3").is_err());
        assert_eq!(affine_condition("dim=0.5,-0.1").unwrap(), ("dim".to_string(), 0.5, -0.1));
        assert!(affine_condition("dim").is_err());
        assert!(affine_condition("a/b=1,0").is_err());
        assert!(numbers("1,nan", 2, "x").is_err());
    }
}
