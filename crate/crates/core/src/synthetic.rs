//! Small textured Lambertian RGB-D scenes rendered by ray casting, with
//! ground-truth poses and several illumination regimes.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::camera::CameraIntrinsics;
use crate::imaging::{DepthMap, ImageBuffer, ValueMap};
use crate::se3::Pose;

/// Frames must have finite depth over at least this fraction of pixels.
pub const MIN_DEPTH_COVERAGE: f64 = 0.8;
const HIT_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("frame {frame} has finite depth on only {coverage:.3} of its pixels")]
    DegenerateScene { frame: usize, coverage: f64 },
    #[error("sequence {name:?} does not share the canonical trajectory")]
    TrajectoryMismatch { name: String },
}

/// Planar parallelogram `origin + s·edge_u + t·edge_v`, `s, t ∈ [0, 1]`,
/// visible from both sides.
#[derive(Clone, Debug, PartialEq)]
pub struct Quad {
    pub origin: Vector3<f64>,
    pub edge_u: Vector3<f64>,
    pub edge_v: Vector3<f64>,
    pub tint: [f64; 3],
    pub texture_seed: u64,
}

impl Quad {
    fn normal(&self) -> Vector3<f64> {
        self.edge_u.cross(&self.edge_v).normalize()
    }

    /// Ray parameter and surface coordinates (meters along each edge) of the
    /// hit, if any.
    #[inline]
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let n = self.edge_u.cross(&self.edge_v);
        let denom = n.dot(dir);
        if denom.abs() < HIT_EPS {
            return None;
        }
        let s = n.dot(&(self.origin - origin)) / denom;
        if s <= HIT_EPS {
            return None;
        }
        let rel = origin + dir * s - self.origin;
        let lu2 = self.edge_u.norm_squared();
        let lv2 = self.edge_v.norm_squared();
        let a = rel.dot(&self.edge_u) / lu2;
        let b = rel.dot(&self.edge_v) / lv2;
        ((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b)).then(|| (s, a * lu2.sqrt(), b * lv2.sqrt()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Light {
    Point { position: Vector3<f64>, intensity: f64 },
    /// `direction` points from the light into the scene.
    Directional { direction: Vector3<f64>, intensity: f64 },
}

impl Light {
    /// Irradiance factor at `x` with outward normal `n`.
    #[inline]
    fn shade(&self, x: &Vector3<f64>, n: &Vector3<f64>) -> f64 {
        match self {
            Light::Point { position, intensity } => {
                let l = position - x;
                let r2 = l.norm_squared();
                if r2 <= 0.0 {
                    return 0.0;
                }
                intensity * n.dot(&(l / r2.sqrt())).max(0.0) / r2
            }
            Light::Directional { direction, intensity } => intensity * n.dot(&(-direction.normalize())).max(0.0),
        }
    }
}

/// `mean + amplitude·sin(2π·frame/period + phase)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Oscillation {
    pub mean: f64,
    pub amplitude: f64,
    pub period_frames: f64,
    pub phase: f64,
}

impl Oscillation {
    pub fn constant(value: f64) -> Self {
        Oscillation {
            mean: value,
            amplitude: 0.0,
            period_frames: 1.0,
            phase: 0.0,
        }
    }

    pub fn at(&self, frame: usize) -> f64 {
        self.mean + self.amplitude * (2.0 * PI * frame as f64 / self.period_frames + self.phase).sin()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum IlluminationCondition {
    Static,
    /// Static render mapped through `a(t)·I + b(t)`, then clamped.
    GlobalAffine { gain: Oscillation, offset: Oscillation },
    /// The scene's lights are replaced by one point light circling `center`
    /// in a horizontal plane.
    LocalLight {
        center: Vector3<f64>,
        radius: f64,
        period_frames: f64,
        intensity: f64,
    },
    /// A point light at the camera center replaces the scene's lights and
    /// ambient term.
    Flashlight { intensity: f64, ambient: f64 },
}

impl fmt::Display for IlluminationCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            IlluminationCondition::Static => "static",
            IlluminationCondition::GlobalAffine { .. } => "global-affine",
            IlluminationCondition::LocalLight { .. } => "local-light",
            IlluminationCondition::Flashlight { .. } => "flashlight",
        };
        f.write_str(name)
    }
}

impl IlluminationCondition {
    pub fn affine(gain: f64, offset: f64) -> Self {
        IlluminationCondition::GlobalAffine {
            gain: Oscillation::constant(gain),
            offset: Oscillation::constant(offset),
        }
    }

    /// Fast global flicker around the static appearance: gain 1 ± 0.15 with
    /// a 7-frame period, offset ± 0.04 with an 11-frame period.
    pub fn flicker() -> Self {
        IlluminationCondition::GlobalAffine {
            gain: Oscillation {
                mean: 1.0,
                amplitude: 0.15,
                period_frames: 7.0,
                phase: 0.0,
            },
            offset: Oscillation {
                mean: 0.0,
                amplitude: 0.04,
                period_frames: 11.0,
                phase: 0.0,
            },
        }
    }

    /// Slowly drifting version of the bright condition `1.5·I + 0.1`.
    pub fn bright_drift() -> Self {
        IlluminationCondition::GlobalAffine {
            gain: Oscillation {
                mean: 1.5,
                amplitude: 0.1,
                period_frames: 41.0,
                phase: 0.0,
            },
            offset: Oscillation {
                mean: 0.1,
                amplitude: 0.03,
                period_frames: 29.0,
                phase: 0.0,
            },
        }
    }

    /// A point light circling above the desk once every 50 frames.
    pub fn circling_light() -> Self {
        IlluminationCondition::LocalLight {
            center: Vector3::new(0.0, -0.9, 2.0),
            radius: 0.8,
            period_frames: 50.0,
            intensity: 0.6,
        }
    }

    /// Camera-mounted light with little ambient fill.
    pub fn flashlight() -> Self {
        IlluminationCondition::Flashlight {
            intensity: 2.0,
            ambient: 0.1,
        }
    }

    /// `(a, b)` applied at `frame`, for the global-affine regime.
    pub fn affine_at(&self, frame: usize) -> Option<(f64, f64)> {
        match self {
            IlluminationCondition::GlobalAffine { gain, offset } => Some((gain.at(frame), offset.at(frame))),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub quads: Vec<Quad>,
    pub ambient: f64,
    pub lights: Vec<Light>,
    /// World-from-camera, one per frame.
    pub trajectory: Vec<Pose>,
    pub intrinsics: CameraIntrinsics,
    /// Coarsest texture cell size in meters.
    pub feature_size: f64,
    /// Albedo range the texture is mapped into before tinting.
    pub albedo_range: (f64, f64),
    /// Samples per pixel along each axis (box-filtered).
    pub samples_per_axis: usize,
    pub frame_rate: f64,
}

impl SceneSpec {
    /// Adds an axis-aligned box (before `yaw` about the vertical axis) as six quads.
    pub fn add_box(&mut self, center: Vector3<f64>, half: Vector3<f64>, yaw: f64, tint: [f64; 3], seed: u64) {
        let (s, c) = yaw.sin_cos();
        let rot = |v: Vector3<f64>| Vector3::new(c * v.x + s * v.z, v.y, -s * v.x + c * v.z);
        let ex = rot(Vector3::new(2.0 * half.x, 0.0, 0.0));
        let ey = Vector3::new(0.0, 2.0 * half.y, 0.0);
        let ez = rot(Vector3::new(0.0, 0.0, 2.0 * half.z));
        let lo = center - (ex + ey + ez) * 0.5;
        let faces = [
            (lo, ex, ey),
            (lo + ez, ex, ey),
            (lo, ez, ey),
            (lo + ex, ez, ey),
            (lo, ex, ez),
            (lo + ey, ex, ez),
        ];
        for (i, (origin, edge_u, edge_v)) in faces.into_iter().enumerate() {
            self.quads.push(Quad {
                origin,
                edge_u,
                edge_v,
                tint,
                texture_seed: seed.wrapping_mul(31).wrapping_add(i as u64),
            });
        }
    }

    /// Desk-scale room with three boxes, 256×192 at f = 200, and a `frames`
    /// long trajectory that moves forward about 1.6 m while swaying and yawing.
    pub fn desk(frames: usize, seed: u64) -> SceneSpec {
        let intrinsics = CameraIntrinsics::new(200.0, 200.0, 127.5, 95.5, 256, 192).expect("valid intrinsics");
        let mut spec = SceneSpec {
            quads: Vec::new(),
            ambient: 0.5,
            lights: vec![Light::Point {
                position: Vector3::new(0.2, -0.9, 1.2),
                intensity: 0.6,
            }],
            trajectory: desk_trajectory(frames),
            intrinsics,
            feature_size: 0.05,
            albedo_range: (0.12, 0.72),
            samples_per_axis: 2,
            frame_rate: 30.0,
        };
        let (x0, x1, y0, y1, z0, z1) = (-1.6, 1.6, -1.2, 0.9, -0.8, 3.4);
        let walls = [
            // back, front, left, right, floor, ceiling
            (Vector3::new(x0, y0, z1), Vector3::new(x1 - x0, 0.0, 0.0), Vector3::new(0.0, y1 - y0, 0.0), [0.95, 0.9, 0.85]),
            (Vector3::new(x0, y0, z0), Vector3::new(x1 - x0, 0.0, 0.0), Vector3::new(0.0, y1 - y0, 0.0), [0.9, 0.9, 0.9]),
            (Vector3::new(x0, y0, z0), Vector3::new(0.0, 0.0, z1 - z0), Vector3::new(0.0, y1 - y0, 0.0), [0.85, 0.95, 0.9]),
            (Vector3::new(x1, y0, z0), Vector3::new(0.0, 0.0, z1 - z0), Vector3::new(0.0, y1 - y0, 0.0), [0.9, 0.85, 0.95]),
            (Vector3::new(x0, y1, z0), Vector3::new(x1 - x0, 0.0, 0.0), Vector3::new(0.0, 0.0, z1 - z0), [0.8, 0.75, 0.7]),
            (Vector3::new(x0, y0, z0), Vector3::new(x1 - x0, 0.0, 0.0), Vector3::new(0.0, 0.0, z1 - z0), [0.95, 0.95, 0.95]),
        ];
        for (i, (origin, edge_u, edge_v, tint)) in walls.into_iter().enumerate() {
            spec.quads.push(Quad {
                origin,
                edge_u,
                edge_v,
                tint,
                texture_seed: seed.wrapping_mul(1000).wrapping_add(i as u64),
            });
        }
        spec.add_box(
            Vector3::new(-0.55, 0.55, 2.4),
            Vector3::new(0.3, 0.35, 0.3),
            0.35,
            [0.95, 0.7, 0.6],
            seed.wrapping_add(101),
        );
        spec.add_box(
            Vector3::new(0.6, 0.5, 2.9),
            Vector3::new(0.35, 0.4, 0.35),
            -0.26,
            [0.6, 0.8, 0.95],
            seed.wrapping_add(202),
        );
        spec.add_box(
            Vector3::new(0.1, -0.5, 3.0),
            Vector3::new(0.25, 0.2, 0.25),
            0.6,
            [0.75, 0.95, 0.65],
            seed.wrapping_add(303),
        );
        spec
    }

    /// Timestamp of frame `i` in seconds.
    pub fn timestamp(&self, i: usize) -> f64 {
        i as f64 / self.frame_rate
    }
}

fn desk_trajectory(frames: usize) -> Vec<Pose> {
    let denom = frames.saturating_sub(1).max(1) as f64;
    (0..frames)
        .map(|i| {
            let t = i as f64 / denom;
            let position = Vector3::new(
                0.2 * (2.0 * PI * t).sin(),
                -0.05 * (4.0 * PI * t).sin(),
                1.6 * t,
            );
            let yaw = 12f64.to_radians() * (2.0 * PI * t + 0.4).sin();
            let pitch = 2f64.to_radians() * (2.0 * PI * t).sin();
            let r = Pose::from_axis_angle(Vector3::y(), yaw, Vector3::zeros())
                * Pose::from_axis_angle(Vector3::x(), pitch, Vector3::zeros());
            Pose::new(*r.rotation(), position)
        })
        .collect()
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(seed ^ splitmix((ix as u64).wrapping_mul(0x1656_67B1) ^ (iy as u64).wrapping_mul(0x27D4_EB2F)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Smooth value noise in [0, 1] with unit cell size.
fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (tx, ty) = (fade(x - fx), fade(y - fy));
    let a = lattice(seed, ix, iy) + tx * (lattice(seed, ix + 1, iy) - lattice(seed, ix, iy));
    let b = lattice(seed, ix, iy + 1) + tx * (lattice(seed, ix + 1, iy + 1) - lattice(seed, ix, iy + 1));
    a + ty * (b - a)
}

/// Band-limited texture value in [0, 1] at surface coordinates in meters.
pub fn texture(seed: u64, s: f64, t: f64, feature_size: f64) -> f64 {
    let (x, y) = (s / feature_size, t / feature_size);
    let n = (value_noise(seed, x, y) + 0.5 * value_noise(seed ^ 0xA5A5, 2.0 * x + 0.37, 2.0 * y + 0.71)) / 1.5;
    (0.5 + 2.2 * (n - 0.5)).clamp(0.0, 1.0)
}

/// One rendered frame; images are 3-channel.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedFrame {
    pub frame_id: String,
    pub timestamp: f64,
    /// World-from-camera.
    pub pose: Pose,
    pub image: ImageBuffer,
    pub depth: DepthMap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedSequence {
    pub name: String,
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<RenderedFrame>,
    /// Per-frame `(a, b)` for the global-affine regime.
    pub affine: Option<Vec<(f64, f64)>>,
}

struct Hit<'a> {
    depth: f64,
    quad: &'a Quad,
    s: f64,
    t: f64,
}

fn cast<'a>(quads: &'a [Quad], origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit<'a>> {
    let mut best: Option<Hit> = None;
    for quad in quads {
        if let Some((depth, s, t)) = quad.intersect(origin, dir) {
            if best.as_ref().is_none_or(|b| depth < b.depth) {
                best = Some(Hit { depth, quad, s, t });
            }
        }
    }
    best
}

/// Per-frame lighting after the illumination condition is applied.
struct FrameLighting {
    ambient: f64,
    lights: Vec<Light>,
}

fn frame_lighting(spec: &SceneSpec, condition: &IlluminationCondition, frame: usize, camera: &Pose) -> FrameLighting {
    match condition {
        IlluminationCondition::Static | IlluminationCondition::GlobalAffine { .. } => FrameLighting {
            ambient: spec.ambient,
            lights: spec.lights.clone(),
        },
        IlluminationCondition::LocalLight {
            center,
            radius,
            period_frames,
            intensity,
        } => {
            let phase = 2.0 * PI * frame as f64 / period_frames;
            FrameLighting {
                ambient: spec.ambient,
                lights: vec![Light::Point {
                    position: center + Vector3::new(radius * phase.cos(), 0.0, radius * phase.sin()),
                    intensity: *intensity,
                }],
            }
        }
        IlluminationCondition::Flashlight { intensity, ambient } => FrameLighting {
            ambient: *ambient,
            lights: vec![Light::Point {
                position: *camera.translation(),
                intensity: *intensity,
            }],
        },
    }
}

/// Renders frame `index` of `spec` under `condition`.
pub fn render_frame(
    spec: &SceneSpec,
    condition: &IlluminationCondition,
    index: usize,
) -> Result<RenderedFrame, SceneError> {
    let k = &spec.intrinsics;
    let pose = spec.trajectory[index];
    let lighting = frame_lighting(spec, condition, index, &pose);
    let affine = condition.affine_at(index);
    let origin = *pose.translation();
    let rot = *pose.rotation();
    let n = spec.samples_per_axis.max(1);
    let (w, h) = (k.width, k.height);

    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|v| {
            let mut rgb = vec![0.0; w * 3];
            let mut depth = vec![0.0; w];
            for u in 0..w {
                let ray_at = |du: f64, dv: f64| {
                    k.backprojection_depth_jacobian(&Vector2::new(u as f64 + du, v as f64 + dv))
                        .unwrap_or_else(|_| Vector3::new((u as f64 + du - k.cu) / k.fu, (v as f64 + dv - k.cv) / k.fv, 1.0))
                };
                // Depth along the central ray; its z component is 1, so the
                // ray parameter is the camera-frame depth.
                let center = cast(&spec.quads, &origin, &(rot * ray_at(0.0, 0.0)));
                let center_quad = center.as_ref().map(|hit| hit.quad as *const Quad);
                depth[u] = center.map_or(0.0, |hit| hit.depth);
                // Pixels straddling two surfaces get no depth, like the holes a
                // depth sensor leaves at occlusion boundaries.
                let mut mixed = false;
                let mut acc = [0.0; 3];
                for sy in 0..n {
                    for sx in 0..n {
                        let off = |i: usize| (i as f64 + 0.5) / n as f64 - 0.5;
                        let dir = rot * ray_at(off(sx), off(sy));
                        let Some(hit) = cast(&spec.quads, &origin, &dir) else {
                            mixed = true;
                            continue;
                        };
                        mixed |= Some(hit.quad as *const Quad) != center_quad;
                        let x = origin + dir * hit.depth;
                        let mut normal = hit.quad.normal();
                        if normal.dot(&dir) > 0.0 {
                            normal = -normal;
                        }
                        let shading = lighting.ambient + lighting.lights.iter().map(|l| l.shade(&x, &normal)).sum::<f64>();
                        let albedo = {
                            let t = texture(hit.quad.texture_seed, hit.s, hit.t, spec.feature_size);
                            spec.albedo_range.0 + (spec.albedo_range.1 - spec.albedo_range.0) * t
                        };
                        for (c, a) in acc.iter_mut().enumerate() {
                            let mut value = (albedo * hit.quad.tint[c] * shading).clamp(0.0, 1.0);
                            if let Some((gain, offset)) = affine {
                                value = (gain * value + offset).clamp(0.0, 1.0);
                            }
                            *a += value;
                        }
                    }
                }
                for c in 0..3 {
                    rgb[u * 3 + c] = acc[c] / (n * n) as f64;
                }
                if mixed {
                    depth[u] = 0.0;
                }
            }
            (rgb, depth)
        })
        .collect();

    let mut data = Vec::with_capacity(w * h * 3);
    let mut depth = Vec::with_capacity(w * h);
    for (rgb, d) in rows {
        data.extend(rgb);
        depth.extend(d);
    }
    let image = ImageBuffer::new(w, h, 3, data).expect("rendered values lie in [0, 1]");
    let depth = ValueMap::from_values(w, h, depth).expect("sized from intrinsics");
    let coverage = depth.valid_fraction();
    if coverage < MIN_DEPTH_COVERAGE {
        return Err(SceneError::DegenerateScene { frame: index, coverage });
    }
    Ok(RenderedFrame {
        frame_id: format!("{index:06}"),
        timestamp: spec.timestamp(index),
        pose,
        image,
        depth,
    })
}

/// Renders the whole trajectory. Deterministic for a given spec and condition.
pub fn render_sequence(spec: &SceneSpec, condition: &IlluminationCondition) -> Result<RenderedSequence, SceneError> {
    render_named(spec, condition, &condition.to_string())
}

pub fn render_named(
    spec: &SceneSpec,
    condition: &IlluminationCondition,
    name: &str,
) -> Result<RenderedSequence, SceneError> {
    let frames = (0..spec.trajectory.len())
        .map(|i| render_frame(spec, condition, i))
        .collect::<Result<Vec<_>, _>>()?;
    let affine = matches!(condition, IlluminationCondition::GlobalAffine { .. })
        .then(|| (0..frames.len()).filter_map(|i| condition.affine_at(i)).collect());
    Ok(RenderedSequence {
        name: name.to_string(),
        intrinsics: spec.intrinsics,
        frames,
        affine,
    })
}

/// Input image under some condition and the canonical target at the same pose.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub condition: String,
    pub frame_id: String,
    pub pose: Pose,
    pub input: ImageBuffer,
    pub target: ImageBuffer,
}

/// Pairs each frame of every sequence in `others` with the canonical frame
/// at the same index; poses must match exactly.
pub fn pair_sequences(canonical: &RenderedSequence, others: &[RenderedSequence]) -> Result<Vec<TrainingPair>, SceneError> {
    let mut pairs = Vec::new();
    for seq in others {
        let same = seq.frames.len() == canonical.frames.len()
            && seq.frames.iter().zip(&canonical.frames).all(|(a, b)| a.pose == b.pose);
        if !same {
            return Err(SceneError::TrajectoryMismatch { name: seq.name.clone() });
        }
        for (input, target) in seq.frames.iter().zip(&canonical.frames) {
            pairs.push(TrainingPair {
                condition: seq.name.clone(),
                frame_id: input.frame_id.clone(),
                pose: input.pose,
                input: input.image.clone(),
                target: target.image.clone(),
            });
        }
    }
    Ok(pairs)
}

/// Renders `spec` under the canonical and every other named condition and
/// pairs the results.
pub fn make_training_pairs(
    spec: &SceneSpec,
    canonical: &IlluminationCondition,
    others: &[(String, IlluminationCondition)],
) -> Result<Vec<TrainingPair>, SceneError> {
    let target = render_named(spec, canonical, "canonical")?;
    let rendered = others
        .iter()
        .map(|(name, c)| render_named(spec, c, name))
        .collect::<Result<Vec<_>, _>>()?;
    pair_sequences(&target, &rendered)
}
