//! Independent reference implementations shared by the integration tests and
//! the acceptance harness.
#![allow(dead_code)]

use canonvo::camera::CameraIntrinsics;
use canonvo::imaging::{DepthMap, ImageBuffer};
use canonvo::keyframe::{Keyframe, KeyframeMap, KeyframeParams};
use canonvo::se3::{point_pose_jacobian, Pose, Twist};
use canonvo::tracker::{compute_residuals, GradientSource, TrackerConfig, TrackingFrame};
use nalgebra::{Matrix4, Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_twist(rng: &mut ChaCha8Rng, trans: f64, rot: f64) -> Twist {
    let mut v = Vector6::zeros();
    for i in 0..3 {
        v[i] = rng.random_range(-trans..trans);
        v[i + 3] = rng.random_range(-rot..rot);
    }
    Twist(v)
}

pub fn random_intrinsics(rng: &mut ChaCha8Rng, width: usize, height: usize) -> CameraIntrinsics {
    CameraIntrinsics::new(
        rng.random_range(150.0..260.0),
        rng.random_range(150.0..260.0),
        width as f64 / 2.0 + rng.random_range(-4.0..4.0),
        height as f64 / 2.0 + rng.random_range(-4.0..4.0),
        width,
        height,
    )
    .unwrap()
}

/// Smooth image made of a few random sinusoids (wavelengths 7 to 25 px).
pub fn bandlimited_image(rng: &mut ChaCha8Rng, width: usize, height: usize) -> ImageBuffer {
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let wavelength = rng.random_range(7.0..25.0);
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let k = std::f64::consts::TAU / wavelength;
            (k * angle.cos(), k * angle.sin(), rng.random_range(0.0..6.3), rng.random_range(0.04..0.1))
        })
        .collect();
    ImageBuffer::from_fn(width, height, 1, |u, v, _| {
        0.5 + waves
            .iter()
            .map(|(ku, kv, ph, a)| a * (ku * u as f64 + kv * v as f64 + ph).sin())
            .sum::<f64>()
    })
}

/// Central differences of `f` along each of the six twist directions,
/// perturbing on the left.
pub fn twist_fd<const R: usize>(pose: &Pose, h: f64, f: impl Fn(&Pose) -> nalgebra::SVector<f64, R>) -> nalgebra::SMatrix<f64, R, 6> {
    let mut out = nalgebra::SMatrix::<f64, R, 6>::zeros();
    for k in 0..6 {
        let mut d = Vector6::zeros();
        d[k] = h;
        let plus = f(&(Twist(d).exp() * *pose));
        let minus = f(&(Twist(-d).exp() * *pose));
        out.set_column(k, &((plus - minus) / (2.0 * h)));
    }
    out
}

pub fn fd_projection_jacobian(k: &CameraIntrinsics, p: &Vector3<f64>, h: f64) -> nalgebra::Matrix2x3<f64> {
    let mut out = nalgebra::Matrix2x3::zeros();
    for i in 0..3 {
        let mut dp = Vector3::zeros();
        dp[i] = h;
        let a = k.project(&(p + dp)).unwrap().0;
        let b = k.project(&(p - dp)).unwrap().0;
        out.set_column(i, &((a - b) / (2.0 * h)));
    }
    out
}

pub fn fd_backprojection_depth(k: &CameraIntrinsics, px: &Vector2<f64>, d: f64, h: f64) -> Vector3<f64> {
    (k.backproject(px, d + h).unwrap() - k.backproject(px, d - h).unwrap()) / (2.0 * h)
}

pub fn fd_point_pose_jacobian(pose: &Pose, p: &Vector3<f64>, h: f64) -> nalgebra::Matrix3x6<f64> {
    twist_fd::<3>(pose, h, |t| t.act(p))
}

/// Analytic point Jacobian, for comparison against [`fd_point_pose_jacobian`].
pub fn analytic_point_pose_jacobian(pose: &Pose, p: &Vector3<f64>) -> nalgebra::Matrix3x6<f64> {
    point_pose_jacobian(pose, p)
}

/// Relative disagreement of one residual-pose Jacobian row with central
/// differences, for a random scene. Returns `None` when the random case has
/// no usable residual.
pub fn residual_jacobian_case(seed: u64) -> Option<f64> {
    let mut r = rng(seed);
    let (w, h) = (96, 72);
    let k = random_intrinsics(&mut r, w, h);
    let key_img = bandlimited_image(&mut r, w, h);
    let track_img = bandlimited_image(&mut r, w, h);
    let (z0, a, b) = (r.random_range(1.0..3.0), r.random_range(-0.005..0.005), r.random_range(-0.005..0.005));
    let depth = DepthMap::from_values(w, h, (0..w * h).map(|i| z0 + a * (i % w) as f64 + b * (i / w) as f64).collect())
        .unwrap();
    let cfg = TrackerConfig {
        pyramid_levels: 1,
        gradient_source: GradientSource::Warped,
        gradient_threshold: 1e-4,
        ..Default::default()
    };
    let params = KeyframeParams {
        pyramid_levels: 1,
        ..cfg.default_keyframe_params()
    };
    let kf = Keyframe::new(0, Pose::identity(), "0", &key_img, &depth, &k, &params).unwrap();
    let frame = TrackingFrame::new(&track_img, &k, &cfg).unwrap();
    let pose = random_twist(&mut r, 0.05, 0.03).exp();
    let residuals = compute_residuals(&kf, &frame, &pose, 0, &cfg).ok()?;
    // Skip residuals whose warped location sits on a bilinear cell edge,
    // where the interpolant is not differentiable.
    let usable: Vec<_> = residuals
        .iter()
        .filter(|res| {
            let p = kf.levels[0].pixels.iter().find(|sp| sp.index == res.pixel).unwrap();
            let (px, _) = k.project(&pose.act(&p.point)).unwrap();
            let fx = px.x - px.x.floor();
            let fy = px.y - px.y.floor();
            (1e-3..1.0 - 1e-3).contains(&fx) && (1e-3..1.0 - 1e-3).contains(&fy)
        })
        .collect();
    if usable.is_empty() {
        return None;
    }
    let pick = usable[r.random_range(0..usable.len())];
    let value_at = |t: &Pose| {
        let rs = compute_residuals(&kf, &frame, t, 0, &cfg).unwrap();
        let res = rs.iter().find(|x| x.pixel == pick.pixel && x.channel == pick.channel).unwrap();
        nalgebra::SVector::<f64, 1>::new(res.value)
    };
    let fd = twist_fd::<1>(&pose, 1e-6, value_at);
    let analytic = pick.jacobian;
    Some((analytic - fd).norm() / fd.norm().max(1e-12))
}

/// Relative-error metric written directly on homogeneous matrices.
pub fn brute_force_evaluate(est: &[Pose], gt: &[Pose], tracked: &[bool]) -> (Option<f64>, Option<f64>) {
    let m = |p: &Pose| -> Matrix4<f64> {
        let mut out = Matrix4::identity();
        out.fixed_view_mut::<3, 3>(0, 0).copy_from(p.rotation());
        out.fixed_view_mut::<3, 1>(0, 3).copy_from(p.translation());
        out
    };
    let idx: Vec<usize> = (0..gt.len()).filter(|&i| tracked[i]).collect();
    let (mut st, mut sr, mut sd) = (0.0, 0.0, 0.0);
    for w in idx.windows(2) {
        let (i, j) = (w[0], w[1]);
        let rel_e = m(&est[i]).try_inverse().unwrap() * m(&est[j]);
        let rel_g = m(&gt[i]).try_inverse().unwrap() * m(&gt[j]);
        let err = rel_g.try_inverse().unwrap() * rel_e;
        st += err.fixed_view::<3, 1>(0, 3).norm();
        let tr = err[(0, 0)] + err[(1, 1)] + err[(2, 2)];
        sr += ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees();
        sd += rel_g.fixed_view::<3, 1>(0, 3).norm();
    }
    if sd > 0.0 {
        (Some(100.0 * st / sd), Some(sr / sd))
    } else {
        (None, None)
    }
}

pub fn linear_scan_nearest(map: &KeyframeMap, pose: &Pose) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, kf) in map.keyframes().iter().enumerate() {
        let d = (kf.pose.translation() - pose.translation()).norm();
        match best {
            Some((_, bd)) if d >= bd => {}
            _ => best = Some((i, d)),
        }
    }
    best.map(|(i, _)| i)
}

/// Random texture and a copy shifted by `shift` columns, as a rectified
/// pair with constant disparity: `left(u, v) = right(u − shift, v)`.
pub fn shifted_pair(width: usize, height: usize, shift: usize, seed: u64) -> (ImageBuffer, ImageBuffer) {
    let mut r = rng(seed);
    let noise: Vec<f64> = (0..(width + shift) * height).map(|_| r.random_range(0.1..0.9)).collect();
    let at = |u: usize, v: usize| noise[v * (width + shift) + u];
    let left = ImageBuffer::from_fn(width, height, 1, |u, v, _| at(u, v));
    let right = ImageBuffer::from_fn(width, height, 1, |u, v, _| at(u + shift, v));
    (left, right)
}

/// Moves the reference intensity of `fraction` of the selected pixels at
/// every level by `±magnitude`, flipping the sign where that would leave
/// [0, 1]. Gradients and selection are left untouched.
pub fn inject_outliers(kf: &mut Keyframe, fraction: f64, magnitude: f64, r: &mut ChaCha8Rng) {
    for level in &mut kf.levels {
        let ch = level.image.channels();
        let mut data = level.image.data().to_vec();
        for sp in &level.pixels {
            if !r.random_bool(fraction) {
                continue;
            }
            let sign = if r.random_bool(0.5) { 1.0 } else { -1.0 };
            for c in 0..ch {
                let i = sp.index * ch + c;
                let up = data[i] + sign * magnitude;
                data[i] = if (0.0..=1.0).contains(&up) { up } else { (data[i] - sign * magnitude).clamp(0.0, 1.0) };
            }
        }
        level.image = ImageBuffer::new(level.image.width(), level.image.height(), ch, data).unwrap();
    }
}
