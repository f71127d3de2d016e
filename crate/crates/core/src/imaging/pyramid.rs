use super::{DepthMap, ImageBuffer, ImageError, ValueMap};
use crate::camera::CameraIntrinsics;

/// Coarsest allowed level size on either side.
pub const MIN_LEVEL_SIZE: usize = 8;

const BINOMIAL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Gaussian pyramid; level 0 is full resolution.
#[derive(Clone, Debug)]
pub struct Pyramid {
    levels: Vec<(ImageBuffer, CameraIntrinsics)>,
}

impl Pyramid {
    pub fn levels(&self) -> &[(ImageBuffer, CameraIntrinsics)] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn image(&self, level: usize) -> &ImageBuffer {
        &self.levels[level].0
    }

    pub fn intrinsics(&self, level: usize) -> &CameraIntrinsics {
        &self.levels[level].1
    }
}

/// Checks that `levels` halvings of `width × height` stay at least
/// [`MIN_LEVEL_SIZE`] on each side.
pub fn check_levels(width: usize, height: usize, levels: usize) -> Result<(), ImageError> {
    let shift = levels.saturating_sub(1).min(usize::BITS as usize - 1);
    if levels == 0 || (width >> shift) < MIN_LEVEL_SIZE || (height >> shift) < MIN_LEVEL_SIZE {
        return Err(ImageError::TooManyLevels {
            levels,
            width,
            height,
            min: MIN_LEVEL_SIZE,
        });
    }
    Ok(())
}

pub fn build_pyramid(img: &ImageBuffer, k: &CameraIntrinsics, levels: usize) -> Result<Pyramid, ImageError> {
    if img.width() != k.width || img.height() != k.height {
        return Err(ImageError::DimensionMismatch(format!(
            "image {}x{} vs intrinsics {}x{}",
            img.width(),
            img.height(),
            k.width,
            k.height
        )));
    }
    check_levels(img.width(), img.height(), levels)?;
    let mut out = Vec::with_capacity(levels);
    out.push((img.clone(), *k));
    for _ in 1..levels {
        let (prev, pk) = out.last().expect("non-empty");
        let next = (downsample(prev), pk.halved());
        out.push(next);
    }
    Ok(Pyramid { levels: out })
}

/// Separable binomial blur (replicated borders), then each coarse pixel takes
/// the mean of its 2×2 block so that it sits at fine coordinate `2x + 0.5`.
fn downsample(img: &ImageBuffer) -> ImageBuffer {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let mut horiz = vec![0.0; w * h * ch];
    for v in 0..h {
        for u in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (k, wgt) in BINOMIAL.iter().enumerate() {
                    let x = (u as isize + k as isize - 2).clamp(0, w as isize - 1) as usize;
                    acc += wgt * img.get(x, v, c);
                }
                horiz[(v * w + u) * ch + c] = acc;
            }
        }
    }
    let mut blurred = vec![0.0; w * h * ch];
    for v in 0..h {
        for u in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (k, wgt) in BINOMIAL.iter().enumerate() {
                    let y = (v as isize + k as isize - 2).clamp(0, h as isize - 1) as usize;
                    acc += wgt * horiz[(y * w + u) * ch + c];
                }
                blurred[(v * w + u) * ch + c] = acc;
            }
        }
    }
    let (nw, nh) = (w / 2, h / 2);
    ImageBuffer::from_fn(nw, nh, ch, |u, v, c| {
        let at = |x: usize, y: usize| blurred[(y * w + x) * ch + c];
        0.25 * (at(2 * u, 2 * v) + at(2 * u + 1, 2 * v) + at(2 * u, 2 * v + 1) + at(2 * u + 1, 2 * v + 1))
    })
}

/// Halves a depth map: a coarse pixel is valid when its 2×2 block is fully
/// valid and spans less than 5% of its mean depth (no occlusion boundary).
pub fn downsample_depth(depth: &DepthMap) -> DepthMap {
    let (nw, nh) = (depth.width() / 2, depth.height() / 2);
    let mut out = ValueMap::invalid(nw, nh);
    for v in 0..nh {
        for u in 0..nw {
            let block = [
                depth.get(2 * u, 2 * v),
                depth.get(2 * u + 1, 2 * v),
                depth.get(2 * u, 2 * v + 1),
                depth.get(2 * u + 1, 2 * v + 1),
            ];
            if block.iter().any(Option::is_none) {
                continue;
            }
            let vals = block.map(|d| d.unwrap_or(0.0));
            let mean = vals.iter().sum::<f64>() * 0.25;
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(0.0, f64::max);
            if hi - lo < 0.05 * mean {
                out.set(u, v, Some(mean));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn k(w: usize, h: usize) -> CameraIntrinsics {
        CameraIntrinsics::new(200.0, 200.0, w as f64 / 2.0 - 0.5, h as f64 / 2.0 - 0.5, w, h).unwrap()
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = ImageBuffer::constant(64, 48, 3, 0.5);
        let p = build_pyramid(&img, &k(64, 48), 3).unwrap();
        for (level, _) in p.levels() {
            assert!(level.data().iter().all(|&x| (x - 0.5).abs() < 1e-15));
        }
    }

    #[test]
    fn level_sizes_halve() {
        let img = ImageBuffer::constant(256, 192, 1, 0.1);
        let p = build_pyramid(&img, &k(256, 192), 4).unwrap();
        let sizes: Vec<_> = p.levels().iter().map(|(i, _)| (i.width(), i.height())).collect();
        assert_eq!(sizes, vec![(256, 192), (128, 96), (64, 48), (32, 24)]);
        for (i, kk) in p.levels() {
            assert_eq!((i.width(), i.height()), (kk.width, kk.height));
        }
        assert_relative_eq!(p.intrinsics(1).fu, 100.0);
    }

    #[test]
    fn too_many_levels() {
        let img = ImageBuffer::constant(256, 192, 1, 0.1);
        assert!(matches!(
            build_pyramid(&img, &k(256, 192), 9),
            Err(ImageError::TooManyLevels { .. })
        ));
        assert!(build_pyramid(&img, &k(256, 192), 0).is_err());
        // 192 / 2^4 = 12 is fine, 192 / 2^5 = 6 is not.
        assert!(build_pyramid(&img, &k(256, 192), 5).is_ok());
        assert!(build_pyramid(&img, &k(256, 192), 6).is_err());
    }

    #[test]
    fn mean_preserved_for_smooth_interior() {
        let img = ImageBuffer::from_fn(128, 96, 1, |u, v, _| {
            let pi = std::f64::consts::PI;
            0.5 + 0.2 * (pi * 5.0 * (u as f64 + 0.5) / 128.0).cos() * (pi * 3.0 * (v as f64 + 0.5) / 96.0).cos()
        });
        let p = build_pyramid(&img, &k(128, 96), 3).unwrap();
        let mean = |i: &ImageBuffer| i.data().iter().sum::<f64>() / i.data().len() as f64;
        let m0 = mean(p.image(0));
        for l in 1..3 {
            assert!((mean(p.image(l)) - m0).abs() < 1e-6);
        }
    }

    #[test]
    fn depth_downsampling_rejects_edges() {
        let mut d = DepthMap::constant(4, 2, 2.0);
        d.set(3, 1, Some(4.0));
        let half = downsample_depth(&d);
        assert_eq!(half.get(0, 0), Some(2.0));
        assert_eq!(half.get(1, 0), None);
    }
}
