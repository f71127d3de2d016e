//! Dense image containers, bilinear sampling, gradients and pixel selection.

mod io;
mod pyramid;
mod stereo;

pub use io::{load_depth_png, load_image_png, save_depth_png, save_image_png, DEFAULT_DEPTH_SCALE};
pub use pyramid::{build_pyramid, downsample_depth, Pyramid, MIN_LEVEL_SIZE};
pub use stereo::{block_match_disparity, disparity_to_depth};

use thiserror::Error;

pub const MAX_CHANNELS: usize = 3;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("buffer length {got} does not match {width}x{height}x{channels}")]
    BadLength {
        got: usize,
        width: usize,
        height: usize,
        channels: usize,
    },
    #[error("unsupported channel count {0}")]
    BadChannels(usize),
    #[error("pixel value {value} at index {index} is not finite or outside [0, 1]")]
    BadValue { index: usize, value: f64 },
    #[error("sample at ({0}, {1}) is outside the image")]
    OutOfBounds(f64, f64),
    #[error("image must be at least 3x3 for gradients, got {0}x{1}")]
    ImageTooSmall(usize, usize),
    #[error("pyramid with {levels} levels would shrink {width}x{height} below {min}x{min}")]
    TooManyLevels {
        levels: usize,
        width: usize,
        height: usize,
        min: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("image i/o failed for {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

/// Row-major intensity image with 1 or 3 interleaved channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if channels != 1 && channels != MAX_CHANNELS {
            return Err(ImageError::BadChannels(channels));
        }
        if data.len() != width * height * channels {
            return Err(ImageError::BadLength {
                got: data.len(),
                width,
                height,
                channels,
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(ImageError::BadValue { index, value });
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image from a per-pixel function; values are clamped to `[0, 1]`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        assert!(channels == 1 || channels == MAX_CHANNELS, "unsupported channel count");
        let mut data = Vec::with_capacity(width * height * channels);
        for v in 0..height {
            for u in 0..width {
                for c in 0..channels {
                    let x = f(u, v, c);
                    data.push(if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) });
                }
            }
        }
        ImageBuffer {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self::from_fn(width, height, channels, |_, _, _| value)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize, c: usize) -> f64 {
        self.data[(v * self.width + u) * self.channels + c]
    }

    /// Applies `f` to every value and clamps the result to `[0, 1]`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageBuffer {
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self
                .data
                .iter()
                .map(|&x| {
                    let y = f(x);
                    if y.is_nan() {
                        0.0
                    } else {
                        y.clamp(0.0, 1.0)
                    }
                })
                .collect(),
        }
    }

    /// Single-channel luminance (Rec. 601 weights); 1-channel images are cloned.
    pub fn to_luminance(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| (LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2]).clamp(0.0, 1.0))
            .collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Rounds every value to the nearest multiple of `1/65535`, the grid a
    /// 16-bit PNG stores exactly.
    pub fn quantized_u16(&self) -> ImageBuffer {
        self.map(|x| (x * 65535.0).round() / 65535.0)
    }

    /// Bilinear interpolation; exact at integer coordinates. Unused channel
    /// slots are zero.
    #[inline]
    pub fn sample_bilinear(&self, u: f64, v: f64) -> Result<[f64; MAX_CHANNELS], ImageError> {
        if !(u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64) {
            return Err(ImageError::OutOfBounds(u, v));
        }
        let x0 = (u.floor() as usize).min(self.width - 1);
        let y0 = (v.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = u - x0 as f64;
        let fy = v - y0 as f64;
        let (w00, w10, w01, w11) = (
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        );
        let mut out = [0.0; MAX_CHANNELS];
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            *o = w00 * self.get(x0, y0, c)
                + w10 * self.get(x1, y0, c)
                + w01 * self.get(x0, y1, c)
                + w11 * self.get(x1, y1, c);
        }
        Ok(out)
    }

    /// Exact `(∂/∂u, ∂/∂v)` per channel of the bilinear interpolant used by
    /// [`ImageBuffer::sample_bilinear`], taken from the cell to the lower
    /// right of `(u, v)`. Unused channel slots are zero.
    #[inline]
    pub fn bilinear_gradient(&self, u: f64, v: f64) -> Result<[(f64, f64); MAX_CHANNELS], ImageError> {
        if !(u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64) {
            return Err(ImageError::OutOfBounds(u, v));
        }
        if self.width < 2 || self.height < 2 {
            return Err(ImageError::ImageTooSmall(self.width, self.height));
        }
        let x0 = (u.floor() as usize).min(self.width - 2);
        let y0 = (v.floor() as usize).min(self.height - 2);
        let fx = u - x0 as f64;
        let fy = v - y0 as f64;
        let mut out = [(0.0, 0.0); MAX_CHANNELS];
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            let (i00, i10) = (self.get(x0, y0, c), self.get(x0 + 1, y0, c));
            let (i01, i11) = (self.get(x0, y0 + 1, c), self.get(x0 + 1, y0 + 1, c));
            *o = (
                (1.0 - fy) * (i10 - i00) + fy * (i11 - i01),
                (1.0 - fx) * (i01 - i00) + fx * (i11 - i10),
            );
        }
        Ok(out)
    }

    /// Resizes with bilinear sampling then center-crops to `width × height`,
    /// preserving aspect ratio (the shorter side is scaled to fit).
    pub fn resize_center_crop(&self, width: usize, height: usize) -> ImageBuffer {
        if self.width == width && self.height == height {
            return self.clone();
        }
        let scale = (width as f64 / self.width as f64).max(height as f64 / self.height as f64);
        let scaled_w = self.width as f64 * scale;
        let scaled_h = self.height as f64 * scale;
        let off_u = (scaled_w - width as f64) * 0.5;
        let off_v = (scaled_h - height as f64) * 0.5;
        let max_u = (self.width - 1) as f64;
        let max_v = (self.height - 1) as f64;
        let mut out = Vec::with_capacity(width * height * self.channels);
        for v in 0..height {
            for u in 0..width {
                let su = ((u as f64 + 0.5 + off_u) / scale - 0.5).clamp(0.0, max_u);
                let sv = ((v as f64 + 0.5 + off_v) / scale - 0.5).clamp(0.0, max_v);
                let px = self.sample_bilinear(su, sv).expect("clamped into range");
                out.extend_from_slice(&px[..self.channels]);
            }
        }
        ImageBuffer {
            width,
            height,
            channels: self.channels,
            data: out,
        }
    }
}

/// Dense per-pixel scalar field with a validity mask (metric depth or disparity).
#[derive(Clone, Debug, PartialEq)]
pub struct ValueMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
}

pub type DepthMap = ValueMap;
pub type DisparityMap = ValueMap;

impl ValueMap {
    /// Entries that are non-finite or not strictly positive are marked invalid.
    pub fn from_values(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if data.len() != width * height {
            return Err(ImageError::BadLength {
                got: data.len(),
                width,
                height,
                channels: 1,
            });
        }
        let valid = data.iter().map(|d| d.is_finite() && *d > 0.0).collect();
        let data = data
            .into_iter()
            .map(|d| if d.is_finite() && d > 0.0 { d } else { 0.0 })
            .collect();
        Ok(ValueMap {
            width,
            height,
            data,
            valid,
        })
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        ValueMap {
            width,
            height,
            data: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::from_values(width, height, vec![value; width * height]).expect("sizes agree")
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    /// Value at `(u, v)` if valid.
    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        let i = v * self.width + u;
        self.valid[i].then_some(self.data[i])
    }

    #[inline]
    pub fn get_index(&self, i: usize) -> Option<f64> {
        self.valid[i].then_some(self.data[i])
    }

    pub fn set(&mut self, u: usize, v: usize, value: Option<f64>) {
        let i = v * self.width + u;
        match value {
            Some(x) if x.is_finite() && x > 0.0 => {
                self.data[i] = x;
                self.valid[i] = true;
            }
            _ => {
                self.data[i] = 0.0;
                self.valid[i] = false;
            }
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid_count() as f64 / (self.width * self.height).max(1) as f64
    }

    /// Rounds valid values to multiples of `step`; values that round to zero
    /// or beyond the 16-bit range become invalid.
    pub fn quantized(&self, step: f64) -> ValueMap {
        let mut out = self.clone();
        for i in 0..out.data.len() {
            if !out.valid[i] {
                continue;
            }
            let q = (out.data[i] / step).round();
            if q < 1.0 || q > u16::MAX as f64 {
                out.valid[i] = false;
                out.data[i] = 0.0;
            } else {
                out.data[i] = q * step;
            }
        }
        out
    }
}

/// Per-pixel, per-channel image derivatives in intensity per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    width: usize,
    height: usize,
    channels: usize,
    du: Vec<f64>,
    dv: Vec<f64>,
}

impl GradientField {
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn du(&self, u: usize, v: usize, c: usize) -> f64 {
        self.du[(v * self.width + u) * self.channels + c]
    }

    #[inline]
    pub fn dv(&self, u: usize, v: usize, c: usize) -> f64 {
        self.dv[(v * self.width + u) * self.channels + c]
    }

    /// Largest gradient norm over channels.
    #[inline]
    pub fn magnitude(&self, u: usize, v: usize) -> f64 {
        (0..self.channels)
            .map(|c| self.du(u, v, c).hypot(self.dv(u, v, c)))
            .fold(0.0, f64::max)
    }

    /// Bilinearly interpolated gradient `(du, dv)` for channel `c`.
    pub fn sample_bilinear(&self, u: f64, v: f64, c: usize) -> Option<(f64, f64)> {
        if !(u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64) {
            return None;
        }
        let x0 = (u.floor() as usize).min(self.width - 1);
        let y0 = (v.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = u - x0 as f64;
        let fy = v - y0 as f64;
        let lerp = |f: &dyn Fn(usize, usize) -> f64| {
            (1.0 - fy) * ((1.0 - fx) * f(x0, y0) + fx * f(x1, y0))
                + fy * ((1.0 - fx) * f(x0, y1) + fx * f(x1, y1))
        };
        Some((
            lerp(&|x, y| self.du(x, y, c)),
            lerp(&|x, y| self.dv(x, y, c)),
        ))
    }
}

/// Central differences in the interior, one-sided differences on the border.
pub fn gradients(img: &ImageBuffer) -> Result<GradientField, ImageError> {
    let (w, h, ch) = (img.width, img.height, img.channels);
    if w < 3 || h < 3 {
        return Err(ImageError::ImageTooSmall(w, h));
    }
    let mut du = vec![0.0; w * h * ch];
    let mut dv = vec![0.0; w * h * ch];
    for v in 0..h {
        for u in 0..w {
            for c in 0..ch {
                let i = (v * w + u) * ch + c;
                du[i] = if u == 0 {
                    img.get(1, v, c) - img.get(0, v, c)
                } else if u == w - 1 {
                    img.get(w - 1, v, c) - img.get(w - 2, v, c)
                } else {
                    0.5 * (img.get(u + 1, v, c) - img.get(u - 1, v, c))
                };
                dv[i] = if v == 0 {
                    img.get(u, 1, c) - img.get(u, 0, c)
                } else if v == h - 1 {
                    img.get(u, h - 1, c) - img.get(u, h - 2, c)
                } else {
                    0.5 * (img.get(u, v + 1, c) - img.get(u, v - 1, c))
                };
            }
        }
    }
    Ok(GradientField {
        width: w,
        height: h,
        channels: ch,
        du,
        dv,
    })
}

/// Neighbouring depths differing by more than this fraction mark an
/// occlusion boundary.
pub const DEPTH_EDGE_RATIO: f64 = 0.05;

/// Row-major indices of interior pixels whose gradient magnitude exceeds
/// `threshold` and whose 3×3 depth neighbourhood is valid and free of
/// occlusion boundaries. Pixels on a depth edge have strong gradients but
/// their appearance changes with parallax, so they are left out.
pub fn select_pixels(grad: &GradientField, depth: &DepthMap, threshold: f64) -> Result<Vec<usize>, ImageError> {
    if grad.width != depth.width || grad.height != depth.height {
        return Err(ImageError::DimensionMismatch(format!(
            "gradients {}x{} vs depth {}x{}",
            grad.width, grad.height, depth.width, depth.height
        )));
    }
    let (w, h) = (grad.width, grad.height);
    let mut out = Vec::new();
    for v in 1..h.saturating_sub(1) {
        for u in 1..w.saturating_sub(1) {
            let i = v * w + u;
            if depth.valid[i] && grad.magnitude(u, v) > threshold && !on_depth_edge(depth, u, v) {
                out.push(i);
            }
        }
    }
    Ok(out)
}

fn on_depth_edge(depth: &DepthMap, u: usize, v: usize) -> bool {
    let w = depth.width;
    let z = depth.data[v * w + u];
    for nv in v - 1..=v + 1 {
        for nu in u - 1..=u + 1 {
            let j = nv * w + nu;
            if !depth.valid[j] || (depth.data[j] - z).abs() > DEPTH_EDGE_RATIO * z {
                return true;
            }
        }
    }
    false
}
