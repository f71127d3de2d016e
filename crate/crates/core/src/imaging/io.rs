use std::path::Path;

use image::{DynamicImage, ImageBuffer as RawBuffer, Luma, Rgb};

use super::{DepthMap, ImageBuffer, ImageError, ValueMap};

/// TUM convention: one depth unit is 1/5000 m; zero marks a missing reading.
pub const DEFAULT_DEPTH_SCALE: f64 = 1.0 / 5000.0;

fn io_err(path: &Path, source: image::ImageError) -> ImageError {
    ImageError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Loads an 8- or 16-bit PNG as a 1- or 3-channel image normalized to `[0, 1]`.
/// Alpha is dropped.
pub fn load_image_png(path: &Path) -> Result<ImageBuffer, ImageError> {
    let img = image::open(path).map_err(|e| io_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(
        img,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLumaA16(_)
    );
    let data: Vec<f64> = if gray {
        img.to_luma16().into_raw().into_iter().map(|x| x as f64 / 65535.0).collect()
    } else {
        img.to_rgb16().into_raw().into_iter().map(|x| x as f64 / 65535.0).collect()
    };
    ImageBuffer::new(w, h, if gray { 1 } else { 3 }, data)
}

/// Writes a 16-bit PNG (gray or RGB, matching the channel count).
pub fn save_image_png(img: &ImageBuffer, path: &Path) -> Result<(), ImageError> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let raw: Vec<u16> = img
        .data()
        .iter()
        .map(|&x| (x * 65535.0).round().clamp(0.0, 65535.0) as u16)
        .collect();
    let result = if img.channels() == 1 {
        RawBuffer::<Luma<u16>, _>::from_raw(w, h, raw)
            .expect("buffer sized from image")
            .save(path)
    } else {
        RawBuffer::<Rgb<u16>, _>::from_raw(w, h, raw)
            .expect("buffer sized from image")
            .save(path)
    };
    result.map_err(|e| io_err(path, e))
}

/// Loads a 16-bit depth PNG; `scale` converts stored units to meters.
pub fn load_depth_png(path: &Path, scale: f64) -> Result<DepthMap, ImageError> {
    let img = image::open(path).map_err(|e| io_err(path, e))?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(|x| x as f64 * scale).collect();
    ValueMap::from_values(w, h, data)
}

/// Writes depth as 16-bit units of `scale` meters; invalid or out-of-range
/// depths become 0.
pub fn save_depth_png(depth: &DepthMap, scale: f64, path: &Path) -> Result<(), ImageError> {
    let raw: Vec<u16> = (0..depth.width() * depth.height())
        .map(|i| match depth.get_index(i) {
            Some(d) => {
                let q = (d / scale).round();
                if (1.0..=65535.0).contains(&q) {
                    q as u16
                } else {
                    0
                }
            }
            None => 0,
        })
        .collect();
    RawBuffer::<Luma<u16>, _>::from_raw(depth.width() as u32, depth.height() as u32, raw)
        .expect("buffer sized from depth map")
        .save(path)
        .map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_round_trip_on_u16_grid() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageBuffer::from_fn(9, 7, 3, |u, v, c| (u * 7 + v * 13 + c) as f64 / 100.0).quantized_u16();
        let path = dir.path().join("rgb.png");
        save_image_png(&img, &path).unwrap();
        assert_eq!(load_image_png(&path).unwrap(), img);

        let gray = img.to_luminance().quantized_u16();
        let path = dir.path().join("gray.png");
        save_image_png(&gray, &path).unwrap();
        assert_eq!(load_image_png(&path).unwrap(), gray);
    }

    #[test]
    fn loads_eight_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g8.png");
        RawBuffer::<Luma<u8>, _>::from_raw(2, 1, vec![0u8, 255]).unwrap().save(&path).unwrap();
        let img = load_image_png(&path).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn depth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let mut d = DepthMap::constant(4, 3, 2.5);
        d.set(1, 1, None);
        let d = d.quantized(DEFAULT_DEPTH_SCALE);
        save_depth_png(&d, DEFAULT_DEPTH_SCALE, &path).unwrap();
        assert_eq!(load_depth_png(&path, DEFAULT_DEPTH_SCALE).unwrap(), d);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_image_png(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(matches!(err, ImageError::Io { .. }));
    }
}
