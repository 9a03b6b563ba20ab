use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use super::{io_err, DataError, Result, RgbImage, SparseDepthMap};

const MM_PER_M: f64 = 1000.0;

/// Writes depth as 16-bit grayscale millimetres. Returns how many values
/// had to be clamped to 65.535 m.
pub fn save_depth_png16(path: &Path, depth: &SparseDepthMap) -> Result<usize> {
    let mut clamped = 0;
    let raw: Vec<u16> = depth
        .data()
        .iter()
        .map(|&d| {
            let mm = (d as f64 * MM_PER_M).round();
            if mm > u16::MAX as f64 {
                clamped += 1;
                u16::MAX
            } else {
                mm.max(0.0) as u16
            }
        })
        .collect();
    if clamped > 0 {
        log::warn!("{}: {clamped} depth values clamped to 65.535 m", path.display());
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(depth.width() as u32, depth.height() as u32, raw)
        .ok_or_else(|| DataError::Invalid("depth buffer size".into()))?;
    buf.save(path).map_err(|e| io_err(path, e))?;
    Ok(clamped)
}

pub fn load_depth_png16(path: &Path) -> Result<SparseDepthMap> {
    if !path.exists() {
        return Err(DataError::Missing(path.display().to_string()));
    }
    let img = image::open(path).map_err(|e| io_err(path, e))?;
    let DynamicImage::ImageLuma16(buf) = img else {
        return Err(DataError::Format {
            path: path.display().to_string(),
            message: format!("expected 16-bit grayscale PNG, found {:?}", img.color()),
        });
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let depth = buf.into_raw().into_iter().map(|mm| (mm as f64 / MM_PER_M) as f32).collect();
    SparseDepthMap::new(w, h, depth)
}

pub fn save_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    let (w, h) = (img.width(), img.height());
    let plane = w * h;
    let mut raw = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            raw.push((img.data()[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).ok_or_else(|| DataError::Invalid("RGB buffer size".into()))?;
    buf.save(path).map_err(|e| io_err(path, e))
}

pub fn load_rgb_png(path: &Path) -> Result<RgbImage> {
    if !path.exists() {
        return Err(DataError::Missing(path.display().to_string()));
    }
    let img = image::open(path).map_err(|e| io_err(path, e))?;
    let DynamicImage::ImageRgb8(buf) = img else {
        return Err(DataError::Format {
            path: path.display().to_string(),
            message: format!("expected 8-bit RGB PNG, found {:?}", img.color()),
        });
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let plane = w * h;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in buf.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / 255.0;
        }
    }
    RgbImage::new(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_round_trip_and_clamp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let depth = SparseDepthMap::new(3, 2, vec![1.234, 0.0, 70.0, 0.001, 65.535, 2.5]).unwrap();
        assert_eq!(save_depth_png16(&path, &depth).unwrap(), 1);
        let back = load_depth_png16(&path).unwrap();
        let expected = [1.234f32, 0.0, 65.535, 0.001, 65.535, 2.5];
        for (a, b) in back.data().iter().zip(expected) {
            assert_eq!(*a, b);
        }
        assert!(!back.is_valid(1));
    }

    #[test]
    fn eight_bit_depth_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgb.png");
        save_rgb_png(&path, &RgbImage::new(2, 2, vec![0.5; 12]).unwrap()).unwrap();
        assert!(matches!(load_depth_png16(&path), Err(DataError::Format { .. })));
        assert!(matches!(load_depth_png16(&dir.path().join("none.png")), Err(DataError::Missing(_))));
    }

    #[test]
    fn rgb_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        let data: Vec<f32> = (0..3 * 20).map(|i| (i as f32 * 0.0173) % 1.0).collect();
        let img = RgbImage::new(5, 4, data).unwrap();
        save_rgb_png(&path, &img).unwrap();
        let back = load_rgb_png(&path).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}
