use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{DynamicImage, ImageReader, Luma};

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, Grid, ImageBuffer, ProbabilityMap};

/// TUM depth convention: raw 16-bit value per meter.
pub const DEFAULT_DEPTH_SCALE: f64 = 5000.0;

pub type Depth16 = image::ImageBuffer<Luma<u16>, Vec<u16>>;

fn decode(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Reads an 8-bit colour image; grey and alpha variants are converted.
pub fn load_rgb(path: &Path) -> Result<ImageBuffer> {
    match decode(path)? {
        DynamicImage::ImageRgb8(img) => Ok(img),
        img @ (DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgba8(_)) => {
            Ok(img.to_rgb8())
        }
        other => Err(Error::ImageFormat {
            path: path.to_path_buf(),
            msg: format!("expected an 8-bit colour image, found {:?}", other.color()),
        }),
    }
}

pub fn save_rgb(path: &Path, img: &ImageBuffer) -> Result<()> {
    img.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Meters are `raw / scale`; raw 0 marks a missing measurement.
pub fn depth_from_raw(raw: &Depth16, scale: f64) -> Result<DepthMap> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::param(format!("depth scale {scale} must be positive")));
    }
    let (w, h) = raw.dimensions();
    Ok(DepthMap::from_values(Grid::from_fn(w, h, |x, y| raw.get_pixel(x, y).0[0] as f64 / scale)))
}

/// Inverse of [`depth_from_raw`], rounding to the nearest raw step. Invalid
/// or out-of-range depths become 0.
pub fn depth_to_raw(depth: &DepthMap, scale: f64) -> Depth16 {
    let (w, h) = depth.dims();
    Depth16::from_fn(w, h, |x, y| {
        let raw = depth.depth(x, y).map_or(0.0, |d| (d * scale).round());
        Luma([if raw <= u16::MAX as f64 { raw as u16 } else { 0 }])
    })
}

/// Loads a single-channel 16-bit depth image.
pub fn load_depth_png(path: &Path, scale: f64) -> Result<DepthMap> {
    match decode(path)? {
        DynamicImage::ImageLuma16(raw) => depth_from_raw(&raw, scale),
        other => Err(Error::ImageFormat {
            path: path.to_path_buf(),
            msg: format!("depth must be 16-bit single channel, found {:?}", other.color()),
        }),
    }
}

pub fn save_depth_png(path: &Path, depth: &DepthMap, scale: f64) -> Result<()> {
    depth_to_raw(depth, scale).save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// 8-bit visualisation, `round(255 p)`.
pub fn save_probability_png(path: &Path, p: &ProbabilityMap) -> Result<()> {
    p.to_gray8().save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

pub fn save_mask_png(path: &Path, mask: &Grid<bool>) -> Result<()> {
    let img =
        image::GrayImage::from_fn(mask.width(), mask.height(), |x, y| Luma([if *mask.get(x, y) { 255 } else { 0 }]));
    img.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

pub fn load_mask_png(path: &Path) -> Result<Grid<bool>> {
    let img = decode(path)?.to_luma8();
    Ok(Grid::from_fn(img.width(), img.height(), |x, y| img.get_pixel(x, y).0[0] >= 128))
}

/// Raw float grid: `u32` LE width and height, then row-major `f32` LE values.
pub fn write_f32_grid(path: &Path, grid: &Grid<f64>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        w.write_all(&grid.width().to_le_bytes())?;
        w.write_all(&grid.height().to_le_bytes())?;
        for v in grid.iter() {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn read_f32_grid(path: &Path) -> Result<Grid<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut b4 = [0u8; 4];
    let mut next = |r: &mut BufReader<File>| -> Result<[u8; 4]> {
        r.read_exact(&mut b4).map_err(|e| Error::io(path, e))?;
        Ok(b4)
    };
    let w = u32::from_le_bytes(next(&mut r)?);
    let h = u32::from_le_bytes(next(&mut r)?);
    let n = (w as u64) * (h as u64);
    if n > (1 << 28) {
        return Err(Error::parse(path, 0, format!("implausible grid size {w}x{h}")));
    }
    let mut data = Vec::with_capacity(n as usize);
    for _ in 0..n {
        data.push(f32::from_le_bytes(next(&mut r)?) as f64);
    }
    Grid::from_vec(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn raw_scale_convention() {
        let raw = Depth16::from_raw(2, 1, vec![5000, 0]).unwrap();
        let d = depth_from_raw(&raw, DEFAULT_DEPTH_SCALE).unwrap();
        assert_eq!(d.depth(0, 0), Some(1.0));
        assert_eq!(d.depth(1, 0), None);
    }

    #[test]
    fn random_raw_matches_division() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let raw = Depth16::from_fn(31, 17, |_, _| Luma([rng.random_range(0..=u16::MAX)]));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        raw.save(&p).unwrap();
        let d = load_depth_png(&p, DEFAULT_DEPTH_SCALE).unwrap();
        for (x, y, px) in raw.enumerate_pixels() {
            let r = px.0[0];
            if r == 0 {
                assert_eq!(d.depth(x, y), None);
            } else {
                assert_eq!(d.depth(x, y), Some(r as f64 / 5000.0));
            }
        }
        save_depth_png(&dir.path().join("e.png"), &d, DEFAULT_DEPTH_SCALE).unwrap();
        let e = load_depth_png(&dir.path().join("e.png"), DEFAULT_DEPTH_SCALE).unwrap();
        assert_eq!(d, e);
    }

    #[test]
    fn wrong_format_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        ImageBuffer::new(4, 4).save(&p).unwrap();
        assert!(matches!(load_depth_png(&p, 5000.0), Err(Error::ImageFormat { .. })));
        assert!(matches!(load_depth_png(&dir.path().join("none.png"), 5000.0), Err(Error::MissingFile(_))));
        assert!(load_rgb(&p).is_ok());
    }

    #[test]
    fn f32_grid_round_trip() {
        let g = Grid::from_fn(5, 3, |x, y| x as f64 * 0.25 - y as f64);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.f32");
        write_f32_grid(&p, &g).unwrap();
        assert_eq!(read_f32_grid(&p).unwrap(), g);
    }

    #[test]
    fn mask_round_trip() {
        let m = Grid::from_fn(6, 4, |x, y| (x + y) % 3 == 0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        save_mask_png(&p, &m).unwrap();
        assert_eq!(load_mask_png(&p).unwrap(), m);
    }
}
