//! View synthesis: reprojecting a neighbouring RGB-D frame into the current
//! viewpoint.
//!
//! Source pixels are lifted with their depth, moved by the relative pose and
//! forward-splatted onto the target grid with a bilinear kernel. When several
//! source pixels land on the same target pixel they are blended with weights
//! `exp(-sharpness * z / median_z)`, so the nearest surface dominates.
//! [`homography_warp`] is the plane-induced inverse warp used as a baseline.

use nalgebra::{Matrix3, Point3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{
    backproject_unchecked, ensure_same_dims, median_in_place, project_unchecked, DepthMap, Grid, ImageBuffer,
    Intrinsics, PoseSE3,
};

/// Accumulated kernel weight below which a target pixel is a hole.
pub const COVERAGE_EPS: f64 = 1e-4;

pub const DEFAULT_SHARPNESS: f64 = 10.0;

/// Where one source pixel lands in the target view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetSample {
    pub x: f64,
    pub y: f64,
    /// Depth in the target camera frame.
    pub depth: f64,
}

/// Per-source-pixel target coordinates; `None` for invalid depth or points
/// behind the target camera.
pub type Reprojection = Grid<Option<TargetSample>>;

/// Relative transform taking source-camera coordinates to target-camera
/// coordinates, given camera-to-world poses of both frames.
pub fn relative_pose(target_to_world: &PoseSE3, source_to_world: &PoseSE3) -> PoseSE3 {
    target_to_world.inverse().compose(source_to_world)
}

pub fn reproject_coords(depth: &DepthMap, relative_pose: &PoseSE3, k: &Intrinsics) -> Result<Reprojection> {
    ensure_same_dims(k.dims(), depth.dims())?;
    Ok(Grid::from_fn(depth.width(), depth.height(), |u, v| {
        let z = depth.depth(u, v)?;
        let p = relative_pose.transform(&backproject_unchecked(u as f64, v as f64, z, k));
        if !(p.z > 0.0) {
            return None;
        }
        let px = project_unchecked(&p, k);
        Some(TargetSample { x: px.x, y: px.y, depth: p.z })
    }))
}

/// A synthesized view with real-valued colors.
#[derive(Clone, Debug, PartialEq)]
pub struct SplattedFrame {
    pub image: Grid<[f64; 3]>,
    /// Sum of bilinear kernel weights received by each target pixel.
    pub coverage: Grid<f64>,
    pub valid: Grid<bool>,
}

impl SplattedFrame {
    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    /// Rounds to 8 bits. Holes take the corresponding pixel of `fill`, or
    /// black without one.
    pub fn to_rgb8(&self, fill: Option<&ImageBuffer>) -> ImageBuffer {
        to_rgb8(&self.image, &self.valid, fill)
    }

    /// Coverage mask as an 8-bit image (255 = valid).
    pub fn coverage_mask(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width(), self.height(), |x, y| {
            image::Luma([if *self.valid.get(x, y) { 255 } else { 0 }])
        })
    }
}

/// Result of an inverse warp; pixels whose source lies outside the image are invalid.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpedFrame {
    pub image: Grid<[f64; 3]>,
    pub valid: Grid<bool>,
}

impl WarpedFrame {
    pub fn to_rgb8(&self, fill: Option<&ImageBuffer>) -> ImageBuffer {
        to_rgb8(&self.image, &self.valid, fill)
    }
}

fn to_rgb8(image: &Grid<[f64; 3]>, valid: &Grid<bool>, fill: Option<&ImageBuffer>) -> ImageBuffer {
    ImageBuffer::from_fn(image.width(), image.height(), |x, y| {
        if *valid.get(x, y) {
            let c = image.get(x, y);
            image::Rgb(c.map(|v| v.round().clamp(0.0, 255.0) as u8))
        } else {
            fill.map(|f| *f.get_pixel(x, y)).unwrap_or(image::Rgb([0, 0, 0]))
        }
    })
}

/// Bilinear footprint of a continuous target coordinate: up to four
/// in-bounds pixels with their kernel weights.
#[inline]
fn bilinear_footprint(x: f64, y: f64, width: u32, height: u32) -> impl Iterator<Item = (u32, u32, f64)> {
    let x0 = x.floor();
    let y0 = y.floor();
    let (ax, ay) = (x - x0, y - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    [(0i64, 0i64, (1.0 - ax) * (1.0 - ay)), (1, 0, ax * (1.0 - ay)), (0, 1, (1.0 - ax) * ay), (1, 1, ax * ay)]
        .into_iter()
        .filter_map(move |(dx, dy, k)| {
            let (tx, ty) = (x0 + dx, y0 + dy);
            (tx >= 0 && ty >= 0 && tx < width as i64 && ty < height as i64).then_some((tx as u32, ty as u32, k))
        })
}

/// Forward-splats `source` along `coords` onto a grid of the same size.
///
/// Accumulation runs in source raster order, so the result is bit-stable.
pub fn softmax_splat(source: &ImageBuffer, coords: &Reprojection, sharpness: f64) -> Result<SplattedFrame> {
    ensure_same_dims(source.dimensions(), coords.dims())?;
    if !(sharpness >= 0.0 && sharpness.is_finite()) {
        return Err(Error::param(format!("sharpness must be non-negative, got {sharpness}")));
    }
    let (w, h) = source.dimensions();
    let mut depths: Vec<f64> = coords.iter().flatten().map(|s| s.depth).collect();
    let Some(median) = median_in_place(&mut depths) else {
        return Ok(SplattedFrame {
            image: Grid::new(w, h, [0.0; 3]),
            coverage: Grid::new(w, h, 0.0),
            valid: Grid::new(w, h, false),
        });
    };

    // Per-target minimum of normalized depth; weights are taken relative to
    // it so that the exponential never underflows for the nearest contributor.
    let mut zmin = Grid::new(w, h, f64::INFINITY);
    for s in coords.iter().flatten() {
        let zn = s.depth / median;
        for (tx, ty, k) in bilinear_footprint(s.x, s.y, w, h) {
            if k > 0.0 {
                let i = zmin.index(tx, ty);
                let m = &mut zmin.as_mut_slice()[i];
                if zn < *m {
                    *m = zn;
                }
            }
        }
    }

    let mut color = Grid::new(w, h, [0.0f64; 3]);
    let mut weight = Grid::new(w, h, 0.0f64);
    let mut coverage = Grid::new(w, h, 0.0f64);
    for (i, s) in coords.iter().enumerate() {
        let Some(s) = s else { continue };
        let (u, v) = ((i % w as usize) as u32, (i / w as usize) as u32);
        let c = source.get_pixel(u, v).0;
        let zn = s.depth / median;
        for (tx, ty, k) in bilinear_footprint(s.x, s.y, w, h) {
            let j = coverage.index(tx, ty);
            coverage.as_mut_slice()[j] += k;
            let wgt = k * (-sharpness * (zn - zmin.as_slice()[j])).exp();
            weight.as_mut_slice()[j] += wgt;
            let acc = &mut color.as_mut_slice()[j];
            for ch in 0..3 {
                acc[ch] += wgt * c[ch] as f64;
            }
        }
    }

    let valid = Grid::from_fn(w, h, |x, y| *coverage.get(x, y) > COVERAGE_EPS && *weight.get(x, y) > 0.0);
    let image = Grid::from_fn(w, h, |x, y| {
        if *valid.get(x, y) {
            let wt = *weight.get(x, y);
            color.get(x, y).map(|c| c / wt)
        } else {
            [0.0; 3]
        }
    });
    Ok(SplattedFrame { image, coverage, valid })
}

/// Reprojects and splats `source` (with its depth) into the target view.
pub fn splat_view(
    source: &ImageBuffer,
    depth: &DepthMap,
    relative_pose: &PoseSE3,
    k: &Intrinsics,
    sharpness: f64,
) -> Result<SplattedFrame> {
    let coords = reproject_coords(depth, relative_pose, k)?;
    softmax_splat(source, &coords, sharpness)
}

/// Homography induced by the plane `n . X = d` (source camera frame).
pub fn plane_homography(relative_pose: &PoseSE3, k: &Intrinsics, normal: &Vector3<f64>, distance: f64) -> Matrix3<f64> {
    let m = relative_pose.rotation() + relative_pose.translation() * normal.transpose() / distance;
    k.matrix() * m * k.inverse_matrix()
}

#[inline]
pub(crate) fn sample_bilinear(img: &ImageBuffer, x: f64, y: f64) -> Option<[f64; 3]> {
    let (w, h) = img.dimensions();
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    let x0 = (x.floor() as u32).min(w.saturating_sub(2));
    let y0 = (y.floor() as u32).min(h.saturating_sub(2));
    let (ax, ay) = (x - x0 as f64, y - y0 as f64);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let p = |u, v| img.get_pixel(u, v).0.map(|c| c as f64);
    let (a, b, c, d) = (p(x0, y0), p(x1, y0), p(x0, y1), p(x1, y1));
    let mut out = [0.0; 3];
    for ch in 0..3 {
        out[ch] = (1.0 - ay) * ((1.0 - ax) * a[ch] + ax * b[ch]) + ay * ((1.0 - ax) * c[ch] + ax * d[ch]);
    }
    Some(out)
}

/// Inverse-warps `source` by `homography` (which maps source pixels to
/// target pixels) with bilinear sampling.
pub fn homography_warp(source: &ImageBuffer, homography: &Matrix3<f64>) -> Result<WarpedFrame> {
    let scale = homography.abs().max();
    let det = homography.determinant();
    if !(scale > 0.0) || det.abs() <= 1e-12 * scale.powi(3) {
        return Err(Error::SingularHomography);
    }
    let inv = homography.try_inverse().ok_or(Error::SingularHomography)?;
    let (w, h) = source.dimensions();
    let mut valid = Grid::new(w, h, false);
    let image = Grid::from_fn(w, h, |u, v| {
        let s = inv * Point3::new(u as f64, v as f64, 1.0).coords;
        if s.z <= 0.0 {
            return [0.0; 3];
        }
        match sample_bilinear(source, s.x / s.z, s.y / s.z) {
            Some(c) => {
                valid.set(u, v, true);
                c
            }
            None => [0.0; 3],
        }
    });
    Ok(WarpedFrame { image, valid })
}

/// Mean absolute per-channel difference against `target` over pixels where
/// `valid` is set.
pub fn mean_abs_error(image: &Grid<[f64; 3]>, valid: &Grid<bool>, target: &ImageBuffer) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (c, ok)) in image.iter().zip(valid.iter()).enumerate() {
        if !ok {
            continue;
        }
        let (x, y) = ((i % image.width() as usize) as u32, (i / image.width() as usize) as u32);
        let t = target.get_pixel(x, y).0;
        for ch in 0..3 {
            sum += (c[ch] - t[ch] as f64).abs();
        }
        n += 3;
    }
    (n > 0).then(|| sum / n as f64)
}

/// PSNR in dB over valid pixels; infinite for an exact match.
pub fn psnr(image: &Grid<[f64; 3]>, valid: &Grid<bool>, target: &ImageBuffer) -> Option<f64> {
    let mut sse = 0.0;
    let mut n = 0usize;
    for (i, (c, ok)) in image.iter().zip(valid.iter()).enumerate() {
        if !ok {
            continue;
        }
        let (x, y) = ((i % image.width() as usize) as u32, (i / image.width() as usize) as u32);
        let t = target.get_pixel(x, y).0;
        for ch in 0..3 {
            sse += (c[ch] - t[ch] as f64).powi(2);
        }
        n += 3;
    }
    if n == 0 {
        return None;
    }
    let mse = sse / n as f64;
    Some(if mse == 0.0 { f64::INFINITY } else { 10.0 * (255.0f64 * 255.0 / mse).log10() })
}
