//! Dense per-pixel containers.
//!
//! Every raster is stored row-major with `width` columns; `(x, y)` addresses
//! column `x` of row `y`.

use crate::error::{Error, Result};

/// 8-bit RGB image. Pixel `(u, v)` samples the continuous image point `(u, v)`.
pub type ImageBuffer = image::RgbImage;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: u32,
    height: u32,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn new(width: u32, height: u32, fill: T) -> Self {
        Self { width, height, data: vec![fill; width as usize * height as usize] }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: u32, height: u32, data: Vec<T>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::param(format!(
                "grid of {}x{} needs {} values, got {}",
                width,
                height,
                width as usize * height as usize,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> T) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> &T {
        &self.data[self.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: T) {
        let i = self.index(x, y);
        self.data[i] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid { width: self.width, height: self.height, data: self.data.iter().map(f).collect() }
    }

    pub fn ensure_dims(&self, dims: (u32, u32)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::DimensionMismatch { expected: dims, actual: self.dims() });
        }
        Ok(())
    }
}

impl Grid<f64> {
    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub(crate) fn ensure_same_dims(expected: (u32, u32), actual: (u32, u32)) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Metric depth with an explicit validity mask. Invalid pixels hold `0.0`
/// but that value carries no meaning.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    values: Grid<f64>,
    valid: Grid<bool>,
}

impl DepthMap {
    /// Builds a depth map where every positive finite value is valid.
    pub fn from_values(values: Grid<f64>) -> Self {
        let valid = values.map(|&z| z.is_finite() && z > 0.0);
        let values =
            Grid::from_fn(
                values.width(),
                values.height(),
                |x, y| {
                    if *valid.get(x, y) {
                        *values.get(x, y)
                    } else {
                        0.0
                    }
                },
            );
        Self { values, valid }
    }

    pub fn new(values: Grid<f64>, valid: Grid<bool>) -> Result<Self> {
        ensure_same_dims(values.dims(), valid.dims())?;
        for (z, ok) in values.iter().zip(valid.iter()) {
            if *ok && !(z.is_finite() && *z > 0.0) {
                return Err(Error::InvalidDepth(*z));
            }
        }
        Ok(Self { values, valid })
    }

    pub fn width(&self) -> u32 {
        self.values.width()
    }

    pub fn height(&self) -> u32 {
        self.values.height()
    }

    pub fn dims(&self) -> (u32, u32) {
        self.values.dims()
    }

    /// Depth at `(x, y)` or `None` when the pixel is invalid.
    #[inline]
    pub fn depth(&self, x: u32, y: u32) -> Option<f64> {
        if *self.valid.get(x, y) {
            Some(*self.values.get(x, y))
        } else {
            None
        }
    }

    pub fn values(&self) -> &Grid<f64> {
        &self.values
    }

    pub fn validity(&self) -> &Grid<bool> {
        &self.valid
    }

    /// Median over valid pixels.
    pub fn median(&self) -> Option<f64> {
        let mut v: Vec<f64> =
            self.values.iter().zip(self.valid.iter()).filter(|(_, ok)| **ok).map(|(z, _)| *z).collect();
        median_in_place(&mut v)
    }
}

pub(crate) fn median_in_place(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    Some(*m)
}

/// Per-pixel motion probability in `[0, 1]` with a validity mask.
///
/// Used for the movable prior, for the final probability and for the
/// ground-truth masks emitted by the synthetic renderer.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    values: Grid<f64>,
    valid: Grid<bool>,
}

impl ProbabilityMap {
    /// Values outside `[0, 1]` are clamped; NaN becomes an invalid pixel.
    pub fn from_values(values: Grid<f64>) -> Self {
        let valid = values.map(|p| !p.is_nan());
        let values = values.map(|p| if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) });
        Self { values, valid }
    }

    pub fn with_validity(values: Grid<f64>, valid: Grid<bool>) -> Result<Self> {
        ensure_same_dims(values.dims(), valid.dims())?;
        let mut out = Self::from_values(values);
        for (v, ok) in out.valid.as_mut_slice().iter_mut().zip(valid.iter()) {
            *v &= *ok;
        }
        Ok(out)
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self { values: Grid::new(width, height, 0.0), valid: Grid::new(width, height, true) }
    }

    pub fn width(&self) -> u32 {
        self.values.width()
    }

    pub fn height(&self) -> u32 {
        self.values.height()
    }

    pub fn dims(&self) -> (u32, u32) {
        self.values.dims()
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        *self.values.get(x, y)
    }

    #[inline]
    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        *self.valid.get(x, y)
    }

    pub fn values(&self) -> &Grid<f64> {
        &self.values
    }

    pub fn validity(&self) -> &Grid<bool> {
        &self.valid
    }

    /// Sample at a continuous pixel coordinate using the nearest pixel.
    pub fn sample_nearest(&self, x: f64, y: f64) -> Option<f64> {
        let (u, v) = (x.round(), y.round());
        if u < 0.0 || v < 0.0 || u >= self.width() as f64 || v >= self.height() as f64 {
            return None;
        }
        let (u, v) = (u as u32, v as u32);
        self.is_valid(u, v).then(|| self.get(u, v))
    }

    /// 8-bit grayscale rendering, `round(255 * p)`; invalid pixels are 0.
    pub fn to_gray8(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width(), self.height(), |x, y| {
            let p = if self.is_valid(x, y) { self.get(x, y) } else { 0.0 };
            image::Luma([(255.0 * p).round() as u8])
        })
    }

    /// Mean probability over the pixels where `mask` is set and the map is valid.
    pub fn masked_mean(&self, mask: &Grid<bool>) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for ((p, ok), m) in self.values.iter().zip(self.valid.iter()).zip(mask.iter()) {
            if *ok && *m {
                sum += p;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_from_values_masks_non_positive() {
        let g = Grid::from_vec(3, 1, vec![1.0, 0.0, f64::NAN]).unwrap();
        let d = DepthMap::from_values(g);
        assert_eq!(d.depth(0, 0), Some(1.0));
        assert_eq!(d.depth(1, 0), None);
        assert_eq!(d.depth(2, 0), None);
    }

    #[test]
    fn depth_new_rejects_invalid_valid_pixel() {
        let g = Grid::from_vec(2, 1, vec![1.0, -2.0]).unwrap();
        let m = Grid::new(2, 1, true);
        assert!(matches!(DepthMap::new(g, m), Err(Error::InvalidDepth(_))));
    }

    #[test]
    fn probability_clamps_and_renders() {
        let g = Grid::from_vec(3, 1, vec![-0.5, 0.5, 2.0]).unwrap();
        let p = ProbabilityMap::from_values(g);
        assert_eq!(p.get(0, 0), 0.0);
        assert_eq!(p.get(2, 0), 1.0);
        let img = p.to_gray8();
        assert_eq!(img.get_pixel(1, 0).0[0], 128);
        assert_eq!(img.get_pixel(2, 0).0[0], 255);
    }

    #[test]
    fn grid_from_vec_checks_len() {
        assert!(Grid::from_vec(2, 2, vec![0u8; 3]).is_err());
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median_in_place(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median_in_place(&mut [4.0, 1.0, 2.0, 3.0]), Some(3.0));
        assert_eq!(median_in_place(&mut []), None);
    }
}
