//! Movable-region prior from static/dynamic background differencing.
//!
//! A frame is compared against an image of the same view with every
//! potentially dynamic object removed. Two per-pixel reductions of the RGB
//! difference are normalized separately and blended with a per-frame weight
//! that suppresses the min-max term when the frame is nearly static.

use crate::error::{Error, Result};
use crate::geometry::{ensure_same_dims, Grid, ImageBuffer, ProbabilityMap};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MovableParams {
    /// Intensity difference mapped to 0 by the clipped normalization.
    pub clip_lo: f64,
    /// Intensity difference mapped to 1 by the clipped normalization.
    pub clip_hi: f64,
    /// Scale in the exponent of the blend weight.
    pub lambda_scale: f64,
}

impl Default for MovableParams {
    fn default() -> Self {
        Self { clip_lo: 15.0, clip_hi: 35.0, lambda_scale: 0.04 }
    }
}

impl MovableParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.clip_lo && self.clip_lo < self.clip_hi && self.clip_hi <= 255.0) {
            return Err(Error::param(format!(
                "clip interval [{}, {}] must satisfy 0 <= lo < hi <= 255",
                self.clip_lo, self.clip_hi
            )));
        }
        if !(self.lambda_scale > 0.0 && self.lambda_scale.is_finite()) {
            return Err(Error::param(format!("lambda_scale must be positive, got {}", self.lambda_scale)));
        }
        Ok(())
    }
}

/// Channel-wise absolute difference reduced by max and by mean.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffChannels {
    pub max_diff: Grid<f64>,
    pub mean_diff: Grid<f64>,
}

pub fn abs_diff(frame: &ImageBuffer, background: &ImageBuffer) -> Result<DiffChannels> {
    ensure_same_dims(frame.dimensions(), background.dimensions())?;
    let (w, h) = frame.dimensions();
    let n = w as usize * h as usize;
    let mut max_diff = Vec::with_capacity(n);
    let mut mean_diff = Vec::with_capacity(n);
    for (a, b) in frame.pixels().zip(background.pixels()) {
        let d = [a[0].abs_diff(b[0]), a[1].abs_diff(b[1]), a[2].abs_diff(b[2])];
        max_diff.push(d[0].max(d[1]).max(d[2]) as f64);
        mean_diff.push((d[0] as f64 + d[1] as f64 + d[2] as f64) / 3.0);
    }
    Ok(DiffChannels { max_diff: Grid::from_vec(w, h, max_diff)?, mean_diff: Grid::from_vec(w, h, mean_diff)? })
}

#[inline]
pub(crate) fn clip_norm(x: f64, lo: f64, hi: f64) -> f64 {
    ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
}

pub fn f1_clip_norm(max_diff: &Grid<f64>, params: &MovableParams) -> Grid<f64> {
    max_diff.map(|&x| clip_norm(x, params.clip_lo, params.clip_hi))
}

/// Min-max normalization within the frame. A constant frame maps to zeros.
pub fn f2_minmax_norm(mean_diff: &Grid<f64>) -> Grid<f64> {
    let (lo, hi) = (mean_diff.min_value(), mean_diff.max_value());
    let range = hi - lo;
    if !(range > 0.0) {
        return mean_diff.map(|_| 0.0);
    }
    mean_diff.map(|&x| (x - lo) / range)
}

/// Per-frame blend weight in `(0.5, 1]`; exactly 1 when the frame matches its background.
pub fn lambda_blend_weight(mean_diff: &Grid<f64>, params: &MovableParams) -> f64 {
    let peak = if mean_diff.is_empty() { 0.0 } else { mean_diff.max_value() };
    0.5 + 1.0 / ((params.lambda_scale * peak).exp() + 1.0)
}

pub fn movable_probability(
    frame: &ImageBuffer,
    background: &ImageBuffer,
    params: &MovableParams,
) -> Result<ProbabilityMap> {
    params.validate()?;
    let diff = abs_diff(frame, background)?;
    let f1 = f1_clip_norm(&diff.max_diff, params);
    let f2 = f2_minmax_norm(&diff.mean_diff);
    let lambda = lambda_blend_weight(&diff.mean_diff, params);
    let values: Vec<f64> = f1.iter().zip(f2.iter()).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
    Ok(ProbabilityMap::from_values(Grid::from_vec(frame.width(), frame.height(), values)?))
}
