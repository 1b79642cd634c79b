//! Moving-region magnitude and its fusion with the movable prior.
//!
//! Flow measured between the current frame and a synthesized neighbour still
//! carries residual camera motion and false correspondences. The same flow
//! measured on the static background pair shows a similar error pattern, so
//! it is subtracted; the pointwise minimum with the raw magnitude keeps the
//! subtraction from inflating the estimate. Contributions from `t +- j` are
//! averaged and multiplied with the movable prior.

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::geometry::{ensure_same_dims, Grid, ProbabilityMap};
use crate::movable::clip_norm;

#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    /// Positive frame offsets `j`; both `t + j` and `t - j` are used.
    pub offsets: Vec<usize>,
    /// Motion (px) mapped to probability 0.
    pub mag_lo: f64,
    /// Motion (px) mapped to probability 1.
    pub mag_hi: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self { offsets: vec![2], mag_lo: 0.5, mag_hi: 3.0 }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if self.offsets.is_empty() || self.offsets.contains(&0) {
            return Err(Error::param("offsets must be a non-empty set of positive integers"));
        }
        if !(0.0 <= self.mag_lo && self.mag_lo < self.mag_hi && self.mag_hi.is_finite()) {
            return Err(Error::param(format!(
                "magnitude interval [{}, {}] must satisfy 0 <= lo < hi",
                self.mag_lo, self.mag_hi
            )));
        }
        Ok(())
    }

    pub fn max_offset(&self) -> usize {
        self.offsets.iter().copied().max().unwrap_or(0)
    }
}

/// Scalar motion magnitude in pixels with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionMap {
    pub values: Grid<f64>,
    pub valid: Grid<bool>,
}

impl MotionMap {
    pub fn dims(&self) -> (u32, u32) {
        self.values.dims()
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        self.valid.get(x, y).then(|| *self.values.get(x, y))
    }

    /// Mean over valid pixels selected by `mask`.
    pub fn masked_mean(&self, mask: &Grid<bool>) -> Option<f64> {
        let (mut s, mut n) = (0.0, 0usize);
        for ((v, ok), m) in self.values.iter().zip(self.valid.iter()).zip(mask.iter()) {
            if *ok && *m {
                s += v;
                n += 1;
            }
        }
        (n > 0).then(|| s / n as f64)
    }

    /// Clip-normalized to `[0, 1]` for display.
    pub fn to_probability(&self, params: &FusionParams) -> ProbabilityMap {
        let values = self.values.map(|&m| clip_norm(m, params.mag_lo, params.mag_hi));
        ProbabilityMap::with_validity(values, self.valid.clone()).expect("same dims")
    }
}

pub fn flow_magnitude(flow: &FlowField) -> MotionMap {
    let values = Grid::from_fn(flow.width(), flow.height(), |x, y| match flow.get(x, y) {
        Some((u, v)) => u.hypot(v),
        None => 0.0,
    });
    MotionMap { values, valid: flow.valid.clone() }
}

/// `min(|F_dyn|, |F_dyn - F_bg|)` per pixel.
///
/// Where only the background flow is invalid (e.g. a hole in the synthesized
/// background) the raw dynamic magnitude is used; where the dynamic flow is
/// invalid the result is invalid.
pub fn differenced_motion(dyn_flow: &FlowField, bg_flow: &FlowField) -> Result<MotionMap> {
    ensure_same_dims(dyn_flow.dims(), bg_flow.dims())?;
    let (w, h) = dyn_flow.dims();
    let mut valid = Grid::new(w, h, false);
    let values = Grid::from_fn(w, h, |x, y| {
        let Some((du, dv)) = dyn_flow.get(x, y) else { return 0.0 };
        valid.set(x, y, true);
        let raw = du.hypot(dv);
        match bg_flow.get(x, y) {
            Some((bu, bv)) => raw.min((du - bu).hypot(dv - bv)).max(0.0),
            None => raw,
        }
    });
    Ok(MotionMap { values, valid })
}

/// Per-pixel mean over the contributions valid at that pixel.
///
/// With all `2n` contributions present and valid this is exactly
/// `1/(2n) * sum`. Missing neighbours at sequence boundaries simply shrink
/// the count.
pub fn temporal_average(contributions: &[MotionMap]) -> Result<MotionMap> {
    let first = contributions.first().ok_or(Error::Empty("no motion contributions"))?;
    let dims = first.dims();
    for c in contributions {
        ensure_same_dims(dims, c.dims())?;
    }
    let (w, h) = dims;
    let mut valid = Grid::new(w, h, false);
    let values = Grid::from_fn(w, h, |x, y| {
        let mut sum = 0.0;
        let mut n = 0usize;
        for c in contributions {
            if let Some(m) = c.get(x, y) {
                sum += m;
                n += 1;
            }
        }
        if n == 0 {
            return 0.0;
        }
        valid.set(x, y, true);
        sum / n as f64
    });
    Ok(MotionMap { values, valid })
}

/// `P = p_m * clipnorm(M)`. Pixels with no valid motion fall back to `p_m`.
pub fn final_probability(
    movable: &ProbabilityMap,
    motion: &MotionMap,
    params: &FusionParams,
) -> Result<ProbabilityMap> {
    ensure_same_dims(movable.dims(), motion.dims())?;
    params.validate()?;
    let (w, h) = movable.dims();
    let values = Grid::from_fn(w, h, |x, y| {
        let pm = movable.get(x, y);
        match motion.get(x, y) {
            Some(m) => pm * clip_norm(m, params.mag_lo, params.mag_hi),
            None => pm,
        }
    });
    ProbabilityMap::with_validity(values, movable.validity().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant_motion(w: u32, h: u32, m: f64) -> MotionMap {
        MotionMap { values: Grid::new(w, h, m), valid: Grid::new(w, h, true) }
    }

    #[test]
    fn magnitude_is_euclidean() {
        let f = FlowField::from_fn(2, 1, |x, _| if x == 0 { (0.0, 0.0) } else { (3.0, 4.0) });
        let m = flow_magnitude(&f);
        assert_eq!(m.get(0, 0), Some(0.0));
        assert_eq!(m.get(1, 0), Some(5.0));
    }

    #[test]
    fn equal_flows_cancel() {
        let f = FlowField::from_fn(5, 4, |x, y| (x as f64 * 0.3, -(y as f64)));
        let m = differenced_motion(&f, &f).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_background_leaves_raw_magnitude() {
        let d = FlowField::from_fn(3, 3, |_, _| (3.0, 4.0));
        let m = differenced_motion(&d, &FlowField::zeros(3, 3)).unwrap();
        assert!(m.values.iter().all(|&v| v == 5.0));
    }

    #[test]
    fn invalid_background_falls_back_to_raw() {
        let d = FlowField::from_fn(2, 1, |_, _| (3.0, 4.0));
        let mut b = FlowField::from_fn(2, 1, |_, _| (3.0, 4.0));
        b.valid.set(1, 0, false);
        let m = differenced_motion(&d, &b).unwrap();
        assert_eq!(m.get(0, 0), Some(0.0));
        assert_eq!(m.get(1, 0), Some(5.0));
        let mut d2 = d.clone();
        d2.valid.set(0, 0, false);
        assert_eq!(differenced_motion(&d2, &b).unwrap().get(0, 0), None);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(differenced_motion(&FlowField::zeros(2, 2), &FlowField::zeros(3, 2)).is_err());
        let p = ProbabilityMap::zeros(2, 2);
        assert!(final_probability(&p, &constant_motion(3, 2, 0.0), &FusionParams::default()).is_err());
    }

    #[test]
    fn average_of_constants() {
        let m = temporal_average(&[constant_motion(3, 3, 4.0), constant_motion(3, 3, 4.0)]).unwrap();
        assert!(m.values.iter().all(|&v| v == 4.0));
        let m = temporal_average(&[constant_motion(3, 3, 2.0), constant_motion(3, 3, 6.0)]).unwrap();
        assert!(m.values.iter().all(|&v| v == 4.0));
        assert!(matches!(temporal_average(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn average_skips_invalid_and_marks_all_invalid() {
        let mut a = constant_motion(2, 1, 2.0);
        let mut b = constant_motion(2, 1, 6.0);
        a.valid.set(0, 0, false);
        a.valid.set(1, 0, false);
        b.valid.set(1, 0, false);
        let m = temporal_average(&[a, b]).unwrap();
        assert_eq!(m.get(0, 0), Some(6.0));
        assert_eq!(m.get(1, 0), None);
    }

    #[test]
    fn movable_prior_gates_and_saturates() {
        let params = FusionParams::default();
        let pm = ProbabilityMap::from_values(Grid::from_vec(2, 1, vec![0.0, 1.0]).unwrap());
        let p = final_probability(&pm, &constant_motion(2, 1, params.mag_hi), &params).unwrap();
        assert_eq!(p.get(0, 0), 0.0);
        assert_eq!(p.get(1, 0), 1.0);
        let p = final_probability(&pm, &constant_motion(2, 1, 100.0), &params).unwrap();
        assert_eq!(p.get(0, 0), 0.0);
    }

    #[test]
    fn missing_motion_falls_back_to_prior() {
        let pm = ProbabilityMap::from_values(Grid::new(1, 1, 0.7));
        let m = MotionMap { values: Grid::new(1, 1, 0.0), valid: Grid::new(1, 1, false) };
        assert_eq!(final_probability(&pm, &m, &FusionParams::default()).unwrap().get(0, 0), 0.7);
    }

    #[test]
    fn params_validation() {
        assert!(FusionParams { offsets: vec![], ..Default::default() }.validate().is_err());
        assert!(FusionParams { offsets: vec![0], ..Default::default() }.validate().is_err());
        assert!(FusionParams { mag_lo: 3.0, mag_hi: 3.0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn difference_never_exceeds_raw(du in -20.0f64..20.0, dv in -20.0f64..20.0, bu in -20.0f64..20.0, bv in -20.0f64..20.0) {
            let d = FlowField::from_fn(1, 1, |_, _| (du, dv));
            let b = FlowField::from_fn(1, 1, |_, _| (bu, bv));
            let m = differenced_motion(&d, &b).unwrap().get(0, 0).unwrap();
            prop_assert!(m >= 0.0 && m <= du.hypot(dv));
        }

        #[test]
        fn probability_bounded_and_monotone(p1 in 0.0f64..1.0, p2 in 0.0f64..1.0, m1 in 0.0f64..10.0, m2 in 0.0f64..10.0) {
            let params = FusionParams::default();
            let eval = |p: f64, m: f64| {
                let pm = ProbabilityMap::from_values(Grid::new(1, 1, p));
                final_probability(&pm, &constant_motion(1, 1, m), &params).unwrap().get(0, 0)
            };
            let (pl, ph) = (p1.min(p2), p1.max(p2));
            let (ml, mh) = (m1.min(m2), m1.max(m2));
            let v = eval(pl, ml);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!(eval(ph, ml) >= v);
            prop_assert!(eval(pl, mh) >= v);
        }
    }
}
