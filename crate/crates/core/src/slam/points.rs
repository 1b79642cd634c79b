use std::collections::HashMap;

use nalgebra::{Point2, Point3};

use crate::error::{Error, Result};

/// A feature or map point carrying its motion probability.
///
/// The bundle-adjustment weight is always `1 - motion_prob`; it is set once
/// from the probability and never re-derived from residuals.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackedPoint {
    pub id: u64,
    pub pixel: Point2<f64>,
    pub world: Point3<f64>,
    motion_prob: f64,
    weight: f64,
}

impl TrackedPoint {
    pub fn new(id: u64, pixel: Point2<f64>, world: Point3<f64>, motion_prob: f64) -> Result<Self> {
        check_prob(motion_prob)?;
        Ok(Self { id, pixel, world, motion_prob, weight: 1.0 - motion_prob })
    }

    #[inline]
    pub fn motion_prob(&self) -> f64 {
        self.motion_prob
    }

    #[inline]
    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn set_motion_prob(&mut self, p: f64) -> Result<()> {
        check_prob(p)?;
        self.motion_prob = p;
        self.weight = 1.0 - p;
        Ok(())
    }
}

fn check_prob(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::param(format!("motion probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// Probability thresholds for adding and deleting map points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectionParams {
    pub p_add: f64,
    pub p_del: f64,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self { p_add: 0.05, p_del: 0.1 }
    }
}

impl SelectionParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.p_add && self.p_add <= self.p_del && self.p_del <= 1.0) {
            return Err(Error::param(format!(
                "thresholds must satisfy 0 <= p_add <= p_del <= 1, got {} {}",
                self.p_add, self.p_del
            )));
        }
        Ok(())
    }
}

/// Candidates with `motion_prob <= p_add`, in input order.
pub fn select_map_points(candidates: &[TrackedPoint], params: &SelectionParams) -> Vec<TrackedPoint> {
    candidates.iter().filter(|p| p.motion_prob() <= params.p_add).cloned().collect()
}

/// Drops points whose current probability is `>= p_del`.
///
/// Points without an entry in `current_probs` were not observed in the
/// current frame and are kept unchanged. Survivors take the new probability
/// and weight.
pub fn cull_map_points(
    existing: &[TrackedPoint],
    current_probs: &HashMap<u64, f64>,
    params: &SelectionParams,
) -> Result<Vec<TrackedPoint>> {
    let mut out = Vec::with_capacity(existing.len());
    for p in existing {
        match current_probs.get(&p.id) {
            None => out.push(p.clone()),
            Some(&prob) if prob >= params.p_del => {
                check_prob(prob)?;
            }
            Some(&prob) => {
                let mut q = p.clone();
                q.set_motion_prob(prob)?;
                out.push(q);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(id: u64, p: f64) -> TrackedPoint {
        TrackedPoint::new(id, Point2::new(id as f64, 0.0), Point3::new(0.0, 0.0, 1.0), p).unwrap()
    }

    #[test]
    fn weight_tracks_probability() {
        let mut p = pt(1, 0.3);
        assert!((p.weight() - 0.7).abs() < 1e-12);
        p.set_motion_prob(0.9).unwrap();
        assert!((p.weight() - (1.0 - 0.9)).abs() < 1e-12);
        assert!(p.set_motion_prob(1.1).is_err());
        assert!(TrackedPoint::new(0, Point2::origin(), Point3::origin(), -0.1).is_err());
    }

    #[test]
    fn add_boundary_is_inclusive() {
        let c: Vec<_> = [0.0, 0.05, 0.051, 0.9].iter().enumerate().map(|(i, &p)| pt(i as u64, p)).collect();
        let s = select_map_points(&c, &SelectionParams::default());
        assert_eq!(s.iter().map(|p| p.id).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn all_static_accepted() {
        let c: Vec<_> = (0..5).map(|i| pt(i, 0.0)).collect();
        assert_eq!(select_map_points(&c, &SelectionParams::default()), c);
    }

    #[test]
    fn delete_boundary_is_inclusive() {
        let e: Vec<_> = (0..3).map(|i| pt(i, 0.0)).collect();
        let probs = HashMap::from([(0, 0.09), (1, 0.1), (2, 0.5)]);
        let s = cull_map_points(&e, &probs, &SelectionParams::default()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].id, 0);
        assert_eq!(s[0].motion_prob(), 0.09);
        assert!((s[0].weight() - 0.91).abs() < 1e-12);
    }

    #[test]
    fn unobserved_points_survive() {
        let e = vec![pt(7, 0.02)];
        let s = cull_map_points(&e, &HashMap::new(), &SelectionParams::default()).unwrap();
        assert_eq!(s, e);
    }

    #[test]
    fn params_validation() {
        assert!(SelectionParams { p_add: 0.2, p_del: 0.1 }.validate().is_err());
        assert!(SelectionParams::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn select_is_idempotent(probs in proptest::collection::vec(0.0f64..=1.0, 0..40)) {
            let c: Vec<_> = probs.iter().enumerate().map(|(i, &p)| pt(i as u64, p)).collect();
            let params = SelectionParams::default();
            let once = select_map_points(&c, &params);
            prop_assert_eq!(select_map_points(&once, &params), once);
        }

        #[test]
        fn cull_is_idempotent(probs in proptest::collection::vec(0.0f64..=1.0, 0..40)) {
            let e: Vec<_> = (0..probs.len()).map(|i| pt(i as u64, 0.0)).collect();
            let cur: HashMap<u64, f64> = probs.iter().enumerate().map(|(i, &p)| (i as u64, p)).collect();
            let params = SelectionParams::default();
            let once = cull_map_points(&e, &cur, &params).unwrap();
            prop_assert_eq!(cull_map_points(&once, &cur, &params).unwrap(), once);
        }
    }
}
