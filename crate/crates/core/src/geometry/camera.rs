use nalgebra::{Matrix3, Point2, Point3};

use crate::error::{Error, Result};

/// Pinhole intrinsics for rectified images.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Published calibration of the TUM RGB-D `freiburg3` sequences.
    pub fn tum_fr3() -> Self {
        Self { fx: 535.4, fy: 539.2, cx: 320.1, cy: 247.6, width: 640, height: 480 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::param(format!("focal lengths must be positive, got {} {}", self.fx, self.fy)));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::param(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(1.0 / self.fx, 0.0, -self.cx / self.fx, 0.0, 1.0 / self.fy, -self.cy / self.fy, 0.0, 0.0, 1.0)
    }

    /// Whether `px` falls on the footprint of some pixel.
    pub fn contains(&self, px: &Point2<f64>) -> bool {
        px.x >= -0.5 && px.y >= -0.5 && px.x < self.width as f64 - 0.5 && px.y < self.height as f64 - 0.5
    }

    /// Intrinsics of the image downsampled by `factor` along both axes.
    pub fn scaled(&self, factor: f64, width: u32, height: u32) -> Self {
        Self { fx: self.fx / factor, fy: self.fy / factor, cx: self.cx / factor, cy: self.cy / factor, width, height }
    }
}

/// Lifts pixel `px` at metric depth `depth` into the camera frame.
pub fn backproject(px: Point2<f64>, depth: f64, k: &Intrinsics) -> Result<Point3<f64>> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::InvalidDepth(depth));
    }
    if !k.contains(&px) {
        return Err(Error::OutOfBounds { x: px.x, y: px.y, width: k.width, height: k.height });
    }
    Ok(backproject_unchecked(px.x, px.y, depth, k))
}

#[inline]
pub(crate) fn backproject_unchecked(u: f64, v: f64, depth: f64, k: &Intrinsics) -> Point3<f64> {
    Point3::new((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth)
}

/// Pinhole projection of a camera-frame point.
pub fn project(p: &Point3<f64>, k: &Intrinsics) -> Result<Point2<f64>> {
    if !(p.z > 0.0) {
        return Err(Error::BehindCamera(p.z));
    }
    Ok(project_unchecked(p, k))
}

#[inline]
pub(crate) fn project_unchecked(p: &Point3<f64>, k: &Intrinsics) -> Point2<f64> {
    Point2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn kinect() -> Intrinsics {
        Intrinsics::new(525.0, 525.0, 319.5, 239.5, 640, 480).unwrap()
    }

    #[test]
    fn principal_point_ray() {
        let k = kinect();
        let p = backproject(Point2::new(k.cx, k.cy), 2.0, &k).unwrap();
        assert_eq!(p, Point3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn unit_offset_at_unit_depth() {
        let k = Intrinsics::new(100.0, 100.0, 50.0, 40.0, 200, 100).unwrap();
        let p = backproject(Point2::new(k.cx + k.fx, k.cy), 1.0, &k).unwrap();
        assert_abs_diff_eq!(p.x, 1.0, epsilon = 1e-15);
        assert_eq!(p.y, 0.0);
        assert_eq!(p.z, 1.0);
    }

    #[test]
    fn backproject_matches_direct_arithmetic() {
        let k = kinect();
        let p = backproject(Point2::new(400.0, 300.0), 1.5, &k).unwrap();
        assert_abs_diff_eq!(p.x, (400.0 - 319.5) / 525.0 * 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.y, (300.0 - 239.5) / 525.0 * 1.5, epsilon = 1e-15);
        assert_eq!(p.z, 1.5);
    }

    #[test]
    fn backproject_rejects_bad_depth_and_bounds() {
        let k = kinect();
        assert!(matches!(backproject(Point2::new(1.0, 1.0), 0.0, &k), Err(Error::InvalidDepth(_))));
        assert!(matches!(backproject(Point2::new(1.0, 1.0), -1.0, &k), Err(Error::InvalidDepth(_))));
        assert!(matches!(backproject(Point2::new(700.0, 1.0), 1.0, &k), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let k = kinect();
        let px = project(&Point3::new(0.0, 0.0, 1.0), &k).unwrap();
        assert_eq!(px, Point2::new(k.cx, k.cy));
        assert!(matches!(project(&Point3::new(0.0, 0.0, 0.0), &k), Err(Error::BehindCamera(_))));
        assert!(matches!(project(&Point3::new(1.0, 0.0, -1.0), &k), Err(Error::BehindCamera(_))));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(Intrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(Intrinsics::tum_fr3().validate().is_ok());
    }

    #[test]
    fn inverse_matrix_is_inverse() {
        let k = Intrinsics::tum_fr3();
        let id = k.matrix() * k.inverse_matrix();
        assert_abs_diff_eq!(id, Matrix3::identity(), epsilon = 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn project_backproject_round_trip(
            u in -0.5f64..639.49, v in -0.5f64..479.49, depth in 0.05f64..50.0,
        ) {
            let k = kinect();
            let p = backproject(Point2::new(u, v), depth, &k).unwrap();
            let q = project(&p, &k).unwrap();
            prop_assert!((q.x - u).abs() < 1e-9 && (q.y - v).abs() < 1e-9);
        }
    }
}
