//! Rigid-body transforms and the SE(3) exponential map.
//!
//! Tangent vectors are ordered `[phi, rho]`: the first three entries are the
//! rotation (axis times angle), the last three the translational part. The
//! optimizer applies increments on the left, `T <- exp(xi) * T`.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Point3, Quaternion, Rotation3, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSE3 {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Display for PoseSE3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.quaternion();
        let t = self.translation;
        write!(
            f,
            "PoseSE3(t: [{:.4}, {:.4}, {:.4}], q: [w: {:.4}, x: {:.4}, y: {:.4}, z: {:.4}])",
            t.x, t.y, t.z, q.w, q.i, q.j, q.k
        )
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Checks that `rotation` is a proper rotation within 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if err > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::param(format!("rotation is not orthonormal (|RtR - I| = {err:.3e}, det = {det})")));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::param("translation must be finite"));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    /// From a (not necessarily normalized) quaternion `w, x, y, z`.
    pub fn from_quaternion(qw: f64, qx: f64, qy: f64, qz: f64, translation: Vector3<f64>) -> Result<Self> {
        let q = Quaternion::new(qw, qx, qy, qz);
        let n = q.norm();
        if !(n > 1e-12 && n.is_finite()) {
            return Err(Error::param("quaternion has zero norm"));
        }
        let uq = UnitQuaternion::from_quaternion(q);
        Ok(Self { rotation: *uq.to_rotation_matrix().matrix(), translation })
    }

    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: so3_exp(&axis_angle), translation }
    }

    #[inline]
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    #[inline]
    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Unit quaternion with non-negative scalar part.
    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation));
        if q.w < 0.0 {
            UnitQuaternion::new_unchecked(-q.into_inner())
        } else {
            q
        }
    }

    #[inline]
    pub fn transform(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> PoseSE3 {
        let rt = self.rotation.transpose();
        PoseSE3 { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        so3_log(&self.rotation).norm()
    }

    /// Rotation angle and translation distance between two poses.
    pub fn distance(&self, other: &PoseSE3) -> (f64, f64) {
        let d = self.inverse().compose(other);
        (d.angle(), (self.translation - other.translation).norm())
    }

    pub fn exp(xi: &Vector6<f64>) -> PoseSE3 {
        se3_exp(xi)
    }

    pub fn log(&self) -> Vector6<f64> {
        se3_log(self)
    }
}

impl Mul for PoseSE3 {
    type Output = PoseSE3;

    fn mul(self, rhs: PoseSE3) -> PoseSE3 {
        self.compose(&rhs)
    }
}

impl Mul<Point3<f64>> for &PoseSE3 {
    type Output = Point3<f64>;

    fn mul(self, rhs: Point3<f64>) -> Point3<f64> {
        self.transform(&rhs)
    }
}

pub fn transform(pose: &PoseSE3, p: &Point3<f64>) -> Point3<f64> {
    pose.transform(p)
}

#[inline]
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

// Coefficients sin(t)/t, (1-cos t)/t^2 and (t - sin t)/t^3. The last one
// cancels badly for small t, so it switches to its series below 1e-2.
fn exp_coefficients(theta: f64) -> (f64, f64, f64) {
    let t2 = theta * theta;
    if theta < 1e-4 {
        return (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        );
    }
    let (s, _) = theta.sin_cos();
    let half = (0.5 * theta).sin() / (0.5 * theta);
    let c = if theta < 1e-2 {
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0 - t2 * t2 * t2 / 362880.0
    } else {
        (theta - s) / (t2 * theta)
    };
    (s / theta, 0.5 * half * half, c)
}

pub fn so3_exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let (a, b, _) = exp_coefficients(theta);
    let k = hat(phi);
    Matrix3::identity() + k * a + k * k * b
}

pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    let (mut w, mut v) = (q.w, q.imag());
    if w < 0.0 {
        w = -w;
        v = -v;
    }
    let s = v.norm();
    if s < 1e-10 {
        // sin(theta/2) ~ theta/2
        return v * (2.0 / w);
    }
    let theta = 2.0 * s.atan2(w);
    v * (theta / s)
}

/// Left Jacobian of SO(3), which maps `rho` to the translation in `exp`.
pub fn so3_left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let (_, b, c) = exp_coefficients(phi.norm());
    let k = hat(phi);
    Matrix3::identity() + k * b + k * k * c
}

fn so3_left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let t2 = theta * theta;
    let d = if theta < 1e-2 {
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0 + t2 * t2 * t2 / 1209600.0
    } else {
        let (s, c) = theta.sin_cos();
        (1.0 - theta * s / (2.0 * (1.0 - c))) / t2
    };
    let k = hat(phi);
    Matrix3::identity() - k * 0.5 + k * k * d
}

pub fn se3_exp(xi: &Vector6<f64>) -> PoseSE3 {
    let phi = Vector3::new(xi[0], xi[1], xi[2]);
    let rho = Vector3::new(xi[3], xi[4], xi[5]);
    PoseSE3 { rotation: so3_exp(&phi), translation: so3_left_jacobian(&phi) * rho }
}

pub fn se3_log(pose: &PoseSE3) -> Vector6<f64> {
    let phi = so3_log(&pose.rotation);
    let rho = so3_left_jacobian_inv(&phi) * pose.translation;
    Vector6::new(phi.x, phi.y, phi.z, rho.x, rho.y, rho.z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn vec3() -> impl Strategy<Value = Vector3<f64>> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0).prop_map(|(x, y, z)| Vector3::new(x, y, z))
    }

    fn pose() -> impl Strategy<Value = PoseSE3> {
        (vec3(), vec3(), 0.0f64..3.0).prop_map(|(axis, t, angle)| {
            let axis = if axis.norm() < 1e-3 { Vector3::x() } else { axis.normalize() };
            PoseSE3::from_axis_angle(axis * angle, t * 5.0)
        })
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(se3_exp(&Vector6::zeros()), PoseSE3::identity());
    }

    #[test]
    fn exp_of_pure_translation() {
        let p = se3_exp(&Vector6::new(0.0, 0.0, 0.0, 1.5, -2.0, 0.25));
        assert_eq!(*p.rotation(), Matrix3::identity());
        assert_eq!(*p.translation(), Vector3::new(1.5, -2.0, 0.25));
    }

    #[test]
    fn quarter_turn_about_z() {
        let p = PoseSE3::from_axis_angle(Vector3::new(0.0, 0.0, FRAC_PI_2), Vector3::zeros());
        let q = p.transform(&Point3::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(q, Point3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn identity_transform_is_noop() {
        let p = Point3::new(0.3, -4.0, 2.0);
        assert_eq!(transform(&PoseSE3::identity(), &p), p);
    }

    #[test]
    fn new_rejects_non_rotation() {
        let mut r = Matrix3::identity();
        r[(0, 0)] = 1.01;
        assert!(PoseSE3::new(r, Vector3::zeros()).is_err());
        assert!(PoseSE3::new(-Matrix3::identity(), Vector3::zeros()).is_err());
    }

    #[test]
    fn quaternion_round_trip() {
        let p = PoseSE3::from_quaternion(0.9, 0.1, -0.3, 0.2, Vector3::new(1.0, 2.0, 3.0)).unwrap();
        let q = p.quaternion();
        let p2 = PoseSE3::from_quaternion(q.w, q.i, q.j, q.k, *p.translation()).unwrap();
        assert_abs_diff_eq!(*p.rotation(), *p2.rotation(), epsilon = 1e-14);
        assert!(PoseSE3::from_quaternion(0.0, 0.0, 0.0, 0.0, Vector3::zeros()).is_err());
    }

    #[test]
    fn log_near_pi_is_finite() {
        let phi = Vector3::new(0.0, 0.0, std::f64::consts::PI - 1e-7);
        let p = PoseSE3::from_axis_angle(phi, Vector3::new(1.0, 0.0, 0.0));
        let xi = p.log();
        assert!(xi.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(xi[2].abs(), phi.z, epsilon = 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn exp_log_round_trip(axis in vec3(), rho in vec3(), angle in 0.0f64..(std::f64::consts::PI - 1e-3)) {
            let axis = if axis.norm() < 1e-3 { Vector3::y() } else { axis.normalize() };
            let phi = axis * angle;
            let xi = Vector6::new(phi.x, phi.y, phi.z, rho.x * 3.0, rho.y * 3.0, rho.z * 3.0);
            let back = se3_log(&se3_exp(&xi));
            prop_assert!((back - xi).abs().max() < 1e-9, "{:?} vs {:?}", back, xi);
        }

        #[test]
        fn small_angle_round_trip(phi in vec3(), rho in vec3(), scale in 1e-12f64..1e-3) {
            let phi = phi * scale;
            let xi = Vector6::new(phi.x, phi.y, phi.z, rho.x, rho.y, rho.z);
            let back = se3_log(&se3_exp(&xi));
            let err = (back - xi).abs().max();
            prop_assert!(err < 1e-12, "error {err:e}");
        }

        #[test]
        fn compose_inverse_is_identity(a in pose(), p in vec3()) {
            let p = Point3::from(p * 4.0);
            let q = a.compose(&a.inverse()).transform(&p);
            prop_assert!((q - p).norm() < 1e-9);
            let q = a.inverse().compose(&a).transform(&p);
            prop_assert!((q - p).norm() < 1e-9);
        }

        #[test]
        fn composition_is_associative(a in pose(), b in pose(), c in pose(), p in vec3()) {
            let p = Point3::from(p);
            let left = (a * b) * c;
            let right = a * (b * c);
            prop_assert!((left.transform(&p) - right.transform(&p)).norm() < 1e-9);
            prop_assert!((left.rotation() - right.rotation()).abs().max() < 1e-9);
        }

        #[test]
        fn exp_is_proper_rotation(axis in vec3(), angle in -10.0f64..10.0) {
            let r = so3_exp(&(axis * angle));
            prop_assert!(PoseSE3::new(r, Vector3::zeros()).is_ok());
        }
    }
}
