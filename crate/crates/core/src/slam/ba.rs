//! Weighted bundle adjustment with fixed per-point weights.
//!
//! Minimizes `1/2 * sum_i w_i * |x_i - pi(R X_i + t)|^2` over the free poses
//! (world-to-camera) and free points with damped Gauss-Newton. The weights
//! come from the points' motion probabilities and stay constant for the
//! whole solve; there is no robust kernel.

use nalgebra::{DMatrix, DVector, Matrix2x3, Point2, Point3, SMatrix, Vector2, Vector3, Vector6};

use super::points::TrackedPoint;
use crate::error::{Error, Result};
use crate::geometry::{hat, project_unchecked, Intrinsics, PoseSE3};

pub type PoseJacobian = SMatrix<f64, 2, 6>;
pub type PointJacobian = Matrix2x3<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct BaPose {
    /// World-to-camera transform.
    pub pose: PoseSE3,
    pub fixed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaPoint {
    pub point: TrackedPoint,
    pub fixed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub pose: usize,
    pub point: usize,
    pub pixel: Point2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaProblem {
    pub intrinsics: Intrinsics,
    pub poses: Vec<BaPose>,
    pub points: Vec<BaPoint>,
    pub observations: Vec<Observation>,
}

impl BaProblem {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        for (i, o) in self.observations.iter().enumerate() {
            if o.pose >= self.poses.len() || o.point >= self.points.len() {
                return Err(Error::param(format!(
                    "observation {i} references pose {} / point {} (have {} / {})",
                    o.pose,
                    o.point,
                    self.poses.len(),
                    self.points.len()
                )));
            }
        }
        if self.poses.iter().all(|p| p.fixed) && self.points.iter().all(|p| p.fixed) {
            return Err(Error::param("problem has no free variables"));
        }
        Ok(())
    }

    /// Weight of every observation, in observation order.
    pub fn weights(&self) -> Vec<f64> {
        self.observations.iter().map(|o| self.points[o.point].point.weight()).collect()
    }

    fn num_free(&self) -> usize {
        6 * self.poses.iter().filter(|p| !p.fixed).count() + 3 * self.points.iter().filter(|p| !p.fixed).count()
    }
}

/// Stacked reprojection residuals of the observations in front of their cameras.
#[derive(Clone, Debug, PartialEq)]
pub struct Residuals {
    /// `measured - projected`, two entries per included observation.
    pub residuals: Vec<f64>,
    /// One weight per included observation.
    pub weights: Vec<f64>,
    /// Indices of the included observations.
    pub included: Vec<usize>,
    /// Observations behind their camera, left out of the cost.
    pub excluded: Vec<usize>,
}

impl Residuals {
    pub fn cost(&self) -> f64 {
        let mut c = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            let (a, b) = (self.residuals[2 * i], self.residuals[2 * i + 1]);
            c += w * (a * a + b * b);
        }
        0.5 * c
    }
}

pub fn weighted_ba_residuals(problem: &BaProblem) -> Result<Residuals> {
    problem.validate()?;
    let mut out = Residuals { residuals: Vec::new(), weights: Vec::new(), included: Vec::new(), excluded: Vec::new() };
    for (i, o) in problem.observations.iter().enumerate() {
        let pose = &problem.poses[o.pose].pose;
        let pt = &problem.points[o.point].point;
        let pc = pose.transform(&pt.world);
        if !(pc.z > 0.0) {
            log::warn!("observation {i} (pose {}, point {}) is behind the camera; excluded", o.pose, o.point);
            out.excluded.push(i);
            continue;
        }
        let r = o.pixel - project_unchecked(&pc, &problem.intrinsics);
        out.residuals.extend_from_slice(&[r.x, r.y]);
        out.weights.push(pt.weight());
        out.included.push(i);
    }
    Ok(out)
}

/// Jacobians of `measured - pi(R X + t)` with respect to a left increment of
/// the pose (`[phi, rho]` ordering) and to the world point.
pub fn analytic_jacobian(pose: &PoseSE3, point: &Point3<f64>, k: &Intrinsics) -> Result<(PoseJacobian, PointJacobian)> {
    let pc = pose.transform(point);
    if !(pc.z > 0.0) {
        return Err(Error::BehindCamera(pc.z));
    }
    Ok(jacobian_at(pose, &pc, k))
}

#[inline]
fn jacobian_at(pose: &PoseSE3, pc: &Point3<f64>, k: &Intrinsics) -> (PoseJacobian, PointJacobian) {
    let iz = 1.0 / pc.z;
    let iz2 = iz * iz;
    let dpi = Matrix2x3::new(k.fx * iz, 0.0, -k.fx * pc.x * iz2, 0.0, k.fy * iz, -k.fy * pc.y * iz2);
    // d(P)/d(phi) = -[P]x, d(P)/d(rho) = I; residual carries a minus sign.
    let d_rot = dpi * hat(&pc.coords);
    let d_trans = -dpi;
    let mut jp = PoseJacobian::zeros();
    jp.fixed_view_mut::<2, 3>(0, 0).copy_from(&d_rot);
    jp.fixed_view_mut::<2, 3>(0, 3).copy_from(&d_trans);
    let jx = -dpi * pose.rotation();
    (jp, jx)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub initial_damping: f64,
    pub damping_factor: f64,
    /// Stop when the relative cost decrease falls below this.
    pub relative_cost_tol: f64,
    /// Stop when the update norm falls below this.
    pub update_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            initial_damping: 1e-4,
            damping_factor: 10.0,
            relative_cost_tol: 1e-10,
            update_tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub excluded_observations: usize,
}

#[derive(Clone, Debug)]
pub struct BaSolution {
    pub problem: BaProblem,
    pub report: SolveReport,
}

struct Layout {
    pose_offset: Vec<Option<usize>>,
    point_offset: Vec<Option<usize>>,
    n: usize,
}

impl Layout {
    fn new(problem: &BaProblem) -> Self {
        let mut n = 0;
        let pose_offset = problem
            .poses
            .iter()
            .map(|p| {
                (!p.fixed).then(|| {
                    n += 6;
                    n - 6
                })
            })
            .collect();
        let point_offset = problem
            .points
            .iter()
            .map(|p| {
                (!p.fixed).then(|| {
                    n += 3;
                    n - 3
                })
            })
            .collect();
        Self { pose_offset, point_offset, n }
    }
}

// Zero-weight observations are skipped outright so that they cannot
// influence the solution in any bit.
fn evaluate_cost(problem: &BaProblem) -> (f64, usize) {
    let mut c = 0.0;
    let mut excluded = 0;
    for o in &problem.observations {
        let pt = &problem.points[o.point].point;
        let w = pt.weight();
        if w == 0.0 {
            continue;
        }
        let pc = problem.poses[o.pose].pose.transform(&pt.world);
        if !(pc.z > 0.0) {
            excluded += 1;
            continue;
        }
        let r = o.pixel - project_unchecked(&pc, &problem.intrinsics);
        c += w * r.norm_squared();
    }
    (0.5 * c, excluded)
}

fn normal_equations(problem: &BaProblem, layout: &Layout) -> (DMatrix<f64>, DVector<f64>) {
    let mut h = DMatrix::zeros(layout.n, layout.n);
    let mut g = DVector::zeros(layout.n);
    for o in &problem.observations {
        let pt = &problem.points[o.point].point;
        let w = pt.weight();
        if w == 0.0 {
            continue;
        }
        let pose = &problem.poses[o.pose].pose;
        let pc = pose.transform(&pt.world);
        if !(pc.z > 0.0) {
            continue;
        }
        let r: Vector2<f64> = o.pixel - project_unchecked(&pc, &problem.intrinsics);
        let (jp, jx) = jacobian_at(pose, &pc, &problem.intrinsics);
        let po = layout.pose_offset[o.pose];
        let xo = layout.point_offset[o.point];
        if let Some(a) = po {
            let jtw = jp.transpose() * w;
            let mut blk = h.view_mut((a, a), (6, 6));
            blk += jtw * jp;
            let mut gb = g.rows_mut(a, 6);
            gb += jtw * r;
            if let Some(b) = xo {
                let cross = jtw * jx;
                let mut blk = h.view_mut((a, b), (6, 3));
                blk += cross;
                let mut blk = h.view_mut((b, a), (3, 6));
                blk += cross.transpose();
            }
        }
        if let Some(b) = xo {
            let jtw = jx.transpose() * w;
            let mut blk = h.view_mut((b, b), (3, 3));
            blk += jtw * jx;
            let mut gb = g.rows_mut(b, 3);
            gb += jtw * r;
        }
    }
    (h, g)
}

fn check_rank(h: &DMatrix<f64>) -> Result<()> {
    let max_diag = h.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(max_diag > 0.0) {
        return Err(Error::Degenerate("normal equations are zero".into()));
    }
    let chol =
        h.clone().cholesky().ok_or_else(|| Error::Degenerate("normal equations are not positive definite".into()))?;
    let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v * v));
    if min_pivot < 1e-12 * max_diag {
        return Err(Error::Degenerate(format!(
            "normal equations are rank deficient (pivot ratio {:.3e})",
            min_pivot / max_diag
        )));
    }
    Ok(())
}

fn apply_update(problem: &BaProblem, layout: &Layout, delta: &DVector<f64>) -> BaProblem {
    let mut next = problem.clone();
    for (p, off) in next.poses.iter_mut().zip(&layout.pose_offset) {
        if let Some(a) = *off {
            let xi = Vector6::from_iterator(delta.rows(a, 6).iter().copied());
            p.pose = PoseSE3::exp(&xi).compose(&p.pose);
        }
    }
    for (p, off) in next.points.iter_mut().zip(&layout.point_offset) {
        if let Some(b) = *off {
            p.point.world += Vector3::new(delta[b], delta[b + 1], delta[b + 2]);
        }
    }
    next
}

/// Damped Gauss-Newton on the weighted reprojection cost.
///
/// Returns the best iterate even when the iteration limit is reached; the
/// input weights are carried through unchanged.
pub fn solve_weighted_ba(problem: &BaProblem, config: &SolverConfig) -> Result<BaSolution> {
    problem.validate()?;
    let layout = Layout::new(problem);
    debug_assert_eq!(layout.n, problem.num_free());

    let mut state = problem.clone();
    let (initial_cost, _) = evaluate_cost(&state);
    let mut cost = initial_cost;
    let mut report =
        SolveReport { initial_cost, final_cost: cost, iterations: 0, converged: cost == 0.0, excluded_observations: 0 };
    if !cost.is_finite() {
        return Err(Error::Degenerate("initial cost is not finite".into()));
    }

    let mut damping = config.initial_damping;
    let mut system = normal_equations(&state, &layout);
    check_rank(&system.0)?;

    while !report.converged && report.iterations < config.max_iters {
        report.iterations += 1;
        let (h, g) = &system;
        let mut damped = h.clone();
        for i in 0..layout.n {
            damped[(i, i)] += damping;
        }
        let Some(chol) = damped.cholesky() else {
            damping *= config.damping_factor;
            continue;
        };
        let delta = -chol.solve(g);
        if delta.norm() < config.update_tol {
            report.converged = true;
            break;
        }
        let candidate = apply_update(&state, &layout, &delta);
        let (new_cost, _) = evaluate_cost(&candidate);
        let rel = (cost - new_cost).abs() / cost.max(f64::MIN_POSITIVE);
        if new_cost.is_finite() && new_cost < cost {
            state = candidate;
            cost = new_cost;
            damping = (damping / config.damping_factor).max(1e-15);
            if new_cost == 0.0 || rel < config.relative_cost_tol {
                report.converged = true;
                break;
            }
            system = normal_equations(&state, &layout);
        } else {
            if new_cost.is_finite() && rel < config.relative_cost_tol {
                report.converged = true;
                break;
            }
            damping *= config.damping_factor;
            if damping > 1e16 {
                break;
            }
        }
    }
    let (final_cost, excluded) = evaluate_cost(&state);
    report.final_cost = final_cost;
    report.excluded_observations = excluded;
    Ok(BaSolution { problem: state, report })
}

/// Applies a left increment `exp(xi) * pose`.
pub fn perturb(pose: &PoseSE3, xi: &Vector6<f64>) -> PoseSE3 {
    PoseSE3::exp(xi).compose(pose)
}
