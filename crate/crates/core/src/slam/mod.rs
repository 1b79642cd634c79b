//! Probability-gated map points and weighted bundle adjustment over
//! abstract features and correspondences.

mod ba;
mod points;
mod problem_io;

pub use ba::{
    analytic_jacobian, perturb, solve_weighted_ba, weighted_ba_residuals, BaPoint, BaPose, BaProblem, BaSolution,
    Observation, PointJacobian, PoseJacobian, Residuals, SolveReport, SolverConfig,
};
pub use points::{cull_map_points, select_map_points, SelectionParams, TrackedPoint};
pub use problem_io::{parse_problem, read_problem, write_problem, write_problem_to};
