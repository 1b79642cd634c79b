//! Camera model, rigid transforms and raster containers shared by all stages.

mod camera;
mod raster;
mod se3;

pub use camera::{backproject, project, Intrinsics};
pub(crate) use camera::{backproject_unchecked, project_unchecked};
pub(crate) use raster::{ensure_same_dims, median_in_place};
pub use raster::{DepthMap, Grid, ImageBuffer, ProbabilityMap};
pub use se3::{hat, se3_exp, se3_log, so3_exp, so3_left_jacobian, so3_log, transform, PoseSE3};

pub use nalgebra::{Point2, Point3};
