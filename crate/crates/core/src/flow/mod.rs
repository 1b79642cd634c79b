//! Dense optical flow: containers, file ingestion and the built-in estimator.

mod baseline;
mod flo;

use std::path::{Path, PathBuf};

pub use baseline::{baseline_flow, baseline_flow_with, BaselineFlowParams};
pub use flo::{read_flo, read_flo_from, write_flo, write_flo_to};

use crate::error::{Error, Result};
use crate::geometry::{ensure_same_dims, Grid, ImageBuffer};

/// Per-pixel displacement `(du, dv)` in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub du: Grid<f64>,
    pub dv: Grid<f64>,
    pub valid: Grid<bool>,
}

impl FlowField {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            du: Grid::new(width, height, 0.0),
            dv: Grid::new(width, height, 0.0),
            valid: Grid::new(width, height, true),
        }
    }

    /// Non-finite components make a pixel invalid.
    pub fn new(du: Grid<f64>, dv: Grid<f64>, valid: Grid<bool>) -> Result<Self> {
        ensure_same_dims(du.dims(), dv.dims())?;
        ensure_same_dims(du.dims(), valid.dims())?;
        let valid = Grid::from_fn(du.width(), du.height(), |x, y| {
            *valid.get(x, y) && du.get(x, y).is_finite() && dv.get(x, y).is_finite()
        });
        Ok(Self { du, dv, valid })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> (f64, f64)) -> Self {
        let mut du = Grid::new(width, height, 0.0);
        let mut dv = Grid::new(width, height, 0.0);
        let mut valid = Grid::new(width, height, true);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                du.set(x, y, a);
                dv.set(x, y, b);
                valid.set(x, y, a.is_finite() && b.is_finite());
            }
        }
        Self { du, dv, valid }
    }

    pub fn width(&self) -> u32 {
        self.du.width()
    }

    pub fn height(&self) -> u32 {
        self.du.height()
    }

    pub fn dims(&self) -> (u32, u32) {
        self.du.dims()
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Option<(f64, f64)> {
        self.valid.get(x, y).then(|| (*self.du.get(x, y), *self.dv.get(x, y)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FlowKind {
    /// Between the observed frame and a synthesized neighbour.
    Dynamic,
    /// Between the static background frame and its synthesized neighbour.
    Background,
}

impl FlowKind {
    pub fn tag(self) -> &'static str {
        match self {
            FlowKind::Dynamic => "dyn",
            FlowKind::Background => "bg",
        }
    }
}

/// One flow query of the moving-region stage: flow from `reference`
/// (frame `target_frame`) to `synthesized` (frame `source_frame` warped into
/// the target view).
pub struct FlowRequest<'a> {
    pub target_frame: usize,
    pub source_frame: usize,
    pub kind: FlowKind,
    pub reference: &'a ImageBuffer,
    pub synthesized: &'a ImageBuffer,
}

/// Produces a flow field for an ordered image pair. Implementations must be
/// deterministic.
pub trait FlowProvider: Sync {
    fn flow(&self, request: &FlowRequest<'_>) -> Result<FlowField>;
}

/// The built-in coarse-to-fine patch matcher.
#[derive(Clone, Debug, Default)]
pub struct BaselineFlow {
    pub params: BaselineFlowParams,
}

impl FlowProvider for BaselineFlow {
    fn flow(&self, request: &FlowRequest<'_>) -> Result<FlowField> {
        baseline_flow_with(request.reference, request.synthesized, &self.params)
    }
}

/// Precomputed flows read from `{target:06}_{source:06}_{dyn|bg}.flo` files.
#[derive(Clone, Debug)]
pub struct FlowFiles {
    pub dir: PathBuf,
}

impl FlowFiles {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(dir: &Path, target: usize, source: usize, kind: FlowKind) -> PathBuf {
        dir.join(format!("{target:06}_{source:06}_{}.flo", kind.tag()))
    }
}

impl FlowProvider for FlowFiles {
    fn flow(&self, request: &FlowRequest<'_>) -> Result<FlowField> {
        let path = Self::path_for(&self.dir, request.target_frame, request.source_frame, request.kind);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let f = read_flo(&path)?;
        ensure_same_dims(request.reference.dimensions(), f.dims())?;
        Ok(f)
    }
}
