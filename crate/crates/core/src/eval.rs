//! Trajectory metrics: absolute trajectory error after rigid alignment and
//! tracking rate.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::PoseSE3;

/// Timestamped camera-to-world poses with strictly increasing stamps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    stamps: Vec<f64>,
    poses: Vec<PoseSE3>,
}

impl Trajectory {
    pub fn new(stamps: Vec<f64>, poses: Vec<PoseSE3>) -> Result<Self> {
        if stamps.len() != poses.len() {
            return Err(Error::param("stamps and poses differ in length"));
        }
        if stamps.iter().any(|t| !t.is_finite()) || stamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("trajectory timestamps must be finite and strictly increasing"));
        }
        Ok(Self { stamps, poses })
    }

    pub fn len(&self) -> usize {
        self.stamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamps.is_empty()
    }

    pub fn stamps(&self) -> &[f64] {
        &self.stamps
    }

    pub fn poses(&self) -> &[PoseSE3] {
        &self.poses
    }

    pub fn span(&self) -> Option<(f64, f64)> {
        Some((*self.stamps.first()?, *self.stamps.last()?))
    }

    /// Applies `t` on the left of every pose.
    pub fn transformed(&self, t: &PoseSE3) -> Self {
        Self { stamps: self.stamps.clone(), poses: self.poses.iter().map(|p| t.compose(p)).collect() }
    }

    /// Reads the TUM format: `timestamp tx ty tz qx qy qz qw`, `#` comments.
    pub fn read_tum(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tum(&text, path)
    }

    pub fn parse_tum(text: &str, path: &Path) -> Result<Self> {
        let mut stamps = Vec::new();
        let mut poses = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: Vec<f64> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>().map_err(|_| Error::parse(path, ln + 1, format!("bad number '{s}'"))))
                .collect::<Result<_>>()?;
            if v.len() != 8 {
                return Err(Error::parse(path, ln + 1, format!("expected 8 values, got {}", v.len())));
            }
            let pose = PoseSE3::from_quaternion(v[7], v[4], v[5], v[6], Vector3::new(v[1], v[2], v[3]))
                .map_err(|e| Error::parse(path, ln + 1, e.to_string()))?;
            stamps.push(v[0]);
            poses.push(pose);
        }
        Self::new(stamps, poses).map_err(|e| Error::parse(path, 0, e.to_string()))
    }

    pub fn to_tum_string(&self) -> String {
        let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
        for (t, p) in self.stamps.iter().zip(&self.poses) {
            let q = p.quaternion();
            let x = p.translation();
            let _ = writeln!(s, "{t:.6} {} {} {} {} {} {} {}", x.x, x.y, x.z, q.i, q.j, q.k, q.w);
        }
        s
    }

    pub fn write_tum(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tum_string()).map_err(|e| Error::io(path, e))
    }
}

/// Greedy nearest-timestamp matching: candidate pairs within `max_gap` are
/// taken in order of increasing gap, each pose used at most once. Returned
/// pairs `(est_index, gt_index)` are sorted by estimate index.
pub fn associate_trajectories(est: &Trajectory, gt: &Trajectory, max_gap: f64) -> Result<Vec<(usize, usize)>> {
    associate_stamps(est.stamps(), gt.stamps(), max_gap).and_then(|p| {
        if p.is_empty() {
            Err(Error::Empty("no timestamp matches"))
        } else {
            Ok(p)
        }
    })
}

pub(crate) fn associate_stamps(a: &[f64], b: &[f64], max_gap: f64) -> Result<Vec<(usize, usize)>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("cannot associate an empty sequence"));
    }
    let mut candidates = Vec::new();
    for (i, &t) in a.iter().enumerate() {
        let lo = b.partition_point(|&s| s < t - max_gap);
        for (j, &s) in b.iter().enumerate().skip(lo) {
            if s > t + max_gap {
                break;
            }
            candidates.push(((t - s).abs(), i, j));
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    Ok(pairs)
}

/// Least-squares rigid transform (no scale) taking `est` positions onto `gt`.
pub fn align_umeyama(est: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<PoseSE3> {
    if est.len() != gt.len() {
        return Err(Error::param("alignment needs equally many points on both sides"));
    }
    if est.len() < 3 {
        return Err(Error::Degenerate("alignment needs at least three pairs".into()));
    }
    let n = est.len() as f64;
    let mu_e = est.iter().sum::<Vector3<f64>>() / n;
    let mu_g = gt.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for (e, g) in est.iter().zip(gt) {
        cov += (g - mu_g) * (e - mu_e).transpose();
    }
    cov /= n;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0] {
        return Err(Error::Degenerate("positions are collinear or coincident".into()));
    }
    let mut s = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    let t = mu_g - r * mu_e;
    PoseSE3::new(r, t)
}

/// `sqrt(mean |A p_est + ... - p_gt|^2)` with `alignment` applied to the estimates.
pub fn ate_rmse(est: &[Vector3<f64>], gt: &[Vector3<f64>], alignment: &PoseSE3) -> Result<f64> {
    if est.is_empty() || est.len() != gt.len() {
        return Err(Error::Empty("ATE needs a non-empty, matched set of positions"));
    }
    let mut sum = 0.0;
    for (e, g) in est.iter().zip(gt) {
        let a = alignment.rotation() * e + alignment.translation();
        sum += (a - g).norm_squared();
    }
    Ok((sum / est.len() as f64).sqrt())
}

/// Tracked first-to-last span over the sequence duration, clamped to `[0, 1]`.
pub fn tracking_rate(est: &Trajectory, span: (f64, f64)) -> Result<f64> {
    let (t0, t1) = span;
    if !(t1 > t0) {
        return Err(Error::param(format!("sequence span [{t0}, {t1}] is empty")));
    }
    Ok(match est.span() {
        None => 0.0,
        Some((a, b)) => ((b - a) / (t1 - t0)).clamp(0.0, 1.0),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub ate_rmse: f64,
    pub tracking_rate: f64,
    pub matched: usize,
    /// Transform applied to the estimate before measuring ATE.
    pub alignment: PoseSE3,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        format!(
            "ATE RMSE      : {:.6} m\nTracking rate : {:.4}\nMatched poses : {}\nAlignment     : {}\n",
            self.ate_rmse, self.tracking_rate, self.matched, self.alignment
        )
    }

    pub fn to_key_values(&self) -> String {
        let q = self.alignment.quaternion();
        let t = self.alignment.translation();
        format!(
            "ate_rmse={}\ntracking_rate={}\nmatched={}\nalignment_t={} {} {}\nalignment_q={} {} {} {}\n",
            self.ate_rmse, self.tracking_rate, self.matched, t.x, t.y, t.z, q.w, q.i, q.j, q.k
        )
    }
}

/// Associates, aligns and scores `est` against `gt`. The identity is kept as
/// the alignment when it scores at least as well as the least-squares fit.
/// Without an explicit span the ground-truth time range is used for the
/// tracking rate.
pub fn evaluate(est: &Trajectory, gt: &Trajectory, span: Option<(f64, f64)>, max_gap: f64) -> Result<EvalReport> {
    let pairs = associate_trajectories(est, gt, max_gap)?;
    let pe: Vec<Vector3<f64>> = pairs.iter().map(|&(i, _)| *est.poses()[i].translation()).collect();
    let pg: Vec<Vector3<f64>> = pairs.iter().map(|&(_, j)| *gt.poses()[j].translation()).collect();
    let fitted = align_umeyama(&pe, &pg)?;
    let (ate_fit, ate_id) = (ate_rmse(&pe, &pg, &fitted)?, ate_rmse(&pe, &pg, &PoseSE3::identity())?);
    // rounding in the fit can leave it marginally worse than no alignment
    let (alignment, ate) = if ate_id <= ate_fit { (PoseSE3::identity(), ate_id) } else { (fitted, ate_fit) };
    let span = match span {
        Some(s) => s,
        None => gt.span().ok_or(Error::Empty("empty ground truth"))?,
    };
    Ok(EvalReport { ate_rmse: ate, tracking_rate: tracking_rate(est, span)?, matched: pairs.len(), alignment })
}
