//! Line-oriented text format for bundle-adjustment problems.
//!
//! ```text
//! # comment
//! BA <num_poses> <num_points> <num_observations>
//! INTRINSICS fx fy cx cy width height
//! POSE idx fixed qw qx qy qz tx ty tz
//! POINT idx fixed x y z prob
//! OBS pose_idx point_idx u v
//! ```
//!
//! Poses are world-to-camera; `fixed` is `0` or `1`; `prob` is the motion
//! probability, from which the weight `1 - prob` follows. Records may appear
//! in any order after the header but indices must cover `0..count` exactly.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Point2, Point3, Vector3};

use super::ba::{BaPoint, BaPose, BaProblem, Observation};
use super::points::TrackedPoint;
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, PoseSE3};

pub fn read_problem(path: &Path) -> Result<BaProblem> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_problem(&text, path)
}

fn fields<T: std::str::FromStr>(parts: &[&str], path: &Path, line: usize) -> Result<Vec<T>> {
    parts.iter().map(|s| s.parse::<T>().map_err(|_| Error::parse(path, line, format!("cannot parse '{s}'")))).collect()
}

fn flag(s: &str, path: &Path, line: usize) -> Result<bool> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(Error::parse(path, line, format!("fixed flag must be 0 or 1, got '{s}'"))),
    }
}

fn slot<T>(v: &mut [Option<T>], idx: usize, item: T, what: &str, path: &Path, line: usize) -> Result<()> {
    match v.get_mut(idx) {
        None => Err(Error::parse(path, line, format!("{what} index {idx} exceeds header count"))),
        Some(Some(_)) => Err(Error::parse(path, line, format!("duplicate {what} {idx}"))),
        Some(s) => {
            *s = Some(item);
            Ok(())
        }
    }
}

pub fn parse_problem(text: &str, path: &Path) -> Result<BaProblem> {
    let mut counts: Option<(usize, usize, usize)> = None;
    let mut intrinsics = None;
    let mut poses: Vec<Option<BaPose>> = Vec::new();
    let mut points: Vec<Option<BaPoint>> = Vec::new();
    let mut observations = Vec::new();

    for (ln, raw) in text.lines().enumerate() {
        let ln = ln + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let (tag, rest) = (parts[0], &parts[1..]);
        if tag != "BA" && counts.is_none() {
            return Err(Error::parse(path, ln, "expected BA header first"));
        }
        let expect = |n: usize| {
            if rest.len() != n {
                Err(Error::parse(path, ln, format!("{tag} expects {n} fields, got {}", rest.len())))
            } else {
                Ok(())
            }
        };
        match tag {
            "BA" => {
                expect(3)?;
                if counts.is_some() {
                    return Err(Error::parse(path, ln, "duplicate header"));
                }
                let c: Vec<usize> = fields(rest, path, ln)?;
                counts = Some((c[0], c[1], c[2]));
                poses = (0..c[0]).map(|_| None).collect();
                points = (0..c[1]).map(|_| None).collect();
            }
            "INTRINSICS" => {
                expect(6)?;
                let f: Vec<f64> = fields(&rest[..4], path, ln)?;
                let d: Vec<u32> = fields(&rest[4..], path, ln)?;
                let k = Intrinsics::new(f[0], f[1], f[2], f[3], d[0], d[1])
                    .map_err(|e| Error::parse(path, ln, e.to_string()))?;
                intrinsics = Some(k);
            }
            "POSE" => {
                expect(9)?;
                let idx: usize = fields(&rest[..1], path, ln)?[0];
                let fixed = flag(rest[1], path, ln)?;
                let v: Vec<f64> = fields(&rest[2..], path, ln)?;
                let pose = PoseSE3::from_quaternion(v[0], v[1], v[2], v[3], Vector3::new(v[4], v[5], v[6]))
                    .map_err(|e| Error::parse(path, ln, e.to_string()))?;
                slot(&mut poses, idx, BaPose { pose, fixed }, "pose", path, ln)?;
            }
            "POINT" => {
                expect(6)?;
                let idx: usize = fields(&rest[..1], path, ln)?[0];
                let fixed = flag(rest[1], path, ln)?;
                let v: Vec<f64> = fields(&rest[2..], path, ln)?;
                let point = TrackedPoint::new(idx as u64, Point2::origin(), Point3::new(v[0], v[1], v[2]), v[3])
                    .map_err(|e| Error::parse(path, ln, e.to_string()))?;
                slot(&mut points, idx, BaPoint { point, fixed }, "point", path, ln)?;
            }
            "OBS" => {
                expect(4)?;
                let ids: Vec<usize> = fields(&rest[..2], path, ln)?;
                let uv: Vec<f64> = fields(&rest[2..], path, ln)?;
                observations.push(Observation { pose: ids[0], point: ids[1], pixel: Point2::new(uv[0], uv[1]) });
            }
            other => return Err(Error::parse(path, ln, format!("unknown record '{other}'"))),
        }
    }

    let (np, nx, no) = counts.ok_or_else(|| Error::parse(path, 0, "missing BA header"))?;
    let intrinsics = intrinsics.ok_or_else(|| Error::parse(path, 0, "missing INTRINSICS record"))?;
    if observations.len() != no {
        return Err(Error::parse(path, 0, format!("header declares {no} observations, found {}", observations.len())));
    }
    let poses: Vec<BaPose> = poses
        .into_iter()
        .enumerate()
        .map(|(i, p)| p.ok_or_else(|| Error::parse(path, 0, format!("pose {i} of {np} missing"))))
        .collect::<Result<_>>()?;
    let mut points: Vec<BaPoint> = points
        .into_iter()
        .enumerate()
        .map(|(i, p)| p.ok_or_else(|| Error::parse(path, 0, format!("point {i} of {nx} missing"))))
        .collect::<Result<_>>()?;
    // A point's pixel is its first observation.
    let mut seen = vec![false; points.len()];
    for o in &observations {
        if o.point < points.len() && !seen[o.point] {
            seen[o.point] = true;
            points[o.point].point.pixel = o.pixel;
        }
    }
    let problem = BaProblem { intrinsics, poses, points, observations };
    problem.validate().map_err(|e| Error::parse(path, 0, e.to_string()))?;
    Ok(problem)
}

pub fn write_problem(path: &Path, problem: &BaProblem) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_problem_to(&mut f, problem).map_err(|e| Error::io(path, e))
}

pub fn write_problem_to(w: &mut impl Write, problem: &BaProblem) -> std::io::Result<()> {
    let mut s = String::new();
    let k = &problem.intrinsics;
    let _ = writeln!(s, "BA {} {} {}", problem.poses.len(), problem.points.len(), problem.observations.len());
    let _ = writeln!(s, "INTRINSICS {} {} {} {} {} {}", k.fx, k.fy, k.cx, k.cy, k.width, k.height);
    for (i, p) in problem.poses.iter().enumerate() {
        let q = p.pose.quaternion();
        let t = p.pose.translation();
        let _ = writeln!(s, "POSE {i} {} {} {} {} {} {} {} {}", p.fixed as u8, q.w, q.i, q.j, q.k, t.x, t.y, t.z);
    }
    for (i, p) in problem.points.iter().enumerate() {
        let x = &p.point.world;
        let _ = writeln!(s, "POINT {i} {} {} {} {} {}", p.fixed as u8, x.x, x.y, x.z, p.point.motion_prob());
    }
    for o in &problem.observations {
        let _ = writeln!(s, "OBS {} {} {} {}", o.pose, o.point, o.pixel.x, o.pixel.y);
    }
    w.write_all(s.as_bytes())
}
