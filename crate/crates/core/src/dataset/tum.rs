use std::fs;
use std::path::{Path, PathBuf};

use super::images::DEFAULT_DEPTH_SCALE;
use super::manifest::{ManifestFrame, SequenceManifest, TumPose};
use crate::error::{Error, Result};
use crate::eval::associate_stamps;
use crate::geometry::Intrinsics;

pub const DEFAULT_MAX_TIME_GAP: f64 = 0.02;

/// One parsed line of a TUM index file: timestamp followed by its fields.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    pub timestamp: f64,
    pub fields: Vec<String>,
}

pub fn parse_index(text: &str, path: &Path) -> Result<Vec<IndexEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let ts = it.next().unwrap_or_default();
        let timestamp = ts
            .parse::<f64>()
            .ok()
            .filter(|t| t.is_finite())
            .ok_or_else(|| Error::parse(path, i + 1, format!("bad timestamp '{ts}'")))?;
        let fields: Vec<String> = it.map(str::to_string).collect();
        if fields.is_empty() {
            return Err(Error::parse(path, i + 1, "timestamp without a value"));
        }
        out.push(IndexEntry { timestamp, fields });
    }
    out.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(out)
}

pub fn read_index(path: &Path) -> Result<Vec<IndexEntry>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_index(&text, path)
}

#[derive(Clone, Debug)]
pub struct TumOptions {
    pub max_time_gap: f64,
    pub intrinsics: Intrinsics,
    pub depth_scale: f64,
    /// Directory, relative to the root, mirroring the sequence layout with static backgrounds.
    pub background_dir: PathBuf,
}

impl Default for TumOptions {
    fn default() -> Self {
        Self {
            max_time_gap: DEFAULT_MAX_TIME_GAP,
            intrinsics: Intrinsics::tum_fr3(),
            depth_scale: DEFAULT_DEPTH_SCALE,
            background_dir: PathBuf::from("background"),
        }
    }
}

/// Counts of what the association kept and dropped.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AssociationReport {
    pub rgb_entries: usize,
    pub depth_entries: usize,
    pub pose_entries: usize,
    pub associated: usize,
    pub dropped_rgb: usize,
    pub dropped_depth: usize,
    /// Associated frames that found no ground-truth pose.
    pub without_pose: usize,
}

/// Builds a manifest from `rgb.txt`, `depth.txt` and optional
/// `groundtruth.txt` under `root`. Backgrounds are looked up at the same
/// relative paths below `options.background_dir`; a background depth file is
/// used when present.
pub fn load_tum_sequence(root: &Path, options: &TumOptions) -> Result<(SequenceManifest, AssociationReport)> {
    let rgb = read_index(&root.join("rgb.txt"))?;
    let depth = read_index(&root.join("depth.txt"))?;
    let gt_path = root.join("groundtruth.txt");
    let gt = if gt_path.is_file() { read_index(&gt_path)? } else { Vec::new() };
    let mut poses = Vec::with_capacity(gt.len());
    for e in &gt {
        if e.fields.len() != 7 {
            return Err(Error::parse(&gt_path, 0, format!("pose at {} needs 7 values", e.timestamp)));
        }
        let mut v = [0.0; 7];
        for (k, s) in e.fields.iter().enumerate() {
            v[k] = s.parse().map_err(|_| Error::parse(&gt_path, 0, format!("bad pose value '{s}'")))?;
        }
        poses.push(TumPose(v));
    }

    let mut report = AssociationReport {
        rgb_entries: rgb.len(),
        depth_entries: depth.len(),
        pose_entries: gt.len(),
        ..Default::default()
    };
    let rgb_ts: Vec<f64> = rgb.iter().map(|e| e.timestamp).collect();
    let depth_ts: Vec<f64> = depth.iter().map(|e| e.timestamp).collect();
    let pairs = if rgb.is_empty() || depth.is_empty() {
        Vec::new()
    } else {
        associate_stamps(&rgb_ts, &depth_ts, options.max_time_gap)?
    };
    if pairs.is_empty() {
        return Err(Error::Empty("no rgb/depth pairs within the time gap"));
    }
    report.associated = pairs.len();
    report.dropped_rgb = rgb.len() - pairs.len();
    report.dropped_depth = depth.len() - pairs.len();

    let pose_of: Vec<Option<usize>> = if gt.is_empty() {
        vec![None; rgb.len()]
    } else {
        let gt_ts: Vec<f64> = gt.iter().map(|e| e.timestamp).collect();
        let paired_ts: Vec<f64> = pairs.iter().map(|&(i, _)| rgb_ts[i]).collect();
        let mut map = vec![None; rgb.len()];
        for (k, j) in associate_stamps(&paired_ts, &gt_ts, options.max_time_gap)? {
            map[pairs[k].0] = Some(j);
        }
        map
    };

    let mut frames = Vec::with_capacity(pairs.len());
    let mut last_ts = f64::NEG_INFINITY;
    for &(i, j) in &pairs {
        let ts = rgb[i].timestamp;
        if ts <= last_ts {
            // duplicate rgb timestamps cannot form a strictly increasing sequence
            report.dropped_rgb += 1;
            report.dropped_depth += 1;
            report.associated -= 1;
            continue;
        }
        last_ts = ts;
        let rgb_rel = PathBuf::from(&rgb[i].fields[0]);
        let depth_rel = PathBuf::from(&depth[j].fields[0]);
        let bg_depth = options.background_dir.join(&depth_rel);
        let pose = pose_of[i].map(|k| poses[k]);
        if pose.is_none() {
            report.without_pose += 1;
        }
        frames.push(ManifestFrame {
            timestamp: ts,
            rgb: rgb_rel.clone(),
            depth: depth_rel,
            background_rgb: options.background_dir.join(&rgb_rel),
            background_depth: root.join(&bg_depth).is_file().then_some(bg_depth),
            pose,
        });
    }
    let manifest = SequenceManifest::new(root, options.intrinsics, options.depth_scale, frames)?;
    manifest.check_files()?;
    log::info!(
        "associated {} frames ({} rgb and {} depth dropped, {} without pose)",
        report.associated,
        report.dropped_rgb,
        report.dropped_depth,
        report.without_pose
    );
    Ok((manifest, report))
}
