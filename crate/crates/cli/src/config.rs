//! Key-value run configuration.
//!
//! ```text
//! # comment
//! dataset = data/seq/manifest.txt
//! fusion.offsets = 2
//! movable.clip_lo = 15
//! ```
//!
//! Relative paths in a file resolve against the file's directory; paths given
//! on the command line resolve against the working directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pixmotion::flow::BaselineFlowParams;
use pixmotion::{EstimatorParams, Intrinsics, SelectionParams, SolverConfig};

use crate::exit::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// A `manifest.txt` file, or a directory containing one.
    Manifest,
    /// A TUM RGB-D directory with `rgb.txt`, `depth.txt` and optional `groundtruth.txt`.
    Tum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowSource {
    Baseline,
    Files,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub dataset: Option<PathBuf>,
    pub layout: Layout,
    pub output: Option<PathBuf>,
    pub flow_source: FlowSource,
    pub flow_dir: Option<PathBuf>,
    pub debug: bool,
    pub write_f32: bool,
    pub tum_intrinsics: Intrinsics,
    pub tum_max_time_gap: f64,
    pub tum_depth_scale: f64,
    pub tum_background_dir: PathBuf,
    pub estimator: EstimatorParams,
    pub baseline_flow: BaselineFlowParams,
    pub selection: SelectionParams,
    pub solver: SolverConfig,
    /// Drop points with probability `>= p_del` before solving.
    pub ba_cull_dynamic: bool,
    pub eval_max_time_gap: f64,
    pub max_failed_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            layout: Layout::Manifest,
            output: None,
            flow_source: FlowSource::Baseline,
            flow_dir: None,
            debug: false,
            write_f32: false,
            tum_intrinsics: Intrinsics::tum_fr3(),
            tum_max_time_gap: pixmotion::dataset::DEFAULT_MAX_TIME_GAP,
            tum_depth_scale: pixmotion::dataset::DEFAULT_DEPTH_SCALE,
            tum_background_dir: PathBuf::from("background"),
            estimator: EstimatorParams::default(),
            baseline_flow: BaselineFlowParams::default(),
            selection: SelectionParams::default(),
            solver: SolverConfig::default(),
            ba_cull_dynamic: false,
            eval_max_time_gap: pixmotion::dataset::DEFAULT_MAX_TIME_GAP,
            max_failed_fraction: 0.1,
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| CliError::config(format!("{key}: cannot parse '{value}'")))
}

fn boolean(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::config(format!("{key}: expected true or false, got '{value}'"))),
    }
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value.split([',', ' ']).filter(|s| !s.is_empty()).map(|s| num(key, s)).collect()
}

fn path(value: &str, base: Option<&Path>) -> PathBuf {
    let p = PathBuf::from(value);
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p,
    }
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl PipelineConfig {
    pub const KEYS: &'static [&'static str] = &[
        "dataset",
        "layout",
        "output",
        "flow.source",
        "flow.dir",
        "debug",
        "write_f32",
        "tum.intrinsics",
        "tum.max_time_gap",
        "tum.depth_scale",
        "tum.background_dir",
        "movable.clip_lo",
        "movable.clip_hi",
        "movable.lambda_scale",
        "fusion.offsets",
        "fusion.mag_lo",
        "fusion.mag_hi",
        "splat.sharpness",
        "flow.levels",
        "flow.min_level_size",
        "flow.patch_radius",
        "flow.coarse_radius",
        "flow.refine_radius",
        "selection.p_add",
        "selection.p_del",
        "ba.max_iters",
        "ba.initial_damping",
        "ba.damping_factor",
        "ba.relative_cost_tol",
        "ba.update_tol",
        "ba.cull_dynamic",
        "eval.max_time_gap",
        "estimate.max_failed_fraction",
    ];

    /// Sets one key. `base` resolves relative paths.
    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<(), CliError> {
        let value = value.trim();
        match key {
            "dataset" => self.dataset = Some(path(value, base)),
            "layout" => {
                self.layout = match value {
                    "manifest" => Layout::Manifest,
                    "tum" => Layout::Tum,
                    _ => return Err(CliError::config(format!("layout: expected manifest or tum, got '{value}'"))),
                }
            }
            "output" => self.output = Some(path(value, base)),
            "flow.source" => {
                self.flow_source = match value {
                    "baseline" => FlowSource::Baseline,
                    "files" => FlowSource::Files,
                    _ => {
                        return Err(CliError::config(format!("flow.source: expected baseline or files, got '{value}'")))
                    }
                }
            }
            "flow.dir" => self.flow_dir = Some(path(value, base)),
            "debug" => self.debug = boolean(key, value)?,
            "write_f32" => self.write_f32 = boolean(key, value)?,
            "tum.intrinsics" => {
                let v: Vec<f64> = list(key, value)?;
                if v.len() != 6 || v[4].fract() != 0.0 || v[5].fract() != 0.0 || v[4] < 1.0 || v[5] < 1.0 {
                    return Err(CliError::config("tum.intrinsics: expected fx fy cx cy width height"));
                }
                self.tum_intrinsics =
                    Intrinsics { fx: v[0], fy: v[1], cx: v[2], cy: v[3], width: v[4] as u32, height: v[5] as u32 };
            }
            "tum.max_time_gap" => self.tum_max_time_gap = num(key, value)?,
            "tum.depth_scale" => self.tum_depth_scale = num(key, value)?,
            "tum.background_dir" => self.tum_background_dir = PathBuf::from(value),
            "movable.clip_lo" => self.estimator.movable.clip_lo = num(key, value)?,
            "movable.clip_hi" => self.estimator.movable.clip_hi = num(key, value)?,
            "movable.lambda_scale" => self.estimator.movable.lambda_scale = num(key, value)?,
            "fusion.offsets" => self.estimator.fusion.offsets = list(key, value)?,
            "fusion.mag_lo" => self.estimator.fusion.mag_lo = num(key, value)?,
            "fusion.mag_hi" => self.estimator.fusion.mag_hi = num(key, value)?,
            "splat.sharpness" => self.estimator.sharpness = num(key, value)?,
            "flow.levels" => self.baseline_flow.levels = num(key, value)?,
            "flow.min_level_size" => self.baseline_flow.min_level_size = num(key, value)?,
            "flow.patch_radius" => self.baseline_flow.patch_radius = num(key, value)?,
            "flow.coarse_radius" => self.baseline_flow.coarse_radius = num(key, value)?,
            "flow.refine_radius" => self.baseline_flow.refine_radius = num(key, value)?,
            "selection.p_add" => self.selection.p_add = num(key, value)?,
            "selection.p_del" => self.selection.p_del = num(key, value)?,
            "ba.max_iters" => self.solver.max_iters = num(key, value)?,
            "ba.initial_damping" => self.solver.initial_damping = num(key, value)?,
            "ba.damping_factor" => self.solver.damping_factor = num(key, value)?,
            "ba.relative_cost_tol" => self.solver.relative_cost_tol = num(key, value)?,
            "ba.update_tol" => self.solver.update_tol = num(key, value)?,
            "ba.cull_dynamic" => self.ba_cull_dynamic = boolean(key, value)?,
            "eval.max_time_gap" => self.eval_max_time_gap = num(key, value)?,
            "estimate.max_failed_fraction" => self.max_failed_fraction = num(key, value)?,
            _ => return Err(CliError::config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), CliError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("override '{assignment}' is not key=value")))?;
        self.set(k.trim(), v, None)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("{}:{}: expected key = value", path.display(), i + 1)))?;
            cfg.set(k.trim(), v, Some(&base))
                .map_err(|e| CliError::config(format!("{}:{}: {}", path.display(), i + 1, e.message)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    fn get(&self, key: &str) -> String {
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let k = &self.tum_intrinsics;
        let e = &self.estimator;
        let f = &self.baseline_flow;
        let s = &self.solver;
        match key {
            "dataset" => opt(&self.dataset),
            "layout" => match self.layout {
                Layout::Manifest => "manifest".into(),
                Layout::Tum => "tum".into(),
            },
            "output" => opt(&self.output),
            "flow.source" => match self.flow_source {
                FlowSource::Baseline => "baseline".into(),
                FlowSource::Files => "files".into(),
            },
            "flow.dir" => opt(&self.flow_dir),
            "debug" => self.debug.to_string(),
            "write_f32" => self.write_f32.to_string(),
            "tum.intrinsics" => format!("{},{},{},{},{},{}", k.fx, k.fy, k.cx, k.cy, k.width, k.height),
            "tum.max_time_gap" => self.tum_max_time_gap.to_string(),
            "tum.depth_scale" => self.tum_depth_scale.to_string(),
            "tum.background_dir" => self.tum_background_dir.display().to_string(),
            "movable.clip_lo" => e.movable.clip_lo.to_string(),
            "movable.clip_hi" => e.movable.clip_hi.to_string(),
            "movable.lambda_scale" => e.movable.lambda_scale.to_string(),
            "fusion.offsets" => join(&e.fusion.offsets),
            "fusion.mag_lo" => e.fusion.mag_lo.to_string(),
            "fusion.mag_hi" => e.fusion.mag_hi.to_string(),
            "splat.sharpness" => e.sharpness.to_string(),
            "flow.levels" => f.levels.to_string(),
            "flow.min_level_size" => f.min_level_size.to_string(),
            "flow.patch_radius" => f.patch_radius.to_string(),
            "flow.coarse_radius" => f.coarse_radius.to_string(),
            "flow.refine_radius" => f.refine_radius.to_string(),
            "selection.p_add" => self.selection.p_add.to_string(),
            "selection.p_del" => self.selection.p_del.to_string(),
            "ba.max_iters" => s.max_iters.to_string(),
            "ba.initial_damping" => s.initial_damping.to_string(),
            "ba.damping_factor" => s.damping_factor.to_string(),
            "ba.relative_cost_tol" => s.relative_cost_tol.to_string(),
            "ba.update_tol" => s.update_tol.to_string(),
            "ba.cull_dynamic" => self.ba_cull_dynamic.to_string(),
            "eval.max_time_gap" => self.eval_max_time_gap.to_string(),
            "estimate.max_failed_fraction" => self.max_failed_fraction.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Every key with its effective value, in a form [`PipelineConfig::parse`] accepts.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let v = self.get(key);
            if v.is_empty() {
                let _ = writeln!(out, "# {key} =");
            } else {
                let _ = writeln!(out, "{key} = {v}");
            }
        }
        out
    }

    /// Range checks for every parameter group.
    pub fn validate(&self) -> Result<(), CliError> {
        self.estimator.validate()?;
        self.baseline_flow.validate()?;
        self.selection.validate()?;
        self.tum_intrinsics.validate()?;
        let s = &self.solver;
        if s.max_iters == 0 || !(s.initial_damping > 0.0) || !(s.damping_factor > 1.0) {
            return Err(CliError::config("ba: need max_iters >= 1, initial_damping > 0 and damping_factor > 1"));
        }
        if !(s.relative_cost_tol >= 0.0 && s.update_tol >= 0.0) {
            return Err(CliError::config("ba: tolerances must be non-negative"));
        }
        if !(self.tum_depth_scale > 0.0 && self.tum_depth_scale.is_finite()) {
            return Err(CliError::config("tum.depth_scale must be positive"));
        }
        for (name, gap) in [("tum.max_time_gap", self.tum_max_time_gap), ("eval.max_time_gap", self.eval_max_time_gap)]
        {
            if !(gap >= 0.0 && gap.is_finite()) {
                return Err(CliError::config(format!("{name} must be non-negative")));
            }
        }
        if !(0.0..=1.0).contains(&self.max_failed_fraction) {
            return Err(CliError::config("estimate.max_failed_fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_parses_back_to_the_same_config() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_override("dataset=/data/seq").unwrap();
        cfg.apply_override("fusion.offsets=1,3").unwrap();
        cfg.apply_override("movable.lambda_scale=0.05").unwrap();
        cfg.apply_override("tum.intrinsics=500,501,319.5,239.5,640,480").unwrap();
        cfg.apply_override("ba.cull_dynamic=true").unwrap();
        let back = PipelineConfig::parse(&cfg.to_text(), Path::new("/x/run.cfg")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn every_key_is_settable() {
        let cfg = PipelineConfig {
            dataset: Some("d".into()),
            output: Some("o".into()),
            flow_dir: Some("f".into()),
            ..Default::default()
        };
        for key in PipelineConfig::KEYS {
            let mut c = PipelineConfig::default();
            c.set(key, &cfg.get(key), None).unwrap();
        }
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let cfg = PipelineConfig::parse("dataset = seq # the data\noutput = /abs\n", Path::new("/runs/a.cfg")).unwrap();
        assert_eq!(cfg.dataset, Some(PathBuf::from("/runs/seq")));
        assert_eq!(cfg.output, Some(PathBuf::from("/abs")));
    }

    #[test]
    fn bad_input_is_a_config_error() {
        let mut cfg = PipelineConfig::default();
        for bad in ["nope=1", "fusion.mag_lo=abc", "layout=zip", "debug=maybe", "novalue"] {
            assert_eq!(cfg.apply_override(bad).unwrap_err().kind, crate::exit::ExitKind::Config, "{bad}");
        }
        assert!(PipelineConfig::parse("dataset\n", Path::new("c")).is_err());
        cfg.apply_override("fusion.mag_lo=5").unwrap();
        assert!(cfg.validate().is_err());
    }
}
