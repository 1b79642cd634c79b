use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use pixmotion::dataset::{
    load_tum_sequence, read_scene, render_synthetic_sequence, save_probability_png, save_rgb, write_f32_grid,
    SequenceManifest, SyntheticScene, TumOptions,
};
use pixmotion::eval::evaluate;
use pixmotion::flow::{BaselineFlow, FlowFiles, FlowProvider};
use pixmotion::fusion::MotionMap;
use pixmotion::pipeline::{estimate_frame, FrameEstimate, FrameSource};
use pixmotion::slam::{read_problem, solve_weighted_ba, write_problem, BaPoint, BaProblem, Observation, SolveReport};
use pixmotion::synthesis::{mean_abs_error, psnr, relative_pose, splat_view};
use pixmotion::{Grid, ProbabilityMap, Trajectory};

use crate::config::{FlowSource, Layout, PipelineConfig};
use crate::exit::{classify, CliError, ExitKind};

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf, CliError> {
    p.as_ref().ok_or_else(|| CliError::config(format!("{key} is not set")))
}

pub fn open_sequence(cfg: &PipelineConfig) -> Result<SequenceManifest, CliError> {
    let root = require(&cfg.dataset, "dataset")?;
    if !root.exists() {
        return Err(CliError::io(format!("dataset {} does not exist", root.display())));
    }
    let manifest = match cfg.layout {
        Layout::Manifest => {
            let file = if root.is_dir() { root.join("manifest.txt") } else { root.clone() };
            SequenceManifest::load(&file)?
        }
        Layout::Tum => {
            let opts = TumOptions {
                max_time_gap: cfg.tum_max_time_gap,
                intrinsics: cfg.tum_intrinsics,
                depth_scale: cfg.tum_depth_scale,
                background_dir: cfg.tum_background_dir.clone(),
            };
            let (m, report) = load_tum_sequence(root, &opts)?;
            log::info!(
                "associated {} frames ({} rgb and {} depth dropped, {} without pose)",
                report.associated,
                report.dropped_rgb,
                report.dropped_depth,
                report.without_pose
            );
            m
        }
    };
    if manifest.is_empty() {
        return Err(CliError::io("dataset has no frames"));
    }
    Ok(manifest)
}

fn flow_provider(cfg: &PipelineConfig) -> Result<Box<dyn FlowProvider>, CliError> {
    Ok(match cfg.flow_source {
        FlowSource::Baseline => Box::new(BaselineFlow { params: cfg.baseline_flow }),
        FlowSource::Files => {
            let dir = require(&cfg.flow_dir, "flow.dir")?;
            if !dir.is_dir() {
                return Err(CliError::io(format!("flow directory {} does not exist", dir.display())));
            }
            Box::new(FlowFiles::new(dir))
        }
    })
}

/// Motion magnitude scaled so that `mag_hi` maps to white.
fn motion_image(m: &MotionMap, mag_hi: f64) -> ProbabilityMap {
    let values = Grid::from_fn(m.values.width(), m.values.height(), |x, y| {
        if *m.valid.get(x, y) {
            m.values.get(x, y) / mag_hi
        } else {
            0.0
        }
    });
    ProbabilityMap::from_values(values)
}

fn write_estimate(out: &Path, e: &FrameEstimate, cfg: &PipelineConfig) -> pixmotion::Result<()> {
    let t = e.index;
    save_probability_png(&out.join(format!("{t:06}_prob.png")), &e.probability)?;
    if cfg.write_f32 {
        write_f32_grid(&out.join(format!("{t:06}_prob.f32")), e.probability.values())?;
    }
    if cfg.debug {
        let hi = cfg.estimator.fusion.mag_hi;
        save_probability_png(&out.join(format!("{t:06}_movable.png")), &e.movable)?;
        save_probability_png(&out.join(format!("{t:06}_motion.png")), &motion_image(&e.motion, hi))?;
        for n in &e.neighbours {
            let s = n.source;
            save_rgb(&out.join(format!("{t:06}_splat_{s:06}.png")), &n.splat.to_rgb8(None))?;
            save_rgb(&out.join(format!("{t:06}_bgsplat_{s:06}.png")), &n.background_splat.to_rgb8(None))?;
            save_probability_png(&out.join(format!("{t:06}_motion_{s:06}.png")), &motion_image(&n.motion, hi))?;
        }
    }
    Ok(())
}

#[derive(Debug, PartialEq)]
pub struct EstimateSummary {
    pub frames: usize,
    pub failed: Vec<usize>,
}

/// Runs the estimator on every frame and writes `{frame:06}_{stage}` outputs.
pub fn estimate(cfg: &PipelineConfig) -> Result<EstimateSummary, CliError> {
    cfg.validate()?;
    let out = require(&cfg.output, "output")?.clone();
    let seq = open_sequence(cfg)?;
    let flow = flow_provider(cfg)?;
    create_dir(&out)?;
    write_text(&out.join("config.txt"), &cfg.to_text())?;

    let n = seq.len();
    let results: Vec<pixmotion::Result<()>> = (0..n)
        .into_par_iter()
        .map(|t| {
            let e = estimate_frame(&seq, t, &cfg.estimator, flow.as_ref(), cfg.debug)?;
            write_estimate(&out, &e, cfg)
        })
        .collect();

    let mut failed = Vec::new();
    let mut first_kind = None;
    let mut summary = format!("frames={n}\n");
    for (t, r) in results.iter().enumerate() {
        if let Err(e) = r {
            log::error!("frame {t}: {e}");
            first_kind.get_or_insert(classify(e));
            failed.push(t);
        }
    }
    summary.push_str(&format!("failed={}\n", failed.len()));
    if !failed.is_empty() {
        let list: Vec<String> = failed.iter().map(|t| t.to_string()).collect();
        summary.push_str(&format!("failed_frames={}\n", list.join(",")));
    }
    write_text(&out.join("summary.txt"), &summary)?;

    if failed.len() as f64 > cfg.max_failed_fraction * n as f64 {
        return Err(CliError {
            kind: first_kind.unwrap_or(ExitKind::Numerical),
            message: format!("{} of {n} frames failed", failed.len()),
        });
    }
    Ok(EstimateSummary { frames: n, failed })
}

/// Splats one neighbour into a target view and reports how well it matches.
pub fn splat_debug(cfg: &PipelineConfig, target: usize, source: usize) -> Result<String, CliError> {
    cfg.validate()?;
    let out = require(&cfg.output, "output")?.clone();
    let seq = open_sequence(cfg)?;
    for i in [target, source] {
        if i >= seq.len() {
            return Err(CliError::config(format!("frame {i} is out of range (sequence has {})", seq.len())));
        }
    }
    let k = seq.intrinsics();
    let (ft, fs_) = (seq.frame(target)?, seq.frame(source)?);
    let missing = || CliError::io("splat-debug needs poses for both frames");
    let rel = relative_pose(ft.pose.as_ref().ok_or_else(missing)?, fs_.pose.as_ref().ok_or_else(missing)?);
    let sharp = cfg.estimator.sharpness;
    let splat = splat_view(&fs_.rgb, &fs_.depth, &rel, &k, sharp)?;
    let bg_depth = fs_.background_depth.as_ref().unwrap_or(&fs_.depth);
    let bg = splat_view(&fs_.background_rgb, bg_depth, &rel, &k, sharp)?;

    create_dir(&out)?;
    let name = |stage: &str| out.join(format!("{target:06}_{stage}_{source:06}.png"));
    save_rgb(&name("splat"), &splat.to_rgb8(None))?;
    save_rgb(&name("bgsplat"), &bg.to_rgb8(None))?;
    let cov = splat.coverage_mask();
    cov.save(name("coverage")).map_err(|e| CliError::io(format!("{}: {e}", name("coverage").display())))?;

    let covered = splat.valid.iter().filter(|&&v| v).count() as f64 / splat.valid.len() as f64;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "nan".into());
    Ok(format!(
        "coverage={covered}\nmae={}\npsnr={}\nbackground_mae={}\nbackground_psnr={}\n",
        fmt(mean_abs_error(&splat.image, &splat.valid, &ft.rgb)),
        fmt(psnr(&splat.image, &splat.valid, &ft.rgb)),
        fmt(mean_abs_error(&bg.image, &bg.valid, &ft.background_rgb)),
        fmt(psnr(&bg.image, &bg.valid, &ft.background_rgb)),
    ))
}

/// Removes points with motion probability `>= p_del` and their observations.
pub fn cull_dynamic(problem: &BaProblem, p_del: f64) -> (BaProblem, usize) {
    let mut remap = vec![None; problem.points.len()];
    let mut points: Vec<BaPoint> = Vec::new();
    for (i, p) in problem.points.iter().enumerate() {
        if p.point.motion_prob() < p_del {
            remap[i] = Some(points.len());
            points.push(p.clone());
        }
    }
    let observations: Vec<Observation> =
        problem.observations.iter().filter_map(|o| remap[o.point].map(|j| Observation { point: j, ..*o })).collect();
    let culled = problem.points.len() - points.len();
    (BaProblem { intrinsics: problem.intrinsics, poses: problem.poses.clone(), points, observations }, culled)
}

pub fn report_text(r: &SolveReport, culled: usize) -> String {
    format!(
        "initial_cost={}\nfinal_cost={}\niterations={}\nconverged={}\nexcluded_observations={}\nculled_points={}\n",
        r.initial_cost, r.final_cost, r.iterations, r.converged, r.excluded_observations, culled
    )
}

pub fn bundle_adjust(cfg: &PipelineConfig, problem: &Path, output: &Path) -> Result<String, CliError> {
    cfg.validate()?;
    let mut p = read_problem(problem)?;
    let mut culled = 0;
    if cfg.ba_cull_dynamic {
        (p, culled) = cull_dynamic(&p, cfg.selection.p_del);
    }
    let sol = solve_weighted_ba(&p, &cfg.solver)?;
    if !sol.report.converged {
        log::warn!("solver stopped after {} iterations without converging", sol.report.iterations);
    }
    write_problem(output, &sol.problem)?;
    Ok(report_text(&sol.report, culled))
}

/// Returns the human-readable report; key=value lines go to `output` when given.
pub fn evaluate_trajectories(
    cfg: &PipelineConfig,
    est: &Path,
    gt: &Path,
    span: Option<(f64, f64)>,
    output: Option<&Path>,
) -> Result<String, CliError> {
    cfg.validate()?;
    let (e, g) = (Trajectory::read_tum(est)?, Trajectory::read_tum(gt)?);
    let report = evaluate(&e, &g, span, cfg.eval_max_time_gap)?;
    if let Some(path) = output {
        write_text(path, &report.to_key_values())?;
    }
    Ok(report.to_text())
}

pub fn synth(scene: Option<&Path>, frames: Option<usize>, output: &Path) -> Result<String, CliError> {
    let mut s = match scene {
        Some(p) => read_scene(p)?,
        None => SyntheticScene::desk(),
    };
    if let Some(n) = frames {
        s.frames = n;
    }
    let seq = render_synthetic_sequence(&s, s.frames)?;
    create_dir(output)?;
    let m = seq.write_to(output)?;
    Ok(format!("frames={}\nmanifest={}\n", m.len(), output.join("manifest.txt").display()))
}
