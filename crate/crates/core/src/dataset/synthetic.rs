//! Ray-cast desk-scale scenes with exact depth and ground truth.
//!
//! A scene is an axis-aligned room (inside faces visible), static boxes and
//! moving boxes, each carrying a procedural texture, plus optional shadow
//! decals on the floor that follow a moving box. World axes follow the camera
//! convention: x right, y down, z forward. The background render is the same
//! scene with moving boxes and decals removed.

use std::borrow::Cow;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::images::{save_depth_png, save_mask_png, save_rgb, DEFAULT_DEPTH_SCALE};
use super::manifest::{ManifestFrame, SequenceManifest, TumPose};
use crate::error::{Error, Result};
use crate::eval::Trajectory;
use crate::flow::FlowField;
use crate::geometry::{DepthMap, Grid, ImageBuffer, Intrinsics, PoseSE3, ProbabilityMap};
use crate::pipeline::{FrameBundle, FrameSource};

const TEXTURE_COMPONENTS: usize = 8;
const TEXTURE_WAVELENGTH: (f64, f64) = (0.12, 0.8);
const HIT_EPS: f64 = 1e-9;

/// Inside faces of the room, in texture-seeding order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Face {
    Left,
    Right,
    Ceiling,
    Floor,
    Front,
    Back,
}

impl Face {
    pub const ALL: [Face; 6] = [Face::Left, Face::Right, Face::Ceiling, Face::Floor, Face::Front, Face::Back];

    pub fn name(self) -> &'static str {
        match self {
            Face::Left => "left",
            Face::Right => "right",
            Face::Ceiling => "ceiling",
            Face::Floor => "floor",
            Face::Front => "front",
            Face::Back => "back",
        }
    }

    fn from_name(s: &str) -> Option<Face> {
        Face::ALL.into_iter().find(|f| f.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Room {
    pub min: Vector3<f64>,
    /// `max.y` is the floor height.
    pub max: Vector3<f64>,
    /// Base colours indexed like [`Face::ALL`].
    pub colors: [[f64; 3]; 6],
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneBox {
    pub center: Vector3<f64>,
    pub half_extents: Vector3<f64>,
    pub color: [f64; 3],
}

/// Box translating by `velocity * s(f)`, where `s` is a triangle wave of
/// `period` frames (`s(f) = f` when the period is 0).
#[derive(Clone, Debug, PartialEq)]
pub struct MovingBox {
    pub shape: SceneBox,
    pub velocity: Vector3<f64>,
    pub period: u32,
}

impl MovingBox {
    pub fn center_at(&self, frame: f64) -> Vector3<f64> {
        self.shape.center + self.velocity * triangle(frame, self.period)
    }
}

fn triangle(f: f64, period: u32) -> f64 {
    if period == 0 {
        return f;
    }
    let p = period as f64;
    let m = f.rem_euclid(p);
    if m <= p / 2.0 {
        m
    } else {
        p - m
    }
}

/// Elliptical darkening of the floor attached to a moving box.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowDecal {
    pub moving_box: usize,
    /// Offset of the ellipse centre from the box centre in (x, z).
    pub offset: (f64, f64),
    pub radii: (f64, f64),
    /// Colour multiplier inside the ellipse.
    pub darkness: f64,
}

/// Camera-to-world motion: position `start + velocity * f`, orientation yaw
/// about +y after a downward pitch.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraPath {
    pub start: Vector3<f64>,
    pub pitch: f64,
    pub yaw: f64,
    pub velocity: Vector3<f64>,
    pub yaw_rate: f64,
}

impl CameraPath {
    pub fn pose_at(&self, frame: f64) -> PoseSE3 {
        let yaw = Rotation3::from_axis_angle(&Vector3::y_axis(), self.yaw + self.yaw_rate * frame);
        let pitch = Rotation3::from_axis_angle(&Vector3::x_axis(), -self.pitch);
        PoseSE3::new((yaw * pitch).into_inner(), self.start + self.velocity * frame).expect("rotation is orthonormal")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub intrinsics: Intrinsics,
    pub frames: usize,
    pub frame_rate: f64,
    pub seed: u64,
    /// Amplitude of uniform per-channel sensor noise in intensity levels,
    /// drawn independently for every render. Zero gives exact renders.
    pub noise: f64,
    pub room: Room,
    pub camera: CameraPath,
    pub static_boxes: Vec<SceneBox>,
    pub moving_boxes: Vec<MovingBox>,
    pub shadows: Vec<ShadowDecal>,
}

impl SyntheticScene {
    /// A small office corner: one box sliding across the floor with a shadow,
    /// one static box, and a slowly moving handheld camera.
    pub fn desk() -> Self {
        Self {
            intrinsics: Intrinsics::new(120.0, 120.0, 79.5, 59.5, 160, 120).expect("valid preset"),
            frames: 60,
            frame_rate: 30.0,
            seed: 7,
            noise: 0.0,
            room: Room {
                min: Vector3::new(-2.0, -1.2, -1.0),
                max: Vector3::new(2.0, 0.8, 4.0),
                colors: [
                    [120.0, 120.0, 100.0],
                    [120.0, 120.0, 100.0],
                    [200.0, 200.0, 210.0],
                    [170.0, 150.0, 120.0],
                    [90.0, 110.0, 140.0],
                    [90.0, 110.0, 140.0],
                ],
            },
            camera: CameraPath {
                start: Vector3::new(0.0, 0.0, 0.0),
                pitch: 0.15,
                yaw: 0.0,
                velocity: Vector3::new(0.004, -0.001, 0.006),
                yaw_rate: 0.002,
            },
            static_boxes: vec![SceneBox {
                center: Vector3::new(0.9, 0.6, 2.8),
                half_extents: Vector3::new(0.25, 0.2, 0.25),
                color: [60.0, 170.0, 80.0],
            }],
            moving_boxes: vec![MovingBox {
                shape: SceneBox {
                    center: Vector3::new(-0.3, 0.5, 2.2),
                    half_extents: Vector3::new(0.22, 0.3, 0.18),
                    color: [230.0, 40.0, 30.0],
                },
                velocity: Vector3::new(0.035, 0.0, 0.0),
                period: 40,
            }],
            shadows: vec![ShadowDecal { moving_box: 0, offset: (0.2, -0.45), radii: (0.3, 0.2), darkness: 0.35 }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(Error::param("frame rate must be positive"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::param("noise amplitude must be non-negative"));
        }
        let r = &self.room;
        if !(0..3).all(|a| r.min[a] < r.max[a]) {
            return Err(Error::param("room bounds must satisfy min < max on every axis"));
        }
        let boxes = self.static_boxes.iter().chain(self.moving_boxes.iter().map(|m| &m.shape));
        for b in boxes {
            if !b.half_extents.iter().all(|&h| h > 0.0 && h.is_finite()) {
                return Err(Error::param("box half extents must be positive"));
            }
        }
        for s in &self.shadows {
            if s.moving_box >= self.moving_boxes.len() {
                return Err(Error::param(format!("shadow refers to missing moving box {}", s.moving_box)));
            }
            if !(s.radii.0 > 0.0 && s.radii.1 > 0.0 && (0.0..=1.0).contains(&s.darkness)) {
                return Err(Error::param("shadow radii must be positive and darkness in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn timestamp(&self, frame: usize) -> f64 {
        frame as f64 / self.frame_rate
    }

    fn textures(&self) -> Textures {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut next = || Texture::random(&mut rng);
        Textures {
            room: std::array::from_fn(|_| next()),
            static_boxes: self.static_boxes.iter().map(|_| next()).collect(),
            moving_boxes: self.moving_boxes.iter().map(|_| next()).collect(),
        }
    }
}

#[derive(Clone, Debug)]
struct Texture {
    dirs: [Vector3<f64>; TEXTURE_COMPONENTS],
    freq: [f64; TEXTURE_COMPONENTS],
    phase: [f64; TEXTURE_COMPONENTS],
    amp: [f64; TEXTURE_COMPONENTS],
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let mut t = Texture {
            dirs: [Vector3::zeros(); TEXTURE_COMPONENTS],
            freq: [0.0; TEXTURE_COMPONENTS],
            phase: [0.0; TEXTURE_COMPONENTS],
            amp: [0.0; TEXTURE_COMPONENTS],
        };
        for k in 0..TEXTURE_COMPONENTS {
            let z: f64 = rng.random_range(-1.0..1.0);
            let a: f64 = rng.random_range(0.0..2.0 * PI);
            let s = (1.0 - z * z).sqrt();
            t.dirs[k] = Vector3::new(s * a.cos(), s * a.sin(), z);
            t.freq[k] = 2.0 * PI / rng.random_range(TEXTURE_WAVELENGTH.0..TEXTURE_WAVELENGTH.1);
            t.phase[k] = rng.random_range(0.0..2.0 * PI);
            t.amp[k] = rng.random_range(0.5..1.0);
        }
        t
    }

    /// Texture value in `[0, 1]`.
    fn value(&self, p: &Vector3<f64>) -> f64 {
        let mut s = 0.0;
        let mut norm = 0.0;
        for k in 0..TEXTURE_COMPONENTS {
            s += self.amp[k] * (self.freq[k] * self.dirs[k].dot(p) + self.phase[k]).sin();
            norm += self.amp[k];
        }
        0.5 + 0.5 * s / norm
    }

    fn shade(&self, base: &[f64; 3], p: &Vector3<f64>) -> [f64; 3] {
        let m = 0.55 + 0.45 * self.value(p);
        [base[0] * m, base[1] * m, base[2] * m]
    }
}

struct Textures {
    room: [Texture; 6],
    static_boxes: Vec<Texture>,
    moving_boxes: Vec<Texture>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Surface {
    Room(usize),
    Static(usize),
    Moving(usize),
}

#[derive(Clone, Copy, Debug)]
struct Hit {
    t: f64,
    surface: Surface,
}

/// Entry distance along the ray, if the ray starts outside and hits the box.
fn ray_box(o: &Vector3<f64>, d: &Vector3<f64>, center: &Vector3<f64>, half: &Vector3<f64>) -> Option<f64> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for a in 0..3 {
        let lo = center[a] - half[a];
        let hi = center[a] + half[a];
        if d[a] == 0.0 {
            if o[a] < lo || o[a] > hi {
                return None;
            }
            continue;
        }
        let (t0, t1) = ((lo - o[a]) / d[a], (hi - o[a]) / d[a]);
        t_near = t_near.max(t0.min(t1));
        t_far = t_far.min(t0.max(t1));
    }
    (t_near <= t_far && t_near > HIT_EPS).then_some(t_near)
}

/// Exit distance and face of a ray starting inside the room.
fn ray_room(o: &Vector3<f64>, d: &Vector3<f64>, room: &Room) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for a in 0..3 {
        let (t, face) = if d[a] > 0.0 {
            ((room.max[a] - o[a]) / d[a], 2 * a + 1)
        } else if d[a] < 0.0 {
            ((room.min[a] - o[a]) / d[a], 2 * a)
        } else {
            continue;
        };
        if t > HIT_EPS && best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, face));
        }
    }
    best
}

/// Per-frame state needed to cast rays.
struct FrameGeometry<'a> {
    scene: &'a SyntheticScene,
    pose: PoseSE3,
    moving_centers: Vec<Vector3<f64>>,
}

impl<'a> FrameGeometry<'a> {
    fn new(scene: &'a SyntheticScene, frame: usize) -> Self {
        let f = frame as f64;
        Self {
            scene,
            pose: scene.camera.pose_at(f),
            moving_centers: scene.moving_boxes.iter().map(|m| m.center_at(f)).collect(),
        }
    }

    /// Ray through pixel `(u, v)`: origin, world direction with unit camera-z,
    /// so the hit distance equals depth.
    fn ray(&self, u: f64, v: f64) -> (Vector3<f64>, Vector3<f64>) {
        let k = &self.scene.intrinsics;
        let d_cam = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        (*self.pose.translation(), self.pose.rotation() * d_cam)
    }

    fn cast(&self, o: &Vector3<f64>, d: &Vector3<f64>, dynamic: bool) -> Option<Hit> {
        let s = self.scene;
        let mut best = ray_room(o, d, &s.room).map(|(t, f)| Hit { t, surface: Surface::Room(f) });
        let mut consider = |t: Option<f64>, surface: Surface| {
            if let Some(t) = t {
                if best.is_none_or(|b| t < b.t) {
                    best = Some(Hit { t, surface });
                }
            }
        };
        for (i, b) in s.static_boxes.iter().enumerate() {
            consider(ray_box(o, d, &b.center, &b.half_extents), Surface::Static(i));
        }
        if dynamic {
            for (i, m) in s.moving_boxes.iter().enumerate() {
                consider(ray_box(o, d, &self.moving_centers[i], &m.shape.half_extents), Surface::Moving(i));
            }
        }
        best
    }

    fn in_shadow(&self, p: &Vector3<f64>) -> Option<f64> {
        let mut m = None;
        for s in &self.scene.shadows {
            let c = self.moving_centers[s.moving_box];
            let dx = (p.x - c.x - s.offset.0) / s.radii.0;
            let dz = (p.z - c.z - s.offset.1) / s.radii.1;
            if dx * dx + dz * dz <= 1.0 {
                m = Some(m.map_or(s.darkness, |v: f64| v.min(s.darkness)));
            }
        }
        m
    }
}

/// Rendered pixel: colour, depth, what was hit and whether a decal darkened it.
#[derive(Clone, Copy, Debug)]
struct Sample {
    color: [f64; 3],
    depth: f64,
    moving: bool,
    shadow: bool,
}

fn shade(g: &FrameGeometry<'_>, tex: &Textures, u: f64, v: f64, dynamic: bool) -> Option<Sample> {
    let (o, d) = g.ray(u, v);
    let hit = g.cast(&o, &d, dynamic)?;
    let p = o + d * hit.t;
    let s = g.scene;
    let (mut color, moving) = match hit.surface {
        Surface::Room(f) => (tex.room[f].shade(&s.room.colors[f], &p), false),
        Surface::Static(i) => {
            let b = &s.static_boxes[i];
            (tex.static_boxes[i].shade(&b.color, &(p - b.center)), false)
        }
        Surface::Moving(i) => {
            let b = &s.moving_boxes[i].shape;
            (tex.moving_boxes[i].shade(&b.color, &(p - g.moving_centers[i])), true)
        }
    };
    let mut shadow = false;
    if dynamic && hit.surface == Surface::Room(3) {
        if let Some(m) = g.in_shadow(&p) {
            color = color.map(|c| c * m);
            shadow = true;
        }
    }
    Some(Sample { color, depth: hit.t, moving, shadow })
}

fn to_u8(c: f64) -> u8 {
    c.round().clamp(0.0, 255.0) as u8
}

struct RenderedFrame {
    rgb: ImageBuffer,
    depth: DepthMap,
    moving: Grid<bool>,
    shadow: Grid<bool>,
}

fn render_frame(scene: &SyntheticScene, tex: &Textures, frame: usize, dynamic: bool) -> RenderedFrame {
    let (w, h) = scene.intrinsics.dims();
    let g = FrameGeometry::new(scene, frame);
    let samples = Grid::from_fn(w, h, |x, y| shade(&g, tex, x as f64, y as f64, dynamic));
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    rng.set_stream(2 * frame as u64 + dynamic as u64);
    let a = scene.noise;
    RenderedFrame {
        rgb: ImageBuffer::from_fn(w, h, |x, y| {
            let c = samples.get(x, y).map_or([0.0; 3], |s| s.color);
            image::Rgb(c.map(|v| to_u8(if a > 0.0 { v + rng.random_range(-a..=a) } else { v })))
        }),
        depth: DepthMap::from_values(samples.map(|s| s.map_or(0.0, |s| s.depth))),
        moving: samples.map(|s| s.is_some_and(|s| s.moving)),
        shadow: samples.map(|s| s.is_some_and(|s| s.shadow && !s.moving)),
    }
}

/// A rendered sequence with its ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    pub scene: SyntheticScene,
    pub frames: Vec<FrameBundle>,
    /// Pixels showing a moving box.
    pub motion_masks: Vec<Grid<bool>>,
    /// Darkened floor pixels not covered by a moving box.
    pub shadow_masks: Vec<Grid<bool>>,
    pub trajectory: Trajectory,
}

impl SyntheticSequence {
    pub fn intrinsics(&self) -> Intrinsics {
        self.scene.intrinsics
    }

    /// Ground-truth motion probability: 1 on moving boxes, 0 elsewhere.
    pub fn gt_probability(&self, frame: usize) -> ProbabilityMap {
        ProbabilityMap::from_values(self.motion_masks[frame].map(|&m| if m { 1.0 } else { 0.0 }))
    }

    /// Pixels that are neither moving nor shadowed.
    pub fn static_mask(&self, frame: usize) -> Grid<bool> {
        let (m, s) = (&self.motion_masks[frame], &self.shadow_masks[frame]);
        Grid::from_fn(m.width(), m.height(), |x, y| !*m.get(x, y) && !*s.get(x, y))
    }

    /// Displacement, in the view of frame `t`, between where a pixel's
    /// surface point sits at frame `t` and where it sits at frame `s`. This is
    /// the flow left after frame `s` is reprojected into view `t`: zero on
    /// static surfaces.
    pub fn residual_flow(&self, t: usize, s: usize) -> Result<FlowField> {
        let scene = &self.scene;
        let gt = FrameGeometry::new(scene, t);
        let gs = FrameGeometry::new(scene, s);
        let k = scene.intrinsics;
        let (w, h) = k.dims();
        let world_to_cam = gt.pose.inverse();
        let mut field = FlowField::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                let (o, d) = gt.ray(x as f64, y as f64);
                let Some(hit) = gt.cast(&o, &d, true) else { continue };
                let Surface::Moving(i) = hit.surface else { continue };
                let p = o + d * hit.t - gt.moving_centers[i] + gs.moving_centers[i];
                let c = world_to_cam.rotation() * p + world_to_cam.translation();
                if c.z <= 0.0 {
                    field.valid.set(x, y, false);
                    continue;
                }
                field.du.set(x, y, k.fx * c.x / c.z + k.cx - x as f64);
                field.dv.set(x, y, k.fy * c.y / c.z + k.cy - y as f64);
            }
        }
        Ok(field)
    }

    /// Writes a TUM-style tree: `rgb/`, `depth/`, `background/{rgb,depth}/`,
    /// index files, `groundtruth.txt`, `gt/{frame:06}_{motion,shadow}.png`
    /// and `manifest.txt`.
    pub fn write_to(&self, dir: &Path) -> Result<SequenceManifest> {
        for sub in ["rgb", "depth", "background/rgb", "background/depth", "gt"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let mut rgb_txt = String::from("# color images\n# timestamp filename\n");
        let mut depth_txt = String::from("# depth maps\n# timestamp filename\n");
        let mut gt_txt = String::from("# ground truth trajectory\n# timestamp tx ty tz qx qy qz qw\n");
        let mut records = Vec::with_capacity(self.frames.len());
        for (i, f) in self.frames.iter().enumerate() {
            let stamp = format!("{:.6}", f.timestamp);
            let timestamp: f64 = stamp.parse().expect("formatted float");
            let name = format!("{stamp}.png");
            let rel = |d: &str| PathBuf::from(d).join(&name);
            save_rgb(&dir.join(rel("rgb")), &f.rgb)?;
            save_depth_png(&dir.join(rel("depth")), &f.depth, DEFAULT_DEPTH_SCALE)?;
            save_rgb(&dir.join(rel("background/rgb")), &f.background_rgb)?;
            let bg_depth = f.background_depth.as_ref().unwrap_or(&f.depth);
            save_depth_png(&dir.join(rel("background/depth")), bg_depth, DEFAULT_DEPTH_SCALE)?;
            save_mask_png(&dir.join(format!("gt/{i:06}_motion.png")), &self.motion_masks[i])?;
            save_mask_png(&dir.join(format!("gt/{i:06}_shadow.png")), &self.shadow_masks[i])?;
            let pose = f.pose.as_ref().map(TumPose::from_pose);
            let _ = writeln!(rgb_txt, "{stamp} rgb/{name}");
            let _ = writeln!(depth_txt, "{stamp} depth/{name}");
            if let Some(TumPose(v)) = &pose {
                let _ = writeln!(gt_txt, "{stamp} {} {} {} {} {} {} {}", v[0], v[1], v[2], v[3], v[4], v[5], v[6]);
            }
            records.push(ManifestFrame {
                timestamp,
                rgb: rel("rgb"),
                depth: rel("depth"),
                background_rgb: rel("background/rgb"),
                background_depth: Some(rel("background/depth")),
                pose,
            });
        }
        for (name, text) in [("rgb.txt", rgb_txt), ("depth.txt", depth_txt), ("groundtruth.txt", gt_txt)] {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        let manifest = SequenceManifest::new(dir, self.intrinsics(), DEFAULT_DEPTH_SCALE, records)?;
        manifest.save(&dir.join("manifest.txt"))?;
        Ok(manifest)
    }
}

impl FrameSource for SyntheticSequence {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn intrinsics(&self) -> Intrinsics {
        self.scene.intrinsics
    }

    fn frame(&self, index: usize) -> Result<Cow<'_, FrameBundle>> {
        self.frames.get(index).map(Cow::Borrowed).ok_or(Error::Empty("frame index out of range"))
    }
}

/// Renders `frames` frames of the dynamic scene and its static background.
/// Output is bit-reproducible for a fixed scene and seed.
pub fn render_synthetic_sequence(scene: &SyntheticScene, frames: usize) -> Result<SyntheticSequence> {
    scene.validate()?;
    if frames == 0 {
        return Err(Error::Empty("zero frames requested"));
    }
    for f in 0..frames {
        let c = scene.camera.pose_at(f as f64);
        let p = c.translation();
        if !(0..3).all(|a| scene.room.min[a] < p[a] && p[a] < scene.room.max[a]) {
            return Err(Error::param(format!("camera leaves the room at frame {f}")));
        }
    }
    let tex = scene.textures();
    let rendered: Vec<(RenderedFrame, RenderedFrame)> = (0..frames)
        .into_par_iter()
        .map(|f| (render_frame(scene, &tex, f, true), render_frame(scene, &tex, f, false)))
        .collect();
    let mut bundles = Vec::with_capacity(frames);
    let mut motion_masks = Vec::with_capacity(frames);
    let mut shadow_masks = Vec::with_capacity(frames);
    let mut poses = Vec::with_capacity(frames);
    for (f, (dy, bg)) in rendered.into_iter().enumerate() {
        let pose = scene.camera.pose_at(f as f64);
        poses.push(pose);
        bundles.push(FrameBundle {
            timestamp: scene.timestamp(f),
            rgb: dy.rgb,
            depth: dy.depth,
            background_rgb: bg.rgb,
            background_depth: Some(bg.depth),
            pose: Some(pose),
        });
        motion_masks.push(dy.moving);
        shadow_masks.push(dy.shadow);
    }
    let trajectory = Trajectory::new((0..frames).map(|f| scene.timestamp(f)).collect(), poses)?;
    Ok(SyntheticSequence { scene: scene.clone(), frames: bundles, motion_masks, shadow_masks, trajectory })
}

/// Reads a scene description. Unlisted keys keep the [`SyntheticScene::desk`]
/// values; any `static_box`, `moving_box` or `shadow` line replaces the
/// corresponding preset list.
///
/// ```text
/// size 160 120
/// focal 120 120
/// principal 79.5 59.5
/// frames 60
/// rate 30
/// seed 7
/// noise 0
/// room -2 -1.2 -1 2 0.8 4
/// room_color floor 170 150 120
/// camera 0 0 0 0.15 0 0.004 -0.001 0.006 0.002
/// static_box 0.9 0.6 2.8 0.25 0.2 0.25 60 170 80
/// moving_box -0.3 0.5 2.2 0.22 0.3 0.18 230 40 30 0.035 0 0 40
/// shadow 0 0.2 -0.45 0.3 0.2 0.35
/// ```
pub fn parse_scene(text: &str, path: &Path) -> Result<SyntheticScene> {
    let mut s = SyntheticScene::desk();
    let (mut size, mut focal, mut principal) = (None, None, None);
    let (mut statics, mut movings, mut shadows) = (None::<Vec<_>>, None::<Vec<_>>, None::<Vec<_>>);
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        let key = tok[0];
        let args = &tok[1..];
        let nums = |n: usize| -> Result<Vec<f64>> {
            if args.len() != n {
                return Err(Error::parse(path, ln, format!("'{key}' takes {n} values, got {}", args.len())));
            }
            args.iter()
                .map(|a| a.parse::<f64>().map_err(|_| Error::parse(path, ln, format!("bad number '{a}'"))))
                .collect()
        };
        let uint = |v: f64| -> Result<u64> {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as u64)
            } else {
                Err(Error::parse(path, ln, format!("expected a non-negative integer, got {v}")))
            }
        };
        let v3 = |v: &[f64]| Vector3::new(v[0], v[1], v[2]);
        match key {
            "size" => {
                let v = nums(2)?;
                size = Some((uint(v[0])? as u32, uint(v[1])? as u32));
            }
            "focal" => focal = Some(nums(2)?),
            "principal" => principal = Some(nums(2)?),
            "frames" => s.frames = uint(nums(1)?[0])? as usize,
            "rate" => s.frame_rate = nums(1)?[0],
            "noise" => s.noise = nums(1)?[0],
            "seed" => {
                let a = args.first().ok_or_else(|| Error::parse(path, ln, "seed takes one value"))?;
                s.seed = a.parse().map_err(|_| Error::parse(path, ln, format!("bad seed '{a}'")))?;
            }
            "room" => {
                let v = nums(6)?;
                s.room.min = v3(&v[0..3]);
                s.room.max = v3(&v[3..6]);
            }
            "room_color" => {
                let face = args
                    .first()
                    .and_then(|f| Face::from_name(f))
                    .ok_or_else(|| Error::parse(path, ln, "unknown room face"))?;
                let rest: Result<Vec<f64>> = args[1..]
                    .iter()
                    .map(|a| a.parse::<f64>().map_err(|_| Error::parse(path, ln, format!("bad number '{a}'"))))
                    .collect();
                let rest = rest?;
                if rest.len() != 3 {
                    return Err(Error::parse(path, ln, "room_color takes a face and 3 values"));
                }
                s.room.colors[face as usize] = [rest[0], rest[1], rest[2]];
            }
            "camera" => {
                let v = nums(9)?;
                s.camera =
                    CameraPath { start: v3(&v[0..3]), pitch: v[3], yaw: v[4], velocity: v3(&v[5..8]), yaw_rate: v[8] };
            }
            "static_box" => {
                let v = nums(9)?;
                statics.get_or_insert_with(Vec::new).push(SceneBox {
                    center: v3(&v[0..3]),
                    half_extents: v3(&v[3..6]),
                    color: [v[6], v[7], v[8]],
                });
            }
            "moving_box" => {
                let v = nums(13)?;
                movings.get_or_insert_with(Vec::new).push(MovingBox {
                    shape: SceneBox { center: v3(&v[0..3]), half_extents: v3(&v[3..6]), color: [v[6], v[7], v[8]] },
                    velocity: v3(&v[9..12]),
                    period: uint(v[12])? as u32,
                });
            }
            "shadow" => {
                let v = nums(6)?;
                shadows.get_or_insert_with(Vec::new).push(ShadowDecal {
                    moving_box: uint(v[0])? as usize,
                    offset: (v[1], v[2]),
                    radii: (v[3], v[4]),
                    darkness: v[5],
                });
            }
            "no_static_boxes" => statics = Some(Vec::new()),
            "no_moving_boxes" => {
                movings = Some(Vec::new());
                shadows.get_or_insert_with(Vec::new);
            }
            other => return Err(Error::parse(path, ln, format!("unknown key '{other}'"))),
        }
    }
    let k = s.intrinsics;
    let (w, h) = size.unwrap_or((k.width, k.height));
    let f = focal.unwrap_or_else(|| vec![k.fx, k.fy]);
    let c = principal.unwrap_or_else(|| vec![(w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0]);
    s.intrinsics = Intrinsics::new(f[0], f[1], c[0], c[1], w, h).map_err(|e| Error::parse(path, 0, e.to_string()))?;
    if let Some(v) = statics {
        s.static_boxes = v;
    }
    if let Some(v) = movings {
        s.moving_boxes = v;
    }
    if let Some(v) = shadows {
        s.shadows = v;
    }
    s.validate().map_err(|e| Error::parse(path, 0, e.to_string()))?;
    Ok(s)
}

pub fn read_scene(path: &Path) -> Result<SyntheticScene> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene(&text, path)
}

/// Serializes every field, so parsing the result reproduces the scene.
pub fn scene_to_text(s: &SyntheticScene) -> String {
    let k = &s.intrinsics;
    let v = |v: &Vector3<f64>| format!("{} {} {}", v.x, v.y, v.z);
    let c = |c: &[f64; 3]| format!("{} {} {}", c[0], c[1], c[2]);
    let mut out = String::new();
    let _ = writeln!(out, "size {} {}", k.width, k.height);
    let _ = writeln!(out, "focal {} {}", k.fx, k.fy);
    let _ = writeln!(out, "principal {} {}", k.cx, k.cy);
    let _ = writeln!(out, "frames {}", s.frames);
    let _ = writeln!(out, "rate {}", s.frame_rate);
    let _ = writeln!(out, "seed {}", s.seed);
    let _ = writeln!(out, "noise {}", s.noise);
    let _ = writeln!(out, "room {} {}", v(&s.room.min), v(&s.room.max));
    for f in Face::ALL {
        let _ = writeln!(out, "room_color {} {}", f.name(), c(&s.room.colors[f as usize]));
    }
    let cam = &s.camera;
    let _ = writeln!(out, "camera {} {} {} {} {}", v(&cam.start), cam.pitch, cam.yaw, v(&cam.velocity), cam.yaw_rate);
    if s.static_boxes.is_empty() {
        out.push_str("no_static_boxes\n");
    }
    for b in &s.static_boxes {
        let _ = writeln!(out, "static_box {} {} {}", v(&b.center), v(&b.half_extents), c(&b.color));
    }
    if s.moving_boxes.is_empty() {
        out.push_str("no_moving_boxes\n");
    }
    for m in &s.moving_boxes {
        let b = &m.shape;
        let _ = writeln!(
            out,
            "moving_box {} {} {} {} {}",
            v(&b.center),
            v(&b.half_extents),
            c(&b.color),
            v(&m.velocity),
            m.period
        );
    }
    for d in &s.shadows {
        let _ = writeln!(
            out,
            "shadow {} {} {} {} {} {}",
            d.moving_box, d.offset.0, d.offset.1, d.radii.0, d.radii.1, d.darkness
        );
    }
    out
}
