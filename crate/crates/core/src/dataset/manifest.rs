use std::borrow::Cow;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rayon::prelude::*;

use super::images::{load_depth_png, load_rgb, DEFAULT_DEPTH_SCALE};
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, PoseSE3};
use crate::pipeline::{FrameBundle, FrameSource, InMemorySequence};

/// Camera-to-world pose in TUM order `tx ty tz qx qy qz qw`, kept verbatim so
/// that re-serializing is lossless.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TumPose(pub [f64; 7]);

impl TumPose {
    pub fn from_pose(p: &PoseSE3) -> Self {
        let t = p.translation();
        let q = p.quaternion();
        Self([t.x, t.y, t.z, q.i, q.j, q.k, q.w])
    }

    pub fn to_pose(&self) -> Result<PoseSE3> {
        let v = &self.0;
        PoseSE3::from_quaternion(v[6], v[3], v[4], v[5], Vector3::new(v[0], v[1], v[2]))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestFrame {
    pub timestamp: f64,
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub background_rgb: PathBuf,
    pub background_depth: Option<PathBuf>,
    pub pose: Option<TumPose>,
}

/// Frame list of a sequence. Relative paths resolve against `root`, which is
/// the directory holding the manifest file.
///
/// Text format, one record per line, `#` comments:
///
/// ```text
/// INTRINSICS fx fy cx cy width height
/// DEPTH_SCALE 5000
/// FRAME timestamp rgb depth bg_rgb bg_depth|- [tx ty tz qx qy qz qw]
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceManifest {
    pub root: PathBuf,
    pub intrinsics: Intrinsics,
    pub depth_scale: f64,
    pub frames: Vec<ManifestFrame>,
}

impl SequenceManifest {
    pub fn new(
        root: impl Into<PathBuf>,
        intrinsics: Intrinsics,
        depth_scale: f64,
        frames: Vec<ManifestFrame>,
    ) -> Result<Self> {
        let m = Self { root: root.into(), intrinsics, depth_scale, frames };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if !(self.depth_scale > 0.0 && self.depth_scale.is_finite()) {
            return Err(Error::param(format!("depth scale {} must be positive", self.depth_scale)));
        }
        if self.frames.windows(2).any(|w| !(w[1].timestamp > w[0].timestamp)) {
            return Err(Error::param("manifest timestamps must be strictly increasing"));
        }
        Ok(())
    }

    /// Fails with [`Error::MissingFile`] on the first referenced file that does not exist.
    pub fn check_files(&self) -> Result<()> {
        for f in &self.frames {
            let paths = [Some(&f.rgb), Some(&f.depth), Some(&f.background_rgb), f.background_depth.as_ref()];
            for p in paths.into_iter().flatten() {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Error::MissingFile(full));
                }
            }
        }
        Ok(())
    }

    /// Parses and checks that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::parse(&text, root, path)?;
        m.check_files()?;
        Ok(m)
    }

    pub fn parse(text: &str, root: PathBuf, path: &Path) -> Result<Self> {
        let mut intrinsics = None;
        let mut depth_scale = DEFAULT_DEPTH_SCALE;
        let mut frames = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let tok: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(path, ln, format!("bad number '{s}'")));
            match tok[0] {
                "INTRINSICS" => {
                    if tok.len() != 7 {
                        return Err(Error::parse(path, ln, "INTRINSICS takes fx fy cx cy width height"));
                    }
                    let dim = |s: &str| s.parse::<u32>().map_err(|_| Error::parse(path, ln, format!("bad size '{s}'")));
                    let k = Intrinsics::new(
                        num(tok[1])?,
                        num(tok[2])?,
                        num(tok[3])?,
                        num(tok[4])?,
                        dim(tok[5])?,
                        dim(tok[6])?,
                    )
                    .map_err(|e| Error::parse(path, ln, e.to_string()))?;
                    intrinsics = Some(k);
                }
                "DEPTH_SCALE" => {
                    if tok.len() != 2 {
                        return Err(Error::parse(path, ln, "DEPTH_SCALE takes one value"));
                    }
                    depth_scale = num(tok[1])?;
                }
                "FRAME" => {
                    if tok.len() != 6 && tok.len() != 13 {
                        return Err(Error::parse(path, ln, "FRAME takes 5 fields plus an optional 7-value pose"));
                    }
                    let pose = if tok.len() == 13 {
                        let mut v = [0.0; 7];
                        for (k, s) in tok[6..].iter().enumerate() {
                            v[k] = num(s)?;
                        }
                        let p = TumPose(v);
                        p.to_pose().map_err(|e| Error::parse(path, ln, e.to_string()))?;
                        Some(p)
                    } else {
                        None
                    };
                    frames.push(ManifestFrame {
                        timestamp: num(tok[1])?,
                        rgb: tok[2].into(),
                        depth: tok[3].into(),
                        background_rgb: tok[4].into(),
                        background_depth: (tok[5] != "-").then(|| tok[5].into()),
                        pose,
                    });
                }
                other => return Err(Error::parse(path, ln, format!("unknown record '{other}'"))),
            }
        }
        let intrinsics = intrinsics.ok_or_else(|| Error::parse(path, 0, "missing INTRINSICS record"))?;
        Self::new(root, intrinsics, depth_scale, frames).map_err(|e| Error::parse(path, 0, e.to_string()))
    }

    pub fn to_text(&self) -> Result<String> {
        let k = &self.intrinsics;
        let mut s = String::from("# pixmotion sequence manifest\n");
        let _ = writeln!(s, "INTRINSICS {} {} {} {} {} {}", k.fx, k.fy, k.cx, k.cy, k.width, k.height);
        let _ = writeln!(s, "DEPTH_SCALE {}", self.depth_scale);
        for f in &self.frames {
            let paths = [Some(&f.rgb), Some(&f.depth), Some(&f.background_rgb), f.background_depth.as_ref()];
            let mut fields = Vec::with_capacity(4);
            for p in paths {
                let Some(p) = p else {
                    fields.push("-".to_string());
                    continue;
                };
                let text = p.to_str().ok_or_else(|| Error::param(format!("path {} is not UTF-8", p.display())))?;
                if text.is_empty() || text == "-" || text.contains(char::is_whitespace) {
                    return Err(Error::param(format!("path '{text}' cannot be stored in a manifest")));
                }
                fields.push(text.to_string());
            }
            let _ = write!(s, "FRAME {} {}", f.timestamp, fields.join(" "));
            if let Some(TumPose(v)) = &f.pose {
                for x in v {
                    let _ = write!(s, " {x}");
                }
            }
            s.push('\n');
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn load_frame(&self, index: usize) -> Result<FrameBundle> {
        let f = self.frames.get(index).ok_or(Error::Empty("frame index out of range"))?;
        let bundle = FrameBundle {
            timestamp: f.timestamp,
            rgb: load_rgb(&self.resolve(&f.rgb))?,
            depth: load_depth_png(&self.resolve(&f.depth), self.depth_scale)?,
            background_rgb: load_rgb(&self.resolve(&f.background_rgb))?,
            background_depth: match &f.background_depth {
                Some(p) => Some(load_depth_png(&self.resolve(p), self.depth_scale)?),
                None => None,
            },
            pose: f.pose.as_ref().map(TumPose::to_pose).transpose()?,
        };
        bundle.validate(&self.intrinsics)?;
        Ok(bundle)
    }

    /// Decodes every frame, in parallel.
    pub fn load_all(&self) -> Result<InMemorySequence> {
        let frames = (0..self.len()).into_par_iter().map(|i| self.load_frame(i)).collect::<Result<Vec<_>>>()?;
        Ok(InMemorySequence { intrinsics: self.intrinsics, frames })
    }
}

/// Frames are decoded from disk on every access.
impl FrameSource for SequenceManifest {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn intrinsics(&self) -> Intrinsics {
        self.intrinsics
    }

    fn frame(&self, index: usize) -> Result<Cow<'_, FrameBundle>> {
        self.load_frame(index).map(Cow::Owned)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "\
# sample
INTRINSICS 535.4 539.2 320.1 247.6 640 480
DEPTH_SCALE 5000
FRAME 1305031102.175304 rgb/a.png depth/a.png background/rgb/a.png - 0.1 -0.2 1.5 0 0 0.3826834323650898 0.9238795325112867
FRAME 1305031102.211214 rgb/b.png depth/b.png background/rgb/b.png background/depth/b.png
";

    #[test]
    fn parse_and_reserialize_is_lossless() {
        let m = SequenceManifest::parse(TEXT, PathBuf::from("/data"), Path::new("m.txt")).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.frames[0].background_depth, None);
        assert!(m.frames[1].pose.is_none());
        assert_eq!(m.resolve(&m.frames[0].rgb), PathBuf::from("/data/rgb/a.png"));
        let text = m.to_text().unwrap();
        let again = SequenceManifest::parse(&text, PathBuf::from("/data"), Path::new("m.txt")).unwrap();
        assert_eq!(again, m);
        assert_eq!(again.to_text().unwrap(), text);
    }

    #[test]
    fn rejects_bad_manifests() {
        let p = Path::new("m.txt");
        let unordered = TEXT.replace("1305031102.211214", "1305031102.0");
        assert!(SequenceManifest::parse(&unordered, PathBuf::new(), p).is_err());
        let no_k = TEXT.replace("INTRINSICS 535.4 539.2 320.1 247.6 640 480\n", "");
        assert!(SequenceManifest::parse(&no_k, PathBuf::new(), p).is_err());
        assert!(SequenceManifest::parse("INTRINSICS 1 1 0 0 4 4\nFRAME 0 a b\n", PathBuf::new(), p).is_err());
        assert!(SequenceManifest::parse("BOGUS\n", PathBuf::new(), p).is_err());
    }

    #[test]
    fn load_requires_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.txt");
        fs::write(&path, TEXT).unwrap();
        assert!(matches!(SequenceManifest::load(&path), Err(Error::MissingFile(_))));
    }
}
