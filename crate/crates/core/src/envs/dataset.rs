//! On-disk demonstration datasets.
//!
//! Layout:
//!
//! ```text
//! root/dataset.toml            name, episodes = ["ep_000", ...]
//! root/ep_000/episode.toml     id, fps, length, joint_names, lower, upper,
//!                              frames = [...], trajectory, annotations
//! root/ep_000/trajectory.txt   t frame q0 .. q{n-1} gripper
//! root/ep_000/annotations.txt  frame azimuth elevation visible
//! ```
//!
//! The `frame` column of the trajectory indexes into the `frames` image list,
//! so a static scene stores a single image.

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::JointTrajectory;
use crate::panorama::{dir_from_angles, Direction, EquirectPanorama};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetAnnotation {
    pub azimuth: f64,
    pub elevation: f64,
    pub visible: bool,
}

impl TargetAnnotation {
    pub fn direction(&self) -> Direction {
        dir_from_angles(self.azimuth, self.elevation)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct DatasetManifest {
    pub name: String,
    pub episodes: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct EpisodeManifest {
    pub id: String,
    pub fps: f64,
    pub length: usize,
    pub joint_names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub frames: Vec<String>,
    pub trajectory: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<String>,
}

#[derive(Debug)]
pub struct DemoEpisode {
    pub id: String,
    pub fps: f64,
    pub joint_names: Vec<String>,
    pub limits: Vec<(f64, f64)>,
    pub timestamps: Vec<f64>,
    /// Per timestep, index into the image list.
    pub frame_refs: Vec<usize>,
    pub trajectory: JointTrajectory,
    pub annotations: Option<Vec<TargetAnnotation>>,
    image_paths: Vec<PathBuf>,
    images: Vec<OnceLock<Arc<EquirectPanorama>>>,
}

impl DemoEpisode {
    /// Builds an episode whose images are already in memory.
    pub fn in_memory(
        id: impl Into<String>,
        fps: f64,
        limits: Vec<(f64, f64)>,
        images: Vec<EquirectPanorama>,
        frame_refs: Vec<usize>,
        trajectory: JointTrajectory,
        annotations: Option<Vec<TargetAnnotation>>,
    ) -> Result<Self> {
        let id = id.into();
        let timestamps = (0..frame_refs.len()).map(|i| i as f64 / fps).collect();
        let ep = Self {
            joint_names: (0..limits.len()).map(|i| format!("joint_{i}")).collect(),
            id,
            fps,
            limits,
            timestamps,
            frame_refs,
            trajectory,
            annotations,
            image_paths: vec![PathBuf::new(); images.len()],
            images: images
                .into_iter()
                .map(|p| {
                    let cell = OnceLock::new();
                    let _ = cell.set(Arc::new(p));
                    cell
                })
                .collect(),
        };
        ep.validate()?;
        Ok(ep)
    }

    pub fn len(&self) -> usize {
        self.frame_refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_refs.is_empty()
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    /// Decodes (once) and returns the panorama shown at timestep `t`.
    pub fn frame(&self, t: usize) -> Result<Arc<EquirectPanorama>> {
        let idx = *self
            .frame_refs
            .get(t)
            .ok_or_else(|| Error::dataset(&self.id, "frame", format!("timestep {t} out of range")))?;
        self.image(idx)
    }

    pub fn image(&self, idx: usize) -> Result<Arc<EquirectPanorama>> {
        let cell = &self.images[idx];
        if let Some(p) = cell.get() {
            return Ok(p.clone());
        }
        let p = EquirectPanorama::load(&self.image_paths[idx])?;
        let _ = cell.set(Arc::new(p));
        Ok(cell.get().expect("initialized above").clone())
    }

    pub fn annotation(&self, t: usize) -> Option<TargetAnnotation> {
        self.annotations.as_ref().and_then(|a| a.get(t).copied())
    }

    fn validate(&self) -> Result<()> {
        let id = &self.id;
        let n = self.frame_refs.len();
        if n == 0 {
            return Err(Error::dataset(id, "length", "episode has no timesteps"));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::dataset(id, "fps", format!("{} is not a positive rate", self.fps)));
        }
        if self.trajectory.len() != n {
            return Err(Error::dataset(
                id,
                "trajectory",
                format!("{} rows but {n} frames", self.trajectory.len()),
            ));
        }
        if self.trajectory.joints() != self.limits.len() {
            return Err(Error::dataset(
                id,
                "trajectory",
                format!("{} joints but {} limits", self.trajectory.joints(), self.limits.len()),
            ));
        }
        if self.timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::dataset(id, "trajectory.t", "timestamps are not strictly increasing"));
        }
        if let Some(bad) = self.frame_refs.iter().find(|&&r| r >= self.images.len()) {
            return Err(Error::dataset(
                id,
                "trajectory.frame",
                format!("image index {bad} but only {} images listed", self.images.len()),
            ));
        }
        if let Some(a) = &self.annotations {
            if a.len() != n {
                return Err(Error::dataset(id, "annotations", format!("{} rows but {n} frames", a.len())));
            }
        }
        for (i, (lo, hi)) in self.limits.iter().enumerate() {
            if !(lo < hi) {
                return Err(Error::dataset(id, "lower/upper", format!("joint {i} has empty range")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub name: String,
    pub episodes: Vec<Arc<DemoEpisode>>,
}

/// Reads the manifest and every episode's tables. Images are only checked for
/// existence; pixels are decoded on first access.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    let manifest_path = root.join("dataset.toml");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest = toml::from_str(&text).map_err(|e| Error::Manifest {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    if manifest.episodes.is_empty() {
        return Err(Error::Manifest {
            path: manifest_path,
            message: "no episodes listed".into(),
        });
    }
    let episodes = manifest
        .episodes
        .iter()
        .map(|dir| load_episode(&root.join(dir), dir).map(Arc::new))
        .collect::<Result<_>>()?;
    Ok(Dataset {
        root: root.to_path_buf(),
        name: manifest.name,
        episodes,
    })
}

fn load_episode(dir: &Path, label: &str) -> Result<DemoEpisode> {
    let path = dir.join("episode.toml");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::dataset(label, "episode.toml", format!("{}: {e}", path.display())))?;
    let m: EpisodeManifest =
        toml::from_str(&text).map_err(|e| Error::dataset(label, "episode.toml", e.to_string()))?;
    let id = m.id.clone();

    let dof = m.joint_names.len();
    if m.lower.len() != dof || m.upper.len() != dof {
        return Err(Error::dataset(
            &id,
            "lower/upper",
            format!("expected {dof} entries to match joint_names"),
        ));
    }

    let image_paths: Vec<PathBuf> = m.frames.iter().map(|f| dir.join(f)).collect();
    for (i, p) in image_paths.iter().enumerate() {
        if !p.is_file() {
            return Err(Error::dataset(&id, format!("frames[{i}]"), format!("missing file {}", p.display())));
        }
    }

    let rows = read_table(&dir.join(&m.trajectory), &id, "trajectory", dof + 3)?;
    let mut timestamps = Vec::with_capacity(rows.len());
    let mut frame_refs = Vec::with_capacity(rows.len());
    let mut positions = Vec::with_capacity(rows.len());
    let mut gripper = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        timestamps.push(r[0]);
        if r[1] < 0.0 || r[1].fract() != 0.0 {
            return Err(Error::dataset(&id, "trajectory.frame", format!("row {i}: {} is not an index", r[1])));
        }
        frame_refs.push(r[1] as usize);
        positions.push(r[2..2 + dof].to_vec());
        gripper.push(r[2 + dof]);
    }
    if rows.len() != m.length {
        return Err(Error::dataset(
            &id,
            "length",
            format!("manifest declares {} frames but trajectory has {} rows", m.length, rows.len()),
        ));
    }
    let trajectory = JointTrajectory::new(positions, Some(gripper))
        .map_err(|e| Error::dataset(&id, "trajectory", e.to_string()))?;

    let annotations = match &m.annotations {
        None => None,
        Some(file) => {
            let rows = read_table(&dir.join(file), &id, "annotations", 4)?;
            let mut out = vec![None; m.length];
            for (i, r) in rows.iter().enumerate() {
                let f = r[0];
                if f < 0.0 || f.fract() != 0.0 || f as usize >= m.length {
                    return Err(Error::dataset(&id, "annotations.frame", format!("row {i}: bad frame {f}")));
                }
                out[f as usize] = Some(TargetAnnotation {
                    azimuth: r[1],
                    elevation: r[2],
                    visible: r[3] != 0.0,
                });
            }
            let missing = out.iter().position(Option::is_none);
            if let Some(t) = missing {
                return Err(Error::dataset(&id, "annotations", format!("no row for frame {t}")));
            }
            Some(out.into_iter().flatten().collect())
        }
    };

    let images = image_paths.iter().map(|_| OnceLock::new()).collect();
    let ep = DemoEpisode {
        id,
        fps: m.fps,
        joint_names: m.joint_names,
        limits: m.lower.into_iter().zip(m.upper).collect(),
        timestamps,
        frame_refs,
        trajectory,
        annotations,
        image_paths,
        images,
    };
    ep.validate()?;
    Ok(ep)
}

/// Whitespace-separated numeric table; `#` starts a comment line.
fn read_table(path: &Path, episode: &str, field: &str, width: usize) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::dataset(episode, field, format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::dataset(episode, field, format!("line {}: {e}", lineno + 1)))?;
        if row.len() != width {
            return Err(Error::dataset(
                episode,
                field,
                format!("line {}: expected {width} columns, found {}", lineno + 1, row.len()),
            ));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub(crate) fn write_episode(
    dir: &Path,
    manifest: &EpisodeManifest,
    trajectory: &JointTrajectory,
    frame_refs: &[usize],
    annotations: Option<&[TargetAnnotation]>,
) -> Result<()> {
    use std::fmt::Write;
    let toml_text = toml::to_string(manifest).map_err(|e| Error::Config(e.to_string()))?;
    let path = dir.join("episode.toml");
    std::fs::write(&path, toml_text).map_err(|e| Error::io(&path, e))?;

    let dof = trajectory.joints();
    let mut t = String::from("# t frame");
    for j in 0..dof {
        let _ = write!(t, " q{j}");
    }
    t.push_str(" gripper\n");
    for (i, q) in trajectory.positions.iter().enumerate() {
        let _ = write!(t, "{} {}", i as f64 / manifest.fps, frame_refs[i]);
        for v in q {
            let _ = write!(t, " {v}");
        }
        let g = trajectory.gripper.as_ref().map_or(0.0, |g| g[i]);
        let _ = writeln!(t, " {g}");
    }
    let path = dir.join(&manifest.trajectory);
    std::fs::write(&path, t).map_err(|e| Error::io(&path, e))?;

    if let (Some(file), Some(ann)) = (&manifest.annotations, annotations) {
        let mut a = String::from("# frame azimuth elevation visible\n");
        for (i, x) in ann.iter().enumerate() {
            let _ = writeln!(a, "{i} {} {} {}", x.azimuth, x.elevation, u8::from(x.visible));
        }
        let path = dir.join(file);
        std::fs::write(&path, a).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub(crate) fn write_manifest(root: &Path, m: &DatasetManifest) -> Result<()> {
    let text = toml::to_string(m).map_err(|e| Error::Config(e.to_string()))?;
    let path = root.join("dataset.toml");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
