//! Procedural demonstration data: a colored disk on a textured sphere and a
//! joint ramp whose first joint ends at the disk's azimuth.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{load_dataset, write_episode, write_manifest, Dataset, DatasetManifest, DemoEpisode, EpisodeManifest, TargetAnnotation};
use crate::error::{Error, Result};
use crate::kinematics::{DhChain, JointTrajectory};
use crate::panorama::{dir_from_angles, Direction, EquirectPanorama, Rgb};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub episodes: usize,
    pub frames: usize,
    pub fps: f64,
    pub pano_height: usize,
    pub disk_radius_deg: f64,
    pub disk_color: Rgb,
    /// Disk azimuth is uniform in `±azimuth_range_deg`.
    pub azimuth_range_deg: f64,
    pub elevation_range_deg: (f64, f64),
    /// Seeds the background shared by every episode.
    pub texture_seed: u64,
    /// Amplitude of the per-episode texture perturbation.
    pub episode_noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            episodes: 24,
            frames: 300,
            fps: 30.0,
            pano_height: 128,
            disk_radius_deg: 7.0,
            disk_color: [1.0, 0.0, 0.0],
            azimuth_range_deg: 50.0,
            elevation_range_deg: (-20.0, 10.0),
            texture_seed: 7,
            episode_noise: 0.04,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synth: {m}")));
        if self.episodes == 0 || self.frames == 0 {
            return bad("episodes and frames must be >= 1".into());
        }
        if !(self.fps > 0.0) || self.pano_height < 4 {
            return bad("fps must be > 0 and pano_height >= 4".into());
        }
        if !(self.disk_radius_deg > 0.0 && self.disk_radius_deg < 90.0) {
            return bad(format!("disk_radius_deg {} outside (0, 90)", self.disk_radius_deg));
        }
        if !(0.0..=180.0).contains(&self.azimuth_range_deg) {
            return bad(format!("azimuth_range_deg {} outside [0, 180]", self.azimuth_range_deg));
        }
        let (lo, hi) = self.elevation_range_deg;
        if !(lo <= hi && lo >= -90.0 && hi <= 90.0) {
            return bad(format!("elevation_range_deg ({lo}, {hi}) invalid"));
        }
        if self.disk_color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return bad("disk_color channels must be in [0, 1]".into());
        }
        Ok(())
    }
}

struct Blob {
    center: Direction,
    sharpness: f64,
    color: Rgb,
}

fn blobs(rng: &mut ChaCha8Rng, count: usize, amplitude: f64) -> Vec<Blob> {
    (0..count)
        .map(|_| {
            let z: f64 = rng.gen_range(-1.0..1.0);
            let az: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            Blob {
                center: dir_from_angles(az, z.asin()),
                sharpness: rng.gen_range(4.0..14.0),
                color: [0, 1, 2].map(|_| rng.gen_range(-amplitude..amplitude)),
            }
        })
        .collect()
}

/// Background: a smooth direction-coded gradient plus Gaussian-like blobs.
/// `target` is the disk bearing `(azimuth, elevation)`.
pub fn synth_panorama(spec: &SynthSpec, target: (f64, f64), episode_seed: u64) -> Result<EquirectPanorama> {
    let shared = blobs(&mut ChaCha8Rng::seed_from_u64(spec.texture_seed), 24, 0.1);
    let local = blobs(&mut ChaCha8Rng::seed_from_u64(episode_seed), 12, spec.episode_noise);
    let center = dir_from_angles(target.0, target.1);
    let radius = spec.disk_radius_deg.to_radians();
    EquirectPanorama::from_fn(spec.pano_height, |d| {
        if d.angle_to(&center) < radius {
            return spec.disk_color;
        }
        let mut c = [0.5 + 0.25 * d.x(), 0.5 + 0.25 * d.y(), 0.5 + 0.25 * d.z()];
        for b in shared.iter().chain(&local) {
            let w = (b.sharpness * (d.dot(&b.center) - 1.0)).exp();
            for k in 0..3 {
                c[k] += w * b.color[k];
            }
        }
        c
    })
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Two-phase reach from the middle of every joint range. The first
/// `REACH_PHASE` of the episode lifts joint 1 and extends joint 2 by the same
/// amount in every episode; the rest turns joint 0 to the target azimuth,
/// tilts joint 1 with the target elevation and sets the wrist from both. The
/// gripper closes over the second half.
pub fn synth_trajectory(chain: &DhChain, frames: usize, target: (f64, f64)) -> Result<JointTrajectory> {
    let home: Vec<f64> = chain.limits.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
    let mut mid = home.clone();
    if mid.len() > 1 {
        mid[1] = home[1] - 0.4;
    }
    if mid.len() > 2 {
        mid[2] = home[2] + 0.3;
    }
    let mut goal = mid.clone();
    goal[0] = target.0;
    if goal.len() > 1 {
        goal[1] = mid[1] + target.1;
    }
    if goal.len() > 5 {
        goal[3] = mid[3] + 1.2 * target.1;
        goal[4] = mid[4] + target.0;
        goal[5] = mid[5] + 2.0 * target.0;
    }
    for (i, (g, (lo, hi))) in goal.iter().zip(&chain.limits).enumerate() {
        if g < lo || g > hi {
            return Err(Error::Config(format!("synth: joint {i} goal {g} outside [{lo}, {hi}]")));
        }
    }
    let denom = (frames.max(2) - 1) as f64;
    let mut positions = Vec::with_capacity(frames);
    let mut gripper = Vec::with_capacity(frames);
    for f in 0..frames {
        let x = f as f64 / denom;
        let (from, to, s) = if x < REACH_PHASE {
            (&home, &mid, smoothstep(x / REACH_PHASE))
        } else {
            (&mid, &goal, smoothstep((x - REACH_PHASE) / (1.0 - REACH_PHASE)))
        };
        positions.push(from.iter().zip(to).map(|(a, b)| a + s * (b - a)).collect());
        gripper.push(smoothstep(2.0 * x - 1.0));
    }
    JointTrajectory::new(positions, Some(gripper))
}

const REACH_PHASE: f64 = 0.4;

/// The same episodes [`generate_synthetic_dataset`] would write for this
/// generator state, kept in memory.
pub fn synth_episodes(spec: &SynthSpec, chain: &DhChain, rng: &mut ChaCha8Rng) -> Result<Vec<Arc<DemoEpisode>>> {
    spec.validate()?;
    (0..spec.episodes)
        .map(|i| {
            let (az, el, episode_seed) = draw_episode(spec, rng);
            let ep = DemoEpisode::in_memory(
                format!("ep_{i:03}"),
                spec.fps,
                chain.limits.clone(),
                vec![synth_panorama(spec, (az, el), episode_seed)?],
                vec![0; spec.frames],
                synth_trajectory(chain, spec.frames, (az, el))?,
                Some(vec![
                    TargetAnnotation {
                        azimuth: az,
                        elevation: el,
                        visible: true,
                    };
                    spec.frames
                ]),
            )?;
            Ok(Arc::new(ep))
        })
        .collect()
}

fn draw_episode(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> (f64, f64, u64) {
    let az = rng.gen_range(-spec.azimuth_range_deg..=spec.azimuth_range_deg).to_radians();
    let (lo, hi) = spec.elevation_range_deg;
    let el = rng.gen_range(lo..=hi).to_radians();
    (az, el, rng.gen())
}

/// Writes `spec.episodes` static-scene episodes under `out` and loads them back.
pub fn generate_synthetic_dataset(
    spec: &SynthSpec,
    chain: &DhChain,
    out: impl AsRef<Path>,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset> {
    spec.validate()?;
    let out = out.as_ref();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut names = Vec::with_capacity(spec.episodes);
    for i in 0..spec.episodes {
        let (az, el, episode_seed) = draw_episode(spec, rng);

        let id = format!("ep_{i:03}");
        let dir = out.join(&id);
        let frames_dir = dir.join("frames");
        std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
        synth_panorama(spec, (az, el), episode_seed)?.save_png(frames_dir.join("frame_00000.png"))?;

        let trajectory = synth_trajectory(chain, spec.frames, (az, el))?;
        let annotations = vec![
            TargetAnnotation {
                azimuth: az,
                elevation: el,
                visible: true,
            };
            spec.frames
        ];
        let manifest = EpisodeManifest {
            id: id.clone(),
            fps: spec.fps,
            length: spec.frames,
            joint_names: (0..chain.dof()).map(|j| format!("joint_{j}")).collect(),
            lower: chain.limits.iter().map(|l| l.0).collect(),
            upper: chain.limits.iter().map(|l| l.1).collect(),
            frames: vec!["frames/frame_00000.png".into()],
            trajectory: "trajectory.txt".into(),
            annotations: Some("annotations.txt".into()),
        };
        write_episode(&dir, &manifest, &trajectory, &vec![0; spec.frames], Some(&annotations))?;
        names.push(id);
    }
    write_manifest(
        out,
        &DatasetManifest {
            name: "synthetic".into(),
            episodes: names,
        },
    )?;
    load_dataset(out)
}
