//! Scene search: find the viewpoint a target crop was taken from.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{observation, EnvStepResult, EyeCommand, EyeEnv, EyePolicy, Observation, StepInfo};
use crate::error::{Error, Result};
use crate::foveation::PyramidRenderer;
use crate::gimbal::{GazeState, GimbalConfig};
use crate::panorama::{dir_from_angles, CameraRays, Direction, EquirectPanorama};
use crate::rewards::{cosine_similarity, truncated_distance_reward, FeatureExtractor, SearchReward};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSearchConfig {
    pub episode_steps: usize,
    pub min_fov_deg: f64,
    pub max_fov_deg: f64,
    /// Target elevations are uniform in `±max_target_elevation_deg`.
    pub max_target_elevation_deg: f64,
    pub reward: SearchReward,
}

impl Default for SceneSearchConfig {
    fn default() -> Self {
        Self {
            episode_steps: 40,
            min_fov_deg: 10.0,
            max_fov_deg: 65.0,
            max_target_elevation_deg: 67.5,
            reward: SearchReward::Combined,
        }
    }
}

/// Training episodes: a random crop of one panorama is the target.
pub struct SceneSearchEnv {
    renderer: Arc<PyramidRenderer>,
    gimbal: GimbalConfig,
    cfg: SceneSearchConfig,
    fx: Arc<dyn FeatureExtractor>,
    image: Arc<EquirectPanorama>,
    target: (f64, f64),
    crop: CameraRays,
    target_features: Vec<f64>,
    gaze: GazeState,
    steps: usize,
    done: bool,
}

impl SceneSearchEnv {
    pub fn reset(
        images: &[Arc<EquirectPanorama>],
        renderer: Arc<PyramidRenderer>,
        gimbal: GimbalConfig,
        cfg: SceneSearchConfig,
        fx: Arc<dyn FeatureExtractor>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Self, Observation)> {
        if images.is_empty() {
            return Err(Error::Env("scene search needs at least one image".into()));
        }
        gimbal.validate()?;
        let image = images[rng.gen_range(0..images.len())].clone();
        let fov = rng.gen_range(cfg.min_fov_deg..=cfg.max_fov_deg).to_radians();
        let lim = cfg.max_target_elevation_deg.to_radians();
        let target = (rng.gen_range(-PI..PI), rng.gen_range(-lim..=lim));
        let crop = CameraRays::new(fov, renderer.config().resolution, renderer.config().projection)?;
        let target_features = fx.extract(&crop.render(&image, target.0, target.1));
        let env = Self {
            gaze: GazeState::random_init(rng),
            renderer,
            gimbal,
            cfg,
            fx,
            image,
            target,
            crop,
            target_features,
            steps: 0,
            done: false,
        };
        let obs = env.observe();
        Ok((env, obs))
    }

    fn observe(&self) -> Observation {
        observation(
            self.renderer.render(&self.image, &self.gaze),
            None,
            Some(self.target_features.clone()),
        )
    }

    pub fn target_fov(&self) -> f64 {
        self.crop.fov()
    }
}

impl EyeEnv for SceneSearchEnv {
    fn step(&mut self, cmd: EyeCommand) -> Result<EnvStepResult> {
        if self.done {
            return Err(Error::Env("step called on a finished scene-search episode".into()));
        }
        self.gaze = cmd.apply(&self.gaze, &self.gimbal)?;
        self.steps += 1;
        self.done = self.steps >= self.cfg.episode_steps;
        let target = dir_from_angles(self.target.0, self.target.1);
        let distance = match self.cfg.reward {
            SearchReward::Similarity => 0.0,
            _ => truncated_distance_reward(&self.gaze.direction(), &target, self.renderer.config().coarsest_fov()),
        };
        let similarity = match self.cfg.reward {
            SearchReward::Distance => 0.0,
            _ => {
                let view = self.crop.render(&self.image, self.gaze.azimuth, self.gaze.elevation);
                cosine_similarity(&self.fx.extract(&view), &self.target_features)
            }
        };
        Ok(EnvStepResult {
            observation: self.observe(),
            reward: self.cfg.reward.combine(distance, similarity),
            done: self.done,
            info: self.info(),
        })
    }

    fn info(&self) -> StepInfo {
        StepInfo {
            step: self.steps,
            frame_index: 0,
            target: Some(self.target),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneEvalConfig {
    /// Row centers from top to bottom, degrees.
    pub elevations_deg: Vec<f64>,
    /// Column centers from left to right, degrees.
    pub azimuths_deg: Vec<f64>,
    pub crop_fov_deg: f64,
    pub steps_per_target: usize,
}

impl Default for SceneEvalConfig {
    fn default() -> Self {
        Self {
            elevations_deg: vec![67.5, 22.5, -22.5, -67.5],
            azimuths_deg: vec![-150.0, -90.0, -30.0, 30.0, 90.0, 150.0],
            crop_fov_deg: 40.0,
            steps_per_target: 20,
        }
    }
}

/// Boustrophedon order over a `rows x cols` grid: left to right on even rows,
/// right to left on odd rows.
pub fn s_pattern(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    (0..rows)
        .flat_map(|r| {
            let cols: Box<dyn Iterator<Item = usize>> = if r % 2 == 0 {
                Box::new(0..cols)
            } else {
                Box::new((0..cols).rev())
            };
            cols.map(move |c| (r, c))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneEvalRecord {
    pub image: usize,
    pub order: usize,
    pub row: usize,
    pub col: usize,
    pub similarity: f64,
    pub exact_match: bool,
    /// Angle between final gaze and target, radians.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEvalMetrics {
    pub mean_similarity: f64,
    pub exact_match_rate: f64,
    pub records: Vec<SceneEvalRecord>,
}

/// Moves the target through the grid in S order, giving the policy a fixed
/// step budget per target. Gaze starts at a random pose per image and carries
/// over between targets. A target counts as an exact match when it lies inside
/// the eye's widest field of view after the budget; similarity compares
/// crop-sized views.
pub fn run_scene_search_eval(
    policy: &mut dyn EyePolicy,
    images: &[Arc<EquirectPanorama>],
    fx: &dyn FeatureExtractor,
    renderer: &PyramidRenderer,
    gimbal: &GimbalConfig,
    cfg: &SceneEvalConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SceneEvalMetrics> {
    if images.is_empty() {
        return Err(Error::Env("scene search evaluation needs at least one image".into()));
    }
    let crop = CameraRays::new(
        cfg.crop_fov_deg.to_radians(),
        renderer.config().resolution,
        renderer.config().projection,
    )?;
    let half_fov = renderer.config().coarsest_fov() / 2.0;
    let order = s_pattern(cfg.elevations_deg.len(), cfg.azimuths_deg.len());
    let mut records = Vec::with_capacity(images.len() * order.len());
    for (i, image) in images.iter().enumerate() {
        let mut gaze = GazeState::random_init(rng);
        for (k, &(row, col)) in order.iter().enumerate() {
            let target = (cfg.azimuths_deg[col].to_radians(), cfg.elevations_deg[row].to_radians());
            let target_dir: Direction = dir_from_angles(target.0, target.1);
            let target_features = fx.extract(&crop.render(image, target.0, target.1));
            for s in 0..cfg.steps_per_target {
                let obs = observation(renderer.render(image, &gaze), None, Some(target_features.clone()));
                let info = StepInfo {
                    step: s,
                    frame_index: 0,
                    target: Some(target),
                };
                gaze = policy.act(&obs, &info, rng)?.apply(&gaze, gimbal)?;
            }
            let error = gaze.direction().angle_to(&target_dir);
            let view = fx.extract(&crop.render(image, gaze.azimuth, gaze.elevation));
            records.push(SceneEvalRecord {
                image: i,
                order: k,
                row,
                col,
                similarity: cosine_similarity(&view, &target_features),
                exact_match: error < half_fov,
                error,
            });
        }
    }
    let n = records.len() as f64;
    Ok(SceneEvalMetrics {
        mean_similarity: records.iter().map(|r| r.similarity).sum::<f64>() / n,
        exact_match_rate: records.iter().filter(|r| r.exact_match).count() as f64 / n,
        records,
    })
}
