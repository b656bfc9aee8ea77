use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{observation, EnvStepResult, EyeCommand, EyeEnv, Observation, StepInfo};
use super::dataset::{DemoEpisode, TargetAnnotation};
use crate::error::{Error, Result};
use crate::foveation::PyramidRenderer;
use crate::gimbal::{GazeState, GimbalConfig};
use crate::panorama::{CameraRays, EquirectPanorama};
use crate::rewards::{truncated_distance_reward, FeatureExtractor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectSearchConfig {
    pub episode_steps: usize,
    /// Provide the target crop's features to the policy.
    pub conditioning: bool,
    /// Field of view of the conditioning crop, degrees.
    pub target_fov_deg: f64,
}

impl Default for ObjectSearchConfig {
    fn default() -> Self {
        Self {
            episode_steps: 90,
            conditioning: false,
            target_fov_deg: 30.0,
        }
    }
}

/// Static-frame search for an annotated target, rewarded by truncated
/// angular distance at the coarsest pyramid field of view.
#[derive(Debug, Clone)]
pub struct ObjectSearchEnv {
    renderer: Arc<PyramidRenderer>,
    gimbal: GimbalConfig,
    cfg: ObjectSearchConfig,
    frame: Arc<EquirectPanorama>,
    frame_index: usize,
    target: TargetAnnotation,
    target_features: Vec<f64>,
    gaze: GazeState,
    steps: usize,
    done: bool,
}

impl ObjectSearchEnv {
    /// Samples an annotated episode, a frame where the target is visible and
    /// a random initial gaze.
    pub fn reset(
        episodes: &[Arc<DemoEpisode>],
        renderer: Arc<PyramidRenderer>,
        gimbal: GimbalConfig,
        cfg: ObjectSearchConfig,
        fx: &dyn FeatureExtractor,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Self, Observation)> {
        let candidates: Vec<&Arc<DemoEpisode>> = episodes
            .iter()
            .filter(|e| e.annotations.as_ref().is_some_and(|a| a.iter().any(|x| x.visible)))
            .collect();
        if candidates.is_empty() {
            return Err(Error::Env("object search needs episodes with visible target annotations".into()));
        }
        let ep = candidates[rng.gen_range(0..candidates.len())];
        let visible: Vec<usize> = (0..ep.len()).filter(|&t| ep.annotation(t).is_some_and(|a| a.visible)).collect();
        let t = visible[rng.gen_range(0..visible.len())];
        let target = ep.annotation(t).expect("filtered above");
        let gaze = GazeState::random_init(rng);
        Self::from_parts(ep.frame(t)?, t, target, gaze, renderer, gimbal, cfg, fx)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        frame: Arc<EquirectPanorama>,
        frame_index: usize,
        target: TargetAnnotation,
        gaze: GazeState,
        renderer: Arc<PyramidRenderer>,
        gimbal: GimbalConfig,
        cfg: ObjectSearchConfig,
        fx: &dyn FeatureExtractor,
    ) -> Result<(Self, Observation)> {
        gimbal.validate()?;
        let target_features = if cfg.conditioning {
            let r = renderer.config().resolution;
            let rays = CameraRays::new(cfg.target_fov_deg.to_radians(), r, renderer.config().projection)?;
            fx.extract(&rays.render(&frame, target.azimuth, target.elevation))
        } else {
            vec![0.0; fx.dim()]
        };
        let env = Self {
            renderer,
            gimbal,
            cfg,
            frame,
            frame_index,
            target,
            target_features,
            gaze,
            steps: 0,
            done: false,
        };
        let obs = env.observe();
        Ok((env, obs))
    }

    fn observe(&self) -> Observation {
        observation(
            self.renderer.render(&self.frame, &self.gaze),
            None,
            Some(self.target_features.clone()),
        )
    }

    pub fn gaze(&self) -> &GazeState {
        &self.gaze
    }

    pub fn target(&self) -> TargetAnnotation {
        self.target
    }

    pub fn info(&self) -> StepInfo {
        StepInfo {
            step: self.steps,
            frame_index: self.frame_index,
            target: Some((self.target.azimuth, self.target.elevation)),
        }
    }
}

impl EyeEnv for ObjectSearchEnv {
    fn step(&mut self, cmd: EyeCommand) -> Result<EnvStepResult> {
        if self.done {
            return Err(Error::Env("step called on a finished object-search episode".into()));
        }
        self.gaze = cmd.apply(&self.gaze, &self.gimbal)?;
        self.steps += 1;
        self.done = self.steps >= self.cfg.episode_steps;
        let fov = self.renderer.config().coarsest_fov();
        let reward = truncated_distance_reward(&self.gaze.direction(), &self.target.direction(), fov);
        Ok(EnvStepResult {
            observation: self.observe(),
            reward,
            done: self.done,
            info: self.info(),
        })
    }

    fn info(&self) -> StepInfo {
        ObjectSearchEnv::info(self)
    }
}
