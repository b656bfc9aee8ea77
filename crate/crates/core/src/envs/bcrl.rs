//! Demonstration replay for joint eye/hand training.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::DemoEpisode;
use super::{observation, EnvStepResult, EyeCommand, Observation, StepInfo};
use crate::error::{Error, Result};
use crate::foveation::PyramidRenderer;
use crate::gimbal::{GazeState, GimbalConfig};
use crate::kinematics::{denormalize_actions, normalize_actions, DhChain, JointTrajectory};
use crate::panorama::EquirectPanorama;
use crate::rewards::bc_reward;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeSchedule {
    pub total_steps: usize,
    /// Leading steps during which the frame is frozen and nothing is scored.
    pub pause_steps: usize,
    /// Source frames advanced per step after the pause.
    pub frame_stride: usize,
    pub chunk_size: usize,
}

impl Default for EpisodeSchedule {
    fn default() -> Self {
        Self {
            total_steps: 130,
            pause_steps: 30,
            frame_stride: 2,
            chunk_size: 30,
        }
    }
}

impl EpisodeSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.pause_steps >= self.total_steps {
            return Err(Error::Config(format!(
                "schedule.pause_steps {} must be below total_steps {}",
                self.pause_steps, self.total_steps
            )));
        }
        if self.frame_stride == 0 || self.chunk_size == 0 {
            return Err(Error::Config("schedule.frame_stride and chunk_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Source frames reserved after the sampled start.
    pub fn buffer(&self) -> usize {
        let needed = (self.total_steps - 1 - self.pause_steps) * self.frame_stride + self.chunk_size;
        (self.total_steps * self.frame_stride).max(needed)
    }

    pub fn frame_offset(&self, step: usize) -> usize {
        step.saturating_sub(self.pause_steps) * self.frame_stride
    }

    pub fn supervised(&self, step: usize) -> bool {
        step >= self.pause_steps
    }
}

#[derive(Debug, Clone)]
pub struct BcrlEnv {
    renderer: Arc<PyramidRenderer>,
    gimbal: GimbalConfig,
    chain: Arc<DhChain>,
    schedule: EpisodeSchedule,
    episode: Arc<DemoEpisode>,
    start: usize,
    steps: usize,
    gaze: GazeState,
    frame: Arc<EquirectPanorama>,
    done: bool,
}

impl BcrlEnv {
    /// Picks a demonstration long enough for the schedule, a start index that
    /// leaves the full buffer, and a random initial gaze.
    pub fn reset(
        episodes: &[Arc<DemoEpisode>],
        renderer: Arc<PyramidRenderer>,
        gimbal: GimbalConfig,
        chain: Arc<DhChain>,
        schedule: EpisodeSchedule,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Self, Observation)> {
        schedule.validate()?;
        gimbal.validate()?;
        let buffer = schedule.buffer();
        let eligible: Vec<&Arc<DemoEpisode>> = episodes.iter().filter(|e| e.len() >= buffer).collect();
        if eligible.is_empty() {
            return Err(Error::Env(format!("no demonstration has the {buffer} frames the schedule needs")));
        }
        let episode = eligible[rng.gen_range(0..eligible.len())].clone();
        if episode.trajectory.joints() != chain.dof() {
            return Err(Error::dataset(
                &episode.id,
                "trajectory",
                format!("{} joints but chain `{}` has {}", episode.trajectory.joints(), chain.name, chain.dof()),
            ));
        }
        let start = rng.gen_range(0..=episode.len() - buffer);
        let gaze = GazeState::random_init(rng);
        let frame = episode.frame(start)?;
        let env = Self {
            renderer,
            gimbal,
            chain,
            schedule,
            episode,
            start,
            steps: 0,
            gaze,
            frame,
            done: false,
        };
        let obs = env.observe()?;
        Ok((env, obs))
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn gaze(&self) -> &GazeState {
        &self.gaze
    }

    pub fn episode(&self) -> &Arc<DemoEpisode> {
        &self.episode
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn frame_index(&self) -> usize {
        self.start + self.schedule.frame_offset(self.steps)
    }

    /// True when the current observation is scored and used for supervision.
    pub fn supervised(&self) -> bool {
        self.schedule.supervised(self.steps)
    }

    /// Demonstrated joint positions for the chunk starting at the current frame.
    pub fn gt_window(&self) -> JointTrajectory {
        self.episode.trajectory.window(self.frame_index(), self.schedule.chunk_size)
    }

    /// Same chunk mapped to `[-1, 1]` by the chain limits, flattened row-major.
    pub fn gt_chunk_normalized(&self) -> Result<Vec<f64>> {
        Ok(normalize_actions(&self.gt_window().positions, &self.chain.limits)?.concat())
    }

    fn proprio(&self) -> Result<Vec<f64>> {
        let f = self.frame_index();
        let q = &self.episode.trajectory.positions[f];
        let mut p = normalize_actions(std::slice::from_ref(q), &self.chain.limits)?.remove(0);
        p.push(self.episode.trajectory.gripper.as_ref().map_or(0.0, |g| g[f]));
        Ok(p)
    }

    fn observe(&self) -> Result<Observation> {
        Ok(observation(
            self.renderer.render(&self.frame, &self.gaze),
            Some(self.proprio()?),
            None,
        ))
    }

    pub fn info(&self) -> StepInfo {
        let f = self.frame_index();
        StepInfo {
            step: self.steps,
            frame_index: f,
            target: self.episode.annotation(f).map(|a| (a.azimuth, a.elevation)),
        }
    }

    /// Scores `prediction` (normalized, `chunk_size` rows, flattened) against
    /// the demonstration at the current frame, then moves the eye and the
    /// frame pointer. Paused steps score 0 and ignore the prediction.
    pub fn step(&mut self, cmd: EyeCommand, prediction: Option<&[f64]>) -> Result<EnvStepResult> {
        if self.done {
            return Err(Error::Env("step called on a finished BC-RL episode".into()));
        }
        let reward = if self.supervised() {
            let flat = prediction.ok_or_else(|| Error::Env("supervised step needs a prediction".into()))?;
            let dof = self.chain.dof();
            let expected = self.schedule.chunk_size * dof;
            if flat.len() != expected {
                return Err(Error::DimensionMismatch {
                    context: "predicted chunk",
                    expected,
                    actual: flat.len(),
                });
            }
            let rows: Vec<Vec<f64>> = flat.chunks(dof).map(<[f64]>::to_vec).collect();
            let predicted = JointTrajectory::new(denormalize_actions(&rows, &self.chain.limits)?, None)?;
            bc_reward(&self.chain, &predicted, &self.gt_window())?
        } else {
            0.0
        };
        if !reward.is_finite() {
            return Err(Error::NonFinite {
                stage: "bc reward",
                detail: format!("episode {} frame {}", self.episode.id, self.frame_index()),
            });
        }
        self.gaze = cmd.apply(&self.gaze, &self.gimbal)?;
        self.steps += 1;
        self.done = self.steps >= self.schedule.total_steps;
        self.frame = self.episode.frame(self.frame_index())?;
        Ok(EnvStepResult {
            observation: self.observe()?,
            reward,
            done: self.done,
            info: self.info(),
        })
    }
}
