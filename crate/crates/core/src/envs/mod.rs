//! Episode mechanics for the gaze environments and demonstration ingestion.

mod bcrl;
mod dataset;
mod scene;
mod search;
mod synth;

pub use bcrl::{BcrlEnv, EpisodeSchedule};
pub use dataset::{load_dataset, Dataset, DemoEpisode, TargetAnnotation};
pub use scene::{
    run_scene_search_eval, s_pattern, SceneEvalConfig, SceneEvalMetrics, SceneEvalRecord,
    SceneSearchConfig, SceneSearchEnv,
};
pub use search::{ObjectSearchConfig, ObjectSearchEnv};
pub use synth::{generate_synthetic_dataset, synth_episodes, synth_panorama, synth_trajectory, SynthSpec};

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::foveation::ObservationPyramid;
use crate::gimbal::{GazeState, GimbalConfig};

/// What an environment hands to a policy after reset or step.
#[derive(Debug, Clone)]
pub struct Observation {
    pub pyramid: ObservationPyramid,
    /// Unit gaze direction.
    pub gaze: [f64; 3],
    /// Normalized joint positions followed by the gripper, for the hand policy.
    pub proprio: Option<Vec<f64>>,
    /// Target conditioning features; all zeros when conditioning is off.
    pub target: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepInfo {
    pub step: usize,
    pub frame_index: usize,
    /// Annotated target bearing `(azimuth, elevation)` when known.
    pub target: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct EnvStepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// A discrete gimbal action, or a direct jump used by scripted baselines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EyeCommand {
    Move(usize),
    Fixate { azimuth: f64, elevation: f64 },
}

impl EyeCommand {
    pub fn apply(self, gaze: &GazeState, c: &GimbalConfig) -> Result<GazeState> {
        match self {
            EyeCommand::Move(a) => gaze.step(a, c),
            EyeCommand::Fixate { azimuth, elevation } => Ok(GazeState::at(
                azimuth,
                elevation.clamp(-c.elev_limit, c.elev_limit),
            )),
        }
    }
}

/// Single-threaded episode driven by eye commands.
pub trait EyeEnv: Send {
    fn step(&mut self, cmd: EyeCommand) -> Result<EnvStepResult>;
    fn info(&self) -> StepInfo;
}

/// Anything that can steer the eye from observations.
pub trait EyePolicy {
    fn act(&mut self, obs: &Observation, info: &StepInfo, rng: &mut ChaCha8Rng) -> Result<EyeCommand>;
}

/// Uniform over the nine discrete actions.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl EyePolicy for RandomPolicy {
    fn act(&mut self, _: &Observation, _: &StepInfo, rng: &mut ChaCha8Rng) -> Result<EyeCommand> {
        use rand::Rng;
        Ok(EyeCommand::Move(rng.gen_range(0..crate::gimbal::NUM_ACTIONS)))
    }
}

/// Jumps straight to the annotated target; stays put when none is known.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePolicy;

impl EyePolicy for OraclePolicy {
    fn act(&mut self, _: &Observation, info: &StepInfo, _: &mut ChaCha8Rng) -> Result<EyeCommand> {
        Ok(match info.target {
            Some((azimuth, elevation)) => EyeCommand::Fixate { azimuth, elevation },
            None => EyeCommand::Move(crate::gimbal::STAY),
        })
    }
}

pub(crate) fn observation(
    pyramid: ObservationPyramid,
    proprio: Option<Vec<f64>>,
    target: Option<Vec<f64>>,
) -> Observation {
    let gaze = pyramid.gaze.direction().to_array();
    Observation {
        pyramid,
        gaze,
        proprio,
        target,
    }
}
