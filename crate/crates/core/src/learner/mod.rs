//! Hand-written networks, optimizers and the training loops built on them.

mod agent;
pub mod bc;
mod bcrl;
pub mod mlp;
pub mod optim;
pub mod ppo;
mod search;

pub use agent::{InputLayout, NeuralEyePolicy};
pub use bc::{bc_update, l1, temporal_ensemble, BcConfig};
pub use bcrl::{BcrlSource, BcrlTrainConfig, BcrlTrainer, EyeMode};
pub use mlp::{Activation, Mlp, MlpSpec, OutputActivation};
pub use optim::{AdamWConfig, OptimState};
pub use ppo::{gae, normalize, ppo_update, ActorCritic, ActorCriticOptim, PpoConfig, PpoStats, RolloutBatch};
pub use search::{
    evaluate_object_search, EpisodeSource, ObjectSearchOutcome, ObjectSearchSource, SceneSearchSource,
    SearchTrainConfig, SearchTrainer,
};

use serde::{Deserialize, Serialize};

/// One line of a training metric stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub env_steps: u64,
    /// Mean per-step reward (BC-RL: over supervised steps only).
    pub reward_mean: f64,
    pub return_mean: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bc_loss: Option<f64>,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ppo: Option<PpoStats>,
}
