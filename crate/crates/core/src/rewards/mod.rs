//! Reward families: truncated angular distance (object search), feature
//! similarity (scene search) and negative discrete Fréchet distance between
//! end-effector paths (BC-RL).

mod features;
mod frechet;

pub use features::{
    cosine_similarity, load_feature_vector, save_feature_vector, FeatureExtractor, ToyExtractor,
};
pub use frechet::discrete_frechet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{ee_path, DhChain, JointTrajectory};
use crate::panorama::{Direction, Raster};

/// Zero outside half the field of view, rising linearly to 1 on the optical axis.
pub fn truncated_distance_reward(gaze: &Direction, target: &Direction, fov: f64) -> f64 {
    let half = fov / 2.0;
    let alpha = gaze.angle_to(target);
    if alpha >= half {
        0.0
    } else {
        1.0 - alpha / half
    }
}

/// Cosine similarity between the extractor's view of `current` and `target_features`.
pub fn feature_similarity_reward(
    current: &Raster,
    target_features: &[f64],
    fx: &dyn FeatureExtractor,
) -> Result<f64> {
    if fx.dim() != target_features.len() {
        return Err(Error::DimensionMismatch {
            context: "target features",
            expected: fx.dim(),
            actual: target_features.len(),
        });
    }
    Ok(cosine_similarity(&fx.extract(current), target_features))
}

/// Negative discrete Fréchet distance between predicted and demonstrated
/// end-effector paths. The gripper channel does not enter the reward.
pub fn bc_reward(chain: &DhChain, predicted: &JointTrajectory, gt: &JointTrajectory) -> Result<f64> {
    if predicted.len() != gt.len() {
        return Err(Error::DimensionMismatch {
            context: "action chunk length",
            expected: gt.len(),
            actual: predicted.len(),
        });
    }
    let a = ee_path(chain, predicted)?;
    let b = ee_path(chain, gt)?;
    Ok(-discrete_frechet(&a, &b)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SearchReward {
    #[default]
    Distance,
    Similarity,
    /// Equal-weight sum of the distance reward and similarity mapped to `[0, 1]`.
    Combined,
}

impl SearchReward {
    pub fn combine(self, distance: f64, similarity: f64) -> f64 {
        match self {
            SearchReward::Distance => distance,
            SearchReward::Similarity => similarity,
            SearchReward::Combined => 0.5 * distance + 0.5 * (similarity + 1.0) / 2.0,
        }
    }
}
