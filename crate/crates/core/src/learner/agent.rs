use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{sample_categorical, softmax, Mlp};
use super::ppo::ActorCritic;
use crate::envs::{EyeCommand, EyePolicy, Observation, StepInfo};
use crate::error::{Error, Result};
use crate::rewards::FeatureExtractor;

/// Layout of the flat vector fed to the eye and hand networks.
///
/// Eye: per-level features, gaze direction, gaze velocity in step units, and
/// (if `target`) the conditioning features. Hand: per-level features, gaze
/// direction and proprioception.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputLayout {
    pub levels: usize,
    pub feature_dim: usize,
    pub target: bool,
    pub proprio: usize,
}

impl InputLayout {
    pub fn eye(levels: usize, feature_dim: usize, target: bool) -> Self {
        Self {
            levels,
            feature_dim,
            target,
            proprio: 0,
        }
    }

    pub fn hand(levels: usize, feature_dim: usize, proprio: usize) -> Self {
        Self {
            levels,
            feature_dim,
            target: false,
            proprio,
        }
    }

    pub fn dim(&self) -> usize {
        let eye_extra = if self.proprio == 0 { 2 } else { 0 };
        self.levels * self.feature_dim + 3 + eye_extra + if self.target { self.feature_dim } else { 0 } + self.proprio
    }

    pub fn build(&self, obs: &Observation, fx: &dyn FeatureExtractor, step_size: f64) -> Result<Vec<f64>> {
        if obs.pyramid.levels.len() != self.levels || fx.dim() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                context: "observation pyramid",
                expected: self.levels * self.feature_dim,
                actual: obs.pyramid.levels.len() * fx.dim(),
            });
        }
        let mut x = Vec::with_capacity(self.dim());
        for level in &obs.pyramid.levels {
            x.extend(fx.extract(level));
        }
        x.extend(obs.gaze);
        if self.proprio == 0 {
            let v = obs.pyramid.gaze.velocity;
            x.extend([v[0] / step_size, v[1] / step_size]);
        }
        if self.target {
            match &obs.target {
                Some(t) if t.len() == self.feature_dim => x.extend(t),
                Some(t) => {
                    return Err(Error::DimensionMismatch {
                        context: "target features",
                        expected: self.feature_dim,
                        actual: t.len(),
                    })
                }
                None => x.extend(std::iter::repeat(0.0).take(self.feature_dim)),
            }
        }
        if self.proprio > 0 {
            let p = obs
                .proprio
                .as_ref()
                .ok_or_else(|| Error::Env("hand input needs proprioception".into()))?;
            if p.len() != self.proprio {
                return Err(Error::DimensionMismatch {
                    context: "proprioception",
                    expected: self.proprio,
                    actual: p.len(),
                });
            }
            x.extend(p);
        }
        Ok(x)
    }
}

/// Eye policy backed by a trained actor. Actions are sampled from the
/// categorical head unless `greedy` is set.
#[derive(Clone)]
pub struct NeuralEyePolicy {
    pub actor: Mlp,
    pub layout: InputLayout,
    pub fx: Arc<dyn FeatureExtractor>,
    pub step_size: f64,
    pub greedy: bool,
}

impl NeuralEyePolicy {
    pub fn new(ac: &ActorCritic, layout: InputLayout, fx: Arc<dyn FeatureExtractor>, step_size: f64) -> Self {
        Self {
            actor: ac.actor.clone(),
            layout,
            fx,
            step_size,
            greedy: false,
        }
    }
}

impl EyePolicy for NeuralEyePolicy {
    fn act(&mut self, obs: &Observation, _: &StepInfo, rng: &mut ChaCha8Rng) -> Result<EyeCommand> {
        let x = self.layout.build(obs, self.fx.as_ref(), self.step_size)?;
        let p = softmax(&self.actor.predict(&x)?);
        let a = if self.greedy {
            (0..p.len()).fold(0, |best, k| if p[k] > p[best] { k } else { best })
        } else {
            sample_categorical(&p, rng)
        };
        Ok(EyeCommand::Move(a))
    }
}
