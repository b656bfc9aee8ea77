//! PPO training of the eye on object- and scene-search episodes.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::agent::InputLayout;
use super::mlp::{log_softmax, sample_categorical, softmax, Activation};
use super::optim::AdamWConfig;
use super::ppo::{gae, ppo_update, ActorCritic, ActorCriticOptim, PpoConfig, RolloutBatch};
use super::IterationMetrics;
use crate::checkpoint::{Checkpoint, RngState};
use crate::envs::{
    DemoEpisode, EyeCommand, EyeEnv, Observation, ObjectSearchConfig, ObjectSearchEnv, SceneSearchConfig,
    SceneSearchEnv,
};
use crate::error::{Error, Result};
use crate::foveation::PyramidRenderer;
use crate::gimbal::GimbalConfig;
use crate::panorama::EquirectPanorama;
use crate::rewards::FeatureExtractor;

/// Produces fresh episodes for rollout workers.
pub trait EpisodeSource: Sync {
    fn episode_steps(&self) -> usize;
    fn reset(&self, rng: &mut ChaCha8Rng) -> Result<(Box<dyn EyeEnv>, Observation)>;
}

pub struct ObjectSearchSource {
    pub episodes: Vec<Arc<DemoEpisode>>,
    pub renderer: Arc<PyramidRenderer>,
    pub gimbal: GimbalConfig,
    pub cfg: ObjectSearchConfig,
    pub fx: Arc<dyn FeatureExtractor>,
}

impl EpisodeSource for ObjectSearchSource {
    fn episode_steps(&self) -> usize {
        self.cfg.episode_steps
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> Result<(Box<dyn EyeEnv>, Observation)> {
        let (env, obs) = ObjectSearchEnv::reset(
            &self.episodes,
            self.renderer.clone(),
            self.gimbal,
            self.cfg,
            self.fx.as_ref(),
            rng,
        )?;
        Ok((Box::new(env), obs))
    }
}

pub struct SceneSearchSource {
    pub images: Vec<Arc<EquirectPanorama>>,
    pub renderer: Arc<PyramidRenderer>,
    pub gimbal: GimbalConfig,
    pub cfg: SceneSearchConfig,
    pub fx: Arc<dyn FeatureExtractor>,
}

impl EpisodeSource for SceneSearchSource {
    fn episode_steps(&self) -> usize {
        self.cfg.episode_steps
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> Result<(Box<dyn EyeEnv>, Observation)> {
        let (env, obs) = SceneSearchEnv::reset(
            &self.images,
            self.renderer.clone(),
            self.gimbal,
            self.cfg,
            self.fx.clone(),
            rng,
        )?;
        Ok((Box::new(env), obs))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchTrainConfig {
    pub num_envs: usize,
    /// Complete episodes each environment runs per iteration.
    pub episodes_per_env: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub optim: AdamWConfig,
    pub ppo: PpoConfig,
}

impl Default for SearchTrainConfig {
    fn default() -> Self {
        Self {
            num_envs: 16,
            episodes_per_env: 1,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            optim: AdamWConfig::with_lr(5e-4),
            ppo: PpoConfig::default(),
        }
    }
}

impl SearchTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_envs == 0 || self.episodes_per_env == 0 {
            return Err(Error::Config("num_envs and episodes_per_env must be >= 1".into()));
        }
        self.ppo.validate()
    }
}

/// Transitions of one worker, in time order.
#[derive(Debug, Clone, Default)]
pub(crate) struct EyeTrace {
    pub inputs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub time_left: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

impl EyeTrace {
    /// Samples an action for `x`, recording everything PPO needs except the reward.
    pub fn act(&mut self, ac: &ActorCritic, x: Vec<f64>, time_left: f64, rng: &mut ChaCha8Rng) -> Result<usize> {
        let logits = ac.actor.predict(&x)?;
        let a = sample_categorical(&softmax(&logits), rng);
        self.log_probs.push(log_softmax(&logits)[a]);
        self.values.push(ac.value(&x, time_left)?);
        self.time_left.push(time_left);
        self.inputs.push(x);
        self.actions.push(a);
        Ok(a)
    }

    pub fn record(&mut self, reward: f64, done: bool) {
        self.rewards.push(reward);
        self.dones.push(done);
    }
}

/// Runs GAE per worker and concatenates the results in worker order.
pub(crate) fn assemble_batch(traces: Vec<EyeTrace>, ppo: &PpoConfig) -> Result<RolloutBatch> {
    let mut batch = RolloutBatch::default();
    for t in traces {
        let (adv, ret) = gae(&t.rewards, &t.values, &t.dones, ppo.gamma, ppo.lambda)?;
        batch.inputs.extend(t.inputs);
        batch.actions.extend(t.actions);
        batch.log_probs.extend(t.log_probs);
        batch.time_left.extend(t.time_left);
        batch.advantages.extend(adv);
        batch.returns.extend(ret);
    }
    Ok(batch)
}

/// Optimizer steps one PPO update takes on `batch` transitions.
pub(crate) fn ppo_steps_per_update(batch: usize, ppo: &PpoConfig) -> u64 {
    (ppo.epochs * batch.div_ceil(ppo.minibatch)) as u64
}

/// One draw per worker from the master generator.
pub(crate) fn worker_seeds(rng: &mut ChaCha8Rng, n: usize) -> Vec<u64> {
    (0..n).map(|_| rng.gen()).collect()
}

pub struct SearchTrainer {
    pub cfg: SearchTrainConfig,
    pub layout: InputLayout,
    pub step_size: f64,
    pub ac: ActorCritic,
    pub opt: ActorCriticOptim,
    rng: ChaCha8Rng,
    pub iteration: u64,
    pub env_steps: u64,
}

impl SearchTrainer {
    /// `episode_steps` and `budget_steps` size the learning-rate horizon.
    pub fn new(
        cfg: SearchTrainConfig,
        layout: InputLayout,
        step_size: f64,
        episode_steps: usize,
        budget_steps: u64,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ac = ActorCritic::new(layout.dim(), &cfg.hidden, cfg.activation, cfg.ppo.value_scale, &mut rng)?;
        let per_iter = cfg.num_envs * cfg.episodes_per_env * episode_steps;
        let iterations = budget_steps.div_ceil(per_iter.max(1) as u64);
        let optim = AdamWConfig {
            horizon: iterations * ppo_steps_per_update(per_iter, &cfg.ppo),
            ..cfg.optim
        };
        let opt = ActorCriticOptim::new(optim, &ac);
        Ok(Self {
            cfg,
            layout,
            step_size,
            ac,
            opt,
            rng,
            iteration: 0,
            env_steps: 0,
        })
    }

    /// Collects one batch with the current parameters and applies one PPO update.
    pub fn iterate(
        &mut self,
        source: &dyn EpisodeSource,
        fx: &dyn FeatureExtractor,
        pool: &rayon::ThreadPool,
    ) -> Result<IterationMetrics> {
        let seeds = worker_seeds(&mut self.rng, self.cfg.num_envs);
        let ac = &self.ac;
        let (layout, step_size, episodes) = (self.layout, self.step_size, self.cfg.episodes_per_env);
        let horizon = source.episode_steps().max(1) as f64;
        let results: Vec<(EyeTrace, Vec<f64>)> = pool.install(|| {
            seeds
                .par_iter()
                .map(|&s| {
                    let mut rng = ChaCha8Rng::seed_from_u64(s);
                    let mut trace = EyeTrace::default();
                    let mut returns = Vec::with_capacity(episodes);
                    for _ in 0..episodes {
                        let (mut env, mut obs) = source.reset(&mut rng)?;
                        let mut ret = 0.0;
                        let mut t = 0.0;
                        loop {
                            let x = layout.build(&obs, fx, step_size)?;
                            let a = trace.act(ac, x, 1.0 - t / horizon, &mut rng)?;
                            t += 1.0;
                            let r = env.step(EyeCommand::Move(a))?;
                            trace.record(r.reward, r.done);
                            ret += r.reward;
                            obs = r.observation;
                            if r.done {
                                break;
                            }
                        }
                        returns.push(ret);
                    }
                    Ok((trace, returns))
                })
                .collect::<Result<_>>()
        })?;
        let steps: usize = results.iter().map(|(t, _)| t.rewards.len()).sum();
        let reward_sum: f64 = results.iter().flat_map(|(t, _)| &t.rewards).sum();
        let returns: Vec<f64> = results.iter().flat_map(|(_, r)| r.iter().copied()).collect();
        let traces = results.into_iter().map(|(t, _)| t).collect();
        let batch = assemble_batch(traces, &self.cfg.ppo)?;
        let lr = self.opt.actor.current_lr();
        let stats = ppo_update(&mut self.ac, &batch, &self.cfg.ppo, &mut self.opt, &mut self.rng)?;
        self.iteration += 1;
        self.env_steps += steps as u64;
        Ok(IterationMetrics {
            iteration: self.iteration,
            env_steps: self.env_steps,
            reward_mean: reward_sum / steps as f64,
            return_mean: returns.iter().sum::<f64>() / returns.len() as f64,
            bc_loss: None,
            lr,
            ppo: Some(stats),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new("search", self.iteration, self.env_steps, RngState::capture(&self.rng));
        c.add_net("actor", &self.ac.actor);
        c.add_net("critic", &self.ac.critic);
        c.add_optim("actor", &self.opt.actor);
        c.add_optim("critic", &self.opt.critic);
        c
    }

    /// Restores parameters, optimizer moments, counters and the generator.
    pub fn restore(&mut self, c: &Checkpoint) -> Result<()> {
        c.expect_kind("search")?;
        c.load_net("actor", &mut self.ac.actor)?;
        c.load_net("critic", &mut self.ac.critic)?;
        c.load_optim("actor", &mut self.opt.actor)?;
        c.load_optim("critic", &mut self.opt.critic)?;
        self.rng = c.rng.restore();
        self.iteration = c.iteration;
        self.env_steps = c.env_steps;
        Ok(())
    }
}

/// Outcome of one held-out object-search episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectSearchOutcome {
    pub success: bool,
    /// First step at which the gaze came within tolerance.
    pub hit_step: Option<usize>,
    pub min_error: f64,
    pub final_error: f64,
}

/// Runs `n` episodes with `policy`, each seeded from `seed + i`, counting an
/// episode as solved when the gaze comes within `tolerance` of the target at
/// any step.
pub fn evaluate_object_search(
    policy: &mut dyn crate::envs::EyePolicy,
    source: &ObjectSearchSource,
    n: usize,
    tolerance: f64,
    seed: u64,
) -> Result<Vec<ObjectSearchOutcome>> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let (mut env, mut obs) = ObjectSearchEnv::reset(
                &source.episodes,
                source.renderer.clone(),
                source.gimbal,
                source.cfg,
                source.fx.as_ref(),
                &mut rng,
            )?;
            let target = env.target().direction();
            let mut min_error = env.gaze().direction().angle_to(&target);
            let mut hit_step = (min_error <= tolerance).then_some(0);
            let mut final_error;
            loop {
                let info = env.info();
                let cmd = policy.act(&obs, &info, &mut rng)?;
                let r = EyeEnv::step(&mut env, cmd)?;
                final_error = env.gaze().direction().angle_to(&target);
                min_error = min_error.min(final_error);
                if hit_step.is_none() && final_error <= tolerance {
                    hit_step = Some(r.info.step);
                }
                obs = r.observation;
                if r.done {
                    break;
                }
            }
            Ok(ObjectSearchOutcome {
                success: hit_step.is_some(),
                hit_step,
                min_error,
                final_error,
            })
        })
        .collect()
}

