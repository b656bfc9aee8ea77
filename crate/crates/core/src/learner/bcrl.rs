//! Joint training: the eye is rewarded by how well the hand clones the demonstration.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::agent::InputLayout;
use super::bc::{bc_update, l1, BcConfig};
use super::mlp::{Activation, Mlp, MlpSpec, OutputActivation};
use super::optim::{AdamWConfig, OptimState};
use super::ppo::{ppo_update, ActorCritic, ActorCriticOptim, PpoConfig};
use super::search::{assemble_batch, ppo_steps_per_update, worker_seeds, EyeTrace};
use super::IterationMetrics;
use crate::checkpoint::{Checkpoint, RngState};
use crate::envs::{BcrlEnv, DemoEpisode, EpisodeSchedule, EyeCommand, Observation};
use crate::error::{Error, Result};
use crate::foveation::PyramidRenderer;
use crate::gimbal::{GimbalConfig, NUM_ACTIONS};
use crate::kinematics::DhChain;
use crate::rewards::FeatureExtractor;

/// Who drives the eye during joint training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EyeMode {
    /// PPO on the cloning reward.
    Learned,
    /// Fixates the annotated target every step; never updated.
    Oracle,
    /// Uniformly random actions; never updated.
    RandomFrozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcrlTrainConfig {
    pub num_envs: usize,
    pub eye_hidden: Vec<usize>,
    pub bc_hidden: Vec<usize>,
    pub activation: Activation,
    pub eye_optim: AdamWConfig,
    pub bc_optim: AdamWConfig,
    pub ppo: PpoConfig,
    pub bc: BcConfig,
    pub schedule: EpisodeSchedule,
}

impl Default for BcrlTrainConfig {
    fn default() -> Self {
        Self {
            num_envs: 16,
            eye_hidden: vec![64, 64],
            bc_hidden: vec![128],
            activation: Activation::Tanh,
            eye_optim: AdamWConfig::with_lr(5e-4),
            bc_optim: AdamWConfig::with_lr(1e-3),
            ppo: PpoConfig::default(),
            bc: BcConfig::default(),
            schedule: EpisodeSchedule::default(),
        }
    }
}

impl BcrlTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_envs == 0 {
            return Err(Error::Config("num_envs must be >= 1".into()));
        }
        self.ppo.validate()?;
        self.schedule.validate()
    }
}

/// Everything a worker needs to start an episode.
pub struct BcrlSource {
    pub episodes: Vec<Arc<DemoEpisode>>,
    pub renderer: Arc<PyramidRenderer>,
    pub gimbal: GimbalConfig,
    pub chain: Arc<DhChain>,
    pub fx: Arc<dyn FeatureExtractor>,
}

struct EpisodeOutcome {
    trace: EyeTrace,
    hand_inputs: Vec<Vec<f64>>,
    hand_targets: Vec<Vec<f64>>,
    supervised_reward: f64,
    supervised_steps: usize,
    l1_sum: f64,
}

pub struct BcrlTrainer {
    pub cfg: BcrlTrainConfig,
    pub mode: EyeMode,
    pub eye_layout: InputLayout,
    pub hand_layout: InputLayout,
    pub eye: ActorCritic,
    pub eye_opt: ActorCriticOptim,
    pub bc: Mlp,
    pub bc_opt: OptimState,
    rng: ChaCha8Rng,
    pub iteration: u64,
    pub env_steps: u64,
}

impl BcrlTrainer {
    pub fn new(
        cfg: BcrlTrainConfig,
        mode: EyeMode,
        source: &BcrlSource,
        budget_steps: u64,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let levels = source.renderer.config().levels;
        let fdim = source.fx.dim();
        let eye_layout = InputLayout::eye(levels, fdim, false);
        let hand_layout = InputLayout::hand(levels, fdim, source.chain.dof() + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eye = ActorCritic::new(eye_layout.dim(), &cfg.eye_hidden, cfg.activation, cfg.ppo.value_scale, &mut rng)?;
        let bc = Mlp::init(
            MlpSpec {
                input: hand_layout.dim(),
                hidden: cfg.bc_hidden.clone(),
                output: cfg.schedule.chunk_size * source.chain.dof(),
                activation: cfg.activation,
                output_activation: OutputActivation::Tanh,
            },
            1.0,
            &mut rng,
        )?;
        let per_iter = cfg.num_envs * cfg.schedule.total_steps;
        let iterations = budget_steps.div_ceil(per_iter as u64);
        let supervised = cfg.num_envs * (cfg.schedule.total_steps - cfg.schedule.pause_steps);
        let eye_opt = ActorCriticOptim::new(
            AdamWConfig {
                horizon: iterations * ppo_steps_per_update(per_iter, &cfg.ppo),
                ..cfg.eye_optim
            },
            &eye,
        );
        let bc_steps = (cfg.bc.epochs * supervised.div_ceil(cfg.bc.minibatch.max(1))) as u64;
        let bc_opt = OptimState::new(
            AdamWConfig {
                horizon: iterations * bc_steps,
                ..cfg.bc_optim
            },
            bc.params.len(),
        );
        Ok(Self {
            cfg,
            mode,
            eye_layout,
            hand_layout,
            eye,
            eye_opt,
            bc,
            bc_opt,
            rng,
            iteration: 0,
            env_steps: 0,
        })
    }

    /// Starts the eye from a network trained elsewhere (object-search pretraining).
    pub fn set_eye(&mut self, eye: ActorCritic) -> Result<()> {
        if eye.input_dim() != self.eye_layout.dim() || eye.actor.spec.hidden != self.cfg.eye_hidden {
            return Err(Error::Config(format!(
                "pretrained eye {:?} does not match input {} and hidden {:?}",
                eye.actor.spec,
                self.eye_layout.dim(),
                self.cfg.eye_hidden
            )));
        }
        self.eye_opt = ActorCriticOptim::new(self.eye_opt.actor.cfg, &eye);
        self.eye = eye;
        Ok(())
    }

    fn run_episode(&self, source: &BcrlSource, rng: &mut ChaCha8Rng) -> Result<EpisodeOutcome> {
        let (mut env, mut obs) = BcrlEnv::reset(
            &source.episodes,
            source.renderer.clone(),
            source.gimbal,
            source.chain.clone(),
            self.cfg.schedule,
            rng,
        )?;
        let step_size = source.gimbal.step_size;
        let mut out = EpisodeOutcome {
            trace: EyeTrace::default(),
            hand_inputs: Vec::new(),
            hand_targets: Vec::new(),
            supervised_reward: 0.0,
            supervised_steps: 0,
            l1_sum: 0.0,
        };
        loop {
            let cmd = self.eye_command(&env, &obs, source, step_size, &mut out.trace, rng)?;
            let prediction = if env.supervised() {
                let x = self.hand_layout.build(&obs, source.fx.as_ref(), step_size)?;
                let pred = self.bc.predict(&x)?;
                let gt = env.gt_chunk_normalized()?;
                out.l1_sum += l1(&pred, &gt);
                out.hand_inputs.push(x);
                out.hand_targets.push(gt);
                Some(pred)
            } else {
                None
            };
            let supervised = prediction.is_some();
            let r = env.step(cmd, prediction.as_deref())?;
            if supervised {
                out.supervised_reward += r.reward;
                out.supervised_steps += 1;
            }
            if self.mode == EyeMode::Learned {
                out.trace.record(r.reward, r.done);
            }
            obs = r.observation;
            if r.done {
                return Ok(out);
            }
        }
    }

    fn eye_command(
        &self,
        env: &BcrlEnv,
        obs: &Observation,
        source: &BcrlSource,
        step_size: f64,
        trace: &mut EyeTrace,
        rng: &mut ChaCha8Rng,
    ) -> Result<EyeCommand> {
        Ok(match self.mode {
            EyeMode::Learned => {
                let x = self.eye_layout.build(obs, source.fx.as_ref(), step_size)?;
                let time_left = 1.0 - env.steps() as f64 / self.cfg.schedule.total_steps as f64;
                EyeCommand::Move(trace.act(&self.eye, x, time_left, rng)?)
            }
            EyeMode::Oracle => match env.info().target {
                Some((azimuth, elevation)) => EyeCommand::Fixate { azimuth, elevation },
                None => EyeCommand::Move(crate::gimbal::STAY),
            },
            EyeMode::RandomFrozen => EyeCommand::Move(rng.gen_range(0..NUM_ACTIONS)),
        })
    }

    /// Rolls every worker for one episode with a snapshot of both networks,
    /// then updates the eye (learned mode only) and the hand from that data.
    pub fn iterate(&mut self, source: &BcrlSource, pool: &rayon::ThreadPool) -> Result<IterationMetrics> {
        let seeds = worker_seeds(&mut self.rng, self.cfg.num_envs);
        let this = &*self;
        let outcomes: Vec<EpisodeOutcome> = pool.install(|| {
            seeds
                .par_iter()
                .map(|&s| this.run_episode(source, &mut ChaCha8Rng::seed_from_u64(s)))
                .collect::<Result<_>>()
        })?;
        let steps = outcomes.len() * self.cfg.schedule.total_steps;
        let sup_steps: usize = outcomes.iter().map(|o| o.supervised_steps).sum();
        let reward_mean = outcomes.iter().map(|o| o.supervised_reward).sum::<f64>() / sup_steps.max(1) as f64;
        let return_mean = outcomes.iter().map(|o| o.supervised_reward).sum::<f64>() / outcomes.len() as f64;
        let mut inputs = Vec::with_capacity(sup_steps);
        let mut targets = Vec::with_capacity(sup_steps);
        let mut traces = Vec::with_capacity(outcomes.len());
        for o in outcomes {
            inputs.extend(o.hand_inputs);
            targets.extend(o.hand_targets);
            traces.push(o.trace);
        }
        let lr = self.eye_opt.actor.current_lr();
        let ppo = if self.mode == EyeMode::Learned {
            let batch = assemble_batch(traces, &self.cfg.ppo)?;
            Some(ppo_update(&mut self.eye, &batch, &self.cfg.ppo, &mut self.eye_opt, &mut self.rng)?)
        } else {
            None
        };
        let bc_loss = bc_update(&mut self.bc, &inputs, &targets, &self.cfg.bc, &mut self.bc_opt, &mut self.rng)?;
        self.iteration += 1;
        self.env_steps += steps as u64;
        Ok(IterationMetrics {
            iteration: self.iteration,
            env_steps: self.env_steps,
            reward_mean,
            return_mean,
            bc_loss: Some(bc_loss),
            lr,
            ppo,
        })
    }

    /// Mean L1 between hand predictions and demonstrated chunks over the
    /// supervised steps of `episodes` rollouts, each seeded from `seed + i`.
    /// Parameters are not touched.
    pub fn evaluate_bc(&self, source: &BcrlSource, episodes: usize, seed: u64) -> Result<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..episodes {
            let o = self.run_episode(source, &mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64)))?;
            sum += o.l1_sum;
            count += o.supervised_steps;
        }
        Ok(sum / count.max(1) as f64)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new("bcrl", self.iteration, self.env_steps, RngState::capture(&self.rng));
        c.add_net("actor", &self.eye.actor);
        c.add_net("critic", &self.eye.critic);
        c.add_net("bc", &self.bc);
        c.add_optim("actor", &self.eye_opt.actor);
        c.add_optim("critic", &self.eye_opt.critic);
        c.add_optim("bc", &self.bc_opt);
        c
    }

    pub fn restore(&mut self, c: &Checkpoint) -> Result<()> {
        c.expect_kind("bcrl")?;
        c.load_net("actor", &mut self.eye.actor)?;
        c.load_net("critic", &mut self.eye.critic)?;
        c.load_net("bc", &mut self.bc)?;
        c.load_optim("actor", &mut self.eye_opt.actor)?;
        c.load_optim("critic", &mut self.eye_opt.critic)?;
        c.load_optim("bc", &mut self.bc_opt)?;
        self.rng = c.rng.restore();
        self.iteration = c.iteration;
        self.env_steps = c.env_steps;
        Ok(())
    }
}
