use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{entropy, log_softmax, softmax, Activation, Mlp, MlpSpec, OutputActivation};
use super::optim::{clip_grad_norm, AdamWConfig, OptimState};
use crate::error::{Error, Result};
use crate::gimbal::NUM_ACTIONS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub epochs: usize,
    pub minibatch: usize,
    /// The critic regresses `return / value_scale`.
    pub value_scale: f64,
    /// Gradient-norm cap applied to actor and critic separately; `None` disables it.
    pub max_grad_norm: Option<f64>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            entropy_coef: 0.01,
            value_coef: 0.5,
            epochs: 4,
            minibatch: 256,
            value_scale: 10.0,
            max_grad_norm: Some(0.5),
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::Config(format!("ppo.clip {} outside (0, 1)", self.clip)));
        }
        for (name, v) in [("gamma", self.gamma), ("lambda", self.lambda)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("ppo.{name} {v} outside (0, 1]")));
            }
        }
        if self.epochs == 0 || self.minibatch == 0 {
            return Err(Error::Config("ppo.epochs and ppo.minibatch must be >= 1".into()));
        }
        if !(self.value_scale > 0.0 && self.value_scale.is_finite()) {
            return Err(Error::Config(format!("ppo.value_scale {} must be > 0", self.value_scale)));
        }
        Ok(())
    }
}

/// Generalized advantage estimation over a flat sequence of transitions.
/// `dones[t]` marks the last transition of an episode; nothing is
/// bootstrapped past it, nor past the end of the sequence.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::DimensionMismatch {
            context: "gae inputs",
            expected: n,
            actual: if values.len() != n { values.len() } else { dones.len() },
        });
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let (next_value, carry) = if dones[t] || t + 1 == n {
            (0.0, 0.0)
        } else {
            (values[t + 1], running)
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * carry;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shift to zero mean and scale to unit variance (left unscaled when flat).
pub fn normalize(xs: &[f64]) -> Vec<f64> {
    if xs.is_empty() {
        return Vec::new();
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd < 1e-12 {
        xs.iter().map(|x| x - mean).collect()
    } else {
        xs.iter().map(|x| (x - mean) / sd).collect()
    }
}

/// Separate policy (9 logits) and value (1 output) networks. The critic also
/// sees the fraction of the episode still to run.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub actor: Mlp,
    pub critic: Mlp,
    pub value_scale: f64,
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        activation: Activation,
        value_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = |output| MlpSpec {
            input,
            hidden: hidden.to_vec(),
            output,
            activation,
            output_activation: OutputActivation::Identity,
        };
        Ok(Self {
            actor: Mlp::init(spec(NUM_ACTIONS), 0.01, rng)?,
            critic: Mlp::init(
                MlpSpec {
                    input: input + 1,
                    ..spec(1)
                },
                1.0,
                rng,
            )?,
            value_scale,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.actor.spec.input
    }

    pub fn probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.actor.predict(x)?))
    }

    pub fn value(&self, x: &[f64], time_left: f64) -> Result<f64> {
        Ok(self.critic.predict(&critic_input(x, time_left))?[0] * self.value_scale)
    }
}

fn critic_input(x: &[f64], time_left: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(x.len() + 1);
    v.extend_from_slice(x);
    v.push(time_left);
    v
}

#[derive(Debug, Clone)]
pub struct ActorCriticOptim {
    pub actor: OptimState,
    pub critic: OptimState,
}

impl ActorCriticOptim {
    pub fn new(cfg: AdamWConfig, ac: &ActorCritic) -> Self {
        Self {
            actor: OptimState::new(cfg, ac.actor.params.len()),
            critic: OptimState::new(cfg, ac.critic.params.len()),
        }
    }
}

/// Transitions gathered under the sampling policy, with advantages attached.
#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    pub inputs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    /// Remaining fraction of the episode at each observation, for the critic.
    pub time_left: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.actions.len();
        for (what, len) in [
            ("inputs", self.inputs.len()),
            ("log_probs", self.log_probs.len()),
            ("time_left", self.time_left.len()),
            ("advantages", self.advantages.len()),
            ("returns", self.returns.len()),
        ] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    context: match what {
                        "inputs" => "rollout inputs",
                        "log_probs" => "rollout log_probs",
                        "time_left" => "rollout time_left",
                        "advantages" => "rollout advantages",
                        _ => "rollout returns",
                    },
                    expected: n,
                    actual: len,
                });
            }
        }
        if let Some(&a) = self.actions.iter().find(|&&a| a >= NUM_ACTIONS) {
            return Err(Error::InvalidAction(a));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Clipped-surrogate update. Advantages are normalized over the whole batch,
/// then `epochs` passes of shuffled minibatches each take one optimizer step
/// on `policy + value_coef * value - entropy_coef * entropy`.
pub fn ppo_update<R: Rng + ?Sized>(
    ac: &mut ActorCritic,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    opt: &mut ActorCriticOptim,
    rng: &mut R,
) -> Result<PpoStats> {
    cfg.validate()?;
    batch.validate()?;
    if batch.is_empty() {
        return Ok(PpoStats::default());
    }
    let adv = normalize(&batch.advantages);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut totals = PpoStats::default();
    let mut count = 0.0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for idx in order.chunks(cfg.minibatch) {
            let s = minibatch_step(ac, batch, &adv, idx, cfg, opt)?;
            totals.policy_loss += s.policy_loss;
            totals.value_loss += s.value_loss;
            totals.entropy += s.entropy;
            totals.approx_kl += s.approx_kl;
            totals.clip_fraction += s.clip_fraction;
            count += 1.0;
        }
    }
    Ok(PpoStats {
        policy_loss: totals.policy_loss / count,
        value_loss: totals.value_loss / count,
        entropy: totals.entropy / count,
        approx_kl: totals.approx_kl / count,
        clip_fraction: totals.clip_fraction / count,
    })
}

fn minibatch_step(
    ac: &mut ActorCritic,
    batch: &RolloutBatch,
    adv: &[f64],
    idx: &[usize],
    cfg: &PpoConfig,
    opt: &mut ActorCriticOptim,
) -> Result<PpoStats> {
    let b = idx.len() as f64;
    let mut ga = vec![0.0; ac.actor.params.len()];
    let mut gc = vec![0.0; ac.critic.params.len()];
    let mut st = PpoStats::default();
    for &i in idx {
        let x = &batch.inputs[i];
        let a = batch.actions[i];
        let cache = ac.actor.forward(x)?;
        let logits = cache.output();
        let logp = log_softmax(logits);
        let p = softmax(logits);
        let h = entropy(&p);
        let ratio = (logp[a] - batch.log_probs[i]).exp();
        let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
        let surr = (ratio * adv[i]).min(clipped * adv[i]);
        // the unclipped branch carries the gradient unless clipping is active
        let active = !((adv[i] >= 0.0 && ratio > 1.0 + cfg.clip) || (adv[i] < 0.0 && ratio < 1.0 - cfg.clip));
        let dsurr_dlogp = if active { ratio * adv[i] } else { 0.0 };
        let grad_logits: Vec<f64> = (0..p.len())
            .map(|k| {
                let onehot = f64::from(u8::from(k == a));
                let d_policy = -dsurr_dlogp * (onehot - p[k]);
                // dH/dz_k = -p_k (ln p_k + H)
                let dh = -p[k] * (logp[k] + h);
                (d_policy - cfg.entropy_coef * dh) / b
            })
            .collect();
        ac.actor.backward(&cache, &grad_logits, &mut ga)?;

        let vcache = ac.critic.forward(&critic_input(x, batch.time_left[i]))?;
        let err = vcache.output()[0] - batch.returns[i] / ac.value_scale;
        ac.critic.backward(&vcache, &[cfg.value_coef * 2.0 * err / b], &mut gc)?;

        st.policy_loss -= surr / b;
        st.value_loss += err * err / b;
        st.entropy += h / b;
        st.approx_kl += ((ratio - 1.0) - ratio.ln()) / b;
        st.clip_fraction += f64::from(u8::from((ratio - 1.0).abs() > cfg.clip)) / b;
    }
    let loss = st.policy_loss + cfg.value_coef * st.value_loss - cfg.entropy_coef * st.entropy;
    if !loss.is_finite() || ga.iter().chain(&gc).any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            stage: "ppo loss",
            detail: format!(
                "policy {} value {} entropy {} over {} samples",
                st.policy_loss,
                st.value_loss,
                st.entropy,
                idx.len()
            ),
        });
    }
    if let Some(max) = cfg.max_grad_norm {
        clip_grad_norm(&mut [&mut ga], max);
        clip_grad_norm(&mut [&mut gc], max);
    }
    opt.actor.update(&mut ac.actor.params, &ga)?;
    opt.critic.update(&mut ac.critic.params, &gc)?;
    Ok(st)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lambda_zero_is_one_step_td() {
        let r = [1.0, 0.5, -0.2, 2.0];
        let v = [0.3, 0.1, 0.7, -0.4];
        let d = [false, false, true, false];
        let (adv, ret) = gae(&r, &v, &d, 0.9, 0.0).unwrap();
        let expect = [1.0 + 0.9 * 0.1 - 0.3, 0.5 + 0.9 * 0.7 - 0.1, -0.2 - 0.7, 2.0 + 0.4];
        for t in 0..4 {
            assert!((adv[t] - expect[t]).abs() < 1e-15);
            assert!((ret[t] - adv[t] - v[t]).abs() < 1e-15);
        }
    }

    #[test]
    fn lambda_one_zero_values_is_reward_to_go() {
        let r = [1.0, 2.0, 3.0, 4.0, 5.0];
        let d = [false, true, false, false, true];
        let (adv, _) = gae(&r, &[0.0; 5], &d, 1.0, 1.0).unwrap();
        assert_eq!(adv, vec![3.0, 2.0, 12.0, 9.0, 5.0]);
    }

    #[test]
    fn matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 50;
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.1)).collect();
        let (gamma, lambda) = (0.97, 0.9);
        let (adv, _) = gae(&r, &v, &d, gamma, lambda).unwrap();
        for t in 0..n {
            // A_t = sum_l (gamma lambda)^l delta_{t+l}, truncated at the episode end
            let mut a = 0.0;
            let mut w = 1.0;
            for u in t..n {
                let next = if d[u] || u + 1 == n { 0.0 } else { v[u + 1] };
                a += w * (r[u] + gamma * next - v[u]);
                if d[u] {
                    break;
                }
                w *= gamma * lambda;
            }
            assert!((adv[t] - a).abs() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn normalization() {
        let n = normalize(&[1.0, 2.0, 3.0, 4.0]);
        assert!(n.iter().sum::<f64>().abs() < 1e-12);
        assert!((n.iter().map(|x| x * x).sum::<f64>() / 4.0 - 1.0).abs() < 1e-12);
        assert_eq!(normalize(&[2.0, 2.0]), vec![0.0, 0.0]);
    }

    fn toy(seed: u64) -> (ActorCritic, RolloutBatch) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ac = ActorCritic::new(4, &[8], Activation::Tanh, 1.0, &mut rng).unwrap();
        let mut batch = RolloutBatch::default();
        for _ in 0..32 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p = ac.probs(&x).unwrap();
            let a = rng.gen_range(0..NUM_ACTIONS);
            batch.log_probs.push(p[a].ln());
            batch.inputs.push(x);
            batch.time_left.push(rng.gen_range(0.0..1.0));
            batch.actions.push(a);
            batch.advantages.push(rng.gen_range(-1.0..1.0));
            batch.returns.push(rng.gen_range(-1.0..1.0));
        }
        (ac, batch)
    }

    #[test]
    fn zero_lr_leaves_params_and_clip_fraction_zero() {
        let (mut ac, batch) = toy(1);
        let before = ac.clone();
        let mut opt = ActorCriticOptim::new(AdamWConfig::with_lr(0.0), &ac);
        let stats = ppo_update(&mut ac, &batch, &PpoConfig::default(), &mut opt, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(ac, before);
        assert_eq!(stats.clip_fraction, 0.0);
        assert!(stats.approx_kl.abs() < 1e-15);
    }

    #[test]
    fn zero_advantage_has_no_policy_gradient() {
        let (mut ac, mut batch) = toy(2);
        batch.advantages = vec![0.0; batch.len()];
        let cfg = PpoConfig {
            entropy_coef: 0.0,
            epochs: 1,
            minibatch: 64,
            ..PpoConfig::default()
        };
        let before = ac.actor.clone();
        let mut opt = ActorCriticOptim::new(
            AdamWConfig {
                weight_decay: 0.0,
                ..AdamWConfig::with_lr(1e-2)
            },
            &ac,
        );
        ppo_update(&mut ac, &batch, &cfg, &mut opt, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(ac.actor, before, "only the critic may move");
    }

    #[test]
    fn positive_advantage_raises_taken_action() {
        let (mut ac, _) = toy(3);
        let x = vec![0.5, -0.25, 0.1, 0.9];
        let a = 4;
        let p0 = ac.probs(&x).unwrap()[a];
        let batch = RolloutBatch {
            inputs: vec![x.clone(), x.clone()],
            actions: vec![a, 0],
            log_probs: vec![p0.ln(), ac.probs(&x).unwrap()[0].ln()],
            time_left: vec![1.0, 1.0],
            advantages: vec![1.0, -1.0],
            returns: vec![0.0, 0.0],
        };
        let mut opt = ActorCriticOptim::new(AdamWConfig::with_lr(1e-2), &ac);
        let cfg = PpoConfig {
            epochs: 1,
            ..PpoConfig::default()
        };
        ppo_update(&mut ac, &batch, &cfg, &mut opt, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(ac.probs(&x).unwrap()[a] > p0);
    }

    #[test]
    fn nan_input_aborts() {
        let (mut ac, mut batch) = toy(4);
        batch.inputs[3][1] = f64::NAN;
        let before = ac.clone();
        let mut opt = ActorCriticOptim::new(AdamWConfig::default(), &ac);
        let cfg = PpoConfig {
            epochs: 1,
            minibatch: 64,
            ..PpoConfig::default()
        };
        let err = ppo_update(&mut ac, &batch, &cfg, &mut opt, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        assert_eq!(ac, before);
    }
}
