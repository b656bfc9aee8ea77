use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::optim::{clip_grad_norm, OptimState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcConfig {
    pub epochs: usize,
    pub minibatch: usize,
    pub max_grad_norm: Option<f64>,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            minibatch: 256,
            max_grad_norm: Some(1.0),
        }
    }
}

/// Mean absolute error between two equally long vectors.
pub fn l1(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len().max(1) as f64
}

/// Minimizes the per-element L1 loss between `policy(x)` and the target chunk.
/// Returns the mean loss seen over the pass.
pub fn bc_update<R: Rng + ?Sized>(
    policy: &mut Mlp,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    cfg: &BcConfig,
    opt: &mut OptimState,
    rng: &mut R,
) -> Result<f64> {
    if inputs.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            context: "bc targets",
            expected: inputs.len(),
            actual: targets.len(),
        });
    }
    if inputs.is_empty() {
        return Ok(0.0);
    }
    if cfg.epochs == 0 || cfg.minibatch == 0 {
        return Err(Error::Config("bc.epochs and bc.minibatch must be >= 1".into()));
    }
    let out = policy.spec.output;
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for idx in order.chunks(cfg.minibatch) {
            let scale = 1.0 / (idx.len() * out) as f64;
            let mut grads = vec![0.0; policy.params.len()];
            let mut loss = 0.0;
            for &i in idx {
                if targets[i].len() != out {
                    return Err(Error::DimensionMismatch {
                        context: "bc target chunk",
                        expected: out,
                        actual: targets[i].len(),
                    });
                }
                let cache = policy.forward(&inputs[i])?;
                let y = cache.output();
                let g: Vec<f64> = y.iter().zip(&targets[i]).map(|(p, t)| scale * sign(p - t)).collect();
                loss += y.iter().zip(&targets[i]).map(|(p, t)| (p - t).abs()).sum::<f64>() * scale;
                policy.backward(&cache, &g, &mut grads)?;
            }
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    stage: "bc loss",
                    detail: format!("loss {loss} over {} samples", idx.len()),
                });
            }
            if let Some(max) = cfg.max_grad_norm {
                clip_grad_norm(&mut [&mut grads], max);
            }
            opt.update(&mut policy.params, &grads)?;
            total += loss * idx.len() as f64;
            count += idx.len();
        }
    }
    Ok(total / count as f64)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Blends overlapping chunk predictions for the current step.
///
/// `chunks[i]` is the chunk emitted `ages[i]` steps ago; its row `ages[i]`
/// is its prediction for now. Weights are `exp(-k * age)`, so the newest
/// chunk counts most. Chunks too short to reach the current step are skipped.
pub fn temporal_ensemble(chunks: &[Vec<Vec<f64>>], ages: &[usize], k: f64) -> Result<Vec<f64>> {
    if chunks.len() != ages.len() {
        return Err(Error::DimensionMismatch {
            context: "ensemble ages",
            expected: chunks.len(),
            actual: ages.len(),
        });
    }
    // Offsets from the first covering row, so agreeing chunks return their
    // value exactly.
    let mut base: Option<&[f64]> = None;
    let mut acc = Vec::new();
    let mut wsum = 0.0;
    for (chunk, &age) in chunks.iter().zip(ages) {
        let Some(row) = chunk.get(age) else { continue };
        let w = (-k * age as f64).exp();
        let b = *base.get_or_insert_with(|| {
            acc = vec![0.0; row.len()];
            row
        });
        if b.len() != row.len() {
            return Err(Error::DimensionMismatch {
                context: "ensemble row",
                expected: b.len(),
                actual: row.len(),
            });
        }
        for ((a, r), b) in acc.iter_mut().zip(row).zip(b) {
            *a += w * (r - b);
        }
        wsum += w;
    }
    let base = base.ok_or_else(|| Error::Env("no chunk covers the current step".into()))?;
    Ok(base.iter().zip(acc).map(|(b, a)| b + a / wsum).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::mlp::{Activation, MlpSpec, OutputActivation};
    use crate::learner::optim::AdamWConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ensemble_closed_form() {
        let chunks = vec![vec![vec![0.0], vec![10.0], vec![20.0]], vec![vec![4.0], vec![5.0]], vec![vec![1.0]]];
        let k = 0.5;
        let got = temporal_ensemble(&chunks, &[2, 1, 0], k).unwrap();
        let (w0, w1, w2) = ((-1.0f64).exp(), (-0.5f64).exp(), 1.0);
        let expect = (w0 * 20.0 + w1 * 5.0 + w2 * 1.0) / (w0 + w1 + w2);
        assert!((got[0] - expect).abs() < 1e-12);
        // a single chunk passes through unchanged
        assert_eq!(temporal_ensemble(&chunks[..1], &[1], k).unwrap(), vec![10.0]);
        // k = 0 is a plain mean
        let mean = temporal_ensemble(&chunks, &[2, 1, 0], 0.0).unwrap();
        assert!((mean[0] - 26.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn constant_output_converges_to_median() {
        // a bias-only network under L1 is pulled to the median of its targets
        let spec = MlpSpec {
            input: 1,
            hidden: vec![2],
            output: 1,
            activation: Activation::Tanh,
            output_activation: OutputActivation::Identity,
        };
        let mut policy = Mlp::zeros(spec).unwrap();
        let targets: Vec<Vec<f64>> = [0.1, 0.2, 0.9, -0.5, 0.3].iter().map(|&t| vec![t]).collect();
        let inputs = vec![vec![0.0]; targets.len()];
        let cfg = BcConfig {
            epochs: 1,
            minibatch: 5,
            max_grad_norm: None,
        };
        let mut opt = OptimState::new(
            AdamWConfig {
                weight_decay: 0.0,
                horizon: 2000,
                ..AdamWConfig::with_lr(0.01)
            },
            policy.params.len(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..2000 {
            bc_update(&mut policy, &inputs, &targets, &cfg, &mut opt, &mut rng).unwrap();
        }
        let y = policy.predict(&[0.0]).unwrap()[0];
        assert!((y - 0.2).abs() < 0.01, "converged to {y}");
    }

    #[test]
    fn mismatched_target_width_errors() {
        let spec = MlpSpec {
            input: 2,
            hidden: vec![4],
            output: 3,
            activation: Activation::Relu,
            output_activation: OutputActivation::Tanh,
        };
        let mut policy = Mlp::zeros(spec).unwrap();
        let mut opt = OptimState::new(AdamWConfig::default(), policy.params.len());
        let err = bc_update(
            &mut policy,
            &[vec![0.0, 0.0]],
            &[vec![0.0; 2]],
            &BcConfig::default(),
            &mut opt,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }
}
