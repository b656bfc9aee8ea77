use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::Config("mlp needs at least one hidden layer".into()));
        }
        if self.input == 0 || self.output == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(format!("mlp widths must be > 0: {self:?}")));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per affine layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input];
        widths.extend(&self.hidden);
        widths.push(self.output);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Fully connected network with all parameters in one flat vector. Each
/// layer stores its `out x in` weight matrix row-major, then its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
}

/// Layer inputs recorded by [`Mlp::forward`]; `acts[0]` is the network input
/// and `acts[l]` the (activated) output of layer `l - 1`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache holds at least the input")
    }

    pub fn activations(&self) -> &[Vec<f64>] {
        &self.acts
    }
}

impl Mlp {
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.num_params();
        Ok(Self {
            spec,
            params: vec![0.0; n],
        })
    }

    /// Uniform fan-in scaled weights, zero biases. The last layer is further
    /// scaled by `output_gain`.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, output_gain: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let layers = net.spec.layers();
        let mut off = 0;
        for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let gain = if l + 1 == layers.len() { output_gain } else { 1.0 };
            let bound = gain * (3.0 / fan_in as f64).sqrt();
            for w in &mut net.params[off..off + fan_in * fan_out] {
                *w = rng.gen_range(-bound..=bound);
            }
            off += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn from_params(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.num_params() {
            return Err(Error::DimensionMismatch {
                context: "mlp parameters",
                expected: spec.num_params(),
                actual: params.len(),
            });
        }
        Ok(Self { spec, params })
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.spec.input {
            return Err(Error::DimensionMismatch {
                context: "mlp input",
                expected: self.spec.input,
                actual: x.len(),
            });
        }
        let layers = self.spec.layers();
        let mut acts = Vec::with_capacity(layers.len() + 1);
        acts.push(x.to_vec());
        let mut off = 0;
        for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let input = acts.last().expect("non-empty");
            let last = l + 1 == layers.len();
            let out: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    let z = b[o] + dot(row, input);
                    match (last, self.spec.activation, self.spec.output_activation) {
                        (true, _, OutputActivation::Identity) => z,
                        (true, _, OutputActivation::Tanh) | (false, Activation::Tanh, _) => z.tanh(),
                        (false, Activation::Relu, _) => z.max(0.0),
                    }
                })
                .collect();
            acts.push(out);
            off += fan_in * fan_out + fan_out;
        }
        Ok(ForwardCache { acts })
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.acts.pop().expect("non-empty"))
    }

    /// Adds `d loss / d params` to `grads` given `d loss / d output`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64], grads: &mut [f64]) -> Result<()> {
        if grad_out.len() != self.spec.output {
            return Err(Error::DimensionMismatch {
                context: "mlp output gradient",
                expected: self.spec.output,
                actual: grad_out.len(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                context: "mlp gradient buffer",
                expected: self.params.len(),
                actual: grads.len(),
            });
        }
        let layers = self.spec.layers();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut off = 0;
        for &(i, o) in &layers {
            offsets.push(off);
            off += i * o + o;
        }
        let mut delta = grad_out.to_vec();
        for l in (0..layers.len()).rev() {
            let (fan_in, fan_out) = layers[l];
            let out = &cache.acts[l + 1];
            let last = l + 1 == layers.len();
            // through the activation
            for (d, &y) in delta.iter_mut().zip(out) {
                *d *= match (last, self.spec.activation, self.spec.output_activation) {
                    (true, _, OutputActivation::Identity) => 1.0,
                    (true, _, OutputActivation::Tanh) | (false, Activation::Tanh, _) => 1.0 - y * y,
                    (false, Activation::Relu, _) => f64::from(u8::from(y > 0.0)),
                };
            }
            let input = &cache.acts[l];
            let base = offsets[l];
            let (gw, rest) = grads[base..base + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                rest[o] += d;
                for (g, &x) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            if l > 0 {
                let w = &self.params[base..base + fan_in * fan_out];
                let mut next = vec![0.0; fan_in];
                for o in 0..fan_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (n, &wv) in next.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *n += d * wv;
                    }
                }
                delta = next;
            }
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators keep the loop vectorizable while staying deterministic
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for k in 0..4 {
            acc[k] += a[4 * i + k] * b[4 * i + k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Inverse-CDF draw from a categorical distribution.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(input: usize, hidden: Vec<usize>, output: usize, act: Activation, out: OutputActivation) -> MlpSpec {
        MlpSpec {
            input,
            hidden,
            output,
            activation: act,
            output_activation: out,
        }
    }

    #[test]
    fn zero_net_gives_uniform_policy() {
        let net = Mlp::zeros(spec(5, vec![4], 9, Activation::Tanh, OutputActivation::Identity)).unwrap();
        let logits = net.predict(&[1.0, -2.0, 3.0, 0.5, 0.0]).unwrap();
        assert_eq!(logits, vec![0.0; 9]);
        for p in softmax(&logits) {
            assert!((p - 1.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_computed_forward() {
        // 2 -> 1 (relu) -> 1 (identity)
        let s = spec(2, vec![1], 1, Activation::Relu, OutputActivation::Identity);
        let net = Mlp::from_params(s, vec![2.0, -1.0, 0.5, 3.0, -1.0]).unwrap();
        // hidden = relu(2*1 - 1*0.5 + 0.5) = 2; out = 3*2 - 1 = 5
        assert_eq!(net.predict(&[1.0, 0.5]).unwrap(), vec![5.0]);
        // hidden clipped at zero
        assert_eq!(net.predict(&[-1.0, 0.0]).unwrap(), vec![-1.0]);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let net = Mlp::zeros(spec(3, vec![2], 1, Activation::Tanh, OutputActivation::Identity)).unwrap();
        assert!(net.forward(&[1.0]).is_err());
        assert!(Mlp::zeros(spec(3, vec![], 1, Activation::Tanh, OutputActivation::Identity)).is_err());
    }

    #[test]
    fn last_layer_gradient_is_outer_product() {
        let s = spec(3, vec![2], 2, Activation::Tanh, OutputActivation::Identity);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::init(s, 1.0, &mut rng).unwrap();
        let cache = net.forward(&[0.3, -0.7, 1.1]).unwrap();
        let g_out = [0.25, -2.0];
        let mut grads = vec![0.0; net.params.len()];
        net.backward(&cache, &g_out, &mut grads).unwrap();
        let h = &cache.acts[1];
        let base = 3 * 2 + 2;
        for o in 0..2 {
            for i in 0..2 {
                assert!((grads[base + o * 2 + i] - g_out[o] * h[i]).abs() < 1e-15);
            }
            assert_eq!(grads[base + 4 + o], g_out[o]);
        }
    }

    #[test]
    fn tanh_head_saturates() {
        let s = spec(1, vec![1], 1, Activation::Relu, OutputActivation::Tanh);
        let net = Mlp::from_params(s, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let mut last = f64::INFINITY;
        for x in [1.0, 5.0, 20.0, 50.0] {
            let cache = net.forward(&[x]).unwrap();
            let mut g = vec![0.0; 4];
            net.backward(&cache, &[1.0], &mut g).unwrap();
            assert!(g[2].abs() <= last);
            last = g[2].abs();
        }
        assert!(last < 1e-12);
    }

    #[test]
    fn large_inputs_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for act in [Activation::Tanh, Activation::Relu] {
            let net = Mlp::init(spec(16, vec![32, 32], 9, act, OutputActivation::Identity), 1.0, &mut rng).unwrap();
            for _ in 0..200 {
                let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-1e3..1e3)).collect();
                let y = net.predict(&x).unwrap();
                assert!(y.iter().all(|v| v.is_finite()));
                let p = softmax(&y);
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(entropy(&p) <= 9f64.ln() + 1e-12);
            }
        }
    }

    #[test]
    fn categorical_sampling_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = [0.1, 0.6, 0.3];
        let mut c = [0usize; 3];
        for _ in 0..30_000 {
            c[sample_categorical(&p, &mut rng)] += 1;
        }
        for k in 0..3 {
            assert!((c[k] as f64 / 30_000.0 - p[k]).abs() < 0.01);
        }
    }
}
