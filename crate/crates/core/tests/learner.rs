use std::sync::Arc;

use gazegym::checkpoint::Checkpoint;
use gazegym::envs::{synth_episodes, ObjectSearchConfig, SynthSpec};
use gazegym::foveation::{PyramidConfig, PyramidRenderer};
use gazegym::gimbal::{GimbalConfig, NUM_ACTIONS};
use gazegym::kinematics::DhChain;
use gazegym::learner::mlp::{entropy, softmax};
use gazegym::learner::{
    bc_update, gae, l1, temporal_ensemble, Activation, AdamWConfig, BcConfig, BcrlSource,
    BcrlTrainConfig, BcrlTrainer, EyeMode, InputLayout, Mlp, MlpSpec, ObjectSearchSource, OptimState,
    OutputActivation, SearchTrainConfig, SearchTrainer,
};
use gazegym::rewards::{FeatureExtractor, ToyExtractor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest relative error between backprop and central differences over up to
/// `per_layer` random coordinates of every weight and bias block.
fn gradient_check(spec: MlpSpec, seed: u64, per_layer: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::init(spec.clone(), 1.0, &mut rng).unwrap();
    for p in net.params.iter_mut() {
        *p += rng.gen_range(-0.1..0.1);
    }
    let x: Vec<f64> = (0..spec.input).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c: Vec<f64> = (0..spec.output).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = |n: &Mlp| n.predict(&x).unwrap().iter().zip(&c).map(|(y, c)| y * c).sum::<f64>();
    let pattern = |n: &Mlp| {
        let cache = n.forward(&x).unwrap();
        cache.activations()[1..].iter().flatten().map(|&a| a > 0.0).collect::<Vec<bool>>()
    };

    let cache = net.forward(&x).unwrap();
    let mut grads = vec![0.0; net.params.len()];
    net.backward(&cache, &c, &mut grads).unwrap();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut off = 0;
    for (fan_in, fan_out) in spec.layers() {
        for (start, len) in [(off, fan_in * fan_out), (off + fan_in * fan_out, fan_out)] {
            let picks: Vec<usize> = if len <= per_layer {
                (start..start + len).collect()
            } else {
                (0..per_layer).map(|_| start + rng.gen_range(0..len)).collect()
            };
            for i in picks {
                let mut plus = net.clone();
                plus.params[i] += h;
                let mut minus = net.clone();
                minus.params[i] -= h;
                // skip coordinates whose perturbation crosses a ReLU kink
                if spec.activation == Activation::Relu && pattern(&plus) != pattern(&minus) {
                    continue;
                }
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let rel = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        off += fan_in * fan_out + fan_out;
    }
    worst
}

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
fn backward_matches_finite_differences() {
    for seed in 0..5 {
        let tanh = spec(24, vec![32, 16], 9, Activation::Tanh, OutputActivation::Identity);
        let err = gradient_check(tanh, seed, 200);
        assert!(err < 1e-4, "tanh seed {seed}: {err}");
        let relu = spec(20, vec![24], 12, Activation::Relu, OutputActivation::Tanh);
        let err = gradient_check(relu, seed, 200);
        assert!(err < 1e-4, "relu seed {seed}: {err}");
    }
}

#[test]
fn outputs_stay_finite_for_large_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for act in [Activation::Tanh, Activation::Relu] {
        let net = Mlp::init(spec(16, vec![32, 32], 9, act, OutputActivation::Identity), 1.0, &mut rng).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-1e3..1e3)).collect();
            let y = net.predict(&x).unwrap();
            assert!(y.iter().all(|v| v.is_finite()));
            let p = softmax(&y);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, NUM_ACTIONS)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!(entropy(&p) <= (NUM_ACTIONS as f64).ln() + 1e-12);
    }

    #[test]
    fn ensemble_weights_are_a_convex_combination(
        rows in prop::collection::vec(-5.0f64..5.0, 1..12),
        k in 0.0f64..1.0,
    ) {
        // chunk i was emitted i steps ago; its row i is the current prediction
        let chunks: Vec<Vec<Vec<f64>>> = rows.iter().enumerate()
            .map(|(age, &v)| { let mut c = vec![vec![f64::NAN]; age]; c.push(vec![v]); c })
            .collect();
        let ages: Vec<usize> = (0..rows.len()).collect();
        let got = temporal_ensemble(&chunks, &ages, k).unwrap()[0];
        let lo = rows.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = rows.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(got >= lo - 1e-12 && got <= hi + 1e-12);
        let same: Vec<Vec<Vec<f64>>> = chunks.iter().map(|c| c.iter().map(|_| vec![1.25]).collect()).collect();
        prop_assert_eq!(temporal_ensemble(&same, &ages, k).unwrap()[0], 1.25);
    }
}

#[test]
fn two_chunk_ensemble_closed_form() {
    let chunks = vec![vec![vec![0.0]], vec![vec![9.0], vec![1.0]]];
    let got = temporal_ensemble(&chunks, &[0, 1], 0.05).unwrap()[0];
    let (w0, w1) = (1.0, (-0.05f64).exp());
    assert!((got - w1 / (w0 + w1)).abs() < 1e-12);
}

#[test]
fn gae_reward_to_go_with_discount() {
    let r = [0.0, 0.0, 1.0];
    let (adv, ret) = gae(&r, &[0.0; 3], &[false, false, true], 0.5, 1.0).unwrap();
    assert_eq!(adv, vec![0.25, 0.5, 1.0]);
    assert_eq!(ret, adv);
}

fn tiny_policy(rng: &mut ChaCha8Rng) -> Mlp {
    Mlp::init(spec(4, vec![16], 6, Activation::Tanh, OutputActivation::Tanh), 1.0, rng).unwrap()
}

#[test]
fn bc_loss_zero_on_exact_prediction() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut policy = tiny_policy(&mut rng);
    let x = vec![vec![0.1, 0.2, -0.3, 0.4]];
    let y = vec![policy.predict(&x[0]).unwrap()];
    let mut opt = OptimState::new(AdamWConfig::default(), policy.params.len());
    let loss = bc_update(&mut policy, &x, &y, &BcConfig::default(), &mut opt, &mut rng).unwrap();
    assert_eq!(loss, 0.0);
}

#[test]
fn bc_overfits_a_fixed_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut policy = tiny_policy(&mut rng);
    let xs: Vec<Vec<f64>> = (0..8).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let ys: Vec<Vec<f64>> = (0..8).map(|_| (0..6).map(|_| rng.gen_range(-0.8..0.8)).collect()).collect();
    let eval = |p: &Mlp| xs.iter().zip(&ys).map(|(x, y)| l1(&p.predict(x).unwrap(), y)).sum::<f64>() / 8.0;
    let mut opt = OptimState::new(
        AdamWConfig {
            horizon: 100,
            ..AdamWConfig::with_lr(1e-2)
        },
        policy.params.len(),
    );
    let cfg = BcConfig {
        minibatch: 8,
        ..BcConfig::default()
    };
    let start = eval(&policy);
    let mut window = Vec::new();
    for _ in 0..100 {
        bc_update(&mut policy, &xs, &ys, &cfg, &mut opt, &mut rng).unwrap();
        window.push(eval(&policy));
    }
    // compare successive 20-step averages
    let means: Vec<f64> = window.chunks(20).map(|w| w.iter().sum::<f64>() / 20.0).collect();
    assert!(means[0] < start);
    for w in means.windows(2) {
        assert!(w[1] < w[0], "{means:?}");
    }
}

#[test]
fn constant_prediction_sits_at_the_median() {
    // Monte Carlo: for targets uniform in [-1, 1] the L1 minimizer is 0
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let targets: Vec<f64> = (0..4001).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut sorted = targets.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[2000];
    let cost = |c: f64| targets.iter().map(|t| (c - t).abs()).sum::<f64>();
    for d in [0.01, 0.05, 0.2] {
        assert!(cost(median) <= cost(median + d) && cost(median) <= cost(median - d));
    }
    assert!(median.abs() < 0.05);

    let mut policy = Mlp::zeros(spec(1, vec![2], 1, Activation::Tanh, OutputActivation::Identity)).unwrap();
    let xs = vec![vec![0.0]; targets.len()];
    let ys: Vec<Vec<f64>> = targets.iter().map(|&t| vec![t]).collect();
    let mut opt = OptimState::new(
        AdamWConfig {
            weight_decay: 0.0,
            horizon: 400,
            ..AdamWConfig::with_lr(0.01)
        },
        policy.params.len(),
    );
    let cfg = BcConfig {
        minibatch: 4001,
        max_grad_norm: None,
        ..BcConfig::default()
    };
    for _ in 0..400 {
        bc_update(&mut policy, &xs, &ys, &cfg, &mut opt, &mut rng).unwrap();
    }
    let c = policy.predict(&[0.0]).unwrap()[0];
    assert!((c - median).abs() < 0.02, "{c} vs {median}");
}

struct Fixture {
    object: ObjectSearchSource,
    bcrl: BcrlSource,
    layout: InputLayout,
    step: f64,
}

fn fixture() -> Fixture {
    let chain = DhChain::ur5e();
    let spec = SynthSpec {
        episodes: 3,
        frames: 280,
        pano_height: 32,
        ..SynthSpec::default()
    };
    let episodes = synth_episodes(&spec, &chain, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let renderer = Arc::new(
        PyramidRenderer::new(PyramidConfig {
            resolution: 8,
            ..PyramidConfig::default()
        })
        .unwrap(),
    );
    let fx: Arc<dyn FeatureExtractor> = Arc::new(ToyExtractor { grid: 2 });
    let gimbal = GimbalConfig::default();
    Fixture {
        layout: InputLayout::eye(4, fx.dim(), false),
        step: gimbal.step_size,
        object: ObjectSearchSource {
            episodes: episodes.clone(),
            renderer: renderer.clone(),
            gimbal,
            cfg: ObjectSearchConfig {
                episode_steps: 10,
                ..ObjectSearchConfig::default()
            },
            fx: fx.clone(),
        },
        bcrl: BcrlSource {
            episodes,
            renderer,
            gimbal,
            chain: Arc::new(chain),
            fx,
        },
    }
}

fn search_cfg() -> SearchTrainConfig {
    SearchTrainConfig {
        num_envs: 3,
        hidden: vec![8],
        ..SearchTrainConfig::default()
    }
}

fn pool(n: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()
}

fn run_search(f: &Fixture, iterations: usize, workers: usize) -> Vec<String> {
    let mut t = SearchTrainer::new(search_cfg(), f.layout, f.step, 10, 300, 42).unwrap();
    let fx = f.object.fx.clone();
    (0..iterations)
        .map(|_| serde_json::to_string(&t.iterate(&f.object, fx.as_ref(), &pool(workers)).unwrap()).unwrap())
        .collect()
}

#[test]
fn search_training_is_deterministic_across_worker_counts() {
    let f = fixture();
    let a = run_search(&f, 3, 1);
    assert_eq!(a, run_search(&f, 3, 1));
    assert_eq!(a, run_search(&f, 3, 3));
}

#[test]
fn search_checkpoint_resume_matches_uninterrupted() {
    let f = fixture();
    let fx = f.object.fx.clone();
    let full = run_search(&f, 4, 1);
    let mut t = SearchTrainer::new(search_cfg(), f.layout, f.step, 10, 300, 42).unwrap();
    for _ in 0..2 {
        t.iterate(&f.object, fx.as_ref(), &pool(1)).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.bin");
    t.checkpoint().save(&path).unwrap();
    drop(t);
    let mut resumed = SearchTrainer::new(search_cfg(), f.layout, f.step, 10, 300, 999).unwrap();
    resumed.restore(&Checkpoint::load(&path).unwrap()).unwrap();
    for expected in &full[2..] {
        let m = resumed.iterate(&f.object, fx.as_ref(), &pool(1)).unwrap();
        assert_eq!(&serde_json::to_string(&m).unwrap(), expected);
    }
}

fn bcrl_cfg() -> BcrlTrainConfig {
    let mut cfg = BcrlTrainConfig {
        num_envs: 2,
        eye_hidden: vec![8],
        bc_hidden: vec![8],
        ..BcrlTrainConfig::default()
    };
    cfg.schedule.total_steps = 40;
    cfg.schedule.pause_steps = 10;
    cfg
}

#[test]
fn bcrl_iterations_are_finite_and_resumable() {
    let f = fixture();
    let run = |mode| {
        let mut t = BcrlTrainer::new(bcrl_cfg(), mode, &f.bcrl, 400, 7).unwrap();
        (0..3).map(|_| t.iterate(&f.bcrl, &pool(2)).unwrap()).collect::<Vec<_>>()
    };
    for mode in [EyeMode::Learned, EyeMode::Oracle, EyeMode::RandomFrozen] {
        let ms = run(mode);
        for m in &ms {
            assert!(m.reward_mean.is_finite() && m.reward_mean <= 0.0);
            assert!(m.bc_loss.unwrap().is_finite());
            assert_eq!(m.ppo.is_some(), mode == EyeMode::Learned);
        }
        assert_eq!(ms, run(mode));
    }

    let mut t = BcrlTrainer::new(bcrl_cfg(), EyeMode::Learned, &f.bcrl, 400, 7).unwrap();
    t.iterate(&f.bcrl, &pool(1)).unwrap();
    let ckpt = Checkpoint::from_bytes(&t.checkpoint().to_bytes(), "mem".as_ref()).unwrap();
    let next = t.iterate(&f.bcrl, &pool(1)).unwrap();
    let mut resumed = BcrlTrainer::new(bcrl_cfg(), EyeMode::Learned, &f.bcrl, 400, 0).unwrap();
    resumed.restore(&ckpt).unwrap();
    assert_eq!(resumed.iterate(&f.bcrl, &pool(1)).unwrap(), next);
    let eval = t.evaluate_bc(&f.bcrl, 2, 5).unwrap();
    assert_eq!(eval, t.evaluate_bc(&f.bcrl, 2, 5).unwrap());
}

#[test]
fn checkpoint_kind_is_checked() {
    let f = fixture();
    let t = SearchTrainer::new(search_cfg(), f.layout, f.step, 10, 300, 1).unwrap();
    let mut b = BcrlTrainer::new(bcrl_cfg(), EyeMode::Learned, &f.bcrl, 400, 7).unwrap();
    assert!(b.restore(&t.checkpoint()).is_err());
}
