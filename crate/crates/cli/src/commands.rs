use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use gazegym::checkpoint::Checkpoint;
use gazegym::envs::{
    generate_synthetic_dataset, load_dataset, run_scene_search_eval, DemoEpisode, EyePolicy, OraclePolicy,
    RandomPolicy,
};
use gazegym::foveation::PyramidRenderer;
use gazegym::kinematics::DhChain;
use gazegym::learner::{
    evaluate_object_search, ActorCritic, BcrlSource, BcrlTrainer, EyeMode, InputLayout, IterationMetrics,
    NeuralEyePolicy, ObjectSearchSource, SceneSearchSource, SearchTrainer,
};
use gazegym::metrics::MetricsWriter;
use gazegym::panorama::{render_view, EquirectPanorama, Projection, ViewSpec};
use gazegym::rewards::{FeatureExtractor, ToyExtractor};

use crate::config::{RunConfig, SearchTask};
use crate::{EvalArgs, PolicyArg, ProjectionArg, RenderArgs, RunArgs, UsageError};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SUMMARY_FILE: &str = "summary.json";
pub const EVAL_FILE: &str = "eval.json";

pub fn render(a: &RenderArgs) -> Result<()> {
    let view = ViewSpec {
        azimuth: a.azimuth.to_radians(),
        elevation: a.elevation.to_radians(),
        fov: a.fov.to_radians(),
        resolution: a.resolution,
        projection: match a.projection {
            ProjectionArg::Pinhole => Projection::Pinhole,
            ProjectionArg::Fisheye => Projection::EquidistantFisheye,
        },
    };
    if let Err(e) = view.validate() {
        bail!(UsageError(format!("--fov {} / --elevation {}: {e}", a.fov, a.elevation)));
    }
    let pano = EquirectPanorama::load(&a.panorama).with_context(|| format!("panorama {}", a.panorama.display()))?;
    render_view(&pano, &view)?.save_png(&a.out)?;
    Ok(())
}

pub fn synth(a: &RunArgs) -> Result<()> {
    let (cfg, out) = prepare(a, false)?;
    let chain = chain(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ds = generate_synthetic_dataset(&cfg.synth, &chain, &out, &mut rng)?;
    println!("wrote {} episodes to {}", ds.episodes.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    seed: u64,
    iterations: u64,
    env_steps: u64,
    final_reward_mean: Option<f64>,
    final_bc_loss: Option<f64>,
    eval_bc_l1: Option<f64>,
}

pub fn train_search(a: &RunArgs) -> Result<()> {
    let (cfg, out) = prepare(a, true)?;
    let ctx = Parts::new(&cfg)?;
    let episodes = load_dataset(cfg.require_dataset()?)?.episodes;
    let pool = pool(cfg.workers)?;
    let layout = search_layout(&cfg, &ctx);
    let mut trainer = SearchTrainer::new(
        cfg.search.clone(),
        layout,
        cfg.gimbal.step_size,
        episode_steps(&cfg),
        cfg.budget_steps,
        cfg.seed,
    )?;
    if let Some(path) = &a.checkpoint {
        trainer.restore(&Checkpoint::load(path)?)?;
    }
    let source: Box<dyn Fn(&mut SearchTrainer) -> gazegym::Result<IterationMetrics>> = match cfg.task {
        SearchTask::Object => {
            let src = object_source(&cfg, &ctx, episodes);
            Box::new(move |t: &mut SearchTrainer| t.iterate(&src, src.fx.as_ref(), &pool))
        }
        SearchTask::Scene => {
            let src = SceneSearchSource {
                images: images(&episodes)?,
                renderer: ctx.renderer.clone(),
                gimbal: cfg.gimbal,
                cfg: cfg.scene,
                fx: ctx.fx.clone(),
            };
            Box::new(move |t: &mut SearchTrainer| t.iterate(&src, src.fx.as_ref(), &pool))
        }
    };
    let last = run_loop(
        &out,
        &cfg,
        a.checkpoint.is_some(),
        a.max_iterations,
        &mut trainer,
        |t| (t.iteration, t.env_steps),
        |t| source(t),
        |t| t.checkpoint(),
    )?;
    write_json(
        &out.join(SUMMARY_FILE),
        &TrainSummary {
            seed: cfg.seed,
            iterations: trainer.iteration,
            env_steps: trainer.env_steps,
            final_reward_mean: last.as_ref().map(|m| m.reward_mean),
            final_bc_loss: None,
            eval_bc_l1: None,
        },
    )
}

#[derive(Serialize)]
struct ObjectEvalSummary<'a> {
    seed: u64,
    policy: &'static str,
    episodes: usize,
    tolerance_deg: f64,
    success_rate: f64,
    outcomes: &'a [gazegym::learner::ObjectSearchOutcome],
}

#[derive(Serialize)]
struct SceneEvalSummary<'a> {
    seed: u64,
    policy: &'static str,
    images: usize,
    exact_match_rate: f64,
    mean_similarity: f64,
    records: &'a [gazegym::envs::SceneEvalRecord],
}

pub fn eval_search(a: &EvalArgs) -> Result<()> {
    let (cfg, out) = prepare(&a.run, true)?;
    let ctx = Parts::new(&cfg)?;
    let episodes = load_dataset(cfg.eval_dataset()?)?.episodes;
    let layout = search_layout(&cfg, &ctx);
    let mut policy: Box<dyn EyePolicy> = match a.policy {
        PolicyArg::Oracle => Box::new(OraclePolicy),
        PolicyArg::Random => Box::new(RandomPolicy),
        PolicyArg::Trained => {
            let Some(path) = &a.run.checkpoint else {
                bail!(UsageError("--policy trained needs --checkpoint".into()));
            };
            let c = Checkpoint::load(path)?;
            c.expect_kind("search")?;
            let ac = ActorCritic {
                actor: c.net("actor")?,
                critic: c.net("critic")?,
                value_scale: cfg.search.ppo.value_scale,
            };
            if ac.input_dim() != layout.dim() {
                bail!(UsageError(format!(
                    "checkpoint eye takes {} inputs, this config builds {}",
                    ac.input_dim(),
                    layout.dim()
                )));
            }
            Box::new(NeuralEyePolicy::new(&ac, layout, ctx.fx.clone(), cfg.gimbal.step_size))
        }
    };
    let name = match a.policy {
        PolicyArg::Trained => "trained",
        PolicyArg::Oracle => "oracle",
        PolicyArg::Random => "random",
    };
    match cfg.task {
        SearchTask::Object => {
            let src = object_source(&cfg, &ctx, episodes);
            let n = cfg.object_eval.episodes;
            let outcomes = evaluate_object_search(
                policy.as_mut(),
                &src,
                n,
                cfg.object_eval.tolerance_deg.to_radians(),
                cfg.seed,
            )?;
            let rate = outcomes.iter().filter(|o| o.success).count() as f64 / n.max(1) as f64;
            println!("object search success rate {rate:.4} over {n} episodes ({name})");
            write_json(
                &out.join(EVAL_FILE),
                &ObjectEvalSummary {
                    seed: cfg.seed,
                    policy: name,
                    episodes: n,
                    tolerance_deg: cfg.object_eval.tolerance_deg,
                    success_rate: rate,
                    outcomes: &outcomes,
                },
            )
        }
        SearchTask::Scene => {
            let imgs = images(&episodes)?;
            let m = run_scene_search_eval(
                policy.as_mut(),
                &imgs,
                ctx.fx.as_ref(),
                &ctx.renderer,
                &cfg.gimbal,
                &cfg.scene_eval,
                &mut ChaCha8Rng::seed_from_u64(cfg.seed),
            )?;
            println!(
                "scene search exact match {:.4}, similarity {:.4} over {} images ({name})",
                m.exact_match_rate,
                m.mean_similarity,
                imgs.len()
            );
            write_json(
                &out.join(EVAL_FILE),
                &SceneEvalSummary {
                    seed: cfg.seed,
                    policy: name,
                    images: imgs.len(),
                    exact_match_rate: m.exact_match_rate,
                    mean_similarity: m.mean_similarity,
                    records: &m.records,
                },
            )
        }
    }
}

pub fn train_bcrl(a: &RunArgs) -> Result<()> {
    let (cfg, out) = prepare(a, true)?;
    let ctx = Parts::new(&cfg)?;
    let chain = Arc::new(chain(&cfg)?);
    let source = BcrlSource {
        episodes: load_dataset(cfg.require_dataset()?)?.episodes,
        renderer: ctx.renderer.clone(),
        gimbal: cfg.gimbal,
        chain: chain.clone(),
        fx: ctx.fx.clone(),
    };
    let mut trainer = BcrlTrainer::new(cfg.bcrl.train.clone(), cfg.bcrl.mode, &source, cfg.budget_steps, cfg.seed)?;
    if let Some(path) = &a.checkpoint {
        trainer.restore(&Checkpoint::load(path)?)?;
    } else if let Some(init) = &cfg.bcrl.eye_init {
        if cfg.bcrl.mode != EyeMode::Learned {
            bail!(UsageError("bcrl.eye_init only applies to mode = \"learned\"".into()));
        }
        let c = Checkpoint::load(init)?;
        c.expect_kind("search")?;
        trainer.set_eye(ActorCritic {
            actor: c.net("actor")?,
            critic: c.net("critic")?,
            value_scale: cfg.bcrl.train.ppo.value_scale,
        })?;
    }
    let pool = pool(cfg.workers)?;
    let last = run_loop(
        &out,
        &cfg,
        a.checkpoint.is_some(),
        a.max_iterations,
        &mut trainer,
        |t| (t.iteration, t.env_steps),
        |t| t.iterate(&source, &pool),
        |t| t.checkpoint(),
    )?;
    let eval_source = BcrlSource {
        episodes: load_dataset(cfg.eval_dataset()?)?.episodes,
        ..source
    };
    let l1 = trainer.evaluate_bc(&eval_source, cfg.bcrl.eval_episodes, cfg.seed)?;
    println!("held-out BC L1 {l1:.6}");
    write_json(
        &out.join(SUMMARY_FILE),
        &TrainSummary {
            seed: cfg.seed,
            iterations: trainer.iteration,
            env_steps: trainer.env_steps,
            final_reward_mean: last.as_ref().map(|m| m.reward_mean),
            final_bc_loss: last.as_ref().and_then(|m| m.bc_loss),
            eval_bc_l1: Some(l1),
        },
    )
}

struct Parts {
    renderer: Arc<PyramidRenderer>,
    fx: Arc<dyn FeatureExtractor>,
}

impl Parts {
    fn new(cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            renderer: Arc::new(PyramidRenderer::new(cfg.pyramid)?),
            fx: Arc::new(ToyExtractor { grid: cfg.features.grid }),
        })
    }
}

/// Loads the config, applies flag overrides, validates, and records the
/// effective config in the output directory.
fn prepare(a: &RunArgs, inputs: bool) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(o) = &a.out {
        cfg.output_dir = Some(o.clone());
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    if let Some(b) = a.budget_steps {
        cfg.budget_steps = b;
    }
    cfg.validate(inputs)?;
    let Some(out) = cfg.output_dir.clone() else {
        bail!(UsageError("no output directory: pass --out or set output_dir".into()));
    };
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let text = toml::to_string(&cfg).context("serializing config")?;
    std::fs::write(out.join(CONFIG_FILE), text).with_context(|| format!("writing config into {}", out.display()))?;
    Ok((cfg, out))
}

fn chain(cfg: &RunConfig) -> Result<DhChain> {
    Ok(match &cfg.chain {
        Some(p) => DhChain::load(p)?,
        None => DhChain::ur5e(),
    })
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building worker pool")
}

fn episode_steps(cfg: &RunConfig) -> usize {
    match cfg.task {
        SearchTask::Object => cfg.object.episode_steps,
        SearchTask::Scene => cfg.scene.episode_steps,
    }
}

fn search_layout(cfg: &RunConfig, ctx: &Parts) -> InputLayout {
    let target = match cfg.task {
        SearchTask::Object => cfg.object.conditioning,
        SearchTask::Scene => true,
    };
    InputLayout::eye(cfg.pyramid.levels, ctx.fx.dim(), target)
}

fn object_source(cfg: &RunConfig, ctx: &Parts, episodes: Vec<Arc<DemoEpisode>>) -> ObjectSearchSource {
    ObjectSearchSource {
        episodes,
        renderer: ctx.renderer.clone(),
        gimbal: cfg.gimbal,
        cfg: cfg.object,
        fx: ctx.fx.clone(),
    }
}

/// Every distinct image of every episode.
fn images(episodes: &[Arc<DemoEpisode>]) -> Result<Vec<Arc<EquirectPanorama>>> {
    let mut out = Vec::new();
    for ep in episodes {
        for i in 0..ep.image_count() {
            out.push(ep.image(i)?);
        }
    }
    Ok(out)
}

/// Iterates until the budget is spent or `max_iterations` is reached, appending one metric line per
/// iteration and checkpointing every `checkpoint_every` iterations and at the
/// end.
fn run_loop<T>(
    out: &Path,
    cfg: &RunConfig,
    resumed: bool,
    max_iterations: Option<u64>,
    trainer: &mut T,
    progress: impl Fn(&T) -> (u64, u64),
    mut step: impl FnMut(&mut T) -> gazegym::Result<IterationMetrics>,
    checkpoint: impl Fn(&T) -> Checkpoint,
) -> Result<Option<IterationMetrics>> {
    let metrics_path = out.join(METRICS_FILE);
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let mut writer = if resumed {
        MetricsWriter::resume(&metrics_path, progress(trainer).0 as usize)?
    } else {
        MetricsWriter::create(&metrics_path)?
    };
    let mut last = None;
    while progress(trainer).1 < cfg.budget_steps && max_iterations.is_none_or(|m| progress(trainer).0 < m) {
        let m = step(trainer)?;
        writer.write(&m)?;
        if cfg.checkpoint_every > 0 && m.iteration % cfg.checkpoint_every == 0 {
            checkpoint(trainer).save(&ckpt_path)?;
        }
        last = Some(m);
    }
    writer.flush()?;
    checkpoint(trainer).save(&ckpt_path)?;
    Ok(last)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).context("serializing summary")?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
