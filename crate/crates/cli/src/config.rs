use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use gazegym::envs::{EpisodeSchedule, ObjectSearchConfig, SceneEvalConfig, SceneSearchConfig, SynthSpec};
use gazegym::foveation::PyramidConfig;
use gazegym::gimbal::GimbalConfig;
use gazegym::learner::{BcrlTrainConfig, EyeMode, SearchTrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchTask {
    Object,
    Scene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Cells per side of the toy extractor.
    pub grid: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { grid: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectEvalConfig {
    pub episodes: usize,
    pub tolerance_deg: f64,
}

impl Default for ObjectEvalConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            tolerance_deg: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcrlRunConfig {
    pub mode: EyeMode,
    /// Search checkpoint whose eye seeds the learned eye.
    pub eye_init: Option<PathBuf>,
    pub eval_episodes: usize,
    #[serde(flatten)]
    pub train: BcrlTrainConfig,
}

impl Default for BcrlRunConfig {
    fn default() -> Self {
        let mut train = BcrlTrainConfig::default();
        train.ppo.minibatch = 64;
        train.schedule = EpisodeSchedule::default();
        Self {
            mode: EyeMode::Learned,
            eye_init: None,
            eval_episodes: 16,
            train,
        }
    }
}

/// Everything a run needs, read from one TOML file and copied into the
/// output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Training demonstrations.
    pub dataset: Option<PathBuf>,
    /// Held-out demonstrations for evaluation; defaults to `dataset`.
    pub eval_dataset: Option<PathBuf>,
    /// DH table; the shipped UR5e when absent.
    pub chain: Option<PathBuf>,
    pub workers: usize,
    pub budget_steps: u64,
    /// Iterations between checkpoints.
    pub checkpoint_every: u64,
    pub task: SearchTask,
    pub gimbal: GimbalConfig,
    pub pyramid: PyramidConfig,
    pub features: FeatureConfig,
    pub search: SearchTrainConfig,
    pub object: ObjectSearchConfig,
    pub object_eval: ObjectEvalConfig,
    pub scene: SceneSearchConfig,
    pub scene_eval: SceneEvalConfig,
    pub bcrl: BcrlRunConfig,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut search = SearchTrainConfig::default();
        search.ppo.minibatch = 64;
        Self {
            seed: 0,
            output_dir: None,
            dataset: None,
            eval_dataset: None,
            chain: None,
            workers: 1,
            budget_steps: 200_000,
            checkpoint_every: 10,
            task: SearchTask::Object,
            gimbal: GimbalConfig::default(),
            pyramid: PyramidConfig {
                resolution: 32,
                ..PyramidConfig::default()
            },
            features: FeatureConfig::default(),
            search,
            object: ObjectSearchConfig::default(),
            object_eval: ObjectEvalConfig::default(),
            scene: SceneSearchConfig::default(),
            scene_eval: SceneEvalConfig::default(),
            bcrl: BcrlRunConfig::default(),
            synth: SynthSpec::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path`; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| crate::UsageError(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.dataset,
            &mut cfg.eval_dataset,
            &mut cfg.chain,
            &mut cfg.output_dir,
            &mut cfg.bcrl.eye_init,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// `inputs` also requires every referenced input path to exist.
    pub fn validate(&self, inputs: bool) -> Result<()> {
        let usage = |m: String| -> Result<()> { Err(crate::UsageError(m).into()) };
        if self.workers == 0 {
            return usage("workers must be >= 1".into());
        }
        if self.budget_steps == 0 {
            return usage("budget_steps must be >= 1".into());
        }
        let paths = [
            ("dataset", &self.dataset),
            ("eval_dataset", &self.eval_dataset),
            ("chain", &self.chain),
            ("bcrl.eye_init", &self.bcrl.eye_init),
        ];
        for (name, p) in paths.into_iter().filter(|_| inputs) {
            if let Some(p) = p {
                if !p.exists() {
                    return usage(format!("{name} path {} does not exist", p.display()));
                }
            }
        }
        self.gimbal.validate().map_err(usage_err)?;
        self.pyramid.validate().map_err(usage_err)?;
        self.search.validate().map_err(usage_err)?;
        self.bcrl.train.validate().map_err(usage_err)?;
        self.synth.validate().map_err(usage_err)?;
        if self.features.grid == 0 || self.features.grid > self.pyramid.resolution {
            return usage(format!(
                "features.grid {} must be in 1..={}",
                self.features.grid, self.pyramid.resolution
            ));
        }
        Ok(())
    }

    pub fn require_dataset(&self) -> Result<&Path> {
        match &self.dataset {
            Some(p) => Ok(p),
            None => bail!(crate::UsageError("config needs a `dataset` path".into())),
        }
    }

    pub fn eval_dataset(&self) -> Result<&Path> {
        match &self.eval_dataset {
            Some(p) => Ok(p),
            None => self.require_dataset(),
        }
    }
}

fn usage_err(e: gazegym::Error) -> anyhow::Error {
    crate::UsageError(e.to_string()).into()
}
