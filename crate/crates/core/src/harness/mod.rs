//! Run configuration, seeded episodes, batch benchmarks and reports.
//!
//! A run is configured by one TOML file; every key is optional:
//!
//! ```toml
//! categories = ["bottle", "door"]   # default: all seven
//! seeds = 100                       # episodes per category
//! seed_offset = 0                   # first seed
//! affordance = "ground-truth"       # or "learned" (needs `model`)
//! codegen = "offline"               # or "remote" (uses providers.endpoint)
//! budget = 200                      # skill calls per episode
//! radius_factor = 0.5               # annotation disc radius factor
//! model = "model.bin"
//! dataset = "train.txt"
//! output = "out"
//!
//! [providers]     # describe/ground/segment: "offline-ground-truth" |
//! segment = "perturbed-offline"     # "perturbed-offline" | "remote"
//! noise = 0.25    # box dilation per side for perturbed providers
//!
//! [skill]         # impedance gains, step sizes, contact threshold
//! [training]      # hidden, epochs, learning_rate, batch_size, momentum
//! [library]       # archetypes, train/test counts and seeds
//! [thresholds]    # min_iou, min_f1, min_success
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

mod episode;
mod eval;
mod report;

pub use episode::{affordance_frame, EpisodeResult, FailureStage, Pipeline, F1_THRESHOLD};
pub use eval::{evaluate_affordance, evaluate_grounding, AffordanceEval, AffordanceEvalRow, GroundingRow};
pub use report::{aggregate, format_rate, read_episode_log, write_outputs, BenchmarkReport, CategoryRow};

use crate::affordance::{read_dataset, write_dataset, AffordanceDataset, AffordanceError, Archetype, Hyperparameters};
use crate::grounding::{GroundingError, ProviderConfig};
use crate::program::{CodegenError, DEFAULT_BUDGET};
use crate::scene::{Category, SceneError};
use crate::skills::{SkillConfig, SkillError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Affordance(#[from] AffordanceError),
    #[error(transparent)]
    Grounding(#[from] GroundingError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Skill(#[from] SkillError),
    #[error(transparent)]
    Codegen(#[from] CodegenError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io { path: path.to_path_buf(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AffordanceSource {
    /// Labels from the annotation oracle.
    #[default]
    GroundTruth,
    /// Scores from the trained model at `model`.
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodegenKind {
    #[default]
    Offline,
    Remote,
}

/// Procedural part library used by `gen-dataset`, `train` and
/// `eval-affordance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LibrarySettings {
    pub archetypes: Vec<Archetype>,
    pub train_per_archetype: usize,
    pub test_per_archetype: usize,
    pub train_seed: u64,
    pub test_seed: u64,
    pub training_seed: u64,
}

impl Default for LibrarySettings {
    fn default() -> Self {
        Self {
            archetypes: vec![Archetype::Cap, Archetype::Knob, Archetype::Button, Archetype::Lever],
            train_per_archetype: 200,
            test_per_archetype: 50,
            train_seed: 1,
            test_seed: 2,
            training_seed: 7,
        }
    }
}

/// Acceptance thresholds; a violated threshold makes `run` and `report`
/// exit nonzero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub min_iou: Option<f64>,
    pub min_f1: Option<f64>,
    pub min_success: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub categories: Vec<Category>,
    pub seeds: u64,
    pub seed_offset: u64,
    pub affordance: AffordanceSource,
    pub codegen: CodegenKind,
    pub budget: usize,
    pub radius_factor: f64,
    pub model: PathBuf,
    pub dataset: PathBuf,
    pub output: PathBuf,
    pub providers: ProviderConfig,
    pub skill: SkillConfig,
    pub training: Hyperparameters,
    pub library: LibrarySettings,
    pub thresholds: Thresholds,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            categories: Category::ALL.to_vec(),
            seeds: 100,
            seed_offset: 0,
            affordance: AffordanceSource::GroundTruth,
            codegen: CodegenKind::Offline,
            budget: DEFAULT_BUDGET,
            radius_factor: crate::affordance::DEFAULT_RADIUS_FACTOR,
            model: "model.bin".into(),
            dataset: "train.txt".into(),
            output: "out".into(),
            providers: ProviderConfig::default(),
            skill: SkillConfig::default(),
            training: Hyperparameters::default(),
            library: LibrarySettings::default(),
            thresholds: Thresholds::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML and resolves relative paths against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, HarnessError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        for p in [&mut cfg.model, &mut cfg.dataset, &mut cfg.output] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.categories.is_empty() {
            return bad("at least one category is required".into());
        }
        if self.seeds == 0 {
            return bad("seeds must be at least 1".into());
        }
        if self.budget == 0 {
            return bad("budget must be positive".into());
        }
        if !(self.radius_factor > 0.0 && self.radius_factor <= 1.0) {
            return bad(format!("radius_factor {} not in (0, 1]", self.radius_factor));
        }
        for (name, p) in [("model", &self.model), ("dataset", &self.dataset), ("output", &self.output)] {
            if p.as_os_str().is_empty() {
                return bad(format!("{name} path is empty"));
            }
        }
        if self.codegen == CodegenKind::Remote && self.providers.endpoint.as_deref().is_none_or(str::is_empty) {
            return bad("remote codegen requires providers.endpoint".into());
        }
        let t = &self.thresholds;
        for (name, v) in [("min_iou", t.min_iou), ("min_f1", t.min_f1), ("min_success", t.min_success)] {
            if v.is_some_and(|v| !(0.0..=1.0).contains(&v)) {
                return bad(format!("{name} must be in [0, 1]"));
            }
        }
        let h = &self.training;
        if h.hidden == 0 || h.batch_size == 0 || !(h.learning_rate > 0.0) || !(0.0..1.0).contains(&h.momentum) {
            return bad("training needs hidden ≥ 1, batch_size ≥ 1, learning_rate > 0 and momentum in [0, 1)".into());
        }
        let l = &self.library;
        if l.archetypes.is_empty() || l.train_per_archetype == 0 || l.test_per_archetype == 0 {
            return bad("library needs archetypes and positive part counts".into());
        }
        self.providers.validate()?;
        self.skill.validate()?;
        Ok(())
    }

    /// SHA-256 over every field that can change results; the output
    /// directory is excluded.
    pub fn digest(&self) -> String {
        let semantic = RunConfig { output: PathBuf::new(), ..self.clone() };
        let bytes = serde_json::to_vec(&semantic).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// `(category, seed)` for every episode, category-major.
    pub fn episodes(&self) -> Vec<(Category, u64)> {
        self.categories.iter().flat_map(|&c| (0..self.seeds).map(move |i| (c, self.seed_offset + i))).collect()
    }
}

pub fn save_dataset(path: &Path, data: &AffordanceDataset) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_dataset(data, &mut out)?;
    out.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<AffordanceDataset, HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(read_dataset(BufReader::new(file))?)
}
