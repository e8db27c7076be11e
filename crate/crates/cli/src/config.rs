//! Per-subcommand JSON configs.
//!
//! Relative paths are resolved against the directory holding the config file,
//! or the working directory when no file is given.

use std::path::{Path, PathBuf};

use cortexalign::encoder::RidgeConfig;
use cortexalign::groupstats::SignFlipConfig;
use cortexalign::simulate::SimConfig;
use cortexalign::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::provenance::io_err;

pub trait StageConfig: Serialize + DeserializeOwned {
    /// Rewrites relative paths against `base`.
    fn resolve(&mut self, base: &Path);

    /// Replaces every seed with `seed`.
    fn set_seed(&mut self, _seed: u64) {}

    /// The seed that drives this stage, if any.
    fn seed(&self) -> Option<u64> {
        None
    }
}

/// Loads a config, applies the seed override, and returns it together with
/// its effective JSON (before path resolution).
pub fn load<T: StageConfig>(
    path: Option<&Path>,
    seed: Option<u64>,
) -> Result<(T, serde_json::Value)> {
    let (text, base) = match path {
        Some(p) => (
            std::fs::read_to_string(p).map_err(|e| io_err(p, e))?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => ("{}".to_string(), PathBuf::new()),
    };
    let mut cfg: T = serde_json::from_str(&text).map_err(|e| {
        Error::Invalid(match path {
            Some(p) => format!("config {}: {e}", p.display()),
            None => format!("no --config given and defaults are incomplete: {e}"),
        })
    })?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    let effective = serde_json::to_value(&cfg).expect("config serializes");
    cfg.resolve(&base);
    Ok((cfg, effective))
}

fn fix(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn default_q() -> f64 {
    0.05
}

fn default_true() -> bool {
    true
}

fn default_max_n() -> usize {
    8000
}

pub fn validate_q(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::Invalid(format!("q must be in (0, 1), got {q}")))
    }
}

/// A score tensor directory tagged with its language.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LangScores {
    pub name: String,
    pub scores: PathBuf,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub sim: SimConfig,
    /// Three languages with shared and private signal ROIs.
    pub three_languages: Option<ThreeLanguages>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThreeLanguages {
    pub shared: Vec<u32>,
    pub private: [Vec<u32>; 3],
}

impl StageConfig for SimulateConfig {
    fn resolve(&mut self, _base: &Path) {}

    fn set_seed(&mut self, seed: u64) {
        self.sim.seed = seed;
    }

    fn seed(&self) -> Option<u64> {
        Some(self.sim.seed)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub manifest: PathBuf,
    /// All layers when absent.
    #[serde(default)]
    pub layers: Option<Vec<u32>>,
}

impl StageConfig for DesignConfig {
    fn resolve(&mut self, base: &Path) {
        fix(base, &mut self.manifest);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodeConfig {
    pub manifest: PathBuf,
    #[serde(default)]
    pub layers: Option<Vec<u32>>,
    #[serde(default)]
    pub ridge: RidgeConfig,
}

impl StageConfig for EncodeConfig {
    fn resolve(&mut self, base: &Path) {
        fix(base, &mut self.manifest);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupMapConfig {
    pub scores: PathBuf,
    #[serde(default)]
    pub layers: Option<Vec<u32>>,
    #[serde(default = "default_q")]
    pub q: f64,
}

impl StageConfig for GroupMapConfig {
    fn resolve(&mut self, base: &Path) {
        fix(base, &mut self.scores);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerCompareConfig {
    pub scores: PathBuf,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default)]
    pub signflip: SignFlipConfig,
}

impl StageConfig for LayerCompareConfig {
    fn resolve(&mut self, base: &Path) {
        fix(base, &mut self.scores);
    }

    fn set_seed(&mut self, seed: u64) {
        self.signflip.seed = seed;
    }

    fn seed(&self) -> Option<u64> {
        Some(self.signflip.seed)
    }
}

/// One side of a model comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRef {
    pub name: String,
    pub scores: PathBuf,
    pub layer: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCompareConfig {
    /// Tested as `a - b`.
    pub a: ModelRef,
    pub b: ModelRef,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default)]
    pub signflip: SignFlipConfig,
    /// Also fit the crossed random-intercept model.
    #[serde(default = "default_true")]
    pub lmm: bool,
}

impl StageConfig for ModelCompareConfig {
    fn resolve(&mut self, base: &Path) {
        fix(base, &mut self.a.scores);
        fix(base, &mut self.b.scores);
    }

    fn set_seed(&mut self, seed: u64) {
        self.signflip.seed = seed;
    }

    fn seed(&self) -> Option<u64> {
        Some(self.signflip.seed)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlapConfig {
    pub languages: [LangScores; 3],
    pub layer: u32,
    #[serde(default = "default_q")]
    pub q: f64,
}

impl StageConfig for OverlapConfig {
    fn resolve(&mut self, base: &Path) {
        for l in &mut self.languages {
            fix(base, &mut l.scores);
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferredLayerConfig {
    pub scores: PathBuf,
    #[serde(default)]
    pub layers: Option<Vec<u32>>,
    #[serde(default = "default_q")]
    pub q: f64,
}

impl StageConfig for PreferredLayerConfig {
    fn resolve(&mut self, base: &Path) {
        fix(base, &mut self.scores);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworksConfig {
    pub languages: Vec<LangScores>,
    pub atlas: PathBuf,
    #[serde(default)]
    pub layers: Option<Vec<u32>>,
}

impl StageConfig for NetworksConfig {
    fn resolve(&mut self, base: &Path) {
        fix(base, &mut self.atlas);
        for l in &mut self.languages {
            fix(base, &mut l.scores);
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub languages: [LangScores; 3],
    #[serde(default)]
    pub layers: Option<Vec<u32>>,
    /// Restrict each map to its significant ROIs.
    #[serde(default)]
    pub significant_only: bool,
    #[serde(default = "default_q")]
    pub q: f64,
}

impl StageConfig for ConvergenceConfig {
    fn resolve(&mut self, base: &Path) {
        for l in &mut self.languages {
            fix(base, &mut l.scores);
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdConfig {
    /// Dataset manifests; the language comes from each manifest.
    pub manifests: Vec<PathBuf>,
    #[serde(default)]
    pub layers: Option<Vec<u32>>,
    #[serde(default = "default_max_n")]
    pub max_n: usize,
    #[serde(default)]
    pub seed: u64,
    /// Add one estimate per run next to the pooled one.
    #[serde(default = "default_true")]
    pub per_run: bool,
    /// Project embeddings onto the unit sphere first.
    #[serde(default = "default_true")]
    pub normalize: bool,
}

impl StageConfig for IdConfig {
    fn resolve(&mut self, base: &Path) {
        for m in &mut self.manifests {
            fix(base, m);
        }
    }

    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    fn seed(&self) -> Option<u64> {
        Some(self.seed)
    }
}

/// Token surprisal matrix and its alignment sidecar for one language.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurprisalInput {
    pub name: String,
    pub matrix: PathBuf,
    pub alignment: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurprisalConfig {
    pub languages: Vec<SurprisalInput>,
}

impl StageConfig for SurprisalConfig {
    fn resolve(&mut self, base: &Path) {
        for l in &mut self.languages {
            fix(base, &mut l.matrix);
            fix(base, &mut l.alignment);
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportLanguage {
    pub name: String,
    pub scores: PathBuf,
    /// `layer-compare` output for this language.
    #[serde(default)]
    pub layer_fractions: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub languages: Vec<ReportLanguage>,
    #[serde(default)]
    pub atlas: Option<PathBuf>,
    #[serde(default = "default_q")]
    pub q: f64,
    /// Layer for the overlap table; the layer with the most significant ROIs
    /// summed over languages when absent.
    #[serde(default)]
    pub overlap_layer: Option<u32>,
    /// `model-compare` output table.
    #[serde(default)]
    pub model_compare: Option<PathBuf>,
    /// `surprisal` layer means table.
    #[serde(default)]
    pub surprisal: Option<PathBuf>,
    /// `id` output table.
    #[serde(default)]
    pub id: Option<PathBuf>,
}

impl StageConfig for ReportConfig {
    fn resolve(&mut self, base: &Path) {
        for l in &mut self.languages {
            fix(base, &mut l.scores);
            if let Some(p) = &mut l.layer_fractions {
                fix(base, p);
            }
        }
        for p in [
            &mut self.atlas,
            &mut self.model_compare,
            &mut self.surprisal,
            &mut self.id,
        ]
        .into_iter()
        .flatten()
        {
            fix(base, p);
        }
    }
}
