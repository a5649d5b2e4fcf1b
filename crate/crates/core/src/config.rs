//! Pipeline configuration (a single JSON document) and the named ablation
//! presets.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{FetcherConfig, DEFAULT_MATCH_THRESHOLD};
use crate::features::{FeatureError, HandcraftedConfig};
use crate::model::TrainConfig;
use crate::oov::{OovError, OovKind, OovStrategy};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("missing {0} path")]
    MissingPath(&'static str),
    #[error(transparent)]
    Oov(#[from] OovError),
    #[error(transparent)]
    Features(#[from] FeatureError),
}

/// The ablation ladder, from the embedding-only baseline to the full system
/// with definition augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    /// Embeddings only.
    Bl,
    /// + hand-crafted features.
    BlHf,
    /// + Levenshtein-nearest OOV replacement.
    BlHfOovl,
    /// + cosine distances to the labels.
    BlHfOovlD,
    /// + edit distances to the labels.
    BlHfOovlD2,
    /// n-gram OOV replacement instead of Levenshtein.
    BlHfOovmD2,
    /// + definition augmentation.
    BlHfOovmD2Aug,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::Bl,
        Preset::BlHf,
        Preset::BlHfOovl,
        Preset::BlHfOovlD,
        Preset::BlHfOovlD2,
        Preset::BlHfOovmD2,
        Preset::BlHfOovmD2Aug,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Bl => "BL",
            Preset::BlHf => "BL.HF",
            Preset::BlHfOovl => "BL.HF.OOVl",
            Preset::BlHfOovlD => "BL.HF.OOVl.D",
            Preset::BlHfOovlD2 => "BL.HF.OOVl.D2",
            Preset::BlHfOovmD2 => "BL.HF.OOVm.D2",
            Preset::BlHfOovmD2Aug => "BL.HF.OOVm.D2.+",
        }
    }

    pub fn oov(self) -> OovKind {
        match self {
            Preset::Bl | Preset::BlHf => OovKind::Zero,
            Preset::BlHfOovl | Preset::BlHfOovlD | Preset::BlHfOovlD2 => OovKind::Levenshtein,
            Preset::BlHfOovmD2 | Preset::BlHfOovmD2Aug => OovKind::Ngram,
        }
    }

    pub fn handcrafted(self) -> bool {
        self != Preset::Bl
    }

    pub fn cosine(self) -> bool {
        !matches!(self, Preset::Bl | Preset::BlHf | Preset::BlHfOovl)
    }

    pub fn edit(self) -> bool {
        matches!(self, Preset::BlHfOovlD2 | Preset::BlHfOovmD2 | Preset::BlHfOovmD2Aug)
    }

    pub fn augmentation(self) -> bool {
        self == Preset::BlHfOovmD2Aug
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let canonical = s.replace('²', "2");
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(&canonical))
            .ok_or_else(|| ConfigError::UnknownPreset(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub embeddings: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    /// Label order; inferred from the dataset when absent.
    pub labels: Option<Vec<String>>,
    pub preset: Option<String>,

    pub oov_strategy: OovKind,
    pub ngram_min: usize,
    pub ngram_max: usize,

    pub handcrafted: bool,
    pub indicators: Vec<String>,
    pub case_sensitive: bool,
    pub cosine_features: bool,
    pub edit_features: bool,

    pub augmentation: bool,
    pub snapshot: Option<PathBuf>,
    pub match_threshold: f64,
    pub fetcher: FetcherConfig,

    pub c_grid: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub grad_tol: f64,

    pub out_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        PipelineConfig {
            embeddings: None,
            dataset: None,
            labels: None,
            preset: None,
            oov_strategy: OovKind::Ngram,
            ngram_min: OovStrategy::DEFAULT_NGRAM_MIN,
            ngram_max: OovStrategy::DEFAULT_NGRAM_MAX,
            handcrafted: true,
            indicators: HandcraftedConfig::default().indicators().to_vec(),
            case_sensitive: true,
            cosine_features: true,
            edit_features: true,
            augmentation: false,
            snapshot: None,
            match_threshold: DEFAULT_MATCH_THRESHOLD,
            fetcher: FetcherConfig::default(),
            c_grid: train.c_grid,
            folds: train.folds,
            seed: train.seed,
            max_iter: train.max_iter,
            grad_tol: train.grad_tol,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON config. Relative paths inside it are resolved against
    /// the config file's directory, and a `preset` key is applied.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text).map_err(|source| ConfigError::Json {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.embeddings, &mut cfg.dataset, &mut cfg.snapshot]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(name) = cfg.preset.clone() {
            cfg.apply_preset(name.parse()?);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Overwrites the feature and OOV switches with those of `preset`.
    pub fn apply_preset(&mut self, preset: Preset) {
        self.preset = Some(preset.name().to_string());
        self.oov_strategy = preset.oov();
        self.handcrafted = preset.handcrafted();
        self.cosine_features = preset.cosine();
        self.edit_features = preset.edit();
        self.augmentation = preset.augmentation();
    }

    pub fn with_preset(mut self, preset: Preset) -> Self {
        self.apply_preset(preset);
        self
    }

    pub fn oov(&self) -> Result<OovStrategy, ConfigError> {
        Ok(OovStrategy::with_ngram_range(self.oov_strategy, self.ngram_min, self.ngram_max)?)
    }

    pub fn handcrafted_config(&self) -> Result<Option<HandcraftedConfig>, ConfigError> {
        if !self.handcrafted {
            return Ok(None);
        }
        Ok(Some(HandcraftedConfig::new(self.indicators.clone(), self.case_sensitive)?))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            c_grid: self.c_grid.clone(),
            max_iter: self.max_iter,
            grad_tol: self.grad_tol,
            folds: self.folds,
            seed: self.seed,
        }
    }

    pub fn embeddings_path(&self) -> Result<&Path, ConfigError> {
        self.embeddings.as_deref().ok_or(ConfigError::MissingPath("embeddings"))
    }

    pub fn dataset_path(&self) -> Result<&Path, ConfigError> {
        self.dataset.as_deref().ok_or(ConfigError::MissingPath("dataset"))
    }
}
