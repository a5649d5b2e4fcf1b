//! End-to-end runs: load inputs, build features for a configuration, cross
//! validate, train, predict and report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;
use thiserror::Error;

use crate::augment::{AugmentError, AugmentedTerm, Augmenter, DefinitionDict};
use crate::config::{ConfigError, PipelineConfig};
use crate::dataset::{Dataset, DatasetError};
use crate::embeddings::{EmbeddingError, EmbeddingStore, TermTokens};
use crate::eval::{EvalError, EvalReport};
use crate::features::{FeatureError, FeatureExtractor, FeatureLayout, LabelSet};
use crate::io::write_atomic;
use crate::model::{self, FoldMetrics, GridRow, GridSearch, ModelError};
use crate::oov::{OovError, OovResolver, Resolution};
use crate::persist::{ModelBundle, PersistError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("embeddings: {0}")]
    Embedding(#[from] EmbeddingError),
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Oov(#[from] OovError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("augmentation: {0}")]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("writing {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("reading {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model and configuration disagree: {0}")]
    Mismatch(String),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).map_err(|source| PipelineError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// The label set named in the config, or the dataset's labels in order of
/// first appearance.
pub fn label_set(cfg: &PipelineConfig, dataset: &Dataset) -> Result<LabelSet> {
    let names = match &cfg.labels {
        Some(l) => l.clone(),
        None => dataset.labels_in_order(),
    };
    Ok(LabelSet::new(names)?)
}

/// Loads the snapshot if augmentation is on.
pub fn definitions(cfg: &PipelineConfig) -> Result<Option<DefinitionDict>> {
    if !cfg.augmentation {
        return Ok(None);
    }
    let path = cfg.snapshot.as_deref().ok_or(ConfigError::MissingPath("snapshot"))?;
    Ok(Some(DefinitionDict::load(path)?))
}

/// `(raw, text)` pairs for feature extraction, plus the augmentation
/// coverage when augmentation is on.
pub fn feature_inputs<S: AsRef<str>>(
    terms: &[S],
    dict: Option<&DefinitionDict>,
    threshold: f64,
) -> (Vec<(String, String)>, Option<f64>) {
    match dict {
        None => (
            terms
                .iter()
                .map(|t| (t.as_ref().to_string(), t.as_ref().to_string()))
                .collect(),
            None,
        ),
        Some(dict) => {
            let (augmented, coverage) = Augmenter::new(dict, threshold).augment_all(terms);
            (augmented.into_iter().map(|a| (a.raw, a.text)).collect(), Some(coverage))
        }
    }
}

/// Everything loaded once per run.
pub struct Inputs {
    pub store: EmbeddingStore,
    pub dataset: Dataset,
    pub labels: LabelSet,
    pub y: Vec<usize>,
}

impl Inputs {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let store = EmbeddingStore::load(cfg.embeddings_path()?)?;
        let dataset = Dataset::load(cfg.dataset_path()?)?;
        let labels = label_set(cfg, &dataset)?;
        let y = dataset.label_ids(&labels)?;
        Ok(Inputs {
            store,
            dataset,
            labels,
            y,
        })
    }

    /// Unscaled features for the dataset under `cfg`, plus the augmentation
    /// coverage if augmentation is on.
    pub fn features(&self, cfg: &PipelineConfig) -> Result<(Array2<f64>, FeatureLayout, Option<f64>)> {
        let dict = definitions(cfg)?;
        let (items, coverage) = feature_inputs(&self.dataset.terms(), dict.as_ref(), cfg.match_threshold);
        let resolver = OovResolver::new(&self.store, cfg.oov()?)?;
        let extractor = FeatureExtractor::new(
            &self.store,
            &resolver,
            &self.labels,
            cfg.handcrafted_config()?,
            cfg.cosine_features,
            cfg.edit_features,
        )?;
        Ok((extractor.matrix(&items)?, extractor.layout(), coverage))
    }
}

/// Result of a cross-validated grid search.
pub struct CvRun {
    pub labels: LabelSet,
    pub layout: FeatureLayout,
    pub samples: usize,
    pub search: GridSearch,
    /// Metrics over the pooled out-of-fold predictions at the selected C.
    pub pooled: EvalReport,
    /// Fraction of terms that got a definition; `None` without augmentation.
    /// Kept out of the reports so an empty dictionary reports exactly like
    /// augmentation off.
    pub coverage: Option<f64>,
}

#[derive(Serialize)]
struct CvReportJson<'a> {
    samples: usize,
    labels: &'a [String],
    feature_width: usize,
    best_c: f64,
    cv: FoldMetrics,
    grid: &'a [GridRow],
    pooled: &'a EvalReport,
}

pub fn run_cv(cfg: &PipelineConfig) -> Result<CvRun> {
    let inputs = Inputs::load(cfg)?;
    run_cv_with(cfg, &inputs)
}

pub fn run_cv_with(cfg: &PipelineConfig, inputs: &Inputs) -> Result<CvRun> {
    let (x, layout, coverage) = inputs.features(cfg)?;
    let search = model::grid_search(&x, &inputs.y, inputs.labels.len(), &cfg.train_config())?;
    let pooled = EvalReport::evaluate(&search.oof_ranked, &inputs.y, &inputs.labels)?;
    Ok(CvRun {
        labels: inputs.labels.clone(),
        layout,
        samples: inputs.y.len(),
        search,
        pooled,
        coverage,
    })
}

impl CvRun {
    /// Mean-over-folds metrics at the selected C.
    pub fn cv(&self) -> FoldMetrics {
        let r = self.search.best_row();
        FoldMetrics {
            accuracy: r.accuracy,
            mean_rank: r.mean_rank,
            macro_f1: r.macro_f1,
        }
    }

    pub fn report_text(&self) -> String {
        let cv = self.cv();
        let mut s = String::new();
        let _ = writeln!(s, "samples: {}", self.samples);
        let _ = writeln!(s, "labels: {}", self.labels.len());
        let _ = writeln!(s, "feature_width: {}", self.layout.width());
        let _ = writeln!(s, "best_c: {}", self.search.best_c());
        let _ = writeln!(s, "cv.accuracy: {}", cv.accuracy);
        let _ = writeln!(s, "cv.mean_rank: {}", cv.mean_rank);
        let _ = writeln!(s, "cv.macro_f1: {}", cv.macro_f1);
        for row in &self.search.rows {
            let _ = writeln!(
                s,
                "grid[{}]: accuracy={} mean_rank={} macro_f1={}",
                row.c, row.accuracy, row.mean_rank, row.macro_f1
            );
            for (i, f) in row.folds.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "grid[{}].fold[{i}]: accuracy={} mean_rank={} macro_f1={}",
                    row.c, f.accuracy, f.mean_rank, f.macro_f1
                );
            }
        }
        self.pooled.write_text(&mut s, "pooled.");
        s
    }

    pub fn report_json(&self) -> String {
        let doc = CvReportJson {
            samples: self.samples,
            labels: self.labels.labels(),
            feature_width: self.layout.width(),
            best_c: self.search.best_c(),
            cv: self.cv(),
            grid: &self.search.rows,
            pooled: &self.pooled,
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
        s.push('\n');
        s
    }

    /// Writes `report.txt` and `report.json` into `dir`.
    pub fn write_reports(&self, dir: &Path) -> Result<[PathBuf; 2]> {
        std::fs::create_dir_all(dir).map_err(|source| PipelineError::Write {
            path: dir.display().to_string(),
            source,
        })?;
        let txt = dir.join("report.txt");
        let json = dir.join("report.json");
        write_file(&txt, self.report_text().as_bytes())?;
        write_file(&json, self.report_json().as_bytes())?;
        Ok([txt, json])
    }
}

/// Fits a model on the whole dataset. With several C values the C is chosen
/// by cross validation first.
pub fn train(cfg: &PipelineConfig) -> Result<(ModelBundle, Option<f64>)> {
    let inputs = Inputs::load(cfg)?;
    let (x, layout, coverage) = inputs.features(cfg)?;
    let tc = cfg.train_config();
    let k = inputs.labels.len();
    let (model, scaler) = if tc.c_grid.len() == 1 {
        tc.validate()?;
        let scaler = crate::features::MinMaxScaler::fit(&x)?;
        let model = model::train(&scaler.transform(&x)?, &inputs.y, k, tc.c_grid[0], &tc)?;
        (model, scaler)
    } else {
        let search = model::grid_search(&x, &inputs.y, k, &tc)?;
        (search.model, search.scaler)
    };
    Ok((
        ModelBundle {
            labels: inputs.labels,
            layout,
            model,
            scaler,
        },
        coverage,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub term: String,
    pub top3: Vec<String>,
    pub probs: Vec<f64>,
}

/// Checks that `bundle` was trained with the labels and feature layout that
/// `cfg` and `store` would produce.
pub fn check_compatible(cfg: &PipelineConfig, bundle: &ModelBundle, store: &EmbeddingStore) -> Result<()> {
    if let Some(labels) = &cfg.labels {
        if labels.as_slice() != bundle.labels.labels() {
            return Err(PipelineError::Mismatch(format!(
                "model labels {:?}, config labels {:?}",
                bundle.labels.labels(),
                labels
            )));
        }
    }
    let l = &bundle.layout;
    if l.dim != store.dim() {
        return Err(PipelineError::Mismatch(format!(
            "model embedding dim {}, store dim {}",
            l.dim,
            store.dim()
        )));
    }
    let flags = (cfg.handcrafted, cfg.cosine_features, cfg.edit_features);
    if (l.handcrafted, l.cosine, l.edit) != flags {
        return Err(PipelineError::Mismatch(format!(
            "model features (handcrafted, cosine, edit) = {:?}, config = {flags:?}",
            (l.handcrafted, l.cosine, l.edit)
        )));
    }
    Ok(())
}

pub fn predict<S: AsRef<str>>(cfg: &PipelineConfig, bundle: &ModelBundle, terms: &[S]) -> Result<Vec<Prediction>> {
    let store = EmbeddingStore::load(cfg.embeddings_path()?)?;
    check_compatible(cfg, bundle, &store)?;
    if let Some(i) = terms.iter().position(|t| t.as_ref().trim().is_empty()) {
        return Err(DatasetError::EmptyTerm { row: i + 1 }.into());
    }
    let dict = definitions(cfg)?;
    let (items, _) = feature_inputs(terms, dict.as_ref(), cfg.match_threshold);
    let resolver = OovResolver::new(&store, cfg.oov()?)?;
    let extractor = FeatureExtractor::new(
        &store,
        &resolver,
        &bundle.labels,
        cfg.handcrafted_config()?,
        cfg.cosine_features,
        cfg.edit_features,
    )?;
    let x = bundle.scaler.transform(&extractor.matrix(&items)?)?;
    let probs = bundle.model.predict_proba_matrix(&x)?;
    let ranked = bundle.model.rank_matrix(&x)?;
    Ok(terms
        .iter()
        .zip(ranked)
        .zip(probs.rows())
        .map(|((term, order), p)| Prediction {
            term: term.as_ref().to_string(),
            top3: order.iter().map(|&i| bundle.labels.name(i).to_string()).collect(),
            probs: order.iter().map(|&i| p[i]).collect(),
        })
        .collect())
}

pub fn predictions_jsonl(predictions: &[Prediction]) -> String {
    let mut s = String::new();
    for p in predictions {
        s.push_str(&serde_json::to_string(p).expect("prediction serializes"));
        s.push('\n');
    }
    s
}

/// Terms to score: a CSV with a `term` column, or one term per line.
pub fn read_terms(path: &Path) -> Result<Vec<String>> {
    let read_err = |source| PipelineError::Read {
        path: path.display().to_string(),
        source,
    };
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let mut reader = csv::Reader::from_path(path).map_err(|source| DatasetError::Csv {
            path: path.display().to_string(),
            source,
        })?;
        let col = reader
            .headers()
            .map_err(|source| DatasetError::Csv {
                path: path.display().to_string(),
                source,
            })?
            .iter()
            .position(|h| h == "term")
            .ok_or_else(|| {
                read_err(std::io::Error::new(std::io::ErrorKind::InvalidData, "no \"term\" column"))
            })?;
        let mut terms = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|source| DatasetError::Csv {
                path: path.display().to_string(),
                source,
            })?;
            terms.push(rec.get(col).unwrap_or_default().to_string());
        }
        return Ok(terms);
    }
    let text = std::fs::read_to_string(path).map_err(read_err)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// One out-of-vocabulary token and what it resolves to (`None` = zero vector).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OovRow {
    pub token: String,
    pub occurrences: usize,
    pub substitute: Option<String>,
}

/// OOV tokens of the dataset's terms in order of first appearance.
pub fn inspect_oov(cfg: &PipelineConfig, store: &EmbeddingStore, dataset: &Dataset) -> Result<Vec<OovRow>> {
    let resolver = OovResolver::new(store, cfg.oov()?)?;
    let mut rows: Vec<OovRow> = Vec::new();
    for term in dataset.terms() {
        for token in TermTokens::new(term).tokens() {
            if store.find(token).is_some() {
                continue;
            }
            if let Some(row) = rows.iter_mut().find(|r| r.token == *token) {
                row.occurrences += 1;
                continue;
            }
            let substitute = match store.lookup(token, &resolver).resolution {
                Resolution::InVocab(id) | Resolution::Replaced(id) => Some(store.token(id).to_string()),
                Resolution::Zero => None,
            };
            rows.push(OovRow {
                token: token.clone(),
                occurrences: 1,
                substitute,
            });
        }
    }
    Ok(rows)
}

pub fn oov_report(rows: &[OovRow]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = writeln!(s, "{} → {}", r.token, r.substitute.as_deref().unwrap_or("ZERO"));
    }
    s
}

/// Augments the dataset's terms against the configured snapshot.
pub fn augment_dataset(cfg: &PipelineConfig, dataset: &Dataset) -> Result<(Vec<AugmentedTerm>, f64)> {
    let path = cfg.snapshot.as_deref().ok_or(ConfigError::MissingPath("snapshot"))?;
    let dict = DefinitionDict::load(path)?;
    Ok(Augmenter::new(&dict, cfg.match_threshold).augment_all(&dataset.terms()))
}

pub fn augmented_jsonl(terms: &[AugmentedTerm]) -> String {
    let mut s = String::new();
    for t in terms {
        s.push_str(&serde_json::to_string(t).expect("augmented term serializes"));
        s.push('\n');
    }
    s
}
