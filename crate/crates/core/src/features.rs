//! Feature construction: term embedding, hand-crafted surface features, and
//! per-label cosine / edit distances, followed by min-max scaling to [-1, 1].
//!
//! Row layout is fixed: `[embedding | handcrafted(10) | cosine(K) | edit(K)]`,
//! with disabled blocks omitted.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::{EmbeddingError, EmbeddingStore, TermTokens};
use crate::oov::{levenshtein, OovResolver};

pub const INDICATOR_COUNT: usize = 7;
pub const HANDCRAFTED_WIDTH: usize = INDICATOR_COUNT + 3;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("expected {expected} columns, got {actual}")]
    ColumnMismatch { expected: usize, actual: usize },
    #[error("cannot fit a scaler on an empty matrix")]
    EmptyMatrix,
    #[error("exactly {INDICATOR_COUNT} indicator substrings are required, got {0}")]
    IndicatorCount(usize),
    #[error("a label set needs at least 2 labels, got {0}")]
    TooFewLabels(usize),
    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),
    #[error("term {0:?}: {1}")]
    Embedding(String, EmbeddingError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandcraftedConfig {
    indicators: Vec<String>,
    case_sensitive: bool,
}

impl Default for HandcraftedConfig {
    fn default() -> Self {
        HandcraftedConfig {
            indicators: ["Inc.", "Corp", "Ltd", "Bank", "Index", "Rate", "%"]
                .map(String::from)
                .to_vec(),
            case_sensitive: true,
        }
    }
}

impl HandcraftedConfig {
    pub fn new(indicators: Vec<String>, case_sensitive: bool) -> Result<Self, FeatureError> {
        if indicators.len() != INDICATOR_COUNT {
            return Err(FeatureError::IndicatorCount(indicators.len()));
        }
        Ok(HandcraftedConfig {
            indicators,
            case_sensitive,
        })
    }

    pub fn indicators(&self) -> &[String] {
        &self.indicators
    }

    pub fn case_sensitive(&self) -> bool {
        self.case_sensitive
    }
}

/// Seven substring indicators, then character count, uppercase count and
/// the uppercase / max(lowercase, 1) ratio. Meant for the original term, not
/// the augmented text.
pub fn handcrafted(term: &str, cfg: &HandcraftedConfig) -> [f64; HANDCRAFTED_WIDTH] {
    let mut out = [0.0; HANDCRAFTED_WIDTH];
    let folded = (!cfg.case_sensitive).then(|| term.to_lowercase());
    for (slot, needle) in out.iter_mut().zip(&cfg.indicators) {
        let hit = match &folded {
            Some(hay) => hay.contains(&needle.to_lowercase()),
            None => term.contains(needle.as_str()),
        };
        *slot = if hit { 1.0 } else { 0.0 };
    }
    let chars = term.chars().count();
    let upper = term.chars().filter(|c| c.is_uppercase()).count();
    let lower = term.chars().filter(|c| c.is_lowercase()).count();
    out[INDICATOR_COUNT] = chars as f64;
    out[INDICATOR_COUNT + 1] = upper as f64;
    out[INDICATOR_COUNT + 2] = upper as f64 / lower.max(1) as f64;
    out
}

/// `1 - cos(u, v)`, or 1 when either vector has zero norm.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64, FeatureError> {
    if u.len() != v.len() {
        return Err(FeatureError::LengthMismatch(u.len(), v.len()));
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Ok(1.0);
    }
    let cos = (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0);
    Ok(1.0 - cos)
}

/// Ordered class labels. The order is shared by features, model and metrics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSet {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self, FeatureError> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() < 2 {
            return Err(FeatureError::TooFewLabels(labels.len()));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(FeatureError::DuplicateLabel(l.clone()));
            }
        }
        Ok(LabelSet { labels, index })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn name(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    /// Label embeddings, each the sum of its token vectors.
    pub fn embed(
        &self,
        store: &EmbeddingStore,
        resolver: &OovResolver,
    ) -> Result<Vec<Vec<f64>>, FeatureError> {
        self.labels
            .iter()
            .map(|l| {
                store
                    .embed_term(&TermTokens::new(l.as_str()), resolver)
                    .map_err(|e| FeatureError::Embedding(l.clone(), e))
            })
            .collect()
    }
}

/// Cosine distances to every label vector, then edit distances to every
/// label name (both lowercased), in label order.
pub fn distance_features(
    term: &TermTokens,
    term_vec: &[f64],
    labels: &LabelSet,
    label_vectors: &[Vec<f64>],
) -> Result<Vec<f64>, FeatureError> {
    let mut out = Vec::with_capacity(2 * labels.len());
    for v in label_vectors {
        out.push(cosine_distance(term_vec, v)?);
    }
    out.extend(edit_distances(term.raw(), labels));
    Ok(out)
}

fn edit_distances<'a>(text: &str, labels: &'a LabelSet) -> impl Iterator<Item = f64> + 'a {
    let lowered = text.to_lowercase();
    labels
        .labels()
        .iter()
        .map(move |l| levenshtein(&lowered, &l.to_lowercase()) as f64)
}

/// Which blocks a feature row contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub dim: usize,
    pub labels: usize,
    pub handcrafted: bool,
    pub cosine: bool,
    pub edit: bool,
}

impl FeatureLayout {
    pub fn width(&self) -> usize {
        self.dim
            + if self.handcrafted { HANDCRAFTED_WIDTH } else { 0 }
            + if self.cosine { self.labels } else { 0 }
            + if self.edit { self.labels } else { 0 }
    }
}

/// Computes unscaled feature rows for terms against one store and label set.
pub struct FeatureExtractor<'a> {
    store: &'a EmbeddingStore,
    resolver: &'a OovResolver,
    labels: &'a LabelSet,
    label_vectors: Vec<Vec<f64>>,
    handcrafted: Option<HandcraftedConfig>,
    cosine: bool,
    edit: bool,
}

impl<'a> FeatureExtractor<'a> {
    pub fn new(
        store: &'a EmbeddingStore,
        resolver: &'a OovResolver,
        labels: &'a LabelSet,
        handcrafted: Option<HandcraftedConfig>,
        cosine: bool,
        edit: bool,
    ) -> Result<Self, FeatureError> {
        let label_vectors = labels.embed(store, resolver)?;
        Ok(FeatureExtractor {
            store,
            resolver,
            labels,
            label_vectors,
            handcrafted,
            cosine,
            edit,
        })
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout {
            dim: self.store.dim(),
            labels: self.labels.len(),
            handcrafted: self.handcrafted.is_some(),
            cosine: self.cosine,
            edit: self.edit,
        }
    }

    /// One unscaled row. `raw` is the original term (hand-crafted block);
    /// `text` is what gets embedded and compared against labels.
    pub fn row(&self, raw: &str, text: &str) -> Result<Vec<f64>, FeatureError> {
        let term = TermTokens::new(text);
        let mut row = self
            .store
            .embed_term(&term, self.resolver)
            .map_err(|e| FeatureError::Embedding(text.to_string(), e))?;
        if let Some(cfg) = &self.handcrafted {
            row.extend(handcrafted(raw, cfg));
        }
        if self.cosine {
            let term_vec = row[..self.store.dim()].to_vec();
            for v in &self.label_vectors {
                row.push(cosine_distance(&term_vec, v)?);
            }
        }
        if self.edit {
            row.extend(edit_distances(term.raw(), self.labels));
        }
        Ok(row)
    }

    /// Unscaled matrix, one row per `(raw, text)` pair.
    pub fn matrix<S: AsRef<str> + Sync>(&self, items: &[(S, S)]) -> Result<Array2<f64>, FeatureError> {
        let rows: Vec<Vec<f64>> = items
            .par_iter()
            .map(|(raw, text)| self.row(raw.as_ref(), text.as_ref()))
            .collect::<Result<_, _>>()?;
        let width = self.layout().width();
        let mut m = Array2::zeros((rows.len(), width));
        for (mut dst, src) in m.axis_iter_mut(Axis(0)).zip(&rows) {
            debug_assert_eq!(src.len(), width);
            dst.assign(&ArrayView1::from(src.as_slice()));
        }
        Ok(m)
    }

    /// Feature matrix for `items`, scaled with a scaler fitted on those rows.
    pub fn build<S: AsRef<str> + Sync>(
        &self,
        items: &[(S, S)],
    ) -> Result<(Array2<f64>, MinMaxScaler), FeatureError> {
        let raw = self.matrix(items)?;
        let scaler = MinMaxScaler::fit(&raw)?;
        let scaled = scaler.transform(&raw)?;
        Ok((scaled, scaler))
    }
}

/// Per-column affine map of the fitted `[min, max]` onto `[-1, 1]`.
/// Constant columns map to 0; values outside the fitted range are not clipped.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(x: &Array2<f64>) -> Result<Self, FeatureError> {
        if x.nrows() == 0 {
            return Err(FeatureError::EmptyMatrix);
        }
        let min = x
            .fold_axis(Axis(0), f64::INFINITY, |&a, &b| a.min(b))
            .to_vec();
        let max = x
            .fold_axis(Axis(0), f64::NEG_INFINITY, |&a, &b| a.max(b))
            .to_vec();
        Ok(MinMaxScaler { min, max })
    }

    pub fn from_bounds(min: Vec<f64>, max: Vec<f64>) -> Result<Self, FeatureError> {
        if min.len() != max.len() {
            return Err(FeatureError::LengthMismatch(min.len(), max.len()));
        }
        Ok(MinMaxScaler { min, max })
    }

    pub fn columns(&self) -> usize {
        self.min.len()
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    fn scale(&self, col: usize, v: f64) -> f64 {
        let (lo, hi) = (self.min[col], self.max[col]);
        if hi > lo {
            -1.0 + 2.0 * (v - lo) / (hi - lo)
        } else {
            0.0
        }
    }

    pub fn transform(&self, x: &Array2<f64>) -> Result<Array2<f64>, FeatureError> {
        if x.ncols() != self.columns() {
            return Err(FeatureError::ColumnMismatch {
                expected: self.columns(),
                actual: x.ncols(),
            });
        }
        let mut out = x.clone();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.scale(c, *v);
            }
        }
        Ok(out)
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>, FeatureError> {
        if row.len() != self.columns() {
            return Err(FeatureError::ColumnMismatch {
                expected: self.columns(),
                actual: row.len(),
            });
        }
        Ok(row.iter().enumerate().map(|(c, &v)| self.scale(c, v)).collect())
    }
}
