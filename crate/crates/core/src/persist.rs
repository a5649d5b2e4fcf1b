//! Plain-text model file: a versioned header, the label order, C, the feature
//! layout, then the weights, biases and scaler bounds as decimal rows.
//!
//! ```text
//! termclass-model v1
//! labels 2
//! Bonds
//! Swap
//! c 0.1
//! dim 3
//! layout embedding=1 handcrafted=0 cosine=1 edit=0
//! weights
//! 0.5 -1 2
//! -0.5 1 -2
//! bias
//! 0.1 -0.1
//! scaler_min
//! ...
//! scaler_max
//! ...
//! ```
//!
//! Floats use shortest round-trip formatting, so a reloaded model predicts
//! bit-identically.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::features::{FeatureLayout, LabelSet, MinMaxScaler};
use crate::io::write_atomic;
use crate::model::LogRegModel;

pub const MAGIC: &str = "termclass-model v1";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file line {line}: {msg}")]
    Format { line: usize, msg: String },
}

/// Everything needed to score new terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub labels: LabelSet,
    pub layout: FeatureLayout,
    pub model: LogRegModel,
    pub scaler: MinMaxScaler,
}

fn row_text(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

impl ModelBundle {
    pub fn to_text(&self) -> String {
        let l = &self.layout;
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "labels {}", self.labels.len());
        for name in self.labels.labels() {
            let _ = writeln!(s, "{name}");
        }
        let _ = writeln!(s, "c {}", self.model.c());
        let _ = writeln!(s, "dim {}", self.model.dim());
        let _ = writeln!(
            s,
            "layout embedding={} handcrafted={} cosine={} edit={}",
            l.dim,
            u8::from(l.handcrafted),
            u8::from(l.cosine),
            u8::from(l.edit)
        );
        let _ = writeln!(s, "weights");
        for row in self.model.weights().rows() {
            let _ = writeln!(s, "{}", row_text(row.iter().copied()));
        }
        let _ = writeln!(s, "bias");
        let _ = writeln!(s, "{}", row_text(self.model.bias().iter().copied()));
        let _ = writeln!(s, "scaler_min");
        let _ = writeln!(s, "{}", row_text(self.scaler.min().iter().copied()));
        let _ = writeln!(s, "scaler_max");
        let _ = writeln!(s, "{}", row_text(self.scaler.max().iter().copied()));
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PersistError> {
        Ok(write_atomic(path, self.to_text().as_bytes())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PersistError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, PersistError> {
        let mut r = Reader {
            lines: text.lines().enumerate(),
            line: 0,
        };
        if r.next()? != MAGIC {
            return Err(r.err(format!("expected header {MAGIC:?}")));
        }
        let k: usize = r.keyed("labels")?;
        let names = (0..k).map(|_| r.next().map(str::to_string)).collect::<Result<Vec<_>, _>>()?;
        let labels = LabelSet::new(names).map_err(|e| r.err(e.to_string()))?;
        let c: f64 = r.keyed("c")?;
        let dim: usize = r.keyed("dim")?;
        let layout = r.layout(k)?;
        if layout.width() != dim {
            return Err(r.err(format!("layout width {} ≠ dim {dim}", layout.width())));
        }
        r.expect("weights")?;
        let mut weights = Array2::zeros((k, dim));
        for mut row in weights.rows_mut() {
            let values = r.floats(dim)?;
            row.assign(&Array1::from(values));
        }
        r.expect("bias")?;
        let bias = Array1::from(r.floats(k)?);
        r.expect("scaler_min")?;
        let min = r.floats(dim)?;
        r.expect("scaler_max")?;
        let max = r.floats(dim)?;
        let model = LogRegModel::from_parts(weights, bias, c).map_err(|e| r.err(e.to_string()))?;
        let scaler = MinMaxScaler::from_bounds(min, max).map_err(|e| r.err(e.to_string()))?;
        Ok(ModelBundle {
            labels,
            layout,
            model,
            scaler,
        })
    }
}

struct Reader<'a, I: Iterator<Item = (usize, &'a str)>> {
    lines: I,
    line: usize,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> Reader<'a, I> {
    fn err(&self, msg: impl Into<String>) -> PersistError {
        PersistError::Format {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn next(&mut self) -> Result<&'a str, PersistError> {
        match self.lines.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => {
                self.line += 1;
                Err(self.err("unexpected end of file"))
            }
        }
    }

    fn expect(&mut self, word: &str) -> Result<(), PersistError> {
        let l = self.next()?;
        if l != word {
            return Err(self.err(format!("expected {word:?}, found {l:?}")));
        }
        Ok(())
    }

    fn keyed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, PersistError> {
        let l = self.next()?;
        l.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| self.err(format!("expected \"{key} <value>\", found {l:?}")))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>, PersistError> {
        let l = self.next()?;
        let values = l
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| self.err(e.to_string()))?;
        if values.len() != n {
            return Err(self.err(format!("expected {n} values, found {}", values.len())));
        }
        Ok(values)
    }

    fn layout(&mut self, labels: usize) -> Result<FeatureLayout, PersistError> {
        let l = self.next()?;
        let mut fields = l.split(' ');
        if fields.next() != Some("layout") {
            return Err(self.err(format!("expected layout line, found {l:?}")));
        }
        let mut get = |key: &str| -> Option<usize> {
            fields.next()?.strip_prefix(key)?.strip_prefix('=')?.parse().ok()
        };
        let parsed = (|| {
            Some(FeatureLayout {
                dim: get("embedding")?,
                labels,
                handcrafted: get("handcrafted")? == 1,
                cosine: get("cosine")? == 1,
                edit: get("edit")? == 1,
            })
        })();
        parsed.ok_or_else(|| self.err(format!("malformed layout line {l:?}")))
    }
}
