//! Labelled term datasets stored as `term,label` CSV.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::LabelSet;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("row {row}: empty term")]
    EmptyTerm { row: usize },
    #[error("row {row}: label {label:?} is not in the label set")]
    UnknownLabel { row: usize, label: String },
    #[error("dataset is empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub term: String,
    pub label: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub rows: Vec<Example>,
}

impl Dataset {
    pub fn new(rows: Vec<Example>) -> Result<Self, DatasetError> {
        if rows.is_empty() {
            return Err(DatasetError::Empty);
        }
        if let Some(row) = rows.iter().position(|e| e.term.trim().is_empty()) {
            return Err(DatasetError::EmptyTerm { row: row + 1 });
        }
        Ok(Dataset { rows })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let wrap = |source| DatasetError::Csv {
            path: path.display().to_string(),
            source,
        };
        let mut reader = csv::Reader::from_path(path).map_err(wrap)?;
        let rows = reader
            .deserialize()
            .collect::<Result<Vec<Example>, _>>()
            .map_err(wrap)?;
        Self::new(rows)
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).expect("in-memory CSV write");
        }
        w.into_inner().expect("in-memory CSV flush")
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn terms(&self) -> Vec<&str> {
        self.rows.iter().map(|r| r.term.as_str()).collect()
    }

    /// Distinct labels in order of first appearance.
    pub fn labels_in_order(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.label) {
                seen.push(r.label.clone());
            }
        }
        seen
    }

    pub fn label_ids(&self, labels: &LabelSet) -> Result<Vec<usize>, DatasetError> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                labels.id(&r.label).ok_or_else(|| DatasetError::UnknownLabel {
                    row: i + 1,
                    label: r.label.clone(),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(term: &str, label: &str) -> Example {
        Example {
            term: term.into(),
            label: label.into(),
        }
    }

    #[test]
    fn csv_round_trip_with_quoting() {
        let d = Dataset::new(vec![ex("Apple, Inc.", "Stock Corporation"), ex("say \"hi\"", "Swap")]).unwrap();
        let bytes = d.to_csv();
        assert!(bytes.starts_with(b"term,label\n\"Apple, Inc.\""));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, &bytes).unwrap();
        assert_eq!(Dataset::load(&p).unwrap(), d);
    }

    #[test]
    fn validation() {
        assert!(matches!(Dataset::new(vec![]), Err(DatasetError::Empty)));
        assert!(matches!(
            Dataset::new(vec![ex("a", "x"), ex(" ", "x")]),
            Err(DatasetError::EmptyTerm { row: 2 })
        ));
        let d = Dataset::new(vec![ex("a", "x"), ex("b", "y"), ex("c", "x"), ex("d", "z")]).unwrap();
        assert_eq!(d.labels_in_order(), ["x", "y", "z"]);
        let labels = LabelSet::new(["y", "x"]).unwrap();
        assert!(matches!(d.label_ids(&labels), Err(DatasetError::UnknownLabel { row: 4, .. })));
        let labels = LabelSet::new(["y", "x", "z"]).unwrap();
        assert_eq!(d.label_ids(&labels).unwrap(), [1, 0, 1, 2]);
    }
}
