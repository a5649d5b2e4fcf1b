//! Word2vec text-format embedding store and OOV-aware term embedding.
//!
//! The file format is the plain word2vec text layout: a `<count> <dim>` header
//! followed by one `<token> <dim floats>` row per vocabulary entry.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::oov::{OovResolver, Resolution};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot read embeddings: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("cannot embed an empty term")]
    EmptyTerm,
}

fn parse_err(line: usize, msg: impl Into<String>) -> EmbeddingError {
    EmbeddingError::Parse {
        line,
        msg: msg.into(),
    }
}

/// Immutable vocabulary → vector table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    // row-major, vocab.len() * dim
    data: Vec<f64>,
}

impl EmbeddingStore {
    /// Builds a store from `(token, vector)` pairs, rejecting duplicates and
    /// rows whose length differs from `dim`.
    pub fn from_entries<I, S>(dim: usize, entries: I) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        if dim == 0 {
            return Err(parse_err(0, "dimension must be positive"));
        }
        let mut store = EmbeddingStore {
            dim,
            vocab: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        };
        for (row, (token, vector)) in entries.into_iter().enumerate() {
            store.push(row + 1, token.into(), &vector)?;
        }
        Ok(store)
    }

    fn push(&mut self, line: usize, token: String, vector: &[f64]) -> Result<(), EmbeddingError> {
        if vector.len() != self.dim {
            return Err(parse_err(
                line,
                format!("row length {} ≠ dim {}", vector.len(), self.dim),
            ));
        }
        if let Some(v) = vector.iter().find(|v| !v.is_finite()) {
            return Err(parse_err(line, format!("non-finite value {v} for {token:?}")));
        }
        if self.index.contains_key(&token) {
            return Err(parse_err(line, format!("duplicate token {token:?}")));
        }
        self.index.insert(token.clone(), self.vocab.len());
        self.vocab.push(token);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let file = File::open(path.as_ref())?;
        Self::read(BufReader::new(file))
    }

    /// Parses word2vec text format. Errors name the 1-based line number.
    pub fn read<R: Read>(reader: R) -> Result<Self, EmbeddingError> {
        let mut lines = BufReader::new(reader).lines();
        let header = match lines.next() {
            Some(line) => line?,
            None => return Err(parse_err(1, "missing header")),
        };
        let mut fields = header.split_whitespace();
        let (count, dim) = match (fields.next(), fields.next(), fields.next()) {
            (Some(c), Some(d), None) => {
                let count: usize = c
                    .parse()
                    .map_err(|_| parse_err(1, format!("malformed header {header:?}")))?;
                let dim: usize = d
                    .parse()
                    .map_err(|_| parse_err(1, format!("malformed header {header:?}")))?;
                (count, dim)
            }
            _ => return Err(parse_err(1, format!("malformed header {header:?}"))),
        };
        if dim == 0 {
            return Err(parse_err(1, "dimension must be positive"));
        }

        let mut store = EmbeddingStore {
            dim,
            vocab: Vec::with_capacity(count),
            index: HashMap::with_capacity(count),
            data: Vec::with_capacity(count * dim),
        };
        let mut values = Vec::with_capacity(dim);
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if store.len() == count {
                return Err(parse_err(
                    lineno,
                    format!("more rows than the {count} declared in the header"),
                ));
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().expect("non-empty line has a first field");
            values.clear();
            for part in parts {
                let v: f64 = part
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("invalid number {part:?}")))?;
                values.push(v);
            }
            store.push(lineno, token.to_string(), &values)?;
        }
        if store.len() != count {
            return Err(parse_err(
                count + 1,
                format!("header declares {count} rows but file has {}", store.len()),
            ));
        }
        Ok(store)
    }

    /// Writes the store in word2vec text format. Values use shortest
    /// round-trip formatting so a reload is exact.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.len(), self.dim)?;
        for (id, token) in self.vocab.iter().enumerate() {
            write!(out, "{token}")?;
            for v in self.vector(id) {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn token(&self, id: usize) -> &str {
        &self.vocab[id]
    }

    pub fn vector(&self, id: usize) -> &[f64] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    /// Exact match first, then the lowercase form.
    pub fn find(&self, token: &str) -> Option<usize> {
        if let Some(&id) = self.index.get(token) {
            return Some(id);
        }
        let lower = token.to_lowercase();
        if lower != token {
            self.index.get(&lower).copied()
        } else {
            None
        }
    }

    /// Vector for `token`, delegating misses to `resolver`. Never fails: an
    /// unresolvable token gets the zero vector.
    pub fn lookup(&self, token: &str, resolver: &OovResolver) -> Lookup<'_> {
        let resolution = match self.find(token) {
            Some(id) => Resolution::InVocab(id),
            None => resolver.resolve(self, token),
        };
        let vector = match resolution {
            Resolution::InVocab(id) | Resolution::Replaced(id) => Some(self.vector(id)),
            Resolution::Zero => None,
        };
        Lookup {
            vector,
            resolution,
            dim: self.dim,
        }
    }

    /// Elementwise sum of the token vectors of `term`.
    pub fn embed_term(
        &self,
        term: &TermTokens,
        resolver: &OovResolver,
    ) -> Result<Vec<f64>, EmbeddingError> {
        if term.is_empty() {
            return Err(EmbeddingError::EmptyTerm);
        }
        let mut sum = vec![0.0; self.dim];
        for token in term.tokens() {
            if let Some(v) = self.lookup(token, resolver).vector {
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += x;
                }
            }
        }
        Ok(sum)
    }
}

/// Result of [`EmbeddingStore::lookup`].
#[derive(Debug, Clone, Copy)]
pub struct Lookup<'a> {
    vector: Option<&'a [f64]>,
    pub resolution: Resolution,
    dim: usize,
}

impl Lookup<'_> {
    pub fn to_vec(&self) -> Vec<f64> {
        match self.vector {
            Some(v) => v.to_vec(),
            None => vec![0.0; self.dim],
        }
    }

    pub fn is_zero_fallback(&self) -> bool {
        self.vector.is_none()
    }
}

/// A term split on whitespace. Punctuation stays attached, so "t-bill" and
/// "Inc." are single tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermTokens {
    raw: String,
    tokens: Vec<String>,
}

impl TermTokens {
    pub fn new(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let tokens = raw.split_whitespace().map(str::to_string).collect();
        TermTokens { raw, tokens }
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}
