//! Term augmentation with dictionary definitions.
//!
//! A term is matched against the dictionary headwords exactly (after
//! normalization) and otherwise by character n-gram Jaccard similarity. The
//! first sentence of the matched definition is appended to the term. The
//! pipeline only reads definitions from a JSON snapshot; [`fetch_definitions`]
//! builds that snapshot from any [`DefinitionSource`].

use std::collections::BTreeMap;
use std::path::Path;
use std::thread;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::write_atomic;
use crate::oov::NgramIndex;

/// Minimum Jaccard score for a fuzzy headword match.
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.2;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("definition text is empty")]
    EmptyDefinition,
    #[error("snapshot {path}: {source}")]
    Snapshot {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("snapshot {path} is not a JSON object of strings: {source}")]
    SnapshotFormat {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("request failed: {0}")]
    Transport(String),
    #[error("unexpected HTTP status {0}")]
    Status(u16),
    #[error("malformed response: {0}")]
    Malformed(String),
}

/// Lowercase with internal whitespace collapsed to single spaces.
pub fn normalize_headword(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Text up to and including the first '.' followed by whitespace or the end
/// of the text; the whole text if there is none.
pub fn first_sentence(definition: &str) -> Result<String, AugmentError> {
    let text = definition.trim();
    if text.is_empty() {
        return Err(AugmentError::EmptyDefinition);
    }
    let mut chars = text.char_indices().peekable();
    while let Some((i, ch)) = chars.next() {
        if ch == '.' {
            match chars.peek() {
                None => break,
                Some((_, next)) if next.is_whitespace() => {
                    return Ok(text[..=i].trim().to_string());
                }
                _ => {}
            }
        }
    }
    Ok(text.to_string())
}

/// Headword → definition map with normalized, unique keys.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DefinitionDict {
    entries: BTreeMap<String, String>,
}

impl DefinitionDict {
    pub fn new() -> Self {
        Self::default()
    }

    /// Later inserts for the same normalized headword replace earlier ones.
    pub fn insert(&mut self, headword: &str, definition: impl Into<String>) {
        self.entries.insert(normalize_headword(headword), definition.into());
    }

    pub fn get(&self, headword: &str) -> Option<&str> {
        self.entries.get(&normalize_headword(headword)).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn headwords(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        let raw: BTreeMap<String, String> = serde_json::from_str(json)?;
        let mut dict = DefinitionDict::new();
        for (k, v) in raw {
            dict.insert(&k, v);
        }
        Ok(dict)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.entries).expect("string map serializes");
        s.push('\n');
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AugmentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| AugmentError::Snapshot {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text).map_err(|source| AugmentError::SnapshotFormat {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AugmentError> {
        let path = path.as_ref();
        write_atomic(path, self.to_json().as_bytes()).map_err(|source| AugmentError::Snapshot {
            path: path.display().to_string(),
            source,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatchKind {
    Exact,
    Fuzzy { score: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TermMatch {
    pub headword: String,
    pub kind: MatchKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedTerm {
    pub raw: String,
    pub matched_headword: Option<String>,
    pub definition_sentence: Option<String>,
    /// `raw` when unmatched, else `"{raw}. {sentence}"`.
    pub text: String,
}

/// Matches terms against a dictionary.
pub struct Augmenter<'a> {
    dict: &'a DefinitionDict,
    headwords: Vec<String>,
    index: NgramIndex,
    threshold: f64,
}

impl<'a> Augmenter<'a> {
    pub fn new(dict: &'a DefinitionDict, threshold: f64) -> Self {
        let headwords: Vec<String> = dict.headwords().map(str::to_string).collect();
        let index = NgramIndex::build(&headwords, 3, 6).expect("default n-gram range is valid");
        Augmenter {
            dict,
            headwords,
            index,
            threshold,
        }
    }

    /// Exact match on the normalized term, else the best n-gram match if it
    /// clears the threshold.
    pub fn match_term(&self, term: &str) -> Option<TermMatch> {
        let normalized = normalize_headword(term);
        if self.dict.entries.contains_key(&normalized) {
            return Some(TermMatch {
                headword: normalized,
                kind: MatchKind::Exact,
            });
        }
        let m = self.index.best_match(&normalized)?;
        (m.score() >= self.threshold).then(|| TermMatch {
            headword: self.headwords[m.id].clone(),
            kind: MatchKind::Fuzzy { score: m.score() },
        })
    }

    pub fn augment(&self, raw: &str) -> AugmentedTerm {
        let found = self.match_term(raw).and_then(|m| {
            let definition = self.dict.entries.get(&m.headword)?;
            let sentence = first_sentence(definition).ok()?;
            Some((m.headword, sentence))
        });
        match found {
            Some((headword, sentence)) => AugmentedTerm {
                raw: raw.to_string(),
                text: format!("{raw}. {sentence}"),
                matched_headword: Some(headword),
                definition_sentence: Some(sentence),
            },
            None => AugmentedTerm {
                raw: raw.to_string(),
                matched_headword: None,
                definition_sentence: None,
                text: raw.to_string(),
            },
        }
    }

    /// Augments every term and reports the matched fraction.
    pub fn augment_all<S: AsRef<str>>(&self, terms: &[S]) -> (Vec<AugmentedTerm>, f64) {
        let out: Vec<AugmentedTerm> = terms.iter().map(|t| self.augment(t.as_ref())).collect();
        let matched = out.iter().filter(|a| a.matched_headword.is_some()).count();
        let coverage = if out.is_empty() {
            0.0
        } else {
            matched as f64 / out.len() as f64
        };
        (out, coverage)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct FetchedDefinition {
    pub headword: String,
    pub definition: String,
}

/// A remote dictionary queried one term at a time.
pub trait DefinitionSource {
    /// `Ok(None)` when the source has no entry for `term`.
    fn fetch(&self, term: &str) -> Result<Option<FetchedDefinition>, FetchError>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FetchSummary {
    pub requested: usize,
    pub found: usize,
    pub missing: usize,
    pub warnings: usize,
}

/// Queries every term, writes the collected definitions to `snapshot_out`
/// and returns them. Failed requests are logged and skipped; only a snapshot
/// write failure is an error.
pub fn fetch_definitions<S: AsRef<str>>(
    terms: &[S],
    source: &dyn DefinitionSource,
    min_interval: Option<Duration>,
    snapshot_out: impl AsRef<Path>,
) -> Result<(DefinitionDict, FetchSummary), AugmentError> {
    let mut dict = DefinitionDict::new();
    let mut summary = FetchSummary::default();
    for (i, term) in terms.iter().enumerate() {
        if i > 0 {
            if let Some(pause) = min_interval {
                thread::sleep(pause);
            }
        }
        let term = term.as_ref();
        summary.requested += 1;
        match source.fetch(term) {
            Ok(Some(found)) => {
                summary.found += 1;
                dict.insert(&found.headword, found.definition);
            }
            Ok(None) => summary.missing += 1,
            Err(e) => {
                summary.warnings += 1;
                warn!("skipping {term:?}: {e}");
            }
        }
    }
    dict.save(snapshot_out)?;
    Ok((dict, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FetcherConfig {
    pub base_url: String,
    pub timeout_secs: f64,
    /// Requests per second; 0 disables throttling.
    pub rate_limit: f64,
    pub user_agent: String,
}

impl Default for FetcherConfig {
    fn default() -> Self {
        FetcherConfig {
            base_url: "http://127.0.0.1:8080/define".into(),
            timeout_secs: 10.0,
            rate_limit: 1.0,
            user_agent: concat!("termclass/", env!("CARGO_PKG_VERSION")).into(),
        }
    }
}

impl FetcherConfig {
    pub fn min_interval(&self) -> Option<Duration> {
        (self.rate_limit > 0.0).then(|| Duration::from_secs_f64(1.0 / self.rate_limit))
    }
}

/// HTTP dictionary client. Sends `GET {base_url}?term=<term>` and expects a
/// JSON body `{"headword": ..., "definition": ...}`; a 404 means no entry.
pub struct HttpSource {
    agent: ureq::Agent,
    base_url: String,
}

impl HttpSource {
    pub fn new(cfg: &FetcherConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .user_agent(cfg.user_agent.as_str())
            .http_status_as_error(false)
            .build()
            .into();
        HttpSource {
            agent,
            base_url: cfg.base_url.clone(),
        }
    }
}

impl DefinitionSource for HttpSource {
    fn fetch(&self, term: &str) -> Result<Option<FetchedDefinition>, FetchError> {
        let mut resp = self
            .agent
            .get(&self.base_url)
            .query("term", term)
            .call()
            .map_err(|e| FetchError::Transport(e.to_string()))?;
        match resp.status().as_u16() {
            200 => {
                let body = resp
                    .body_mut()
                    .read_to_string()
                    .map_err(|e| FetchError::Transport(e.to_string()))?;
                serde_json::from_str(&body)
                    .map(Some)
                    .map_err(|e| FetchError::Malformed(e.to_string()))
            }
            404 => Ok(None),
            other => Err(FetchError::Status(other)),
        }
    }
}
