//! Out-of-vocabulary resolution.
//!
//! Tokens missing from the embedding store are mapped to an in-vocabulary
//! substitute, either the Levenshtein-nearest word or the word with the highest
//! Jaccard similarity over character n-grams. All comparisons are done on
//! lowercased strings.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::EmbeddingStore;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OovError {
    #[error("invalid n-gram range [{min}, {max}]: need 1 <= min <= max")]
    InvalidRange { min: usize, max: usize },
    #[error("cannot resolve against an empty vocabulary")]
    EmptyVocabulary,
    #[error("unknown OOV strategy {0:?} (expected zero, levenshtein or ngram)")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OovKind {
    Zero,
    Levenshtein,
    Ngram,
}

impl FromStr for OovKind {
    type Err = OovError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero" => Ok(OovKind::Zero),
            "levenshtein" => Ok(OovKind::Levenshtein),
            "ngram" => Ok(OovKind::Ngram),
            other => Err(OovError::UnknownStrategy(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OovStrategy {
    pub kind: OovKind,
    pub ngram_min: usize,
    pub ngram_max: usize,
}

impl OovStrategy {
    pub const DEFAULT_NGRAM_MIN: usize = 3;
    pub const DEFAULT_NGRAM_MAX: usize = 6;

    pub fn new(kind: OovKind) -> Self {
        OovStrategy {
            kind,
            ngram_min: Self::DEFAULT_NGRAM_MIN,
            ngram_max: Self::DEFAULT_NGRAM_MAX,
        }
    }

    pub fn with_ngram_range(kind: OovKind, min: usize, max: usize) -> Result<Self, OovError> {
        let strategy = OovStrategy {
            kind,
            ngram_min: min,
            ngram_max: max,
        };
        strategy.validate()?;
        Ok(strategy)
    }

    pub fn validate(&self) -> Result<(), OovError> {
        if self.ngram_min == 0 || self.ngram_min > self.ngram_max {
            return Err(OovError::InvalidRange {
                min: self.ngram_min,
                max: self.ngram_max,
            });
        }
        Ok(())
    }
}

/// Levenshtein distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b, usize::MAX).expect("unbounded distance always completes")
}

/// Two-row DP that gives up (returns `None`) once every cell of a row
/// exceeds `bound`.
fn levenshtein_chars(a: &[char], b: &[char], bound: usize) -> Option<usize> {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    if a.len() - b.len() > bound {
        return None;
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        let mut row_min = cur[0];
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
            row_min = row_min.min(cur[j + 1]);
        }
        if row_min > bound {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let d = prev[b.len()];
    (d <= bound).then_some(d)
}

/// Distinct contiguous character n-grams of `s` with length in `[min, max]`.
pub fn char_ngrams(s: &str, min: usize, max: usize) -> BTreeSet<String> {
    let chars: Vec<char> = s.chars().collect();
    let mut grams = BTreeSet::new();
    for n in min..=max.min(chars.len()) {
        for window in chars.windows(n) {
            grams.insert(window.iter().collect());
        }
    }
    grams
}

/// Orders candidate `a` before `b` when it is shorter, then lexicographically
/// smaller.
fn shorter_then_lexicographic(a: &str, b: &str) -> Ordering {
    a.chars()
        .count()
        .cmp(&b.chars().count())
        .then_with(|| a.cmp(b))
}

/// Index of the candidate closest to `query` in edit distance. `lowered` holds
/// the lowercased candidates (the comparison form); `originals` the strings
/// used for tie-breaking.
fn nearest_by_levenshtein<S: AsRef<str>>(
    query: &str,
    lowered: &[Vec<char>],
    originals: &[S],
) -> Option<usize> {
    let query: Vec<char> = query.to_lowercase().chars().collect();
    let mut best: Option<(usize, usize)> = None;
    for (id, cand) in lowered.iter().enumerate() {
        let bound = best.map_or(usize::MAX, |(_, d)| d);
        let Some(d) = levenshtein_chars(&query, cand, bound) else {
            continue;
        };
        best = match best {
            None => Some((id, d)),
            Some((bid, bd)) => {
                let better = d < bd
                    || (d == bd
                        && shorter_then_lexicographic(
                            originals[id].as_ref(),
                            originals[bid].as_ref(),
                        ) == Ordering::Less);
                if better {
                    Some((id, d))
                } else {
                    Some((bid, bd))
                }
            }
        };
    }
    best.map(|(id, _)| id)
}

/// Levenshtein-nearest member of `candidates` (case-insensitive). Ties go to
/// the shorter candidate, then the lexicographically smaller one.
pub fn nearest_levenshtein<S: AsRef<str>>(query: &str, candidates: &[S]) -> Option<usize> {
    let lowered: Vec<Vec<char>> = candidates
        .iter()
        .map(|c| c.as_ref().to_lowercase().chars().collect())
        .collect();
    nearest_by_levenshtein(query, &lowered, candidates)
}

/// A scored n-gram match: Jaccard similarity `shared / union`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NgramMatch {
    pub id: usize,
    pub shared: usize,
    pub union: usize,
}

impl NgramMatch {
    pub fn score(&self) -> f64 {
        if self.union == 0 {
            0.0
        } else {
            self.shared as f64 / self.union as f64
        }
    }

    // exact rational comparison, no float ties
    fn cmp_score(&self, other: &NgramMatch) -> Ordering {
        (self.shared * other.union).cmp(&(other.shared * self.union))
    }
}

/// Inverted index from character n-gram to the words containing it.
#[derive(Debug, Clone)]
pub struct NgramIndex {
    min: usize,
    max: usize,
    words: Vec<String>,
    lowered: Vec<String>,
    gram_counts: Vec<usize>,
    grams: BTreeMap<String, Vec<usize>>,
}

impl NgramIndex {
    /// Indexes the lowercased form of every word for n in `[min, max]`.
    pub fn build<S: AsRef<str>>(words: &[S], min: usize, max: usize) -> Result<Self, OovError> {
        OovStrategy::with_ngram_range(OovKind::Ngram, min, max)?;
        let words: Vec<String> = words.iter().map(|w| w.as_ref().to_string()).collect();
        let lowered: Vec<String> = words.iter().map(|w| w.to_lowercase()).collect();
        let mut grams: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut gram_counts = Vec::with_capacity(words.len());
        for (id, word) in lowered.iter().enumerate() {
            let set = char_ngrams(word, min, max);
            gram_counts.push(set.len());
            for g in set {
                grams.entry(g).or_default().push(id);
            }
        }
        Ok(NgramIndex {
            min,
            max,
            words,
            lowered,
            gram_counts,
            grams,
        })
    }

    pub fn for_store(store: &EmbeddingStore, strategy: &OovStrategy) -> Result<Self, OovError> {
        Self::build(store.vocab(), strategy.ngram_min, strategy.ngram_max)
    }

    pub fn grams(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.grams
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Highest-Jaccard word sharing at least one n-gram with `query`. Ties go
    /// to the smaller edit distance, then shorter, then lexicographic.
    pub fn best_match(&self, query: &str) -> Option<NgramMatch> {
        let lowered = query.to_lowercase();
        let query_grams = char_ngrams(&lowered, self.min, self.max);
        let mut shared: BTreeMap<usize, usize> = BTreeMap::new();
        for g in &query_grams {
            if let Some(ids) = self.grams.get(g) {
                for &id in ids {
                    *shared.entry(id).or_default() += 1;
                }
            }
        }
        let mut best: Option<(NgramMatch, usize)> = None;
        for (id, count) in shared {
            let m = NgramMatch {
                id,
                shared: count,
                union: query_grams.len() + self.gram_counts[id] - count,
            };
            let Some((b, bd)) = best else {
                best = Some((m, levenshtein(&lowered, &self.lowered[id])));
                continue;
            };
            match m.cmp_score(&b) {
                Ordering::Greater => best = Some((m, levenshtein(&lowered, &self.lowered[id]))),
                Ordering::Less => {}
                Ordering::Equal => {
                    let d = levenshtein(&lowered, &self.lowered[id]);
                    let better = d < bd
                        || (d == bd
                            && shorter_then_lexicographic(&self.words[id], &self.words[b.id])
                                == Ordering::Less);
                    if better {
                        best = Some((m, d));
                    }
                }
            }
        }
        best.map(|(m, _)| m)
    }
}

/// How a token was mapped to a vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    InVocab(usize),
    Replaced(usize),
    Zero,
}

/// Resolves OOV tokens for one store. Results are memoized per token; the
/// cache is shared safely between threads.
#[derive(Debug)]
pub struct OovResolver {
    strategy: OovStrategy,
    lowered: Vec<Vec<char>>,
    vocab: Vec<String>,
    index: Option<NgramIndex>,
    cache: Mutex<HashMap<String, Resolution>>,
}

impl OovResolver {
    pub fn new(store: &EmbeddingStore, strategy: OovStrategy) -> Result<Self, OovError> {
        strategy.validate()?;
        let needs_vocab = strategy.kind != OovKind::Zero;
        let vocab: Vec<String> = if needs_vocab {
            store.vocab().to_vec()
        } else {
            Vec::new()
        };
        let lowered = vocab
            .iter()
            .map(|w| w.to_lowercase().chars().collect())
            .collect();
        let index = match strategy.kind {
            OovKind::Ngram => Some(NgramIndex::for_store(store, &strategy)?),
            _ => None,
        };
        Ok(OovResolver {
            strategy,
            lowered,
            vocab,
            index,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn strategy(&self) -> &OovStrategy {
        &self.strategy
    }

    /// Levenshtein-nearest vocabulary id for `token`.
    pub fn resolve_levenshtein(&self, token: &str) -> Result<usize, OovError> {
        nearest_by_levenshtein(token, &self.lowered, &self.vocab).ok_or(OovError::EmptyVocabulary)
    }

    /// Best n-gram Jaccard match, falling back to Levenshtein-nearest when no
    /// word shares an n-gram with `token`.
    pub fn resolve_ngram(&self, token: &str) -> Result<usize, OovError> {
        if self.vocab.is_empty() {
            return Err(OovError::EmptyVocabulary);
        }
        let best = self.index.as_ref().and_then(|index| index.best_match(token));
        match best {
            Some(m) => Ok(m.id),
            None => self.resolve_levenshtein(token),
        }
    }

    /// Resolution for a token already known to be out of vocabulary.
    pub fn resolve(&self, store: &EmbeddingStore, token: &str) -> Resolution {
        debug_assert!(self.vocab.is_empty() || self.vocab.len() == store.len());
        if self.strategy.kind == OovKind::Zero {
            return Resolution::Zero;
        }
        if let Some(&hit) = self.cache.lock().expect("resolver cache poisoned").get(token) {
            return hit;
        }
        let found = match self.strategy.kind {
            OovKind::Zero => unreachable!(),
            OovKind::Levenshtein => self.resolve_levenshtein(token),
            OovKind::Ngram => self.resolve_ngram(token),
        };
        let resolution = found.map_or(Resolution::Zero, Resolution::Replaced);
        self.cache
            .lock()
            .expect("resolver cache poisoned")
            .insert(token.to_string(), resolution);
        resolution
    }
}
