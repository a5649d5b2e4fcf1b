//! Synthetic term datasets for desk-scale runs.
//!
//! Each class gets a random unit-norm anchor; its vocabulary words are the
//! anchor plus Gaussian noise. Terms are 1-3 words from their class pool, a
//! fraction of them mangled into out-of-vocabulary variants (fused prefixes,
//! plurals, truncations). Class sizes follow the task's training-set
//! distribution scaled to `n`.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::augment::DefinitionDict;
use crate::config::PipelineConfig;
use crate::dataset::{Dataset, Example};
use crate::embeddings::EmbeddingStore;
use crate::io::write_atomic;

/// Training-set class frequencies, most frequent first.
pub const CLASS_DISTRIBUTION: [(&str, usize); 17] = [
    ("Equity Index", 286),
    ("Regulatory Agency", 205),
    ("Credit Index", 129),
    ("Central Securities Depository", 107),
    ("Debt pricing and yields", 58),
    ("Bonds", 55),
    ("Swap", 36),
    ("Stock Corporation", 25),
    ("Option", 24),
    ("Funds", 22),
    ("Future", 19),
    ("Credit Events", 18),
    ("Stocks", 17),
    ("MMIs", 17),
    ("Parametric schedules", 15),
    ("Forward", 9),
    ("Securities restrictions", 8),
];

const PLANTED_CLASS: &str = "Stock Corporation";
const PLANTED_CONFUSER: &str = "Stocks";
const PLANTED_SUFFIX: &str = "Inc.";
const OOV_PREFIXES: [&str; 4] = ["asia", "euro", "glob", "intl"];
const FILLER_WORDS: [&str; 14] = [
    "is", "a", "an", "the", "of", "that", "used", "for", "in", "which", "type", "financial",
    "instrument", "entity",
];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("need 2 <= classes <= 17, got {0}")]
    Classes(usize),
    #[error("need at least one term per class: n = {n} < k = {k}")]
    TooFewTerms { n: usize, k: usize },
    #[error("invalid generator parameter: {0}")]
    Parameter(String),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub terms: usize,
    pub seed: u64,
    pub dim: usize,
    pub sigma: f64,
    pub words_per_class: usize,
    /// Probability that a term word is replaced by an OOV variant.
    pub oov_rate: f64,
    /// Fraction of terms that get a dictionary definition.
    pub definition_coverage: f64,
    /// Put "Inc." on every term of the planted class and draw its words from
    /// a confuser class, so only the surface string separates the two.
    pub plant_substrings: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 17,
            terms: 1050,
            seed: 42,
            dim: 50,
            sigma: 0.1,
            words_per_class: 30,
            oov_rate: 0.15,
            definition_coverage: 0.7,
            plant_substrings: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub labels: Vec<String>,
    pub dataset: Dataset,
    pub store: EmbeddingStore,
    pub definitions: DefinitionDict,
}

/// Class sizes proportional to the first `k` reference frequencies, by
/// largest remainder, with at least one term per class.
pub fn class_counts(k: usize, n: usize) -> Result<Vec<usize>, SynthError> {
    if !(2..=CLASS_DISTRIBUTION.len()).contains(&k) {
        return Err(SynthError::Classes(k));
    }
    if n < k {
        return Err(SynthError::TooFewTerms { n, k });
    }
    let weights: Vec<usize> = CLASS_DISTRIBUTION[..k].iter().map(|(_, c)| *c).collect();
    let total: usize = weights.iter().sum();
    let mut counts: Vec<usize> = weights.iter().map(|w| w * n / total).collect();
    let mut order: Vec<usize> = (0..k).collect();
    // largest remainder first; earlier (bigger) classes win ties
    order.sort_by(|&a, &b| ((weights[b] * n) % total).cmp(&((weights[a] * n) % total)).then(a.cmp(&b)));
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().take(n - assigned) {
        counts[i] += 1;
    }
    for i in 0..k {
        while counts[i] == 0 {
            let donor = (0..k).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).expect("k >= 2");
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    Ok(counts)
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    const CONSONANTS: &[u8] = b"bcdfghjklmnprstvwz";
    const VOWELS: &[u8] = b"aeiou";
    let syllables = rng.random_range(3..=4);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(*CONSONANTS.choose(rng).expect("non-empty") as char);
        w.push(*VOWELS.choose(rng).expect("non-empty") as char);
    }
    if rng.random_bool(0.5) {
        w.push(*CONSONANTS.choose(rng).expect("non-empty") as char);
    }
    w
}

fn capitalize(w: &str) -> String {
    let mut chars = w.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// An OOV spelling of `word`, or `None` if every variant is in `taken`.
fn oov_variant(rng: &mut ChaCha8Rng, word: &str, taken: &HashSet<String>) -> Option<String> {
    let candidates = [
        format!("{}{word}", OOV_PREFIXES.choose(rng).expect("non-empty")),
        format!("{word}s"),
        word[..word.len() - 1].to_string(),
    ];
    let start = rng.random_range(0..candidates.len());
    (0..candidates.len())
        .map(|i| &candidates[(start + i) % candidates.len()])
        .find(|c| !taken.contains(*c))
        .cloned()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData, SynthError> {
    let counts = class_counts(cfg.classes, cfg.terms)?;
    if cfg.dim == 0 || cfg.words_per_class == 0 {
        return Err(SynthError::Parameter("dim and words_per_class must be positive".into()));
    }
    let noise = Normal::new(0.0, cfg.sigma).map_err(|e| SynthError::Parameter(e.to_string()))?;
    for (name, p) in [("oov_rate", cfg.oov_rate), ("definition_coverage", cfg.definition_coverage)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(SynthError::Parameter(format!("{name} must be in [0, 1]")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels: Vec<String> = CLASS_DISTRIBUTION[..cfg.classes]
        .iter()
        .map(|(l, _)| l.to_string())
        .collect();
    let anchors: Vec<Vec<f64>> = (0..cfg.classes).map(|_| unit_vector(&mut rng, cfg.dim)).collect();

    let mut entries: Vec<(String, Vec<f64>)> = Vec::new();
    let mut taken: HashSet<String> = HashSet::new();
    let noisy = |rng: &mut ChaCha8Rng, anchor: Option<&[f64]>| -> Vec<f64> {
        (0..cfg.dim)
            .map(|j| anchor.map_or(0.0, |a| a[j]) + noise.sample(rng))
            .collect()
    };

    for (c, label) in labels.iter().enumerate() {
        for token in label.split_whitespace().map(str::to_lowercase) {
            if taken.insert(token.clone()) {
                entries.push((token, noisy(&mut rng, Some(&anchors[c]))));
            }
        }
    }
    for w in FILLER_WORDS {
        if taken.insert(w.to_string()) {
            entries.push((w.to_string(), noisy(&mut rng, None)));
        }
    }
    let mut pools: Vec<Vec<String>> = Vec::with_capacity(cfg.classes);
    for anchor in &anchors {
        let mut pool = Vec::with_capacity(cfg.words_per_class);
        while pool.len() < cfg.words_per_class {
            let w = pseudo_word(&mut rng);
            if taken.insert(w.clone()) {
                entries.push((w.clone(), noisy(&mut rng, Some(anchor))));
                pool.push(w);
            }
        }
        pools.push(pool);
    }

    let planted = cfg
        .plant_substrings
        .then(|| {
            let target = labels.iter().position(|l| l == PLANTED_CLASS).unwrap_or(cfg.classes - 1);
            let confuser = labels
                .iter()
                .position(|l| l == PLANTED_CONFUSER)
                .unwrap_or(if target == 0 { 1 } else { 0 });
            (target, confuser)
        });

    let mut rows = Vec::with_capacity(cfg.terms);
    for (c, &count) in counts.iter().enumerate() {
        let pool = match planted {
            Some((target, confuser)) if target == c => &pools[confuser],
            _ => &pools[c],
        };
        for _ in 0..count {
            let n_words = rng.random_range(1..=3);
            let title = rng.random_bool(0.3);
            let mut words: Vec<String> = Vec::with_capacity(n_words + 1);
            for _ in 0..n_words {
                let base = pool.choose(&mut rng).expect("non-empty pool");
                let w = if rng.random_bool(cfg.oov_rate) {
                    oov_variant(&mut rng, base, &taken).unwrap_or_else(|| base.clone())
                } else {
                    base.clone()
                };
                words.push(if title { capitalize(&w) } else { w });
            }
            if matches!(planted, Some((target, _)) if target == c) {
                words.push(PLANTED_SUFFIX.to_string());
            }
            rows.push(Example {
                term: words.join(" "),
                label: labels[c].clone(),
            });
        }
    }
    rows.shuffle(&mut rng);

    let mut definitions = DefinitionDict::new();
    for row in &rows {
        if !rng.random_bool(cfg.definition_coverage) {
            continue;
        }
        let c = labels.iter().position(|l| *l == row.label).expect("own label");
        let hint = pools[c].choose(&mut rng).expect("non-empty pool");
        definitions.insert(
            &row.term,
            format!(
                "{} is a type of {} that {hint} entity. It is used in financial markets.",
                row.term,
                labels[c].to_lowercase(),
            ),
        );
    }

    let store = EmbeddingStore::from_entries(cfg.dim, entries)
        .expect("generated tokens are unique with the configured dimension");
    Ok(SynthData {
        labels,
        dataset: Dataset { rows },
        store,
        definitions,
    })
}

impl SynthData {
    /// Writes `terms.csv`, `embeddings.txt`, `definitions.json` and a
    /// `config.json` that points at them.
    pub fn write_to(&self, dir: impl AsRef<Path>, seed: u64) -> Result<PipelineConfig, SynthError> {
        let dir = dir.as_ref();
        let io = |path: &Path, source| SynthError::Io {
            path: path.display().to_string(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;

        let mut emb = Vec::new();
        self.store.write(&mut emb).expect("in-memory write");
        let files: [(&str, Vec<u8>); 3] = [
            ("terms.csv", self.dataset.to_csv()),
            ("embeddings.txt", emb),
            ("definitions.json", self.definitions.to_json().into_bytes()),
        ];
        for (name, bytes) in &files {
            let p = dir.join(name);
            write_atomic(&p, bytes).map_err(|e| io(&p, e))?;
        }

        let cfg = PipelineConfig {
            embeddings: Some("embeddings.txt".into()),
            dataset: Some("terms.csv".into()),
            snapshot: Some("definitions.json".into()),
            labels: Some(self.labels.clone()),
            seed,
            ..PipelineConfig::default()
        };
        let p = dir.join("config.json");
        write_atomic(&p, cfg.to_json().as_bytes()).map_err(|e| io(&p, e))?;
        Ok(cfg)
    }
}
