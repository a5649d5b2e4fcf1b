//! Task metrics (accuracy, mean rank with a top-3 cutoff, macro F1) and
//! stratified k-fold splitting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::features::LabelSet;

/// Rank assigned when the gold label is missing from the top-3 list.
pub const MISS_RANK: usize = 4;
pub const TOP_K: usize = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("no predictions to evaluate")]
    Empty,
    #[error("{predictions} predictions for {gold} gold labels")]
    LengthMismatch { predictions: usize, gold: usize },
    #[error("ranked list of length {0} exceeds the top-{TOP_K} cutoff")]
    ListTooLong(usize),
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("cannot split {n} samples into {k} folds")]
    TooManyFolds { k: usize, n: usize },
    #[error("label index {index} out of range for {k} classes")]
    LabelOutOfRange { index: usize, k: usize },
}

fn check_lengths(predictions: usize, gold: usize) -> Result<(), EvalError> {
    if predictions != gold {
        return Err(EvalError::LengthMismatch { predictions, gold });
    }
    if gold == 0 {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Fraction of rank-1 predictions equal to the gold label.
pub fn accuracy(top1: &[usize], gold: &[usize]) -> Result<f64, EvalError> {
    check_lengths(top1.len(), gold.len())?;
    let correct = top1.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / gold.len() as f64)
}

/// 1-based position of `gold` in `ranked`, or [`MISS_RANK`].
pub fn rank_of(ranked: &[usize], gold: usize) -> usize {
    ranked
        .iter()
        .position(|&l| l == gold)
        .map_or(MISS_RANK, |p| p + 1)
}

pub fn mean_rank(ranked: &[Vec<usize>], gold: &[usize]) -> Result<f64, EvalError> {
    check_lengths(ranked.len(), gold.len())?;
    let mut total = 0usize;
    for (list, &g) in ranked.iter().zip(gold) {
        if list.len() > TOP_K {
            return Err(EvalError::ListTooLong(list.len()));
        }
        total += rank_of(list, g);
    }
    Ok(total as f64 / gold.len() as f64)
}

/// `confusion[gold][predicted]` counts.
pub fn confusion(top1: &[usize], gold: &[usize], k: usize) -> Result<Vec<Vec<usize>>, EvalError> {
    if top1.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            predictions: top1.len(),
            gold: gold.len(),
        });
    }
    let mut m = vec![vec![0usize; k]; k];
    for (&p, &g) in top1.iter().zip(gold) {
        for index in [p, g] {
            if index >= k {
                return Err(EvalError::LabelOutOfRange { index, k });
            }
        }
        m[g][p] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct F1Scores {
    pub macro_f1: f64,
    pub per_class: Vec<f64>,
}

/// Unweighted mean of per-class F1 over all `k` classes. Classes with
/// P + R = 0 (including ones absent from the split) score 0.
pub fn macro_f1(top1: &[usize], gold: &[usize], k: usize) -> Result<F1Scores, EvalError> {
    let m = confusion(top1, gold, k)?;
    let per_class: Vec<f64> = (0..k)
        .map(|c| {
            let tp = m[c][c] as f64;
            let gold_count: usize = m[c].iter().sum();
            let predicted: usize = m.iter().map(|row| row[c]).sum();
            let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let recall = if gold_count == 0 { 0.0 } else { tp / gold_count as f64 };
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        })
        .collect();
    let macro_f1 = if k == 0 {
        0.0
    } else {
        per_class.iter().sum::<f64>() / k as f64
    };
    Ok(F1Scores {
        macro_f1,
        per_class,
    })
}

/// Splits `0..labels.len()` into `k` folds. Each class's members are shuffled
/// with a seeded RNG and dealt round-robin, continuing the rotation from one
/// class to the next, so per-class fold counts differ by at most one.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, EvalError> {
    if k < 2 {
        return Err(EvalError::TooFewFolds(k));
    }
    if k > labels.len() {
        return Err(EvalError::TooManyFolds { k, n: labels.len() });
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassScore {
    pub label: String,
    pub f1: f64,
}

/// Metrics for one set of ranked predictions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub mean_rank: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<ClassScore>,
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn evaluate(ranked: &[Vec<usize>], gold: &[usize], labels: &LabelSet) -> Result<Self, EvalError> {
        check_lengths(ranked.len(), gold.len())?;
        let top1: Vec<usize> = ranked
            .iter()
            .map(|r| r.first().copied().unwrap_or(usize::MAX))
            .collect();
        let f1 = macro_f1(&top1, gold, labels.len())?;
        Ok(EvalReport {
            accuracy: accuracy(&top1, gold)?,
            mean_rank: mean_rank(ranked, gold)?,
            macro_f1: f1.macro_f1,
            per_class_f1: labels
                .labels()
                .iter()
                .zip(f1.per_class)
                .map(|(label, f1)| ClassScore {
                    label: label.clone(),
                    f1,
                })
                .collect(),
            confusion: confusion(&top1, gold, labels.len())?,
        })
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        self.write_text(&mut s, "");
        s
    }

    pub(crate) fn write_text(&self, s: &mut String, prefix: &str) {
        let _ = writeln!(s, "{prefix}accuracy: {}", self.accuracy);
        let _ = writeln!(s, "{prefix}mean_rank: {}", self.mean_rank);
        let _ = writeln!(s, "{prefix}macro_f1: {}", self.macro_f1);
        for c in &self.per_class_f1 {
            let _ = writeln!(s, "{prefix}f1[{}]: {}", c.label, c.f1);
        }
        for (c, row) in self.per_class_f1.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "{prefix}confusion[{}]: {}", c.label, cells.join(" "));
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2, 0], &[0, 1, 2, 1]).unwrap(), 0.75);
        assert_eq!(accuracy(&[1, 1], &[1, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[], &[]), Err(EvalError::Empty));
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn mean_rank_examples() {
        let ranked = vec![vec![0, 1, 2], vec![1, 0, 2], vec![1, 2, 3]];
        let r = mean_rank(&ranked, &[0, 0, 0]).unwrap();
        assert_eq!(r, 7.0 / 3.0);
        assert_eq!(mean_rank(&[vec![2], vec![5, 1]], &[2, 5]).unwrap(), 1.0);
        assert_eq!(mean_rank(&[vec![1, 2, 3]], &[0]).unwrap(), 4.0);
        assert_eq!(mean_rank(&[vec![0, 1, 2, 3]], &[0]), Err(EvalError::ListTooLong(4)));
        assert_eq!(mean_rank(&[], &[]), Err(EvalError::Empty));
    }

    #[test]
    fn macro_f1_examples() {
        // class 0: P=1 R=1 -> 1.0 ; class 1: P=1/2, R=1/2 -> 0.5
        let pred = [0, 0, 1, 1, 2];
        let gold = [0, 0, 1, 2, 1];
        let f = macro_f1(&pred[..4], &gold[..4], 2);
        assert!(f.is_err());
        let f = macro_f1(&[0, 0, 1, 1], &[0, 0, 1, 2], 3).unwrap();
        assert_eq!(f.per_class[0], 1.0);
        let f = macro_f1(&pred, &gold, 3).unwrap();
        assert_eq!(f.per_class[0], 1.0);
        assert_eq!(f.per_class[1], 0.5);
        assert_eq!(f.per_class[2], 0.0);
        assert_eq!(f.macro_f1, 0.5);

        let two = macro_f1(&[0, 0, 1, 1], &[0, 0, 1, 0], 2).unwrap();
        // class0: P=1, R=2/3 -> 0.8 ; class1: P=1/2, R=1 -> 2/3
        assert!((two.per_class[0] - 0.8).abs() < 1e-15);
        assert!((two.per_class[1] - 2.0 / 3.0).abs() < 1e-15);

        assert_eq!(macro_f1(&[0, 1], &[0, 1], 2).unwrap().macro_f1, 1.0);

        // class 2 is never predicted nor gold: counts as 0
        let absent = macro_f1(&[0, 1], &[0, 1], 3).unwrap();
        assert_eq!(absent.per_class[2], 0.0);
        assert!((absent.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    fn sorted_counts(folds: &[Vec<usize>], labels: &[usize], class: usize) -> Vec<usize> {
        let mut c: Vec<usize> = folds
            .iter()
            .map(|f| f.iter().filter(|&&i| labels[i] == class).count())
            .collect();
        c.sort_unstable_by(|a, b| b.cmp(a));
        c
    }

    #[test]
    fn kfold_examples() {
        let labels = vec![0; 8];
        let folds = stratified_kfold(&labels, 5, 1).unwrap();
        assert_eq!(sorted_counts(&folds, &labels, 0), [2, 2, 2, 1, 1]);

        let labels = vec![3; 286];
        let folds = stratified_kfold(&labels, 5, 1).unwrap();
        assert_eq!(sorted_counts(&folds, &labels, 3), [58, 57, 57, 57, 57]);

        let labels = vec![0; 5];
        let folds = stratified_kfold(&labels, 5, 9).unwrap();
        assert!(folds.iter().all(|f| f.len() == 1));

        assert_eq!(stratified_kfold(&[0, 1], 3, 0), Err(EvalError::TooManyFolds { k: 3, n: 2 }));
        assert_eq!(stratified_kfold(&[0, 1], 1, 0), Err(EvalError::TooFewFolds(1)));
    }

    #[test]
    fn report_text_is_stable() {
        let labels = LabelSet::new(["a", "b"]).unwrap();
        let r = EvalReport::evaluate(&[vec![0, 1], vec![0, 1]], &[0, 1], &labels).unwrap();
        assert_eq!(
            r.to_text(),
            "accuracy: 0.5\nmean_rank: 1.5\nmacro_f1: 0.3333333333333333\nf1[a]: 0.6666666666666666\nf1[b]: 0\nconfusion[a]: 1 0\nconfusion[b]: 1 0\n"
        );
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["mean_rank"], 1.5);
    }

    proptest! {
        #[test]
        fn folds_partition_and_balance(labels in proptest::collection::vec(0usize..6, 5..200), k in 2usize..6, seed in any::<u64>()) {
            prop_assume!(k <= labels.len());
            let folds = stratified_kfold(&labels, k, seed).unwrap();
            let mut all: Vec<usize> = folds.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            for class in 0..6 {
                let c = sorted_counts(&folds, &labels, class);
                prop_assert!(c[0] - c[c.len() - 1] <= 1);
            }
            prop_assert_eq!(&folds, &stratified_kfold(&labels, k, seed).unwrap());
        }

        #[test]
        fn mean_rank_bounds(lists in proptest::collection::vec((proptest::collection::vec(0usize..5, 0..=3), 0usize..5), 1..40)) {
            let (ranked, gold): (Vec<_>, Vec<_>) = lists.into_iter().unzip();
            let r = mean_rank(&ranked, &gold).unwrap();
            prop_assert!((1.0..=4.0).contains(&r));
            let all_first = ranked.iter().zip(&gold).all(|(l, g)| l.first() == Some(g));
            prop_assert_eq!(r == 1.0, all_first);
        }
    }
}
