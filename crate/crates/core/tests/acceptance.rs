//! Acceptance checks, one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines are always printed.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use termclass::eval;
use termclass::model::{self, TrainConfig};
use termclass::oov::{levenshtein, Resolution};
use termclass::pipeline;
use termclass::synth::{self, SynthConfig, CLASS_DISTRIBUTION};
use termclass::{EmbeddingStore, MinMaxScaler, OovKind, OovResolver, OovStrategy, PipelineConfig, Preset};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($msg)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-scale..scale))
}

// 1 -----------------------------------------------------------------------

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..25 {
        let n = r.random_range(1..=20);
        let d = r.random_range(1..=10);
        let k = r.random_range(2..=5);
        let c = [0.01, 0.1, 1.0, 10.0][r.random_range(0..4)];
        let x = random_matrix(&mut r, n, d, 1.0);
        let y: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let w = random_matrix(&mut r, k, d, 0.5);
        let b = Array1::from_shape_fn(k, |_| r.random_range(-0.5..0.5));
        let analytic = model::evaluate(&x, &y, &w, &b, c);

        let mut max_diff: f64 = 0.0;
        let mut max_grad: f64 = 0.0;
        for i in 0..k {
            for j in 0..d {
                let (mut wp, mut wm) = (w.clone(), w.clone());
                wp[[i, j]] += h;
                wm[[i, j]] -= h;
                let fd = (model::loss(&x, &y, &wp, &b, c) - model::loss(&x, &y, &wm, &b, c)) / (2.0 * h);
                max_diff = max_diff.max((fd - analytic.grad_w[[i, j]]).abs());
                max_grad = max_grad.max(analytic.grad_w[[i, j]].abs());
            }
            let (mut bp, mut bm) = (b.clone(), b.clone());
            bp[i] += h;
            bm[i] -= h;
            let fd = (model::loss(&x, &y, &w, &bp, c) - model::loss(&x, &y, &w, &bm, c)) / (2.0 * h);
            max_diff = max_diff.max((fd - analytic.grad_b[i]).abs());
            max_grad = max_grad.max(analytic.grad_b[i].abs());
        }
        worst = worst.max(max_diff / max_grad.max(1e-8));
    }
    let elapsed = start.elapsed();
    ensure!(worst <= 1e-5, "max relative error {worst:.3e} > 1e-5");
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("max relative error {worst:.2e} over 25 instances in {elapsed:.2?}"))
}

// 2 -----------------------------------------------------------------------

/// Regularized softmax loss and gradient written out with plain loops.
fn oracle_loss_grad(x: &[Vec<f64>], y: &[usize], w: &[Vec<f64>], b: &[f64], c: f64) -> (f64, Vec<Vec<f64>>, Vec<f64>) {
    let k = w.len();
    let d = x[0].len();
    let mut gw = vec![vec![0.0; d]; k];
    let mut gb = vec![0.0; k];
    let mut total = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        let z: Vec<f64> = (0..k)
            .map(|c| b[c] + (0..d).map(|j| w[c][j] * xi[j]).sum::<f64>())
            .collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
        total += m + s.ln() - z[yi];
        for cl in 0..k {
            let p = (z[cl] - m).exp() / s - if cl == yi { 1.0 } else { 0.0 };
            gb[cl] += p;
            for j in 0..d {
                gw[cl][j] += p * xi[j];
            }
        }
    }
    for cl in 0..k {
        for j in 0..d {
            total += w[cl][j] * w[cl][j] / (2.0 * c);
            gw[cl][j] += w[cl][j] / c;
        }
    }
    (total, gw, gb)
}

fn convex_optimum() -> Outcome {
    let start = Instant::now();
    let (n, d, k, c) = (20, 4, 3, 1.0);
    let mut r = rng(2);
    let y: Vec<usize> = (0..n).map(|i| i % k).collect();
    // class-shifted Gaussian-ish clouds that overlap, so the optimum is interior
    let x: Vec<Vec<f64>> = y
        .iter()
        .map(|&cl| (0..d).map(|j| if j == cl { 1.0 } else { 0.0 } + r.random_range(-1.0..1.0)).collect())
        .collect();

    let lipschitz = 0.5 * x.iter().map(|xi| xi.iter().map(|v| v * v).sum::<f64>() + 1.0).sum::<f64>() + 1.0 / c;
    let step = 1.0 / lipschitz;
    let mut w = vec![vec![0.0; d]; k];
    let mut b = vec![0.0; k];
    let mut oracle = 0.0;
    for _ in 0..2_000_000 {
        let (l, gw, gb) = oracle_loss_grad(&x, &y, &w, &b, c);
        oracle = l;
        let g_inf = gw.iter().flatten().chain(&gb).fold(0.0f64, |m, g| m.max(g.abs()));
        if g_inf < 1e-10 {
            break;
        }
        for cl in 0..k {
            b[cl] -= step * gb[cl];
            for j in 0..d {
                w[cl][j] -= step * gw[cl][j];
            }
        }
    }

    let xm = Array2::from_shape_fn((n, d), |(i, j)| x[i][j]);
    let trained = model::train(&xm, &y, k, c, &TrainConfig::default()).map_err(|e| e.to_string())?;
    let wv: Vec<Vec<f64>> = trained.weights().rows().into_iter().map(|row| row.to_vec()).collect();
    let achieved = oracle_loss_grad(&x, &y, &wv, &trained.bias().to_vec(), c).0;
    let gap = (achieved - oracle).abs();
    let elapsed = start.elapsed();
    ensure!(gap <= 1e-6, "trained loss {achieved} vs oracle {oracle}: gap {gap:.3e}");
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("loss {achieved:.10} vs oracle {oracle:.10}, gap {gap:.1e}, {elapsed:.2?}"))
}

// 3 -----------------------------------------------------------------------

fn metric_oracles() -> Outcome {
    let mut r = rng(3);
    for case in 0..100 {
        let n = r.random_range(1..=50);
        let k = r.random_range(2..=5);
        let gold: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let ranked: Vec<Vec<usize>> = (0..n)
            .map(|_| {
                let mut perm: Vec<usize> = (0..k).collect();
                perm.shuffle(&mut r);
                perm.truncate(3);
                perm
            })
            .collect();
        let top1: Vec<usize> = ranked.iter().map(|l| l[0]).collect();

        let correct = (0..n).filter(|&i| top1[i] == gold[i]).count();
        let acc = eval::accuracy(&top1, &gold).map_err(|e| e.to_string())?;
        ensure!(acc == correct as f64 / n as f64, "case {case}: accuracy {acc} vs {correct}/{n}");

        let mut rank_sum = 0;
        for i in 0..n {
            let mut rank = 4;
            for (pos, &l) in ranked[i].iter().enumerate() {
                if l == gold[i] {
                    rank = pos + 1;
                    break;
                }
            }
            rank_sum += rank;
        }
        let mr = eval::mean_rank(&ranked, &gold).map_err(|e| e.to_string())?;
        ensure!(mr == rank_sum as f64 / n as f64, "case {case}: mean rank {mr} vs {rank_sum}/{n}");
        ensure!((1.0..=4.0).contains(&mr), "case {case}: mean rank {mr} outside [1, 4]");

        let mut f1_sum = 0.0;
        for cl in 0..k {
            let (mut tp, mut fp, mut fneg) = (0, 0, 0);
            for i in 0..n {
                match (top1[i] == cl, gold[i] == cl) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    _ => {}
                }
            }
            let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let rc = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
            f1_sum += if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
        }
        let f1 = eval::macro_f1(&top1, &gold, k).map_err(|e| e.to_string())?.macro_f1;
        ensure!((f1 - f1_sum / k as f64).abs() <= 1e-12, "case {case}: macro F1 {f1} vs {}", f1_sum / k as f64);
    }
    let example = eval::mean_rank(&[vec![0, 1, 2], vec![1, 0, 2], vec![1, 2, 3]], &[0, 0, 0]).map_err(|e| e.to_string())?;
    ensure!(example == 7.0 / 3.0, "(1+2+4)/3 example gave {example}");
    Ok("100 random prediction sets agree; (1+2+4)/3 = 7/3".into())
}

// 4 -----------------------------------------------------------------------

fn reference_levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in t.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in t[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = t[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            t[i][j] = sub.min(t[i - 1][j] + 1).min(t[i][j - 1] + 1);
        }
    }
    t[a.len()][b.len()]
}

fn random_word(r: &mut ChaCha8Rng, alphabet: &[char], min: usize, max: usize) -> String {
    let len = r.random_range(min..=max);
    (0..len).map(|_| alphabet[r.random_range(0..alphabet.len())]).collect()
}

fn edit_distance_oracle() -> Outcome {
    let mut r = rng(4);
    let alphabet = ['a', 'b', 'c', 'd', 'é', 'x'];
    for _ in 0..1000 {
        let a = random_word(&mut r, &alphabet, 0, 12);
        let b = random_word(&mut r, &alphabet, 0, 12);
        let (got, want) = (levenshtein(&a, &b), reference_levenshtein(&a, &b));
        ensure!(got == want, "levenshtein({a:?}, {b:?}) = {got}, reference {want}");
    }
    Ok("1000 random pairs match the reference".into())
}

// 5 -----------------------------------------------------------------------

fn store_of(words: &[String]) -> Result<EmbeddingStore, String> {
    EmbeddingStore::from_entries(2, words.iter().enumerate().map(|(i, w)| (w.clone(), vec![i as f64, 1.0])))
        .map_err(|e| e.to_string())
}

fn oov_identity_and_optimality() -> Outcome {
    let mut r = rng(5);
    let alphabet: Vec<char> = "abcdefgh".chars().collect();
    for case in 0..100 {
        let size = r.random_range(1..=200);
        let vocab: Vec<String> = (0..size)
            .map(|_| random_word(&mut r, &alphabet, 1, 8))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let store = store_of(&vocab)?;
        let lev = OovResolver::new(&store, OovStrategy::new(OovKind::Levenshtein)).map_err(|e| e.to_string())?;
        let ngram = OovResolver::new(&store, OovStrategy::new(OovKind::Ngram)).map_err(|e| e.to_string())?;
        for (id, w) in vocab.iter().enumerate() {
            for resolver in [&lev, &ngram] {
                let res = store.lookup(w, resolver).resolution;
                ensure!(res == Resolution::InVocab(id), "case {case}: {w:?} resolved to {res:?}");
            }
            let nearest = lev.resolve_levenshtein(w).map_err(|e| e.to_string())?;
            ensure!(nearest == id, "case {case}: in-vocab {w:?} mapped to {:?}", vocab[nearest]);
        }
        for _ in 0..5 {
            let q = random_word(&mut r, &alphabet, 1, 10);
            let best = vocab
                .iter()
                .min_by(|a, b| {
                    reference_levenshtein(&q, a)
                        .cmp(&reference_levenshtein(&q, b))
                        .then(a.chars().count().cmp(&b.chars().count()))
                        .then(a.cmp(b))
                })
                .expect("non-empty vocab");
            let got = &vocab[lev.resolve_levenshtein(&q).map_err(|e| e.to_string())?];
            ensure!(got == best, "case {case}: {q:?} → {got:?}, exhaustive scan {best:?}");
        }
    }
    let fixture: Vec<String> = ["corporate", "bond", "option"].map(String::from).to_vec();
    let store = store_of(&fixture)?;
    let lev = OovResolver::new(&store, OovStrategy::new(OovKind::Levenshtein)).map_err(|e| e.to_string())?;
    let got = store.token(lev.resolve_levenshtein("asiacorporate").map_err(|e| e.to_string())?);
    ensure!(got == "corporate", "asiacorporate → {got}");
    Ok("identity, 100 exhaustive-scan vocabularies and asiacorporate → corporate".into())
}

// 6 -----------------------------------------------------------------------

fn stratification() -> Outcome {
    let labels: Vec<usize> = CLASS_DISTRIBUTION
        .iter()
        .enumerate()
        .flat_map(|(c, (_, n))| std::iter::repeat_n(c, *n))
        .collect();
    ensure!(labels.len() == 1050, "class counts sum to {}", labels.len());
    for seed in 0..5 {
        let folds = eval::stratified_kfold(&labels, 5, seed).map_err(|e| e.to_string())?;
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        ensure!(all == (0..1050).collect::<Vec<_>>(), "seed {seed}: folds do not partition the rows");
        for (c, (name, _)) in CLASS_DISTRIBUTION.iter().enumerate() {
            let counts: Vec<usize> = folds.iter().map(|f| f.iter().filter(|&&i| labels[i] == c).count()).collect();
            let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
            ensure!(spread <= 1, "seed {seed}: {name} fold counts {counts:?}");
        }
    }
    Ok("per-class fold counts differ by at most 1 over 5 seeds; folds partition 0..1050".into())
}

// 7 -----------------------------------------------------------------------

fn scaler() -> Outcome {
    let mut r = rng(7);
    for case in 0..20 {
        let rows = r.random_range(1..=60);
        let cols = r.random_range(1..=12);
        let mut x = random_matrix(&mut r, rows, cols, 50.0);
        let constant = r.random_range(0..cols);
        x.column_mut(constant).fill(3.25);
        let s = MinMaxScaler::fit(&x).map_err(|e| e.to_string())?;
        let t = s.transform(&x).map_err(|e| e.to_string())?;
        ensure!(t.iter().all(|v| (-1.0..=1.0).contains(v)), "case {case}: cell outside [-1, 1]");
        ensure!(t.column(constant).iter().all(|&v| v == 0.0), "case {case}: constant column not 0");
    }
    Ok("all training cells in [-1, 1]; constant columns map to 0".into())
}

// 8, 10, 11 ---------------------------------------------------------------

/// Generates the standard synthetic set into `dir` and returns its config.
fn synth_config(dir: &Path, cfg: &SynthConfig) -> Result<PipelineConfig, String> {
    let data = synth::generate(cfg).map_err(|e| e.to_string())?;
    data.write_to(dir, cfg.seed).map_err(|e| e.to_string())?;
    PipelineConfig::load(dir.join("config.json")).map_err(|e| e.to_string())
}

fn cv_reports(cfg: &PipelineConfig, out: &Path) -> Result<pipeline::CvRun, String> {
    let run = pipeline::run_cv(cfg).map_err(|e| e.to_string())?;
    run.write_reports(out).map_err(|e| e.to_string())?;
    Ok(run)
}

fn criterion8_run(dir: &Path) -> Result<(pipeline::CvRun, Duration), String> {
    let start = Instant::now();
    let cfg = synth_config(&dir.join("data"), &SynthConfig::default())?.with_preset(Preset::BlHfOovmD2);
    let run = cv_reports(&cfg, &dir.join("out"))?;
    Ok((run, start.elapsed()))
}

fn end_to_end(dir: &Path) -> Outcome {
    let (run, elapsed) = criterion8_run(dir)?;
    let cv = run.cv();
    ensure!(cv.accuracy >= 0.95, "CV accuracy {:.4} < 0.95", cv.accuracy);
    ensure!(cv.mean_rank <= 1.15, "CV mean rank {:.4} > 1.15", cv.mean_rank);
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "accuracy {:.4}, mean rank {:.4}, best C {} in {elapsed:.2?}",
        cv.accuracy,
        cv.mean_rank,
        run.search.best_c()
    ))
}

fn same_reports(a: &Path, b: &Path) -> Result<(), String> {
    for name in ["report.txt", "report.json"] {
        let x = std::fs::read(a.join(name)).map_err(|e| format!("{name}: {e}"))?;
        let y = std::fs::read(b.join(name)).map_err(|e| format!("{name}: {e}"))?;
        ensure!(x == y, "{name} differs between {} and {}", a.display(), b.display());
    }
    Ok(())
}

fn augmentation_equivalence(reference: &Path) -> Outcome {
    let data = reference.join("data");
    let snapshot = data.join("empty.json");
    std::fs::write(&snapshot, "{}\n").map_err(|e| e.to_string())?;
    let mut cfg = PipelineConfig::load(data.join("config.json"))
        .map_err(|e| e.to_string())?
        .with_preset(Preset::BlHfOovmD2Aug);
    cfg.snapshot = Some(snapshot);
    let out = reference.join("augmented-empty");
    let run = cv_reports(&cfg, &out)?;
    ensure!(run.coverage == Some(0.0), "coverage {:?}", run.coverage);
    same_reports(&reference.join("out"), &out)?;
    Ok("BL.HF.OOVm.D2.+ with an empty dictionary reports byte-identically to BL.HF.OOVm.D2".into())
}

fn determinism(reference: &Path, scratch: &Path) -> Outcome {
    criterion8_run(scratch)?;
    same_reports(&reference.join("out"), &scratch.join("out"))?;
    Ok("repeat of the end-to-end run wrote byte-identical report.txt and report.json".into())
}

// 9 -----------------------------------------------------------------------

fn ablation_direction(dir: &Path) -> Outcome {
    let mut lines = Vec::new();
    for seed in 1..=5 {
        let sc = SynthConfig {
            seed,
            plant_substrings: true,
            ..SynthConfig::default()
        };
        let base = synth_config(&dir.join(format!("seed{seed}")), &sc)?;
        let bl = pipeline::run_cv(&base.clone().with_preset(Preset::Bl)).map_err(|e| e.to_string())?.cv();
        let hf = pipeline::run_cv(&base.with_preset(Preset::BlHf)).map_err(|e| e.to_string())?.cv();
        ensure!(
            hf.accuracy >= bl.accuracy,
            "seed {seed}: BL.HF accuracy {:.4} < BL {:.4}",
            hf.accuracy,
            bl.accuracy
        );
        lines.push(format!("{:.3}→{:.3}", bl.accuracy, hf.accuracy));
    }
    Ok(format!("BL→BL.HF accuracy per seed: {}", lines.join(", ")))
}

// -------------------------------------------------------------------------

fn record(results: &mut Vec<bool>, n: usize, f: impl FnOnce() -> Outcome) {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    results.push(outcome.is_ok());
    match outcome {
        Ok(detail) => println!("PASS criterion {n}: {detail}"),
        Err(detail) => println!("FAIL criterion {n}: {detail}"),
    }
}

fn main() -> ExitCode {
    let root = tempfile::tempdir().expect("temp dir");
    let e2e: PathBuf = root.path().join("e2e");
    let mut results = Vec::new();
    record(&mut results, 1, gradient_check);
    record(&mut results, 2, convex_optimum);
    record(&mut results, 3, metric_oracles);
    record(&mut results, 4, edit_distance_oracle);
    record(&mut results, 5, oov_identity_and_optimality);
    record(&mut results, 6, stratification);
    record(&mut results, 7, scaler);
    record(&mut results, 8, || end_to_end(&e2e));
    record(&mut results, 9, || ablation_direction(&root.path().join("planted")));
    record(&mut results, 10, || augmentation_equivalence(&e2e));
    record(&mut results, 11, || determinism(&e2e, &root.path().join("repeat")));
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("{passed}/{} acceptance criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
