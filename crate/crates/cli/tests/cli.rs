use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn termclass(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_termclass"))
        .args(args)
        .env_remove("TERMCLASS_FETCH_URL")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small synthetic set: 4 classes, 80 terms, 10-dimensional embeddings.
fn small_synth(dir: &Path) -> PathBuf {
    let out = dir.join("data");
    let o = termclass(&["synth", "--classes", "4", "--terms", "80", "--dim", "10", "--seed", "3", "--out", p(&out)]);
    assert!(o.status.success(), "{o:?}");
    out
}

fn read_csv_rows(path: &Path) -> Vec<(String, String)> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| {
            let (t, lab) = l.rsplit_once(',').unwrap();
            (t.trim_matches('"').to_string(), lab.trim_matches('"').to_string())
        })
        .collect()
}

#[test]
fn usage_errors_exit_1_and_data_errors_exit_2() {
    assert_eq!(termclass(&[]).status.code(), Some(1));
    assert_eq!(termclass(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(termclass(&["cv", "--preset", "BL.XX"]).status.code(), Some(1));
    assert_eq!(termclass(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let o = termclass(&["cv", "--config", p(&missing)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.json"));
    assert_eq!(termclass(&["synth", "--classes", "5", "--terms", "3", "--out", p(dir.path())]).status.code(), Some(2));
}

#[test]
fn synth_smallest_case_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = termclass(&["synth", "--classes", "2", "--terms", "2", "--seed", "9", "--out", p(out)]);
        assert!(o.status.success(), "{o:?}");
    }
    let rows = read_csv_rows(&a.join("terms.csv"));
    let mut labels: Vec<&str> = rows.iter().map(|(_, l)| l.as_str()).collect();
    labels.sort();
    assert_eq!(labels, ["Equity Index", "Regulatory Agency"]);
    for f in ["terms.csv", "embeddings.txt", "definitions.json", "config.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn cv_writes_bounded_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path());
    let out = dir.path().join("cv");
    let o = termclass(&["cv", "--config", p(&data.join("config.json")), "--preset", "BL", "--out", p(&out)]);
    assert!(o.status.success(), "{o:?}");
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let mr = report["cv"]["mean_rank"].as_f64().unwrap();
    assert!((1.0..=4.0).contains(&mr), "{mr}");
    assert_eq!(report["feature_width"], 10);
    assert_eq!(report["grid"].as_array().unwrap().len(), 6);
    let text = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(text.contains("best_c: ") && text.contains("pooled.accuracy: "));
}

#[test]
fn train_then_predict_training_terms() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path());
    let config = data.join("config.json");
    let out = dir.path().join("run");
    let o = termclass(&["train", "--config", p(&config), "--preset", "BL.HF.OOVm.D2", "--out", p(&out)]);
    assert!(o.status.success(), "{o:?}");
    let model = out.join("model.txt");
    assert!(std::fs::read_to_string(&model).unwrap().starts_with("termclass-model v1\n"));

    let terms = data.join("terms.csv");
    let o = termclass(&[
        "predict", "--config", p(&config), "--preset", "BL.HF.OOVm.D2", "--out", p(&out), "--model", p(&model), "--terms", p(&terms),
    ]);
    assert!(o.status.success(), "{o:?}");
    let rows = read_csv_rows(&terms);
    let lines: Vec<Value> = std::fs::read_to_string(out.join("predictions.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), rows.len());
    let mut hits = 0;
    for (pred, (term, label)) in lines.iter().zip(&rows) {
        assert_eq!(pred["term"], term.as_str());
        let top3: Vec<&str> = pred["top3"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
        let probs: Vec<f64> = pred["probs"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert_eq!(top3.len(), 3);
        assert!(probs.windows(2).all(|w| w[0] >= w[1]), "{probs:?}");
        hits += usize::from(top3[0] == label);
    }
    assert!(hits as f64 >= 0.95 * rows.len() as f64, "{hits}/{}", rows.len());

    // a model trained under another label order is rejected
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(&config).unwrap()).unwrap();
    cfg["labels"].as_array_mut().unwrap().reverse();
    let other = data.join("reversed.json");
    std::fs::write(&other, cfg.to_string()).unwrap();
    let o = termclass(&[
        "predict", "--config", p(&other), "--preset", "BL.HF.OOVm.D2", "--out", p(&out), "--model", p(&model), "--terms", p(&terms),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("labels"));
}

fn toy_inputs(dir: &Path, rows: &[(&str, &str)]) -> PathBuf {
    std::fs::write(dir.join("emb.txt"), "3 2\nbond 1 0\nswap 0 1\nrate 0.5 0.5\n").unwrap();
    let mut csv = String::from("term,label\n");
    for (t, l) in rows {
        csv.push_str(&format!("{t},{l}\n"));
    }
    std::fs::write(dir.join("terms.csv"), csv).unwrap();
    let config = dir.join("config.json");
    std::fs::write(
        &config,
        r#"{"embeddings": "emb.txt", "dataset": "terms.csv", "snapshot": "defs.json", "fetcher": {"rate_limit": 0, "timeout_secs": 5}}"#,
    )
    .unwrap();
    config
}

#[test]
fn inspect_oov_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy_inputs(dir.path(), &[("bond rate", "Bonds"), ("Swap", "Swap")]);
    let o = termclass(&["inspect-oov", "--config", p(&config), "--out", p(dir.path())]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(stdout(&o), "");

    let config = toy_inputs(dir.path(), &[("bondz", "Bonds"), ("swap", "Swap")]);
    let o = termclass(&["inspect-oov", "--config", p(&config), "--preset", "BL.HF", "--out", p(dir.path())]);
    assert_eq!(stdout(&o), "bondz → ZERO\n");
    let o = termclass(&["inspect-oov", "--config", p(&config), "--preset", "BL.HF.OOVl", "--out", p(dir.path())]);
    assert_eq!(stdout(&o), "bondz → bond\n");
    assert_eq!(std::fs::read_to_string(dir.path().join("oov.txt")).unwrap(), "bondz → bond\n");
}

/// Serves `GET /define?term=...` until the test process exits: known terms
/// get a JSON definition, everything else a 404.
fn mock_dictionary() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            loop {
                let mut header = String::new();
                if reader.read_line(&mut header).unwrap() == 0 || header == "\r\n" {
                    break;
                }
            }
            let term = request_line
                .split_whitespace()
                .nth(1)
                .and_then(|target| target.split_once("term=").map(|(_, t)| t.to_string()))
                .unwrap_or_default()
                .replace("%20", " ")
                .replace('+', " ");
            let (status, body) = match term.as_str() {
                "bond rate" => ("200 OK", r#"{"headword": "Bond Rate", "definition": "A bond rate is a yield. More."}"#),
                "Swap" => ("200 OK", r#"{"headword": "swap", "definition": "A swap is a derivative."}"#),
                _ => ("404 Not Found", ""),
            };
            let _ = write!(
                stream,
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    format!("http://{addr}/define")
}

#[test]
fn augment_fetch_then_apply() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy_inputs(dir.path(), &[("bond rate", "Bonds"), ("Swap", "Swap"), ("rate", "Bonds")]);
    let url = mock_dictionary();
    let o = Command::new(env!("CARGO_BIN_EXE_termclass"))
        .args(["augment-fetch", "--config", p(&config), "--out", p(dir.path())])
        .env("TERMCLASS_FETCH_URL", &url)
        .output()
        .unwrap();
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("requested 3, found 2, missing 1, warnings 0"), "{}", stdout(&o));
    let snapshot: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("defs.json")).unwrap()).unwrap();
    assert_eq!(snapshot["bond rate"], "A bond rate is a yield. More.");
    assert_eq!(snapshot["swap"], "A swap is a derivative.");

    let o = termclass(&["augment-apply", "--config", p(&config), "--out", p(dir.path())]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("coverage: 0.6667"), "{}", stdout(&o));
    let first: Value = serde_json::from_str(
        std::fs::read_to_string(dir.path().join("augmented.jsonl")).unwrap().lines().next().unwrap(),
    )
    .unwrap();
    assert_eq!(first["text"], "bond rate. A bond rate is a yield.");
}

#[test]
fn augment_fetch_survives_unreachable_service() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy_inputs(dir.path(), &[("bond", "Bonds"), ("swap", "Swap")]);
    // bind then drop to get a port nobody listens on
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let o = Command::new(env!("CARGO_BIN_EXE_termclass"))
        .args(["augment-fetch", "--config", p(&config)])
        .env("TERMCLASS_FETCH_URL", format!("http://127.0.0.1:{port}/define"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).contains("warnings 2"), "{}", stdout(&o));
    assert_eq!(std::fs::read_to_string(dir.path().join("defs.json")).unwrap(), "{}\n");
}
