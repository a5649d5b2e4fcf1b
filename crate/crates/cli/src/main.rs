use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use termclass::augment::{fetch_definitions, HttpSource};
use termclass::pipeline::{self, PipelineError};
use termclass::synth::{self, SynthConfig};
use termclass::{Dataset, EmbeddingStore, ModelBundle, PipelineConfig, Preset};

/// Overrides the fetcher base URL from the config file.
const FETCH_URL_ENV: &str = "TERMCLASS_FETCH_URL";

#[derive(Parser)]
#[command(name = "termclass", version, about = "Financial term hypernym classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-validate the C grid and write report.txt / report.json.
    Cv(Common),
    /// Fit on the whole dataset and write model.txt.
    Train(Common),
    /// Score terms with a trained model, one JSON object per line.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// CSV with a `term` column, or one term per line.
        #[arg(long)]
        terms: PathBuf,
    },
    /// Query the definition service for every dataset term and save a snapshot.
    AugmentFetch(Common),
    /// Augment the dataset's terms from the snapshot and write augmented.jsonl.
    AugmentApply(Common),
    /// List out-of-vocabulary tokens and their substitutes.
    InspectOov(Common),
    /// Generate a synthetic dataset, embedding store and definition snapshot.
    Synth(SynthArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 17)]
    classes: usize,
    #[arg(long, default_value_t = 1050)]
    terms: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    dim: usize,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long)]
    plant_substrings: bool,
    #[arg(long, default_value = "synth")]
    out: PathBuf,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: termclass::config::ConfigError| e.to_string())
}

impl Common {
    /// The config file (or defaults) with command-line overrides applied.
    fn config(&self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(p) = self.preset {
            cfg.apply_preset(p);
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(d) = &self.dataset {
            cfg.dataset = Some(d.clone());
        }
        if let Some(e) = &self.embeddings {
            cfg.embeddings = Some(e.clone());
        }
        if let Ok(url) = std::env::var(FETCH_URL_ENV) {
            cfg.fetcher.base_url = url;
        }
        Ok(cfg)
    }
}

fn create_dir(dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|source| PipelineError::Write {
        path: dir.display().to_string(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    termclass::io::write_atomic(path, bytes).map_err(|source| PipelineError::Write {
        path: path.display().to_string(),
        source,
    })
}

fn report_coverage(coverage: Option<f64>) {
    if let Some(c) = coverage {
        println!("augmentation coverage: {c:.4}");
    }
}

fn run(command: Command) -> Result<(), Box<dyn std::error::Error>> {
    match command {
        Command::Cv(common) => {
            let cfg = common.config()?;
            let run = pipeline::run_cv(&cfg)?;
            let [txt, json] = run.write_reports(&cfg.out_dir)?;
            let cv = run.cv();
            println!(
                "best C {}: accuracy {:.4}, mean rank {:.4}, macro F1 {:.4}",
                run.search.best_c(),
                cv.accuracy,
                cv.mean_rank,
                cv.macro_f1
            );
            report_coverage(run.coverage);
            info!("wrote {} and {}", txt.display(), json.display());
        }
        Command::Train(common) => {
            let cfg = common.config()?;
            let (bundle, coverage) = pipeline::train(&cfg)?;
            create_dir(&cfg.out_dir)?;
            let path = cfg.out_dir.join("model.txt");
            bundle.save(&path).map_err(PipelineError::from)?;
            println!("trained with C {}; model written to {}", bundle.model.c(), path.display());
            report_coverage(coverage);
        }
        Command::Predict { common, model, terms } => {
            let cfg = common.config()?;
            let bundle = ModelBundle::load(&model).map_err(PipelineError::from)?;
            let terms = pipeline::read_terms(&terms)?;
            let predictions = pipeline::predict(&cfg, &bundle, &terms)?;
            create_dir(&cfg.out_dir)?;
            let path = cfg.out_dir.join("predictions.jsonl");
            write(&path, pipeline::predictions_jsonl(&predictions).as_bytes())?;
            println!("{} predictions written to {}", predictions.len(), path.display());
        }
        Command::AugmentFetch(common) => {
            let cfg = common.config()?;
            let dataset = Dataset::load(cfg.dataset_path()?).map_err(PipelineError::from)?;
            let snapshot = cfg
                .snapshot
                .clone()
                .unwrap_or_else(|| cfg.out_dir.join("definitions.json"));
            if let Some(dir) = snapshot.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(dir)?;
            }
            let source = HttpSource::new(&cfg.fetcher);
            let (_, summary) = fetch_definitions(&dataset.terms(), &source, cfg.fetcher.min_interval(), &snapshot)
                .map_err(PipelineError::from)?;
            if summary.warnings > 0 {
                warn!("{} requests failed", summary.warnings);
            }
            println!(
                "requested {}, found {}, missing {}, warnings {}; snapshot {}",
                summary.requested,
                summary.found,
                summary.missing,
                summary.warnings,
                snapshot.display()
            );
        }
        Command::AugmentApply(common) => {
            let cfg = common.config()?;
            let dataset = Dataset::load(cfg.dataset_path()?).map_err(PipelineError::from)?;
            let (augmented, coverage) = pipeline::augment_dataset(&cfg, &dataset)?;
            create_dir(&cfg.out_dir)?;
            let path = cfg.out_dir.join("augmented.jsonl");
            write(&path, pipeline::augmented_jsonl(&augmented).as_bytes())?;
            println!("augmentation coverage: {coverage:.4}");
        }
        Command::InspectOov(common) => {
            let cfg = common.config()?;
            let store = EmbeddingStore::load(cfg.embeddings_path()?).map_err(PipelineError::from)?;
            let dataset = Dataset::load(cfg.dataset_path()?).map_err(PipelineError::from)?;
            let rows = pipeline::inspect_oov(&cfg, &store, &dataset)?;
            let report = pipeline::oov_report(&rows);
            create_dir(&cfg.out_dir)?;
            write(&cfg.out_dir.join("oov.txt"), report.as_bytes())?;
            print!("{report}");
            let occurrences: usize = rows.iter().map(|r| r.occurrences).sum();
            eprintln!("{} distinct OOV tokens, {occurrences} occurrences", rows.len());
        }
        Command::Synth(a) => {
            let cfg = SynthConfig {
                classes: a.classes,
                terms: a.terms,
                seed: a.seed,
                dim: a.dim,
                sigma: a.sigma,
                plant_substrings: a.plant_substrings,
                ..SynthConfig::default()
            };
            let data = synth::generate(&cfg)?;
            data.write_to(&a.out, a.seed)?;
            println!("{} terms, {} classes written to {}", data.dataset.len(), data.labels.len(), a.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
