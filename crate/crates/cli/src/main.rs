use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mipcls::pipeline::{self, Manifest, PipelineConfig};
use mipcls::{Result, Weighting};

#[derive(Parser)]
#[command(name = "mipcls", version, about = "Breast DCE-MRI MIP classification pipeline")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightingArg {
    Natural,
    Inverse,
    Both,
}

impl WeightingArg {
    fn expand(self) -> Vec<Weighting> {
        match self {
            WeightingArg::Natural => vec![Weighting::Natural],
            WeightingArg::Inverse => vec![Weighting::Inverse],
            WeightingArg::Both => Weighting::BOTH.to_vec(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic studies and their manifest.
    Phantom {
        #[arg(long, default_value_t = 30)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Build one normalized MIP stack blob per breast.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        jobs: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Patient-level stratified k-fold split.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config fold count.
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train fold models.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        weighting: WeightingArg,
        /// Folds to train (repeatable); all folds when omitted.
        #[arg(long)]
        fold: Vec<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Write prediction CSVs for fold models.
    Predict {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        weighting: WeightingArg,
        #[arg(long)]
        fold: Vec<usize>,
        /// Predict every blob instead of the fold's validation patients.
        #[arg(long)]
        all: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Compute metrics for a predictions CSV.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// Report path; defaults to `<predictions>.metrics.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average prediction CSVs; evaluates the result when a manifest is given.
    Ensemble {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Show what the augmentation policy does to one stack blob.
    AugmentPreview {
        #[arg(long)]
        blob: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn report_path(predictions: &Path) -> PathBuf {
    predictions.with_extension("metrics.json")
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn folds_or_all(folds: &[usize], run: &Path) -> Result<Vec<usize>> {
    if !folds.is_empty() {
        return Ok(folds.to_vec());
    }
    let path = run.join(pipeline::FOLDS_FILE);
    let bytes = std::fs::read(&path).map_err(|e| mipcls::Error::Io { path, source: e })?;
    let plan: mipcls::FoldPlan = serde_json::from_slice(&bytes)?;
    Ok((0..plan.k).collect())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Phantom { n, out, common } => {
            let cfg = common.load()?;
            let manifest = pipeline::cmd_phantom(n, cfg.seed, &cfg.phantom, &out)?;
            println!("{}", manifest.display());
        }
        Command::Preprocess { manifest, out, jobs, common } => {
            let cfg = common.load()?;
            let manifest = Manifest::read(&manifest)?;
            let report = pipeline::cmd_preprocess(&manifest, &cfg, &out, jobs)?;
            println!("{} blobs written", report.written.len());
            for f in &report.failures {
                eprintln!("failed: {}: {}", f.patient_id, f.error);
            }
            if !report.is_clean() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Split { manifest, out, k, common } => {
            let cfg = common.load()?;
            let manifest = Manifest::read(&manifest)?;
            let plan = pipeline::cmd_split(&manifest, k.unwrap_or(cfg.k), cfg.seed, &out)?;
            println!("{} patients in {} folds", plan.folds.len(), plan.k);
        }
        Command::Train { manifest, out, weighting, fold, common } => {
            let cfg = common.load()?;
            let manifest = Manifest::read(&manifest)?;
            for w in weighting.expand() {
                for r in pipeline::cmd_train(&manifest, &cfg, &out, w, &fold)? {
                    println!(
                        "{}: counts {:?}, final loss {:.5}",
                        r.model_id,
                        r.class_counts,
                        r.loss_trace.last().copied().unwrap_or(f64::NAN)
                    );
                }
            }
        }
        Command::Predict { out, weighting, fold, all, common } => {
            let cfg = common.load()?;
            for w in weighting.expand() {
                for f in folds_or_all(&fold, &out)? {
                    let (path, _) = pipeline::cmd_predict(&cfg, &out, w, f, all)?;
                    println!("{}", path.display());
                }
            }
        }
        Command::Evaluate { manifest, predictions, out } => {
            let manifest = Manifest::read(&manifest)?;
            let out = out.unwrap_or_else(|| report_path(&predictions));
            print_json(&pipeline::cmd_evaluate(&manifest, &predictions, &out)?)?;
        }
        Command::Ensemble { out, manifest, inputs } => {
            let merged = pipeline::cmd_ensemble(&inputs, &out)?;
            println!("{} ensembled predictions -> {}", merged.len(), out.display());
            if let Some(m) = manifest {
                let manifest = Manifest::read(&m)?;
                print_json(&pipeline::cmd_evaluate(&manifest, &out, &report_path(&out))?)?;
            }
        }
        Command::AugmentPreview { blob, out, common } => {
            let cfg = common.load()?;
            print_json(&pipeline::cmd_augment_preview(&blob, cfg.seed, &cfg.augment, &out)?)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
