//! Command-line surface. `run` returns the process exit code: 0 on success,
//! 2 on usage or validation errors, 1 on runtime errors.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::PipelineConfig;
use crate::dataset::{read_jsonl, write_jsonl, Manifest, Split};
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::pipeline::{
    evaluate_predictions, explain_scenes, feature_records, filter_manifest, load_scenes, predict_manifest,
    train_manifest, PredictionRecord,
};
use crate::synth::generate;
use crate::tensor::write_atomic;

#[derive(Debug, Parser)]
#[command(name = "cafo", version, about = "Livestock facility scene classification toolkit")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice (training and synthesis).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Val => Some(Split::Val),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Module {
    Mgsa,
    Map,
    Sim,
    Pfv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter detections and write accepted candidates and composite masks.
    Filter {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Compute prior feature vectors from composites and county priors.
    Features {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// County prior CSV overriding the manifest's.
        #[arg(long)]
        counties: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
    },
    /// Train the classifier head.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write per-epoch loss and validation scores as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Switch off a module (repeatable).
        #[arg(long, value_enum)]
        disable: Vec<Module>,
    },
    /// Predict class probabilities.
    Predict {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Feature importance, channel importance and saliency heatmaps.
    Explain {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Per-class F1 and macro-F1 of a predictions file.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// Row label in the printed table.
        #[arg(long, default_value = "model")]
        title: String,
        /// Also write the scores as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    match cli.command {
        Command::Synth { n, out } => {
            let data = generate(&cfg.synth, &cfg.taxonomy, n, cli.seed.unwrap_or(0))?;
            let m = data.write(&out, &cfg.thresholds)?;
            println!("wrote {} scenes to {}", m.records.len(), out.display());
        }
        Command::Filter { manifest } => {
            let m = load_manifest(&manifest, &cfg)?;
            let s = filter_manifest(&m, &cfg.thresholds)?;
            println!(
                "{} records: accepted {} of {} candidates",
                s.records, s.accepted, s.candidates
            );
        }
        Command::Features {
            manifest,
            out,
            counties,
            split,
        } => {
            let mut m = load_manifest(&manifest, &cfg)?;
            if let Some(c) = counties {
                let abs = std::path::absolute(&c).map_err(|e| Error::io(&c, e))?;
                m.counties = Some(abs.to_string_lossy().into_owned());
            }
            let recs = feature_records(&load_scenes(&m, split.split())?, &m.categories)?;
            write_jsonl(&out, &recs)?;
            println!("wrote {} feature vectors to {}", recs.len(), out.display());
        }
        Command::Train {
            manifest,
            out,
            report,
            disable,
        } => {
            for d in disable {
                match d {
                    Module::Mgsa => cfg.model.enable_mgsa = false,
                    Module::Map => cfg.model.enable_map = false,
                    Module::Sim => cfg.model.enable_sim = false,
                    Module::Pfv => cfg.model.enable_pfv = false,
                }
            }
            let m = load_manifest(&manifest, &cfg)?;
            let (state, rep) = train_manifest(&m, &cfg)?;
            state.save(&out)?;
            if let Some(p) = report {
                write_atomic(&p, &serde_json::to_vec_pretty(&rep)?)?;
            }
            match (rep.best_epoch, rep.best_val_macro_f1) {
                (Some(e), Some(f)) => println!("best epoch {e}, validation macro-F1 {f:.4}"),
                _ => println!("trained {} epochs (no validation split)", rep.epoch_loss.len()),
            }
        }
        Command::Predict {
            manifest,
            model,
            out,
            split,
        } => {
            let m = load_manifest(&manifest, &cfg)?;
            let state = ModelState::load(&model)?;
            let preds = predict_manifest(&state, &m, split.split())?;
            write_jsonl(&out, &preds)?;
            println!("wrote {} predictions to {}", preds.len(), out.display());
        }
        Command::Explain {
            manifest,
            model,
            out,
            split,
        } => {
            let m = load_manifest(&manifest, &cfg)?;
            let state = ModelState::load(&model)?;
            let scenes = load_scenes(&m, split.split())?;
            let ex = explain_scenes(&state, &scenes, &out)?;
            println!("explained {} scenes into {}", ex.features.len(), out.display());
        }
        Command::Eval {
            manifest,
            predictions,
            title,
            json,
        } => {
            let m = Manifest::load(&manifest)?;
            let preds: Vec<PredictionRecord> = read_jsonl(&predictions)?;
            let report = evaluate_predictions(&m, &preds)?;
            print!("{}", report.table(&title));
            if let Some(p) = json {
                write_atomic(&p, &serde_json::to_vec_pretty(&report)?)?;
            }
        }
    }
    Ok(())
}

fn load_manifest(path: &std::path::Path, cfg: &PipelineConfig) -> Result<Manifest> {
    let m = Manifest::load(path)?;
    if m.categories != cfg.taxonomy {
        return Err(Error::ConfigMismatch(format!(
            "manifest categories {:?} differ from configured {:?}",
            m.categories.names(),
            cfg.taxonomy.names()
        )));
    }
    Ok(m)
}
