//! `sorient`: the command-line surface of the conversation-outcome pipeline.
//! Every subcommand takes a flat `key = value` config file plus overriding
//! flags, runs deterministically from explicit seeds, and leaves its outputs
//! and a manifest in the output directory.

mod commands;
mod config;
mod featureset;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use commands::{CliError, IngestOptions, Stage, TagOptions, EXIT_DATA};
use config::Settings;

#[derive(Parser)]
#[command(name = "sorient", version, about = "Social-orientation analysis of conversation outcomes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Flat `key = value` configuration file; flags override it.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory (default `out`).
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Root random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel stages; 0 means one per core.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Load a raw conversation corpus, apply the selected transforms, and
    /// write the processed corpus plus a label summary.
    Ingest {
        #[command(flatten)]
        common: CommonArgs,
        /// Input corpus (JSON lines, one conversation per line).
        #[arg(long, value_name = "FILE")]
        input: Option<PathBuf>,
        /// Mark utterance toxicity with the keyword fallback detector.
        #[arg(long)]
        mark_toxicity: bool,
        /// Truncate at the first toxic utterance and label the outcome.
        #[arg(long)]
        derive_context_and_label: bool,
        /// Drop the final turn to avoid leaking the outcome.
        #[arg(long)]
        drop_final_turn: bool,
        /// Keep only conversations with enough speakers and turns.
        #[arg(long)]
        filter_candidates: bool,
        /// Pair each failure with a same-page success and keep the pairs.
        #[arg(long)]
        pair_balanced: bool,
        /// Assign stratified train/val/test splits.
        #[arg(long)]
        assign_splits: bool,
    },
    /// Tag every utterance with a social orientation via the configured
    /// backend, appending to a resumable cache.
    Tag {
        #[command(flatten)]
        common: CommonArgs,
        /// Processed corpus to tag.
        #[arg(long, value_name = "FILE")]
        corpus: Option<PathBuf>,
        /// Tagger backend: lexicon, remote, or cache.
        #[arg(long)]
        backend: Option<String>,
        /// Remote tagger endpoint URL.
        #[arg(long)]
        endpoint: Option<String>,
        /// Tag cache path (default `<out-dir>/tags.jsonl`).
        #[arg(long, value_name = "FILE")]
        tags: Option<PathBuf>,
        /// Write the prompts that would be sent, without any network calls.
        #[arg(long)]
        dry_run_prompts: bool,
    },
    /// Train the outcome classifier on the Train split.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "FILE")]
        corpus: Option<PathBuf>,
        /// Feature sets joined with `+`: social_counts, sentiment_counts, tfidf.
        #[arg(long)]
        features: Option<String>,
        #[arg(long, value_name = "FILE")]
        tags: Option<PathBuf>,
    },
    /// Score a trained model on one split and write metrics and predictions.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "FILE")]
        corpus: Option<PathBuf>,
        /// Trained model file (default `<out-dir>/model.txt`).
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        /// Saved tf-idf vocabulary (default `<out-dir>/tfidf_vocab.txt`).
        #[arg(long, value_name = "FILE")]
        vocab: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        tags: Option<PathBuf>,
        /// Split to evaluate: train, val, or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Run the training-set-size ablation grid and summarize it.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "FILE")]
        corpus: Option<PathBuf>,
        #[arg(long)]
        features: Option<String>,
        #[arg(long, value_name = "FILE")]
        tags: Option<PathBuf>,
        /// Comma-separated training fractions in (0, 1].
        #[arg(long)]
        fractions: Option<String>,
        /// Comma-separated distinct run seeds.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Welch's t-test between two samples stored as one number per line.
    Ttest {
        #[command(flatten)]
        common: CommonArgs,
        sample_a: PathBuf,
        sample_b: PathBuf,
    },
    /// Re-tag conversations per intervention specs and count prediction flips.
    Intervene {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "FILE")]
        corpus: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        tags: Option<PathBuf>,
        /// Intervention specs (JSON lines); defaults to the built-in presets.
        #[arg(long, value_name = "FILE")]
        interventions: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        /// Score through a remote predictor instead of a local model.
        #[arg(long)]
        predictor_endpoint: Option<String>,
    },
    /// Cross-speaker tag co-occurrence ratios and per-outcome prevalence.
    Cooccur {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "FILE")]
        corpus: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        tags: Option<PathBuf>,
        /// Laplace smoothing added to every pair count.
        #[arg(long)]
        smoothing: Option<f64>,
    },
    /// Inter-annotator agreement over two or more annotation files.
    Agree {
        #[command(flatten)]
        common: CommonArgs,
        /// One tag per line, same items in the same order in every file.
        #[arg(required = true, num_args = 2..)]
        annotations: Vec<PathBuf>,
    },
}

fn settings_for(common: &CommonArgs) -> Result<Settings, CliError> {
    let mut settings = Settings::load(common.config.as_deref()).stage(EXIT_DATA)?;
    settings.set_opt("out_dir", common.out_dir.as_ref().map(|p| p.display().to_string()));
    settings.set_opt("seed", common.seed);
    settings.set_opt("workers", common.workers);
    Ok(settings)
}

fn configure_workers(settings: &Settings) -> Result<(), CliError> {
    let workers = settings.workers().stage(EXIT_DATA)?;
    if workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .context("cannot configure the worker pool")
            .stage(EXIT_DATA)?;
    }
    Ok(())
}

fn path_override(path: &Option<PathBuf>) -> Option<String> {
    path.as_ref().map(|p| p.display().to_string())
}

fn run() -> Result<(), CliError> {
    match Cli::parse().command {
        Command::Ingest {
            common,
            input,
            mark_toxicity,
            derive_context_and_label,
            drop_final_turn,
            filter_candidates,
            pair_balanced,
            assign_splits,
        } => {
            let mut settings = settings_for(&common)?;
            settings.set_opt("input", path_override(&input));
            configure_workers(&settings)?;
            let opts = IngestOptions {
                mark_toxicity,
                derive_context_and_label,
                drop_final_turn,
                filter_candidates,
                pair_balanced,
                assign_splits,
            };
            commands::ingest(&settings, &opts)
        }
        Command::Tag { common, corpus, backend, endpoint, tags, dry_run_prompts } => {
            let mut settings = settings_for(&common)?;
            settings.set_opt("corpus", path_override(&corpus));
            settings.set_opt("tagger_backend", backend);
            settings.set_opt("tagger_endpoint", endpoint);
            settings.set_opt("tags", path_override(&tags));
            configure_workers(&settings)?;
            commands::tag(&settings, &TagOptions { dry_run_prompts })
        }
        Command::Train { common, corpus, features, tags } => {
            let mut settings = settings_for(&common)?;
            settings.set_opt("corpus", path_override(&corpus));
            settings.set_opt("features", features);
            settings.set_opt("tags", path_override(&tags));
            configure_workers(&settings)?;
            commands::train(&settings)
        }
        Command::Evaluate { common, corpus, model, vocab, tags, split } => {
            let mut settings = settings_for(&common)?;
            settings.set_opt("corpus", path_override(&corpus));
            settings.set_opt("model", path_override(&model));
            settings.set_opt("vocab", path_override(&vocab));
            settings.set_opt("tags", path_override(&tags));
            configure_workers(&settings)?;
            commands::evaluate(&settings, &split)
        }
        Command::Ablate { common, corpus, features, tags, fractions, seeds } => {
            let mut settings = settings_for(&common)?;
            settings.set_opt("corpus", path_override(&corpus));
            settings.set_opt("features", features);
            settings.set_opt("tags", path_override(&tags));
            settings.set_opt("fractions", fractions);
            settings.set_opt("seeds", seeds);
            configure_workers(&settings)?;
            commands::ablate(&settings)
        }
        Command::Ttest { common, sample_a, sample_b } => {
            let settings = settings_for(&common)?;
            configure_workers(&settings)?;
            commands::ttest(&settings, &sample_a, &sample_b)
        }
        Command::Intervene { common, corpus, tags, interventions, model, predictor_endpoint } => {
            let mut settings = settings_for(&common)?;
            settings.set_opt("corpus", path_override(&corpus));
            settings.set_opt("tags", path_override(&tags));
            settings.set_opt("interventions", path_override(&interventions));
            settings.set_opt("model", path_override(&model));
            settings.set_opt("predictor_endpoint", predictor_endpoint);
            configure_workers(&settings)?;
            commands::intervene(&settings)
        }
        Command::Cooccur { common, corpus, tags, smoothing } => {
            let mut settings = settings_for(&common)?;
            settings.set_opt("corpus", path_override(&corpus));
            settings.set_opt("tags", path_override(&tags));
            settings.set_opt("smoothing", smoothing);
            configure_workers(&settings)?;
            commands::cooccur(&settings)
        }
        Command::Agree { common, annotations } => {
            let settings = settings_for(&common)?;
            configure_workers(&settings)?;
            commands::agree(&settings, &annotations)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
