//! `cohort-sieve`: decide, for each patient record and each configured
//! selection criterion, whether the patient meets it.
//!
//! Exit codes: 0 success, 1 configuration/validation error, 2 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cohort_sieve::config::load_config;
use cohort_sieve::pipeline::{self, Stage};
use cohort_sieve::synth;

#[derive(Parser)]
#[command(name = "cohort-sieve", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Pipeline configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Read patient files and report corpus statistics and diagnostics.
    Ingest(CommonArgs),
    /// Mine frequent section titles from the train and unlabeled corpora.
    MineSections(CommonArgs),
    /// Train skip-gram word embeddings on the unlabeled corpus.
    TrainEmbeddings(CommonArgs),
    /// Expand terminology words with embedding-derived spelling variants.
    ExpandVariants(CommonArgs),
    /// Apply seed trigger rules to the unlabeled corpus.
    BuildSilver(CommonArgs),
    /// Train the weak-supervised classifiers on silver plus gold labels.
    Train(CommonArgs),
    /// Evaluate every criterion on the test corpus and write decisions.
    Predict(CommonArgs),
    /// Score decisions against gold labels and print the metrics table.
    Score(CommonArgs),
    /// Run every stage in order.
    Pipeline(CommonArgs),
    /// Generate a synthetic corpus with planted, label-consistent evidence.
    GenCorpus {
        /// Generator configuration file.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Corpus output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run_stage(args: &CommonArgs, f: impl FnOnce(&Stage) -> anyhow::Result<()>) -> ExitCode {
    let loaded = match load_config(&args.config) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let errors = loaded.validation_errors();
    if !errors.is_empty() {
        for e in &errors {
            eprintln!("validation error: {e}");
        }
        return ExitCode::from(1);
    }
    let stage = Stage::new(&loaded, args.seed, args.out.clone());
    if let Err(e) = std::fs::create_dir_all(&stage.out_dir) {
        eprintln!("cannot create output directory: {e}");
        return ExitCode::from(2);
    }
    match f(&stage) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Ingest(args) => run_stage(&args, pipeline::stage_ingest),
        Command::MineSections(args) => run_stage(&args, pipeline::stage_mine_sections),
        Command::TrainEmbeddings(args) => run_stage(&args, pipeline::stage_train_embeddings),
        Command::ExpandVariants(args) => run_stage(&args, pipeline::stage_expand_variants),
        Command::BuildSilver(args) => run_stage(&args, pipeline::stage_build_silver),
        Command::Train(args) => run_stage(&args, pipeline::stage_train),
        Command::Predict(args) => run_stage(&args, pipeline::stage_predict),
        Command::Score(args) => run_stage(&args, pipeline::stage_score),
        Command::Pipeline(args) => run_stage(&args, pipeline::run_pipeline),
        Command::GenCorpus { config, seed, out } => {
            let spec = match synth::load_generator_spec(&config) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("generator config error: {e:#}");
                    return ExitCode::from(1);
                }
            };
            let seed = seed.unwrap_or(1);
            match synth::generate_corpus(&spec, seed, &out) {
                Ok(_) => {
                    println!(
                        "gen-corpus: {} train / {} test / {} unlabeled patients under {}",
                        spec.n_train,
                        spec.n_test,
                        spec.n_unlabeled,
                        out.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
