use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use polylm::audit::{audit, read_gold};
use polylm::experiments::{run_ablation, run_uncertainty_report, AblationConfig};
use polylm::extract::{extract_files, observations_table, read_observations};
use polylm::metrics::{evaluate, json_path, read_baseline, score_baseline};
use polylm::prompt::{build_dataset, read_dataset, write_dataset, DatasetOptions, Split, Variant};
use polylm::synth::{gen_corpus, write_corpus, SynthConfig};
use polylm::trainer::{trace_table, Checkpoint, TrainConfig, Trainer};
use polylm::{tsv, Registry, Result};

/// Property regression from sample and synthesis text.
#[derive(Parser)]
#[command(name = "polylm", version)]
struct Cli {
    /// Seed for every randomized step; overrides the config file's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract property observations from sample-delimited documents.
    Extract {
        #[arg(required = true)]
        docs: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Build a masked prompt dataset with a train/test split.
    BuildDataset {
        observations: PathBuf,
        #[arg(long, default_value = "sample_synthesis")]
        variant: Variant,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Train a checkpoint; the loss trace goes next to it as `<ckpt>.trace.tsv`.
    Train {
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Evaluate a checkpoint on one split of a dataset.
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run the sample_synthesis vs sample_only ablation on a synthetic corpus.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Score extracted records against gold annotations.
    Audit {
        extracted: PathBuf,
        gold: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Relate learned task uncertainties to held-out error.
    UncertaintyReport {
        checkpoint: PathBuf,
        dataset: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Generate a synthetic corpus and its truth table.
    GenCorpus {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Score free-text predictions (sample_id, head, response) with strict parsing.
    ScoreBaseline {
        predictions: PathBuf,
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn load_or_default<T: Default>(path: &Option<PathBuf>, load: impl Fn(&Path) -> Result<T>) -> Result<T> {
    match path {
        Some(p) => load(p),
        None => Ok(T::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let reg = Registry::builtin();
    match cli.command {
        Command::Extract { docs, output } => {
            let ex = extract_files(&docs, reg)?;
            observations_table(&ex, reg).write(&output)?;
            eprintln!(
                "{} observations from {} samples ({} unmapped, {} parse failures, {} incompatible units)",
                ex.observations.len(),
                ex.samples.len(),
                ex.unmapped,
                ex.parse_failures,
                ex.incompatible
            );
        }
        Command::BuildDataset {
            observations,
            variant,
            test_fraction,
            output,
        } => {
            let ex = read_observations(&observations, reg)?;
            let options = DatasetOptions {
                variant,
                seed: cli.seed.unwrap_or(0),
                test_fraction,
            };
            let ds = build_dataset(&ex, reg, options)?;
            write_dataset(&ds, reg, &output)?;
            eprintln!(
                "{} prompts ({} train, {} test); skipped {} empty and {} unlabeled samples",
                ds.instances.len(),
                ds.split(Split::Train).count(),
                ds.split(Split::Test).count(),
                ds.skipped_empty,
                ds.skipped_unlabeled
            );
        }
        Command::Train { dataset, config, output } => {
            let mut cfg = load_or_default(&config, |p| TrainConfig::load(p))?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let ds = read_dataset(&dataset, reg)?;
            let out = Trainer::new(cfg.clone(), reg).train(&ds)?;
            out.checkpoint.save(&output)?;
            let mut trace = output.clone().into_os_string();
            trace.push(".trace.tsv");
            trace_table(&out.trace, reg, &cfg.digest()?).write(PathBuf::from(trace))?;
            if let Some(last) = out.trace.last() {
                eprintln!("epoch {} loss {:.4}", last.epoch, last.loss);
            }
        }
        Command::Eval {
            checkpoint,
            dataset,
            split,
            output,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let ds = read_dataset(&dataset, reg)?;
            let report = evaluate(&ckpt, &ds, split, reg);
            report.write(&output, &ckpt.config.digest()?)?;
            print!("{}", report.to_table(&ckpt.config.digest()?).render());
        }
        Command::Ablate { config, output } => {
            let mut cfg = load_or_default(&config, |p| AblationConfig::load(p))?;
            if let Some(seed) = cli.seed {
                cfg.seeds = vec![seed];
            }
            let report = run_ablation(&cfg, reg)?;
            report.write(&output, &cfg.digest()?)?;
            for r in &report.heads {
                println!("{}\t{:.4}\t{:.4}\t{:+.4}", r.head, r.with_synthesis, r.sample_only, r.delta);
            }
            println!("mean_delta\t{:+.4}", report.mean_delta);
        }
        Command::Audit { extracted, gold, output } => {
            let ex = read_observations(&extracted, reg)?;
            let gold = read_gold(&gold)?;
            let report = audit(&ex.observations, &gold, reg)?;
            let table = report.to_table();
            table.write(&output)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            tsv::write_file(json_path(&output), json + "\n")?;
            print!("{}", table.render());
        }
        Command::UncertaintyReport {
            checkpoint,
            dataset,
            output,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let ds = read_dataset(&dataset, reg)?;
            let report = run_uncertainty_report(&ckpt, &ds, reg)?;
            let digest = ckpt.config.digest()?;
            report.write(&output, &digest)?;
            print!("{}", report.to_table(&digest).render());
        }
        Command::GenCorpus { config, output } => {
            let mut cfg = load_or_default(&config, |p| SynthConfig::load(p))?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let corpus = gen_corpus(&cfg, reg)?;
            write_corpus(&corpus, &cfg, reg, &output)?;
            eprintln!("{} truth records", corpus.truth.len());
        }
        Command::ScoreBaseline {
            predictions,
            dataset,
            split,
            output,
        } => {
            let rows = read_baseline(&predictions, reg)?;
            let ds = read_dataset(&dataset, reg)?;
            let report = score_baseline(&rows, &ds, split, reg);
            report.write(&output, "baseline")?;
            print!("{}", report.to_table("baseline").render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
