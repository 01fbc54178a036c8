use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use partmanip::affordance::{generate_part_library_with, AffordanceDataset, AffordanceModel, LibraryConfig};
use partmanip::grounding::{HttpTransport, Providers};
use partmanip::harness::{
    aggregate, evaluate_affordance, evaluate_grounding, load_dataset, read_episode_log, save_dataset, write_outputs, AffordanceSource,
    BenchmarkReport, Pipeline, RunConfig, F1_THRESHOLD,
};
use partmanip::parallel::Execution;
use partmanip::scene::Category;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "partmanip", version, about = "Part-level manipulation benchmark")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Comma-separated categories, e.g. `bottle,door`.
    #[arg(long, global = true, value_delimiter = ',')]
    categories: Option<Vec<Category>>,
    #[arg(long, global = true)]
    seeds: Option<u64>,
    #[arg(long, global = true)]
    seed_offset: Option<u64>,
    /// Box dilation of perturbed grounding providers.
    #[arg(long, global = true)]
    noise: Option<f64>,
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Use the trained model instead of ground-truth affordance.
    #[arg(long, global = true)]
    learned: bool,
    /// Disable the thread pool.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural part library and write it as text.
    GenDataset {
        #[arg(long, value_enum, default_value = "train")]
        split: Split,
        /// Output path; defaults to the configured dataset path for the train
        /// split.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the affordance model on the dataset and save it.
    Train,
    /// Point-level F1 of the saved model on held-out parts.
    EvalAffordance {
        /// Held-out dataset; generated from the library settings when omitted.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Mask IoU of the grounding chain, optionally over several noise levels.
    EvalGrounding {
        #[arg(long, value_delimiter = ',')]
        levels: Vec<f64>,
    },
    /// Run every configured episode and write the log and report.
    Run,
    /// Recompute the report from an episode log.
    Report {
        /// Defaults to `<output>/episodes.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::from_toml("", Path::new("."))?,
    };
    if let Some(v) = &c.categories {
        cfg.categories = v.clone();
    }
    if let Some(v) = c.seeds {
        cfg.seeds = v;
    }
    if let Some(v) = c.seed_offset {
        cfg.seed_offset = v;
    }
    if let Some(v) = c.noise {
        cfg.providers.noise = v;
    }
    if let Some(v) = &c.model {
        cfg.model = v.clone();
    }
    if let Some(v) = &c.dataset {
        cfg.dataset = v.clone();
    }
    if let Some(v) = &c.output {
        cfg.output = v.clone();
    }
    if c.learned {
        cfg.affordance = AffordanceSource::Learned;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn library(cfg: &RunConfig, split: Split, exec: Execution) -> Result<AffordanceDataset> {
    let l = &cfg.library;
    let (count, seed) = match split {
        Split::Train => (l.train_per_archetype, l.train_seed),
        Split::Test => (l.test_per_archetype, l.test_seed),
    };
    let lib = LibraryConfig { radius_factor: cfg.radius_factor, ..LibraryConfig::default() };
    Ok(generate_part_library_with(&lib, &l.archetypes, count, seed, exec)?)
}

fn finish(report: &BenchmarkReport, cfg: &RunConfig) -> ExitCode {
    print!("{}", report.to_table());
    let violations = report.violations(&cfg.thresholds);
    for v in &violations {
        eprintln!("threshold violated: {v}");
    }
    if violations.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = load_config(&cli.common)?;
    let exec = if cli.common.sequential { Execution::Sequential } else { Execution::default() };
    match cli.command {
        Command::GenDataset { split, out } => {
            let path = match (out, split) {
                (Some(p), _) => p,
                (None, Split::Train) => cfg.dataset.clone(),
                (None, Split::Test) => bail!("--out is required for the test split"),
            };
            let data = library(&cfg, split, exec)?;
            save_dataset(&path, &data)?;
            for line in data.stats_lines() {
                println!("{line}");
            }
            println!("wrote {} parts, {} points to {}", data.len(), data.point_count(), path.display());
        }
        Command::Train => {
            let data = load_dataset(&cfg.dataset).with_context(|| "run gen-dataset first")?;
            let start = Instant::now();
            let (model, report) = partmanip::affordance::train_affordance(&data, cfg.training, cfg.library.training_seed)?;
            model.save(&cfg.model)?;
            println!(
                "trained {} epochs in {:.1}s: loss {:.4} -> {:.4}; saved {}",
                report.epochs,
                start.elapsed().as_secs_f64(),
                report.initial_loss,
                report.final_loss,
                cfg.model.display()
            );
        }
        Command::EvalAffordance { test } => {
            let model = AffordanceModel::load(&cfg.model).with_context(|| "run train first")?;
            let data = match test {
                Some(path) => load_dataset(&path)?,
                None => library(&cfg, Split::Test, exec)?,
            };
            let eval = evaluate_affordance(&model, &data, F1_THRESHOLD, exec)?;
            println!("{:<10} | {:>5} | F1", "Archetype", "Parts");
            for r in &eval.rows {
                println!("{:<10} | {:>5} | {:.3}", r.archetype.name(), r.parts, r.f1);
            }
            println!("{:<10} | {:>5} | {:.3}", "all", data.len(), eval.overall_f1);
            if cfg.thresholds.min_f1.is_some_and(|m| eval.overall_f1 < m) {
                eprintln!("threshold violated: F1 {:.3} below {}", eval.overall_f1, cfg.thresholds.min_f1.unwrap_or_default());
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::EvalGrounding { levels } => {
            let levels = if levels.is_empty() { vec![cfg.providers.noise] } else { levels };
            let seeds = cfg.seed_offset..cfg.seed_offset + cfg.seeds;
            println!("{:<8} | {:<8} | {:<5} | Failures", "Noise", "Category", "IoU");
            for noise in levels {
                let mut pc = cfg.providers.clone();
                pc.noise = noise;
                let providers = Providers::from_config(&pc, Arc::new(HttpTransport))?;
                for r in evaluate_grounding(&providers, &cfg.categories, seeds.clone(), exec) {
                    println!("{:<8} | {:<8} | {:.3} | {}/{}", noise, r.category.label(), r.mean_iou, r.failures, r.episodes);
                }
            }
        }
        Command::Run => {
            let pipeline = Pipeline::from_config(cfg.clone())?;
            let start = Instant::now();
            let episodes = pipeline.run_benchmark(exec);
            info!("{} episodes in {:.1}s", episodes.len(), start.elapsed().as_secs_f64());
            let report = aggregate(&cfg.categories, &episodes, &cfg.digest());
            write_outputs(&cfg.output, &episodes, &report)?;
            return Ok(finish(&report, &cfg));
        }
        Command::Report { log } => {
            let path = log.unwrap_or_else(|| cfg.output.join("episodes.jsonl"));
            let episodes = read_episode_log(&path)?;
            let report = aggregate(&cfg.categories, &episodes, &cfg.digest());
            write_outputs(&cfg.output, &episodes, &report)?;
            return Ok(finish(&report, &cfg));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
