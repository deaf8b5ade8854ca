mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use convpred::checkpoint::Checkpoint;
use convpred::experiment::{evaluate_model, rm_report, run_ablation};
use convpred::model::{encode_all, Model};
use convpred::synth::{generate_campaigns, load_dataset, save_dataset, split_dataset, CampaignSample, DatasetStats};
use convpred::train::{fit, resume, TrainConfig};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "convpred", version, about = "Conversion-count prediction with a bucket tree and PCOC experts")]
struct Cli {
    /// TOML run configuration; library defaults apply to anything omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic campaign dataset as CSV.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured sample count.
        #[arg(long)]
        n_samples: Option<usize>,
    },
    /// Train one model; writes checkpoint.json and train_log.jsonl to --out.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint instead of a fresh initialization.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score a checkpoint and the RM baseline; writes report files to --out.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
        split: SplitChoice,
    },
    /// Train every configured variant over every configured seed.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the control/experimental bidding A/B simulation.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Model used by `predicted-model` policies.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitChoice {
    Val,
    Test,
    All,
}

/// Failures the user can fix by changing arguments or configuration exit
/// with 1; failures during computation or output exit with 2.
#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

trait UsageContext<T> {
    fn usage(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> UsageContext<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = RunConfig::load(cli.config.as_deref(), cli.seed).usage()?;
    match cli.command {
        Command::Generate { out, n_samples } => generate(config, &out, n_samples),
        Command::Train { data, out, checkpoint } => train(config, &data, &out, checkpoint.as_deref()),
        Command::Evaluate {
            checkpoint,
            data,
            out,
            split,
        } => evaluate(&checkpoint, &data, &out, split),
        Command::Ablate { data, out } => ablate(config, &data, &out),
        Command::Simulate { out, checkpoint } => simulate(config, &out, checkpoint.as_deref()),
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(anyhow!("{what} {} does not exist", path.display())))
    }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .runtime()
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).context("serializing output").runtime()?;
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .runtime()
}

fn load_data(path: &Path) -> Result<Vec<CampaignSample>, Failure> {
    require_file(path, "dataset")?;
    load_dataset(path)
        .with_context(|| format!("loading {}", path.display()))
        .runtime()
}

fn generate(mut config: RunConfig, out: &Path, n_samples: Option<usize>) -> Result<(), Failure> {
    if let Some(n) = n_samples {
        config.generator.n_samples = n;
    }
    config.validate_generator().usage()?;
    let samples = generate_campaigns(&config.generator).context("generating campaigns").runtime()?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_dataset(&samples, out)
        .with_context(|| format!("writing {}", out.display()))
        .runtime()?;
    if let Some(stats) = DatasetStats::of(&samples) {
        println!(
            "wrote {} samples to {}: mean {:.2}, median {}, max {}, zero fraction {:.3}",
            samples.len(),
            out.display(),
            stats.label_mean,
            stats.label_median,
            stats.label_max,
            stats.zero_fraction
        );
    }
    Ok(())
}

fn train(config: RunConfig, data: &Path, out: &Path, from: Option<&Path>) -> Result<(), Failure> {
    config.validate_training().usage()?;
    let base = match from {
        Some(path) => {
            require_file(path, "checkpoint")?;
            let ck = Checkpoint::load(path).context("loading checkpoint").usage()?;
            let model = ck.model().context("restoring checkpoint").usage()?;
            Some((ck, model))
        }
        None => None,
    };
    let samples = load_data(data)?;
    let tc: TrainConfig = config.train.clone();
    // A resumed run must see the same train/validation partition as the run
    // that produced the checkpoint.
    let split_seed = base.as_ref().map_or(tc.seed, |(ck, _)| ck.train_config.seed);
    let split = split_dataset(&samples, split_seed).context("splitting dataset").runtime()?;
    let train_x = encode_all(&split.train).context("encoding training split").runtime()?;
    let val_x = encode_all(&split.val).context("encoding validation split").runtime()?;
    create_dir(out)?;
    let log_path = out.join("train_log.jsonl");
    let mut log = BufWriter::new(
        File::create(&log_path)
            .with_context(|| format!("creating {}", log_path.display()))
            .runtime()?,
    );
    let (model, outcome) = match base {
        Some((ck, mut model)) => {
            info!("resuming {} from checkpoint", model.config.variant.name());
            let outcome = resume(&mut model, &train_x, &val_x, &tc, Some(&mut log), ck.adam).runtime()?;
            (model, outcome)
        }
        None => {
            let labels: Vec<u64> = split.train.iter().map(|s| s.label).collect();
            let mut model = Model::new(config.model.clone(), &labels, tc.seed).runtime()?;
            let outcome = fit(&mut model, &train_x, &val_x, &tc, Some(&mut log)).runtime()?;
            (model, outcome)
        }
    };
    log.flush().context("flushing training log").runtime()?;
    let stored = TrainConfig { seed: split_seed, ..tc };
    let ck = Checkpoint::new(&model, &stored, Some(outcome.adam.clone()), Some(outcome.best_val_mape));
    let ck_path = out.join("checkpoint.json");
    ck.save(&ck_path).context("saving checkpoint").runtime()?;
    println!(
        "{}: best epoch {} val MAPE {:.4}; checkpoint {}",
        model.config.variant.name(),
        outcome.best_epoch,
        outcome.best_val_mape,
        ck_path.display()
    );
    Ok(())
}

fn evaluate(checkpoint: &Path, data: &Path, out: &Path, split: SplitChoice) -> Result<(), Failure> {
    require_file(checkpoint, "checkpoint")?;
    let ck = Checkpoint::load(checkpoint).context("loading checkpoint").usage()?;
    let model = ck.model().context("restoring checkpoint").usage()?;
    let samples = load_data(data)?;
    let parts = split_dataset(&samples, ck.train_config.seed)
        .context("splitting dataset")
        .runtime()?;
    let (name, rows) = match split {
        SplitChoice::Val => ("val", parts.val),
        SplitChoice::Test => ("test", parts.test),
        SplitChoice::All => ("all", samples),
    };
    if rows.is_empty() {
        return Err(Failure::Runtime(anyhow!("the {name} split is empty")));
    }
    let report = evaluate_model(&model, &rows).context("scoring model").runtime()?;
    let rm = rm_report(&rows).context("scoring RM baseline").runtime()?;
    create_dir(out)?;
    let stem = format!("{}_{name}", model.config.variant.name());
    report
        .write_files(out, &stem)
        .with_context(|| format!("writing reports to {}", out.display()))
        .runtime()?;
    rm.write_files(out, &format!("rm_{name}"))
        .with_context(|| format!("writing reports to {}", out.display()))
        .runtime()?;
    println!("{report}");
    println!("{rm}");
    Ok(())
}

fn ablate(config: RunConfig, data: &Path, out: &Path) -> Result<(), Failure> {
    config.validate_ablation().usage()?;
    let samples = load_data(data)?;
    let split = split_dataset(&samples, config.train.seed)
        .context("splitting dataset")
        .runtime()?;
    let report = run_ablation(
        &split,
        &config.model,
        &config.train,
        &config.ablation.variants,
        &config.ablation.seeds,
    )
    .context("running ablation")
    .runtime()?;
    create_dir(out)?;
    fs::write(out.join("ablation.csv"), report.to_csv())
        .context("writing ablation.csv")
        .runtime()?;
    write_json(&out.join("ablation.json"), &report)?;
    for r in &report.reports {
        r.write_files(out, &r.model)
            .with_context(|| format!("writing reports to {}", out.display()))
            .runtime()?;
    }
    print!("{report}");
    Ok(())
}

fn simulate(config: RunConfig, out: &Path, checkpoint: Option<&Path>) -> Result<(), Failure> {
    config.validate_scenario().usage()?;
    let model = match checkpoint {
        Some(path) => {
            require_file(path, "checkpoint")?;
            let ck = Checkpoint::load(path).context("loading checkpoint").usage()?;
            Some(ck.model().context("restoring checkpoint").usage()?)
        }
        None => None,
    };
    let needs_model = [config.scenario.control, config.scenario.experimental]
        .iter()
        .any(|p| matches!(p, convpred::bidsim::PolicySpec::PredictedModel));
    if needs_model && model.is_none() {
        return Err(Failure::Usage(anyhow!("a predicted-model policy needs --checkpoint")));
    }
    let report = config.scenario.run(model.as_ref()).context("running simulation").runtime()?;
    create_dir(out)?;
    fs::write(out.join("ab_summary.csv"), report.summary_csv())
        .context("writing ab_summary.csv")
        .runtime()?;
    fs::write(out.join("ab_campaigns.csv"), report.campaigns_csv())
        .context("writing ab_campaigns.csv")
        .runtime()?;
    write_json(&out.join("ab_report.json"), &report)?;
    println!("{:<24} {:>14} {:>14} {:>9}", "metric", "control", "experimental", "delta");
    for (metric, a, b, rel) in report.deltas() {
        println!("{metric:<24} {a:>14.4} {b:>14.4} {:>8.2}%", 100.0 * rel);
    }
    Ok(())
}
