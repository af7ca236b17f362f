//! `hetlabel`: generate noisy datasets, train, sweep temperatures, run
//! diagnostics and build result tables.
//!
//! Exit codes: 0 on success, 1 for configuration or usage errors, 2 when a
//! run or sweep cell fails.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hetlabel_core::harness::{self, ExperimentConfig};
use hetlabel_core::noisy_labels::{write_csv, write_metadata, DatasetMetadata};
use hetlabel_core::Error;

#[derive(Parser)]
#[command(name = "hetlabel", version, about = "Heteroscedastic classification under label noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set head.temperature=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Comma-separated seeds, replacing `seeds` from the config.
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// Output directory, replacing `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the corrupted dataset for each seed as CSV plus metadata.
    Generate(Common),
    /// Train and evaluate at `head.temperature` for each seed.
    Train(Common),
    /// Run every (temperature, seed) cell and compare against the baselines.
    SweepTemperature {
        #[command(flatten)]
        common: Common,
        /// Worker threads for independent cells.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Bias per temperature and the dispersion series for one stored run.
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Run directory holding result.json, history.csv and the checkpoint.
        #[arg(long)]
        run: PathBuf,
    },
    /// Consolidate every result.json under a directory.
    Report {
        #[arg(long)]
        results: PathBuf,
    },
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::Json(_) => Failure::Config(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut overrides = common.set.clone();
    if let Some(seeds) = &common.seed_list {
        overrides.push(format!("seeds={}", serde_json::to_string(seeds).expect("seed list")));
    }
    if let Some(out) = &common.out {
        overrides.push(format!(
            "out_dir={}",
            serde_json::to_string(&out.to_string_lossy()).expect("path")
        ));
    }
    ExperimentConfig::load(common.config.as_deref(), &overrides).map_err(|e| match e {
        Error::Io { .. } | Error::Missing(_) => Failure::Config(e.to_string()),
        other => other.into(),
    })
}

fn generate(common: &Common) -> Result<(), Failure> {
    let cfg = load(common)?;
    let dir = cfg.out_dir.join(cfg.hash()).join("data");
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Run(e.to_string()))?;
    for &seed in &cfg.seeds {
        let (data, spec) = harness::build_dataset(&cfg, seed)?;
        let csv = dir.join(format!("seed-{seed}.csv"));
        write_csv(&data, &csv)?;
        let meta = DatasetMetadata {
            num_classes: data.num_classes,
            seed: cfg.data_seed.unwrap_or(seed),
            split_fractions: [0.7, 0.15, 0.15],
            corruption: Some(spec),
            generator: Some(serde_json::to_value(&cfg.dataset).map_err(Error::from)?),
        };
        write_metadata(&meta, &dir.join(format!("seed-{seed}.json")))?;
        println!(
            "seed {seed}: {} rows, label disagreement {:.4} -> {}",
            data.len(),
            data.disagreement_rate(),
            csv.display()
        );
    }
    Ok(())
}

fn train(common: &Common) -> Result<(), Failure> {
    let cfg = load(common)?;
    let tau = cfg.head.temperature;
    let mut failed = 0;
    for &seed in &cfg.seeds {
        match harness::run_experiment(&cfg, seed, tau) {
            Ok(r) => println!(
                "seed {seed}: valid nll {:.4}  test nll {:.4}  test acc {:.4}  clean acc {:.4}  ece {:.4}  ({} epochs, {:.1}s)",
                r.valid.noisy_nll,
                r.test.noisy_nll,
                r.test.noisy_accuracy,
                r.test.clean_accuracy,
                r.test.ece,
                r.epochs_run,
                r.wall_time_secs
            ),
            Err(e) => {
                failed += 1;
                eprintln!("seed {seed}: failed: {e}");
            }
        }
    }
    println!(
        "results in {}",
        cfg.out_dir.join(cfg.hash()).display()
    );
    if failed > 0 {
        return Err(Failure::Run(format!("{failed} run(s) failed")));
    }
    Ok(())
}

fn sweep(common: &Common, workers: usize) -> Result<(), Failure> {
    let cfg = load(common)?;
    let report = harness::sweep_temperature(&cfg, workers)?;
    println!("{:>8} {:>5} {:>10} {:>10} {:>10} {:>12} {:>10}", "tau", "runs", "valid_nll", "test_nll", "clean_acc", "dispersion", "bias");
    for row in &report.per_tau {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:>8} {:>5} {:>10.4} {:>10.4} {:>10.4} {:>12} {:>10}",
            row.tau,
            row.runs,
            row.mean_valid_nll,
            row.mean_test_nll,
            row.mean_test_clean_accuracy,
            opt(row.median_log_dispersion),
            opt(row.median_bias)
        );
    }
    if let (Some(t), Some(nll)) = (report.tau_star, report.test_nll_at_tau_star) {
        println!("tau* = {t} (mean test nll {nll:.4})");
    }
    for c in &report.comparisons {
        match &c.t_test {
            Some(t) => println!(
                "vs {}: {:.4} vs {:.4} over {} seeds, t = {:.3}, p = {:.4}{}",
                c.against,
                c.mean_test_nll,
                c.baseline_mean_test_nll,
                c.seeds.len(),
                t.t,
                t.p_value,
                hetlabel_core::metrics::significance_marker(t.p_value)
            ),
            None => println!("vs {}: no test ({})", c.against, c.note.as_deref().unwrap_or("")),
        }
    }
    println!("summary in {}", cfg.out_dir.join(&report.config_hash).display());
    if report.failures > 0 {
        for c in report.cells.iter().filter(|c| c.error.is_some()) {
            eprintln!("cell tau={} seed={} failed: {}", c.tau, c.seed, c.error.as_deref().unwrap_or(""));
        }
        return Err(Failure::Run(format!("{} cell(s) failed", report.failures)));
    }
    Ok(())
}

fn diagnose(common: &Common, run: &std::path::Path) -> Result<(), Failure> {
    let cfg = load(common)?;
    let d = harness::diagnose(run, &cfg)?;
    println!("{:>8} {:>12} {:>12}", "tau", "bias", "std_error");
    for b in &d.bias {
        println!("{:>8} {:>12.6} {:>12.6}", b.tau, b.value, b.std_error);
    }
    println!("{} epochs of dispersion history", d.dispersion.len());
    Ok(())
}

fn report(results: &std::path::Path) -> Result<(), Failure> {
    let r = harness::report(results)?;
    for (path, why) in &r.malformed {
        eprintln!("skipped {}: {why}", path.display());
    }
    println!("{} runs; reference {}", r.rows, r.reference.as_deref().unwrap_or("-"));
    for m in &r.methods {
        println!(
            "{:<48} n={:<3} nll {:.4} ± {:.4}{}  clean acc {:.4} ± {:.4}",
            m.method, m.runs, m.mean_test_nll, m.std_test_nll, m.marker, m.mean_test_clean_accuracy, m.std_test_clean_accuracy
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match &cli.command {
        Command::Generate(c) => generate(c),
        Command::Train(c) => train(c),
        Command::SweepTemperature { common, workers } => sweep(common, *workers),
        Command::Diagnose { common, run } => diagnose(common, run),
        Command::Report { results } => report(results),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
