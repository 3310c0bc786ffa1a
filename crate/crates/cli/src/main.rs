use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ossod::config::ExperimentConfig;
use ossod::experiment::{compare_runs, evaluate_checkpoint, parse_config, run_matrix, ExperimentManifest};
use ossod::synth::export_dataset;
use ossod::trainer::build_splits;

/// Open-set semi-supervised detection on a synthetic benchmark.
///
/// Any config key can be given as a flag: `--tau-prime 0` is the same as
/// `--set tau_prime=0`.
#[derive(Parser)]
#[command(name = "ossod", version)]
struct Cli {
    /// Output root for datasets and runs.
    #[arg(long, global = true, env = "OSSOD_OUT", default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config or manifest file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Config override, repeatable.
    #[arg(long = "set", short = 's', value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the benchmark splits as JSON lines.
    Gen {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Destination file; defaults to `<out>/datasets/<hash>.jsonl`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// One run with a single seed.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Every variant × seed of a preset or manifest.
    Matrix {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Built-in variant set, e.g. `scorer-ablation`.
        #[arg(long)]
        preset: Option<String>,
        /// Comma-separated seed list.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Per-seed deltas of a treatment run set over a baseline.
    Compare {
        baseline: PathBuf,
        treatment: PathBuf,
        /// Also write the report as JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Re-score a teacher checkpoint.
    Eval {
        checkpoint: PathBuf,
        /// Config of the run; defaults to the `config.txt` of the run
        /// directory holding the checkpoint.
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long = "set", short = 's', value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

/// Rewrites `--some-key value` and `--some-key=value` into `--set some_key=value`
/// for every config key.
fn expand_key_flags(args: Vec<String>) -> Vec<String> {
    let keys: Vec<&str> = ExperimentConfig::default().entries().iter().map(|(k, _)| *k).collect();
    let mut out = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--") else {
            out.push(a);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.replace('-', "_"), Some(v.to_string())),
            None => (flag.replace('-', "_"), None),
        };
        if name == "seed" || !keys.contains(&name.as_str()) {
            out.push(a);
            continue;
        }
        let value = match inline.or_else(|| it.next()) {
            Some(v) => v,
            None => {
                out.push(a);
                continue;
            }
        };
        out.push("--set".into());
        out.push(format!("{name}={value}"));
    }
    out
}

fn single_run_manifest(cfg: &ConfigArgs, seed: u64, out: &Path) -> Result<ExperimentManifest> {
    let mut m = parse_config(cfg.config.as_deref(), &cfg.overrides, out)?;
    m.seeds = vec![seed];
    Ok(m)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen { cfg, seed, output } => {
            let m = single_run_manifest(&cfg, seed, &cli.out)?;
            let config = m.run_config(&m.variants[0], seed)?;
            let splits = build_splits(&config)?;
            let path = output.unwrap_or_else(|| cli.out.join("datasets").join(format!("{}.jsonl", config.hash())));
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).with_context(|| parent.display().to_string())?;
            }
            export_dataset(&splits, &path)?;
            println!(
                "{}: {} labeled, {} unlabeled, {} eval scenes",
                path.display(),
                splits.labeled.len(),
                splits.unlabeled.len(),
                splits.eval.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { cfg, seed } => {
            let m = single_run_manifest(&cfg, seed, &cli.out)?;
            if m.variants.len() != 1 {
                bail!("train runs one variant; use `matrix` for {}", m.variants.len());
            }
            finish_matrix(&m)
        }
        Command::Matrix { cfg, preset, seeds } => {
            let mut overrides = cfg.overrides.clone();
            if let Some(p) = preset {
                overrides.insert(0, format!("preset={p}"));
            }
            if let Some(s) = seeds {
                overrides.push(format!("seeds={s}"));
            }
            let m = parse_config(cfg.config.as_deref(), &overrides, &cli.out)?;
            finish_matrix(&m)
        }
        Command::Compare {
            baseline,
            treatment,
            json,
        } => {
            let report = compare_runs(&baseline, &treatment)?;
            print!("{}", report.table());
            if let Some(p) = json {
                std::fs::write(&p, report.to_json() + "\n").with_context(|| p.display().to_string())?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            checkpoint,
            config,
            overrides,
        } => {
            let config_path = match config {
                Some(p) => p,
                None => checkpoint
                    .parent()
                    .and_then(Path::parent)
                    .map(|d| d.join("config.txt"))
                    .context("cannot locate config.txt; pass --config")?,
            };
            let mut m = parse_config(Some(&config_path), &overrides, &cli.out)?;
            m.seeds = vec![m.base.trainer.seed];
            let config = m.run_config(&m.variants[0], m.base.trainer.seed)?;
            let rec = evaluate_checkpoint(&checkpoint, &config)?;
            println!("{}", ossod::eval::CSV_HEADER);
            println!("{}", rec.csv_row());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn finish_matrix(m: &ExperimentManifest) -> Result<ExitCode> {
    let report = run_matrix(m)?;
    print!("{}", report.table());
    println!("results in {}", report.dir.display());
    for v in &report.variants {
        for (seed, err) in &v.failures {
            eprintln!("run {}/{seed} failed: {err}", v.variant);
        }
    }
    Ok(if report.num_failures() == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse_from(expand_key_flags(std::env::args().collect()));
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn key_flags_become_overrides() {
        let got = expand_key_flags(s(&["ossod", "train", "--tau-prime", "0", "--lambda_ood=0", "--seed", "3"]));
        assert_eq!(
            got,
            s(&["ossod", "train", "--set", "tau_prime=0", "--set", "lambda_ood=0", "--seed", "3"])
        );
    }

    #[test]
    fn unknown_flags_pass_through() {
        let got = expand_key_flags(s(&["ossod", "matrix", "--preset", "main", "--out", "x"]));
        assert_eq!(got, s(&["ossod", "matrix", "--preset", "main", "--out", "x"]));
    }
}
