use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use groklab_cli::commands::{self, KaKind};
use groklab_cli::config::{ExperimentConfig, Scale};
use groklab_cli::run;
use groklab_cli::{CliError, Result};

#[derive(Parser)]
#[command(name = "groklab", version, about = "Grokking experiments on modular arithmetic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config (JSON). Repeatable; a directory means every *.json in it.
    #[arg(long, required = true)]
    config: Vec<PathBuf>,
    /// Comma-separated seeds replacing the config's list.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    #[arg(long, value_enum, default_value_t = Scale::Paper)]
    scale: Scale,
    /// Output directory replacing the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the train/val/test splits of each seed as JSON lines.
    GenData(ExperimentArgs),
    /// Train every seed of each config and write its run directory.
    Train {
        #[command(flatten)]
        args: ExperimentArgs,
        /// Validate and print the run plan without training.
        #[arg(long)]
        dry_run: bool,
    },
    /// Check the exact group representations on every input.
    VerifyKa {
        #[arg(long, default_value_t = 97)]
        p: u32,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "all")]
        kinds: Vec<KaKind>,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PCA of a checkpoint's numeral embeddings.
    AnalyzeEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Projection CSV path (token,x,y,theta).
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate the run records under a directory into a results table.
    Report {
        #[arg(long)]
        runs: PathBuf,
        /// Directory for table.csv and table.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn log(msg: &str) {
    eprintln!("{msg}");
}

fn expand(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| CliError::file(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// Loads, overrides and scales every config. Configs with a transfer source
/// are moved after the rest so sources get trained first.
fn load_configs(args: &ExperimentArgs, dry_run: bool) -> Result<Vec<ExperimentConfig>> {
    let mut cfgs = Vec::new();
    for path in expand(&args.config)? {
        let mut cfg = ExperimentConfig::load(&path)?;
        if let Some(seeds) = &args.seed {
            cfg.seeds = seeds.clone();
        }
        if let Some(out) = &args.out {
            cfg.output_dir = out.clone();
        }
        let (scaled, subs) = cfg.scaled(args.scale);
        for s in &subs {
            log(&format!("{}: --scale ci sets {} {} -> {}", scaled.name, s.field, s.from, s.to));
        }
        if !subs.is_empty() && !dry_run {
            let dir = scaled.output_dir.join(&scaled.name);
            std::fs::create_dir_all(&dir).map_err(|e| CliError::file(&dir, e))?;
            let path = dir.join("scale_substitutions.json");
            let body = serde_json::to_string_pretty(&subs).expect("substitutions serialize");
            std::fs::write(&path, body).map_err(|e| CliError::file(&path, e))?;
        }
        scaled.validate()?;
        cfgs.push(scaled);
    }
    cfgs.sort_by_key(|c| c.transfer.is_some());
    Ok(cfgs)
}

fn print(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json prints"));
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(args) => {
            let mut dirs = Vec::new();
            for cfg in load_configs(&args, false)? {
                dirs.extend(run::generate_data(&cfg)?);
            }
            print(&json!({ "data_dirs": dirs }));
        }
        Command::Train { args, dry_run } => {
            let cfgs = load_configs(&args, dry_run)?;
            let mut summary = Vec::new();
            for cfg in &cfgs {
                if dry_run {
                    summary.push(json!({ "config": cfg, "runs": run::plan(cfg)? }));
                    continue;
                }
                let workers = run::worker_count(cfg.seeds.len());
                for o in run::run_experiment(cfg, workers, &log)? {
                    summary.push(json!({
                        "name": cfg.name,
                        "seed": o.seed,
                        "run_dir": o.run_dir,
                        "grok_step": o.record.grok_step,
                        "final_test_acc": o.record.final_test_acc,
                        "final_train_acc": o.record.final_train_acc,
                        "steps_run": o.record.steps_run,
                    }));
                }
            }
            print(&json!({ "dry_run": dry_run, "runs": summary }));
        }
        Command::VerifyKa { p, kinds, out } => {
            let report = commands::verify_ka(p, &kinds)?;
            let v = serde_json::to_value(&report).expect("report serializes");
            if let Some(out) = out {
                write_json(&out, &v)?;
            }
            print(&v);
            if report.total_failures > 0 {
                return Err(CliError::Verification(format!(
                    "{} of {} checks failed",
                    report.total_failures, report.total_checked
                )));
            }
        }
        Command::AnalyzeEmbeddings { checkpoint, out } => {
            let a = commands::analyze_embeddings(&checkpoint)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| CliError::file(dir, e))?;
            }
            std::fs::write(&out, a.projection.to_csv()).map_err(|e| CliError::file(&out, e))?;
            let mut v = serde_json::to_value(&a).expect("analysis serializes");
            v["projection_csv"] = json!(out);
            print(&v);
        }
        Command::Report { runs, out } => {
            let r = commands::report(&runs, out.as_deref())?;
            print!("{}", r.text);
        }
    }
    Ok(())
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    let body = serde_json::to_string_pretty(v).expect("json prints");
    std::fs::write(path, body).map_err(|e| CliError::file(path, e))
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
