//! Turning an experiment config into datasets, trained models and run
//! directories.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use groklab::checkpoint;
use groklab::dataset::{self, Split};
use groklab::model::Model;
use groklab::training::{self, RunLabels, RunRecord, TrainConfig};
use groklab::transfer::{self, TransferSpec};

use crate::config::{ExperimentConfig, Task};
use crate::error::{CliError, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RECORD_FILE: &str = "record.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// Builds the dataset split for one seed.
pub fn build_split(cfg: &ExperimentConfig, seed: u64) -> Result<Split> {
    let p = cfg.prime()?;
    Ok(match cfg.task {
        Task::Binary => dataset::gen_binary(cfg.op, p, cfg.n_train, seed)?,
        Task::Composition => dataset::gen_composition(cfg.op, cfg.n_operands, p, cfg.n_train, cfg.n_val, cfg.n_test, seed)?,
        Task::System => dataset::gen_system(cfg.op, p, cfg.n_train, cfg.n_val, cfg.n_test, seed)?,
        Task::LimitedTokens => limited_split(cfg, seed)?,
    })
}

/// Samples a larger training pool, keeps the operand-limited examples and
/// truncates them to `n_train`, growing the pool until enough survive.
fn limited_split(cfg: &ExperimentConfig, seed: u64) -> Result<Split> {
    let p = cfg.prime()?;
    let carrier = if cfg.op == groklab::group::OpId::Mul { cfg.p - 1 } else { cfg.p } as f64;
    let allowed = if cfg.op == groklab::group::OpId::Mul { cfg.max_operand - 1 } else { cfg.max_operand } as f64;
    let keep = (allowed / carrier).powi(cfg.n_operands as i32).max(1e-9);
    let room = cfg.input_space() as usize - cfg.n_val - cfg.n_test;
    let mut pool = ((cfg.n_train as f64 / keep) * 1.1).ceil() as usize;
    loop {
        pool = pool.min(room);
        let full = dataset::gen_composition(cfg.op, cfg.n_operands, p, pool, cfg.n_val, cfg.n_test, seed)?;
        let mut split = dataset::limit_tokens(&full, cfg.max_operand)?;
        if split.train.len() >= cfg.n_train {
            split.train.truncate(cfg.n_train);
            return Ok(split);
        }
        if pool == room {
            return Err(CliError::Config(format!(
                "only {} operand-limited training examples exist, {} requested",
                split.train.len(),
                cfg.n_train
            )));
        }
        pool *= 2;
    }
}

/// A single (config, seed) unit of work.
#[derive(Debug, Clone, Serialize)]
pub struct PlannedRun {
    pub name: String,
    pub seed: u64,
    pub run_dir: PathBuf,
    pub operation: String,
    pub method: String,
    pub parameters: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_exists: Option<bool>,
}

/// Validates a config and lists the runs it would produce, without touching
/// any data.
pub fn plan(cfg: &ExperimentConfig) -> Result<Vec<PlannedRun>> {
    cfg.validate()?;
    let vocab = dataset::Vocab::new(cfg.prime()?, &[cfg.op], cfg.task == Task::System);
    let seq = match cfg.task {
        Task::Binary => 4,
        Task::Composition | Task::LimitedTokens => 2 * cfg.n_operands,
        Task::System => 13,
    };
    let parameters = cfg.model_config(vocab.len(), seq).parameter_count();
    Ok(cfg
        .seeds
        .iter()
        .map(|&seed| {
            let source = cfg.source_checkpoint(seed);
            PlannedRun {
                name: cfg.name.clone(),
                seed,
                run_dir: cfg.run_dir(seed),
                operation: cfg.operation_label(),
                method: cfg.method_label(),
                parameters,
                source_exists: source.as_ref().map(|s| s.exists()),
                source_checkpoint: source,
            }
        })
        .collect())
}

fn labels(cfg: &ExperimentConfig, seed: u64) -> RunLabels {
    RunLabels {
        operation: cfg.operation_label(),
        n_train: cfg.n_train,
        method: cfg.method_label(),
        task: cfg.task.name().to_string(),
        p: cfg.p,
        seed,
        transfer_freeze: cfg.transfer.as_ref().map(|t| t.freeze_transferred),
    }
}

/// Config snapshot for one seed, with the transfer path resolved.
fn snapshot(cfg: &ExperimentConfig, seed: u64, train: &TrainConfig) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.seeds = vec![seed];
    c.train = train.clone();
    if let (Some(t), Some(src)) = (c.transfer.as_mut(), cfg.source_checkpoint(seed)) {
        t.source_checkpoint = src;
    }
    c
}

/// Result of one trained seed.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub run_dir: PathBuf,
    pub record: RunRecord,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::file(path, e))
}

/// Trains one seed and writes its run directory.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutcome> {
    let split = build_split(cfg, seed)?;
    let mcfg = cfg.model_config(split.vocab.len(), split.seq_len());
    let mut model = Model::new(mcfg, seed)?;
    if let Some(spec) = &cfg.transfer {
        let spec = TransferSpec { source_checkpoint: cfg.source_checkpoint(seed).expect("transfer set"), ..spec.clone() };
        transfer::apply(&spec, &mut model, &split.vocab)?;
    }
    let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
    let record = training::train(&mut model, &split, &train_cfg, labels(cfg, seed))?;

    let dir = cfg.run_dir(seed);
    fs::create_dir_all(&dir).map_err(|e| CliError::file(&dir, e))?;
    write(&dir.join(CONFIG_FILE), &snapshot(cfg, seed, &train_cfg).to_json())?;
    record.save_metrics_csv(&dir.join(METRICS_FILE))?;
    record.save_json(&dir.join(RECORD_FILE))?;
    checkpoint::save(&model, split.vocab.tokens(), &dir.join(CHECKPOINT_FILE))?;
    Ok(RunOutcome { seed, run_dir: dir, record })
}

/// Worker count: `GROK_THREADS` when set, otherwise the machine's
/// parallelism, never more than the number of jobs.
pub fn worker_count(jobs: usize) -> usize {
    let cap = std::env::var("GROK_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    cap.min(jobs).max(1)
}

/// Trains every seed of `cfg`, seeds in parallel up to `workers`. Outcomes
/// come back in seed order. Transfer sources are checked before any run
/// starts.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize, log: &(dyn Fn(&str) + Sync)) -> Result<Vec<RunOutcome>> {
    cfg.validate()?;
    for &seed in &cfg.seeds {
        if let Some(src) = cfg.source_checkpoint(seed) {
            if !src.exists() {
                return Err(CliError::file(&src, "source checkpoint does not exist"));
            }
        }
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunOutcome>>>> = Mutex::new((0..cfg.seeds.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, cfg.seeds.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&seed) = cfg.seeds.get(i) else { break };
                log(&format!("{} seed {seed}: training", cfg.name));
                let r = run_seed(cfg, seed);
                if let Ok(o) = &r {
                    log(&format!(
                        "{} seed {seed}: grok step {:?}, final test acc {:.4}, {:.1}s",
                        cfg.name, o.record.grok_step, o.record.final_test_acc, o.record.wall_time_secs
                    ));
                }
                results.lock().expect("no poisoned lock")[i] = Some(r);
            });
        }
    });
    results.into_inner().expect("no poisoned lock").into_iter().map(|r| r.expect("every seed ran")).collect()
}

/// Writes train/val/test JSON-lines files and the vocabulary for each seed.
pub fn generate_data(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let mut dirs = Vec::new();
    for &seed in &cfg.seeds {
        let split = build_split(cfg, seed)?;
        let dir = cfg.run_dir(seed).join("data");
        fs::create_dir_all(&dir).map_err(|e| CliError::file(&dir, e))?;
        dataset::write_jsonl(&split.train, &dir.join("train.jsonl"))?;
        dataset::write_jsonl(&split.val, &dir.join("val.jsonl"))?;
        dataset::write_jsonl(&split.test, &dir.join("test.jsonl"))?;
        let vocab = serde_json::to_string_pretty(split.vocab.tokens()).expect("strings serialize");
        write(&dir.join("vocab.json"), &vocab)?;
        dirs.push(dir);
    }
    Ok(dirs)
}
