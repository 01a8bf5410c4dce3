//! AdamW training loop with periodic evaluation and grokking detection.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{augment_commutative, binary_operands, DatasetError, Example, Split};
use crate::group::OpId;
use crate::model::{Model, ModelError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("model vocabulary of {model} cannot hold dataset vocabulary of {data}")]
    VocabMismatch { model: usize, data: usize },
    #[error("optimizer state for {name} has {state} elements, parameter has {param}")]
    ShapeMismatch { name: String, state: usize, param: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f32,
    pub weight_decay: f32,
    pub betas: (f32, f32),
    pub eps: f32,
    pub max_steps: usize,
    pub eval_every: usize,
    pub grok_threshold: f64,
    pub seed: u64,
    pub augment_commutative: bool,
    /// Drop augmented twins that coincide with held-out pairs.
    pub augment_guard: bool,
    /// Stop at the first evaluation that meets the grokking threshold.
    pub early_stop: bool,
    /// Examples per forward pass during evaluation.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 1024,
            lr: 1e-3,
            weight_decay: 0.1,
            betas: (0.9, 0.98),
            eps: 1e-8,
            max_steps: 100_000,
            eval_every: 100,
            grok_threshold: 0.99,
            seed: 0,
            augment_commutative: false,
            augment_guard: false,
            early_stop: false,
            eval_batch: 2048,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.grok_threshold > 0.0 && self.grok_threshold <= 1.0) {
            return fail("grok_threshold must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.eval_batch == 0 {
            return fail("batch_size, eval_every and eval_batch must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryPoint {
    pub step: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

/// Descriptive tags used to group runs into tables.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunLabels {
    pub operation: String,
    pub n_train: usize,
    pub method: String,
    pub task: String,
    pub p: u32,
    pub seed: u64,
    /// Whether transferred weights were frozen, for transfer runs.
    pub transfer_freeze: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub history: Vec<HistoryPoint>,
    pub grok_step: Option<usize>,
    pub final_test_acc: f64,
    pub final_train_acc: f64,
    pub steps_run: usize,
    pub config: TrainConfig,
    pub labels: RunLabels,
    pub wall_time_secs: f64,
}

impl RunRecord {
    pub fn save_json(&self, path: &Path) -> Result<(), TrainError> {
        let text = serde_json::to_string_pretty(self).expect("record serializes");
        write_file(path, text.as_bytes())
    }

    pub fn load_json(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path).map_err(|source| TrainError::File { path: path.into(), source })?;
        serde_json::from_str(&text).map_err(|source| TrainError::Json { path: path.into(), source })
    }

    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("step,train_loss,train_acc,test_acc\n");
        for h in &self.history {
            s.push_str(&format!("{},{},{},{}\n", h.step, h.train_loss, h.train_acc, h.test_acc));
        }
        s
    }

    pub fn save_metrics_csv(&self, path: &Path) -> Result<(), TrainError> {
        write_file(path, self.metrics_csv().as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), TrainError> {
    let err = |source| TrainError::File { path: path.into(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(err)?;
    }
    fs::File::create(path).and_then(|mut f| f.write_all(bytes)).map_err(err)
}

/// First evaluated step whose test accuracy reaches `threshold`.
pub fn detect_grokking(history: &[HistoryPoint], threshold: f64) -> Option<usize> {
    history.iter().find(|h| h.test_acc >= threshold).map(|h| h.step)
}

/// One AdamW update of a flat buffer. Decay is applied to the weights
/// directly, separately from the moment-based step.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update(w: &mut [f32], g: &[f32], m: &mut [f32], v: &mut [f32], t: u64, cfg: &TrainConfig) {
    let (b1, b2) = cfg.betas;
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    for i in 0..w.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        w[i] = w[i] * decay - cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    }
}

#[derive(Debug, Default, Clone)]
pub struct AdamW {
    state: Vec<Option<(Vec<f32>, Vec<f32>)>>,
    t: u64,
}

impl AdamW {
    pub fn new() -> Self {
        AdamW::default()
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update to every trainable parameter. Frozen parameters and
    /// frozen rows are left untouched, including by weight decay.
    pub fn step(&mut self, model: &mut Model, cfg: &TrainConfig) -> Result<(), TrainError> {
        let params = model.parameters_mut();
        if self.state.len() < params.len() {
            self.state.resize(params.len(), None);
        }
        self.t += 1;
        for (p, slot) in params.iter_mut().zip(self.state.iter_mut()) {
            if p.frozen {
                continue;
            }
            let n = p.value.numel();
            let zeros;
            let g = match &p.grad {
                Some(g) => g.as_slice(),
                None => {
                    zeros = vec![0.0; n];
                    &zeros
                }
            };
            let (m, v) = slot.get_or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            if m.len() != n || g.len() != n {
                return Err(TrainError::ShapeMismatch { name: p.name.clone(), state: m.len(), param: n });
            }
            match &p.frozen_rows {
                None => adamw_update(p.value.data_mut(), g, m, v, self.t, cfg),
                Some(mask) => {
                    let row = p.row_len();
                    let w = p.value.data_mut();
                    for (r, _) in mask.iter().enumerate().filter(|(_, &f)| !f) {
                        let s = r * row..(r + 1) * row;
                        adamw_update(&mut w[s.clone()], &g[s.clone()], &mut m[s.clone()], &mut v[s.clone()], self.t, cfg);
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub loss: f64,
}

fn flatten(examples: &[&Example]) -> (Vec<u32>, Vec<u32>) {
    let tokens = examples.iter().flat_map(|e| e.tokens.iter().copied()).collect();
    let targets = examples.iter().map(|e| e.target).collect();
    (tokens, targets)
}

/// Exact-match accuracy of the argmax prediction, with mean cross-entropy.
pub fn evaluate(model: &Model, examples: &[Example], chunk: usize) -> Result<EvalResult, TrainError> {
    if examples.is_empty() {
        return Ok(EvalResult { accuracy: 0.0, loss: 0.0 });
    }
    let seq = examples[0].tokens.len();
    let v = model.config().vocab_size;
    let mut correct = 0usize;
    let mut loss = 0.0f64;
    for batch in examples.chunks(chunk.max(1)) {
        let refs: Vec<&Example> = batch.iter().collect();
        let (tokens, targets) = flatten(&refs);
        let fwd = model.forward(&tokens, batch.len(), seq)?;
        for (row, &t) in fwd.logits().data().chunks_exact(v).zip(&targets) {
            let (mut best, mut best_v) = (0usize, f32::NEG_INFINITY);
            for (i, &x) in row.iter().enumerate() {
                if x > best_v {
                    best = i;
                    best_v = x;
                }
            }
            correct += (best == t as usize) as usize;
            let max = best_v as f64;
            let lse = max + row.iter().map(|&x| (x as f64 - max).exp()).sum::<f64>().ln();
            loss += lse - row[t as usize] as f64;
        }
    }
    let n = examples.len() as f64;
    Ok(EvalResult { accuracy: correct as f64 / n, loss: loss / n })
}

/// Trains `model` on `split` and records the learning curve. `on_eval` sees
/// every history point as it is produced.
pub fn train_with(
    model: &mut Model,
    split: &Split,
    cfg: &TrainConfig,
    labels: RunLabels,
    mut on_eval: impl FnMut(&HistoryPoint),
) -> Result<RunRecord, TrainError> {
    cfg.validate()?;
    let start = Instant::now();
    let vocab = split.vocab.len();
    if model.config().vocab_size < vocab {
        return Err(TrainError::VocabMismatch { model: model.config().vocab_size, data: vocab });
    }
    if split.train.is_empty() {
        return Err(TrainError::Config("empty training set".into()));
    }
    let seq = split.seq_len();
    let augment_op = if cfg.augment_commutative {
        let op = binary_op_of(split)?;
        if !op.commutative() {
            return Err(DatasetError::NotCommutative(op).into());
        }
        Some(op)
    } else {
        None
    };
    let guard: Option<HashSet<(u32, u32)>> = (augment_op.is_some() && cfg.augment_guard)
        .then(|| split.test.iter().chain(&split.val).filter_map(binary_operands).collect());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let batch_size = cfg.batch_size.min(split.train.len());
    let mut opt = AdamW::new();
    let mut history = Vec::new();
    let mut steps_run = 0;

    for step in 1..=cfg.max_steps {
        if cursor + batch_size > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let mut batch: Vec<Example> = order[cursor..cursor + batch_size].iter().map(|&i| split.train[i].clone()).collect();
        cursor += batch_size;
        if let Some(op) = augment_op {
            batch = augment_commutative(&batch, op, guard.as_ref())?;
        }
        let refs: Vec<&Example> = batch.iter().collect();
        let (tokens, targets) = flatten(&refs);
        model.zero_grad();
        model.loss_and_grad(&tokens, &targets, seq)?;
        opt.step(model, cfg)?;
        steps_run = step;

        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let tr = evaluate(model, &split.train, cfg.eval_batch)?;
            let te = evaluate(model, split.eval_set(), cfg.eval_batch)?;
            let point = HistoryPoint { step, train_loss: tr.loss, train_acc: tr.accuracy, test_acc: te.accuracy };
            on_eval(&point);
            history.push(point);
            if cfg.early_stop && te.accuracy >= cfg.grok_threshold {
                break;
            }
        }
    }
    let grok_step = detect_grokking(&history, cfg.grok_threshold);
    let final_test_acc = evaluate(model, &split.test, cfg.eval_batch)?.accuracy;
    let final_train_acc = history.last().map_or(0.0, |h| h.train_acc);
    Ok(RunRecord {
        history,
        grok_step,
        final_test_acc,
        final_train_acc,
        steps_run,
        config: cfg.clone(),
        labels,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

pub fn train(model: &mut Model, split: &Split, cfg: &TrainConfig, labels: RunLabels) -> Result<RunRecord, TrainError> {
    train_with(model, split, cfg, labels, |_| {})
}

fn binary_op_of(split: &Split) -> Result<OpId, TrainError> {
    let e = split.train.first().ok_or_else(|| TrainError::Config("empty training set".into()))?;
    let name = e.tokens.get(1).and_then(|&t| split.vocab.token(t)).unwrap_or_default();
    name.strip_prefix("<op:")
        .and_then(|s| s.strip_suffix('>'))
        .and_then(OpId::from_name)
        .filter(|_| binary_operands(e).is_some())
        .ok_or_else(|| TrainError::Config("commutative augmentation needs a binary task".into()))
}
