//! Declarative experiment configs and the CI-scale rewrite.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use groklab::group::{OpId, Prime};
use groklab::model::ModelConfig;
use groklab::training::TrainConfig;
use groklab::transfer::{TransferMode, TransferSpec};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Binary,
    Composition,
    System,
    LimitedTokens,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Binary => "binary",
            Task::Composition => "composition",
            Task::System => "system",
            Task::LimitedTokens => "limited_tokens",
        }
    }
}

/// Optional changes to the full-size model defaults.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_model: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_heads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_layers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed_mlp_depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classifier_hidden: Option<usize>,
}

impl ModelOverrides {
    pub fn apply(&self, cfg: &mut ModelConfig) {
        if let Some(v) = self.d_model {
            cfg.d_model = v;
        }
        if let Some(v) = self.n_heads {
            cfg.n_heads = v;
        }
        if let Some(v) = self.n_layers {
            cfg.n_layers = v;
        }
        if let Some(v) = self.embed_mlp_depth {
            cfg.embed_mlp_depth = v;
        }
        if let Some(v) = self.classifier_hidden {
            cfg.classifier_hidden = v;
        }
    }

    fn or(&self, fallback: &ModelOverrides) -> ModelOverrides {
        ModelOverrides {
            d_model: self.d_model.or(fallback.d_model),
            n_heads: self.n_heads.or(fallback.n_heads),
            n_layers: self.n_layers.or(fallback.n_layers),
            embed_mlp_depth: self.embed_mlp_depth.or(fallback.embed_mlp_depth),
            classifier_hidden: self.classifier_hidden.or(fallback.classifier_hidden),
        }
    }
}

/// Training knobs a CI-scale block may replace.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub betas: Option<(f32, f32)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub early_stop: Option<bool>,
}

/// Replacement values used by `--scale ci`. Fields left out fall back to the
/// built-in shrinking rule.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_val: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_operand: Option<u32>,
    pub model: ModelOverrides,
    pub train: TrainOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Run-directory name under `output_dir`.
    pub name: String,
    pub task: Task,
    pub op: OpId,
    #[serde(default = "default_p")]
    pub p: u32,
    pub n_train: usize,
    /// Validation and test sizes for sampled tasks (composition, system,
    /// limited tokens). Binary tasks test on every held-out pair.
    #[serde(default = "default_n_val")]
    pub n_val: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_n_operands")]
    pub n_operands: usize,
    #[serde(default = "default_max_operand")]
    pub max_operand: u32,
    pub seeds: Vec<u64>,
    /// Table label; derived from the config when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default)]
    pub model: ModelOverrides,
    #[serde(default)]
    pub train: TrainConfig,
    /// `{seed}` in `source_checkpoint` is replaced by the run's seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer: Option<TransferSpec>,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<ScaleOverrides>,
}

fn default_p() -> u32 {
    97
}
fn default_n_val() -> usize {
    30_000
}
fn default_n_test() -> usize {
    100_000
}
fn default_n_operands() -> usize {
    3
}
fn default_max_operand() -> u32 {
    80
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Ci,
    #[default]
    Paper,
}

/// One field changed by the CI rewrite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Substitution {
    pub field: String,
    pub from: String,
    pub to: String,
}

/// Modulus used by the built-in CI rule.
pub const CI_PRIME: u32 = 31;
pub const CI_MAX_STEPS: usize = 20_000;
pub const CI_BATCH: usize = 512;
pub const CI_D_MODEL: usize = 64;

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::ConfigParse { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn prime(&self) -> Result<Prime> {
        Ok(Prime::new(self.p)?)
    }

    /// Number of distinct inputs the task draws from.
    pub fn input_space(&self) -> u128 {
        let p = self.p as u128;
        match self.task {
            Task::Binary => match self.op {
                OpId::Div => p * (p - 1),
                _ => p * p,
            },
            Task::Composition | Task::LimitedTokens => {
                let base = if self.op == OpId::Mul { p - 1 } else { p };
                base.pow(self.n_operands as u32)
            }
            Task::System => {
                let base = if self.op == OpId::Mul { p - 1 } else { p };
                base.pow(3)
            }
        }
    }

    pub fn operation_label(&self) -> String {
        let sym = if self.op == OpId::Mul { "*" } else { "+" };
        match self.task {
            Task::Binary => self.op.formula().to_string(),
            Task::Composition | Task::LimitedTokens => {
                (1..=self.n_operands).map(|i| format!("x{i}")).collect::<Vec<_>>().join(sym)
            }
            Task::System => format!("{} system", self.op.formula()),
        }
    }

    pub fn method_label(&self) -> String {
        if let Some(m) = &self.method {
            return m.clone();
        }
        let mut m = match self.transfer.as_ref().map(|t| t.mode) {
            None => "baseline".to_string(),
            Some(TransferMode::DecoderBlock) => "DT".to_string(),
            Some(TransferMode::Embedding | TransferMode::HybridEmbedding) => "ET".to_string(),
        };
        if self.train.augment_commutative {
            m.push_str("+CA");
        }
        m
    }

    /// Source checkpoint path for one seed.
    pub fn source_checkpoint(&self, seed: u64) -> Option<PathBuf> {
        self.transfer
            .as_ref()
            .map(|t| PathBuf::from(t.source_checkpoint.to_string_lossy().replace("{seed}", &seed.to_string())))
    }

    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.output_dir.join(&self.name).join(format!("seed{seed}"))
    }

    pub fn model_config(&self, vocab_size: usize, seq_len: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(vocab_size, seq_len);
        self.model.apply(&mut cfg);
        cfg
    }

    /// Structural checks that need no files.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CliError::Config(format!("{}: {m}", self.name)));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return fail("name must be a non-empty single path component".into());
        }
        if self.seeds.is_empty() {
            return fail("seeds must be nonempty".into());
        }
        self.prime()?;
        match self.task {
            Task::Binary => {}
            Task::Composition | Task::LimitedTokens | Task::System => {
                if !matches!(self.op, OpId::Add | OpId::Mul) {
                    return fail(format!("{} tasks support add and mul only, got {}", self.task.name(), self.op));
                }
            }
        }
        if matches!(self.task, Task::Composition | Task::LimitedTokens) && !(3..=4).contains(&self.n_operands) {
            return fail(format!("n_operands must be 3 or 4, got {}", self.n_operands));
        }
        if self.task == Task::LimitedTokens && (self.max_operand < 2 || self.max_operand > self.p) {
            return fail(format!("max_operand {} must lie in 2..={}", self.max_operand, self.p));
        }
        let needed = match self.task {
            Task::Binary => self.n_train as u128 + 1,
            _ => (self.n_train + self.n_val + self.n_test) as u128,
        };
        if self.n_train == 0 || needed > self.input_space() {
            return fail(format!("{needed} examples requested from an input space of {}", self.input_space()));
        }
        if self.task != Task::Binary && self.n_test == 0 {
            return fail("n_test must be positive".into());
        }
        if self.train.augment_commutative && !self.op.commutative() {
            return fail(format!("commutative augmentation needs a commutative op, got {}", self.op));
        }
        if let Some(t) = &self.transfer {
            if t.mode == TransferMode::HybridEmbedding && self.task != Task::System {
                return fail("hybrid_embedding transfer is meant for system tasks".into());
            }
        }
        self.train.validate()?;
        self.model_config(self.p as usize + 8, 13).validate()?;
        Ok(())
    }

    /// Applies a scale, returning the rewritten config and what changed.
    pub fn scaled(&self, scale: Scale) -> (ExperimentConfig, Vec<Substitution>) {
        match scale {
            Scale::Paper => (self.clone(), Vec::new()),
            Scale::Ci => self.ci_scaled(),
        }
    }

    fn ci_scaled(&self) -> (ExperimentConfig, Vec<Substitution>) {
        let o = self.ci.clone().unwrap_or_default();
        let mut out = self.clone();
        out.p = o.p.unwrap_or(self.p.min(CI_PRIME));
        // sizes keep their share of the input space unless given explicitly
        let ratio = out.input_space() as f64 / self.input_space() as f64;
        let shrink = |n: usize| ((n as f64 * ratio).round() as usize).max(1);
        out.n_train = o.n_train.unwrap_or_else(|| shrink(self.n_train));
        out.n_val = o.n_val.unwrap_or_else(|| shrink(self.n_val));
        out.n_test = o.n_test.unwrap_or_else(|| shrink(self.n_test));
        out.max_operand = o
            .max_operand
            .unwrap_or_else(|| ((self.max_operand as f64 * out.p as f64 / self.p as f64).round() as u32).max(2));
        let default_model = ModelOverrides {
            d_model: Some(self.model.d_model.unwrap_or(256).min(CI_D_MODEL)),
            classifier_hidden: Some(self.model.classifier_hidden.unwrap_or(256).min(CI_D_MODEL)),
            ..self.model.clone()
        };
        out.model = o.model.or(&default_model);
        let t = &o.train;
        out.train.batch_size = t.batch_size.unwrap_or(self.train.batch_size.min(CI_BATCH));
        out.train.max_steps = t.max_steps.unwrap_or(self.train.max_steps.min(CI_MAX_STEPS));
        out.train.lr = t.lr.unwrap_or(self.train.lr);
        out.train.weight_decay = t.weight_decay.unwrap_or(self.train.weight_decay);
        out.train.betas = t.betas.unwrap_or(self.train.betas);
        out.train.eval_every = t.eval_every.unwrap_or(self.train.eval_every);
        out.train.early_stop = t.early_stop.unwrap_or(self.train.early_stop);
        out.ci = None;
        let subs = diff(self, &out);
        (out, subs)
    }
}

fn diff(before: &ExperimentConfig, after: &ExperimentConfig) -> Vec<Substitution> {
    let mut subs = Vec::new();
    let mut push = |field: &str, a: String, b: String| {
        if a != b {
            subs.push(Substitution { field: field.into(), from: a, to: b });
        }
    };
    push("p", before.p.to_string(), after.p.to_string());
    push("n_train", before.n_train.to_string(), after.n_train.to_string());
    if before.task != Task::Binary {
        push("n_val", before.n_val.to_string(), after.n_val.to_string());
        push("n_test", before.n_test.to_string(), after.n_test.to_string());
    }
    if before.task == Task::LimitedTokens {
        push("max_operand", before.max_operand.to_string(), after.max_operand.to_string());
    }
    let (mut mb, mut ma) = (ModelConfig::new(0, 0), ModelConfig::new(0, 0));
    before.model.apply(&mut mb);
    after.model.apply(&mut ma);
    push("model.d_model", mb.d_model.to_string(), ma.d_model.to_string());
    push("model.n_heads", mb.n_heads.to_string(), ma.n_heads.to_string());
    push("model.n_layers", mb.n_layers.to_string(), ma.n_layers.to_string());
    push("model.embed_mlp_depth", mb.embed_mlp_depth.to_string(), ma.embed_mlp_depth.to_string());
    push("model.classifier_hidden", mb.classifier_hidden.to_string(), ma.classifier_hidden.to_string());
    let (tb, ta) = (&before.train, &after.train);
    push("train.batch_size", tb.batch_size.to_string(), ta.batch_size.to_string());
    push("train.max_steps", tb.max_steps.to_string(), ta.max_steps.to_string());
    push("train.lr", tb.lr.to_string(), ta.lr.to_string());
    push("train.weight_decay", tb.weight_decay.to_string(), ta.weight_decay.to_string());
    push("train.betas", format!("{:?}", tb.betas), format!("{:?}", ta.betas));
    push("train.eval_every", tb.eval_every.to_string(), ta.eval_every.to_string());
    push("train.early_stop", tb.early_stop.to_string(), ta.early_stop.to_string());
    subs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ExperimentConfig {
        serde_json::from_str(
            r#"{"name": "add", "task": "binary", "op": "add", "n_train": 5000, "seeds": [0, 1],
                "output_dir": "runs"}"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_follow_the_paper_setup() {
        let c = sample();
        assert_eq!(c.p, 97);
        assert_eq!(c.train.batch_size, 1024);
        assert_eq!(c.train.lr, 1e-3);
        assert_eq!(c.train.weight_decay, 0.1);
        assert_eq!(c.train.max_steps, 100_000);
        assert_eq!((c.n_val, c.n_test), (30_000, 100_000));
        assert_eq!(c.method_label(), "baseline");
        assert_eq!(c.operation_label(), "x1+x2");
        c.validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let r: std::result::Result<ExperimentConfig, _> = serde_json::from_str(
            r#"{"name": "a", "task": "binary", "op": "add", "n_train": 5, "seeds": [0], "output_dir": "r", "bogus": 1}"#,
        );
        assert!(r.is_err());
    }

    #[test]
    fn validation_catches_bad_configs() {
        let mut c = sample();
        c.seeds.clear();
        assert!(c.validate().is_err());
        let mut c = sample();
        c.n_train = 9409;
        assert!(c.validate().is_err());
        let mut c = sample();
        c.op = OpId::Sub;
        c.train.augment_commutative = true;
        assert!(c.validate().is_err());
        let mut c = sample();
        c.task = Task::Composition;
        c.op = OpId::Sub;
        assert!(c.validate().is_err());
    }

    #[test]
    fn ci_rule_shrinks_and_logs() {
        let (c, subs) = sample().scaled(Scale::Ci);
        assert_eq!(c.p, CI_PRIME);
        assert_eq!(c.n_train, (5000.0f64 * 961.0 / 9409.0).round() as usize);
        assert_eq!(c.train.max_steps, CI_MAX_STEPS);
        assert!(subs.iter().any(|s| s.field == "p" && s.from == "97" && s.to == "31"));
        assert!(subs.iter().any(|s| s.field == "model.d_model"));
        c.validate().unwrap();
        let (same, none) = sample().scaled(Scale::Paper);
        assert_eq!(same, sample());
        assert!(none.is_empty());
    }

    #[test]
    fn explicit_ci_block_wins() {
        let mut c = sample();
        c.ci = Some(ScaleOverrides {
            p: Some(13),
            n_train: Some(135),
            train: TrainOverrides { weight_decay: Some(1.0), ..Default::default() },
            ..Default::default()
        });
        let (s, subs) = c.scaled(Scale::Ci);
        assert_eq!((s.p, s.n_train, s.train.weight_decay), (13, 135, 1.0));
        assert!(s.ci.is_none());
        assert!(subs.iter().any(|s| s.field == "train.weight_decay"));
    }

    #[test]
    fn seed_placeholder_in_source_path() {
        let mut c = sample();
        c.transfer = Some(TransferSpec {
            mode: TransferMode::DecoderBlock,
            source_checkpoint: "runs/add/seed{seed}/model.ckpt".into(),
            freeze_transferred: true,
        });
        assert_eq!(c.source_checkpoint(3).unwrap(), PathBuf::from("runs/add/seed3/model.ckpt"));
        assert_eq!(c.method_label(), "DT");
    }
}
