//! The decoder-only transformer: token and position lookup, a residual
//! embedding MLP stack, pre-norm causal decoder blocks and an MLP classifier
//! read from the last sequence position.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Gradients, Tape, Tensor, TensorError, Var};

pub const LN_EPS: f32 = 1e-5;
const INIT_STD: f32 = 0.02;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("no parameter name starts with {0:?}")]
    UnknownPrefix(String),
    #[error("no parameter named {0:?}")]
    UnknownParameter(String),
    #[error("token id {index} out of range for vocabulary of {bound}")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub embed_mlp_depth: usize,
    pub max_seq_len: usize,
    pub classifier_hidden: usize,
}

impl ModelConfig {
    /// Full-size defaults for the given vocabulary and prompt length.
    pub fn new(vocab_size: usize, max_seq_len: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 256,
            n_heads: 4,
            n_layers: 2,
            embed_mlp_depth: 4,
            max_seq_len,
            classifier_hidden: 256,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.vocab_size == 0 || self.d_model == 0 || self.max_seq_len == 0 || self.classifier_hidden == 0 {
            return fail("sizes must be positive".into());
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let (v, d, t, h) = (self.vocab_size, self.d_model, self.max_seq_len, self.classifier_hidden);
        let embed = v * d + t * d + self.embed_mlp_depth * (d * d + d);
        let block = 4 * d + 4 * d * d + (d * 4 * d + 4 * d) + (4 * d * d + d);
        let classifier = 2 * d + (d * h + h) + (h * v + v);
        embed + self.n_layers * block + classifier
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub frozen: bool,
    /// Per-row freeze mask for 2-D tables; `true` rows never change.
    pub frozen_rows: Option<Vec<bool>>,
    pub grad: Option<Vec<f32>>,
}

impl Parameter {
    fn new(name: String, value: Tensor) -> Self {
        Parameter { name, value, frozen: false, frozen_rows: None, grad: None }
    }

    /// Whether `row` of this parameter is excluded from updates.
    pub fn row_frozen(&self, row: usize) -> bool {
        self.frozen || self.frozen_rows.as_ref().is_some_and(|m| m[row])
    }

    pub fn row_len(&self) -> usize {
        match self.value.shape() {
            [] => 1,
            s => s[1..].iter().product(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Parameter>,
}

/// Result of a forward pass: the tape, the logits variable and one leaf per
/// parameter (in [`Model::parameters`] order).
pub struct Forward {
    pub tape: Tape,
    pub logits: Var,
    pub hidden: Var,
    leaves: Vec<Var>,
}

impl Forward {
    pub fn logits(&self) -> &Tensor {
        self.tape.value(self.logits)
    }
}

fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, h, v) = (cfg.d_model, cfg.classifier_hidden, cfg.vocab_size);
    let mut s = vec![
        ("embed.token".to_string(), vec![v, d], Init::Normal),
        ("embed.pos".to_string(), vec![cfg.max_seq_len, d], Init::Normal),
    ];
    for i in 0..cfg.embed_mlp_depth {
        s.push((format!("embed.mlp.{i}.w"), vec![d, d], Init::Normal));
        s.push((format!("embed.mlp.{i}.b"), vec![d], Init::Zero));
    }
    for l in 0..cfg.n_layers {
        let p = format!("decoder.{l}");
        s.push((format!("{p}.ln1.g"), vec![d], Init::One));
        s.push((format!("{p}.ln1.b"), vec![d], Init::Zero));
        for w in ["wq", "wk", "wv", "wo"] {
            s.push((format!("{p}.attn.{w}"), vec![d, d], Init::Normal));
        }
        s.push((format!("{p}.ln2.g"), vec![d], Init::One));
        s.push((format!("{p}.ln2.b"), vec![d], Init::Zero));
        s.push((format!("{p}.ffn.w1"), vec![d, 4 * d], Init::Normal));
        s.push((format!("{p}.ffn.b1"), vec![4 * d], Init::Zero));
        s.push((format!("{p}.ffn.w2"), vec![4 * d, d], Init::Normal));
        s.push((format!("{p}.ffn.b2"), vec![d], Init::Zero));
    }
    s.push(("classifier.ln.g".into(), vec![d], Init::One));
    s.push(("classifier.ln.b".into(), vec![d], Init::Zero));
    s.push(("classifier.fc1.w".into(), vec![d, h], Init::Normal));
    s.push(("classifier.fc1.b".into(), vec![h], Init::Zero));
    s.push(("classifier.fc2.w".into(), vec![h, v], Init::Normal));
    s.push(("classifier.fc2.b".into(), vec![v], Init::Zero));
    s
}

#[derive(Clone, Copy)]
enum Init {
    Normal,
    Zero,
    One,
}

/// `normal(0, 0.02)` samples from a seeded stream.
pub fn normal_init(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let dist = Normal::new(0.0f32, INIT_STD).expect("valid std");
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("length matches")
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = param_specs(&config)
            .into_iter()
            .map(|(name, shape, init)| {
                let value = match init {
                    Init::Normal => normal_init(&shape, &mut rng),
                    Init::Zero => Tensor::zeros(&shape),
                    Init::One => Tensor::full(&shape, 1.0),
                };
                Parameter::new(name, value)
            })
            .collect();
        Ok(Model { config, params })
    }

    /// Builds a model from named tensors, which must match the config's
    /// parameter list exactly.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != tensors.len() {
            return Err(ModelError::Config(format!("expected {} tensors, got {}", specs.len(), tensors.len())));
        }
        let mut params = Vec::with_capacity(specs.len());
        for (name, shape, _) in specs {
            let value = tensors
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| ModelError::UnknownParameter(name.clone()))?;
            if value.shape() != shape.as_slice() {
                return Err(ModelError::Config(format!("{name}: shape {:?}, expected {shape:?}", value.shape())));
            }
            params.push(Parameter::new(name, value));
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn named_parameters(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.params.iter().map(|p| (p.name.as_str(), p))
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn get(&self, name: &str) -> Result<&Parameter, ModelError> {
        self.params.iter().find(|p| p.name == name).ok_or_else(|| ModelError::UnknownParameter(name.into()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter, ModelError> {
        self.params.iter_mut().find(|p| p.name == name).ok_or_else(|| ModelError::UnknownParameter(name.into()))
    }

    /// Sets the freeze flag of every parameter whose name starts with
    /// `prefix`; returns how many matched.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) -> Result<usize, ModelError> {
        let mut count = 0;
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.frozen = frozen;
            count += 1;
        }
        if count == 0 {
            return Err(ModelError::UnknownPrefix(prefix.into()));
        }
        Ok(count)
    }

    /// Installs a per-row freeze mask on a 2-D parameter.
    pub fn set_frozen_rows(&mut self, name: &str, rows: Vec<bool>) -> Result<(), ModelError> {
        let p = self.get_mut(name)?;
        let n_rows = p.value.shape().first().copied().unwrap_or(0);
        if p.value.rank() != 2 || rows.len() != n_rows {
            return Err(ModelError::Config(format!("{name}: mask of {} rows for shape {:?}", rows.len(), p.value.shape())));
        }
        p.frozen_rows = Some(rows);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }

    /// Runs the network on `batch` sequences of length `seq` (row-major token
    /// ids) and returns the last-position logits `[batch, vocab]`.
    pub fn forward(&self, tokens: &[u32], batch: usize, seq: usize) -> Result<Forward, ModelError> {
        let cfg = &self.config;
        if tokens.len() != batch * seq || seq == 0 {
            return Err(ModelError::Config(format!("{} tokens for batch {batch} × seq {seq}", tokens.len())));
        }
        if seq > cfg.max_seq_len {
            return Err(ModelError::IndexOutOfRange { index: seq, bound: cfg.max_seq_len });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(ModelError::IndexOutOfRange { index: bad as usize, bound: cfg.vocab_size });
        }
        let mut tape = Tape::new();
        let leaves: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.value.clone(), !p.frozen)).collect();
        let (logits, hidden) = self.build(&mut tape, &leaves, tokens, batch, seq)?;
        Ok(Forward { tape, logits, hidden, leaves })
    }

    /// Records the network on `tape` using `leaves` as the parameters (in
    /// [`Model::parameters`] order). Returns `(logits, final hidden states)`.
    /// Inputs are assumed validated.
    pub fn build(
        &self,
        tape: &mut Tape,
        leaves: &[Var],
        tokens: &[u32],
        batch: usize,
        seq: usize,
    ) -> Result<(Var, Var), TensorError> {
        let cfg = &self.config;
        let mut it = leaves.iter().copied();
        let mut next = || it.next().expect("parameter order matches specs");
        let t = tape;
        let (d, nh, dh) = (cfg.d_model, cfg.n_heads, cfg.head_dim());

        let token = next();
        let pos = next();
        let x = t.embedding_gather(token, tokens)?;
        let x = t.reshape(x, &[batch, seq, d])?;
        let pos_rows = t.narrow(pos, 0, 0, seq)?;
        let mut x = t.add(x, pos_rows)?;
        for _ in 0..cfg.embed_mlp_depth {
            let (w, b) = (next(), next());
            let h = t.matmul(x, w)?;
            let h = t.add(h, b)?;
            let h = t.gelu(h);
            x = t.add(x, h)?;
        }

        for _ in 0..cfg.n_layers {
            let (g1, b1) = (next(), next());
            let (wq, wk, wv, wo) = (next(), next(), next(), next());
            let (g2, b2) = (next(), next());
            let (fw1, fb1, fw2, fb2) = (next(), next(), next(), next());

            let h = t.layer_norm(x, g1, b1, LN_EPS)?;
            let heads = |w: Var, t: &mut Tape| -> Result<Var, TensorError> {
                let y = t.matmul(h, w)?;
                let y = t.reshape(y, &[batch, seq, nh, dh])?;
                t.permute(y, &[0, 2, 1, 3])
            };
            let q = heads(wq, t)?;
            let k = heads(wk, t)?;
            let v = heads(wv, t)?;
            let kt = t.transpose(k)?;
            let scores = t.matmul(q, kt)?;
            let scores = t.scale(scores, 1.0 / (dh as f32).sqrt());
            let scores = t.causal_mask(scores)?;
            let attn = t.softmax_rows(scores);
            let ctx = t.matmul(attn, v)?;
            let ctx = t.permute(ctx, &[0, 2, 1, 3])?;
            let ctx = t.reshape(ctx, &[batch, seq, d])?;
            let out = t.matmul(ctx, wo)?;
            x = t.add(x, out)?;

            let h = t.layer_norm(x, g2, b2, LN_EPS)?;
            let h = t.matmul(h, fw1)?;
            let h = t.add(h, fb1)?;
            let h = t.gelu(h);
            let h = t.matmul(h, fw2)?;
            let h = t.add(h, fb2)?;
            x = t.add(x, h)?;
        }
        let hidden = x;

        let (cg, cb, w1, b1, w2, b2) = (next(), next(), next(), next(), next(), next());
        let last = t.narrow(x, 1, seq - 1, 1)?;
        let last = t.reshape(last, &[batch, d])?;
        let h = t.layer_norm(last, cg, cb, LN_EPS)?;
        let h = t.matmul(h, w1)?;
        let h = t.add(h, b1)?;
        let h = t.gelu(h);
        let h = t.matmul(h, w2)?;
        let logits = t.add(h, b2)?;
        Ok((logits, hidden))
    }

    /// Adds the gradients of a backward pass into each trainable parameter's
    /// `grad`, zeroing rows that are frozen.
    pub fn accumulate_grads(&mut self, fwd: &Forward, grads: &mut Gradients) {
        for (p, &leaf) in self.params.iter_mut().zip(&fwd.leaves) {
            if p.frozen {
                continue;
            }
            let Some(mut g) = grads.take(leaf) else { continue };
            if let Some(mask) = &p.frozen_rows {
                let row = g.len() / mask.len();
                for (r, _) in mask.iter().enumerate().filter(|(_, &f)| f) {
                    g[r * row..(r + 1) * row].fill(0.0);
                }
            }
            match &mut p.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
                None => p.grad = Some(g),
            }
        }
    }

    /// Forward + backward of mean cross-entropy; gradients accumulate into
    /// the parameters. Returns the loss and the forward pass.
    pub fn loss_and_grad(
        &mut self,
        tokens: &[u32],
        targets: &[u32],
        seq: usize,
    ) -> Result<(f32, Forward), ModelError> {
        let batch = targets.len();
        let mut fwd = self.forward(tokens, batch, seq)?;
        let loss = fwd.tape.cross_entropy(fwd.logits, targets)?;
        let value = fwd.tape.value(loss).item()?;
        let mut grads = fwd.tape.backward(loss)?;
        self.accumulate_grads(&fwd, &mut grads);
        Ok((value, fwd))
    }
}
