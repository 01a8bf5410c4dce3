//! Weight transfer between models: decoder blocks, or the embedding stack
//! (token rows matched by name, the embedding MLP and positional rows).
//! The classifier is never transferred.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{self, Checkpoint, CheckpointError};
use crate::dataset::{DatasetError, Vocab};
use crate::model::{Model, ModelError};

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("cannot read checkpoint {path}: {reason}")]
    File { path: PathBuf, reason: String },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    DecoderBlock,
    Embedding,
    HybridEmbedding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferSpec {
    pub mode: TransferMode,
    pub source_checkpoint: PathBuf,
    #[serde(default = "yes")]
    pub freeze_transferred: bool,
}

fn yes() -> bool {
    true
}

/// What a transfer copied.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransferSummary {
    pub tensors: Vec<String>,
    pub token_rows: usize,
    pub position_rows: usize,
}

fn copy_tensor(src: &Checkpoint, dst: &mut Model, name: &str, freeze: bool) -> Result<(), TransferError> {
    let t = src.tensor(name).ok_or_else(|| ModelError::UnknownParameter(name.into()))?;
    let p = dst.get_mut(name)?;
    if p.value.shape() != t.shape() {
        return Err(TransferError::ConfigMismatch(format!(
            "{name}: source shape {:?}, destination {:?}",
            t.shape(),
            p.value.shape()
        )));
    }
    p.value = t.clone();
    p.frozen = freeze;
    Ok(())
}

/// Copies every decoder-block parameter from `src`.
pub fn transfer_decoder(src: &Checkpoint, dst: &mut Model, freeze: bool) -> Result<TransferSummary, TransferError> {
    let (s, d) = (&src.config, dst.config());
    if (s.d_model, s.n_heads, s.n_layers) != (d.d_model, d.n_heads, d.n_layers) {
        return Err(TransferError::ConfigMismatch(format!(
            "source (d_model {}, heads {}, layers {}) vs destination (d_model {}, heads {}, layers {})",
            s.d_model, s.n_heads, s.n_layers, d.d_model, d.n_heads, d.n_layers
        )));
    }
    let names: Vec<String> = dst.named_parameters().map(|(n, _)| n).filter(|n| n.starts_with("decoder.")).map(String::from).collect();
    for name in &names {
        copy_tensor(src, dst, name, freeze)?;
    }
    Ok(TransferSummary { tensors: names, ..Default::default() })
}

fn embedding_common(
    src: &Checkpoint,
    dst: &mut Model,
    dst_vocab: &Vocab,
    freeze: bool,
    require_superset: bool,
) -> Result<TransferSummary, TransferError> {
    let src_vocab = Vocab::from_tokens(src.vocab.clone())?;
    if src_vocab.prime() != dst_vocab.prime() {
        return Err(TransferError::VocabMismatch(format!(
            "source numerals 0..{} vs destination 0..{}",
            src_vocab.prime().get(),
            dst_vocab.prime().get()
        )));
    }
    if require_superset && !dst_vocab.contains_all(&src_vocab) {
        return Err(TransferError::VocabMismatch("destination vocabulary lacks source tokens".into()));
    }
    if dst_vocab.len() != dst.config().vocab_size {
        return Err(TransferError::VocabMismatch(format!(
            "destination model has {} token rows for a vocabulary of {}",
            dst.config().vocab_size,
            dst_vocab.len()
        )));
    }
    let (s, d) = (&src.config, dst.config().clone());
    if (s.d_model, s.embed_mlp_depth) != (d.d_model, d.embed_mlp_depth) {
        return Err(TransferError::ConfigMismatch(format!(
            "source (d_model {}, embed depth {}) vs destination (d_model {}, embed depth {})",
            s.d_model, s.embed_mlp_depth, d.d_model, d.embed_mlp_depth
        )));
    }
    let dm = d.d_model;
    let mut summary = TransferSummary::default();

    let src_tok = src.tensor("embed.token").ok_or_else(|| ModelError::UnknownParameter("embed.token".into()))?;
    let mut token_mask = vec![false; d.vocab_size];
    let table = dst.get_mut("embed.token")?;
    for (src_id, tok) in src_vocab.tokens().iter().enumerate() {
        if let Some(dst_id) = dst_vocab.id(tok) {
            let dst_id = dst_id as usize;
            table.value.data_mut()[dst_id * dm..(dst_id + 1) * dm]
                .copy_from_slice(&src_tok.data()[src_id * dm..(src_id + 1) * dm]);
            token_mask[dst_id] = true;
            summary.token_rows += 1;
        }
    }
    summary.tensors.push("embed.token".into());

    let src_pos = src.tensor("embed.pos").ok_or_else(|| ModelError::UnknownParameter("embed.pos".into()))?;
    let rows = s.max_seq_len.min(d.max_seq_len);
    let pos = dst.get_mut("embed.pos")?;
    pos.value.data_mut()[..rows * dm].copy_from_slice(&src_pos.data()[..rows * dm]);
    let pos_mask: Vec<bool> = (0..d.max_seq_len).map(|r| r < rows).collect();
    summary.position_rows = rows;
    summary.tensors.push("embed.pos".into());

    let mlp: Vec<String> = dst.named_parameters().map(|(n, _)| n).filter(|n| n.starts_with("embed.mlp.")).map(String::from).collect();
    for name in &mlp {
        copy_tensor(src, dst, name, freeze)?;
    }
    summary.tensors.extend(mlp);

    if freeze {
        dst.set_frozen_rows("embed.token", token_mask)?;
        dst.set_frozen_rows("embed.pos", pos_mask)?;
    }
    Ok(summary)
}

/// Copies numeral (and any shared special-token) rows, the embedding MLP
/// and overlapping positional rows. Requires the same modulus.
pub fn transfer_embedding(
    src: &Checkpoint,
    dst: &mut Model,
    dst_vocab: &Vocab,
    freeze: bool,
) -> Result<TransferSummary, TransferError> {
    embedding_common(src, dst, dst_vocab, freeze, false)
}

/// Embedding transfer into a larger vocabulary: source rows are copied and
/// frozen, rows for new tokens stay freshly initialised and trainable.
pub fn transfer_hybrid_embedding(
    src: &Checkpoint,
    dst: &mut Model,
    dst_vocab: &Vocab,
) -> Result<TransferSummary, TransferError> {
    embedding_common(src, dst, dst_vocab, true, true)
}

pub fn load_source(spec: &TransferSpec) -> Result<Checkpoint, TransferError> {
    checkpoint::load(&spec.source_checkpoint).map_err(|e| match e {
        CheckpointError::File { path, source } => TransferError::File { path, reason: source.to_string() },
        other => other.into(),
    })
}

pub fn apply(spec: &TransferSpec, dst: &mut Model, dst_vocab: &Vocab) -> Result<TransferSummary, TransferError> {
    let src = load_source(spec)?;
    match spec.mode {
        TransferMode::DecoderBlock => transfer_decoder(&src, dst, spec.freeze_transferred),
        TransferMode::Embedding => transfer_embedding(&src, dst, dst_vocab, spec.freeze_transferred),
        TransferMode::HybridEmbedding => transfer_hybrid_embedding(&src, dst, dst_vocab),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{OpId, Prime};
    use crate::model::ModelConfig;

    fn cfg(vocab: usize, seq: usize, heads: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab,
            d_model: 8,
            n_heads: heads,
            n_layers: 1,
            embed_mlp_depth: 2,
            max_seq_len: seq,
            classifier_hidden: 8,
        }
    }

    fn source(vocab: &Vocab, seq: usize) -> Checkpoint {
        let m = Model::new(cfg(vocab.len(), seq, 2), 1).unwrap();
        Checkpoint {
            config: m.config().clone(),
            vocab: vocab.tokens().to_vec(),
            tensors: m.parameters().iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
        }
    }

    fn p7() -> Prime {
        Prime::new(7).unwrap()
    }

    #[test]
    fn decoder_copy_and_mismatch() {
        let v = Vocab::new(p7(), &[OpId::Add], false);
        let src = source(&v, 4);
        let mut dst = Model::new(cfg(v.len(), 4, 2), 2).unwrap();
        let s = transfer_decoder(&src, &mut dst, true).unwrap();
        assert!(!s.tensors.is_empty());
        for name in &s.tensors {
            assert_eq!(dst.get(name).unwrap().value, *src.tensor(name).unwrap());
            assert!(dst.get(name).unwrap().frozen);
        }
        assert!(!dst.get("classifier.fc2.w").unwrap().frozen);
        assert_ne!(dst.get("classifier.fc2.w").unwrap().value, *src.tensor("classifier.fc2.w").unwrap());

        let mut other = Model::new(cfg(v.len(), 4, 4), 2).unwrap();
        assert!(matches!(transfer_decoder(&src, &mut other, true), Err(TransferError::ConfigMismatch(_))));
    }

    #[test]
    fn embedding_copies_rows_and_positions() {
        let v = Vocab::new(p7(), &[OpId::Add], false);
        let src = source(&v, 4);
        let mut dst = Model::new(cfg(v.len(), 6, 2), 3).unwrap();
        let s = transfer_embedding(&src, &mut dst, &v, true).unwrap();
        assert_eq!((s.token_rows, s.position_rows), (v.len(), 4));
        assert_eq!(dst.get("embed.token").unwrap().value, *src.tensor("embed.token").unwrap());
        let pos = dst.get("embed.pos").unwrap();
        assert_eq!(&pos.value.data()[..32], &src.tensor("embed.pos").unwrap().data()[..]);
        assert_eq!(pos.frozen_rows.as_deref(), Some(&[true, true, true, true, false, false][..]));
        assert!(dst.get("embed.mlp.0.w").unwrap().frozen);

        let other = Vocab::new(Prime::new(11).unwrap(), &[OpId::Add], false);
        let mut wrong = Model::new(cfg(other.len(), 6, 2), 3).unwrap();
        assert!(matches!(transfer_embedding(&src, &mut wrong, &other, true), Err(TransferError::VocabMismatch(_))));
    }

    #[test]
    fn hybrid_freezes_known_rows_only() {
        let v = Vocab::new(p7(), &[OpId::Add], false);
        let sys = Vocab::new(p7(), &[OpId::Add], true);
        let src = source(&v, 4);
        let mut dst = Model::new(cfg(sys.len(), 13, 2), 4).unwrap();
        transfer_hybrid_embedding(&src, &mut dst, &sys).unwrap();
        let mask = dst.get("embed.token").unwrap().frozen_rows.clone().unwrap();
        assert!(mask[sys.id("5").unwrap() as usize]);
        assert!(mask[sys.id("=").unwrap() as usize]);
        assert!(!mask[sys.id("A").unwrap() as usize]);
        assert!(!mask[sys.id("&").unwrap() as usize]);

        // the reverse direction drops tokens and is rejected
        let big = Checkpoint { vocab: sys.tokens().to_vec(), ..source(&sys, 4) };
        let mut small = Model::new(cfg(v.len(), 4, 2), 4).unwrap();
        assert!(matches!(transfer_hybrid_embedding(&big, &mut small, &v), Err(TransferError::VocabMismatch(_))));
    }

    #[test]
    fn missing_checkpoint_is_file_error() {
        let spec = TransferSpec {
            mode: TransferMode::DecoderBlock,
            source_checkpoint: "/no/such/model.ckpt".into(),
            freeze_transferred: true,
        };
        let v = Vocab::new(p7(), &[OpId::Add], false);
        let mut dst = Model::new(cfg(v.len(), 4, 2), 2).unwrap();
        let err = apply(&spec, &mut dst, &v).unwrap_err();
        assert!(matches!(&err, TransferError::File { path, .. } if path.ends_with("model.ckpt")));
    }

    #[test]
    fn transfer_config_json_defaults_to_freezing() {
        let s: TransferSpec = serde_json::from_str(r#"{"mode":"hybrid_embedding","source_checkpoint":"a.ckpt"}"#).unwrap();
        assert!(s.freeze_transferred);
        assert_eq!(s.mode, TransferMode::HybridEmbedding);
    }
}
