use groklab::checkpoint::Checkpoint;
use groklab::dataset::{gen_binary, gen_composition, gen_system, Split, Vocab};
use groklab::group::{OpId, Prime};
use groklab::model::{Model, ModelConfig};
use groklab::training::{evaluate, train, RunLabels, TrainConfig};
use groklab::transfer::*;
use proptest::prelude::*;

fn cfg(vocab: usize, seq: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        embed_mlp_depth: 1,
        max_seq_len: seq,
        classifier_hidden: 8,
    }
}

fn snapshot(m: &Model, vocab: &Vocab) -> Checkpoint {
    Checkpoint {
        config: m.config().clone(),
        vocab: vocab.tokens().to_vec(),
        tensors: m.parameters().iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
    }
}

fn values(m: &Model) -> Vec<(String, Vec<f32>)> {
    m.named_parameters().map(|(n, p)| (n.to_string(), p.value.data().to_vec())).collect()
}

fn rows(m: &Model, name: &str, d: usize) -> Vec<Vec<f32>> {
    m.get(name).unwrap().value.data().chunks(d).map(<[f32]>::to_vec).collect()
}

fn short_run(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig { batch_size: 32, lr: 1e-2, weight_decay: 0.5, max_steps: steps, eval_every: steps, seed, ..Default::default() }
}

fn prime() -> impl Strategy<Value = Prime> {
    proptest::sample::select(vec![5u32, 7, 11]).prop_map(|p| Prime::new(p).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn decoder_transfer_copies_every_block_tensor(p in prime(), s1 in 0u64..1000, s2 in 0u64..1000, freeze in any::<bool>()) {
        let v = Vocab::new(p, &[OpId::Add], false);
        let src = Model::new(cfg(v.len(), 4), s1).unwrap();
        let ck = snapshot(&src, &v);
        // the destination task differs, only the block shapes must agree
        let mv = Vocab::new(p, &[OpId::Mul], false);
        let mut dst = Model::new(cfg(mv.len(), 4), s2).unwrap();
        let before = dst.clone();
        let s = transfer_decoder(&ck, &mut dst, freeze).unwrap();
        for (name, p) in dst.named_parameters() {
            if name.starts_with("decoder.") {
                prop_assert!(s.tensors.iter().any(|t| t == name));
                prop_assert_eq!(&p.value, ck.tensor(name).unwrap());
                prop_assert_eq!(p.frozen, freeze);
            } else {
                prop_assert_eq!(p, before.get(name).unwrap());
            }
        }
    }

    #[test]
    fn embedding_transfer_copies_rows_by_token(p in prime(), s1 in 0u64..1000, s2 in 0u64..1000) {
        let v = Vocab::new(p, &[OpId::Add], false);
        let src = Model::new(cfg(v.len(), 4), s1).unwrap();
        let ck = snapshot(&src, &v);
        let sys = Vocab::new(p, &[OpId::Add], true);
        let mut dst = Model::new(cfg(sys.len(), 13), s2).unwrap();
        let s = transfer_hybrid_embedding(&ck, &mut dst, &sys).unwrap();
        prop_assert_eq!(s.token_rows, v.len());
        let (a, b) = (rows(&src, "embed.token", 8), rows(&dst, "embed.token", 8));
        let mask = dst.get("embed.token").unwrap().frozen_rows.clone().unwrap();
        for (i, tok) in sys.tokens().iter().enumerate() {
            match v.id(tok) {
                Some(j) => {
                    prop_assert_eq!(&b[i], &a[j as usize]);
                    prop_assert!(mask[i]);
                }
                None => prop_assert!(!mask[i]),
            }
        }
        let (pa, pb) = (rows(&src, "embed.pos", 8), rows(&dst, "embed.pos", 8));
        prop_assert_eq!(&pb[..4], &pa[..]);
    }
}

/// Trains a tiny source model on `x + y` and returns its checkpoint.
fn trained_source(p: Prime, seq: usize) -> (Checkpoint, Split) {
    let split = gen_binary(OpId::Add, p, (p.get() * p.get() / 2) as usize, 3).unwrap();
    let mut m = Model::new(cfg(split.vocab.len(), seq), 3).unwrap();
    train(&mut m, &split, &short_run(50, 3), RunLabels::default()).unwrap();
    (snapshot(&m, &split.vocab), split)
}

#[test]
fn frozen_decoder_stays_fixed_for_a_whole_run() {
    let p = Prime::new(7).unwrap();
    let (ck, _) = trained_source(p, 4);
    let split = gen_binary(OpId::Mul, p, 24, 5).unwrap();
    let mut dst = Model::new(cfg(split.vocab.len(), 4), 9).unwrap();
    transfer_decoder(&ck, &mut dst, true).unwrap();
    let before = values(&dst);
    train(&mut dst, &split, &short_run(1000, 9), RunLabels::default()).unwrap();
    for ((name, a), (_, b)) in before.iter().zip(values(&dst)) {
        if name.starts_with("decoder.") {
            assert_eq!(*a, b, "{name} moved while frozen");
        } else {
            assert_ne!(*a, b, "{name} never trained");
        }
    }
}

#[test]
fn unfrozen_transfer_trains_everything() {
    let p = Prime::new(7).unwrap();
    let (ck, _) = trained_source(p, 4);
    let split = gen_binary(OpId::Mul, p, 24, 5).unwrap();
    let mut dst = Model::new(cfg(split.vocab.len(), 4), 9).unwrap();
    transfer_decoder(&ck, &mut dst, false).unwrap();
    let before = values(&dst);
    train(&mut dst, &split, &short_run(20, 9), RunLabels::default()).unwrap();
    assert!(before.iter().zip(values(&dst)).all(|((_, a), (_, b))| *a != b));
}

#[test]
fn transferred_models_reduce_loss_within_ten_steps() {
    let p = Prime::new(7).unwrap();
    let (ck, _) = trained_source(p, 6);
    let split = gen_composition(OpId::Add, 3, p, 120, 0, 40, 2).unwrap();
    let mut dst = Model::new(cfg(split.vocab.len(), 6), 4).unwrap();
    transfer_embedding(&ck, &mut dst, &split.vocab, true).unwrap();
    let start = evaluate(&dst, &split.train, 512).unwrap().loss;
    let rec = train(&mut dst, &split, &TrainConfig { eval_every: 10, ..short_run(10, 4) }, RunLabels::default()).unwrap();
    assert!(rec.history.last().unwrap().train_loss < start, "{start} -> {:?}", rec.history);
}

#[test]
fn hybrid_rows_move_while_known_rows_stay() {
    let p = Prime::new(7).unwrap();
    let (ck, src_split) = trained_source(p, 13);
    let split = gen_system(OpId::Add, p, 200, 0, 50, 1).unwrap();
    let mut dst = Model::new(cfg(split.vocab.len(), 13), 6).unwrap();
    transfer_hybrid_embedding(&ck, &mut dst, &split.vocab).unwrap();
    let before = rows(&dst, "embed.token", 8);
    train(&mut dst, &split, &short_run(1000, 6), RunLabels::default()).unwrap();
    let after = rows(&dst, "embed.token", 8);
    for (i, tok) in split.vocab.tokens().iter().enumerate() {
        let known = src_split.vocab.id(tok).is_some();
        let used = split.train.iter().any(|e| e.tokens.contains(&(i as u32)));
        if known {
            assert_eq!(before[i], after[i], "{tok} moved");
        } else if used {
            assert_ne!(before[i], after[i], "{tok} never trained");
        }
    }
}
