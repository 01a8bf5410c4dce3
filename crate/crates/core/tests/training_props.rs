use groklab::dataset::gen_binary;
use groklab::group::{OpId, Prime};
use groklab::model::{Model, ModelConfig};
use groklab::training::*;
use proptest::prelude::*;

fn point() -> impl Strategy<Value = HistoryPoint> {
    (0usize..100_000, 0.0f64..20.0, 0.0f64..=1.0, 0.0f64..=1.0)
        .prop_map(|(step, train_loss, train_acc, test_acc)| HistoryPoint { step, train_loss, train_acc, test_acc })
}

fn history() -> impl Strategy<Value = Vec<HistoryPoint>> {
    proptest::collection::vec(point(), 1..30).prop_map(|mut h| {
        h.sort_by_key(|p| p.step);
        h.dedup_by_key(|p| p.step);
        h
    })
}

proptest! {
    #[test]
    fn grok_step_is_the_first_crossing(h in history(), threshold in 0.01f64..=1.0) {
        let got = detect_grokking(&h, threshold);
        match got {
            Some(s) => {
                let i = h.iter().position(|p| p.step == s).unwrap();
                prop_assert!(h[i].test_acc >= threshold);
                prop_assert!(h[..i].iter().all(|p| p.test_acc < threshold));
            }
            None => prop_assert!(h.iter().all(|p| p.test_acc < threshold)),
        }
    }

    #[test]
    fn run_records_round_trip_through_json(h in history(), acc in 0.0f64..=1.0, wall in 0.0f64..1e5, seed in any::<u64>()) {
        let record = RunRecord {
            grok_step: detect_grokking(&h, 0.99),
            history: h,
            final_test_acc: acc,
            final_train_acc: 1.0 - acc,
            steps_run: 123,
            config: TrainConfig { seed, lr: 3e-4, ..Default::default() },
            labels: RunLabels { operation: "x1*x2".into(), n_train: 7, method: "DT from x1+x2".into(), task: "binary".into(), p: 31, seed, transfer_freeze: Some(false) },
            wall_time_secs: wall,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        record.save_json(&path).unwrap();
        prop_assert_eq!(RunRecord::load_json(&path).unwrap(), record);
    }

    #[test]
    fn pure_decay_without_gradient(w0 in -10.0f32..10.0, wd in 0.0f32..1.0, lr in 1e-5f32..1e-2) {
        let cfg = TrainConfig { lr, weight_decay: wd, ..Default::default() };
        let (mut w, mut m, mut v) = ([w0], [0.0], [0.0]);
        adamw_update(&mut w, &[0.0], &mut m, &mut v, 1, &cfg);
        prop_assert!((w[0] - w0 * (1.0 - lr * wd)).abs() <= 1e-6 * w0.abs().max(1.0));
    }

    #[test]
    fn first_adam_step_has_size_lr(w0 in -1.0f32..1.0, g in prop_oneof![-100.0f32..-1e-3, 1e-3f32..100.0]) {
        // with bias correction the first step is lr·sign(g), up to eps
        let cfg = TrainConfig { lr: 1e-3, weight_decay: 0.0, ..Default::default() };
        let (mut w, mut m, mut v) = ([w0], [0.0], [0.0]);
        adamw_update(&mut w, &[g], &mut m, &mut v, 1, &cfg);
        prop_assert!((w[0] - (w0 - 1e-3 * g.signum())).abs() < 1e-6);
    }
}

#[test]
fn training_is_reproducible_and_fits_small_data() {
    let p = Prime::new(5).unwrap();
    let split = gen_binary(OpId::Add, p, 20, 4).unwrap();
    let cfg = ModelConfig { d_model: 16, n_heads: 2, classifier_hidden: 16, embed_mlp_depth: 1, ..ModelConfig::new(split.vocab.len(), 4) };
    let tc = TrainConfig { batch_size: 20, max_steps: 300, eval_every: 50, weight_decay: 0.1, lr: 3e-3, ..Default::default() };
    let run = || {
        let mut m = Model::new(cfg.clone(), 4).unwrap();
        let r = train(&mut m, &split, &tc, RunLabels::default()).unwrap();
        (r.history, m)
    };
    let (h1, m1) = run();
    let (h2, m2) = run();
    assert_eq!(h1, h2);
    assert_eq!(m1, m2);
    assert!(h1.windows(2).all(|w| w[0].step < w[1].step));
    assert_eq!(h1.last().unwrap().train_acc, 1.0);
}

#[test]
fn augmented_training_only_changes_with_commutative_ops() {
    let p = Prime::new(5).unwrap();
    let split = gen_binary(OpId::Sub, p, 10, 0).unwrap();
    let mut m = Model::new(ModelConfig { d_model: 8, n_heads: 2, classifier_hidden: 8, ..ModelConfig::new(split.vocab.len(), 4) }, 0).unwrap();
    let tc = TrainConfig { augment_commutative: true, max_steps: 1, eval_every: 1, ..Default::default() };
    assert!(train(&mut m, &split, &tc, RunLabels::default()).is_err());
}
