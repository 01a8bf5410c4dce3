//! The full-size experiment matrix: every results table as a list of configs.

use std::path::{Path, PathBuf};

use groklab::group::OpId;
use groklab::training::TrainConfig;
use groklab::transfer::{TransferMode, TransferSpec};

use crate::config::{ExperimentConfig, ModelOverrides, Task};
use crate::run::CHECKPOINT_FILE;

pub const PAPER_SEEDS: [u64; 3] = [0, 1, 2];
pub const PAPER_OUTPUT: &str = "runs/paper";
/// Table whose binary baselines double as transfer sources.
pub const SOURCE_TABLE: &str = "table2";

fn base(name: String, task: Task, op: OpId, n_train: usize) -> ExperimentConfig {
    let batch_size = match task {
        Task::Composition | Task::LimitedTokens => 4096,
        Task::Binary | Task::System => 1024,
    };
    ExperimentConfig {
        name,
        task,
        op,
        p: 97,
        n_train,
        n_val: 30_000,
        n_test: 100_000,
        n_operands: 3,
        max_operand: 80,
        seeds: PAPER_SEEDS.to_vec(),
        method: None,
        model: ModelOverrides::default(),
        train: TrainConfig { batch_size, ..TrainConfig::default() },
        transfer: None,
        output_dir: PathBuf::new(),
        ci: None,
    }
}

fn source(name: &str) -> PathBuf {
    Path::new(PAPER_OUTPUT).join(SOURCE_TABLE).join(name).join("seed{seed}").join(CHECKPOINT_FILE)
}

fn transfer(mode: TransferMode, from: &str) -> Option<TransferSpec> {
    Some(TransferSpec { mode, source_checkpoint: source(from), freeze_transferred: true })
}

fn binary_name(op: OpId, n: usize) -> String {
    format!("binary_{}_n{n}_baseline", op.name())
}

/// Commutative augmentation against baseline on five commutative ops.
pub fn table1() -> Vec<ExperimentConfig> {
    let rows: [(OpId, [usize; 3]); 5] = [
        (OpId::Add, [5000, 4000, 3000]),
        (OpId::Mul, [5000, 4000, 3000]),
        (OpId::SqSumLin, [6000, 5000, 4000]),
        (OpId::CubeSumLin, [5000, 4000, 3000]),
        (OpId::SqSumCross, [9000, 8000, 7000]),
    ];
    let mut out = Vec::new();
    for (op, ns) in rows {
        for n in ns {
            out.push(base(binary_name(op, n), Task::Binary, op, n));
            let mut ca = base(format!("binary_{}_n{n}_ca", op.name()), Task::Binary, op, n);
            ca.train.augment_commutative = true;
            ca.method = Some("+CA".into());
            out.push(ca);
        }
    }
    out
}

/// Decoder-block transfer between operations sharing a group structure.
pub fn table2() -> Vec<ExperimentConfig> {
    let pairs = [
        (OpId::Mul, OpId::Add),
        (OpId::Div, OpId::Sub),
        (OpId::Add, OpId::Mul),
        (OpId::Sub, OpId::Div),
        (OpId::SumSq, OpId::Add),
        (OpId::SumCube, OpId::Add),
        (OpId::SqSumLin, OpId::SqSum),
    ];
    let mut out = Vec::new();
    // source for the last row, not a row itself
    out.push(base(binary_name(OpId::SqSum, 5000), Task::Binary, OpId::SqSum, 5000));
    for (target, from) in pairs {
        out.push(base(binary_name(target, 5000), Task::Binary, target, 5000));
        let mut dt = base(format!("binary_{}_n5000_dt_from_{}", target.name(), from.name()), Task::Binary, target, 5000);
        dt.transfer = transfer(TransferMode::DecoderBlock, &binary_name(from, 5000));
        dt.method = Some(format!("DT from {}", from.formula()));
        out.push(dt);
    }
    out
}

/// Embedding transfer from a binary op to its 3- and 4-fold composition.
pub fn table3() -> Vec<ExperimentConfig> {
    let rows = [(OpId::Add, 3, vec![10_000, 100_000, 300_000]), (OpId::Mul, 3, vec![10_000, 100_000, 300_000])]
        .into_iter()
        .chain([(OpId::Add, 4, vec![100_000]), (OpId::Mul, 4, vec![100_000])]);
    let mut out = Vec::new();
    for (op, k, ns) in rows {
        for n in ns {
            let stem = format!("composition{k}_{}_n{n}", op.name());
            let mut b = base(format!("{stem}_baseline"), Task::Composition, op, n);
            b.n_operands = k;
            let mut et = b.clone();
            et.name = format!("{stem}_et");
            et.transfer = transfer(TransferMode::Embedding, &binary_name(op, 5000));
            et.method = Some("ET".into());
            out.extend([b, et]);
        }
    }
    out
}

/// Systems of equations, baseline against the hybrid embedding transfer.
pub fn table4() -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for op in [OpId::Add, OpId::Mul] {
        for n in [100_000, 50_000] {
            let stem = format!("system_{}_n{n}", op.name());
            out.push(base(format!("{stem}_baseline"), Task::System, op, n));
            let mut et = base(format!("{stem}_et"), Task::System, op, n);
            et.transfer = transfer(TransferMode::HybridEmbedding, &binary_name(op, 5000));
            et.method = Some(format!("ET from {}", op.formula()));
            out.push(et);
        }
    }
    out
}

/// Composition trained on operands below 80 only, tested on all residues.
pub fn table5() -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for op in [OpId::Add, OpId::Mul] {
        let stem = format!("limited3_{}_n10000", op.name());
        out.push(base(format!("{stem}_baseline"), Task::LimitedTokens, op, 10_000));
        let mut et = base(format!("{stem}_et"), Task::LimitedTokens, op, 10_000);
        et.transfer = transfer(TransferMode::Embedding, &binary_name(op, 5000));
        et.method = Some("ET".into());
        out.push(et);
    }
    out
}

/// Every table as `(table, config)`, each writing under
/// `runs/paper/<table>`. Within a table, configs without a transfer come
/// first. The binary sources live in table 2, so it has to run before the
/// transfer rows of tables 3 to 5.
pub fn paper_matrix() -> Vec<(&'static str, ExperimentConfig)> {
    let tables: [(&str, Vec<ExperimentConfig>); 5] =
        [("table1", table1()), ("table2", table2()), ("table3", table3()), ("table4", table4()), ("table5", table5())];
    let mut out = Vec::new();
    for (table, mut cfgs) in tables {
        cfgs.sort_by_key(|c| c.transfer.is_some());
        for mut c in cfgs {
            c.output_dir = Path::new(PAPER_OUTPUT).join(table);
            out.push((table, c));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn matrix_covers_every_table_row() {
        assert_eq!(table1().len(), 30);
        assert_eq!(table2().iter().filter(|c| c.transfer.is_some()).count(), 7);
        assert_eq!(table3().len(), 16);
        assert_eq!(table4().len(), 8);
        assert_eq!(table5().len(), 4);
    }

    #[test]
    fn names_are_unique_and_sources_exist_in_matrix() {
        let m = paper_matrix();
        let dirs: HashSet<PathBuf> = m.iter().map(|(_, c)| c.output_dir.join(&c.name)).collect();
        assert_eq!(dirs.len(), m.len());
        for (_, c) in m.iter().filter(|(_, c)| c.transfer.is_some()) {
            let src = c.source_checkpoint(0).unwrap();
            let dir = src.parent().unwrap().parent().unwrap();
            assert!(dirs.contains(dir), "{} needs {}", c.name, dir.display());
        }
    }

    #[test]
    fn every_config_validates() {
        for (_, c) in paper_matrix() {
            c.validate().unwrap_or_else(|e| panic!("{}: {e}", c.name));
        }
    }
}
