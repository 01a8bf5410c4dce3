//! Subcommand bodies, callable without going through argument parsing.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use walkdir::WalkDir;

use groklab::analysis::{self, AngleUniformity, EmbeddingProjection, TableRow};
use groklab::checkpoint;
use groklab::group::{gcd, Prime};
use groklab::ka::{self, KaRep, VerifyReport};
use groklab::training::RunRecord;

use crate::error::{CliError, Result};
use crate::run::RECORD_FILE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KaKind {
    CyclicAdd,
    CyclicMul,
    AntiAbelian,
    TwoFactor,
    Nary,
    All,
}

impl KaKind {
    fn expand(kinds: &[KaKind]) -> Vec<KaKind> {
        let all = [KaKind::CyclicAdd, KaKind::CyclicMul, KaKind::AntiAbelian, KaKind::TwoFactor, KaKind::Nary];
        if kinds.is_empty() || kinds.contains(&KaKind::All) {
            return all.to_vec();
        }
        all.into_iter().filter(|k| kinds.contains(k)).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RepSummary {
    pub rep: String,
    pub checked: usize,
    pub failures: usize,
    /// At most five failing cases.
    pub examples: Vec<ka::Failure>,
}

impl From<VerifyReport> for RepSummary {
    fn from(r: VerifyReport) -> Self {
        RepSummary { rep: r.rep, checked: r.checked, failures: r.failures.len(), examples: r.failures.into_iter().take(5).collect() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KaVerification {
    pub p: u32,
    pub reps: Vec<RepSummary>,
    pub total_checked: usize,
    pub total_failures: usize,
    pub seconds: f64,
}

/// Up to `count` twists coprime with `modulus`: 1, −1, then 2, 3, ...
pub fn twists(modulus: u32, count: usize) -> Vec<i64> {
    let m = modulus as i64;
    let mut ks = vec![1];
    if m > 2 {
        ks.push(-1);
    }
    ks.extend((2..m - 1).filter(|&k| gcd(k as u64, m as u64) == 1));
    ks.truncate(count);
    ks
}

/// Factor pairs of `p − 1` for the two-factor rep; the canonical three for
/// p = 97, otherwise the first three nontrivial pairs.
pub fn factor_pairs(p: u32) -> Vec<(u32, u32)> {
    let n = p - 1;
    let preferred = [(32, 3), (48, 2), (16, 6)];
    let mut pairs: Vec<(u32, u32)> = preferred.into_iter().filter(|&(a, b)| a * b == n).collect();
    if pairs.is_empty() {
        pairs = (2..n).filter(|q| n % q == 0).map(|q| (q, n / q)).filter(|&(_, b)| b > 1).take(3).collect();
    }
    pairs
}

pub const NARY_SAMPLES: usize = 10_000;

/// Exhaustive checks of the exact group representations at modulus `p`.
pub fn verify_ka(p: u32, kinds: &[KaKind]) -> Result<KaVerification> {
    let prime = Prime::new(p)?;
    let start = Instant::now();
    let mut reps: Vec<VerifyReport> = Vec::new();
    for kind in KaKind::expand(kinds) {
        match kind {
            KaKind::CyclicAdd => {
                for k in twists(p, 5) {
                    reps.push(ka::verify_rep(&KaRep::cyclic_add(prime, k)?));
                }
            }
            KaKind::CyclicMul => {
                for k in twists(p - 1, 5) {
                    reps.push(ka::verify_rep(&KaRep::cyclic_mul(prime, k)?));
                }
            }
            KaKind::AntiAbelian => {
                reps.push(ka::verify_rep(&KaRep::anti_abelian(KaRep::cyclic_add(prime, 1)?)?));
                reps.push(ka::verify_rep(&KaRep::anti_abelian(KaRep::cyclic_mul(prime, 1)?)?));
            }
            KaKind::TwoFactor => {
                for (q1, q2) in factor_pairs(p) {
                    reps.push(ka::verify_rep(&KaRep::product_of_cyclics(prime, q1, q2, 1, 1)?));
                }
            }
            KaKind::Nary => {
                for n in [3, 4] {
                    reps.push(ka::verify_nary(&KaRep::cyclic_add(prime, 1)?, n, NARY_SAMPLES, n as u64));
                    reps.push(ka::verify_nary(&KaRep::cyclic_mul(prime, 1)?, n, NARY_SAMPLES, 10 + n as u64));
                }
            }
            KaKind::All => unreachable!("expanded above"),
        }
    }
    let reps: Vec<RepSummary> = reps.into_iter().map(RepSummary::from).collect();
    Ok(KaVerification {
        p,
        total_checked: reps.iter().map(|r| r.checked).sum(),
        total_failures: reps.iter().map(|r| r.failures).sum(),
        reps,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EmbeddingAnalysis {
    pub checkpoint: PathBuf,
    pub p: u32,
    pub explained_ratio: f64,
    pub uniformity: AngleUniformity,
    /// Statistics of the numeral-order gaps, for comparison.
    pub numeral_order_gap_mean: f64,
    pub numeral_order_gap_std: f64,
    #[serde(skip)]
    pub projection: EmbeddingProjection,
}

/// PCA of the numeral rows of a checkpoint's token table.
pub fn analyze_embeddings(ckpt: &Path) -> Result<EmbeddingAnalysis> {
    let c = checkpoint::load(ckpt)?;
    let p = c.vocab.iter().take_while(|t| t.parse::<u32>().is_ok()).count();
    let table = c.tensor("embed.token").ok_or_else(|| CliError::file(ckpt, "checkpoint has no embed.token tensor"))?;
    let d = table.shape()[1];
    let rows: Vec<Vec<f64>> = table.data().chunks(d).take(p).map(|r| r.iter().map(|&x| x as f64).collect()).collect();
    let projection = analysis::pca2(&rows)?;
    let uniformity = analysis::angle_uniformity(&projection)?;
    let gaps = &projection.consecutive_gaps;
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let std = (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / gaps.len() as f64).sqrt();
    Ok(EmbeddingAnalysis {
        checkpoint: ckpt.to_path_buf(),
        p: p as u32,
        explained_ratio: projection.explained_ratio(),
        uniformity,
        numeral_order_gap_mean: mean,
        numeral_order_gap_std: std,
        projection,
    })
}

/// Every `record.json` under `dir`, in path order.
pub fn collect_records(dir: &Path) -> Result<Vec<(PathBuf, RunRecord)>> {
    if !dir.is_dir() {
        return Err(CliError::file(dir, "not a directory"));
    }
    let mut paths: Vec<PathBuf> = WalkDir::new(dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file() && e.file_name() == RECORD_FILE)
        .map(|e| e.into_path())
        .collect();
    paths.sort();
    paths.into_iter().map(|p| Ok((p.clone(), RunRecord::load_json(&p)?))).collect()
}

#[derive(Debug, Clone)]
pub struct Report {
    pub rows: Vec<TableRow>,
    pub csv: String,
    pub text: String,
}

/// Aggregates every run under `runs` into a results table, writing
/// `table.csv` and `table.txt` into `out` when given.
pub fn report(runs: &Path, out: Option<&Path>) -> Result<Report> {
    let records: Vec<RunRecord> = collect_records(runs)?.into_iter().map(|(_, r)| r).collect();
    let rows = analysis::aggregate_runs(&records)?;
    let csv = analysis::table_csv(&rows);
    let text = analysis::table_text(&rows);
    if let Some(out) = out {
        fs::create_dir_all(out).map_err(|e| CliError::file(out, e))?;
        for (name, body) in [("table.csv", &csv), ("table.txt", &text)] {
            let path = out.join(name);
            fs::write(&path, body).map_err(|e| CliError::file(&path, e))?;
        }
    }
    Ok(Report { rows, csv, text })
}
