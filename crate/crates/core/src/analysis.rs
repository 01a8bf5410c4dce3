//! Embedding geometry (PCA, angle spacing) and aggregation of runs into
//! result tables.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ka::{KaError, KaRep};
use crate::training::RunRecord;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("no records to aggregate")]
    EmptyGroup,
}

/// Numeral embeddings projected onto their first two principal components.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingProjection {
    pub token_ids: Vec<u32>,
    pub coords: Vec<[f64; 2]>,
    pub explained_variance: [f64; 2],
    pub total_variance: f64,
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    /// `atan2(y, x)` in `[0, 2π)`.
    pub angles: Vec<f64>,
    /// Gap from token `i` to token `i + 1` (cyclically), in `[0, 2π)`.
    pub consecutive_gaps: Vec<f64>,
}

impl EmbeddingProjection {
    /// Fraction of the total variance captured by the two components.
    pub fn explained_ratio(&self) -> f64 {
        (self.explained_variance[0] + self.explained_variance[1]) / self.total_variance
    }

    /// Maps the 2-D coordinates back into the original space.
    pub fn reconstruct(&self) -> Vec<Vec<f64>> {
        self.coords
            .iter()
            .map(|c| {
                self.mean
                    .iter()
                    .enumerate()
                    .map(|(j, m)| m + c[0] * self.components[0][j] + c[1] * self.components[1][j])
                    .collect()
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("token,x,y,theta\n");
        for ((id, c), t) in self.token_ids.iter().zip(&self.coords).zip(&self.angles) {
            s.push_str(&format!("{id},{},{},{t}\n", c[0], c[1]));
        }
        s
    }
}

/// Exact circle embeddings: the real and imaginary parts of `ρ(x)` for every
/// element of the rep's carrier.
pub fn rho_embeddings(rep: &KaRep) -> Result<Vec<Vec<f64>>, KaError> {
    rep.carrier()
        .map(|x| Ok(rep.rho(x)?.iter().flat_map(|z| [z.re, z.im]).collect()))
        .collect()
}

/// Top-two principal components of the rows of `vectors`.
pub fn pca2(vectors: &[Vec<f64>]) -> Result<EmbeddingProjection, AnalysisError> {
    let n = vectors.len();
    let d = vectors.first().map_or(0, Vec::len);
    if n < 3 || d < 2 {
        return Err(AnalysisError::DegenerateData(format!("need ≥ 3 points of dimension ≥ 2, got {n}×{d}")));
    }
    if vectors.iter().any(|v| v.len() != d) {
        return Err(AnalysisError::DegenerateData("rows have different lengths".into()));
    }
    let x = DMatrix::from_fn(n, d, |i, j| vectors[i][j]);
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).mean()).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let total_variance = cov.trace();
    if total_variance <= f64::EPSILON * d as f64 {
        return Err(AnalysisError::DegenerateData("zero variance".into()));
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut components: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut coords = vec![[0.0; 2]; n];
    for (c, &k) in order.iter().take(2).enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let proj: Vec<f64> = (0..n).map(|i| (0..d).map(|j| centered[(i, j)] * v[j]).sum()).collect();
        // sign convention: the largest-magnitude coordinate is positive
        let big = proj.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if big < 0.0 { -1.0 } else { 1.0 };
        v.iter_mut().for_each(|x| *x *= sign);
        for i in 0..n {
            coords[i][c] = proj[i] * sign;
        }
        components[c] = v;
    }
    let explained_variance = [eig.eigenvalues[order[0]].max(0.0), eig.eigenvalues[order[1]].max(0.0)];
    let angles: Vec<f64> = coords.iter().map(|c| c[1].atan2(c[0]).rem_euclid(TAU)).collect();
    let consecutive_gaps = (0..n).map(|i| (angles[(i + 1) % n] - angles[i]).rem_euclid(TAU)).collect();
    Ok(EmbeddingProjection {
        token_ids: (0..n as u32).collect(),
        coords,
        explained_variance,
        total_variance,
        mean,
        components,
        angles,
        consecutive_gaps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AngleUniformity {
    pub mean_gap: f64,
    pub std_gap: f64,
    pub coeff_var: f64,
}

/// Spacing statistics of the projected points taken in angular order.
pub fn angle_uniformity(proj: &EmbeddingProjection) -> Result<AngleUniformity, AnalysisError> {
    let scale = proj.coords.iter().map(|c| c[0].hypot(c[1])).fold(0.0, f64::max);
    if proj.coords.len() < 2 || scale == 0.0 {
        return Err(AnalysisError::DegenerateData("all projected points at the origin".into()));
    }
    if proj.coords.iter().any(|c| c[0].hypot(c[1]) <= 1e-12 * scale) {
        return Err(AnalysisError::DegenerateData("a projected point sits at the origin".into()));
    }
    let mut sorted = proj.angles.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let gaps: Vec<f64> = (0..n)
        .map(|i| if i + 1 < n { sorted[i + 1] - sorted[i] } else { sorted[0] + TAU - sorted[n - 1] })
        .collect();
    let mean_gap = gaps.iter().sum::<f64>() / n as f64;
    let std_gap = (gaps.iter().map(|g| (g - mean_gap).powi(2)).sum::<f64>() / n as f64).sqrt();
    Ok(AngleUniformity { mean_gap, std_gap, coeff_var: std_gap / mean_gap })
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub operation: String,
    pub n: usize,
    pub method: String,
    pub runs: usize,
    pub grok_step_mean: Option<f64>,
    pub grok_step_std: Option<f64>,
    pub final_acc_mean: f64,
    pub final_acc_std: f64,
    pub grokked_fraction: f64,
}

/// Mean and sample standard deviation; values are summed in sorted order so
/// the result does not depend on input order.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let mut dev: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
    dev.sort_by(f64::total_cmp);
    (mean, (dev.iter().sum::<f64>() / (n - 1.0)).sqrt())
}

/// Groups records by (operation, N, method) and summarises each group over
/// seeds. Grokking-step statistics use only the seeds that grokked.
pub fn aggregate_runs(records: &[RunRecord]) -> Result<Vec<TableRow>, AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::EmptyGroup);
    }
    let mut groups: BTreeMap<(String, usize, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        let l = &r.labels;
        groups.entry((l.operation.clone(), l.n_train, l.method.clone())).or_default().push(r);
    }
    Ok(groups
        .into_iter()
        .map(|((operation, n, method), rs)| {
            let steps: Vec<f64> = rs.iter().filter_map(|r| r.grok_step).map(|s| s as f64).collect();
            let accs: Vec<f64> = rs.iter().map(|r| r.final_test_acc).collect();
            let (acc_mean, acc_std) = mean_std(&accs);
            let (grok_step_mean, grok_step_std) = if steps.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&steps);
                (Some(m), Some(s))
            };
            TableRow {
                operation,
                n,
                method,
                runs: rs.len(),
                grok_step_mean,
                grok_step_std,
                final_acc_mean: acc_mean,
                final_acc_std: acc_std,
                grokked_fraction: steps.len() as f64 / rs.len() as f64,
            }
        })
        .collect())
}

pub const TABLE_HEADER: [&str; 5] = ["Operation", "N", "Method", "Grokking step", "Final accuracy"];

fn cells(row: &TableRow) -> [String; 5] {
    let step = match (row.grok_step_mean, row.grok_step_std) {
        (Some(m), Some(s)) => format!("{:.0}(± {:.0})", m, s),
        _ => "Non-grokked".to_string(),
    };
    let acc = if row.grokked_fraction == 1.0 {
        "Grokked".to_string()
    } else {
        format!("{:.2}(± {:.2})", row.final_acc_mean * 100.0, row.final_acc_std * 100.0)
    };
    [row.operation.clone(), row.n.to_string(), row.method.clone(), step, acc]
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut out = TABLE_HEADER.join(",") + "\n";
    for r in rows {
        out.push_str(&cells(r).iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

pub fn table_text(rows: &[TableRow]) -> String {
    let body: Vec<[String; 5]> = rows.iter().map(cells).collect();
    let mut width = TABLE_HEADER.map(|h| h.chars().count());
    for r in &body {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cols: Vec<String>| {
        cols.iter().zip(width).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ").trim_end().to_string()
    };
    let mut out = line(TABLE_HEADER.iter().map(|s| s.to_string()).collect()) + "\n";
    out.push_str(&line(width.iter().map(|&w| "-".repeat(w)).collect()));
    out.push('\n');
    for r in body {
        out.push_str(&line(r.to_vec()));
        out.push('\n');
    }
    out
}
