//! Post-hoc embedding analysis: cosine-similarity matrices, intra/inter-class
//! similarity statistics and CSV exports for heatmaps and loss curves.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::MetricsRecord;
use crate::kernels::{l2_normalize_rows, EmbeddingBatch};
use crate::matrix::{dot, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityStats {
    pub mean_intra: f64,
    pub mean_inter: f64,
    /// Mean intra-class similarity per label; `None` for labels with fewer than two examples.
    pub per_class_intra: Vec<Option<f64>>,
}

/// `S[i][j] = cos(F_i, F_j)`, unit diagonal, exactly symmetric. Zero rows are
/// treated as `e₁`.
pub fn cosine_similarity_matrix(f: &EmbeddingBatch) -> Matrix {
    let n = l2_normalize_rows(f);
    let b = n.rows();
    let mut s = Matrix::zeros(b, b);
    for i in 0..b {
        s[(i, i)] = 1.0;
        for j in 0..i {
            let v = dot(n.row(i), n.row(j)).clamp(-1.0, 1.0);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

/// `(mean_intra, mean_inter, per_class_intra)`, each `None` when undefined.
pub type PairMeans = (Option<f64>, Option<f64>, Vec<Option<f64>>);

/// Means over distinct same-label pairs and over cross-label pairs; `None`
/// when no such pair exists.
pub fn similarity_means(f: &EmbeddingBatch, labels: &[usize]) -> Result<PairMeans> {
    if f.rows() != labels.len() {
        return Err(Error::input(format!(
            "{} embeddings but {} labels",
            f.rows(),
            labels.len()
        )));
    }
    let s = cosine_similarity_matrix(f);
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut class_sum = vec![0.0; classes];
    let mut class_n = vec![0usize; classes];
    let (mut inter_sum, mut inter_n) = (0.0, 0usize);
    for i in 0..labels.len() {
        for j in 0..i {
            if labels[i] == labels[j] {
                class_sum[labels[i]] += s[(i, j)];
                class_n[labels[i]] += 1;
            } else {
                inter_sum += s[(i, j)];
                inter_n += 1;
            }
        }
    }
    let intra_n: usize = class_n.iter().sum();
    let intra = (intra_n > 0).then(|| class_sum.iter().sum::<f64>() / intra_n as f64);
    let inter = (inter_n > 0).then(|| inter_sum / inter_n as f64);
    let per_class = class_sum
        .iter()
        .zip(&class_n)
        .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
        .collect();
    Ok((intra, inter, per_class))
}

pub fn intra_inter_stats(f: &EmbeddingBatch, labels: &[usize]) -> Result<SimilarityStats> {
    let (intra, inter, per_class_intra) = similarity_means(f, labels)?;
    let mean_intra =
        intra.ok_or_else(|| Error::input("mean_intra undefined: no class has two examples"))?;
    let mean_inter =
        inter.ok_or_else(|| Error::input("mean_inter undefined: fewer than two classes"))?;
    Ok(SimilarityStats {
        mean_intra,
        mean_inter,
        per_class_intra,
    })
}

/// Shortest decimal form of `v` rounded to 9 significant digits.
fn sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

/// Stable permutation placing same-label examples next to each other.
pub fn label_order(labels: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by_key(|&i| labels[i]);
    order
}

/// Writes `S` reordered so same-label examples are adjacent. The header
/// holds the example ids (row positions of `S`) in that order; each body row
/// holds one example's similarities at 9 significant digits.
pub fn export_heatmap(s: &Matrix, labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let ids: Vec<usize> = (0..labels.len()).collect();
    export_heatmap_with_ids(s, labels, &ids, path)
}

/// [`export_heatmap`] with caller-supplied example ids, e.g. dataset indices
/// of a selected subset. Ids must be strictly increasing.
pub fn export_heatmap_with_ids(
    s: &Matrix,
    labels: &[usize],
    ids: &[usize],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if s.rows() != s.cols() || s.rows() != labels.len() || ids.len() != labels.len() {
        return Err(Error::input(format!(
            "heatmap needs a square matrix matching {} labels and {} ids, got {:?}",
            labels.len(),
            ids.len(),
            s.shape()
        )));
    }
    if ids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::input("heatmap ids must be strictly increasing"));
    }
    let order = label_order(labels);
    let mut out = order
        .iter()
        .map(|&i| ids[i].to_string())
        .collect::<Vec<_>>()
        .join(",");
    out.push('\n');
    for &i in &order {
        let row: Vec<String> = order.iter().map(|&j| sig9(s[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a heatmap written by [`export_heatmap`] back into the original
/// example order (ascending id).
pub fn import_heatmap(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file".into()))?;
    let ids: Vec<usize> = header
        .split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| parse_err(1, format!("bad id {t:?}")))
        })
        .collect::<Result<_>>()?;
    let n = ids.len();
    let mut sorted = ids.clone();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(parse_err(1, "duplicate example id".into()));
    }
    let pos: Vec<usize> = ids
        .iter()
        .map(|id| sorted.binary_search(id).expect("id present"))
        .collect();
    let mut s = Matrix::zeros(n, n);
    for (r, line) in lines.enumerate() {
        if r >= n {
            return Err(parse_err(r + 2, "too many rows".into()));
        }
        let vals: Vec<&str> = line.split(',').collect();
        if vals.len() != n {
            return Err(parse_err(
                r + 2,
                format!("{} values, expected {n}", vals.len()),
            ));
        }
        for (c, v) in vals.iter().enumerate() {
            let x: f64 = v
                .trim()
                .parse()
                .map_err(|_| parse_err(r + 2, format!("bad value {v:?}")))?;
            s[(pos[r], pos[c])] = x;
        }
    }
    Ok(s)
}

/// One row per epoch per run: `run_id,epoch,ce,kd,cc,total,test_top1`.
pub fn export_curves(records: &[MetricsRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if records.is_empty() {
        return Err(Error::input("no metrics records to export"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(["run_id", "epoch", "ce", "kd", "cc", "total", "test_top1"])
        .map_err(csv_err)?;
    for rec in records {
        for e in &rec.epochs {
            w.write_record([
                rec.run_id.clone(),
                e.epoch.to_string(),
                e.train.ce.to_string(),
                e.train.kd.to_string(),
                e.train.cc.to_string(),
                e.train.total.to_string(),
                e.test_top1.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
