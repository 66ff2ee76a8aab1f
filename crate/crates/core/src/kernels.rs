//! Pairwise instance-correlation metrics and the batch correlation matrix.
//!
//! Four metrics are supported: naive MMD `|mean(x) - mean(y)|`, bilinear
//! pooling `x·y`, the Gaussian RBF `exp(-γ‖x-y‖²)` and its truncated Taylor
//! expansion in the inner product,
//!
//! ```text
//! k(x, y) ≈ Σ_{p=0..P} e^{-2γ} (2γ)^p / p! · (x·y)^p
//! ```
//!
//! which equals the RBF exactly (as `P → ∞`) only for unit-norm rows. Rows are
//! therefore L2-normalized before the Taylor kernel by default.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, norm, squared_distance, Matrix};

/// `b x d` matrix of per-instance embeddings, one row per instance.
pub type EmbeddingBatch = Matrix;

/// `b x b` matrix of pairwise instance correlations.
pub type CorrelationMatrix = Matrix;

/// Tolerance used when checking that Taylor-kernel inputs have unit norm.
pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Mmd,
    Bilinear,
    RbfExact,
    RbfTaylor,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [
        KernelKind::Mmd,
        KernelKind::Bilinear,
        KernelKind::RbfExact,
        KernelKind::RbfTaylor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Mmd => "mmd",
            KernelKind::Bilinear => "bilinear",
            KernelKind::RbfExact => "rbf_exact",
            KernelKind::RbfTaylor => "rbf_taylor",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::param(format!("unknown kernel kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "KernelConfigFields")]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub gamma: f64,
    pub order: usize,
    pub normalize_rows: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelConfigFields {
    kind: KernelKind,
    #[serde(default = "default_gamma")]
    gamma: f64,
    #[serde(default = "default_order")]
    order: usize,
    #[serde(default)]
    normalize_rows: Option<bool>,
}

fn default_gamma() -> f64 {
    0.4
}

fn default_order() -> usize {
    2
}

impl From<KernelConfigFields> for KernelConfig {
    fn from(f: KernelConfigFields) -> Self {
        KernelConfig {
            kind: f.kind,
            gamma: f.gamma,
            order: f.order,
            normalize_rows: f.normalize_rows.unwrap_or(f.kind == KernelKind::RbfTaylor),
        }
    }
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self::rbf_taylor(0.4, 2)
    }
}

impl KernelConfig {
    /// Defaults for `kind`: γ = 0.4, P = 2, rows normalized only for the Taylor kernel.
    pub fn new(kind: KernelKind) -> Self {
        KernelConfig {
            kind,
            gamma: default_gamma(),
            order: default_order(),
            normalize_rows: kind == KernelKind::RbfTaylor,
        }
    }

    pub fn rbf_taylor(gamma: f64, order: usize) -> Self {
        KernelConfig {
            kind: KernelKind::RbfTaylor,
            gamma,
            order,
            normalize_rows: true,
        }
    }

    pub fn rbf_exact(gamma: f64) -> Self {
        KernelConfig {
            gamma,
            ..Self::new(KernelKind::RbfExact)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if matches!(self.kind, KernelKind::RbfExact | KernelKind::RbfTaylor)
            && !(self.gamma > 0.0 && self.gamma.is_finite())
        {
            return Err(Error::param(format!(
                "RBF gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.kind == KernelKind::RbfTaylor && self.order == 0 {
            return Err(Error::param("Taylor order must be at least 1"));
        }
        Ok(())
    }

    /// Series coefficients `α_p = e^{-2γ} (2γ)^p / p!` for `p = 0..=order`.
    pub fn taylor_coefficients(&self) -> Vec<f64> {
        taylor_coefficients(self.gamma, self.order)
    }
}

pub fn taylor_coefficients(gamma: f64, order: usize) -> Vec<f64> {
    let mut coeffs = Vec::with_capacity(order + 1);
    let mut a = (-2.0 * gamma).exp();
    for p in 0..=order {
        if p > 0 {
            a *= 2.0 * gamma / p as f64;
        }
        coeffs.push(a);
    }
    coeffs
}

/// Horner evaluation of `Σ α_p t^p`.
fn series(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &a| acc * t + a)
}

/// Derivative `Σ p α_p t^{p-1}`.
fn series_derivative(coeffs: &[f64], t: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (p, &a)| acc * t + p as f64 * a)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::input(format!(
            "vectors differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::input("empty feature vectors"));
    }
    Ok(())
}

/// Evaluates the metric on rows that have already been prepared (normalized
/// when the configuration asks for it).
fn eval_prepared(kind: KernelKind, gamma: f64, coeffs: &[f64], x: &[f64], y: &[f64]) -> f64 {
    match kind {
        KernelKind::Mmd => (mean(x) - mean(y)).abs(),
        KernelKind::Bilinear => dot(x, y),
        KernelKind::RbfExact => (-gamma * squared_distance(x, y)).exp(),
        KernelKind::RbfTaylor => series(coeffs, dot(x, y)),
    }
}

/// Single-pair correlation under `cfg`.
///
/// For the Taylor kernel with `normalize_rows` set, both inputs must already
/// have unit norm.
pub fn pairwise_correlation(x: &[f64], y: &[f64], cfg: &KernelConfig) -> Result<f64> {
    cfg.validate()?;
    check_pair(x, y)?;
    if cfg.kind == KernelKind::RbfTaylor && cfg.normalize_rows {
        return rbf_taylor(x, y, cfg.gamma, cfg.order);
    }
    Ok(eval_prepared(
        cfg.kind,
        cfg.gamma,
        &cfg.taylor_coefficients(),
        x,
        y,
    ))
}

/// `P`-order Taylor approximation of `exp(-γ‖x-y‖²)` for unit-norm `x`, `y`.
pub fn rbf_taylor(x: &[f64], y: &[f64], gamma: f64, order: usize) -> Result<f64> {
    KernelConfig::rbf_taylor(gamma, order).validate()?;
    check_pair(x, y)?;
    for (name, v) in [("x", x), ("y", y)] {
        let n = norm(v);
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::input(format!(
                "Taylor RBF requires unit-norm inputs, ‖{name}‖ = {n}"
            )));
        }
    }
    Ok(series(&taylor_coefficients(gamma, order), dot(x, y)))
}

/// Scales every row to unit L2 norm. All-zero rows become `e₁`.
pub fn l2_normalize_rows(f: &EmbeddingBatch) -> EmbeddingBatch {
    let mut out = f.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let n = norm(row);
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        } else if !row.is_empty() {
            row.iter_mut().for_each(|v| *v = 0.0);
            row[0] = 1.0;
        }
    }
    out
}

/// Work performed by one correlation-matrix construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KernelCost {
    /// Metric evaluations, one per unordered pair including the diagonal.
    pub evaluations: usize,
    /// Scalar multiply-adds over the feature dimension plus series terms.
    pub scalar_ops: usize,
}

fn check_batch(f: &EmbeddingBatch) -> Result<()> {
    if f.rows() == 0 || f.cols() == 0 {
        return Err(Error::input(format!(
            "embedding batch must be non-empty, got {:?}",
            f.shape()
        )));
    }
    if !f.is_finite() {
        return Err(Error::NonFinite("embedding batch".into()));
    }
    Ok(())
}

fn prepare(f: &EmbeddingBatch, cfg: &KernelConfig) -> Result<EmbeddingBatch> {
    cfg.validate()?;
    check_batch(f)?;
    Ok(if cfg.normalize_rows {
        l2_normalize_rows(f)
    } else {
        f.clone()
    })
}

/// `C[i][j] = k(F_i, F_j)`; each unordered pair is evaluated once so the
/// result is exactly symmetric.
pub fn correlation_matrix(f: &EmbeddingBatch, cfg: &KernelConfig) -> Result<CorrelationMatrix> {
    correlation_matrix_counted(f, cfg).map(|(c, _)| c)
}

pub fn correlation_matrix_counted(
    f: &EmbeddingBatch,
    cfg: &KernelConfig,
) -> Result<(CorrelationMatrix, KernelCost)> {
    let rows = prepare(f, cfg)?;
    let (b, d) = rows.shape();
    let coeffs = cfg.taylor_coefficients();
    let per_eval = match cfg.kind {
        KernelKind::Mmd => 2 * d,
        KernelKind::Bilinear | KernelKind::RbfExact => d,
        KernelKind::RbfTaylor => d + cfg.order,
    };
    let mut c = Matrix::zeros(b, b);
    let mut cost = KernelCost::default();
    for i in 0..b {
        for j in i..b {
            let v = eval_prepared(cfg.kind, cfg.gamma, &coeffs, rows.row(i), rows.row(j));
            c[(i, j)] = v;
            c[(j, i)] = v;
            cost.evaluations += 1;
            cost.scalar_ops += per_eval;
        }
    }
    if cfg.kind == KernelKind::RbfExact {
        for i in 0..b {
            c[(i, i)] = 1.0;
        }
    }
    Ok((c, cost))
}

/// Gradient of `Σ_ij upstream[i][j] · C[i][j]` with respect to the raw
/// (pre-normalization) embeddings.
pub fn correlation_matrix_grad(
    f: &EmbeddingBatch,
    cfg: &KernelConfig,
    upstream: &Matrix,
) -> Result<EmbeddingBatch> {
    let rows = prepare(f, cfg)?;
    let (b, d) = rows.shape();
    if upstream.shape() != (b, b) {
        return Err(Error::input(format!(
            "upstream gradient must be {b}x{b}, got {:?}",
            upstream.shape()
        )));
    }
    let coeffs = cfg.taylor_coefficients();
    // w = U + Uᵀ; every metric is symmetric so dC_ij/dx_i has the same form
    // for both argument slots.
    let w = |i: usize, j: usize| upstream[(i, j)] + upstream[(j, i)];
    let mut g = Matrix::zeros(b, d);
    match cfg.kind {
        KernelKind::Bilinear => {
            for i in 0..b {
                for j in 0..b {
                    let wij = w(i, j);
                    if wij == 0.0 {
                        continue;
                    }
                    let rj = rows.row(j).to_vec();
                    for (gv, r) in g.row_mut(i).iter_mut().zip(rj) {
                        *gv += wij * r;
                    }
                }
            }
        }
        KernelKind::RbfTaylor => {
            for i in 0..b {
                for j in 0..b {
                    let wij = w(i, j);
                    if wij == 0.0 {
                        continue;
                    }
                    let s = wij * series_derivative(&coeffs, dot(rows.row(i), rows.row(j)));
                    let rj = rows.row(j).to_vec();
                    for (gv, r) in g.row_mut(i).iter_mut().zip(rj) {
                        *gv += s * r;
                    }
                }
            }
        }
        KernelKind::RbfExact => {
            for i in 0..b {
                for j in 0..b {
                    if i == j {
                        continue;
                    }
                    let wij = w(i, j);
                    if wij == 0.0 {
                        continue;
                    }
                    let (ri, rj) = (rows.row(i).to_vec(), rows.row(j).to_vec());
                    let k = (-cfg.gamma * squared_distance(&ri, &rj)).exp();
                    let s = -2.0 * cfg.gamma * k * wij;
                    for ((gv, a), c) in g.row_mut(i).iter_mut().zip(ri).zip(rj) {
                        *gv += s * (a - c);
                    }
                }
            }
        }
        KernelKind::Mmd => {
            let means: Vec<f64> = rows.row_iter().map(mean).collect();
            for i in 0..b {
                let mut s = 0.0;
                for j in 0..b {
                    let diff = means[i] - means[j];
                    // sign(0) = 0: the diagonal is identically zero
                    if diff != 0.0 {
                        s += w(i, j) * diff.signum();
                    }
                }
                let s = s / d as f64;
                g.row_mut(i).iter_mut().for_each(|v| *v = s);
            }
        }
    }
    if cfg.normalize_rows {
        // n = f/‖f‖  =>  ∂L/∂f = (g - (g·n) n) / ‖f‖; e₁ stand-ins for zero rows are constant
        for i in 0..b {
            let r = norm(f.row(i));
            let n = rows.row(i).to_vec();
            let gi = g.row_mut(i);
            if r == 0.0 {
                gi.iter_mut().for_each(|v| *v = 0.0);
                continue;
            }
            let proj = dot(gi, &n);
            for (gv, nv) in gi.iter_mut().zip(&n) {
                *gv = (*gv - proj * nv) / r;
            }
        }
    }
    Ok(g)
}
