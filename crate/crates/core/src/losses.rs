//! Distillation objectives with analytic gradients with respect to the
//! student's outputs. Teacher quantities are treated as constants throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{correlation_matrix, correlation_matrix_grad, EmbeddingBatch, KernelConfig};
use crate::matrix::Matrix;
use crate::nn::log_softmax_rows;

/// Probability floor inside logarithms of teacher distributions.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of cross-entropy; the instance term gets `1 - alpha`.
    pub alpha: f64,
    /// Weight of the correlation-congruence term.
    pub beta: f64,
    /// Softmax temperature for the KD term.
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.003,
            tau: 4.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::param(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::param(format!(
                "beta must be >= 0, got {}",
                self.beta
            )));
        }
        if !self.tau.is_finite() || self.tau <= 0.0 {
            return Err(Error::param(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub kd: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mimic: Option<f64>,
    pub cc: f64,
    pub total: f64,
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "{name} loss = {v}; training diverged"
        )))
    }
}

/// `total = α·ce + (1−α)·kd + β·cc`.
pub fn cckd_total(ce: f64, kd: f64, cc: f64, weights: &LossWeights) -> Result<LossBreakdown> {
    check_finite("ce", ce)?;
    check_finite("kd", kd)?;
    check_finite("cc", cc)?;
    let total = weights.alpha * ce + (1.0 - weights.alpha) * kd + weights.beta * cc;
    check_finite("total", total)?;
    Ok(LossBreakdown {
        ce,
        kd,
        mimic: None,
        cc,
        total,
    })
}

/// Same blend with the L2 mimic loss filling the instance-congruence slot.
/// `kd` is carried along for reporting only.
pub fn cckd_total_mimic(
    ce: f64,
    kd: f64,
    mimic: f64,
    cc: f64,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let mut b = cckd_total(ce, mimic, cc, weights)?;
    check_finite("kd", kd)?;
    b.kd = kd;
    b.mimic = Some(mimic);
    Ok(b)
}

/// Mean negative log-likelihood; gradient `(softmax − onehot)/b`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (b, c) = logits.shape();
    if labels.len() != b || b == 0 {
        return Err(Error::input(format!(
            "{} labels for a batch of {b} logits rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::input(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let logp = log_softmax_rows(logits, 1.0)?;
    let mut grad = logp.map(f64::exp);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        loss -= logp[(i, y)];
        grad[(i, y)] -= 1.0;
    }
    let inv = 1.0 / b as f64;
    Ok((loss * inv, grad.scale(inv)))
}

/// `(1/b) Σ τ² KL(p_t^τ ‖ p_s^τ)`; gradient with respect to the student logits
/// is `τ (p_s^τ − p_t^τ) / b`.
pub fn kd_loss(student: &Matrix, teacher: &Matrix, tau: f64) -> Result<(f64, Matrix)> {
    student.check_same_shape(teacher, "kd_loss")?;
    if student.rows() == 0 {
        return Err(Error::input("kd_loss on an empty batch"));
    }
    let log_s = log_softmax_rows(student, tau)?;
    let log_t = log_softmax_rows(teacher, tau)?;
    let floor = LOG_FLOOR.ln();
    let b = student.rows() as f64;
    let mut kl = 0.0;
    let mut grad = Matrix::zeros(student.rows(), student.cols());
    for i in 0..student.rows() {
        for ((g, &ls), &lt) in grad
            .row_mut(i)
            .iter_mut()
            .zip(log_s.row(i))
            .zip(log_t.row(i))
        {
            let pt = lt.exp();
            kl += pt * (lt.max(floor) - ls);
            *g = tau * (ls.exp() - pt) / b;
        }
    }
    Ok((tau * tau * kl / b, grad))
}

/// `(1/b) Σ ‖f_s − f_t‖²`; gradient `2 (F_s − F_t) / b`.
pub fn mimic_loss(student: &EmbeddingBatch, teacher: &EmbeddingBatch) -> Result<(f64, Matrix)> {
    student.check_same_shape(teacher, "mimic_loss")?;
    if student.rows() == 0 {
        return Err(Error::input("mimic_loss on an empty batch"));
    }
    let b = student.rows() as f64;
    let diff = student.sub(teacher)?;
    Ok((diff.sum_squares() / b, diff.scale(2.0 / b)))
}

/// `(1/b²) ‖ψ(F_t) − ψ(F_s)‖²_F` and its gradient with respect to `F_s`.
pub fn cc_loss(
    student: &EmbeddingBatch,
    teacher: &EmbeddingBatch,
    cfg: &KernelConfig,
) -> Result<(f64, Matrix)> {
    let (loss, diff) = cc_parts(student, teacher, cfg)?;
    let b2 = (student.rows() * student.rows()) as f64;
    let grad = correlation_matrix_grad(student, cfg, &diff.scale(2.0 / b2))?;
    Ok((loss, grad))
}

/// Loss value only, for measuring congruence without optimizing it.
pub fn cc_loss_value(
    student: &EmbeddingBatch,
    teacher: &EmbeddingBatch,
    cfg: &KernelConfig,
) -> Result<f64> {
    cc_parts(student, teacher, cfg).map(|(l, _)| l)
}

fn cc_parts(
    student: &EmbeddingBatch,
    teacher: &EmbeddingBatch,
    cfg: &KernelConfig,
) -> Result<(f64, Matrix)> {
    student.check_same_shape(teacher, "cc_loss")?;
    let cs = correlation_matrix(student, cfg)?;
    let ct = correlation_matrix(teacher, cfg)?;
    let diff = cs.sub(&ct)?;
    let b2 = (student.rows() * student.rows()) as f64;
    Ok((diff.sum_squares() / b2, diff))
}
