use crate::error::Result;
use crate::matrix::Matrix;

use super::mlp::MlpModel;

/// Anything exposing a flat, indexable parameter vector.
pub trait Parameterized: Clone {
    fn param_count(&self) -> usize;
    fn param(&self, k: usize) -> f64;
    fn set_param(&mut self, k: usize, v: f64);
}

impl Parameterized for MlpModel {
    fn param_count(&self) -> usize {
        MlpModel::param_count(self)
    }

    fn param(&self, k: usize) -> f64 {
        // layers are small; a linear walk keeps the layout in one place
        let mut k = k;
        for l in self.layers() {
            let nw = l.weight.as_slice().len();
            if k < nw {
                return l.weight.as_slice()[k];
            }
            k -= nw;
            if k < l.bias.len() {
                return l.bias[k];
            }
            k -= l.bias.len();
        }
        panic!("parameter index out of range")
    }

    fn set_param(&mut self, k: usize, v: f64) {
        self.set_flat_param(k, v);
    }
}

impl Parameterized for Matrix {
    fn param_count(&self) -> usize {
        self.as_slice().len()
    }

    fn param(&self, k: usize) -> f64 {
        self.as_slice()[k]
    }

    fn set_param(&mut self, k: usize, v: f64) {
        self.as_mut_slice()[k] = v;
    }
}

impl Parameterized for Vec<f64> {
    fn param_count(&self) -> usize {
        self.len()
    }

    fn param(&self, k: usize) -> f64 {
        self[k]
    }

    fn set_param(&mut self, k: usize, v: f64) {
        self[k] = v;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    pub worst: Option<usize>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Gradients smaller than this are compared in absolute terms.
const REL_FLOOR: f64 = 1e-6;

/// Relative error with magnitudes below `1e-6` treated as absolute error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the analytic gradient returned by `loss` at `params` against
/// central differences with step `1e-5 * max(1, |theta|)` for every parameter.
pub fn gradient_check<P, F>(params: &P, mut loss: F, tolerance: f64) -> Result<GradCheckReport>
where
    P: Parameterized,
    F: FnMut(&P) -> Result<(f64, Vec<f64>)>,
{
    let n = params.param_count();
    let mut entries = Vec::with_capacity(n);
    let mut max_rel_error: f64 = 0.0;
    let mut worst = None;
    if n == 0 {
        return Ok(GradCheckReport {
            entries,
            max_rel_error,
            worst,
            tolerance,
        });
    }
    let (_, analytic) = loss(params)?;
    assert_eq!(
        analytic.len(),
        n,
        "analytic gradient length must match parameter count"
    );
    let mut probe = params.clone();
    for (k, &a) in analytic.iter().enumerate() {
        let theta = params.param(k);
        let h = 1e-5 * theta.abs().max(1.0);
        probe.set_param(k, theta + h);
        let (up, _) = loss(&probe)?;
        probe.set_param(k, theta - h);
        let (down, _) = loss(&probe)?;
        probe.set_param(k, theta);
        let numeric = (up - down) / (2.0 * h);
        let rel_error = relative_error(a, numeric);
        if rel_error > max_rel_error || worst.is_none() {
            max_rel_error = max_rel_error.max(rel_error);
            worst = Some(k);
        }
        entries.push(GradCheckEntry {
            index: k,
            analytic: a,
            numeric,
            rel_error,
        });
    }
    Ok(GradCheckReport {
        entries,
        max_rel_error,
        worst,
        tolerance,
    })
}
