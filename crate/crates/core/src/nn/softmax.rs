use crate::error::{Error, Result};
use crate::matrix::Matrix;

fn check_tau(tau: f64) -> Result<()> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::param(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    Ok(())
}

/// Numerically stable `softmax(z / tau)`.
pub fn softmax_with_temperature(z: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    let mut out = log_softmax_slice(z, tau);
    for v in &mut out {
        *v = v.exp();
    }
    Ok(out)
}

/// Row-wise log-softmax of `z / tau`, max-shifted.
pub(crate) fn log_softmax_slice(z: &[f64], tau: f64) -> Vec<f64> {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let shifted: Vec<f64> = z.iter().map(|&v| (v - max) / tau).collect();
    let log_sum = shifted.iter().map(|v| v.exp()).sum::<f64>().ln();
    shifted.into_iter().map(|v| v - log_sum).collect()
}

pub fn log_softmax_rows(z: &Matrix, tau: f64) -> Result<Matrix> {
    check_tau(tau)?;
    let mut out = Matrix::zeros(z.rows(), z.cols());
    for i in 0..z.rows() {
        out.row_mut(i)
            .copy_from_slice(&log_softmax_slice(z.row(i), tau));
    }
    Ok(out)
}

pub fn softmax_rows(z: &Matrix, tau: f64) -> Result<Matrix> {
    Ok(log_softmax_rows(z, tau)?.map(f64::exp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn symmetric_logits_are_uniform() {
        for tau in [0.1, 1.0, 4.0] {
            assert_eq!(
                softmax_with_temperature(&[0.0, 0.0], tau).unwrap(),
                vec![0.5, 0.5]
            );
            let p = softmax_with_temperature(&[2.5, 2.5, 2.5], tau).unwrap();
            for v in p {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_class_logistic() {
        // 1 / (1 + e^-1) = 0.7310585786300049
        let p = softmax_with_temperature(&[1.0, 0.0], 1.0).unwrap();
        assert!((p[0] - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert!((p[1] - 0.268_941_421_369_995_1).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_tau() {
        assert!(softmax_with_temperature(&[1.0], 0.0).is_err());
        assert!(softmax_with_temperature(&[1.0], -1.0).is_err());
        assert!(softmax_with_temperature(&[1.0], f64::NAN).is_err());
    }

    #[test]
    fn low_temperature_does_not_overflow() {
        let p = softmax_with_temperature(&[1000.0, 0.0], 1e-3).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn sums_to_one_and_shift_invariant(
            z in prop::collection::vec(-30.0f64..30.0, 1..8),
            shift in -50.0f64..50.0,
            tau in 0.2f64..10.0,
        ) {
            let p = softmax_with_temperature(&z, tau).unwrap();
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
            let q = softmax_with_temperature(&shifted, tau).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
