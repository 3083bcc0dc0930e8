//! Central-difference gradient verification.
//!
//! The checker perturbs individual coordinates of the input tensors, reruns
//! a caller-supplied loss function, and compares the numeric slope against
//! analytic gradients supplied by the caller. Taking the analytic gradients
//! as an argument (rather than computing them internally) lets tests verify
//! the checker itself by handing it deliberately corrupted gradients.

use crate::error::{Error, Result};
use crate::numeric::rng::Prng;
use crate::numeric::tensor::{Scalar, Tensor};

/// Floor for the relative-error denominator. Central differences carry an
/// absolute noise of roughly machine-epsilon times |loss| / epsilon (about
/// 1e-11 for unit-scale losses at epsilon 1e-5), so derivatives smaller
/// than that cannot be verified in relative terms at all; coordinates where
/// both sides sit below this floor are compared on an absolute scale
/// instead of flagging pure roundoff as a gradient bug.
const DENOM_FLOOR: f64 = 1e-6;

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error over all sampled coordinates.
    pub max_rel_err: f64,
    /// Number of coordinates compared.
    pub checked: usize,
    /// Tensor index, flat coordinate, analytic and numeric values at the
    /// worst coordinate.
    pub worst: Option<WorstCoord>,
}

#[derive(Debug, Clone)]
pub struct WorstCoord {
    pub tensor: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compare `analytic` gradients of `loss_fn` at `values` against central
/// finite differences.
///
/// Up to `samples_per_tensor` coordinates are drawn per tensor (all of them
/// when a tensor is small enough). The relative error at a coordinate is
/// `|a - n| / max(|a|, |n|, DENOM_FLOOR)`.
pub fn grad_check<F, L>(
    values: &[Tensor<F>],
    analytic: &[Tensor<F>],
    mut loss_fn: L,
    epsilon: f64,
    samples_per_tensor: usize,
    rng: &mut Prng,
) -> Result<GradCheckReport>
where
    F: Scalar,
    L: FnMut(&[Tensor<F>]) -> Result<f64>,
{
    if values.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "{} value tensors but {} gradient tensors",
            values.len(),
            analytic.len()
        )));
    }
    if epsilon <= 0.0 || samples_per_tensor == 0 {
        return Err(Error::Config(format!(
            "invalid grad check settings: epsilon={epsilon} samples={samples_per_tensor}"
        )));
    }
    for (v, a) in values.iter().zip(analytic) {
        if v.shape() != a.shape() {
            return Err(Error::Shape(format!(
                "value shape {:?} does not match gradient shape {:?}",
                v.shape(),
                a.shape()
            )));
        }
    }

    let mut work: Vec<Tensor<F>> = values.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: None,
    };
    let eps = F::from_f64(epsilon);

    for ti in 0..values.len() {
        let numel = values[ti].numel();
        let coords = sample_coords(numel, samples_per_tensor, rng);
        for coord in coords {
            let base = values[ti].as_slice()[coord];

            work[ti].as_mut_slice()[coord] = base + eps;
            let f_plus = loss_fn(&work)?;
            work[ti].as_mut_slice()[coord] = base - eps;
            let f_minus = loss_fn(&work)?;
            work[ti].as_mut_slice()[coord] = base;

            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss at perturbed coordinate {coord} of tensor {ti}"
                )));
            }
            let numeric = (f_plus - f_minus) / (2.0 * epsilon);
            let a = analytic[ti].as_slice()[coord].to_f64();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some(WorstCoord {
                    tensor: ti,
                    coord,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}

/// Distinct coordinates to probe: everything when the tensor is small,
/// otherwise a random subset.
fn sample_coords(numel: usize, wanted: usize, rng: &mut Prng) -> Vec<usize> {
    if numel <= wanted {
        return (0..numel).collect();
    }
    let mut all: Vec<usize> = (0..numel).collect();
    rng.shuffle(&mut all);
    all.truncate(wanted);
    all
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_loss(values: &[Tensor<f64>]) -> Result<f64> {
        // f = sum of squares across all tensors; df/dw = 2w.
        Ok(values
            .iter()
            .map(|t| t.as_slice().iter().map(|&v| v * v).sum::<f64>())
            .sum())
    }

    #[test]
    fn correct_gradients_pass() {
        let mut rng = Prng::new(7);
        let w = Tensor::<f64>::randn_truncated(&[4, 3], 1.0, 3.0, &mut rng);
        let grad = w.scale(2.0);
        let report = grad_check(
            &[w],
            &[grad],
            quadratic_loss,
            1e-5,
            20,
            &mut Prng::new(11),
        )
        .unwrap();
        assert_eq!(report.checked, 12);
        assert!(
            report.max_rel_err < 1e-8,
            "max rel err {}",
            report.max_rel_err
        );
    }

    #[test]
    fn scaled_gradients_are_detected() {
        // A 10% multiplicative fault yields |1.1a - a| / 1.1|a| ~ 0.0909.
        let mut rng = Prng::new(9);
        let w = Tensor::<f64>::randn_truncated(&[5, 5], 1.0, 3.0, &mut rng);
        let corrupted = w.scale(2.0 * 1.1);
        let report = grad_check(
            &[w],
            &[corrupted],
            quadratic_loss,
            1e-5,
            25,
            &mut Prng::new(11),
        )
        .unwrap();
        assert!(
            report.max_rel_err > 5e-2,
            "fault not detected: {}",
            report.max_rel_err
        );
        assert!(report.max_rel_err < 0.1);
    }

    #[test]
    fn zero_gradients_at_minimum_pass() {
        let w = Tensor::<f64>::zeros(&[6]);
        let grad = Tensor::<f64>::zeros(&[6]);
        let report =
            grad_check(&[w], &[grad], quadratic_loss, 1e-5, 20, &mut Prng::new(3)).unwrap();
        assert!(report.max_rel_err < 1e-8);
    }

    #[test]
    fn samples_cap_large_tensors() {
        let w = Tensor::<f64>::filled(&[100], 0.5);
        let grad = Tensor::<f64>::filled(&[100], 1.0);
        let report = grad_check(&[w], &[grad], quadratic_loss, 1e-5, 20, &mut Prng::new(5))
            .unwrap();
        assert_eq!(report.checked, 20);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let w = Tensor::<f64>::zeros(&[3]);
        let grad = Tensor::<f64>::zeros(&[4]);
        assert!(grad_check(&[w], &[grad], quadratic_loss, 1e-5, 20, &mut Prng::new(1)).is_err());
    }

    #[test]
    fn worst_coordinate_is_reported() {
        let w = Tensor::<f64>::filled(&[3], 1.0);
        let mut grad = w.scale(2.0);
        grad.as_mut_slice()[1] = 5.0; // true gradient is 2.0
        let report =
            grad_check(&[w], &[grad], quadratic_loss, 1e-5, 20, &mut Prng::new(1)).unwrap();
        let worst = report.worst.unwrap();
        assert_eq!(worst.coord, 1);
        assert!((worst.numeric - 2.0).abs() < 1e-6);
        assert!((worst.analytic - 5.0).abs() < 1e-12);
    }
}
