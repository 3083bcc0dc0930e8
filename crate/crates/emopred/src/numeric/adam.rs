//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::numeric::tensor::{Parameter, Scalar, Tensor};

/// Optimizer state for one parameter group. First and second moment
/// estimates are kept per parameter, in the order of the parameter slice
/// handed to [`AdamState::step`]; that order must stay stable across steps.
#[derive(Debug, Clone)]
pub struct AdamState<F: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of steps taken so far.
    pub t: u64,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if lr <= 0.0 || !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
            return Err(Error::Config(format!(
                "invalid Adam hyperparameters: lr={lr} beta1={beta1} beta2={beta2} eps={eps}"
            )));
        }
        Ok(AdamState {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    /// Conventional defaults: lr 1e-3, betas (0.9, 0.999), eps 1e-8.
    pub fn with_lr(lr: f64) -> Result<Self> {
        Self::new(lr, 0.9, 0.999, 1e-8)
    }

    /// Apply one update to every parameter from its accumulated gradient,
    /// then clear the gradients.
    pub fn step(&mut self, params: &mut [Parameter<F>]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect();
            self.v = params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect();
        }
        if self.m.len() != params.len() {
            return Err(Error::Config(format!(
                "Adam state holds {} parameters, step got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let b1 = F::from_f64(self.beta1);
        let b2 = F::from_f64(self.beta2);
        let one = F::one();
        let lr = F::from_f64(self.lr);
        let eps = F::from_f64(self.eps);
        let corr1 = F::from_f64(1.0 - self.beta1.powi(self.t as i32));
        let corr2 = F::from_f64(1.0 - self.beta2.powi(self.t as i32));

        for (i, p) in params.iter_mut().enumerate() {
            if p.grad.shape() != p.value.shape() {
                return Err(Error::Shape(format!(
                    "gradient shape {:?} does not match parameter `{}` {:?}",
                    p.grad.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.grad.check_finite(&p.name)?;
            let g = p.grad.as_slice();
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            let w = p.value.as_mut_slice();
            for j in 0..w.len() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let m_hat = m[j] / corr1;
                let v_hat = v[j] / corr2;
                w[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.value.check_finite(&p.name)?;
            p.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(value: f64) -> Parameter<f64> {
        Parameter::new("w", Tensor::scalar(value))
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction, the very first update is lr * g / (|g| + eps),
        // i.e. essentially lr regardless of the gradient's magnitude.
        for g in [1.0, 100.0, 1e-4] {
            let mut params = vec![scalar_param(0.0)];
            params[0].grad = Tensor::scalar(g);
            let mut opt = AdamState::<f64>::with_lr(0.1).unwrap();
            opt.step(&mut params).unwrap();
            // eps in the denominator shaves the step by at most g/(g+eps).
            assert!(
                (params[0].value.item() + 0.1).abs() < 2e-5,
                "grad {g} moved to {}",
                params[0].value.item()
            );
        }
    }

    #[test]
    fn step_clears_gradients_and_advances_t() {
        let mut opt = AdamState::with_lr(1e-3).unwrap();
        let mut params = vec![scalar_param(1.0)];
        params[0].grad = Tensor::scalar(2.0);
        opt.step(&mut params).unwrap();
        assert_eq!(opt.t, 1);
        assert_eq!(params[0].grad.item(), 0.0);
        opt.step(&mut params).unwrap();
        assert_eq!(opt.t, 2);
    }

    #[test]
    fn minimizes_a_quadratic() {
        // f(w) = (w - 3)^2, gradient 2(w - 3).
        let mut opt = AdamState::with_lr(0.05).unwrap();
        let mut params = vec![scalar_param(-4.0)];
        for _ in 0..2000 {
            let w = params[0].value.item();
            params[0].grad = Tensor::scalar(2.0 * (w - 3.0));
            opt.step(&mut params).unwrap();
        }
        assert!(
            (params[0].value.item() - 3.0).abs() < 1e-3,
            "ended at {}",
            params[0].value.item()
        );
    }

    #[test]
    fn rejects_invalid_hyperparameters() {
        assert!(AdamState::<f64>::new(0.0, 0.9, 0.999, 1e-8).is_err());
        assert!(AdamState::<f64>::new(1e-3, 1.0, 0.999, 1e-8).is_err());
        assert!(AdamState::<f64>::new(1e-3, 0.9, -0.1, 1e-8).is_err());
        assert!(AdamState::<f64>::new(1e-3, 0.9, 0.999, 0.0).is_err());
    }

    #[test]
    fn rejects_parameter_count_change() {
        let mut opt = AdamState::with_lr(1e-3).unwrap();
        let mut one = vec![scalar_param(0.0)];
        opt.step(&mut one).unwrap();
        let mut two = vec![scalar_param(0.0), scalar_param(0.0)];
        assert!(opt.step(&mut two).is_err());
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut opt = AdamState::with_lr(1e-3).unwrap();
        let mut params = vec![scalar_param(0.0)];
        params[0].grad = Tensor::scalar(f64::NAN);
        assert!(opt.step(&mut params).is_err());
    }
}
