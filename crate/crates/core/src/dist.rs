//! Factorized (diagonal) Gaussian over a sequence, with a differentiable
//! joint log-density and reparameterized sampling.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone)]
pub struct DiagGaussian<F: Scalar> {
    pub mu: Tensor<F>,
    pub sigma: Tensor<F>,
}

impl<F: Scalar> DiagGaussian<F> {
    pub fn new(mu: Tensor<F>, sigma: Tensor<F>) -> Result<Self> {
        if mu.shape() != sigma.shape() {
            return Err(Error::ShapeMismatch {
                op: "diag_gaussian",
                lhs: mu.shape().to_vec(),
                rhs: sigma.shape().to_vec(),
            });
        }
        if sigma.data().iter().any(|s| *s <= F::zero()) {
            return Err(Error::invalid("diag_gaussian: sigma must be positive"));
        }
        Ok(DiagGaussian { mu, sigma })
    }

    pub fn standard(shape: &[usize]) -> Self {
        DiagGaussian {
            mu: Tensor::zeros(shape),
            sigma: Tensor::full(shape, F::one()),
        }
    }

    pub fn numel(&self) -> usize {
        self.mu.numel()
    }

    /// Joint log-density of `z`, summed over all elements. Differentiable in
    /// `z`, `mu`, and `sigma`.
    pub fn log_density(&self, z: &Tensor<F>) -> Result<Tensor<F>> {
        if z.shape() != self.mu.shape() {
            return Err(Error::ShapeMismatch {
                op: "log_density",
                lhs: z.shape().to_vec(),
                rhs: self.mu.shape().to_vec(),
            });
        }
        let resid = z.sub(&self.mu)?;
        let quad = resid
            .square()?
            .div(&self.sigma.square()?.mul_scalar(F::of_f64(2.0))?)?;
        let terms = quad.add(&self.sigma.log()?)?.sum()?;
        let n = F::of_usize(self.numel());
        terms.neg()?.add_scalar(-F::of_f64(0.5 * LN_2PI) * n)
    }

    /// Reparameterized draw: mu + sigma * eps with eps ~ N(0, I), so the
    /// sample is differentiable in mu and sigma.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<Tensor<F>> {
        let eps = Tensor::randn(rng, self.mu.shape());
        self.mu.add(&self.sigma.mul(&eps)?)
    }
}

/// Joint standard-normal log-density, differentiable in `z`.
pub fn standard_normal_log_density<F: Scalar>(z: &Tensor<F>) -> Result<Tensor<F>> {
    let n = F::of_usize(z.numel());
    z.square()?
        .sum()?
        .mul_scalar(-F::of_f64(0.5))?
        .add_scalar(-F::of_f64(0.5 * LN_2PI) * n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_density_at_zero() {
        let z = Tensor::<f64>::zeros(&[1]);
        let d = standard_normal_log_density(&z).unwrap();
        assert!((d.item() - (-0.5 * LN_2PI)).abs() < 1e-15);
    }

    #[test]
    fn matches_elementwise_formula() {
        let mu = Tensor::new(vec![0.5, -1.0], &[2]).unwrap();
        let sigma = Tensor::new(vec![2.0, 0.7], &[2]).unwrap();
        let z = Tensor::new(vec![1.0, -0.4], &[2]).unwrap();
        let g = DiagGaussian::new(mu, sigma).unwrap();
        let got = g.log_density(&z).unwrap().item();
        let want: f64 = [(1.0f64, 0.5, 2.0), (-0.4, -1.0, 0.7)]
            .iter()
            .map(|(z, m, s): &(f64, f64, f64)| {
                -0.5 * LN_2PI - s.ln() - (z - m) * (z - m) / (2.0 * s * s)
            })
            .sum();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn non_positive_sigma_rejected() {
        let mu = Tensor::zeros(&[2]);
        let sigma = Tensor::new(vec![1.0, 0.0], &[2]).unwrap();
        assert!(DiagGaussian::new(mu, sigma).is_err());
    }
}
