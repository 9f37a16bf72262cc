//! Training losses as differentiable tensor expressions: L1 reconstruction,
//! single-sample KL against a flow-transformed prior (with a closed-form
//! oracle for the identity-flow case), least-squares adversarial pair,
//! feature matching, and the weighted total.

use crate::dist::DiagGaussian;
use crate::error::{Error, Result};
use crate::flows::{FlowDirection, FlowStack};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[derive(Default)]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}


fn reduce<F: Scalar>(t: &Tensor<F>, reduction: Reduction) -> Result<Tensor<F>> {
    match reduction {
        Reduction::Mean => t.mean(),
        Reduction::Sum => t.sum(),
    }
}

/// L1 distance between target and predicted log-mel values.
pub fn recon_loss<F: Scalar>(
    x_mel: &Tensor<F>,
    x_hat_mel: &Tensor<F>,
    reduction: Reduction,
) -> Result<Tensor<F>> {
    if x_mel.shape() != x_hat_mel.shape() {
        return Err(Error::ShapeMismatch {
            op: "recon_loss",
            lhs: x_mel.shape().to_vec(),
            rhs: x_hat_mel.shape().to_vec(),
        });
    }
    reduce(&x_mel.sub(x_hat_mel)?.abs()?, reduction)
}

/// Single-sample KL estimate: log q(z) minus the log-density of z under the
/// flow-transformed prior, log N(f(z); prior) + log |det df/dz|.
pub fn kl_loss<F: Scalar>(
    z: &Tensor<F>,
    posterior: &DiagGaussian<F>,
    prior: &DiagGaussian<F>,
    prior_flow: &FlowStack<F>,
) -> Result<Tensor<F>> {
    let log_q = posterior.log_density(z)?;
    let (f_z, logdet) = prior_flow.apply(z, None, FlowDirection::Forward)?;
    let log_p = prior.log_density(&f_z)?.add(&logdet)?;
    log_q.sub(&log_p)
}

/// Exact KL between diagonal Gaussians, summed over elements. Serves as the
/// oracle for [`kl_loss`] when the prior flow is the identity.
pub fn kl_closed_form<F: Scalar>(
    posterior: &DiagGaussian<F>,
    prior: &DiagGaussian<F>,
) -> Result<Tensor<F>> {
    if posterior.mu.shape() != prior.mu.shape() {
        return Err(Error::ShapeMismatch {
            op: "kl_closed_form",
            lhs: posterior.mu.shape().to_vec(),
            rhs: prior.mu.shape().to_vec(),
        });
    }
    let n = posterior.numel();
    let log_ratio = prior.sigma.log()?.sub(&posterior.sigma.log()?)?;
    let var_q = posterior.sigma.square()?;
    let mean_gap = posterior.mu.sub(&prior.mu)?.square()?;
    let quad = var_q
        .add(&mean_gap)?
        .div(&prior.sigma.square()?.mul_scalar(F::of_f64(2.0))?)?;
    log_ratio
        .add(&quad)?
        .sum()?
        .add_scalar(-F::of_f64(0.5) * F::of_usize(n))
}

/// Least-squares discriminator loss: mean of (D(real) - 1)^2 + D(fake)^2.
pub fn adv_loss_d<F: Scalar>(d_real: &Tensor<F>, d_fake: &Tensor<F>) -> Result<Tensor<F>> {
    if d_real.shape() != d_fake.shape() {
        return Err(Error::ShapeMismatch {
            op: "adv_loss_d",
            lhs: d_real.shape().to_vec(),
            rhs: d_fake.shape().to_vec(),
        });
    }
    let real_term = d_real.add_scalar(-F::one())?.square()?;
    let fake_term = d_fake.square()?;
    real_term.add(&fake_term)?.mean()
}

/// Least-squares generator loss: mean of (D(fake) - 1)^2.
pub fn adv_loss_g<F: Scalar>(d_fake: &Tensor<F>) -> Result<Tensor<F>> {
    d_fake.add_scalar(-F::one())?.square()?.mean()
}

/// Feature matching: sum over layers of the mean absolute difference
/// between paired feature maps.
pub fn fm_loss<F: Scalar>(real_feats: &[Tensor<F>], fake_feats: &[Tensor<F>]) -> Result<Tensor<F>> {
    if real_feats.len() != fake_feats.len() {
        return Err(Error::invalid(format!(
            "fm_loss: {} real layers vs {} fake layers",
            real_feats.len(),
            fake_feats.len()
        )));
    }
    let mut total = Tensor::scalar(F::zero());
    for (r, f) in real_feats.iter().zip(fake_feats) {
        if r.shape() != f.shape() {
            return Err(Error::ShapeMismatch {
                op: "fm_loss",
                lhs: r.shape().to_vec(),
                rhs: f.shape().to_vec(),
            });
        }
        total = total.add(&r.sub(f)?.abs()?.mean()?)?;
    }
    Ok(total)
}

/// Per-term weights for the total loss; defaults are all ones.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights<F: Scalar> {
    pub recon: F,
    pub kl: F,
    pub duration: F,
    pub adv_g: F,
    pub fm: F,
}

impl<F: Scalar> Default for LossWeights<F> {
    fn default() -> Self {
        LossWeights {
            recon: F::one(),
            kl: F::one(),
            duration: F::one(),
            adv_g: F::one(),
            fm: F::one(),
        }
    }
}

/// Weighted sum of the five training terms.
pub fn total_loss<F: Scalar>(
    recon: &Tensor<F>,
    kl: &Tensor<F>,
    duration: &Tensor<F>,
    adv_g: &Tensor<F>,
    fm: &Tensor<F>,
    weights: &LossWeights<F>,
) -> Result<Tensor<F>> {
    recon
        .mul_scalar(weights.recon)?
        .add(&kl.mul_scalar(weights.kl)?)?
        .add(&duration.mul_scalar(weights.duration)?)?
        .add(&adv_g.mul_scalar(weights.adv_g)?)?
        .add(&fm.mul_scalar(weights.fm)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64], shape: &[usize]) -> Tensor<f64> {
        Tensor::new(v.to_vec(), shape).unwrap()
    }

    #[test]
    fn recon_zero_for_identical_and_one_for_unit_offset() {
        let a = t(&[0.2, -1.0, 3.5, 0.0], &[2, 2]);
        assert_eq!(recon_loss(&a, &a, Reduction::Mean).unwrap().item(), 0.0);
        let b = a.add_scalar(1.0).unwrap();
        assert_eq!(recon_loss(&a, &b, Reduction::Mean).unwrap().item(), 1.0);
        assert_eq!(recon_loss(&a, &b, Reduction::Sum).unwrap().item(), 4.0);
    }

    #[test]
    fn recon_matches_direct_summation() {
        let a = t(&[0.3, -0.8, 2.0, 1.1, -0.4, 0.9], &[3, 2]);
        let b = t(&[-0.5, 0.6, 1.5, 2.0, 0.0, -0.9], &[3, 2]);
        let direct: f64 = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / 6.0;
        let got = recon_loss(&a, &b, Reduction::Mean).unwrap().item();
        assert!((got - direct).abs() < 1e-12);
    }

    #[test]
    fn recon_shape_mismatch_rejected() {
        let a = t(&[0.0; 4], &[2, 2]);
        let b = t(&[0.0; 6], &[3, 2]);
        assert!(recon_loss(&a, &b, Reduction::Mean).is_err());
    }

    #[test]
    fn kl_closed_form_known_values() {
        // identical distributions
        let q = DiagGaussian::new(t(&[0.4], &[1]), t(&[1.3], &[1])).unwrap();
        assert!(kl_closed_form(&q, &q).unwrap().item().abs() < 1e-15);

        // q = N(1,1), p = N(0,1): 0.5
        let q = DiagGaussian::new(t(&[1.0], &[1]), t(&[1.0], &[1])).unwrap();
        let p = DiagGaussian::new(t(&[0.0], &[1]), t(&[1.0], &[1])).unwrap();
        assert!((kl_closed_form(&q, &p).unwrap().item() - 0.5).abs() < 1e-12);

        // q = N(0,4), p = N(0,1): -ln 2 + 2 - 0.5
        let q = DiagGaussian::new(t(&[0.0], &[1]), t(&[2.0], &[1])).unwrap();
        let want = -(2.0f64.ln()) + 2.0 - 0.5;
        assert!((kl_closed_form(&q, &p).unwrap().item() - want).abs() < 1e-12);
    }

    #[test]
    fn kl_single_sample_averages_match_known_expectations() {
        use crate::rng::seeded;
        let identity = FlowStack::identity();
        let mut rng = seeded(41);

        // identical posterior and prior: expectation 0
        let shape = [2, 2];
        let mu = Tensor::randn(&mut rng, &shape);
        let sigma = Tensor::new(vec![1.0, 0.8, 1.3, 0.6], &shape).unwrap();
        let q = DiagGaussian::new(mu.clone(), sigma.clone()).unwrap();
        let draws = 100_000;
        let run_mc = |q: &DiagGaussian<f64>, p: &DiagGaussian<f64>, rng: &mut crate::rng::SeedRng| {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..draws {
                let z = q.sample(rng).unwrap();
                let est = kl_loss(&z, q, p, &identity).unwrap().item();
                sum += est;
                sum_sq += est * est;
            }
            let mean = sum / draws as f64;
            let se = ((sum_sq / draws as f64 - mean * mean).max(0.0) / draws as f64).sqrt();
            (mean, se)
        };
        let (mean, se) = run_mc(&q, &q, &mut rng);
        assert!(mean.abs() <= 3.0 * se.max(1e-12), "symmetric case: {mean} +- {se}");

        // per-element N(1,1) vs N(0,1): 0.5 per element
        let q = DiagGaussian::new(Tensor::full(&shape, 1.0), Tensor::full(&shape, 1.0)).unwrap();
        let p = DiagGaussian::new(Tensor::zeros(&shape), Tensor::full(&shape, 1.0)).unwrap();
        let (mean, se) = run_mc(&q, &p, &mut rng);
        let want = 0.5 * 4.0;
        assert!((mean - want).abs() <= 3.0 * se, "shifted case: {mean} +- {se} vs {want}");
    }

    #[test]
    fn adv_losses_at_stated_points() {
        let ones = t(&[1.0; 6], &[6]);
        let zeros = t(&[0.0; 6], &[6]);
        let halves = t(&[0.5; 6], &[6]);
        assert_eq!(adv_loss_d(&ones, &zeros).unwrap().item(), 0.0);
        assert_eq!(adv_loss_d(&zeros, &ones).unwrap().item(), 2.0);
        assert_eq!(adv_loss_d(&halves, &halves).unwrap().item(), 0.5);
        assert_eq!(adv_loss_g(&ones).unwrap().item(), 0.0);
        assert_eq!(adv_loss_g(&zeros).unwrap().item(), 1.0);
        assert_eq!(adv_loss_g(&halves).unwrap().item(), 0.25);
    }

    #[test]
    fn fm_loss_layerwise_means_add_up() {
        let r1 = t(&[0.0; 4], &[2, 2]);
        let f1 = t(&[1.0; 4], &[2, 2]);
        let r2 = t(&[0.0; 2], &[2]);
        let f2 = t(&[3.0; 2], &[2]);
        let got = fm_loss(&[r1.clone(), r2.clone()], &[f1.clone(), f2.clone()])
            .unwrap()
            .item();
        assert_eq!(got, 4.0);
        // symmetric under swapping real/fake
        let swapped = fm_loss(&[f1, f2], &[r1, r2]).unwrap().item();
        assert_eq!(got, swapped);
        // identical lists
        let same = t(&[0.7; 3], &[3]);
        assert_eq!(fm_loss(std::slice::from_ref(&same), std::slice::from_ref(&same)).unwrap().item(), 0.0);
    }

    #[test]
    fn total_loss_weighted_sum() {
        let c: Vec<Tensor<f64>> = (1..=5).map(|i| Tensor::scalar(i as f64)).collect();
        let unit = total_loss(&c[0], &c[1], &c[2], &c[3], &c[4], &LossWeights::default())
            .unwrap()
            .item();
        assert_eq!(unit, 15.0);

        let ones: Vec<Tensor<f64>> = (0..5).map(|_| Tensor::scalar(1.0)).collect();
        let weights = LossWeights { recon: 45.0, kl: 1.0, duration: 1.0, adv_g: 1.0, fm: 2.0 };
        let weighted = total_loss(&ones[0], &ones[1], &ones[2], &ones[3], &ones[4], &weights)
            .unwrap()
            .item();
        assert_eq!(weighted, 50.0);

        let zeros: Vec<Tensor<f64>> = (0..5).map(|_| Tensor::scalar(0.0)).collect();
        let z = total_loss(&zeros[0], &zeros[1], &zeros[2], &zeros[3], &zeros[4], &LossWeights::default())
            .unwrap()
            .item();
        assert_eq!(z, 0.0);
    }
}
