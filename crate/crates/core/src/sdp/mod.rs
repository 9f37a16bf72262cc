//! Flow-based stochastic duration predictor.
//!
//! Integer token durations are lifted to continuous values by subtracting a
//! learned dequantization offset u in [0, 1) and paired with an auxiliary
//! channel nu so the spline flows act on a [T, 2] sequence. A posterior flow
//! turns Gaussian noise into (u, nu) given the durations and condition; the
//! main flow scores the augmented pair (d - u, nu) under a standard-normal
//! base. The training loss is the negative variational lower bound built
//! from those two pieces, with the condition input cut out of the gradient
//! graph so duration training cannot push on upstream encoders.

pub mod train;

use rand::Rng;

use crate::dist::standard_normal_log_density;
use crate::error::{Error, Result};
use crate::flows::coupling::SplineCoupling;
use crate::nn::CondEncoder;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SdpConfig {
    /// Width of the incoming condition features.
    pub cond_dim: usize,
    pub hidden_dim: usize,
    pub n_coupling_layers: usize,
    pub spline_bins: usize,
    pub kernel_size: usize,
    pub tail_bound: f64,
    pub min_bin_size: f64,
    /// Noise standard deviation used at inference.
    pub noise_scale: f64,
}

impl Default for SdpConfig {
    fn default() -> Self {
        SdpConfig {
            cond_dim: 4,
            hidden_dim: 32,
            n_coupling_layers: 4,
            spline_bins: 10,
            kernel_size: 3,
            tail_bound: 5.0,
            min_bin_size: 1e-3,
            noise_scale: 0.8,
        }
    }
}

impl SdpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_coupling_layers == 0 {
            return Err(Error::invalid("sdp: need at least one coupling layer"));
        }
        if self.cond_dim == 0 || self.hidden_dim == 0 || self.spline_bins == 0 {
            return Err(Error::invalid("sdp: dimensions must be positive"));
        }
        Ok(())
    }
}

/// One draw from the approximate posterior q(u, nu | d, cond).
pub struct DequantSample<F: Scalar> {
    /// Dequantization offsets in [0, 1), shape `[T, 1]`.
    pub u: Tensor<F>,
    /// Auxiliary augmentation channel, shape `[T, 1]`.
    pub nu: Tensor<F>,
    /// Joint log-density of (u, nu) under the posterior.
    pub log_q: Tensor<F>,
}

pub struct StochasticDurationPredictor<F: Scalar> {
    pub cfg: SdpConfig,
    cond_encoder: CondEncoder<F>,
    dur_encoder: CondEncoder<F>,
    posterior_flow: Vec<SplineCoupling<F>>,
    main_flow: Vec<SplineCoupling<F>>,
}

impl<F: Scalar> StochasticDurationPredictor<F> {
    pub fn new<R: Rng>(cfg: SdpConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let bound = F::of_f64(cfg.tail_bound);
        let min_bin = F::of_f64(cfg.min_bin_size);
        let coupling_stack = |rng: &mut R| -> Result<Vec<SplineCoupling<F>>> {
            (0..cfg.n_coupling_layers)
                .map(|i| {
                    SplineCoupling::new(
                        rng,
                        2,
                        cfg.hidden_dim,
                        cfg.kernel_size,
                        cfg.spline_bins,
                        bound,
                        min_bin,
                        i % 2 == 1,
                    )
                })
                .collect()
        };
        Ok(StochasticDurationPredictor {
            cond_encoder: CondEncoder::new(rng, cfg.cond_dim, cfg.hidden_dim, cfg.kernel_size),
            dur_encoder: CondEncoder::new(rng, 1, cfg.hidden_dim, cfg.kernel_size),
            posterior_flow: coupling_stack(rng)?,
            main_flow: coupling_stack(rng)?,
            cfg,
        })
    }

    pub fn parameters(&self) -> Vec<(String, Tensor<F>)> {
        let mut out = self.cond_encoder.parameters("cond_enc");
        out.extend(self.dur_encoder.parameters("dur_enc"));
        for (i, l) in self.posterior_flow.iter().enumerate() {
            out.extend(l.parameters(&format!("posterior.{i}")));
        }
        for (i, l) in self.main_flow.iter().enumerate() {
            out.extend(l.parameters(&format!("main.{i}")));
        }
        out
    }

    fn check_cond(&self, cond: &Tensor<F>) -> Result<usize> {
        match *cond.shape() {
            [t_len, dim] if dim == self.cfg.cond_dim && t_len > 0 => Ok(t_len),
            _ => Err(Error::invalid(format!(
                "sdp: condition must be [T, {}], got {:?}",
                self.cfg.cond_dim,
                cond.shape()
            ))),
        }
    }

    /// Hidden-space encoding of the external condition features.
    pub fn encode_condition(&self, cond: &Tensor<F>) -> Result<Tensor<F>> {
        self.check_cond(cond)?;
        self.cond_encoder.forward(cond)
    }

    fn durations_tensor(&self, durations: &[usize]) -> Result<Tensor<F>> {
        if durations.is_empty() {
            return Err(Error::invalid("sdp: empty duration sequence"));
        }
        if durations.contains(&0) {
            return Err(Error::invalid("sdp: durations must be >= 1"));
        }
        Tensor::new(
            durations.iter().map(|d| F::of_usize(*d)).collect(),
            &[durations.len(), 1],
        )
    }

    /// Draw (u, nu) through the posterior flow and report their joint
    /// log-density: base density minus the flow and sigmoid log-determinants.
    pub fn posterior_sample<R: Rng>(
        &self,
        durations: &[usize],
        cond_enc: &Tensor<F>,
        rng: &mut R,
    ) -> Result<DequantSample<F>> {
        let t_len = durations.len();
        let d_tensor = self.durations_tensor(durations)?;
        let g = cond_enc.add(&self.dur_encoder.forward(&d_tensor)?)?;

        let noise = Tensor::randn(rng, &[t_len, 2]);
        let mut z = noise.clone();
        let mut flow_logdet = Tensor::scalar(F::zero());
        for layer in &self.posterior_flow {
            let (next, ld) = layer.forward(&z, Some(&g))?;
            z = next;
            flow_logdet = flow_logdet.add(&ld)?;
        }

        let z_u = z.slice_cols(0, 1)?;
        let nu = z.slice_cols(1, 2)?;
        let u = z_u.sigmoid()?;
        // log sigmoid'(z) = -softplus(z) - softplus(-z), summed over T
        let sigmoid_logdet = z_u
            .softplus()?
            .add(&z_u.neg()?.softplus()?)?
            .sum()?
            .neg()?;

        let log_q = standard_normal_log_density(&noise)?
            .sub(&flow_logdet)?
            .sub(&sigmoid_logdet)?;
        Ok(DequantSample { u, nu, log_q })
    }

    /// Log-likelihood of the augmented pair (d - u, nu): the main flow maps
    /// it to base space and change-of-variables adds the log-determinant.
    pub fn augmented_log_likelihood(
        &self,
        d_minus_u: &Tensor<F>,
        nu: &Tensor<F>,
        cond_enc: &Tensor<F>,
    ) -> Result<Tensor<F>> {
        if d_minus_u.data().iter().any(|v| *v <= F::zero()) {
            return Err(Error::invalid(
                "sdp: dequantized durations must be strictly positive",
            ));
        }
        let x = Tensor::concat_cols(&[d_minus_u, nu])?;
        let mut h = x;
        let mut logdet = Tensor::scalar(F::zero());
        for layer in &self.main_flow {
            let (next, ld) = layer.forward(&h, Some(cond_enc))?;
            h = next;
            logdet = logdet.add(&ld)?;
        }
        standard_normal_log_density(&h)?.add(&logdet)
    }

    /// Negative single-sample variational bound on log p(d | cond). The
    /// condition is detached first, so its gradient is exactly zero.
    pub fn duration_loss<R: Rng>(
        &self,
        durations: &[usize],
        cond: &Tensor<F>,
        rng: &mut R,
    ) -> Result<Tensor<F>> {
        self.check_cond(cond)?;
        if durations.len() != cond.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "duration_loss",
                lhs: vec![durations.len()],
                rhs: cond.shape().to_vec(),
            });
        }
        let cond_enc = self.encode_condition(&cond.stop_gradient())?;
        let sample = self.posterior_sample(durations, &cond_enc, rng)?;
        let d_tensor = self.durations_tensor(durations)?;
        let d_minus_u = d_tensor.sub(&sample.u)?;
        let ll = self.augmented_log_likelihood(&d_minus_u, &sample.nu, &cond_enc)?;
        ll.sub(&sample.log_q)?.neg()
    }

    /// Draw integer durations: scaled noise through the inverse of the main
    /// flow, duration channel converted by ceiling and clamped to >= 1.
    pub fn sample_durations<R: Rng>(
        &self,
        cond: &Tensor<F>,
        noise_scale: f64,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        if noise_scale < 0.0 {
            return Err(Error::invalid("sdp: noise scale must be >= 0"));
        }
        let t_len = self.check_cond(cond)?;
        let cond_enc = self.encode_condition(cond)?;
        let noise = Tensor::randn(rng, &[t_len, 2]).mul_scalar(F::of_f64(noise_scale))?;
        let mut h = noise;
        for layer in self.main_flow.iter().rev() {
            let (next, _) = layer.inverse(&h, Some(&cond_enc))?;
            h = next;
        }
        let d_cont = h.slice_cols(0, 1)?;
        Ok(d_cont
            .values()
            .into_iter()
            .map(|v| {
                let c = v.ceil().as_f64();
                if c < 1.0 {
                    1
                } else {
                    c as usize
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn toy_model(seed: u64) -> StochasticDurationPredictor<f64> {
        let cfg = SdpConfig { cond_dim: 3, hidden_dim: 8, ..Default::default() };
        StochasticDurationPredictor::new(cfg, &mut seeded(seed)).unwrap()
    }

    #[test]
    fn posterior_sample_u_in_unit_interval_and_log_q_finite() {
        let model = toy_model(5);
        let mut rng = seeded(17);
        let cond = Tensor::randn(&mut rng, &[4, 3]);
        let cond_enc = model.encode_condition(&cond).unwrap();
        for _ in 0..10_000 {
            let s = model.posterior_sample(&[1, 3, 2, 4], &cond_enc, &mut rng).unwrap();
            assert!(s.u.values().iter().all(|u| *u > 0.0 && *u < 1.0));
            assert!(s.log_q.item().is_finite());
        }
    }

    const LN_2PI: f64 = 1.837_877_066_409_345_5;

    fn log_normal(x: f64) -> f64 {
        -0.5 * LN_2PI - 0.5 * x * x
    }

    /// A freshly built model has zero-initialized spline projections, so
    /// both flows start as the identity map.
    #[test]
    fn posterior_log_q_matches_direct_formula_with_identity_flow() {
        let model = toy_model(11);
        let mut rng = seeded(19);
        let cond = Tensor::randn(&mut rng, &[3, 3]);
        let cond_enc = model.encode_condition(&cond).unwrap();
        for _ in 0..50 {
            let s = model.posterior_sample(&[2, 1, 3], &cond_enc, &mut rng).unwrap();
            // identity flow: u = sigmoid(eps_u), nu = eps_nu; recover eps_u
            // and apply the base-density-minus-sigmoid-logdet formula
            let mut expected = 0.0;
            for u in s.u.values() {
                let eps = (u / (1.0 - u)).ln();
                expected += log_normal(eps) - (u * (1.0 - u)).ln();
            }
            for nu in s.nu.values() {
                expected += log_normal(nu);
            }
            assert!(
                (s.log_q.item() - expected).abs() < 1e-10,
                "{} vs {}",
                s.log_q.item(),
                expected
            );
        }
    }

    #[test]
    fn augmented_log_likelihood_identity_flow_is_base_density() {
        let model = toy_model(12);
        let mut rng = seeded(21);
        let d_minus_u = Tensor::new(vec![1.3, 0.7, 2.9, 0.2], &[4, 1]).unwrap();
        let nu = Tensor::randn(&mut rng, &[4, 1]);
        let cond_enc = model.encode_condition(&Tensor::randn(&mut rng, &[4, 3])).unwrap();
        let got = model.augmented_log_likelihood(&d_minus_u, &nu, &cond_enc).unwrap().item();
        let want: f64 = d_minus_u
            .values()
            .iter()
            .chain(nu.values().iter())
            .map(|v| log_normal(*v))
            .sum();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn condition_is_ignored_when_cond_encoder_weights_are_zero() {
        let model = toy_model(13);
        for (name, p) in model.parameters() {
            if name.starts_with("cond_enc") {
                p.set_data(vec![0.0; p.numel()]).unwrap();
            }
        }
        let mut rng = seeded(23);
        let enc_a = model.encode_condition(&Tensor::randn(&mut rng, &[3, 3])).unwrap();
        let enc_b = model.encode_condition(&Tensor::randn(&mut rng, &[3, 3])).unwrap();
        assert!(enc_a.values().iter().all(|v| *v == 0.0));
        let d_minus_u = Tensor::new(vec![0.8, 1.6, 2.4], &[3, 1]).unwrap();
        let nu = Tensor::new(vec![0.1, -0.5, 0.9], &[3, 1]).unwrap();
        let a = model.augmented_log_likelihood(&d_minus_u, &nu, &enc_a).unwrap().item();
        let b = model.augmented_log_likelihood(&d_minus_u, &nu, &enc_b).unwrap().item();
        assert_eq!(a, b);
    }

    /// Single token, single coupling layer: the reported likelihood matches
    /// base density times the finite-difference slope of the transform.
    #[test]
    fn one_layer_flow_matches_fd_change_of_variables() {
        let cfg = SdpConfig { cond_dim: 3, hidden_dim: 8, n_coupling_layers: 1, ..Default::default() };
        let model = StochasticDurationPredictor::<f64>::new(cfg, &mut seeded(14)).unwrap();
        let mut rng = seeded(25);
        for (name, p) in model.parameters() {
            if name.starts_with("main.") {
                let vals: Vec<f64> =
                    crate::rng::normal_vec::<f64, _>(&mut rng, p.numel())
                        .into_iter()
                        .map(|v| v * 0.4)
                        .collect();
                p.set_data(vals).unwrap();
            }
        }
        let cond_enc = model.encode_condition(&Tensor::randn(&mut rng, &[1, 3])).unwrap();
        let (x0, nu) = (1.7, 0.4);
        let eval = |nu: f64| -> Vec<f64> {
            let x = Tensor::new(vec![x0, nu], &[1, 2]).unwrap();
            model.main_flow[0].forward(&x, Some(&cond_enc)).unwrap().0.values()
        };
        let y = eval(nu);
        let h = 1e-6;
        let slope = (eval(nu + h)[1] - eval(nu - h)[1]) / (2.0 * h);
        let want = log_normal(y[0]) + log_normal(y[1]) + slope.ln();

        let got = model
            .augmented_log_likelihood(
                &Tensor::new(vec![x0], &[1, 1]).unwrap(),
                &Tensor::new(vec![nu], &[1, 1]).unwrap(),
                &cond_enc,
            )
            .unwrap()
            .item();
        assert!((got - want).abs() < 1e-5, "{got} vs {want}");
    }

    /// With both flows frozen at the identity the nu terms cancel, so the
    /// expected loss reduces to a 1-d integral solvable by Gauss-Hermite.
    #[test]
    fn expected_duration_loss_matches_quadrature_at_identity() {
        let model = toy_model(15);
        let mut rng = seeded(27);
        let cond = Tensor::randn(&mut rng, &[1, 3]);
        let durations = [2usize];

        let draws = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..draws {
            let l = model.duration_loss(&durations, &cond, &mut rng).unwrap().item();
            sum += l;
            sum_sq += l * l;
        }
        let n = draws as f64;
        let mean = sum / n;
        let se = ((sum_sq / n - mean * mean).max(0.0) / n).sqrt();

        // E[L] = int N(e) [log N(e) - ln sigmoid'(e) - log N(d - sigmoid(e))] de
        let (nodes, weights) = crate::verify::sdp_suite::gauss_hermite(96);
        let d = durations[0] as f64;
        let quad: f64 = nodes
            .iter()
            .zip(&weights)
            .map(|(t, w)| {
                let e = std::f64::consts::SQRT_2 * t;
                let u = 1.0 / (1.0 + (-e).exp());
                let integrand = log_normal(e) - (u * (1.0 - u)).ln() - log_normal(d - u);
                w * integrand
            })
            .sum::<f64>()
            / std::f64::consts::PI.sqrt();

        assert!(
            (mean - quad).abs() <= 3.0 * se,
            "MC {mean:.5} +- {se:.5} vs quadrature {quad:.5}"
        );
    }

    #[test]
    fn duration_loss_finite_and_condition_gradient_zero() {
        let model = toy_model(6);
        let mut rng = seeded(23);
        let cond = Tensor::randn_param(&mut rng, &[5, 3], 1.0);
        let loss = model.duration_loss(&[2, 1, 4, 3, 2], &cond, &mut rng).unwrap();
        assert!(loss.item().is_finite());
        loss.backward().unwrap();
        // stop-gradient contract: the condition leaf never receives anything
        assert!(cond.grad().is_none());
        // but model parameters do
        let params = model.parameters();
        let touched = params.iter().filter(|(_, p)| p.grad().is_some()).count();
        assert!(touched > 0);
    }

    #[test]
    fn zero_noise_sampling_is_deterministic() {
        let model = toy_model(7);
        let mut rng = seeded(31);
        let cond = Tensor::randn(&mut rng, &[6, 3]);
        let a = model.sample_durations(&cond, 0.0, &mut seeded(1)).unwrap();
        let b = model.sample_durations(&cond, 0.0, &mut seeded(999)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|d| *d >= 1));
    }

    #[test]
    fn sampled_durations_are_at_least_one() {
        let model = toy_model(8);
        let mut rng = seeded(41);
        let cond = Tensor::randn(&mut rng, &[3, 3]);
        for _ in 0..50 {
            let d = model.sample_durations(&cond, 2.0, &mut rng).unwrap();
            assert!(d.iter().all(|v| *v >= 1));
        }
    }

    #[test]
    fn nonpositive_dequantized_duration_rejected() {
        let model = toy_model(9);
        let bad = Tensor::new(vec![0.5, -0.1], &[2, 1]).unwrap();
        let nu = Tensor::zeros(&[2, 1]);
        let cond_enc = Tensor::zeros(&[2, 8]);
        assert!(model.augmented_log_likelihood(&bad, &nu, &cond_enc).is_err());
    }
}
