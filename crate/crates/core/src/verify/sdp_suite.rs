//! Duration-predictor checks: the variational bound sits below the
//! numerically integrated log-likelihood, the condition input is exactly
//! cut out of the gradient, and toy training actually learns a known
//! duration distribution.

use rand::Rng;

use crate::nn::randomize_parameters;
use crate::rng::{seeded, SeedRng};
use crate::sdp::train::{train, DurationExample, TrainOptions};
use crate::sdp::{SdpConfig, StochasticDurationPredictor};
use crate::tensor::Tensor;

use super::CheckResult;

/// Gauss-Hermite nodes and weights for integrals against exp(-x^2).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let eps = 1e-14;
    let pim4 = 0.751_125_544_464_942_5; // pi^(-1/4)
    let m = n.div_ceil(2);
    let mut x = vec![0.0f64; n];
    let mut w = vec![0.0f64; n];
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => {
                let f = (2 * n + 1) as f64;
                f.sqrt() - 1.85575 * f.powf(-1.0 / 6.0)
            }
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0f64;
        for _ in 0..200 {
            let mut p1 = pim4;
            let mut p2 = 0.0f64;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / j as f64).sqrt() * p2 - (((j - 1) as f64) / j as f64).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= eps {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn logsumexp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn random_model(rng: &mut SeedRng, cfg: SdpConfig, scale: f64) -> StochasticDurationPredictor<f64> {
    let model = StochasticDurationPredictor::new(cfg, rng).unwrap();
    randomize_parameters(&model.parameters(), rng, scale);
    model
}

/// Single-token instances: the Monte-Carlo average of the variational bound
/// must not exceed the quadrature log-likelihood by more than 3 standard
/// errors, across random parameter draws.
pub fn elbo_validity(seed: u64, param_draws: usize, mc_draws: usize) -> CheckResult {
    let cfg = SdpConfig { cond_dim: 2, hidden_dim: 8, ..Default::default() };
    let (gh_nodes, gh_weights) = gauss_hermite(48);
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut rng = seeded(seed);
    let mut worst_margin = f64::NEG_INFINITY;

    for draw in 0..param_draws {
        let model = random_model(&mut rng, cfg, 0.3);
        let cond = Tensor::randn(&mut rng, &[1, 2]);
        let durations = [rng.random_range(2..=4usize)];
        let d = durations[0] as f64;

        // Monte-Carlo side: ELBO draws are -duration_loss
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..mc_draws {
            let elbo = -model.duration_loss(&durations, &cond, &mut rng).unwrap().item();
            sum += elbo;
            sum_sq += elbo * elbo;
        }
        let n = mc_draws as f64;
        let mean = sum / n;
        let se = ((sum_sq / n - mean * mean).max(0.0) / n).sqrt();

        // Quadrature side: trapezoid over u in [0,1], Gauss-Hermite over nu
        let cond_enc = model.encode_condition(&cond).unwrap();
        let grid = 101usize;
        let mut inner = Vec::with_capacity(grid);
        for gi in 0..grid {
            let u = gi as f64 / (grid - 1) as f64;
            let x0 = d - u;
            let mut terms = Vec::with_capacity(gh_nodes.len());
            for (t, wgt) in gh_nodes.iter().zip(&gh_weights) {
                let nu = sqrt2 * t;
                let x0_t = Tensor::new(vec![x0], &[1, 1]).unwrap();
                let nu_t = Tensor::new(vec![nu], &[1, 1]).unwrap();
                let log_p = model
                    .augmented_log_likelihood(&x0_t, &nu_t, &cond_enc)
                    .unwrap()
                    .item();
                terms.push(wgt.ln() + t * t + log_p);
            }
            inner.push(sqrt2 * logsumexp(&terms).exp());
        }
        let mut integral = 0.0;
        for (gi, v) in inner.iter().enumerate() {
            let w = if gi == 0 || gi == grid - 1 { 0.5 } else { 1.0 };
            integral += w * v;
        }
        integral /= (grid - 1) as f64;
        let log_p_quad = integral.ln();

        if !log_p_quad.is_finite() {
            return CheckResult::new(
                "sdp/elbo_validity",
                false,
                format!("draw {draw}: quadrature log-likelihood is not finite"),
            );
        }
        let margin = mean - log_p_quad; // must be <= 3 se
        worst_margin = worst_margin.max(margin - 3.0 * se);
        if margin > 3.0 * se {
            return CheckResult::new(
                "sdp/elbo_validity",
                false,
                format!(
                    "draw {draw}: ELBO mean {mean:.4} exceeds quadrature log p {log_p_quad:.4} by {margin:.4} (> 3 SE = {:.4})",
                    3.0 * se
                ),
            );
        }
    }
    CheckResult::new(
        "sdp/elbo_validity",
        true,
        format!("{param_draws} parameter draws, worst (margin - 3 SE) = {worst_margin:.4} (must be <= 0)"),
    )
}

/// The training loss must not push gradient into the condition input.
pub fn stop_gradient_exact(seed: u64) -> CheckResult {
    let cfg = SdpConfig { cond_dim: 3, hidden_dim: 8, ..Default::default() };
    let mut rng = seeded(seed);
    let model = StochasticDurationPredictor::<f64>::new(cfg, &mut rng).unwrap();
    let cond = Tensor::randn_param(&mut rng, &[5, 3], 1.0);
    let loss = model.duration_loss(&[2, 1, 3, 4, 1], &cond, &mut rng).unwrap();
    loss.backward().unwrap();
    let cond_grad_zero = match cond.grad() {
        None => true,
        Some(g) => g.iter().all(|v| *v == 0.0),
    };
    let params_touched = model
        .parameters()
        .iter()
        .any(|(_, p)| p.grad().is_some_and(|g| g.iter().any(|v| *v != 0.0)));
    CheckResult::new(
        "sdp/stop_gradient",
        cond_grad_zero && params_touched,
        format!("condition gradient exactly zero: {cond_grad_zero}, model parameters receive gradient: {params_touched}"),
    )
}

/// Synthetic dataset: i.i.d. durations uniform on {1..4} with a constant
/// zero condition.
pub fn synthetic_uniform_dataset(
    examples: usize,
    t_len: usize,
    cond_dim: usize,
    seed: u64,
) -> Vec<DurationExample> {
    let mut rng = seeded(seed);
    (0..examples)
        .map(|_| DurationExample {
            durations: (0..t_len).map(|_| rng.random_range(1..=4)).collect(),
            condition: vec![vec![0.0; cond_dim]; t_len],
        })
        .collect()
}

pub struct ToyTrainingReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub sample_mean: f64,
    pub elapsed: std::time::Duration,
}

/// 500 optimizer steps on uniform {1..4} durations with the standard
/// training constants, then 1e4 sampled durations.
pub fn toy_training_run(seed: u64, steps: usize) -> crate::error::Result<ToyTrainingReport> {
    let start = std::time::Instant::now();
    let cfg = SdpConfig { cond_dim: 2, hidden_dim: 32, ..Default::default() };
    let model = StochasticDurationPredictor::<f64>::new(cfg, &mut seeded(seed))?;
    let t_len = 8usize;
    let data = synthetic_uniform_dataset(64, t_len, 2, seed.wrapping_add(1));
    let opts = TrainOptions { steps, batch_size: 8, seed: seed.wrapping_add(2), ..Default::default() };
    let (metrics, _) = train(&model, &data, &opts)?;

    let cond = Tensor::new(vec![0.0; t_len * 2], &[t_len, 2])?;
    let mut rng = seeded(seed.wrapping_add(3));
    let mut total = 0usize;
    let mut count = 0usize;
    let sequences = 10_000usize.div_ceil(t_len);
    for _ in 0..sequences {
        for d in model.sample_durations(&cond, 1.0, &mut rng)? {
            total += d;
            count += 1;
        }
    }
    Ok(ToyTrainingReport {
        initial_loss: metrics.first().map(|(_, l)| *l).unwrap_or(f64::NAN),
        final_loss: metrics.last().map(|(_, l)| *l).unwrap_or(f64::NAN),
        sample_mean: total as f64 / count as f64,
        elapsed: start.elapsed(),
    })
}

pub fn toy_training(seed: u64) -> CheckResult {
    match toy_training_run(seed, 500) {
        Err(e) => CheckResult::new("sdp/toy_training", false, e.to_string()),
        Ok(report) => {
            let decreased = report.final_loss < report.initial_loss;
            let mean_ok = (report.sample_mean - 2.5).abs() <= 0.25;
            CheckResult::new(
                "sdp/toy_training",
                decreased && mean_ok,
                format!(
                    "loss {:.3} -> {:.3} (decreased: {decreased}), sample mean {:.3} vs 2.5 +- 0.25 (ok: {mean_ok}), {:.1?}",
                    report.initial_loss, report.final_loss, report.sample_mean, report.elapsed
                ),
            )
        }
    }
}

pub fn run(seed: u64) -> Vec<CheckResult> {
    vec![
        elbo_validity(seed, 20, 4000),
        stop_gradient_exact(seed.wrapping_add(1)),
        toy_training(seed.wrapping_add(2)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_hermite_integrates_known_moments() {
        let (x, w) = gauss_hermite(48);
        let total: f64 = w.iter().sum();
        let second: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        let sqrt_pi = std::f64::consts::PI.sqrt();
        assert!((total - sqrt_pi).abs() < 1e-12, "sum w = {total}");
        assert!((second - sqrt_pi / 2.0).abs() < 1e-12, "sum w x^2 = {second}");
        // E[nu^2] under N(0,1) via the sqrt(2) substitution
        let e2: f64 = x
            .iter()
            .zip(&w)
            .map(|(t, w)| {
                let nu = std::f64::consts::SQRT_2 * t;
                w * (t * t).exp() * nu * nu * (-0.5 * nu * nu).exp()
                    / (2.0 * std::f64::consts::PI).sqrt()
            })
            .sum::<f64>()
            * std::f64::consts::SQRT_2;
        assert!((e2 - 1.0).abs() < 1e-10, "E[nu^2] = {e2}");
    }

    #[test]
    fn quick_elbo_validity() {
        let r = elbo_validity(99, 2, 800);
        assert!(r.passed, "{r}");
    }

    #[test]
    fn stop_gradient_holds() {
        let r = stop_gradient_exact(3);
        assert!(r.passed, "{r}");
    }
}
