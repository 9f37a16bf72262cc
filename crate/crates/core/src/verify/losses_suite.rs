//! Loss checks: finite-difference differentiability, Monte-Carlo agreement
//! of the single-sample KL with its closed form, quadrature agreement under
//! a volume-preserving flow, and exact least-squares GAN optima.

use rand::Rng;

use crate::dist::DiagGaussian;
use crate::error::Result;
use crate::flows::{AffineCoupling, FlowLayer, FlowStack};
use crate::losses::{
    adv_loss_d, adv_loss_g, fm_loss, kl_closed_form, kl_loss, recon_loss, total_loss, LossWeights,
    Reduction,
};
use crate::nn::randomize_parameters;
use crate::rng::{seeded, SeedRng};
use crate::tensor::Tensor;

use super::grad::{FD_STEP, REL_TOL};
use super::CheckResult;

/// Central-difference check of a scalar-valued closure against reverse-mode
/// gradients of the listed leaves.
fn fd_check(inputs: &[Tensor<f64>], eval: &dyn Fn() -> Result<Tensor<f64>>) -> Result<f64> {
    let loss = eval()?;
    loss.backward()?;
    let grads: Vec<Option<Vec<f64>>> = inputs.iter().map(|t| t.grad()).collect();
    for t in inputs {
        t.zero_grad();
    }
    let mut worst = 0.0f64;
    for (input, ad) in inputs.iter().zip(&grads) {
        let Some(ad) = ad else { continue };
        let base = input.values();
        for j in 0..base.len() {
            let mut plus = base.clone();
            plus[j] += FD_STEP;
            input.set_data(plus)?;
            let f_plus = eval()?.item();
            let mut minus = base.clone();
            minus[j] -= FD_STEP;
            input.set_data(minus)?;
            let f_minus = eval()?.item();
            input.set_data(base.clone())?;
            let fd = (f_plus - f_minus) / (2.0 * FD_STEP);
            let denom = fd.abs().max(ad[j].abs()).max(1e-6);
            worst = worst.max((fd - ad[j]).abs() / denom);
        }
    }
    Ok(worst)
}

fn gparam(rng: &mut SeedRng, shape: &[usize]) -> Tensor<f64> {
    Tensor::randn_param(rng, shape, 1.0)
}

fn positive_param(rng: &mut SeedRng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.8)).collect();
    Tensor::param(data, shape).unwrap()
}

type LossEval = Box<dyn Fn() -> Result<Tensor<f64>>>;
type LossCase = dyn Fn(&mut SeedRng) -> (Vec<Tensor<f64>>, LossEval);

/// Finite-difference gradient checks over every loss, including the KL with
/// a live volume-preserving flow whose own parameters are also perturbed.
pub fn loss_gradients(seed: u64, trials: usize) -> Vec<CheckResult> {
    let mut results = Vec::new();
    let mut run_case = |name: &str, seed: u64, build: &LossCase| {
        let mut rng = seeded(seed);
        let mut worst = 0.0f64;
        let mut failure = None;
        for trial in 0..trials {
            let (inputs, eval) = build(&mut rng);
            match fd_check(&inputs, eval.as_ref()) {
                Ok(err) => worst = worst.max(err),
                Err(e) => {
                    failure = Some(format!("trial {trial}: {e}"));
                    break;
                }
            }
        }
        results.push(match failure {
            Some(msg) => CheckResult::new(format!("losses/grad_{name}"), false, msg),
            None => CheckResult::new(
                format!("losses/grad_{name}"),
                worst < REL_TOL,
                format!("max rel err {worst:.3e} over {trials} trials (tol {REL_TOL:.0e})"),
            ),
        });
    };

    run_case("recon", seed, &|rng| {
        let a = gparam(rng, &[3, 4]);
        let b = gparam(rng, &[3, 4]);
        let (ac, bc) = (a.clone(), b.clone());
        (vec![a, b], Box::new(move || recon_loss(&ac, &bc, Reduction::Mean)))
    });

    run_case("kl_identity_flow", seed.wrapping_add(1), &|rng| {
        let z = gparam(rng, &[2, 3]);
        let mu_q = gparam(rng, &[2, 3]);
        let sigma_q = positive_param(rng, &[2, 3]);
        let mu_p = gparam(rng, &[2, 3]);
        let sigma_p = positive_param(rng, &[2, 3]);
        let captured: Vec<Tensor<f64>> =
            vec![z.clone(), mu_q.clone(), sigma_q.clone(), mu_p.clone(), sigma_p.clone()];
        let inputs = captured.clone();
        (
            inputs,
            Box::new(move || {
                let posterior = DiagGaussian::new(captured[1].clone(), captured[2].clone())?;
                let prior = DiagGaussian::new(captured[3].clone(), captured[4].clone())?;
                kl_loss(&captured[0], &posterior, &prior, &FlowStack::identity())
            }),
        )
    });

    run_case("kl_affine_flow", seed.wrapping_add(2), &|rng| {
        let z = gparam(rng, &[2, 2]);
        let mu_q = gparam(rng, &[2, 2]);
        let sigma_q = positive_param(rng, &[2, 2]);
        let mu_p = gparam(rng, &[2, 2]);
        let sigma_p = positive_param(rng, &[2, 2]);
        let coupling = AffineCoupling::new(rng, 2, 4, 2, 3, false).unwrap();
        randomize_parameters(&coupling.parameters("c"), rng, 0.4);
        let mut inputs =
            vec![z.clone(), mu_q.clone(), sigma_q.clone(), mu_p.clone(), sigma_p.clone()];
        inputs.extend(coupling.parameters("c").into_iter().map(|(_, p)| p));
        let flow = FlowStack { layers: vec![FlowLayer::Affine(coupling)] };
        let captured: Vec<Tensor<f64>> = inputs[..5].to_vec();
        (
            inputs,
            Box::new(move || {
                let posterior = DiagGaussian::new(captured[1].clone(), captured[2].clone())?;
                let prior = DiagGaussian::new(captured[3].clone(), captured[4].clone())?;
                kl_loss(&captured[0], &posterior, &prior, &flow)
            }),
        )
    });

    run_case("kl_closed_form", seed.wrapping_add(3), &|rng| {
        let mu_q = gparam(rng, &[2, 3]);
        let sigma_q = positive_param(rng, &[2, 3]);
        let mu_p = gparam(rng, &[2, 3]);
        let sigma_p = positive_param(rng, &[2, 3]);
        let captured: Vec<Tensor<f64>> =
            vec![mu_q.clone(), sigma_q.clone(), mu_p.clone(), sigma_p.clone()];
        let inputs = captured.clone();
        (
            inputs,
            Box::new(move || {
                let posterior = DiagGaussian::new(captured[0].clone(), captured[1].clone())?;
                let prior = DiagGaussian::new(captured[2].clone(), captured[3].clone())?;
                kl_closed_form(&posterior, &prior)
            }),
        )
    });

    run_case("adv_d", seed.wrapping_add(4), &|rng| {
        let r = gparam(rng, &[3, 3]);
        let f = gparam(rng, &[3, 3]);
        let (rc, fc) = (r.clone(), f.clone());
        (vec![r, f], Box::new(move || adv_loss_d(&rc, &fc)))
    });

    run_case("adv_g", seed.wrapping_add(5), &|rng| {
        let f = gparam(rng, &[3, 3]);
        let fc = f.clone();
        (vec![f], Box::new(move || adv_loss_g(&fc)))
    });

    run_case("fm", seed.wrapping_add(6), &|rng| {
        let r1 = gparam(rng, &[2, 3]);
        let f1 = gparam(rng, &[2, 3]);
        let r2 = gparam(rng, &[4]);
        let f2 = gparam(rng, &[4]);
        let captured = vec![r1.clone(), f1.clone(), r2.clone(), f2.clone()];
        (
            captured.clone(),
            Box::new(move || {
                fm_loss(
                    &[captured[0].clone(), captured[2].clone()],
                    &[captured[1].clone(), captured[3].clone()],
                )
            }),
        )
    });

    run_case("total", seed.wrapping_add(7), &|rng| {
        let parts: Vec<Tensor<f64>> = (0..5).map(|_| gparam(rng, &[1])).collect();
        let captured = parts.clone();
        let weights = LossWeights { recon: 45.0, kl: 1.0, duration: 1.0, adv_g: 1.0, fm: 2.0 };
        (
            parts,
            Box::new(move || {
                total_loss(&captured[0], &captured[1], &captured[2], &captured[3], &captured[4], &weights)
            }),
        )
    });

    results
}

/// Average of 1e5 single-sample KL estimates vs the closed form, within
/// three standard errors, for several random diagonal-Gaussian pairs.
pub fn kl_mc_vs_closed_form(seed: u64, pairs: usize, draws: usize) -> CheckResult {
    let mut rng = seeded(seed);
    let mut worst_sigma_distance = 0.0f64;
    for pair in 0..pairs {
        let shape = [2, 3];
        let mu_q = Tensor::randn(&mut rng, &shape);
        let sigma_q = positive_const(&mut rng, &shape);
        let mu_p = Tensor::randn(&mut rng, &shape);
        let sigma_p = positive_const(&mut rng, &shape);
        let posterior = DiagGaussian::new(mu_q, sigma_q).unwrap();
        let prior = DiagGaussian::new(mu_p, sigma_p).unwrap();
        let closed = kl_closed_form(&posterior, &prior).unwrap().item();

        let identity = FlowStack::identity();
        let mut sum = 0.0f64;
        let mut sum_sq = 0.0f64;
        for _ in 0..draws {
            let z = posterior.sample(&mut rng).unwrap();
            let est = kl_loss(&z, &posterior, &prior, &identity).unwrap().item();
            sum += est;
            sum_sq += est * est;
        }
        let n = draws as f64;
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean).max(0.0);
        let se = (var / n).sqrt();
        let distance = (mean - closed).abs() / se.max(1e-12);
        worst_sigma_distance = worst_sigma_distance.max(distance);
        if distance > 3.0 {
            return CheckResult::new(
                "losses/kl_mc_vs_closed_form",
                false,
                format!("pair {pair}: MC {mean:.5} vs closed {closed:.5} is {distance:.1} SE away"),
            );
        }
    }
    CheckResult::new(
        "losses/kl_mc_vs_closed_form",
        true,
        format!("{pairs} pairs x {draws} draws, worst gap {worst_sigma_distance:.2} SE (limit 3)"),
    )
}

fn positive_const(rng: &mut SeedRng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(0.6..1.6)).collect();
    Tensor::new(data, shape).unwrap()
}

/// Monte-Carlo KL with a random volume-preserving flow vs 2-d trapezoid
/// quadrature on single-position, two-channel instances.
pub fn kl_mc_vs_quadrature(seed: u64, draws: usize) -> CheckResult {
    let mut rng = seeded(seed);
    let mu_q = Tensor::randn(&mut rng, &[1, 2]);
    let sigma_q = positive_const(&mut rng, &[1, 2]);
    let mu_p = Tensor::randn(&mut rng, &[1, 2]);
    let sigma_p = positive_const(&mut rng, &[1, 2]);
    let posterior = DiagGaussian::new(mu_q.clone(), sigma_q.clone()).unwrap();
    let prior = DiagGaussian::new(mu_p.clone(), sigma_p.clone()).unwrap();

    let coupling = AffineCoupling::new(&mut rng, 2, 4, 2, 1, false).unwrap();
    randomize_parameters(&coupling.parameters("c"), &mut rng, 0.3);
    let coupling2 = AffineCoupling::new(&mut rng, 2, 4, 2, 1, true).unwrap();
    randomize_parameters(&coupling2.parameters("c"), &mut rng, 0.3);
    let flow = FlowStack {
        layers: vec![FlowLayer::Affine(coupling), FlowLayer::Affine(coupling2)],
    };

    // Monte-Carlo average of the single-sample estimator
    let mut sum = 0.0;
    for _ in 0..draws {
        let z = posterior.sample(&mut rng).unwrap();
        sum += kl_loss(&z, &posterior, &prior, &flow).unwrap().item();
    }
    let mc = sum / draws as f64;

    // trapezoid quadrature of q(z) * (log q(z) - log p_flow(z)) over a box
    // spanning 8 posterior standard deviations
    let muq = mu_q.values();
    let sgq = sigma_q.values();
    let grid = 201usize;
    let lo = [muq[0] - 8.0 * sgq[0], muq[1] - 8.0 * sgq[1]];
    let hi = [muq[0] + 8.0 * sgq[0], muq[1] + 8.0 * sgq[1]];
    let step = [
        (hi[0] - lo[0]) / (grid - 1) as f64,
        (hi[1] - lo[1]) / (grid - 1) as f64,
    ];
    let mut quad = 0.0;
    for i in 0..grid {
        let wi = if i == 0 || i == grid - 1 { 0.5 } else { 1.0 };
        for j in 0..grid {
            let wj = if j == 0 || j == grid - 1 { 0.5 } else { 1.0 };
            let z = Tensor::new(vec![lo[0] + step[0] * i as f64, lo[1] + step[1] * j as f64], &[1, 2])
                .unwrap();
            let log_q = posterior.log_density(&z).unwrap().item();
            let (fz, _) = flow.forward(&z, None).unwrap();
            let log_p = prior.log_density(&fz).unwrap().item();
            quad += wi * wj * log_q.exp() * (log_q - log_p);
        }
    }
    quad *= step[0] * step[1];

    let gap = (mc - quad).abs();
    CheckResult::new(
        "losses/kl_mc_vs_quadrature",
        gap < 1e-2,
        format!("MC {mc:.5} vs quadrature {quad:.5}, |gap| {gap:.2e} (tol 1e-2)"),
    )
}

/// The least-squares losses hit their stated optima exactly.
pub fn gan_optima(_seed: u64) -> CheckResult {
    let ones = Tensor::<f64>::full(&[8], 1.0);
    let zeros = Tensor::<f64>::zeros(&[8]);
    let halves = Tensor::<f64>::full(&[8], 0.5);
    let feats = Tensor::<f64>::new(vec![0.3, -0.7, 1.1], &[3]).unwrap();

    let checks = [
        (adv_loss_d(&ones, &zeros).unwrap().item(), 0.0, "adv_d(1,0)"),
        (adv_loss_g(&ones).unwrap().item(), 0.0, "adv_g(1)"),
        (adv_loss_d(&halves, &halves).unwrap().item(), 0.5, "adv_d(0.5,0.5)"),
        (
            fm_loss(std::slice::from_ref(&feats), std::slice::from_ref(&feats)).unwrap().item(),
            0.0,
            "fm(identical)",
        ),
    ];
    for (got, want, label) in checks {
        if got != want {
            return CheckResult::new(
                "losses/gan_optima",
                false,
                format!("{label}: got {got}, want exactly {want}"),
            );
        }
    }
    let nonneg = adv_loss_d(&halves, &ones).unwrap().item() >= 0.0
        && adv_loss_g(&zeros).unwrap().item() >= 0.0;
    CheckResult::new(
        "losses/gan_optima",
        nonneg,
        "adv_d(1,0)=0, adv_g(1)=0, adv_d(0.5,0.5)=0.5, fm(identical)=0, all exact",
    )
}

pub fn run(seed: u64) -> Vec<CheckResult> {
    let mut results = loss_gradients(seed, 100);
    results.push(kl_mc_vs_closed_form(seed.wrapping_add(200), 10, 100_000));
    results.push(kl_mc_vs_quadrature(seed.wrapping_add(101), 200_000));
    results.push(gan_optima(seed));
    results
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_loss_gradients() {
        for r in loss_gradients(51, 3) {
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn quick_kl_checks() {
        assert!(kl_mc_vs_closed_form(52, 2, 20_000).passed);
        let q = kl_mc_vs_quadrature(53, 40_000);
        assert!(q.passed, "{q}");
        assert!(gan_optima(54).passed);
    }
}
