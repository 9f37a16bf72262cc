//! Central finite-difference gradient checks for every differentiable
//! primitive. The oracle perturbs each leaf element by +-1e-5, recomputes
//! the scalar projection of the op output, and compares the slope against
//! the reverse-mode gradient.

use rand::Rng;

use crate::error::Result;
use crate::rng::{seeded, SeedRng};
use crate::tensor::Tensor;

use super::CheckResult;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

type MakeInputs = fn(&mut SeedRng) -> Vec<Tensor<f64>>;
type ApplyOp = fn(&[Tensor<f64>]) -> Result<Tensor<f64>>;

/// Scalar projection of an op output with fixed weights, so vector-valued
/// ops reduce to one number without hiding any output element.
fn project(output: &Tensor<f64>, weights: &[f64]) -> Result<Tensor<f64>> {
    let w = Tensor::new(weights[..output.numel()].to_vec(), output.shape())?;
    output.mul(&w)?.sum()
}

/// Max relative error between reverse-mode and finite-difference gradients
/// over every element of every input, for one sampled input set.
pub fn max_rel_error(
    make_inputs: MakeInputs,
    op: ApplyOp,
    rng: &mut SeedRng,
) -> Result<f64> {
    let inputs = make_inputs(rng);
    let probe = op(&inputs)?;
    let weights: Vec<f64> = (0..probe.numel()).map(|_| rng.random_range(0.25..1.0)).collect();

    let loss = project(&op(&inputs)?, &weights)?;
    loss.backward()?;
    let grads: Vec<Option<Vec<f64>>> = inputs.iter().map(|t| t.grad()).collect();

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let base = input.values();
        let Some(ad) = &grads[i] else {
            continue;
        };
        for j in 0..base.len() {
            let mut plus = base.clone();
            plus[j] += FD_STEP;
            input.set_data(plus)?;
            let f_plus = project(&op(&inputs)?, &weights)?.item();

            let mut minus = base.clone();
            minus[j] -= FD_STEP;
            input.set_data(minus)?;
            let f_minus = project(&op(&inputs)?, &weights)?.item();

            input.set_data(base.clone())?;
            let fd = (f_plus - f_minus) / (2.0 * FD_STEP);
            let denom = fd.abs().max(ad[j].abs()).max(1e-6);
            worst = worst.max((fd - ad[j]).abs() / denom);
        }
    }
    Ok(worst)
}

/// Run `trials` sampled input sets and report the worst relative error.
pub fn check_primitive(
    name: &str,
    make_inputs: MakeInputs,
    op: ApplyOp,
    trials: usize,
    seed: u64,
) -> CheckResult {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for trial in 0..trials {
        match max_rel_error(make_inputs, op, &mut rng) {
            Ok(err) => worst = worst.max(err),
            Err(e) => {
                return CheckResult::new(
                    format!("grad/{name}"),
                    false,
                    format!("trial {trial}: {e}"),
                );
            }
        }
    }
    CheckResult::new(
        format!("grad/{name}"),
        worst < REL_TOL,
        format!("max rel err {worst:.3e} over {trials} trials (tol {REL_TOL:.0e})"),
    )
}

fn randn(rng: &mut SeedRng, shape: &[usize]) -> Tensor<f64> {
    Tensor::randn_param(rng, shape, 1.0)
}

fn positive(rng: &mut SeedRng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    Tensor::param(data, shape).unwrap()
}

/// Standard-normal values nudged away from zero so |x| stays differentiable
/// within the finite-difference step.
fn away_from_zero(rng: &mut SeedRng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.5);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::param(data, shape).unwrap()
}

const SPLINE_BINS: usize = 10;
const SPLINE_BOUND: f64 = 5.0;
const SPLINE_MIN_BIN: f64 = 1e-3;

fn spline_inputs(rng: &mut SeedRng) -> Vec<Tensor<f64>> {
    let t_len = 4;
    // mix interior and tail points
    let x: Vec<f64> = (0..t_len).map(|_| rng.random_range(-7.0..7.0)).collect();
    let raw: Vec<f64> = (0..t_len * 29).map(|_| rng.random_range(-1.0..1.0)).collect();
    vec![
        Tensor::param(x, &[t_len, 1]).unwrap(),
        Tensor::param(raw, &[t_len, 29]).unwrap(),
    ]
}

/// All primitive checks, 100 trials each.
pub fn run(seed: u64) -> Vec<CheckResult> {
    run_with_trials(seed, 100)
}

pub fn run_with_trials(seed: u64, trials: usize) -> Vec<CheckResult> {
    let cases: Vec<(&str, MakeInputs, ApplyOp)> = vec![
        ("add", |r| vec![randn(r, &[3, 4]), randn(r, &[3, 4])], |t| t[0].add(&t[1])),
        ("sub", |r| vec![randn(r, &[3, 4]), randn(r, &[3, 4])], |t| t[0].sub(&t[1])),
        ("mul", |r| vec![randn(r, &[3, 4]), randn(r, &[3, 4])], |t| t[0].mul(&t[1])),
        ("div", |r| vec![randn(r, &[3, 4]), positive(r, &[3, 4])], |t| t[0].div(&t[1])),
        ("add_scalar", |r| vec![randn(r, &[5])], |t| t[0].add_scalar(0.7)),
        ("mul_scalar", |r| vec![randn(r, &[5])], |t| t[0].mul_scalar(-1.3)),
        ("neg", |r| vec![randn(r, &[5])], |t| t[0].neg()),
        ("abs", |r| vec![away_from_zero(r, &[4, 3])], |t| t[0].abs()),
        ("square", |r| vec![randn(r, &[4])], |t| t[0].square()),
        ("gelu", |r| vec![randn(r, &[4, 3])], |t| t[0].gelu()),
        ("sigmoid", |r| vec![randn(r, &[4, 3])], |t| t[0].sigmoid()),
        ("softplus", |r| vec![randn(r, &[4, 3])], |t| t[0].softplus()),
        ("log", |r| vec![positive(r, &[4, 3])], |t| t[0].log()),
        ("exp", |r| vec![randn(r, &[4, 3])], |t| t[0].exp()),
        ("sqrt", |r| vec![positive(r, &[4, 3])], |t| t[0].sqrt()),
        ("sum", |r| vec![randn(r, &[3, 5])], |t| t[0].sum()),
        ("mean", |r| vec![randn(r, &[3, 5])], |t| t[0].mean()),
        ("reshape", |r| vec![randn(r, &[3, 4])], |t| t[0].reshape(&[4, 3])),
        ("matmul", |r| vec![randn(r, &[3, 4]), randn(r, &[4, 2])], |t| {
            t[0].matmul(&t[1])
        }),
        ("conv1d", |r| {
            vec![randn(r, &[6, 3]), randn(r, &[4, 3, 3]), randn(r, &[4])]
        }, |t| t[0].conv1d(&t[1], &t[2], 1, 1)),
        ("conv1d_dilated_depthwise", |r| {
            vec![randn(r, &[8, 4]), randn(r, &[4, 1, 3]), randn(r, &[4])]
        }, |t| t[0].conv1d(&t[1], &t[2], 3, 4)),
        ("row_mean", |r| vec![randn(r, &[4, 5])], |t| t[0].row_mean()),
        ("mul_cols", |r| vec![randn(r, &[4, 3]), randn(r, &[3])], |t| {
            t[0].mul_cols(&t[1])
        }),
        ("add_cols", |r| vec![randn(r, &[4, 3]), randn(r, &[3])], |t| {
            t[0].add_cols(&t[1])
        }),
        ("layer_norm", |r| {
            vec![randn(r, &[4, 6]), positive(r, &[6]), randn(r, &[6])]
        }, |t| t[0].layer_norm(&t[1], &t[2], 1e-5)),
        ("concat_cols", |r| vec![randn(r, &[4, 2]), randn(r, &[4, 3])], |t| {
            Tensor::concat_cols(&[&t[0], &t[1]])
        }),
        ("slice_cols", |r| vec![randn(r, &[4, 5])], |t| t[0].slice_cols(1, 4)),
        ("spline_value", spline_inputs, |t| {
            t[0].spline_value(&t[1], SPLINE_BINS, SPLINE_BOUND, SPLINE_MIN_BIN)
        }),
        ("spline_logdet", spline_inputs, |t| {
            t[0].spline_logdet(&t[1], SPLINE_BINS, SPLINE_BOUND, SPLINE_MIN_BIN)
        }),
    ];

    let mut results: Vec<CheckResult> = cases
        .into_iter()
        .enumerate()
        .map(|(i, (name, make, op))| check_primitive(name, make, op, trials, seed ^ (i as u64) << 8))
        .collect();

    results.push(stop_gradient_check());
    results
}

/// stop_gradient must pass values through and block gradients exactly.
fn stop_gradient_check() -> CheckResult {
    let x = Tensor::<f64>::param(vec![1.5, -2.0, 0.25], &[3]).unwrap();
    let w = Tensor::<f64>::param(vec![2.0, 3.0, 4.0], &[3]).unwrap();
    let loss = x.stop_gradient().mul(&w).unwrap().sum().unwrap();
    loss.backward().unwrap();
    let ok = x.grad().is_none() && w.grad().unwrap() == x.values();
    CheckResult::new(
        "grad/stop_gradient",
        ok,
        "values pass through, gradient blocked exactly",
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_harness_catches_a_wrong_gradient() {
        // exp's gradient checked against a deliberately wrong op: if the
        // harness passed this, it would be vacuous
        let bad: ApplyOp = |t| t[0].exp()?.mul_scalar(1.0)?.add(&t[0].mul_scalar(0.1)?);
        let good: ApplyOp = |t| t[0].exp();
        let make: MakeInputs = |r| vec![randn(r, &[3])];
        let mut rng = seeded(1);
        let good_err = max_rel_error(make, good, &mut rng).unwrap();
        assert!(good_err < REL_TOL);
        // the "bad" op is self-consistent, so instead corrupt the comparison:
        // evaluate good gradients against bad op values
        let mut rng = seeded(2);
        let inputs = make(&mut rng);
        let loss = good(&inputs).unwrap().sum().unwrap();
        loss.backward().unwrap();
        let ad = inputs[0].grad().unwrap();
        let base = inputs[0].values();
        let mut plus = base.clone();
        plus[0] += FD_STEP;
        inputs[0].set_data(plus).unwrap();
        let f_plus = bad(&inputs).unwrap().sum().unwrap().item();
        let mut minus = base.clone();
        minus[0] -= FD_STEP;
        inputs[0].set_data(minus).unwrap();
        let f_minus = bad(&inputs).unwrap().sum().unwrap().item();
        let fd = (f_plus - f_minus) / (2.0 * FD_STEP);
        let rel = (fd - ad[0]).abs() / fd.abs().max(ad[0].abs()).max(1e-6);
        assert!(rel > REL_TOL, "harness failed to flag mismatched slope: {rel}");
    }

    #[test]
    fn quick_grad_sweep() {
        for result in run_with_trials(123, 3) {
            assert!(result.passed, "{result}");
        }
    }
}
