//! Flow checks: round-trip bijectivity, log-determinant agreement with
//! finite differences, and the 29-channel spline parameter convention.

use rand::Rng;

use crate::flows::coupling::{AffineCoupling, SplineCoupling};
use crate::flows::{FlowLayer, FlowStack, SplineParams};
use crate::nn::randomize_parameters;
use crate::rng::{seeded, SeedRng};
use crate::tensor::Tensor;

use super::CheckResult;

const BINS: usize = 10;
const BOUND: f64 = 5.0;
const MIN_BIN: f64 = 1e-3;

fn random_spline_coupling(rng: &mut SeedRng, flip: bool, scale: f64) -> SplineCoupling<f64> {
    let layer = SplineCoupling::new(rng, 2, 8, 3, BINS, BOUND, MIN_BIN, flip).unwrap();
    randomize_parameters(&layer.parameters("l"), rng, scale);
    layer
}

/// inverse(forward(x)) == x within 1e-8 for spline couplings over random
/// inputs and parameters.
pub fn spline_roundtrip(seed: u64, trials: usize) -> CheckResult {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let flip = rng.random_bool(0.5);
        let layer = random_spline_coupling(&mut rng, flip, 0.4);
        let x = Tensor::randn(&mut rng, &[5, 2]).mul_scalar(2.5).unwrap();
        let (y, ld_f) = layer.forward(&x, None).unwrap();
        let (back, ld_i) = layer.inverse(&y, None).unwrap();
        for (a, b) in x.values().iter().zip(back.values()) {
            worst = worst.max((a - b).abs());
        }
        worst = worst.max((ld_f.item() + ld_i.item()).abs());
    }
    CheckResult::new(
        "flows/spline_roundtrip",
        worst < 1e-8,
        format!("max round-trip error {worst:.2e} over {trials} trials (tol 1e-8)"),
    )
}

/// inverse(forward(x)) == x within 1e-12 for additive couplings.
pub fn affine_roundtrip(seed: u64, trials: usize) -> CheckResult {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let flip = rng.random_bool(0.5);
        let layer = AffineCoupling::<f64>::new(&mut rng, 4, 8, 2, 3, flip).unwrap();
        randomize_parameters(&layer.parameters("l"), &mut rng, 0.5);
        let x = Tensor::randn(&mut rng, &[5, 4]);
        let (y, ld_f) = layer.forward(&x).unwrap();
        let (back, ld_i) = layer.inverse(&y).unwrap();
        for (a, b) in x.values().iter().zip(back.values()) {
            worst = worst.max((a - b).abs());
        }
        if ld_f.item() != 0.0 || ld_i.item() != 0.0 {
            return CheckResult::new(
                "flows/affine_roundtrip",
                false,
                "additive coupling reported a nonzero log-determinant",
            );
        }
    }
    CheckResult::new(
        "flows/affine_roundtrip",
        worst < 1e-12,
        format!("max round-trip error {worst:.2e} over {trials} trials (tol 1e-12)"),
    )
}

/// Elementwise spline log |dy/dx| against the log of a central-difference
/// slope. Points are resampled away from knot boundaries, where the second
/// derivative jumps and the comparison would measure the oracle's own error.
pub fn spline_logdet_fd(seed: u64, points: usize) -> CheckResult {
    let mut rng = seeded(seed);
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    while checked < points {
        let raw: Vec<f64> = (0..29).map(|_| rng.random_range(-1.2..1.2)).collect();
        let params = SplineParams::from_raw(&raw, BINS, BOUND, MIN_BIN).unwrap();
        let mut knots = vec![-BOUND];
        for w in &params.widths {
            knots.push(knots.last().unwrap() + w);
        }
        for _ in 0..10 {
            let x: f64 = rng.random_range(-6.0..6.0);
            if knots.iter().any(|k| (x - k).abs() < 1e-4) {
                continue;
            }
            let (_, logdet) = params.forward(x);
            let (y_plus, _) = params.forward(x + h);
            let (y_minus, _) = params.forward(x - h);
            let fd_slope = (y_plus - y_minus) / (2.0 * h);
            worst = worst.max((fd_slope.ln() - logdet).abs());
            checked += 1;
        }
    }
    CheckResult::new(
        "flows/spline_logdet_fd",
        worst < 1e-5,
        format!("max |log slope gap| {worst:.2e} over {checked} points (tol 1e-5)"),
    )
}

/// Stack log-determinant against log |det J| from a finite-difference
/// Jacobian on 2-channel, single-position inputs. Parameter draws stay
/// moderate so the determinant keeps enough magnitude for the central
/// differences to resolve it.
pub fn stack_logdet_jacobian(seed: u64, trials: usize) -> CheckResult {
    let mut rng = seeded(seed);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let layers: Vec<FlowLayer<f64>> = (0..4)
            .map(|i| FlowLayer::Spline(random_spline_coupling(&mut rng, i % 2 == 1, 0.25)))
            .collect();
        let stack = FlowStack { layers };
        let x0: Vec<f64> = vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];

        let eval = |v: &[f64]| -> Vec<f64> {
            let t = Tensor::new(v.to_vec(), &[1, 2]).unwrap();
            stack.forward(&t, None).unwrap().0.values()
        };
        let x = Tensor::new(x0.clone(), &[1, 2]).unwrap();
        let (_, logdet) = stack.forward(&x, None).unwrap();

        // 2x2 Jacobian, column per input dimension
        let mut jac = [[0.0f64; 2]; 2];
        for col in 0..2 {
            let mut plus = x0.clone();
            plus[col] += h;
            let mut minus = x0.clone();
            minus[col] -= h;
            let fp = eval(&plus);
            let fm = eval(&minus);
            for row in 0..2 {
                jac[row][col] = (fp[row] - fm[row]) / (2.0 * h);
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        worst = worst.max((det.abs().ln() - logdet.item()).abs());
    }
    CheckResult::new(
        "flows/stack_logdet_jacobian",
        worst < 1e-4,
        format!("max |logdet gap| {worst:.2e} over {trials} trials (tol 1e-4)"),
    )
}

/// 29 raw channels build exactly 10 bins; all-zero raw parameters give the
/// identity map; 28 channels are rejected.
pub fn spline_param_convention(_seed: u64) -> CheckResult {
    let params = match SplineParams::from_raw(&[0.0; 29], BINS, BOUND, MIN_BIN) {
        Ok(p) => p,
        Err(e) => return CheckResult::new("flows/spline_29_channels", false, e.to_string()),
    };
    if params.bins() != 10 {
        return CheckResult::new(
            "flows/spline_29_channels",
            false,
            format!("expected 10 bins, got {}", params.bins()),
        );
    }
    let mut worst = 0.0f64;
    for i in 0..=400 {
        let x = -6.0 + 12.0 * (i as f64) / 400.0;
        let (y, logdet) = params.forward(x);
        worst = worst.max((y - x).abs()).max(logdet.abs());
    }
    if worst >= 1e-8 {
        return CheckResult::new(
            "flows/spline_29_channels",
            false,
            format!("zero raw parameters deviate from identity by {worst:.2e}"),
        );
    }
    let rejected = SplineParams::from_raw(&[0.0; 28], BINS, BOUND, MIN_BIN).is_err();
    CheckResult::new(
        "flows/spline_29_channels",
        rejected,
        format!("identity deviation {worst:.2e}, 28-channel input rejected: {rejected}"),
    )
}

/// For a scalar spline with fixed parameters, x1 < x2 implies f(x1) < f(x2).
pub fn spline_monotonicity(seed: u64, trials: usize) -> CheckResult {
    let mut rng = seeded(seed);
    for _ in 0..trials {
        let raw: Vec<f64> = (0..29).map(|_| rng.random_range(-1.5..1.5)).collect();
        let params = SplineParams::from_raw(&raw, BINS, BOUND, MIN_BIN).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=300 {
            let x = -6.0 + 12.0 * (i as f64) / 300.0;
            let (y, _) = params.forward(x);
            if y <= prev {
                return CheckResult::new(
                    "flows/spline_monotonicity",
                    false,
                    format!("f not increasing near x={x}"),
                );
            }
            prev = y;
        }
    }
    CheckResult::new("flows/spline_monotonicity", true, format!("{trials} parameter draws"))
}

pub fn run(seed: u64) -> Vec<CheckResult> {
    vec![
        spline_roundtrip(seed, 1000),
        affine_roundtrip(seed.wrapping_add(1), 1000),
        spline_logdet_fd(seed.wrapping_add(2), 1000),
        stack_logdet_jacobian(seed.wrapping_add(3), 50),
        spline_param_convention(seed.wrapping_add(4)),
        spline_monotonicity(seed.wrapping_add(5), 50),
    ]
}
