//! Property tests for the structural invariants: alignment path validity,
//! spline bijectivity and monotonicity, duration partitioning, tape
//! determinism, and flow densities normalizing to one.

use proptest::prelude::*;

use ttsflow::align::{durations_from_path, mas, AlignmentPath, LikelihoodMatrix};

use ttsflow::flows::coupling::SplineCoupling;
use ttsflow::flows::SplineParams;
use ttsflow::nn::randomize_parameters;
use ttsflow::rng::seeded;
use ttsflow::tensor::Tensor;

fn matrix_strategy() -> impl Strategy<Value = LikelihoodMatrix<f64>> {
    (1usize..=5)
        .prop_flat_map(|t_x| {
            (t_x..=9usize).prop_flat_map(move |t_y| {
                prop::collection::vec(-10.0f64..10.0, t_x * t_y)
                    .prop_map(move |values| LikelihoodMatrix::new(values, t_x, t_y).unwrap())
            })
        })
        .no_shrink()
}

proptest! {
    #[test]
    fn mas_paths_always_valid_and_durations_partition_frames(m in matrix_strategy()) {
        let path = mas(&m).unwrap();
        path.validate().unwrap();
        prop_assert_eq!(path.t_y(), m.t_y());
        let durations = durations_from_path(&path).unwrap();
        prop_assert_eq!(durations.iter().sum::<usize>(), m.t_y());
        prop_assert!(durations.iter().all(|d| *d >= 1));
    }

    #[test]
    fn mas_invariant_under_constant_shift(m in matrix_strategy(), offset in -100.0f64..100.0) {
        let shifted = LikelihoodMatrix::new(
            m.values().iter().map(|v| v + offset).collect(),
            m.t_x(),
            m.t_y(),
        )
        .unwrap();
        prop_assert_eq!(mas(&m).unwrap(), mas(&shifted).unwrap());
    }

    #[test]
    fn spline_roundtrip_and_monotonic(
        raw in prop::collection::vec(-2.0f64..2.0, 29),
        xs in prop::collection::vec(-8.0f64..8.0, 8),
    ) {
        let params = SplineParams::from_raw(&raw, 10, 5.0, 1e-3).unwrap();
        let mut points: Vec<f64> = xs;
        points.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut prev_y = f64::NEG_INFINITY;
        for &x in &points {
            let (y, ld_f) = params.forward(x);
            prop_assert!(y >= prev_y);
            if y > prev_y {
                prev_y = y;
            }
            let (back, ld_i) = params.inverse(y);
            prop_assert!((back - x).abs() < 1e-8, "roundtrip {} -> {} -> {}", x, y, back);
            prop_assert!((ld_f + ld_i).abs() < 1e-8);
        }
    }

    #[test]
    fn alignment_matrix_roundtrip(m in matrix_strategy()) {
        let path = mas(&m).unwrap();
        let dense = path.to_matrix();
        let back = AlignmentPath::from_matrix(&dense, m.t_x(), m.t_y()).unwrap();
        prop_assert_eq!(path, back);
    }
}

/// Identical seeds and inputs give bit-identical losses and gradients.
#[test]
fn tape_determinism_bit_exact() {
    let run = || {
        let mut rng = seeded(77);
        let coupling = SplineCoupling::<f64>::new(&mut rng, 2, 8, 3, 10, 5.0, 1e-3, false).unwrap();
        randomize_parameters(&coupling.parameters("c"), &mut rng, 0.4);
        let x = Tensor::randn(&mut rng, &[6, 2]);
        let (y, logdet) = coupling.forward(&x, None).unwrap();
        let loss = y.square().unwrap().sum().unwrap().add(&logdet).unwrap();
        loss.backward().unwrap();
        let grads: Vec<Vec<u64>> = coupling
            .parameters("c")
            .iter()
            .map(|(_, p)| {
                p.grad()
                    .unwrap_or_default()
                    .into_iter()
                    .map(f64::to_bits)
                    .collect()
            })
            .collect();
        (loss.item().to_bits(), grads)
    };
    let (loss_a, grads_a) = run();
    let (loss_b, grads_b) = run();
    assert_eq!(loss_a, loss_b);
    assert_eq!(grads_a, grads_b);
}

/// Change-of-variables consistency: the density N(f(z); mu, sigma) |det J|
/// integrates to one over the spline box for a 2-channel toy prior. The
/// couplings use 1x1 conditioning so grid points batch as independent rows.
#[test]
fn flow_density_integrates_to_one() {
    let bound = 5.0;
    let mut rng = seeded(31);
    let layers: Vec<SplineCoupling<f64>> = (0..4)
        .map(|i| {
            let l = SplineCoupling::new(&mut rng, 2, 8, 1, 10, bound, 1e-3, i % 2 == 1).unwrap();
            randomize_parameters(&l.parameters("l"), &mut rng, 0.25);
            l
        })
        .collect();
    let (mu, sigma) = ([0.4, -0.7], [0.6, 0.5]);

    let grid = 801usize;
    let step = 2.0 * bound / (grid - 1) as f64;
    let mut mass = 0.0;
    let chunk = 4096usize;
    let mut points: Vec<(f64, f64, f64)> = Vec::with_capacity(grid * grid);
    for i in 0..grid {
        let wi = if i == 0 || i == grid - 1 { 0.5 } else { 1.0 };
        for j in 0..grid {
            let wj = if j == 0 || j == grid - 1 { 0.5 } else { 1.0 };
            points.push((-bound + step * i as f64, -bound + step * j as f64, wi * wj));
        }
    }
    for batch in points.chunks(chunk) {
        let flat: Vec<f64> = batch.iter().flat_map(|(a, b, _)| [*a, *b]).collect();
        let mut z = Tensor::new(flat, &[batch.len(), 2]).unwrap();
        let mut row_logdet = Tensor::<f64>::zeros(&[batch.len(), 1]);
        for layer in &layers {
            let (next, rows) = layer.forward_rows(&z, None).unwrap();
            z = next;
            row_logdet = row_logdet.add(&rows).unwrap();
        }
        let fz = z.values();
        let lds = row_logdet.values();
        for (r, (_, _, w)) in batch.iter().enumerate() {
            let mut log_p = lds[r];
            for c in 0..2 {
                let v: f64 = fz[r * 2 + c];
                log_p += -0.5 * (v - mu[c]) * (v - mu[c]) / (sigma[c] * sigma[c])
                    - sigma[c].ln()
                    - 0.5 * (2.0 * std::f64::consts::PI).ln();
            }
            mass += w * log_p.exp();
        }
    }
    mass *= step * step;
    assert!((mass - 1.0).abs() < 1e-3, "density mass {mass}");
}

/// Sweep of coupling-layer channel widths: splits must partition the
/// channels into two nonempty halves.
#[test]
fn coupling_split_requires_even_positive_channels() {
    let mut rng = seeded(9);
    for c in [1usize, 3, 5, 7] {
        assert!(SplineCoupling::<f64>::new(&mut rng, c, 8, 3, 10, 5.0, 1e-3, false).is_err());
    }
    for c in [2usize, 4, 6] {
        assert!(SplineCoupling::<f64>::new(&mut rng, c, 8, 3, 10, 5.0, 1e-3, false).is_ok());
    }
}
