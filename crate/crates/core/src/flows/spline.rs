//! Monotonic rational-quadratic spline bijections with linear tails.
//!
//! A spline over `[-bound, bound]` is described by K bin widths, K bin
//! heights, and K-1 interior knot derivatives; boundary derivatives are
//! pinned to 1 so the map continues as the identity outside the interval.
//! Raw (unconstrained) parameters map to a valid spline through a softmax
//! over widths/heights and a softplus over derivatives, calibrated so that
//! all-zero raw parameters give exactly the identity map.

use crate::error::{Error, Result};
use crate::scalar::{softplus_stable, Scalar, SplineNum};

/// softplus(x + SHIFT) == 1 at x == 0, i.e. SHIFT = ln(e - 1).
const DERIV_CALIBRATION: f64 = 0.541_324_854_612_918_3;

/// Knot-level description of one spline: `K+1` x-knots, y-knots, and
/// derivatives (boundaries fixed at 1).
pub(crate) struct Knots<S> {
    pub xs: Vec<S>,
    pub ys: Vec<S>,
    pub ds: Vec<S>,
}

/// Softmax of `raw` scaled to total `2 * bound` with a floor per bin.
fn normalized_bins<F: Scalar, S: SplineNum<F>>(raw: &[S], bound: F, min_bin: F) -> Vec<S> {
    let k = raw.len();
    let mut maxv = raw[0].real();
    for r in raw.iter().skip(1) {
        if r.real() > maxv {
            maxv = r.real();
        }
    }
    let maxv = S::from_real(maxv);
    let exps: Vec<S> = raw.iter().map(|r| (*r - maxv).exp()).collect();
    let mut total = S::from_real(F::zero());
    for e in &exps {
        total = total + *e;
    }
    let span = S::from_real(bound + bound);
    let floor = S::from_real(min_bin);
    let scale = S::from_real(F::one() - min_bin * F::of_usize(k));
    exps.into_iter().map(|e| (floor + scale * (e / total)) * span).collect()
}

pub(crate) fn knots_from_raw<F: Scalar, S: SplineNum<F>>(
    raw: &[S],
    bins: usize,
    bound: F,
    min_bin: F,
) -> Knots<S> {
    debug_assert_eq!(raw.len(), 3 * bins - 1);
    let widths = normalized_bins(&raw[..bins], bound, min_bin);
    let heights = normalized_bins(&raw[bins..2 * bins], bound, min_bin);
    let calib = S::from_real(F::of_f64(DERIV_CALIBRATION));
    let one = S::from_real(F::one());
    let neg_bound = S::from_real(-bound);

    let mut xs = Vec::with_capacity(bins + 1);
    let mut ys = Vec::with_capacity(bins + 1);
    xs.push(neg_bound);
    ys.push(neg_bound);
    for i in 0..bins {
        let px = *xs.last().unwrap();
        let py = *ys.last().unwrap();
        xs.push(px + widths[i]);
        ys.push(py + heights[i]);
    }
    // Pin the endpoints exactly; cumulative sums drift by rounding.
    xs[bins] = S::from_real(bound);
    ys[bins] = S::from_real(bound);

    let mut ds = Vec::with_capacity(bins + 1);
    ds.push(one);
    for r in &raw[2 * bins..] {
        ds.push(softplus_stable(*r + calib));
    }
    ds.push(one);
    Knots { xs, ys, ds }
}

/// Forward spline map and log |dy/dx| at one point. Outside the bound the
/// map is the identity with zero log-determinant.
pub(crate) fn rq_kernel<F: Scalar, S: SplineNum<F>>(
    x: S,
    raw: &[S],
    bins: usize,
    bound: F,
    min_bin: F,
) -> (S, S) {
    if x.real() < -bound || x.real() > bound {
        return (x, S::from_real(F::zero()));
    }
    let kn = knots_from_raw(raw, bins, bound, min_bin);
    rq_eval(&kn, x, bins)
}

fn find_bin<F: Scalar, S: SplineNum<F>>(knots: &[S], v: F, bins: usize) -> usize {
    // Largest k with knots[k] <= v, clamped into [0, bins-1].
    let mut k = 0;
    for i in (0..bins).rev() {
        if knots[i].real() <= v {
            k = i;
            break;
        }
    }
    k
}

pub(crate) fn rq_eval<F: Scalar, S: SplineNum<F>>(kn: &Knots<S>, x: S, bins: usize) -> (S, S) {
    let k = find_bin(&kn.xs, x.real(), bins);
    let w = kn.xs[k + 1] - kn.xs[k];
    let h = kn.ys[k + 1] - kn.ys[k];
    let s = h / w;
    let xi = (x - kn.xs[k]) / w;
    let one = S::from_real(F::one());
    let two = S::from_real(F::of_f64(2.0));
    let d0 = kn.ds[k];
    let d1 = kn.ds[k + 1];
    let xi1 = one - xi;
    let cross = xi * xi1;
    let denom = s + (d1 + d0 - two * s) * cross;
    let y = kn.ys[k] + h * (s * xi * xi + d0 * cross) / denom;
    let slope = s * s * (d1 * xi * xi + two * s * cross + d0 * xi1 * xi1) / (denom * denom);
    (y, slope.ln())
}

/// Inverse spline map and log |dx/dy| at one point (plain scalars only;
/// sampling paths never need gradients).
pub(crate) fn rq_eval_inverse<F: Scalar>(kn: &Knots<F>, y: F, bins: usize) -> (F, F) {
    let k = find_bin(&kn.ys, y, bins);
    let w = kn.xs[k + 1] - kn.xs[k];
    let h = kn.ys[k + 1] - kn.ys[k];
    let s = h / w;
    let d0 = kn.ds[k];
    let d1 = kn.ds[k + 1];
    let two = F::of_f64(2.0);
    let t = y - kn.ys[k];
    let q = d1 + d0 - two * s;
    // Solve a*xi^2 + b*xi + c = 0 for the unique root in [0, 1].
    let a = h * (s - d0) + t * q;
    let b = h * d0 - t * q;
    let c = -s * t;
    let disc = (b * b - F::of_f64(4.0) * a * c).max(F::zero());
    let xi = two * c / (-b - disc.sqrt());
    let x = kn.xs[k] + xi * w;
    let xi1 = F::one() - xi;
    let cross = xi * xi1;
    let denom = s + q * cross;
    let slope = s * s * (d1 * xi * xi + two * s * cross + d0 * xi1 * xi1) / (denom * denom);
    (x, -slope.ln())
}

pub(crate) fn rq_kernel_inverse<F: Scalar>(
    y: F,
    raw: &[F],
    bins: usize,
    bound: F,
    min_bin: F,
) -> (F, F) {
    if y < -bound || y > bound {
        return (y, F::zero());
    }
    let kn = knots_from_raw::<F, F>(raw, bins, bound, min_bin);
    rq_eval_inverse(&kn, y, bins)
}

/// Validated spline parameterization for one element: normalized widths and
/// heights spanning `2 * bound` plus positive interior derivatives.
#[derive(Debug, Clone)]
pub struct SplineParams<F: Scalar> {
    pub widths: Vec<F>,
    pub heights: Vec<F>,
    pub derivatives: Vec<F>,
    pub bound: F,
}

impl<F: Scalar> SplineParams<F> {
    /// Build from a raw `3K - 1` channel vector.
    pub fn from_raw(raw: &[F], bins: usize, bound: F, min_bin: F) -> Result<SplineParams<F>> {
        if raw.len() != 3 * bins - 1 {
            return Err(Error::invalid(format!(
                "spline: expected {} raw channels for {} bins, got {}",
                3 * bins - 1,
                bins,
                raw.len()
            )));
        }
        let kn = knots_from_raw::<F, F>(raw, bins, bound, min_bin);
        let widths: Vec<F> = (0..bins).map(|i| kn.xs[i + 1] - kn.xs[i]).collect();
        let heights: Vec<F> = (0..bins).map(|i| kn.ys[i + 1] - kn.ys[i]).collect();
        let derivatives: Vec<F> = kn.ds[1..bins].to_vec();
        let p = SplineParams { widths, heights, derivatives, bound };
        p.validate()?;
        Ok(p)
    }

    pub fn bins(&self) -> usize {
        self.widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.heights.len() != self.widths.len()
            || self.derivatives.len() + 1 != self.widths.len()
        {
            return Err(Error::invalid("spline: inconsistent parameter lengths"));
        }
        let span = self.bound + self.bound;
        let tol = F::of_f64(1e-9) * span;
        for group in [&self.widths, &self.heights] {
            let mut total = F::zero();
            for v in group.iter() {
                if *v <= F::zero() {
                    return Err(Error::invalid("spline: non-positive bin size"));
                }
                total += *v;
            }
            if (total - span).abs() > tol {
                return Err(Error::invalid("spline: bins do not span the interval"));
            }
        }
        if self.derivatives.iter().any(|d| *d <= F::zero()) {
            return Err(Error::invalid("spline: non-positive knot derivative"));
        }
        Ok(())
    }

    fn knots(&self) -> Knots<F> {
        let bins = self.bins();
        let mut xs = Vec::with_capacity(bins + 1);
        let mut ys = Vec::with_capacity(bins + 1);
        xs.push(-self.bound);
        ys.push(-self.bound);
        for i in 0..bins {
            let px = *xs.last().unwrap();
            let py = *ys.last().unwrap();
            xs.push(px + self.widths[i]);
            ys.push(py + self.heights[i]);
        }
        xs[bins] = self.bound;
        ys[bins] = self.bound;
        let mut ds = Vec::with_capacity(bins + 1);
        ds.push(F::one());
        ds.extend_from_slice(&self.derivatives);
        ds.push(F::one());
        Knots { xs, ys, ds }
    }

    /// Forward map with elementwise log |dy/dx|.
    pub fn forward(&self, x: F) -> (F, F) {
        if x < -self.bound || x > self.bound {
            return (x, F::zero());
        }
        rq_eval(&self.knots(), x, self.bins())
    }

    /// Inverse map with elementwise log |dx/dy|.
    pub fn inverse(&self, y: F) -> (F, F) {
        if y < -self.bound || y > self.bound {
            return (y, F::zero());
        }
        rq_eval_inverse(&self.knots(), y, self.bins())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_raw_parameters_give_identity() {
        let raw = vec![0.0_f64; 29];
        let p = SplineParams::from_raw(&raw, 10, 5.0, 1e-3).unwrap();
        for &x in &[-4.9, -2.3, -0.5, 0.0, 0.7, 3.1, 4.99] {
            let (y, ld) = p.forward(x);
            assert!((y - x).abs() < 1e-8, "f({x}) = {y}");
            assert!(ld.abs() < 1e-8, "logdet({x}) = {ld}");
        }
    }

    #[test]
    fn twenty_nine_channels_build_ten_bins() {
        let p = SplineParams::from_raw(&vec![0.0; 29], 10, 5.0, 1e-3).unwrap();
        assert_eq!(p.bins(), 10);
        assert_eq!(p.derivatives.len(), 9);
    }

    #[test]
    fn wrong_channel_count_rejected() {
        assert!(SplineParams::from_raw(&vec![0.0; 28], 10, 5.0, 1e-3).is_err());
    }

    #[test]
    fn tails_are_identity() {
        let raw: Vec<f64> = (0..29).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.3).collect();
        let p = SplineParams::from_raw(&raw, 10, 5.0, 1e-3).unwrap();
        for &x in &[-7.3, 5.5, 12.0, -5.0001] {
            let (y, ld) = p.forward(x);
            assert_eq!(y, x);
            assert_eq!(ld, 0.0);
        }
    }

    #[test]
    fn roundtrip_and_monotonicity() {
        let raw: Vec<f64> = (0..29).map(|i| (((i * 29 + 7) % 13) as f64 - 6.0) * 0.4).collect();
        let p = SplineParams::from_raw(&raw, 10, 5.0, 1e-3).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..200 {
            let x = -4.99 + 9.98 * (i as f64) / 199.0;
            let (y, ld_f) = p.forward(x);
            assert!(y > prev, "monotonicity violated at {x}");
            prev = y;
            let (back, ld_i) = p.inverse(y);
            assert!((back - x).abs() < 1e-9, "roundtrip {x} -> {y} -> {back}");
            assert!((ld_f + ld_i).abs() < 1e-9);
        }
    }

    #[test]
    fn non_monotone_parameterizations_rejected() {
        let good = SplineParams::from_raw(&vec![0.1; 29], 10, 5.0, 1e-3).unwrap();
        let mut zero_width = good.clone();
        zero_width.widths[3] = 0.0;
        zero_width.widths[4] = good.widths[4] + good.widths[3];
        assert!(zero_width.validate().is_err());
        let mut bad_deriv = good.clone();
        bad_deriv.derivatives[2] = -0.5;
        assert!(bad_deriv.validate().is_err());
        let mut wrong_span = good;
        wrong_span.heights[0] += 1.0;
        assert!(wrong_span.validate().is_err());
    }

    #[test]
    fn widths_and_heights_span_the_interval() {
        let raw: Vec<f64> = (0..29).map(|i| (i as f64 * 0.11).sin()).collect();
        let p = SplineParams::from_raw(&raw, 10, 5.0, 1e-3).unwrap();
        let sw: f64 = p.widths.iter().sum();
        let sh: f64 = p.heights.iter().sum();
        assert!((sw - 10.0).abs() < 1e-9);
        assert!((sh - 10.0).abs() < 1e-9);
    }
}
