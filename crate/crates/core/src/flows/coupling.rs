//! Coupling layers: volume-preserving additive (affine with unit Jacobian)
//! and monotonic rational-quadratic spline couplings.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Conv1dLayer, DdsConvBlock};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::spline::rq_kernel_inverse;

/// Half/half channel split: pass-through half conditions the transform of
/// the other half; `flip` swaps the roles so stacked layers touch all
/// channels.
fn split<F: Scalar>(x: &Tensor<F>, flip: bool) -> Result<(Tensor<F>, Tensor<F>, usize)> {
    let [t_len, c] = x.shape() else {
        return Err(Error::invalid(format!(
            "coupling: expected [T, C] input, got {:?}",
            x.shape()
        )));
    };
    let (t_len, c) = (*t_len, *c);
    if c % 2 != 0 || c == 0 {
        return Err(Error::invalid(format!(
            "coupling: channel count must be even and positive, got {c}"
        )));
    }
    let half = c / 2;
    let first = x.slice_cols(0, half)?;
    let second = x.slice_cols(half, c)?;
    let _ = t_len;
    if flip {
        Ok((second, first, half))
    } else {
        Ok((first, second, half))
    }
}

fn join<F: Scalar>(pass: &Tensor<F>, trans: &Tensor<F>, flip: bool) -> Result<Tensor<F>> {
    if flip {
        Tensor::concat_cols(&[trans, pass])
    } else {
        Tensor::concat_cols(&[pass, trans])
    }
}

/// Shift-only conditioner network: conv -> GELU blocks ending in a
/// zero-initialized projection, so the coupling starts as the identity.
pub struct ShiftNet<F: Scalar> {
    pub layers: Vec<Conv1dLayer<F>>,
}

impl<F: Scalar> ShiftNet<F> {
    pub fn new<R: Rng>(rng: &mut R, channels: usize, hidden: usize, depth: usize, kernel: usize) -> Self {
        assert!(depth >= 1);
        let mut layers = Vec::with_capacity(depth);
        if depth == 1 {
            layers.push(Conv1dLayer::zeroed(channels, channels, kernel, 1, 1));
        } else {
            layers.push(Conv1dLayer::new(rng, channels, hidden, kernel, 1, 1));
            for _ in 1..depth - 1 {
                layers.push(Conv1dLayer::new(rng, hidden, hidden, kernel, 1, 1));
            }
            layers.push(Conv1dLayer::zeroed(hidden, channels, kernel, 1, 1));
        }
        ShiftNet { layers }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = h.gelu()?;
            }
        }
        Ok(h)
    }

    pub fn parameters(&self, prefix: &str) -> Vec<(String, Tensor<F>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.parameters(&format!("{prefix}.{i}")))
            .collect()
    }
}

/// Additive coupling: the transformed half gets a data-dependent shift and
/// the Jacobian determinant is identically one.
pub struct AffineCoupling<F: Scalar> {
    pub net: ShiftNet<F>,
    pub flip: bool,
    pub channels: usize,
    pub hidden: usize,
    pub depth: usize,
    pub kernel: usize,
}

impl<F: Scalar> AffineCoupling<F> {
    pub fn new<R: Rng>(
        rng: &mut R,
        channels: usize,
        hidden: usize,
        depth: usize,
        kernel: usize,
        flip: bool,
    ) -> Result<Self> {
        if !channels.is_multiple_of(2) || channels == 0 {
            return Err(Error::invalid(format!(
                "affine coupling: channel count must be even and positive, got {channels}"
            )));
        }
        Ok(AffineCoupling {
            net: ShiftNet::new(rng, channels / 2, hidden, depth, kernel),
            flip,
            channels,
            hidden,
            depth,
            kernel,
        })
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>)> {
        let (pass, trans, _) = split(x, self.flip)?;
        let shift = self.net.forward(&pass)?;
        let moved = trans.add(&shift)?;
        Ok((join(&pass, &moved, self.flip)?, Tensor::scalar(F::zero())))
    }

    pub fn inverse(&self, y: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>)> {
        let (pass, moved, _) = split(y, self.flip)?;
        let shift = self.net.forward(&pass)?;
        let trans = moved.sub(&shift)?;
        Ok((join(&pass, &trans, self.flip)?, Tensor::scalar(F::zero())))
    }

    pub fn parameters(&self, prefix: &str) -> Vec<(String, Tensor<F>)> {
        self.net.parameters(&format!("{prefix}.shift"))
    }
}

/// Spline coupling: the pass-through half (plus an optional condition added
/// in hidden space) runs through a 1x1 conv and a DDSConv block, then a
/// zero-initialized projection emits `3K - 1` raw spline channels per
/// transformed channel.
pub struct SplineCoupling<F: Scalar> {
    pub pre: Conv1dLayer<F>,
    pub block: DdsConvBlock<F>,
    pub proj: Conv1dLayer<F>,
    pub flip: bool,
    pub channels: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub bins: usize,
    pub bound: F,
    pub min_bin: F,
}

impl<F: Scalar> SplineCoupling<F> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        rng: &mut R,
        channels: usize,
        hidden: usize,
        kernel: usize,
        bins: usize,
        bound: F,
        min_bin: F,
        flip: bool,
    ) -> Result<Self> {
        if !channels.is_multiple_of(2) || channels == 0 {
            return Err(Error::invalid(format!(
                "spline coupling: channel count must be even and positive, got {channels}"
            )));
        }
        let half = channels / 2;
        let p = 3 * bins - 1;
        Ok(SplineCoupling {
            pre: Conv1dLayer::new(rng, half, hidden, 1, 1, 1),
            block: DdsConvBlock::new(rng, hidden, kernel, 3),
            proj: Conv1dLayer::zeroed(hidden, half * p, 1, 1, 1),
            flip,
            channels,
            hidden,
            kernel,
            bins,
            bound,
            min_bin,
        })
    }

    fn raw_params(&self, pass: &Tensor<F>, cond: Option<&Tensor<F>>) -> Result<Tensor<F>> {
        let mut h = self.pre.forward(pass)?;
        if let Some(c) = cond {
            h = h.add(c)?;
        }
        let h = self.block.forward(&h)?;
        self.proj.forward(&h)
    }

    pub fn forward(&self, x: &Tensor<F>, cond: Option<&Tensor<F>>) -> Result<(Tensor<F>, Tensor<F>)> {
        let (y, rows) = self.forward_rows(x, cond)?;
        Ok((y, rows.sum()?))
    }

    /// Forward pass reporting the log-determinant per sequence position
    /// (`[T, 1]`). The layer Jacobian is diagonal over positions for the
    /// transformed half, so the scalar logdet is the sum of these rows.
    pub fn forward_rows(
        &self,
        x: &Tensor<F>,
        cond: Option<&Tensor<F>>,
    ) -> Result<(Tensor<F>, Tensor<F>)> {
        let (pass, trans, half) = split(x, self.flip)?;
        let raw = self.raw_params(&pass, cond)?;
        let p = 3 * self.bins - 1;
        let mut cols = Vec::with_capacity(half);
        let mut row_logdet: Option<Tensor<F>> = None;
        for ch in 0..half {
            let xc = trans.slice_cols(ch, ch + 1)?;
            let raw_c = raw.slice_cols(ch * p, (ch + 1) * p)?;
            let yc = xc.spline_value(&raw_c, self.bins, self.bound, self.min_bin)?;
            let ld = xc.spline_logdet(&raw_c, self.bins, self.bound, self.min_bin)?;
            row_logdet = Some(match row_logdet {
                None => ld,
                Some(acc) => acc.add(&ld)?,
            });
            cols.push(yc);
        }
        let refs: Vec<&Tensor<F>> = cols.iter().collect();
        let moved = Tensor::concat_cols(&refs)?;
        Ok((join(&pass, &moved, self.flip)?, row_logdet.expect("half >= 1")))
    }

    /// Inverse transform; not differentiable (sampling only).
    pub fn inverse(&self, y: &Tensor<F>, cond: Option<&Tensor<F>>) -> Result<(Tensor<F>, Tensor<F>)> {
        let (pass, moved, half) = split(y, self.flip)?;
        let raw = self.raw_params(&pass, cond)?;
        let p = 3 * self.bins - 1;
        let t_len = moved.shape()[0];
        let raw_v = raw.values();
        let moved_v = moved.values();
        let mut out = vec![F::zero(); t_len * half];
        let mut logdet = F::zero();
        for t in 0..t_len {
            for ch in 0..half {
                let row = &raw_v[t * (half * p) + ch * p..t * (half * p) + (ch + 1) * p];
                let (x, ld) =
                    rq_kernel_inverse(moved_v[t * half + ch], row, self.bins, self.bound, self.min_bin);
                out[t * half + ch] = x;
                logdet += ld;
            }
        }
        let trans = Tensor::new(out, &[t_len, half])?;
        Ok((join(&pass, &trans, self.flip)?, Tensor::scalar(logdet)))
    }

    pub fn parameters(&self, prefix: &str) -> Vec<(String, Tensor<F>)> {
        let mut out = self.pre.parameters(&format!("{prefix}.pre"));
        out.extend(self.block.parameters(&format!("{prefix}.dds")));
        out.extend(self.proj.parameters(&format!("{prefix}.proj")));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn affine_zero_net_is_identity_with_zero_logdet() {
        let mut rng = seeded(1);
        let layer = AffineCoupling::<f64>::new(&mut rng, 4, 8, 1, 3, false).unwrap();
        // depth 1 => single zero-initialized conv => zero shift
        let x = Tensor::randn(&mut rng, &[6, 4]);
        let (y, ld) = layer.forward(&x).unwrap();
        assert_eq!(y.values(), x.values());
        assert_eq!(ld.item(), 0.0);
    }

    #[test]
    fn affine_constant_shift_moves_transformed_half() {
        let mut rng = seeded(2);
        let layer = AffineCoupling::<f64>::new(&mut rng, 2, 4, 1, 1, false).unwrap();
        // depth-1 net is a zeroed 1x1 conv; set its bias to +1
        layer.net.layers[0].bias.set_data(vec![1.0]).unwrap();
        let x = Tensor::new(vec![0.5, 2.0, -0.25, 3.0], &[2, 2]).unwrap();
        let (y, _) = layer.forward(&x).unwrap();
        assert_eq!(y.values(), vec![0.5, 3.0, -0.25, 4.0]);
    }

    #[test]
    fn affine_roundtrip_is_exact() {
        let mut rng = seeded(3);
        let layer = AffineCoupling::<f64>::new(&mut rng, 4, 8, 2, 3, true).unwrap();
        crate::nn::randomize_parameters(&layer.parameters("l"), &mut rng, 0.5);
        let x = Tensor::randn(&mut rng, &[5, 4]);
        let (y, ld_f) = layer.forward(&x).unwrap();
        let (back, ld_i) = layer.inverse(&y).unwrap();
        for (a, b) in x.values().iter().zip(back.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(ld_f.item(), 0.0);
        assert_eq!(ld_i.item(), 0.0);
    }

    #[test]
    fn spline_coupling_roundtrip() {
        let mut rng = seeded(4);
        let layer = SplineCoupling::<f64>::new(&mut rng, 2, 8, 3, 10, 5.0, 1e-3, false).unwrap();
        crate::nn::randomize_parameters(&layer.parameters("l"), &mut rng, 0.4);
        let x = Tensor::randn(&mut rng, &[7, 2]);
        let (y, ld_f) = layer.forward(&x, None).unwrap();
        let (back, ld_i) = layer.inverse(&y, None).unwrap();
        for (a, b) in x.values().iter().zip(back.values()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!((ld_f.item() + ld_i.item()).abs() < 1e-9);
    }

    #[test]
    fn odd_channel_count_rejected() {
        let mut rng = seeded(5);
        assert!(AffineCoupling::<f64>::new(&mut rng, 3, 4, 2, 3, false).is_err());
        assert!(SplineCoupling::<f64>::new(&mut rng, 3, 4, 3, 10, 5.0, 1e-3, false).is_err());
    }
}
