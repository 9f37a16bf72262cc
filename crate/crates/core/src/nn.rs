//! Small trainable building blocks over the tensor engine: 1-d convolution
//! layers, layer normalization, and the dilated depthwise-separable
//! residual block used by the duration predictor's encoders and couplings.

use rand::Rng;

use crate::error::Result;
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub struct Conv1dLayer<F: Scalar> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
    pub dilation: usize,
    pub groups: usize,
}

impl<F: Scalar> Conv1dLayer<F> {
    pub fn new<R: Rng>(
        rng: &mut R,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        groups: usize,
    ) -> Self {
        let c_in_g = c_in / groups;
        let fan_in = (c_in_g * kernel) as f64;
        let a = 1.0 / fan_in.sqrt();
        let w: Vec<F> = (0..c_out * c_in_g * kernel)
            .map(|_| rng::uniform(rng, -a, a))
            .collect();
        let b: Vec<F> = (0..c_out).map(|_| rng::uniform(rng, -a, a)).collect();
        Conv1dLayer {
            weight: Tensor::param(w, &[c_out, c_in_g, kernel]).expect("finite init"),
            bias: Tensor::param(b, &[c_out]).expect("finite init"),
            dilation,
            groups,
        }
    }

    /// All-zero weights; flows use this so couplings start as the identity.
    pub fn zeroed(c_in: usize, c_out: usize, kernel: usize, dilation: usize, groups: usize) -> Self {
        let c_in_g = c_in / groups;
        Conv1dLayer {
            weight: Tensor::param(vec![F::zero(); c_out * c_in_g * kernel], &[c_out, c_in_g, kernel])
                .expect("finite init"),
            bias: Tensor::param(vec![F::zero(); c_out], &[c_out]).expect("finite init"),
            dilation,
            groups,
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        x.conv1d(&self.weight, &self.bias, self.dilation, self.groups)
    }

    pub fn parameters(&self, prefix: &str) -> Vec<(String, Tensor<F>)> {
        vec![
            (format!("{prefix}.weight"), self.weight.clone()),
            (format!("{prefix}.bias"), self.bias.clone()),
        ]
    }
}

pub struct LayerNormLayer<F: Scalar> {
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
    pub eps: F,
}

impl<F: Scalar> LayerNormLayer<F> {
    pub fn new(channels: usize) -> Self {
        LayerNormLayer {
            gamma: Tensor::param(vec![F::one(); channels], &[channels]).expect("finite init"),
            beta: Tensor::param(vec![F::zero(); channels], &[channels]).expect("finite init"),
            eps: F::of_f64(1e-5),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        x.layer_norm(&self.gamma, &self.beta, self.eps)
    }

    pub fn parameters(&self, prefix: &str) -> Vec<(String, Tensor<F>)> {
        vec![
            (format!("{prefix}.gamma"), self.gamma.clone()),
            (format!("{prefix}.beta"), self.beta.clone()),
        ]
    }
}

struct DdsLayer<F: Scalar> {
    separable: Conv1dLayer<F>,
    norm_sep: LayerNormLayer<F>,
    pointwise: Conv1dLayer<F>,
    norm_point: LayerNormLayer<F>,
}

/// Residual block of dilated depthwise-separable convolutions. Each layer is
/// depthwise conv -> layer norm -> GELU -> 1x1 conv -> layer norm -> GELU,
/// added back onto its input. Dilations grow as kernel^0, kernel-spread
/// powers of 3: 1, 3, 9, ...
pub struct DdsConvBlock<F: Scalar> {
    layers: Vec<DdsLayer<F>>,
    pub channels: usize,
    pub kernel: usize,
}

impl<F: Scalar> DdsConvBlock<F> {
    pub fn new<R: Rng>(rng: &mut R, channels: usize, kernel: usize, n_layers: usize) -> Self {
        let mut layers = Vec::with_capacity(n_layers);
        let mut dilation = 1;
        for _ in 0..n_layers {
            layers.push(DdsLayer {
                separable: Conv1dLayer::new(rng, channels, channels, kernel, dilation, channels),
                norm_sep: LayerNormLayer::new(channels),
                pointwise: Conv1dLayer::new(rng, channels, channels, 1, 1, 1),
                norm_point: LayerNormLayer::new(channels),
            });
            dilation *= 3;
        }
        DdsConvBlock { layers, channels, kernel }
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut h = x.clone();
        for layer in &self.layers {
            let y = layer.separable.forward(&h)?;
            let y = layer.norm_sep.forward(&y)?.gelu()?;
            let y = layer.pointwise.forward(&y)?;
            let y = layer.norm_point.forward(&y)?.gelu()?;
            h = h.add(&y)?;
        }
        Ok(h)
    }

    pub fn parameters(&self, prefix: &str) -> Vec<(String, Tensor<F>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            out.extend(layer.separable.parameters(&format!("{prefix}.{i}.sep")));
            out.extend(layer.norm_sep.parameters(&format!("{prefix}.{i}.norm_sep")));
            out.extend(layer.pointwise.parameters(&format!("{prefix}.{i}.point")));
            out.extend(layer.norm_point.parameters(&format!("{prefix}.{i}.norm_point")));
        }
        out
    }
}

/// Condition encoder: 1x1 conv in, DDSConv residual block, 1x1 conv out.
pub struct CondEncoder<F: Scalar> {
    pre: Conv1dLayer<F>,
    block: DdsConvBlock<F>,
    post: Conv1dLayer<F>,
}

impl<F: Scalar> CondEncoder<F> {
    pub fn new<R: Rng>(rng: &mut R, c_in: usize, hidden: usize, kernel: usize) -> Self {
        CondEncoder {
            pre: Conv1dLayer::new(rng, c_in, hidden, 1, 1, 1),
            block: DdsConvBlock::new(rng, hidden, kernel, 3),
            post: Conv1dLayer::new(rng, hidden, hidden, 1, 1, 1),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let h = self.pre.forward(x)?;
        let h = self.block.forward(&h)?;
        self.post.forward(&h)
    }

    pub fn parameters(&self, prefix: &str) -> Vec<(String, Tensor<F>)> {
        let mut out = self.pre.parameters(&format!("{prefix}.pre"));
        out.extend(self.block.parameters(&format!("{prefix}.dds")));
        out.extend(self.post.parameters(&format!("{prefix}.post")));
        out
    }
}

/// Overwrite every parameter with scaled standard-normal draws (test helper
/// for "random parameter" sweeps).
pub fn randomize_parameters<F: Scalar, R: Rng>(
    params: &[(String, Tensor<F>)],
    rng: &mut R,
    scale: F,
) {
    for (_, p) in params {
        let data: Vec<F> = rng::normal_vec::<F, _>(rng, p.numel())
            .into_iter()
            .map(|v| v * scale)
            .collect();
        p.set_data(data).expect("leaf parameter");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dds_block_preserves_shape_and_dilations() {
        let mut rng = crate::rng::seeded(7);
        let block = DdsConvBlock::<f64>::new(&mut rng, 8, 3, 3);
        assert_eq!(block.layers[0].separable.dilation, 1);
        assert_eq!(block.layers[1].separable.dilation, 3);
        assert_eq!(block.layers[2].separable.dilation, 9);
        let x = Tensor::randn(&mut rng, &[12, 8]);
        let y = block.forward(&x).unwrap();
        assert_eq!(y.shape(), &[12, 8]);
    }

    #[test]
    fn cond_encoder_maps_input_width_to_hidden() {
        let mut rng = crate::rng::seeded(3);
        let enc = CondEncoder::<f64>::new(&mut rng, 5, 16, 3);
        let x = Tensor::randn(&mut rng, &[9, 5]);
        let y = enc.forward(&x).unwrap();
        assert_eq!(y.shape(), &[9, 16]);
    }
}
