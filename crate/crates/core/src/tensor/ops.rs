//! Differentiable primitives. Each op snapshots whatever its backward pass
//! needs at recording time, so later in-place updates of leaf data cannot
//! corrupt an existing graph.

use super::{op_result, Tensor};
use crate::error::{Error, Result};
use crate::flows::spline::rq_kernel;
use crate::scalar::{Dual, Scalar};

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl<F: Scalar> Tensor<F> {
    fn same_shape(&self, other: &Tensor<F>, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn binary_elementwise(
        &self,
        other: &Tensor<F>,
        op: &'static str,
        f: impl Fn(F, F) -> F,
        // (a, b) -> (df/da, df/db)
        df: impl Fn(F, F) -> (F, F) + 'static,
    ) -> Result<Tensor<F>> {
        self.same_shape(other, op)?;
        let out: Vec<F> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| f(*a, *b))
            .collect();
        let (a, b) = (self.clone(), other.clone());
        op_result(op, self.shape().to_vec(), out, vec![a.clone(), b.clone()], move || {
            let av = a.values();
            let bv = b.values();
            Box::new(move |g| {
                let mut ga = Vec::with_capacity(g.len());
                let mut gb = Vec::with_capacity(g.len());
                for i in 0..g.len() {
                    let (da, db) = df(av[i], bv[i]);
                    ga.push(g[i] * da);
                    gb.push(g[i] * db);
                }
                vec![ga, gb]
            })
        })
    }

    fn unary_elementwise(
        &self,
        op: &'static str,
        f: impl Fn(F) -> F,
        df: impl Fn(F) -> F + 'static,
    ) -> Result<Tensor<F>> {
        let out: Vec<F> = self.data().iter().map(|a| f(*a)).collect();
        let x = self.clone();
        op_result(op, self.shape().to_vec(), out, vec![x.clone()], move || {
            let xv = x.values();
            Box::new(move |g| {
                vec![g.iter().zip(&xv).map(|(g, x)| *g * df(*x)).collect()]
            })
        })
    }

    pub fn add(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.binary_elementwise(other, "add", |a, b| a + b, |_, _| (F::one(), F::one()))
    }

    pub fn sub(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.binary_elementwise(other, "sub", |a, b| a - b, |_, _| (F::one(), -F::one()))
    }

    pub fn mul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.binary_elementwise(other, "mul", |a, b| a * b, |a, b| (b, a))
    }

    pub fn div(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.binary_elementwise(
            other,
            "div",
            |a, b| a / b,
            |a, b| (F::one() / b, -a / (b * b)),
        )
    }

    pub fn add_scalar(&self, c: F) -> Result<Tensor<F>> {
        self.unary_elementwise("add_scalar", |a| a + c, |_| F::one())
    }

    pub fn mul_scalar(&self, c: F) -> Result<Tensor<F>> {
        self.unary_elementwise("mul_scalar", move |a| a * c, move |_| c)
    }

    pub fn neg(&self) -> Result<Tensor<F>> {
        self.mul_scalar(-F::one())
    }

    pub fn abs(&self) -> Result<Tensor<F>> {
        self.unary_elementwise(
            "abs",
            |a| a.abs(),
            |a| {
                if a > F::zero() {
                    F::one()
                } else if a < F::zero() {
                    -F::one()
                } else {
                    F::zero()
                }
            },
        )
    }

    pub fn square(&self) -> Result<Tensor<F>> {
        self.unary_elementwise("square", |a| a * a, |a| F::of_f64(2.0) * a)
    }

    /// Exact GELU: x * Phi(x) with the Gaussian CDF, not the tanh form.
    pub fn gelu(&self) -> Result<Tensor<F>> {
        fn phi<F: Scalar>(x: F) -> F {
            F::of_f64(0.5) * (F::one() + (x * F::of_f64(INV_SQRT_2)).erf())
        }
        fn pdf<F: Scalar>(x: F) -> F {
            F::of_f64(INV_SQRT_2PI) * (-x * x / F::of_f64(2.0)).exp()
        }
        self.unary_elementwise("gelu", |a| a * phi(a), |a| phi(a) + a * pdf(a))
    }

    pub fn sigmoid(&self) -> Result<Tensor<F>> {
        fn sig<F: Scalar>(x: F) -> F {
            if x >= F::zero() {
                F::one() / (F::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (F::one() + e)
            }
        }
        self.unary_elementwise("sigmoid", sig, |a| {
            let s = sig(a);
            s * (F::one() - s)
        })
    }

    pub fn softplus(&self) -> Result<Tensor<F>> {
        self.unary_elementwise(
            "softplus",
            crate::scalar::softplus_stable,
            |a| {
                if a >= F::zero() {
                    F::one() / (F::one() + (-a).exp())
                } else {
                    let e = a.exp();
                    e / (F::one() + e)
                }
            },
        )
    }

    pub fn log(&self) -> Result<Tensor<F>> {
        self.unary_elementwise("log", |a| a.ln(), |a| F::one() / a)
    }

    pub fn exp(&self) -> Result<Tensor<F>> {
        self.unary_elementwise("exp", |a| a.exp(), |a| a.exp())
    }

    pub fn sqrt(&self) -> Result<Tensor<F>> {
        self.unary_elementwise("sqrt", |a| a.sqrt(), |a| {
            F::one() / (F::of_f64(2.0) * a.sqrt())
        })
    }

    pub fn sum(&self) -> Result<Tensor<F>> {
        let total = self.data().iter().fold(F::zero(), |acc, v| acc + *v);
        let n = self.numel();
        op_result("sum", vec![1], vec![total], vec![self.clone()], move || {
            Box::new(move |g| vec![vec![g[0]; n]])
        })
    }

    pub fn mean(&self) -> Result<Tensor<F>> {
        let n = self.numel();
        if n == 0 {
            return Err(Error::invalid("mean: empty tensor"));
        }
        let inv = F::one() / F::of_usize(n);
        let total = self.data().iter().fold(F::zero(), |acc, v| acc + *v) * inv;
        op_result("mean", vec![1], vec![total], vec![self.clone()], move || {
            Box::new(move |g| vec![vec![g[0] * inv; n]])
        })
    }

    /// Identity on values; gradients do not flow into the input.
    pub fn stop_gradient(&self) -> Tensor<F> {
        Tensor::new(self.values(), self.shape()).expect("existing tensor is valid")
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<F>> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        op_result(
            "reshape",
            shape.to_vec(),
            self.values(),
            vec![self.clone()],
            move || Box::new(move |g| vec![g.to_vec()]),
        )
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match *self.shape() {
            [r, c] => Ok((r, c)),
            _ => Err(Error::invalid(format!(
                "{op}: expected a 2-d tensor, got shape {:?}",
                self.shape()
            ))),
        }
    }

    /// Matrix product of two 2-d tensors.
    pub fn matmul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let av = self.data();
        let bv = other.data();
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            for p in 0..k {
                let a = av[i * k + p];
                for j in 0..n {
                    out[i * n + j] += a * bv[p * n + j];
                }
            }
        }
        drop(av);
        drop(bv);
        let (a, b) = (self.clone(), other.clone());
        op_result("matmul", vec![m, n], out, vec![a.clone(), b.clone()], move || {
            let av = a.values();
            let bv = b.values();
            Box::new(move |g| {
                // gA = g . B^T, gB = A^T . g
                let mut ga = vec![F::zero(); m * k];
                let mut gb = vec![F::zero(); k * n];
                for i in 0..m {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        for p in 0..k {
                            ga[i * k + p] += gij * bv[p * n + j];
                            gb[p * n + j] += av[i * k + p] * gij;
                        }
                    }
                }
                vec![ga, gb]
            })
        })
    }

    /// 1-d convolution over a `[T, C_in]` sequence with symmetric zero
    /// padding that preserves the sequence length.
    ///
    /// `weight` is `[C_out, C_in/groups, K]`, `bias` is `[C_out]`. Depthwise
    /// convolution is `groups == C_in`.
    pub fn conv1d(
        &self,
        weight: &Tensor<F>,
        bias: &Tensor<F>,
        dilation: usize,
        groups: usize,
    ) -> Result<Tensor<F>> {
        let (t_len, c_in) = self.dims2("conv1d")?;
        let wshape = weight.shape().to_vec();
        let [c_out, c_in_g, k] = wshape[..] else {
            return Err(Error::invalid(format!(
                "conv1d: weight must be [C_out, C_in/groups, K], got {:?}",
                wshape
            )));
        };
        if groups == 0 || dilation == 0 {
            return Err(Error::invalid("conv1d: groups and dilation must be >= 1"));
        }
        if c_in % groups != 0 || c_out % groups != 0 || c_in / groups != c_in_g {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: self.shape().to_vec(),
                rhs: wshape,
            });
        }
        if bias.shape() != [c_out] {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: vec![c_out],
                rhs: bias.shape().to_vec(),
            });
        }
        let span = (k - 1) * dilation;
        let pad = span / 2;
        let co_g = c_out / groups;

        let xv = self.data();
        let wv = weight.data();
        let bv = bias.data();
        let mut out = vec![F::zero(); t_len * c_out];
        for t in 0..t_len {
            for co in 0..c_out {
                let grp = co / co_g;
                let mut acc = bv[co];
                for ci_l in 0..c_in_g {
                    let ci = grp * c_in_g + ci_l;
                    for kk in 0..k {
                        let tin = t + kk * dilation;
                        if tin < pad || tin - pad >= t_len {
                            continue;
                        }
                        acc += wv[(co * c_in_g + ci_l) * k + kk] * xv[(tin - pad) * c_in + ci];
                    }
                }
                out[t * c_out + co] = acc;
            }
        }
        drop(xv);
        drop(wv);
        drop(bv);

        let (x, w, b) = (self.clone(), weight.clone(), bias.clone());
        op_result(
            "conv1d",
            vec![t_len, c_out],
            out,
            vec![x.clone(), w.clone(), b.clone()],
            move || {
                let xv = x.values();
                let wv = w.values();
                Box::new(move |g| {
                    let mut gx = vec![F::zero(); t_len * c_in];
                    let mut gw = vec![F::zero(); c_out * c_in_g * k];
                    let mut gb = vec![F::zero(); c_out];
                    for t in 0..t_len {
                        for co in 0..c_out {
                            let grp = co / co_g;
                            let go = g[t * c_out + co];
                            gb[co] += go;
                            for ci_l in 0..c_in_g {
                                let ci = grp * c_in_g + ci_l;
                                for kk in 0..k {
                                    let tin = t + kk * dilation;
                                    if tin < pad || tin - pad >= t_len {
                                        continue;
                                    }
                                    let widx = (co * c_in_g + ci_l) * k + kk;
                                    let xidx = (tin - pad) * c_in + ci;
                                    gx[xidx] += wv[widx] * go;
                                    gw[widx] += xv[xidx] * go;
                                }
                            }
                        }
                    }
                    vec![gx, gw, gb]
                })
            },
        )
    }

    /// Every row replaced by its mean; building block for layer norm.
    pub fn row_mean(&self) -> Result<Tensor<F>> {
        let (t_len, c) = self.dims2("row_mean")?;
        let inv = F::one() / F::of_usize(c);
        let xv = self.data();
        let mut out = vec![F::zero(); t_len * c];
        for t in 0..t_len {
            let m = xv[t * c..(t + 1) * c].iter().fold(F::zero(), |a, v| a + *v) * inv;
            out[t * c..(t + 1) * c].iter_mut().for_each(|o| *o = m);
        }
        drop(xv);
        op_result("row_mean", vec![t_len, c], out, vec![self.clone()], move || {
            Box::new(move |g| {
                let mut gx = vec![F::zero(); t_len * c];
                for t in 0..t_len {
                    let s = g[t * c..(t + 1) * c].iter().fold(F::zero(), |a, v| a + *v) * inv;
                    gx[t * c..(t + 1) * c].iter_mut().for_each(|o| *o = s);
                }
                vec![gx]
            })
        })
    }

    /// Broadcast multiply of each row by a `[C]` vector.
    pub fn mul_cols(&self, v: &Tensor<F>) -> Result<Tensor<F>> {
        let (t_len, c) = self.dims2("mul_cols")?;
        if v.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "mul_cols",
                lhs: self.shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        let xv = self.data();
        let vv = v.data();
        let out: Vec<F> = (0..t_len * c).map(|i| xv[i] * vv[i % c]).collect();
        drop(xv);
        drop(vv);
        let (x, vt) = (self.clone(), v.clone());
        op_result("mul_cols", vec![t_len, c], out, vec![x.clone(), vt.clone()], move || {
            let xv = x.values();
            let vv = vt.values();
            Box::new(move |g| {
                let gx: Vec<F> = (0..t_len * c).map(|i| g[i] * vv[i % c]).collect();
                let mut gv = vec![F::zero(); c];
                for i in 0..t_len * c {
                    gv[i % c] += g[i] * xv[i];
                }
                vec![gx, gv]
            })
        })
    }

    /// Broadcast add of a `[C]` vector to each row.
    pub fn add_cols(&self, v: &Tensor<F>) -> Result<Tensor<F>> {
        let (t_len, c) = self.dims2("add_cols")?;
        if v.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "add_cols",
                lhs: self.shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        let xv = self.data();
        let vv = v.data();
        let out: Vec<F> = (0..t_len * c).map(|i| xv[i] + vv[i % c]).collect();
        drop(xv);
        drop(vv);
        op_result(
            "add_cols",
            vec![t_len, c],
            out,
            vec![self.clone(), v.clone()],
            move || {
                Box::new(move |g| {
                    let mut gv = vec![F::zero(); c];
                    for i in 0..t_len * c {
                        gv[i % c] += g[i];
                    }
                    vec![g.to_vec(), gv]
                })
            },
        )
    }

    /// Layer normalization over the channel (last) axis with learned gain
    /// and bias. Composed from primitives, so gradients come for free.
    pub fn layer_norm(&self, gamma: &Tensor<F>, beta: &Tensor<F>, eps: F) -> Result<Tensor<F>> {
        let centered = self.sub(&self.row_mean()?)?;
        let var = centered.square()?.row_mean()?;
        let normed = centered.div(&var.add_scalar(eps)?.sqrt()?)?;
        normed.mul_cols(gamma)?.add_cols(beta)
    }

    /// Concatenate 2-d tensors along the channel (column) axis.
    pub fn concat_cols(parts: &[&Tensor<F>]) -> Result<Tensor<F>> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_cols: no inputs"));
        }
        let (t_len, _) = parts[0].dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (t2, c) = p.dims2("concat_cols")?;
            if t2 != t_len {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: parts[0].shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            widths.push(c);
        }
        let c_total: usize = widths.iter().sum();
        let mut out = vec![F::zero(); t_len * c_total];
        let mut offset = 0;
        for (p, &c) in parts.iter().zip(&widths) {
            let pv = p.data();
            for t in 0..t_len {
                out[t * c_total + offset..t * c_total + offset + c]
                    .copy_from_slice(&pv[t * c..(t + 1) * c]);
            }
            offset += c;
        }
        let parents: Vec<Tensor<F>> = parts.iter().map(|p| (*p).clone()).collect();
        let widths_c = widths.clone();
        op_result("concat_cols", vec![t_len, c_total], out, parents, move || {
            Box::new(move |g| {
                let mut grads = Vec::with_capacity(widths_c.len());
                let mut offset = 0;
                for &c in &widths_c {
                    let mut gp = vec![F::zero(); t_len * c];
                    for t in 0..t_len {
                        gp[t * c..(t + 1) * c]
                            .copy_from_slice(&g[t * c_total + offset..t * c_total + offset + c]);
                    }
                    grads.push(gp);
                    offset += c;
                }
                grads
            })
        })
    }

    /// Columns `start..end` of a 2-d tensor.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor<F>> {
        let (t_len, c) = self.dims2("slice_cols")?;
        if start >= end || end > c {
            return Err(Error::invalid(format!(
                "slice_cols: range {start}..{end} out of bounds for {c} columns"
            )));
        }
        let w = end - start;
        let xv = self.data();
        let mut out = vec![F::zero(); t_len * w];
        for t in 0..t_len {
            out[t * w..(t + 1) * w].copy_from_slice(&xv[t * c + start..t * c + end]);
        }
        drop(xv);
        op_result("slice_cols", vec![t_len, w], out, vec![self.clone()], move || {
            Box::new(move |g| {
                let mut gx = vec![F::zero(); t_len * c];
                for t in 0..t_len {
                    gx[t * c + start..t * c + end].copy_from_slice(&g[t * w..(t + 1) * w]);
                }
                vec![gx]
            })
        })
    }

    /// Monotonic rational-quadratic spline applied elementwise to a `[T, 1]`
    /// column, parameterized per element by a `[T, 3K-1]` raw tensor.
    /// Differentiable in both the input and the raw parameters.
    pub fn spline_value(
        &self,
        raw: &Tensor<F>,
        bins: usize,
        bound: F,
        min_bin: F,
    ) -> Result<Tensor<F>> {
        let (t_len, p) = spline_shapes(self, raw, bins)?;
        let xv = self.values();
        let rv = raw.values();
        let mut out = vec![F::zero(); t_len];
        for t in 0..t_len {
            let (y, _) = rq_kernel::<F, F>(xv[t], &rv[t * p..(t + 1) * p], bins, bound, min_bin);
            out[t] = y;
        }
        let (x, r) = (self.clone(), raw.clone());
        op_result(
            "spline_value",
            self.shape().to_vec(),
            out,
            vec![x.clone(), r.clone()],
            move || {
                Box::new(move |g| {
                    spline_backward(&xv, &rv, g, t_len, p, bins, bound, min_bin, false)
                })
            },
        )
    }

    /// Elementwise log |dy/dx| of the spline in [`Tensor::spline_value`].
    pub fn spline_logdet(
        &self,
        raw: &Tensor<F>,
        bins: usize,
        bound: F,
        min_bin: F,
    ) -> Result<Tensor<F>> {
        let (t_len, p) = spline_shapes(self, raw, bins)?;
        let xv = self.values();
        let rv = raw.values();
        let mut out = vec![F::zero(); t_len];
        for t in 0..t_len {
            let (_, ld) = rq_kernel::<F, F>(xv[t], &rv[t * p..(t + 1) * p], bins, bound, min_bin);
            out[t] = ld;
        }
        let (x, r) = (self.clone(), raw.clone());
        op_result(
            "spline_logdet",
            self.shape().to_vec(),
            out,
            vec![x.clone(), r.clone()],
            move || {
                Box::new(move |g| {
                    spline_backward(&xv, &rv, g, t_len, p, bins, bound, min_bin, true)
                })
            },
        )
    }
}

fn spline_shapes<F: Scalar>(
    x: &Tensor<F>,
    raw: &Tensor<F>,
    bins: usize,
) -> Result<(usize, usize)> {
    let t_len = x.numel();
    let ok_x = matches!(*x.shape(), [_] | [_, 1]);
    let p = 3 * bins - 1;
    if !ok_x || raw.shape() != [t_len, p] {
        return Err(Error::ShapeMismatch {
            op: "spline",
            lhs: x.shape().to_vec(),
            rhs: raw.shape().to_vec(),
        });
    }
    Ok((t_len, p))
}

/// Exact per-element Jacobian rows of the spline via dual numbers.
#[allow(clippy::too_many_arguments)]
fn spline_backward<F: Scalar>(
    xv: &[F],
    rv: &[F],
    g: &[F],
    t_len: usize,
    p: usize,
    bins: usize,
    bound: F,
    min_bin: F,
    logdet_output: bool,
) -> Vec<Vec<F>> {
    let mut gx = vec![F::zero(); t_len];
    let mut gr = vec![F::zero(); t_len * p];
    let pick = |pair: (Dual<F>, Dual<F>)| if logdet_output { pair.1 } else { pair.0 };
    let mut raw_dual: Vec<Dual<F>> = Vec::with_capacity(p);
    for t in 0..t_len {
        if g[t] == F::zero() {
            continue;
        }
        let raw_row = &rv[t * p..(t + 1) * p];
        raw_dual.clear();
        raw_dual.extend(raw_row.iter().map(|v| Dual::constant(*v)));

        // d(out)/dx
        let out = pick(rq_kernel::<F, Dual<F>>(
            Dual::seeded(xv[t]),
            &raw_dual,
            bins,
            bound,
            min_bin,
        ));
        gx[t] += g[t] * out.d;

        // d(out)/d(raw_j), one seeded pass per channel
        let x_const = Dual::constant(xv[t]);
        for j in 0..p {
            raw_dual[j].d = F::one();
            let out = pick(rq_kernel::<F, Dual<F>>(x_const, &raw_dual, bins, bound, min_bin));
            gr[t * p + j] += g[t] * out.d;
            raw_dual[j].d = F::zero();
        }
    }
    vec![gx, gr]
}
