//! Monotonic alignment search over a token-by-frame log-likelihood matrix,
//! an exhaustive oracle for small instances, and duration extraction.
//!
//! A valid alignment maps every latent frame to exactly one token, visits
//! tokens in order starting at the first and ending at the last, and never
//! skips one. The search maximizes the summed log-likelihood over all such
//! paths by dynamic programming.

use crate::dist::DiagGaussian;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Finite stand-in for -inf entries so comparisons never see NaN.
const NEG_SENTINEL: f64 = -1e30;

/// `[t_x, t_y]` matrix whose `(i, j)` entry is the log-likelihood of latent
/// frame `j` under the Gaussian of token `i`.
#[derive(Debug, Clone)]
pub struct LikelihoodMatrix<F: Scalar> {
    t_x: usize,
    t_y: usize,
    values: Vec<F>,
}

impl<F: Scalar> LikelihoodMatrix<F> {
    /// Rejects NaN and empty dimensions; -inf entries are clamped to a large
    /// negative finite sentinel. Requires at least one frame per token.
    pub fn new(values: Vec<F>, t_x: usize, t_y: usize) -> Result<Self> {
        if t_x == 0 || t_y == 0 || values.len() != t_x * t_y {
            return Err(Error::invalid(format!(
                "likelihood matrix: bad dimensions {t_x}x{t_y} for {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("likelihood matrix: NaN entry"));
        }
        if t_y < t_x {
            return Err(Error::NoValidPath { t_x, t_y });
        }
        let sentinel = F::of_f64(NEG_SENTINEL);
        let values = values
            .into_iter()
            .map(|v| if v < sentinel { sentinel } else { v })
            .collect();
        Ok(LikelihoodMatrix { t_x, t_y, values })
    }

    pub fn t_x(&self) -> usize {
        self.t_x
    }

    pub fn t_y(&self) -> usize {
        self.t_y
    }

    pub fn at(&self, i: usize, j: usize) -> F {
        self.values[i * self.t_y + j]
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }
}

/// Hard monotonic alignment stored as the token index of each frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentPath {
    t_x: usize,
    rows: Vec<usize>,
}

impl AlignmentPath {
    pub fn new(t_x: usize, rows: Vec<usize>) -> Result<Self> {
        let path = AlignmentPath { t_x, rows };
        path.validate()?;
        Ok(path)
    }

    pub fn t_x(&self) -> usize {
        self.t_x
    }

    pub fn t_y(&self) -> usize {
        self.rows.len()
    }

    /// Token index per frame.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    /// Monotone, non-skipping, surjective, one token per frame.
    pub fn validate(&self) -> Result<()> {
        let t_y = self.rows.len();
        if self.t_x == 0 || t_y == 0 {
            return Err(Error::invalid("alignment path: empty"));
        }
        if self.rows[0] != 0 {
            return Err(Error::invalid("alignment path: must start at token 0"));
        }
        if self.rows[t_y - 1] != self.t_x - 1 {
            return Err(Error::invalid("alignment path: must end at the last token"));
        }
        for w in self.rows.windows(2) {
            if w[1] != w[0] && w[1] != w[0] + 1 {
                return Err(Error::invalid(
                    "alignment path: token index must be nondecreasing without skips",
                ));
            }
        }
        Ok(())
    }

    /// Dense 0/1 matrix, row-major `[t_x, t_y]`.
    pub fn to_matrix(&self) -> Vec<u8> {
        let t_y = self.rows.len();
        let mut m = vec![0u8; self.t_x * t_y];
        for (j, &i) in self.rows.iter().enumerate() {
            m[i * t_y + j] = 1;
        }
        m
    }

    pub fn from_matrix(m: &[u8], t_x: usize, t_y: usize) -> Result<Self> {
        if m.len() != t_x * t_y {
            return Err(Error::invalid("alignment path: bad matrix size"));
        }
        let mut rows = Vec::with_capacity(t_y);
        for j in 0..t_y {
            let mut hit = None;
            for i in 0..t_x {
                if m[i * t_y + j] != 0 {
                    if hit.is_some() {
                        return Err(Error::invalid(format!(
                            "alignment path: column {j} has multiple entries"
                        )));
                    }
                    hit = Some(i);
                }
            }
            rows.push(hit.ok_or_else(|| {
                Error::invalid(format!("alignment path: column {j} has no entry"))
            })?);
        }
        Self::new(t_x, rows)
    }
}

/// Summed log-likelihood selected by a path, accumulated in frame order.
pub fn path_score<F: Scalar>(value: &LikelihoodMatrix<F>, path: &AlignmentPath) -> F {
    path.rows()
        .iter()
        .enumerate()
        .fold(F::zero(), |acc, (j, &i)| acc + value.at(i, j))
}

/// Best monotonic non-skipping alignment by forward dynamic programming
/// with backtracking. Ties during backtracking stay on the current token.
pub fn mas<F: Scalar>(value: &LikelihoodMatrix<F>) -> Result<AlignmentPath> {
    let (t_x, t_y) = (value.t_x(), value.t_y());
    if t_y < t_x {
        return Err(Error::NoValidPath { t_x, t_y });
    }
    let neg_inf = F::neg_infinity();
    let mut q = vec![neg_inf; t_x * t_y];

    for y in 0..t_y {
        // Only tokens reachable at frame y can ever finish a valid path.
        let x_lo = t_x.saturating_sub(t_y - y);
        let x_hi = t_x.min(y + 1);
        for x in x_lo..x_hi {
            if y == 0 {
                q[x * t_y] = value.at(x, 0);
            } else {
                let v_prev = if x == 0 { neg_inf } else { q[(x - 1) * t_y + y - 1] };
                let v_cur = q[x * t_y + y - 1];
                q[x * t_y + y] = value.at(x, y) + if v_prev > v_cur { v_prev } else { v_cur };
            }
        }
    }

    let mut rows = vec![0usize; t_y];
    let mut index = t_x - 1;
    for y in (0..t_y).rev() {
        rows[y] = index;
        if index != 0 && (index == y || q[index * t_y + y - 1] < q[(index - 1) * t_y + y - 1]) {
            index -= 1;
        }
    }
    let path = AlignmentPath { t_x, rows };
    path.validate()?;
    Ok(path)
}

/// Exhaustive search over every valid alignment. Instances are capped so the
/// enumeration stays small; intended as an oracle for [`mas`].
pub fn mas_bruteforce<F: Scalar>(value: &LikelihoodMatrix<F>) -> Result<(F, Vec<AlignmentPath>)> {
    let (t_x, t_y) = (value.t_x(), value.t_y());
    if t_x > 8 || t_y > 12 {
        return Err(Error::invalid(format!(
            "brute force capped at 8x12, got {t_x}x{t_y}"
        )));
    }
    if t_y < t_x {
        return Err(Error::NoValidPath { t_x, t_y });
    }

    // Enumerate positive durations d_1..d_tx summing to t_y.
    let mut best_score = F::neg_infinity();
    let mut best: Vec<AlignmentPath> = Vec::new();
    let mut durations = vec![1usize; t_x];

    fn recurse<F: Scalar>(
        value: &LikelihoodMatrix<F>,
        durations: &mut Vec<usize>,
        token: usize,
        remaining: usize,
        best_score: &mut F,
        best: &mut Vec<AlignmentPath>,
    ) {
        let t_x = value.t_x();
        if token == t_x - 1 {
            durations[token] = remaining;
            let mut rows = Vec::with_capacity(value.t_y());
            for (i, &d) in durations.iter().enumerate() {
                rows.extend(std::iter::repeat_n(i, d));
            }
            let path = AlignmentPath { t_x, rows };
            let score = path_score(value, &path);
            if score > *best_score {
                *best_score = score;
                best.clear();
                best.push(path);
            } else if score == *best_score {
                best.push(path);
            }
            return;
        }
        let tokens_left = t_x - token - 1;
        for d in 1..=remaining - tokens_left {
            durations[token] = d;
            recurse(value, durations, token + 1, remaining - d, best_score, best);
        }
    }

    recurse(value, &mut durations, 0, t_y, &mut best_score, &mut best);
    Ok((best_score, best))
}

/// Per-token durations: row sums of the alignment matrix.
pub fn durations_from_path(path: &AlignmentPath) -> Result<Vec<usize>> {
    path.validate()?;
    let mut d = vec![0usize; path.t_x()];
    for &i in path.rows() {
        d[i] += 1;
    }
    Ok(d)
}

/// Entry `(i, j)` is the factorized Gaussian log-likelihood of latent frame
/// `z[j, :]` under token `i`'s mean and scale.
pub fn build_likelihood_matrix<F: Scalar>(
    z: &Tensor<F>,
    prior: &DiagGaussian<F>,
) -> Result<LikelihoodMatrix<F>> {
    let [t_y, c] = z.shape() else {
        return Err(Error::invalid(format!(
            "likelihood matrix: z must be [t_y, C], got {:?}",
            z.shape()
        )));
    };
    let (t_y, c) = (*t_y, *c);
    let [t_x, c2] = prior.mu.shape() else {
        return Err(Error::invalid(format!(
            "likelihood matrix: prior must be [t_x, C], got {:?}",
            prior.mu.shape()
        )));
    };
    let (t_x, c2) = (*t_x, *c2);
    if c != c2 {
        return Err(Error::ShapeMismatch {
            op: "build_likelihood_matrix",
            lhs: z.shape().to_vec(),
            rhs: prior.mu.shape().to_vec(),
        });
    }
    let zv = z.values();
    let mu = prior.mu.values();
    let sigma = prior.sigma.values();
    let half_ln_2pi = F::of_f64(0.5 * 1.837_877_066_409_345_5);
    let half = F::of_f64(0.5);

    let mut values = vec![F::zero(); t_x * t_y];
    for i in 0..t_x {
        for j in 0..t_y {
            let mut acc = F::zero();
            for ch in 0..c {
                let s = sigma[i * c + ch];
                let r = zv[j * c + ch] - mu[i * c + ch];
                acc = acc - half_ln_2pi - s.ln() - half * r * r / (s * s);
            }
            values[i * t_y + j] = acc;
        }
    }
    LikelihoodMatrix::new(values, t_x, t_y)
}
