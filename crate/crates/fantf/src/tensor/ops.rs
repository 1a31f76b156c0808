//! Differentiable tensor operations.
//!
//! Each method computes the forward value, then records a closure with the
//! analytic backward rule. Backward closures capture cheap clones of the
//! tensors they need (storage is shared), never the tape itself.

use super::tape::Tape;
use super::{strides, Tensor};
use crate::error::{FantfError, Result};
use crate::rng::RngState;

/// Additive value for masked attention scores; large enough to underflow to
/// an exact zero weight after softmax, small enough to stay finite.
pub const CAUSAL_MASK_VALUE: f64 = -1e9;

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(FantfError::Dimension(format!(
            "{op}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Reorders `data` (row-major over `shape`) by the axis permutation `perm`.
fn permute_data(shape: &[usize], data: &[f64], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let mapped: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = vec![0.0; data.len()];
    let mut idx = vec![0usize; out_shape.len()];
    for slot in out.iter_mut() {
        let src: usize = idx.iter().zip(&mapped).map(|(&i, &s)| i * s).sum();
        *slot = data[src];
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

impl Tape {
    // ---- elementwise -----------------------------------------------------

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        same_shape("add", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_parts(a.shape().to_vec(), data, false);
        Ok(self.record(
            &[a, b],
            out,
            Box::new(|g| vec![g.to_vec(), g.to_vec()]),
        ))
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        same_shape("sub", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::from_parts(a.shape().to_vec(), data, false);
        Ok(self.record(
            &[a, b],
            out,
            Box::new(|g| vec![g.to_vec(), g.iter().map(|v| -v).collect()]),
        ))
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        same_shape("mul", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_parts(a.shape().to_vec(), data, false);
        let (ac, bc) = (a.clone(), b.clone());
        Ok(self.record(
            &[a, b],
            out,
            Box::new(move |g| {
                let da = g.iter().zip(bc.data()).map(|(g, y)| g * y).collect();
                let db = g.iter().zip(ac.data()).map(|(g, x)| g * x).collect();
                vec![da, db]
            }),
        ))
    }

    pub fn scale(&self, x: &Tensor, c: f64) -> Result<Tensor> {
        let data = x.data().iter().map(|v| v * c).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data, false);
        Ok(self.record(
            &[x],
            out,
            Box::new(move |g| vec![g.iter().map(|v| v * c).collect()]),
        ))
    }

    pub fn neg(&self, x: &Tensor) -> Result<Tensor> {
        self.scale(x, -1.0)
    }

    /// Multiplies `x` elementwise by a single-element tensor `s`. The
    /// gradient w.r.t. `s` is the full contraction `sum(g * x)`, which is what
    /// makes a learnable scalar gate differentiable.
    pub fn scale_by_scalar(&self, x: &Tensor, s: &Tensor) -> Result<Tensor> {
        if s.len() != 1 {
            return Err(FantfError::Dimension(format!(
                "scale_by_scalar: scale must be a single element, got shape {:?}",
                s.shape()
            )));
        }
        let sv = s.data()[0];
        let data = x.data().iter().map(|v| v * sv).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data, false);
        let xc = x.clone();
        Ok(self.record(
            &[x, s],
            out,
            Box::new(move |g| {
                let dx = g.iter().map(|v| v * sv).collect();
                let ds = g.iter().zip(xc.data()).map(|(g, x)| g * x).sum();
                vec![dx, vec![ds]]
            }),
        ))
    }

    /// Adds a rank-1 bias over the last axis of `x`.
    pub fn add_bias(&self, x: &Tensor, b: &Tensor) -> Result<Tensor> {
        let last = *x.shape().last().expect("non-empty shape");
        if b.rank() != 1 || b.len() != last {
            return Err(FantfError::Dimension(format!(
                "add_bias: bias shape {:?} does not match last extent of {:?}",
                b.shape(),
                x.shape()
            )));
        }
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(last) {
            for (v, bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
        let out = Tensor::from_parts(x.shape().to_vec(), data, false);
        Ok(self.record(
            &[x, b],
            out,
            Box::new(move |g| {
                let mut db = vec![0.0; last];
                for row in g.chunks(last) {
                    for (d, gv) in db.iter_mut().zip(row) {
                        *d += gv;
                    }
                }
                vec![g.to_vec(), db]
            }),
        ))
    }

    // ---- shape -----------------------------------------------------------

    /// Copies `x` into a new shape with the same element count.
    pub fn reshape(&self, x: &Tensor, new_shape: &[usize]) -> Result<Tensor> {
        let count: usize = new_shape.iter().product();
        if new_shape.is_empty() || count != x.len() {
            return Err(FantfError::Dimension(format!(
                "reshape: cannot view {:?} as {:?}",
                x.shape(),
                new_shape
            )));
        }
        let out = Tensor::from_parts(new_shape.to_vec(), x.data().to_vec(), false);
        Ok(self.record(&[x], out, Box::new(|g| vec![g.to_vec()])))
    }

    /// Axis permutation (copying). `perm` must be a permutation of `0..rank`.
    pub fn permute(&self, x: &Tensor, perm: &[usize]) -> Result<Tensor> {
        let rank = x.rank();
        let mut seen = vec![false; rank];
        let valid = perm.len() == rank
            && perm.iter().all(|&p| {
                if p >= rank || seen[p] {
                    false
                } else {
                    seen[p] = true;
                    true
                }
            });
        if !valid {
            return Err(FantfError::Dimension(format!(
                "permute: {perm:?} is not a permutation of axes of {:?}",
                x.shape()
            )));
        }
        let (out_shape, out_data) = permute_data(x.shape(), x.data(), perm);
        let out = Tensor::from_parts(out_shape.clone(), out_data, false);
        let inv = inverse_perm(perm);
        Ok(self.record(
            &[x],
            out,
            Box::new(move |g| vec![permute_data(&out_shape, g, &inv).1]),
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() < 2 {
            return Err(FantfError::Dimension(format!(
                "transpose_last2: rank {} < 2",
                x.rank()
            )));
        }
        let mut perm: Vec<usize> = (0..x.rank()).collect();
        perm.swap(x.rank() - 2, x.rank() - 1);
        self.permute(x, &perm)
    }

    // ---- linear algebra ---------------------------------------------------

    /// Batched matrix product. Both arguments must have equal leading
    /// (batch) extents; the trailing two axes multiply as `[m,k] x [k,n]`.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ash, bsh) = (a.shape(), b.shape());
        let compatible = ash.len() >= 2
            && bsh.len() == ash.len()
            && ash[..ash.len() - 2] == bsh[..bsh.len() - 2]
            && ash[ash.len() - 1] == bsh[bsh.len() - 2];
        if !compatible {
            return Err(FantfError::Dimension(format!(
                "matmul: incompatible shapes {ash:?} x {bsh:?}"
            )));
        }
        let m = ash[ash.len() - 2];
        let k = ash[ash.len() - 1];
        let n = bsh[bsh.len() - 1];
        let batch: usize = ash[..ash.len() - 2].iter().product();

        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let (ao, bo, co) = (bi * m * k, bi * k * n, bi * m * n);
            for i in 0..m {
                let arow = &a.data()[ao + i * k..ao + (i + 1) * k];
                let crow = &mut out[co + i * n..co + (i + 1) * n];
                for (p, &av) in arow.iter().enumerate() {
                    let brow = &b.data()[bo + p * n..bo + (p + 1) * n];
                    for (cv, bv) in crow.iter_mut().zip(brow) {
                        *cv += av * bv;
                    }
                }
            }
        }

        let mut out_shape = ash.to_vec();
        out_shape[ash.len() - 2] = m;
        out_shape[ash.len() - 1] = n;
        let out = Tensor::from_parts(out_shape, out, false);
        let (ac, bc) = (a.clone(), b.clone());
        Ok(self.record(
            &[a, b],
            out,
            Box::new(move |g| {
                let mut da = vec![0.0; ac.len()];
                let mut db = vec![0.0; bc.len()];
                for bi in 0..batch {
                    let (ao, bo, co) = (bi * m * k, bi * k * n, bi * m * n);
                    // dA = g . B^T
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            let grow = &g[co + i * n..co + (i + 1) * n];
                            let brow = &bc.data()[bo + p * n..bo + (p + 1) * n];
                            for (gv, bv) in grow.iter().zip(brow) {
                                s += gv * bv;
                            }
                            da[ao + i * k + p] = s;
                        }
                    }
                    // dB = A^T . g
                    for i in 0..m {
                        let grow = &g[co + i * n..co + (i + 1) * n];
                        for p in 0..k {
                            let av = ac.data()[ao + i * k + p];
                            let dbrow = &mut db[bo + p * n..bo + (p + 1) * n];
                            for (dv, gv) in dbrow.iter_mut().zip(grow) {
                                *dv += av * gv;
                            }
                        }
                    }
                }
                vec![da, db]
            }),
        ))
    }

    /// `x @ w (+ b)` over the last axis of `x`: `x` is `[..., in]`, `w` is
    /// `[in, out]`. Leading axes are flattened for the product and restored.
    pub fn linear(&self, x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
        if x.rank() < 2 || w.rank() != 2 {
            return Err(FantfError::Dimension(format!(
                "linear: need x rank >= 2 and rank-2 weight, got {:?} and {:?}",
                x.shape(),
                w.shape()
            )));
        }
        let in_dim = *x.shape().last().unwrap();
        if w.shape()[0] != in_dim {
            return Err(FantfError::Dimension(format!(
                "linear: input extent {in_dim} does not match weight {:?}",
                w.shape()
            )));
        }
        let rows = x.len() / in_dim;
        let x2 = self.reshape(x, &[rows, in_dim])?;
        let mut y = self.matmul(&x2, w)?;
        if let Some(b) = b {
            y = self.add_bias(&y, b)?;
        }
        let mut out_shape = x.shape()[..x.rank() - 1].to_vec();
        out_shape.push(w.shape()[1]);
        self.reshape(&y, &out_shape)
    }

    // ---- nonlinearities ----------------------------------------------------

    /// `max(0, x)`; the subgradient at exactly 0 is taken as 0.
    pub fn relu(&self, x: &Tensor) -> Result<Tensor> {
        let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let mask: Vec<f64> = x.data().iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data, false);
        Ok(self.record(
            &[x],
            out,
            Box::new(move |g| vec![g.iter().zip(&mask).map(|(g, m)| g * m).collect()]),
        ))
    }

    /// `|x|`; the subgradient at exactly 0 is taken as 0.
    pub fn abs(&self, x: &Tensor) -> Result<Tensor> {
        let data = x.data().iter().map(|v| v.abs()).collect();
        let sign: Vec<f64> = x
            .data()
            .iter()
            .map(|&v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data, false);
        Ok(self.record(
            &[x],
            out,
            Box::new(move |g| vec![g.iter().zip(&sign).map(|(g, s)| g * s).collect()]),
        ))
    }

    /// Row-wise softmax over the last axis, computed with the max-subtraction
    /// trick. Rejects non-finite inputs.
    pub fn softmax_lastdim(&self, x: &Tensor) -> Result<Tensor> {
        if !x.data().iter().all(|v| v.is_finite()) {
            return Err(FantfError::Numeric("softmax: non-finite input".into()));
        }
        let last = *x.shape().last().expect("non-empty shape");
        let mut y = vec![0.0; x.len()];
        for (yrow, xrow) in y.chunks_mut(last).zip(x.data().chunks(last)) {
            let max = xrow.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (yv, xv) in yrow.iter_mut().zip(xrow) {
                *yv = (xv - max).exp();
                sum += *yv;
            }
            for yv in yrow.iter_mut() {
                *yv /= sum;
            }
        }
        let out = Tensor::from_parts(x.shape().to_vec(), y, false);
        let yc = out.clone();
        Ok(self.record(
            &[x],
            out.clone(),
            Box::new(move |g| {
                // dx = y * (g - <g, y>) per row
                let mut dx = vec![0.0; g.len()];
                for ((dxrow, grow), yrow) in dx
                    .chunks_mut(last)
                    .zip(g.chunks(last))
                    .zip(yc.data().chunks(last))
                {
                    let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                    for ((d, g), y) in dxrow.iter_mut().zip(grow).zip(yrow) {
                        *d = y * (g - dot);
                    }
                }
                vec![dx]
            }),
        ))
    }

    /// Row-wise standardization over the last axis using the population
    /// variance: `(x - mean) / sqrt(var + eps)`. No learned affine terms.
    pub fn layer_norm_lastdim(&self, x: &Tensor, eps: f64) -> Result<Tensor> {
        let last = *x.shape().last().expect("non-empty shape");
        if last < 2 {
            return Err(FantfError::Dimension(format!(
                "layer_norm: last extent {last} is degenerate; need >= 2"
            )));
        }
        if !(eps > 0.0) {
            return Err(FantfError::Parameter(format!(
                "layer_norm: eps must be > 0, got {eps}"
            )));
        }
        let rows = x.len() / last;
        let mut y = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        for (r, (yrow, xrow)) in y.chunks_mut(last).zip(x.data().chunks(last)).enumerate() {
            let mean = xrow.iter().sum::<f64>() / last as f64;
            let var = xrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / last as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for (yv, xv) in yrow.iter_mut().zip(xrow) {
                *yv = (xv - mean) * inv;
            }
        }
        let out = Tensor::from_parts(x.shape().to_vec(), y, false);
        let yc = out.clone();
        Ok(self.record(
            &[x],
            out.clone(),
            Box::new(move |g| {
                // dx = inv * (g - mean(g) - y * mean(g .* y)) per row
                let mut dx = vec![0.0; g.len()];
                for (r, ((dxrow, grow), yrow)) in dx
                    .chunks_mut(last)
                    .zip(g.chunks(last))
                    .zip(yc.data().chunks(last))
                    .enumerate()
                {
                    let d = last as f64;
                    let mg = grow.iter().sum::<f64>() / d;
                    let mgy = grow.iter().zip(yrow).map(|(g, y)| g * y).sum::<f64>() / d;
                    for ((dv, g), y) in dxrow.iter_mut().zip(grow).zip(yrow) {
                        *dv = inv_std[r] * (g - mg - y * mgy);
                    }
                }
                vec![dx]
            }),
        ))
    }

    // ---- reductions --------------------------------------------------------

    pub fn sum_all(&self, x: &Tensor) -> Result<Tensor> {
        let s: f64 = x.data().iter().sum();
        let n = x.len();
        let out = Tensor::from_parts(vec![1], vec![s], false);
        Ok(self.record(&[x], out, Box::new(move |g| vec![vec![g[0]; n]])))
    }

    pub fn mean_all(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.len();
        let s: f64 = x.data().iter().sum();
        let out = Tensor::from_parts(vec![1], vec![s / n as f64], false);
        Ok(self.record(
            &[x],
            out,
            Box::new(move |g| vec![vec![g[0] / n as f64; n]]),
        ))
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(&self, x: &Tensor, axis: usize) -> Result<Tensor> {
        if axis >= x.rank() || x.rank() < 2 {
            return Err(FantfError::Dimension(format!(
                "mean_axis: axis {axis} invalid for shape {:?}",
                x.shape()
            )));
        }
        let shape = x.shape();
        let outer: usize = shape[..axis].iter().product();
        let ext = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for t in 0..ext {
                let base = (o * ext + t) * inner;
                for i in 0..inner {
                    out[o * inner + i] += x.data()[base + i];
                }
            }
        }
        for v in out.iter_mut() {
            *v /= ext as f64;
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        let out = Tensor::from_parts(out_shape, out, false);
        let n_in = x.len();
        Ok(self.record(
            &[x],
            out,
            Box::new(move |g| {
                let mut dx = vec![0.0; n_in];
                for o in 0..outer {
                    for t in 0..ext {
                        let base = (o * ext + t) * inner;
                        for i in 0..inner {
                            dx[base + i] = g[o * inner + i] / ext as f64;
                        }
                    }
                }
                vec![dx]
            }),
        ))
    }

    // ---- structure ---------------------------------------------------------

    /// Contiguous slice `[start, start+len)` of the last axis.
    pub fn slice_lastdim(&self, x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        let last = *x.shape().last().expect("non-empty shape");
        if len == 0 || start + len > last {
            return Err(FantfError::Dimension(format!(
                "slice_lastdim: [{start}, {}) out of range for extent {last}",
                start + len
            )));
        }
        let rows = x.len() / last;
        let mut out = vec![0.0; rows * len];
        for r in 0..rows {
            out[r * len..(r + 1) * len]
                .copy_from_slice(&x.data()[r * last + start..r * last + start + len]);
        }
        let mut out_shape = x.shape().to_vec();
        *out_shape.last_mut().unwrap() = len;
        let out = Tensor::from_parts(out_shape, out, false);
        let n_in = x.len();
        Ok(self.record(
            &[x],
            out,
            Box::new(move |g| {
                let mut dx = vec![0.0; n_in];
                for r in 0..rows {
                    dx[r * last + start..r * last + start + len]
                        .copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                vec![dx]
            }),
        ))
    }

    /// Concatenation along the last axis; leading extents must agree.
    pub fn concat_lastdim(&self, parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(FantfError::Contract("concat_lastdim: no inputs".into()));
        }
        let lead = &parts[0].shape()[..parts[0].rank() - 1];
        for p in parts {
            if p.rank() != lead.len() + 1 || &p.shape()[..p.rank() - 1] != lead {
                return Err(FantfError::Dimension(format!(
                    "concat_lastdim: leading extents differ: {:?} vs {:?}",
                    parts[0].shape(),
                    p.shape()
                )));
            }
        }
        let lasts: Vec<usize> = parts.iter().map(|p| *p.shape().last().unwrap()).collect();
        let total: usize = lasts.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = vec![0.0; rows * total];
        for r in 0..rows {
            let mut off = 0;
            for (p, &l) in parts.iter().zip(&lasts) {
                out[r * total + off..r * total + off + l]
                    .copy_from_slice(&p.data()[r * l..(r + 1) * l]);
                off += l;
            }
        }
        let mut out_shape = lead.to_vec();
        out_shape.push(total);
        let out = Tensor::from_parts(out_shape, out, false);
        Ok(self.record(
            parts,
            out,
            Box::new(move |g| {
                let mut grads: Vec<Vec<f64>> =
                    lasts.iter().map(|&l| vec![0.0; rows * l]).collect();
                for r in 0..rows {
                    let mut off = 0;
                    for (dp, &l) in grads.iter_mut().zip(&lasts) {
                        dp[r * l..(r + 1) * l]
                            .copy_from_slice(&g[r * total + off..r * total + off + l]);
                        off += l;
                    }
                }
                grads
            }),
        ))
    }

    /// Overwrites entries above the diagonal of each trailing square matrix
    /// with [`CAUSAL_MASK_VALUE`], blocking attention to future positions.
    pub fn apply_causal_mask(&self, scores: &Tensor) -> Result<Tensor> {
        let rank = scores.rank();
        if rank < 2 || scores.shape()[rank - 1] != scores.shape()[rank - 2] {
            return Err(FantfError::Dimension(format!(
                "apply_causal_mask: trailing axes of {:?} are not square",
                scores.shape()
            )));
        }
        let n = scores.shape()[rank - 1];
        let mut data = scores.data().to_vec();
        for block in data.chunks_mut(n * n) {
            for i in 0..n {
                for j in (i + 1)..n {
                    block[i * n + j] = CAUSAL_MASK_VALUE;
                }
            }
        }
        let out = Tensor::from_parts(scores.shape().to_vec(), data, false);
        Ok(self.record(
            &[scores],
            out,
            Box::new(move |g| {
                let mut dx = g.to_vec();
                for block in dx.chunks_mut(n * n) {
                    for i in 0..n {
                        for j in (i + 1)..n {
                            block[i * n + j] = 0.0;
                        }
                    }
                }
                vec![dx]
            }),
        ))
    }

    // ---- regularization ------------------------------------------------------

    /// Inverted dropout: keeps each entry with probability `1 - p`, scaling
    /// kept entries by `1/(1-p)`. Identity outside training or when `p == 0`.
    pub fn dropout(
        &self,
        x: &Tensor,
        p: f64,
        rng: &mut RngState,
        training: bool,
    ) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(FantfError::Parameter(format!(
                "dropout: p must be in [0, 1), got {p}"
            )));
        }
        if !training || p == 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.next_f64() >= p { keep } else { 0.0 })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data, false);
        Ok(self.record(
            &[x],
            out,
            Box::new(move |g| vec![g.iter().zip(&mask).map(|(g, m)| g * m).collect()]),
        ))
    }

    // ---- losses ---------------------------------------------------------------

    /// Mean over the batch of `logsumexp(row) - row[target]`, the standard
    /// numerically stable cross entropy on unnormalized logits.
    pub fn cross_entropy_logits(&self, logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
        if logits.rank() != 2 {
            return Err(FantfError::Dimension(format!(
                "cross_entropy: logits must be rank 2, got {:?}",
                logits.shape()
            )));
        }
        let (b, c) = (logits.shape()[0], logits.shape()[1]);
        if targets.len() != b {
            return Err(FantfError::Dimension(format!(
                "cross_entropy: {b} rows but {} targets",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(FantfError::Contract(format!(
                "cross_entropy: class index {bad} out of range for {c} classes"
            )));
        }
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for (r, row) in logits.data().chunks(c).enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (pv, xv) in probs[r * c..(r + 1) * c].iter_mut().zip(row) {
                *pv = (xv - max).exp();
                sum += *pv;
            }
            for pv in probs[r * c..(r + 1) * c].iter_mut() {
                *pv /= sum;
            }
            let lse = max + sum.ln();
            loss += lse - row[targets[r]];
        }
        loss /= b as f64;
        let out = Tensor::from_parts(vec![1], vec![loss], false);
        let targets = targets.to_vec();
        Ok(self.record(
            &[logits],
            out,
            Box::new(move |g| {
                let scale = g[0] / b as f64;
                let mut dx = vec![0.0; b * c];
                for r in 0..b {
                    for j in 0..c {
                        let onehot = if j == targets[r] { 1.0 } else { 0.0 };
                        dx[r * c + j] = scale * (probs[r * c + j] - onehot);
                    }
                }
                vec![dx]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    // ---- matmul ----

    #[test]
    fn matmul_hand_oracle_2x2() {
        // [[1,2],[3,4]] . [[5,6],[7,8]] = [[19,22],[43,50]]
        let tape = Tape::new();
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        let c = tape.matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_identity_and_zero() {
        let tape = Tape::new();
        let a = t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 4.0, -1.0]);
        let eye = t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let c = tape.matmul(&a, &eye).unwrap();
        assert_eq!(c.data(), a.data());
        let z = Tensor::zeros(&[3, 4]);
        let c = tape.matmul(&a, &z).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_rejects_mismatch_naming_both_shapes() {
        let tape = Tape::new();
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2, 2], &[0.0; 4]);
        let err = tape.matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn matmul_matches_triple_loop_oracle_8x8() {
        let mut rng = RngState::new(31);
        let a = rng.sample_uniform(&[8, 8], -1.0, 1.0);
        let b = rng.sample_uniform(&[8, 8], -1.0, 1.0);
        let tape = Tape::new();
        let c = tape.matmul(&a, &b).unwrap();
        // independent i-j-p loop
        for i in 0..8 {
            for j in 0..8 {
                let mut s = 0.0;
                for p in 0..8 {
                    s += a.data()[i * 8 + p] * b.data()[p * 8 + j];
                }
                let got = c.data()[i * 8 + j];
                let rel = (got - s).abs() / s.abs().max(1.0);
                assert!(rel < 1e-12, "({i},{j}): {got} vs {s}");
            }
        }
    }

    #[test]
    fn batched_matmul_equals_per_batch_products() {
        let mut rng = RngState::new(77);
        let a = rng.sample_uniform(&[3, 2, 4, 5], -1.0, 1.0);
        let b = rng.sample_uniform(&[3, 2, 5, 3], -1.0, 1.0);
        let tape = Tape::new();
        let c = tape.matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[3, 2, 4, 3]);
        for bi in 0..6 {
            let a2 = t(&[4, 5], &a.data()[bi * 20..(bi + 1) * 20]);
            let b2 = t(&[5, 3], &b.data()[bi * 15..(bi + 1) * 15]);
            let c2 = tape.matmul(&a2, &b2).unwrap();
            assert_eq!(&c.data()[bi * 12..(bi + 1) * 12], c2.data());
        }
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = RngState::new(5);
        let b = rng.sample_uniform(&[3, 2], -1.0, 1.0);
        let a0 = rng.sample_uniform(&[2, 3], -1.0, 1.0);
        let bc = b.clone();
        let err = grad_check(
            move |tape, a| {
                let c = tape.matmul(a, &bc)?;
                tape.sum_all(&tape.mul(&c, &c)?)
            },
            &a0,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "max rel err {err}");
    }

    // ---- softmax ----

    #[test]
    fn softmax_closed_form() {
        // x = [ln 2, 0]: weights are [2/(2+1), 1/(2+1)]
        let tape = Tape::new();
        let x = t(&[2], &[2.0_f64.ln(), 0.0]);
        let y = tape.softmax_lastdim(&x).unwrap();
        assert!((y.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((y.data()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut rng = RngState::new(4);
        let x = rng.sample_uniform(&[5, 7], -30.0, 30.0);
        let shifted =
            Tensor::new(&[5, 7], x.data().iter().map(|v| v + 123.25).collect()).unwrap();
        let tape = Tape::new();
        let y = tape.softmax_lastdim(&x).unwrap();
        let ys = tape.softmax_lastdim(&shifted).unwrap();
        for row in y.data().chunks(7) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(y.max_abs_diff(&ys) < 1e-12);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let tape = Tape::new();
        let x = t(&[2], &[f64::NAN, 0.0]);
        assert!(matches!(
            tape.softmax_lastdim(&x),
            Err(FantfError::Numeric(_))
        ));
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let mut rng = RngState::new(6);
        let x0 = rng.sample_uniform(&[3, 4], -2.0, 2.0);
        let w = rng.sample_uniform(&[3, 4], -1.0, 1.0);
        let wc = w.clone();
        let err = grad_check(
            move |tape, x| {
                let y = tape.softmax_lastdim(x)?;
                tape.sum_all(&tape.mul(&y, &wc)?)
            },
            &x0,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "max rel err {err}");
    }

    // ---- layer norm ----

    #[test]
    fn layer_norm_two_point_slice() {
        // x = [1,3]: mean 2, population var 1 => y ~ [-1, 1] as eps -> 0
        let tape = Tape::new();
        let x = t(&[2], &[1.0, 3.0]);
        let y = tape.layer_norm_lastdim(&x, 1e-12).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-9);
        assert!((y.data()[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn layer_norm_constant_slice_maps_to_zero() {
        let tape = Tape::new();
        let x = t(&[3], &[5.0, 5.0, 5.0]);
        let y = tape.layer_norm_lastdim(&x, 1e-5).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let mut rng = RngState::new(12);
        let x = rng.sample_uniform(&[4, 16], -5.0, 5.0);
        let tape = Tape::new();
        let y = tape.layer_norm_lastdim(&x, 1e-12).unwrap();
        for row in y.data().chunks(16) {
            let mean: f64 = row.iter().sum::<f64>() / 16.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-9, "var {var}");
        }
    }

    #[test]
    fn layer_norm_rejects_degenerate_slice_and_bad_eps() {
        let tape = Tape::new();
        let x = t(&[3, 1], &[1.0, 2.0, 3.0]);
        assert!(matches!(
            tape.layer_norm_lastdim(&x, 1e-5),
            Err(FantfError::Dimension(_))
        ));
        let x = t(&[2], &[1.0, 2.0]);
        assert!(matches!(
            tape.layer_norm_lastdim(&x, 0.0),
            Err(FantfError::Parameter(_))
        ));
    }

    #[test]
    fn layer_norm_gradient_matches_finite_differences() {
        let mut rng = RngState::new(8);
        let x0 = rng.sample_uniform(&[2, 6], -3.0, 3.0);
        let w = rng.sample_uniform(&[2, 6], -1.0, 1.0);
        let wc = w.clone();
        let err = grad_check(
            move |tape, x| {
                let y = tape.layer_norm_lastdim(x, 1e-5)?;
                tape.sum_all(&tape.mul(&y, &wc)?)
            },
            &x0,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "max rel err {err}");
    }

    // ---- relu / abs ----

    #[test]
    fn relu_values_and_subgradient_at_zero() {
        let tape = Tape::new();
        let x = Tensor::param(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = tape.relu(&x).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let s = tape.sum_all(&y).unwrap();
        tape.backward(&s).unwrap();
        // subgradient at the kink is 0 by convention
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn abs_subgradient_is_sign_with_zero_at_zero() {
        let tape = Tape::new();
        let x = Tensor::param(&[3], vec![-2.5, 0.0, 4.0]).unwrap();
        let y = tape.abs(&x).unwrap();
        assert_eq!(y.data(), &[2.5, 0.0, 4.0]);
        let s = tape.sum_all(&y).unwrap();
        tape.backward(&s).unwrap();
        assert_eq!(x.grad().unwrap(), vec![-1.0, 0.0, 1.0]);
    }

    // ---- reductions ----

    #[test]
    fn sum_and_mean_values_and_grads() {
        let tape = Tape::new();
        let x = Tensor::param(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = tape.sum_all(&x).unwrap();
        assert_eq!(s.item().unwrap(), 10.0);
        tape.backward(&s).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);

        let tape = Tape::new();
        let m = tape.mean_all(&x).unwrap();
        assert_eq!(m.item().unwrap(), 2.5);
        tape.backward(&m).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn mean_axis_oracle_and_grad() {
        // [2,3] mean over axis 1: rows [1,2,3] and [4,5,6] -> [2, 5]
        let tape = Tape::new();
        let x = Tensor::param(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let m = tape.mean_axis(&x, 1).unwrap();
        assert_eq!(m.shape(), &[2]);
        assert_eq!(m.data(), &[2.0, 5.0]);
        let s = tape.sum_all(&m).unwrap();
        tape.backward(&s).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0 / 3.0; 6]);

        // middle axis of a rank-3 tensor
        let tape = Tape::new();
        let x = t(&[2, 2, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let m = tape.mean_axis(&x, 1).unwrap();
        assert_eq!(m.shape(), &[2, 2]);
        assert_eq!(m.data(), &[2.0, 3.0, 6.0, 7.0]);
    }

    // ---- shape ops ----

    #[test]
    fn permute_transposes_and_inverts() {
        let tape = Tape::new();
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let xt = tape.permute(&x, &[1, 0]).unwrap();
        assert_eq!(xt.shape(), &[3, 2]);
        assert_eq!(xt.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let back = tape.permute(&xt, &[1, 0]).unwrap();
        assert_eq!(back.data(), x.data());
        assert!(tape.permute(&x, &[0, 0]).is_err());
        assert!(tape.permute(&x, &[0]).is_err());
    }

    #[test]
    fn permute_rank4_head_split_layout() {
        // [B=1, N=2, h=2, d=2] -> [B, h, N, d]
        let tape = Tape::new();
        let x = t(&[1, 2, 2, 2], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let y = tape.permute(&x, &[0, 2, 1, 3]).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 2]);
        // head 0 holds token slices [0,1] and [4,5]; head 1 holds [2,3], [6,7]
        assert_eq!(y.data(), &[0.0, 1.0, 4.0, 5.0, 2.0, 3.0, 6.0, 7.0]);
    }

    #[test]
    fn permute_gradient_matches_finite_differences() {
        let mut rng = RngState::new(9);
        let x0 = rng.sample_uniform(&[2, 3, 4], -1.0, 1.0);
        let w = rng.sample_uniform(&[4, 2, 3], -1.0, 1.0);
        let wc = w.clone();
        let err = grad_check(
            move |tape, x| {
                let y = tape.permute(x, &[2, 0, 1])?;
                tape.sum_all(&tape.mul(&y, &wc)?)
            },
            &x0,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "max rel err {err}");
    }

    #[test]
    fn reshape_roundtrip_preserves_data_and_grad() {
        let tape = Tape::new();
        let x = Tensor::param(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = tape.reshape(&x, &[3, 2]).unwrap();
        assert_eq!(y.data(), x.data());
        assert!(tape.reshape(&x, &[4, 2]).is_err());
        let s = tape.sum_all(&y).unwrap();
        tape.backward(&s).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn slice_concat_roundtrip() {
        let tape = Tape::new();
        let x = Tensor::param(&[2, 4], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let a = tape.slice_lastdim(&x, 0, 2).unwrap();
        let b = tape.slice_lastdim(&x, 2, 2).unwrap();
        assert_eq!(a.data(), &[1.0, 2.0, 5.0, 6.0]);
        assert_eq!(b.data(), &[3.0, 4.0, 7.0, 8.0]);
        let back = tape.concat_lastdim(&[&a, &b]).unwrap();
        assert_eq!(back.data(), x.data());
        assert!(tape.slice_lastdim(&x, 3, 2).is_err());

        // gradient of sum through the roundtrip is all ones
        let s = tape.sum_all(&back).unwrap();
        tape.backward(&s).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 8]);
    }

    // ---- bias / scalar gate ----

    #[test]
    fn add_bias_broadcasts_and_sums_grad() {
        let tape = Tape::new();
        let x = Tensor::param(&[2, 3], vec![0.0; 6]).unwrap();
        let b = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = tape.add_bias(&x, &b).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let s = tape.sum_all(&y).unwrap();
        tape.backward(&s).unwrap();
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0, 2.0]);
        let bad = Tensor::new(&[2], vec![0.0; 2]).unwrap();
        assert!(tape.add_bias(&x, &bad).is_err());
    }

    #[test]
    fn scale_by_scalar_grad_is_contraction() {
        // y = s * x, L = sum(y): dL/ds = sum(x), dL/dx = s
        let tape = Tape::new();
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let s = Tensor::param(&[1], vec![0.5]).unwrap();
        let y = tape.scale_by_scalar(&x, &s).unwrap();
        assert_eq!(y.data(), &[0.5, 1.0, 1.5]);
        let l = tape.sum_all(&y).unwrap();
        tape.backward(&l).unwrap();
        assert_eq!(s.grad().unwrap(), vec![6.0]);
        assert_eq!(x.grad().unwrap(), vec![0.5; 3]);
    }

    // ---- causal mask ----

    #[test]
    fn causal_mask_overwrites_strict_upper_triangle() {
        let tape = Tape::new();
        let x = Tensor::param(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = tape.apply_causal_mask(&x).unwrap();
        assert_eq!(y.data(), &[1.0, CAUSAL_MASK_VALUE, 3.0, 4.0]);
        let s = tape.sum_all(&y).unwrap();
        tape.backward(&s).unwrap();
        // no gradient flows through the overwritten entry
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 1.0, 1.0]);

        let one = t(&[1, 1], &[7.0]);
        let y = tape.apply_causal_mask(&one).unwrap();
        assert_eq!(y.data(), &[7.0]);

        let rect = t(&[2, 3], &[0.0; 6]);
        assert!(tape.apply_causal_mask(&rect).is_err());
    }

    // ---- dropout ----

    #[test]
    fn dropout_identity_cases() {
        let tape = Tape::new();
        let mut rng = RngState::new(3);
        let x = t(&[4], &[1.0, 2.0, 3.0, 4.0]);
        let y = tape.dropout(&x, 0.0, &mut rng, true).unwrap();
        assert_eq!(y.data(), x.data());
        let y = tape.dropout(&x, 0.5, &mut rng, false).unwrap();
        assert_eq!(y.data(), x.data());
        assert!(tape.dropout(&x, 1.0, &mut rng, true).is_err());
    }

    #[test]
    fn dropout_scales_kept_entries_and_is_seeded() {
        let tape = Tape::new();
        let x = Tensor::full(&[1000], 1.0);
        let p = 0.25;
        let y1 = tape
            .dropout(&x, p, &mut RngState::new(10), true)
            .unwrap();
        let y2 = tape
            .dropout(&x, p, &mut RngState::new(10), true)
            .unwrap();
        assert_eq!(y1.data(), y2.data());
        let keep = 1.0 / (1.0 - p);
        let mut kept = 0;
        for &v in y1.data() {
            assert!(v == 0.0 || (v - keep).abs() < 1e-15);
            kept += (v != 0.0) as usize;
        }
        // 1000 Bernoulli(0.75) draws: expect ~750, generous bounds
        assert!((650..850).contains(&kept), "kept {kept}");
    }

    // ---- cross entropy ----

    #[test]
    fn cross_entropy_uniform_logits_is_log_c() {
        let tape = Tape::new();
        let logits = t(&[1, 4], &[0.0; 4]);
        let l = tape.cross_entropy_logits(&logits, &[2]).unwrap();
        assert!((l.item().unwrap() - 4.0_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_grad_is_probs_minus_onehot_over_batch() {
        let tape = Tape::new();
        let logits = Tensor::param(&[2, 3], vec![0.1, -0.4, 0.2, 1.0, 0.0, -1.0]).unwrap();
        let l = tape.cross_entropy_logits(&logits, &[0, 2]).unwrap();
        tape.backward(&l).unwrap();
        let g = logits.grad().unwrap();
        // recompute softmax rows by hand
        for (r, &tgt) in [0usize, 2].iter().enumerate() {
            let row = &logits.data()[r * 3..(r + 1) * 3];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for j in 0..3 {
                let want = (e[j] / s - if j == tgt { 1.0 } else { 0.0 }) / 2.0;
                assert!((g[r * 3 + j] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cross_entropy_rejects_bad_class_index() {
        let tape = Tape::new();
        let logits = t(&[1, 3], &[0.0; 3]);
        let err = tape.cross_entropy_logits(&logits, &[3]).unwrap_err();
        assert!(err.to_string().contains("class index 3"), "{err}");
    }

    // ---- composite gradient sanity ----

    #[test]
    fn grad_of_sum_of_squares_is_two_w() {
        let tape = Tape::new();
        let w = Tensor::param(&[4], vec![1.5, -2.0, 0.0, 3.0]).unwrap();
        let y = tape.sum_all(&tape.mul(&w, &w).unwrap()).unwrap();
        tape.backward(&y).unwrap();
        assert_eq!(w.grad().unwrap(), vec![3.0, -4.0, 0.0, 6.0]);
    }

    #[test]
    fn linear_matches_manual_affine() {
        let tape = Tape::new();
        let x = t(&[2, 2, 2], &[1.0, 0.0, 0.0, 1.0, 2.0, 3.0, -1.0, 0.5]);
        let w = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(&[3], &[0.1, 0.2, 0.3]);
        let y = tape.linear(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.shape(), &[2, 2, 3]);
        // row [2,3]: [2*1+3*4, 2*2+3*5, 2*3+3*6] + b = [14.1, 19.2, 24.3]
        assert!((y.at(&[1, 0, 0]) - 14.1).abs() < 1e-12);
        assert!((y.at(&[1, 0, 1]) - 19.2).abs() < 1e-12);
        assert!((y.at(&[1, 0, 2]) - 24.3).abs() < 1e-12);
    }
}
