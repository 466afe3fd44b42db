//! Differentiable operations.
//!
//! Each op computes its forward value eagerly and, when any input requires a
//! gradient, records a closure that maps the output gradient to input
//! gradients.

use rand::{Rng, RngCore};

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::{numel, Tensor};

/// Target value marking a position excluded from [`Tensor::cross_entropy`].
pub const IGNORE_INDEX: i64 = -1;

/// Row-major gemm where either operand may be stored transposed.
///
/// `a` is logically `m x k` (stored `k x m` when `a_t`), `b` is logically
/// `k x n` (stored `n x k` when `b_t`).
#[allow(clippy::too_many_arguments)]
fn gemm_rm<F: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[F],
    a_t: bool,
    b: &[F],
    b_t: bool,
    beta: F,
    c: &mut [F],
) {
    let a_strides = if a_t { (1, m) } else { (k, 1) };
    let b_strides = if b_t { (1, k) } else { (n, 1) };
    F::gemm(m, k, n, a, a_strides, b, b_strides, beta, c, (n, 1));
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

/// Splits `shape` around `axis` into (outer, axis extent, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

fn resolve_axis(op: &'static str, rank: usize, axis: isize) -> Result<usize> {
    let a = if axis < 0 { rank as isize + axis } else { axis };
    if a < 0 || a as usize >= rank {
        return Err(TensorError::Domain {
            op,
            msg: format!("axis {axis} invalid for rank {rank}"),
        });
    }
    Ok(a as usize)
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

/// Shift-stable softmax of a plain vector.
pub fn softmax_vec<F: Real>(x: &[F]) -> Result<Vec<F>> {
    if x.is_empty() {
        return Err(TensorError::Domain {
            op: "softmax",
            msg: "empty input".into(),
        });
    }
    let mut out = x.to_vec();
    softmax_row(&mut out);
    Ok(out)
}

fn softmax_row<F: Real>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn log_softmax_row<F: Real>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
    for v in row.iter_mut() {
        *v -= lse;
    }
}

pub(crate) fn sigmoid_scalar<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

impl<F: Real> Tensor<F> {
    // ---------------------------------------------------------------- linear algebra

    /// Matrix product.
    ///
    /// `self` is `[.., k]` and `rhs` is `[k, n]`, or both are batched
    /// `[b, m, k]` and `[b, k, n]`.
    pub fn matmul(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        self.matmul_ex(rhs, false)
    }

    /// Product with the transpose of `rhs`: `rhs` is `[n, k]` or `[b, n, k]`.
    pub fn matmul_t(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        self.matmul_ex(rhs, true)
    }

    fn matmul_ex(&self, rhs: &Tensor<F>, trans_b: bool) -> Result<Tensor<F>> {
        let (a_shape, b_shape) = (self.shape().to_vec(), rhs.shape().to_vec());
        let op = if trans_b { "matmul_t" } else { "matmul" };
        match (a_shape.len(), b_shape.len()) {
            (ra, 2) if ra >= 1 => {
                let (k, n) = if trans_b {
                    (b_shape[1], b_shape[0])
                } else {
                    (b_shape[0], b_shape[1])
                };
                if *a_shape.last().unwrap() != k {
                    return Err(shape_err(op, &a_shape, &b_shape));
                }
                let m = self.numel() / k;
                let mut out = vec![F::zero(); m * n];
                gemm_rm(m, k, n, &self.data(), false, &rhs.data(), trans_b, F::zero(), &mut out);
                let mut out_shape = a_shape[..a_shape.len() - 1].to_vec();
                out_shape.push(n);
                Ok(Tensor::from_op(
                    out,
                    out_shape,
                    op,
                    vec![self.clone(), rhs.clone()],
                    Box::new(move |g, _, p| {
                        let ga = p[0].requires_grad().then(|| {
                            // dA = dC * B^T  (or dC * B when B was transposed)
                            let mut ga = vec![F::zero(); m * k];
                            gemm_rm(m, n, k, g, false, &p[1].data(), !trans_b, F::zero(), &mut ga);
                            ga
                        });
                        let gb = p[1].requires_grad().then(|| {
                            let mut gb = vec![F::zero(); k * n];
                            if trans_b {
                                // dB[n,k] = dC^T * A
                                gemm_rm(n, m, k, g, true, &p[0].data(), false, F::zero(), &mut gb);
                            } else {
                                // dB[k,n] = A^T * dC
                                gemm_rm(k, m, n, &p[0].data(), true, g, false, F::zero(), &mut gb);
                            }
                            gb
                        });
                        vec![ga, gb]
                    }),
                ))
            }
            (3, 3) => {
                let (bt, m, k) = (a_shape[0], a_shape[1], a_shape[2]);
                let (kb, n) = if trans_b {
                    (b_shape[2], b_shape[1])
                } else {
                    (b_shape[1], b_shape[2])
                };
                if b_shape[0] != bt || kb != k {
                    return Err(shape_err(op, &a_shape, &b_shape));
                }
                let mut out = vec![F::zero(); bt * m * n];
                {
                    let (a, b) = (self.data(), rhs.data());
                    for i in 0..bt {
                        gemm_rm(
                            m,
                            k,
                            n,
                            &a[i * m * k..(i + 1) * m * k],
                            false,
                            &b[i * k * n..(i + 1) * k * n],
                            trans_b,
                            F::zero(),
                            &mut out[i * m * n..(i + 1) * m * n],
                        );
                    }
                }
                Ok(Tensor::from_op(
                    out,
                    vec![bt, m, n],
                    op,
                    vec![self.clone(), rhs.clone()],
                    Box::new(move |g, _, p| {
                        let ga = p[0].requires_grad().then(|| {
                            let b = p[1].data();
                            let mut ga = vec![F::zero(); bt * m * k];
                            for i in 0..bt {
                                gemm_rm(
                                    m,
                                    n,
                                    k,
                                    &g[i * m * n..(i + 1) * m * n],
                                    false,
                                    &b[i * k * n..(i + 1) * k * n],
                                    !trans_b,
                                    F::zero(),
                                    &mut ga[i * m * k..(i + 1) * m * k],
                                );
                            }
                            ga
                        });
                        let gb = p[1].requires_grad().then(|| {
                            let a = p[0].data();
                            let mut gb = vec![F::zero(); bt * k * n];
                            for i in 0..bt {
                                let gi = &g[i * m * n..(i + 1) * m * n];
                                let ai = &a[i * m * k..(i + 1) * m * k];
                                let out = &mut gb[i * k * n..(i + 1) * k * n];
                                if trans_b {
                                    gemm_rm(n, m, k, gi, true, ai, false, F::zero(), out);
                                } else {
                                    gemm_rm(k, m, n, ai, true, gi, false, F::zero(), out);
                                }
                            }
                            gb
                        });
                        vec![ga, gb]
                    }),
                ))
            }
            _ => Err(shape_err(op, &a_shape, &b_shape)),
        }
    }

    // ---------------------------------------------------------------- elementwise binary

    fn binary(&self, rhs: &Tensor<F>, kind: Binary) -> Result<Tensor<F>> {
        let op = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        let (a_shape, b_shape) = (self.shape(), rhs.shape());
        let broadcastable = rhs.numel() == 1
            || (b_shape.len() <= a_shape.len() && a_shape.ends_with(b_shape));
        if !broadcastable {
            return Err(shape_err(op, a_shape, b_shape));
        }
        let nb = rhs.numel();
        let out: Vec<F> = {
            let (a, b) = (self.data(), rhs.data());
            a.iter()
                .enumerate()
                .map(|(i, &x)| {
                    let y = b[i % nb];
                    match kind {
                        Binary::Add => x + y,
                        Binary::Sub => x - y,
                        Binary::Mul => x * y,
                    }
                })
                .collect()
        };
        Ok(Tensor::from_op(
            out,
            a_shape.to_vec(),
            op,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, _, p| {
                let ga = p[0].requires_grad().then(|| match kind {
                    Binary::Add | Binary::Sub => g.to_vec(),
                    Binary::Mul => {
                        let b = p[1].data();
                        g.iter().enumerate().map(|(i, &gi)| gi * b[i % nb]).collect()
                    }
                });
                let gb = p[1].requires_grad().then(|| {
                    let mut gb = vec![F::zero(); nb];
                    match kind {
                        Binary::Add => g.iter().enumerate().for_each(|(i, &gi)| gb[i % nb] += gi),
                        Binary::Sub => g.iter().enumerate().for_each(|(i, &gi)| gb[i % nb] -= gi),
                        Binary::Mul => {
                            let a = p[0].data();
                            g.iter()
                                .enumerate()
                                .for_each(|(i, &gi)| gb[i % nb] += gi * a[i]);
                        }
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Elementwise sum; `rhs` may be a scalar or a trailing-shape broadcast
    /// (e.g. a bias row).
    pub fn add(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        self.binary(rhs, Binary::Add)
    }

    pub fn sub(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        self.binary(rhs, Binary::Sub)
    }

    /// Elementwise product with the same broadcasting rule as [`add`](Self::add).
    pub fn mul(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        self.binary(rhs, Binary::Mul)
    }

    pub fn mul_scalar(&self, c: F) -> Tensor<F> {
        let out = self.data().iter().map(|&x| x * c).collect();
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            "mul_scalar",
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(g.iter().map(|&gi| gi * c).collect())]),
        )
    }

    // ---------------------------------------------------------------- elementwise unary

    fn unary(
        &self,
        name: &'static str,
        f: fn(F) -> F,
        df: fn(F, F) -> F,
    ) -> Tensor<F> {
        let out = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            name,
            vec![self.clone()],
            Box::new(move |g, y, p| {
                let x = p[0].data();
                vec![Some(
                    g.iter()
                        .zip(x.iter().zip(y))
                        .map(|(&gi, (&xi, &yi))| gi * df(xi, yi))
                        .collect(),
                )]
            }),
        )
    }

    pub fn tanh(&self) -> Tensor<F> {
        self.unary("tanh", |x| x.tanh(), |_, y| F::one() - y * y)
    }

    pub fn sigmoid(&self) -> Tensor<F> {
        self.unary("sigmoid", sigmoid_scalar, |_, y| y * (F::one() - y))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor<F> {
        fn inner<F: Real>(x: F) -> F {
            F::from_f64c((2.0 / std::f64::consts::PI).sqrt())
                * (x + F::from_f64c(0.044715) * x * x * x)
        }
        self.unary(
            "gelu",
            |x| F::from_f64c(0.5) * x * (F::one() + inner(x).tanh()),
            |x, _| {
                let half = F::from_f64c(0.5);
                let c = F::from_f64c((2.0 / std::f64::consts::PI).sqrt());
                let t = inner(x).tanh();
                let dinner = c * (F::one() + F::from_f64c(3.0 * 0.044715) * x * x);
                half * (F::one() + t) + half * x * (F::one() - t * t) * dinner
            },
        )
    }

    // ---------------------------------------------------------------- normalization

    /// Softmax over the last axis, computed shift-stably.
    pub fn softmax(&self) -> Tensor<F> {
        let d = *self.shape().last().unwrap();
        let mut out = self.to_vec();
        out.chunks_mut(d).for_each(softmax_row);
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            "softmax",
            vec![self.clone()],
            Box::new(move |g, y, _| {
                let mut gx = vec![F::zero(); g.len()];
                for ((gr, yr), out) in g.chunks(d).zip(y.chunks(d)).zip(gx.chunks_mut(d)) {
                    let dot: F = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((o, &gi), &yi) in out.iter_mut().zip(gr).zip(yr) {
                        *o = yi * (gi - dot);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Tensor<F> {
        let d = *self.shape().last().unwrap();
        let mut out = self.to_vec();
        out.chunks_mut(d).for_each(log_softmax_row);
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            "log_softmax",
            vec![self.clone()],
            Box::new(move |g, y, _| {
                let mut gx = vec![F::zero(); g.len()];
                for ((gr, yr), out) in g.chunks(d).zip(y.chunks(d)).zip(gx.chunks_mut(d)) {
                    let total: F = gr.iter().copied().sum();
                    for ((o, &gi), &yi) in out.iter_mut().zip(gr).zip(yr) {
                        *o = gi - yi.exp() * total;
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Layer normalization over the last axis followed by the affine map
    /// `gamma * x_hat + beta`.
    pub fn layer_norm(&self, gamma: &Tensor<F>, beta: &Tensor<F>, eps: f64) -> Result<Tensor<F>> {
        let d = *self.shape().last().unwrap();
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(shape_err("layer_norm", self.shape(), gamma.shape()));
        }
        let rows = self.numel() / d;
        let eps = F::from_f64c(eps);
        let dn = F::from_usize(d).unwrap();
        let mut x_hat = vec![F::zero(); self.numel()];
        let mut rstd = vec![F::zero(); rows];
        {
            let x = self.data();
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                let mean = row.iter().copied().sum::<F>() / dn;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / dn;
                let rs = F::one() / (var + eps).sqrt();
                rstd[r] = rs;
                for (o, &v) in x_hat[r * d..(r + 1) * d].iter_mut().zip(row) {
                    *o = (v - mean) * rs;
                }
            }
        }
        let out = {
            let (gm, bt) = (gamma.data(), beta.data());
            x_hat
                .iter()
                .enumerate()
                .map(|(i, &xh)| gm[i % d] * xh + bt[i % d])
                .collect()
        };
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            "layer_norm",
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, _, p| {
                let gm = p[1].data();
                let gx = p[0].requires_grad().then(|| {
                    let mut gx = vec![F::zero(); g.len()];
                    for r in 0..rows {
                        let span = r * d..(r + 1) * d;
                        let (gr, xh) = (&g[span.clone()], &x_hat[span.clone()]);
                        let mut sum_d = F::zero();
                        let mut sum_dx = F::zero();
                        for j in 0..d {
                            let dxh = gr[j] * gm[j];
                            sum_d += dxh;
                            sum_dx += dxh * xh[j];
                        }
                        for j in 0..d {
                            let dxh = gr[j] * gm[j];
                            gx[r * d + j] = rstd[r] * (dxh - sum_d / dn - xh[j] * sum_dx / dn);
                        }
                    }
                    gx
                });
                let ggamma = p[1].requires_grad().then(|| {
                    let mut out = vec![F::zero(); d];
                    g.iter()
                        .zip(&x_hat)
                        .enumerate()
                        .for_each(|(i, (&gi, &xh))| out[i % d] += gi * xh);
                    out
                });
                let gbeta = p[2].requires_grad().then(|| {
                    let mut out = vec![F::zero(); d];
                    g.iter().enumerate().for_each(|(i, &gi)| out[i % d] += gi);
                    out
                });
                vec![gx, ggamma, gbeta]
            }),
        ))
    }

    // ---------------------------------------------------------------- indexing and layout

    /// Gathers rows of a `[rows, d]` table: output `[ids.len(), d]`.
    ///
    /// Used for embedding lookup and for any row reordering of activations.
    pub fn embedding(&self, ids: &[usize]) -> Result<Tensor<F>> {
        if self.rank() != 2 {
            return Err(TensorError::Contract(format!(
                "embedding table must be rank 2, got {:?}",
                self.shape()
            )));
        }
        let (rows, d) = (self.shape()[0], self.shape()[1]);
        if ids.is_empty() {
            return Err(TensorError::Contract("embedding lookup of zero ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(TensorError::Index {
                op: "embedding",
                index: bad,
                bound: rows,
            });
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        {
            let table = self.data();
            for &i in ids {
                out.extend_from_slice(&table[i * d..(i + 1) * d]);
            }
        }
        let ids = ids.to_vec();
        Ok(Tensor::from_op(
            out,
            vec![ids.len(), d],
            "embedding",
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gt = vec![F::zero(); rows * d];
                for (r, &i) in ids.iter().enumerate() {
                    for j in 0..d {
                        gt[i * d + j] += g[r * d + j];
                    }
                }
                vec![Some(gt)]
            }),
        ))
    }

    /// Inverted dropout: scales kept units by `1/(1-p)` in training and is the
    /// identity when `train` is false.
    pub fn dropout(&self, p: f64, train: bool, rng: &mut dyn RngCore) -> Result<Tensor<F>> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Domain {
                op: "dropout",
                msg: format!("rate {p} outside [0, 1)"),
            });
        }
        if !train || p == 0.0 {
            return Ok(self.clone());
        }
        let scale = F::from_f64c(1.0 / (1.0 - p));
        let mask: Vec<F> = (0..self.numel())
            .map(|_| if rng.gen::<f64>() >= p { scale } else { F::zero() })
            .collect();
        let out = self.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            "dropout",
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(g.iter().zip(&mask).map(|(&a, &m)| a * m).collect())]),
        ))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor<F>], axis: isize) -> Result<Tensor<F>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        let axis = resolve_axis("concat", first.rank(), axis)?;
        for p in parts {
            let ok = p.rank() == first.rank()
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(shape_err("concat", first.shape(), p.shape()));
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let mut out = vec![F::zero(); outer * total * inner];
        let mut offset = 0;
        for (p, &e) in parts.iter().zip(&extents) {
            let src = p.data();
            for o in 0..outer {
                let dst = (o * total + offset) * inner;
                out[dst..dst + e * inner].copy_from_slice(&src[o * e * inner..(o + 1) * e * inner]);
            }
            offset += e;
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(
            out,
            shape,
            "concat",
            parts.to_vec(),
            Box::new(move |g, _, ps| {
                let mut offset = 0;
                ps.iter()
                    .zip(&extents)
                    .map(|(p, &e)| {
                        let start = offset;
                        offset += e;
                        p.requires_grad().then(|| {
                            let mut gp = vec![F::zero(); outer * e * inner];
                            for o in 0..outer {
                                let src = (o * total + start) * inner;
                                gp[o * e * inner..(o + 1) * e * inner]
                                    .copy_from_slice(&g[src..src + e * inner]);
                            }
                            gp
                        })
                    })
                    .collect()
            }),
        ))
    }

    /// The half-open range `start..end` along `axis`.
    pub fn slice(&self, axis: isize, start: usize, end: usize) -> Result<Tensor<F>> {
        let axis = resolve_axis("slice", self.rank(), axis)?;
        let (outer, extent, inner) = split_axis(self.shape(), axis);
        if start >= end || end > extent {
            return Err(TensorError::Index {
                op: "slice",
                index: end,
                bound: extent,
            });
        }
        let len = end - start;
        let mut out = Vec::with_capacity(outer * len * inner);
        {
            let x = self.data();
            for o in 0..outer {
                let s = (o * extent + start) * inner;
                out.extend_from_slice(&x[s..s + len * inner]);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(
            out,
            shape,
            "slice",
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gx = vec![F::zero(); outer * extent * inner];
                for o in 0..outer {
                    let d = (o * extent + start) * inner;
                    gx[d..d + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Reinterprets the buffer with a new shape of the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<F>> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(shape_err("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            "reshape",
            vec![self.clone()],
            Box::new(|g, _, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<F>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::Domain {
                op: "permute",
                msg: format!("{perm:?} is not a permutation of rank {rank}"),
            });
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let mut in_strides = vec![1usize; rank];
        for i in (0..rank.saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
        }
        // index map: output flat index -> input flat index
        let n = self.numel();
        let mut map = Vec::with_capacity(n);
        let mut idx = vec![0usize; rank];
        for _ in 0..n {
            map.push(idx.iter().zip(perm).map(|(&i, &p)| i * in_strides[p]).sum::<usize>());
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                if idx[ax] < out_shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        let out = {
            let x = self.data();
            map.iter().map(|&i| x[i]).collect()
        };
        Ok(Tensor::from_op(
            out,
            out_shape,
            "permute",
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gx = vec![F::zero(); g.len()];
                for (o, &i) in map.iter().enumerate() {
                    gx[i] = g[o];
                }
                vec![Some(gx)]
            }),
        ))
    }

    // ---------------------------------------------------------------- reductions and losses

    pub fn sum_all(&self) -> Tensor<F> {
        let total = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(
            vec![total],
            vec![1],
            "sum",
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean_all(&self) -> Tensor<F> {
        let n = F::from_usize(self.numel()).unwrap();
        self.sum_all().mul_scalar(F::one() / n)
    }

    /// Mean softmax cross-entropy over rows of `[.., classes]` logits.
    ///
    /// `targets` holds one class id per row; rows with [`IGNORE_INDEX`]
    /// contribute neither loss nor gradient.
    pub fn cross_entropy(&self, targets: &[i64]) -> Result<Tensor<F>> {
        let c = *self.shape().last().unwrap();
        let rows = self.numel() / c;
        if targets.len() != rows {
            return Err(shape_err("cross_entropy", self.shape(), &[targets.len()]));
        }
        let active = targets.iter().filter(|&&t| t != IGNORE_INDEX).count();
        if active == 0 {
            return Err(TensorError::Contract(
                "cross_entropy: every position is ignored".into(),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t != IGNORE_INDEX && (t < 0 || t as usize >= c)) {
            return Err(TensorError::Index {
                op: "cross_entropy",
                index: bad.max(0) as usize,
                bound: c,
            });
        }
        let mut logp = self.to_vec();
        logp.chunks_mut(c).for_each(log_softmax_row);
        let count = F::from_usize(active).unwrap();
        let loss = targets
            .iter()
            .enumerate()
            .filter(|(_, &t)| t != IGNORE_INDEX)
            .map(|(r, &t)| -logp[r * c + t as usize])
            .sum::<F>()
            / count;
        let targets = targets.to_vec();
        Ok(Tensor::from_op(
            vec![loss],
            vec![1],
            "cross_entropy",
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let scale = g[0] / count;
                let mut gx = vec![F::zero(); rows * c];
                for (r, &t) in targets.iter().enumerate() {
                    if t == IGNORE_INDEX {
                        continue;
                    }
                    let row = &mut gx[r * c..(r + 1) * c];
                    for (o, &lp) in row.iter_mut().zip(&logp[r * c..(r + 1) * c]) {
                        *o = lp.exp() * scale;
                    }
                    row[t as usize] -= scale;
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Mean binary cross-entropy of `sigmoid(self)` against 0/1 `targets`,
    /// over positions where `mask` is true.
    pub fn bce_with_logits(&self, targets: &[F], mask: &[bool]) -> Result<Tensor<F>> {
        let n = self.numel();
        if targets.len() != n || mask.len() != n {
            return Err(shape_err("bce_with_logits", self.shape(), &[targets.len()]));
        }
        let active = mask.iter().filter(|&&m| m).count();
        if active == 0 {
            return Err(TensorError::Contract(
                "bce_with_logits: every position is masked out".into(),
            ));
        }
        let count = F::from_usize(active).unwrap();
        let loss = {
            let x = self.data();
            x.iter()
                .zip(targets)
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|((&xi, &yi), _)| xi.max(F::zero()) - xi * yi + (F::one() + (-xi.abs()).exp()).ln())
                .sum::<F>()
                / count
        };
        let targets = targets.to_vec();
        let mask = mask.to_vec();
        Ok(Tensor::from_op(
            vec![loss],
            vec![1],
            "bce_with_logits",
            vec![self.clone()],
            Box::new(move |g, _, p| {
                let x = p[0].data();
                let scale = g[0] / count;
                vec![Some(
                    x.iter()
                        .zip(&targets)
                        .zip(&mask)
                        .map(|((&xi, &yi), &m)| {
                            if m {
                                (sigmoid_scalar(xi) - yi) * scale
                            } else {
                                F::zero()
                            }
                        })
                        .collect(),
                )]
            }),
        ))
    }
}
