// Forward/backward kernels on raw buffers.

use crate::error::{Error, Result};
use crate::tensor::{broadcast_offsets, broadcast_shape, strides, Scalar};

pub(crate) struct MatMulPlan {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub out_shape: Vec<usize>,
    /// (a batch offset, b batch offset) per output batch entry; `None` when `b`
    /// is a plain matrix and `a` can be folded into one gemm.
    pub batches: Option<Vec<(usize, usize)>>,
}

impl MatMulPlan {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() < 2 || b.len() < 2 {
            return Err(Error::shape("matmul", a, b));
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(Error::shape("matmul", a, b));
        }
        let (a_batch, b_batch) = (&a[..a.len() - 2], &b[..b.len() - 2]);
        let out_batch = broadcast_shape(a_batch, b_batch).ok_or_else(|| Error::shape("matmul", a, b))?;
        let mut out_shape = out_batch.clone();
        out_shape.extend([m, n]);
        let batches = if b_batch.iter().all(|&d| d == 1) && a_batch == out_batch.as_slice() {
            None
        } else {
            let ia = broadcast_offsets(&out_batch, a_batch);
            let ib = broadcast_offsets(&out_batch, b_batch);
            Some(ia.into_iter().zip(ib).collect())
        };
        Ok(Self {
            m,
            k,
            n,
            out_shape,
            batches,
        })
    }

    pub fn forward<S: Scalar>(&self, a: &[S], b: &[S]) -> Vec<S> {
        let (m, k, n) = (self.m, self.k, self.n);
        let mut out = vec![S::zero(); self.out_shape.iter().product()];
        match &self.batches {
            None => {
                let rows = if k == 0 { out.len() / n.max(1) } else { a.len() / k };
                S::gemm(rows, k, n, S::one(), a, (k as isize, 1), b, (n as isize, 1), S::zero(), &mut out, (n as isize, 1));
            }
            Some(batches) => {
                for (bi, &(ia, ib)) in batches.iter().enumerate() {
                    S::gemm(
                        m,
                        k,
                        n,
                        S::one(),
                        &a[ia * m * k..(ia + 1) * m * k],
                        (k as isize, 1),
                        &b[ib * k * n..(ib + 1) * k * n],
                        (n as isize, 1),
                        S::zero(),
                        &mut out[bi * m * n..(bi + 1) * m * n],
                        (n as isize, 1),
                    );
                }
            }
        }
        out
    }

    /// Accumulates dA = dC·Bᵀ and dB = Aᵀ·dC into the provided buffers.
    pub fn backward<S: Scalar>(&self, a: &[S], b: &[S], g: &[S], ga: Option<&mut [S]>, gb: Option<&mut [S]>) {
        let (m, k, n) = (self.m, self.k, self.n);
        let (ki, ni) = (k as isize, n as isize);
        match &self.batches {
            None => {
                let rows = if n == 0 { 0 } else { g.len() / n };
                if let Some(ga) = ga {
                    S::gemm(rows, n, k, S::one(), g, (ni, 1), b, (1, ni), S::one(), ga, (ki, 1));
                }
                if let Some(gb) = gb {
                    S::gemm(k, rows, n, S::one(), a, (1, ki), g, (ni, 1), S::one(), gb, (ni, 1));
                }
            }
            Some(batches) => {
                let mut ga = ga;
                let mut gb = gb;
                for (bi, &(ia, ib)) in batches.iter().enumerate() {
                    let gc = &g[bi * m * n..(bi + 1) * m * n];
                    let av = &a[ia * m * k..(ia + 1) * m * k];
                    let bv = &b[ib * k * n..(ib + 1) * k * n];
                    if let Some(ga) = ga.as_deref_mut() {
                        let dst = &mut ga[ia * m * k..(ia + 1) * m * k];
                        S::gemm(m, n, k, S::one(), gc, (ni, 1), bv, (1, ni), S::one(), dst, (ki, 1));
                    }
                    if let Some(gb) = gb.as_deref_mut() {
                        let dst = &mut gb[ib * k * n..(ib + 1) * k * n];
                        S::gemm(k, m, n, S::one(), av, (1, ki), gc, (ni, 1), S::one(), dst, (ni, 1));
                    }
                }
            }
        }
    }
}

/// Output shape and, for each output element, its source offset.
pub(crate) fn permute_offsets(shape: &[usize], perm: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let rank = shape.len();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::InvalidArgument(format!(
            "permutation {perm:?} invalid for rank-{rank} tensor"
        )));
    }
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total: usize = shape.iter().product();
    let mut offsets = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..total {
        offsets.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= src_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    Ok((out_shape, offsets))
}

pub(crate) fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_forward<S: Scalar>(x: &[S], shape: &[usize], axis: usize) -> Result<Vec<S>> {
    let (outer, len, inner) = axis_layout(shape, axis);
    let mut y = vec![S::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let at = |j: usize| base + j * inner;
            // NaN entries are not masks; they propagate into the output
            if (0..len).all(|j| x[at(j)] == S::neg_infinity()) {
                return Err(Error::FullyMasked {
                    location: format!("outer index {o}, inner index {i} of shape {shape:?} along axis {axis}"),
                });
            }
            let max = (0..len).map(|j| x[at(j)]).fold(S::neg_infinity(), S::max);
            let mut sum = S::zero();
            for j in 0..len {
                let e = (x[at(j)] - max).exp();
                y[at(j)] = e;
                sum += e;
            }
            for j in 0..len {
                y[at(j)] /= sum;
            }
        }
    }
    Ok(y)
}

pub(crate) fn softmax_backward<S: Scalar>(y: &[S], g: &[S], shape: &[usize], axis: usize, gx: &mut [S]) {
    let (outer, len, inner) = axis_layout(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let dot: S = (0..len).map(|j| y[base + j * inner] * g[base + j * inner]).sum();
            for j in 0..len {
                let p = base + j * inner;
                gx[p] += y[p] * (g[p] - dot);
            }
        }
    }
}

pub(crate) fn layer_norm_forward<S: Scalar>(
    x: &[S],
    gain: &[S],
    bias: &[S],
    eps: S,
) -> (Vec<S>, Vec<(S, S)>) {
    let d = gain.len();
    let rows = x.len() / d;
    let dn = S::of(d as f64);
    let mut y = vec![S::zero(); x.len()];
    let mut stats = Vec::with_capacity(rows);
    for r in 0..rows {
        let xs = &x[r * d..(r + 1) * d];
        let mean = xs.iter().copied().sum::<S>() / dn;
        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dn;
        let rstd = S::one() / (var + eps).sqrt();
        for j in 0..d {
            y[r * d + j] = (xs[j] - mean) * rstd * gain[j] + bias[j];
        }
        stats.push((mean, rstd));
    }
    (y, stats)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_norm_backward<S: Scalar>(
    x: &[S],
    gain: &[S],
    stats: &[(S, S)],
    g: &[S],
    mut gx: Option<&mut [S]>,
    mut ggain: Option<&mut [S]>,
    mut gbias: Option<&mut [S]>,
) {
    let d = gain.len();
    let dn = S::of(d as f64);
    let mut xhat = vec![S::zero(); d];
    let mut dxhat = vec![S::zero(); d];
    for (r, &(mean, rstd)) in stats.iter().enumerate() {
        let xs = &x[r * d..(r + 1) * d];
        let gs = &g[r * d..(r + 1) * d];
        for j in 0..d {
            xhat[j] = (xs[j] - mean) * rstd;
            dxhat[j] = gs[j] * gain[j];
        }
        if let Some(gg) = ggain.as_deref_mut() {
            for j in 0..d {
                gg[j] += gs[j] * xhat[j];
            }
        }
        if let Some(gb) = gbias.as_deref_mut() {
            for j in 0..d {
                gb[j] += gs[j];
            }
        }
        if let Some(gx) = gx.as_deref_mut() {
            let sum_d: S = dxhat.iter().copied().sum();
            let sum_dx: S = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum();
            for j in 0..d {
                gx[r * d + j] += rstd / dn * (dn * dxhat[j] - sum_d - xhat[j] * sum_dx);
            }
        }
    }
}
