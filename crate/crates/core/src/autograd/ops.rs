use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernels::{self, MatMulPlan};
use super::{Node, Op, Var};
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::tensor::{broadcast_shape, Broadcast, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Gelu,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Relu, Activation::Tanh, Activation::Gelu];

    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Gelu => "gelu",
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Gelu => 0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)),
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
                let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                cdf + x * pdf
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "gelu" => Ok(Activation::Gelu),
            _ => Err(Error::UnknownActivation(s.to_string())),
        }
    }
}

impl<'t, S: Scalar> Var<'t, S> {
    fn unary(&self, value: Tensor<S>, op: Op<S>) -> Var<'t, S> {
        self.tape.push(value, op, self.requires_grad())
    }

    fn binary(&self, other: Var<'t, S>, value: Tensor<S>, op: Op<S>) -> Var<'t, S> {
        let ng = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, ng)
    }

    fn zip_broadcast(&self, other: Var<'t, S>, name: &'static str, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        let a = self.value();
        let b = other.value();
        let out_shape =
            broadcast_shape(a.shape(), b.shape()).ok_or_else(|| Error::shape(name, a.shape(), b.shape()))?;
        let ia = Broadcast::new(&out_shape, a.shape());
        let ib = Broadcast::new(&out_shape, b.shape());
        let n: usize = out_shape.iter().product();
        let (ad, bd) = (a.data(), b.data());
        let data = (0..n).map(|i| f(ad[ia.index(i)], bd[ib.index(i)])).collect();
        Tensor::new(&out_shape, data)
    }

    /// Broadcasting elementwise sum.
    pub fn add(&self, other: Var<'t, S>) -> Result<Var<'t, S>> {
        let v = self.zip_broadcast(other, "add", |a, b| a + b)?;
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: Var<'t, S>) -> Result<Var<'t, S>> {
        let v = self.zip_broadcast(other, "sub", |a, b| a - b)?;
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    pub fn mul(&self, other: Var<'t, S>) -> Result<Var<'t, S>> {
        let v = self.zip_broadcast(other, "mul", |a, b| a * b)?;
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    pub fn scale(&self, c: S) -> Var<'t, S> {
        let v = self.value().map(|x| x * c);
        self.unary(v, Op::Scale(self.id, c))
    }

    /// Batched matrix product `[..., m, k] x [..., k, n]`.
    pub fn matmul(&self, other: Var<'t, S>) -> Result<Var<'t, S>> {
        let v = {
            let a = self.value();
            let b = other.value();
            let plan = MatMulPlan::new(a.shape(), b.shape())?;
            Tensor::new(&plan.out_shape, plan.forward(a.data(), b.data()))?
        };
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Var<'t, S>> {
        let v = {
            let x = self.value();
            let (shape, offsets) = kernels::permute_offsets(x.shape(), perm)?;
            let d = x.data();
            Tensor::new(&shape, offsets.iter().map(|&o| d[o]).collect())?
        };
        Ok(self.unary(v, Op::Permute(self.id, perm.to_vec())))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Var<'t, S>> {
        let r = self.shape().len();
        if r < 2 {
            return Err(Error::InvalidShape {
                shape: self.shape(),
                reason: "transpose needs rank >= 2".into(),
            });
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(&perm)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, S>> {
        let v = self.to_tensor().reshape(shape)?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    /// Max-stabilized softmax. `-inf` entries map to exactly zero; a slice that
    /// is entirely `-inf` is an error.
    pub fn softmax(&self, axis: usize) -> Result<Var<'t, S>> {
        let v = {
            let x = self.value();
            if axis >= x.rank() {
                return Err(Error::InvalidArgument(format!("softmax axis {axis} for shape {:?}", x.shape())));
            }
            Tensor::new(x.shape(), kernels::softmax_forward(x.data(), x.shape(), axis)?)?
        };
        Ok(self.unary(v, Op::Softmax { x: self.id, axis }))
    }

    /// Replaces entries where `keep` is false with `fill`. `keep` must
    /// broadcast to this tensor's shape.
    pub fn masked_fill(&self, keep: &[bool], keep_shape: &[usize], fill: S) -> Result<Var<'t, S>> {
        let shape = self.shape();
        if keep.len() != keep_shape.iter().product::<usize>()
            || broadcast_shape(&shape, keep_shape).as_deref() != Some(shape.as_slice())
        {
            return Err(Error::shape("masked_fill", &shape, keep_shape));
        }
        let bc = Broadcast::new(&shape, keep_shape);
        let keep: Vec<bool> = (0..self.value().numel()).map(|i| keep[bc.index(i)]).collect();
        let v = {
            let x = self.value();
            let data = x.data().iter().zip(&keep).map(|(&v, &k)| if k { v } else { fill }).collect();
            Tensor::new(&shape, data)?
        };
        Ok(self.unary(v, Op::MaskedFill { x: self.id, keep }))
    }

    /// Normalizes over the last axis: `(x - mean) / sqrt(var + eps) * gain + bias`.
    pub fn layer_norm(&self, gain: Var<'t, S>, bias: Var<'t, S>, eps: S) -> Result<Var<'t, S>> {
        let (v, stats) = {
            let x = self.value();
            let (g, b) = (gain.value(), bias.value());
            let d = *x.shape().last().unwrap_or(&0);
            if d == 0 || g.shape() != [d] || b.shape() != [d] {
                return Err(Error::shape("layer_norm", x.shape(), g.shape()));
            }
            let (y, stats) = kernels::layer_norm_forward(x.data(), g.data(), b.data(), eps);
            (Tensor::new(x.shape(), y)?, stats)
        };
        let ng = self.requires_grad() || gain.requires_grad() || bias.requires_grad();
        Ok(self.tape.push(
            v,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                stats,
            },
            ng,
        ))
    }

    /// Inverted dropout. Identity when `training` is false or `rate` is zero.
    pub fn dropout(&self, rate: f64, training: bool, seed: SeedStream) -> Result<Var<'t, S>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(*self);
        }
        let mut rng = seed.rng();
        let keep_scale = S::of(1.0 / (1.0 - rate));
        let n = self.value().numel();
        let multipliers: Vec<S> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { S::zero() } else { keep_scale })
            .collect();
        let v = {
            let x = self.value();
            let data = x.data().iter().zip(&multipliers).map(|(&a, &m)| a * m).collect();
            Tensor::new(x.shape(), data)?
        };
        Ok(self.unary(v, Op::Dropout { x: self.id, multipliers }))
    }

    pub fn activation(&self, kind: Activation) -> Var<'t, S> {
        let v = self.value().map(|x| S::of(kind.apply(x.f64())));
        self.unary(v, Op::Activation(self.id, kind))
    }

    pub fn relu(&self) -> Var<'t, S> {
        self.activation(Activation::Relu)
    }

    pub fn tanh(&self) -> Var<'t, S> {
        self.activation(Activation::Tanh)
    }

    pub fn gelu(&self) -> Var<'t, S> {
        self.activation(Activation::Gelu)
    }

    /// Gathers rows of this `[V, d]` table. Output shape is `ids_shape + [d]`.
    pub fn embedding(&self, ids: &[usize], ids_shape: &[usize]) -> Result<Var<'t, S>> {
        let v = {
            let table = self.value();
            if table.rank() != 2 || ids.len() != ids_shape.iter().product::<usize>() {
                return Err(Error::shape("embedding", table.shape(), ids_shape));
            }
            let (rows, d) = (table.shape()[0], table.shape()[1]);
            let mut data = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                if id >= rows {
                    return Err(Error::IndexOutOfRange { index: id, size: rows });
                }
                data.extend_from_slice(&table.data()[id * d..(id + 1) * d]);
            }
            let mut shape = ids_shape.to_vec();
            shape.push(d);
            Tensor::new(&shape, data)?
        };
        Ok(self.unary(
            v,
            Op::Embedding {
                table: self.id,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Mean token cross-entropy of `[..., V]` logits against `targets`;
    /// positions equal to `ignore_id` are skipped. `smoothing` mixes the
    /// one-hot target with the uniform distribution.
    pub fn cross_entropy(&self, targets: &[usize], ignore_id: Option<usize>, smoothing: f64) -> Result<Var<'t, S>> {
        let (loss, probs, tgts, count) = {
            let x = self.value();
            let v = *x.shape().last().unwrap_or(&0);
            if v == 0 || x.numel() / v != targets.len() {
                return Err(Error::shape("cross_entropy", x.shape(), &[targets.len()]));
            }
            let tgts: Vec<Option<usize>> = targets
                .iter()
                .map(|&t| if Some(t) == ignore_id { None } else { Some(t) })
                .collect();
            let count = tgts.iter().flatten().count();
            if count == 0 {
                return Err(Error::AllTargetsIgnored);
            }
            let eps = smoothing;
            let mut probs = vec![S::zero(); x.numel()];
            let mut total = 0.0f64;
            for (r, t) in tgts.iter().enumerate() {
                let Some(t) = *t else { continue };
                if t >= v {
                    return Err(Error::IndexOutOfRange { index: t, size: v });
                }
                let row = &x.data()[r * v..(r + 1) * v];
                let max = row.iter().map(|z| z.f64()).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|z| (z.f64() - max).exp()).sum::<f64>().ln();
                let mut row_loss = -(1.0 - eps) * (row[t].f64() - lse);
                if eps > 0.0 {
                    let mean_lp = row.iter().map(|z| z.f64() - lse).sum::<f64>() / v as f64;
                    row_loss -= eps * mean_lp;
                }
                total += row_loss;
                for (j, z) in row.iter().enumerate() {
                    probs[r * v + j] = S::of((z.f64() - lse).exp());
                }
            }
            (total / count as f64, probs, tgts, count)
        };
        Ok(self.unary(
            Tensor::scalar(S::of(loss)),
            Op::CrossEntropy {
                logits: self.id,
                targets: tgts,
                probs,
                smoothing: S::of(smoothing),
                count,
            },
        ))
    }

    /// Rotates coordinate pairs `(x[2i], x[2i+1])` of a `[B, H, T, d]` tensor
    /// by `position * base^(-2i/d)`. `positions` has `B*T` entries (or `T`,
    /// shared across the batch).
    pub fn rotary(&self, positions: &[f64], base: f64) -> Result<Var<'t, S>> {
        let shape = self.shape();
        if shape.len() != 4 {
            return Err(Error::InvalidShape {
                shape,
                reason: "rotary expects [B, H, T, d]".into(),
            });
        }
        let (b, t, d) = (shape[0], shape[2], shape[3]);
        if d % 2 != 0 {
            return Err(Error::InvalidShape {
                shape,
                reason: "rotary needs an even head dimension".into(),
            });
        }
        let per_batch = match positions.len() {
            n if n == b * t => true,
            n if n == t => false,
            _ => return Err(Error::shape("rotary", &shape, &[positions.len()])),
        };
        let half = d / 2;
        let mut cos = Vec::with_capacity(positions.len() * half);
        let mut sin = Vec::with_capacity(positions.len() * half);
        for &p in positions {
            for i in 0..half {
                let theta = base.powf(-((2 * i) as f64) / d as f64);
                let (s, c) = (p * theta).sin_cos();
                cos.push(S::of(c));
                sin.push(S::of(s));
            }
        }
        let v = {
            let x = self.value();
            let out = rotate(x.data(), &shape, &cos, &sin, per_batch, false);
            Tensor::new(&shape, out)?
        };
        Ok(self.unary(
            v,
            Op::Rotary {
                x: self.id,
                cos,
                sin,
                per_batch,
            },
        ))
    }

    pub fn sum_all(&self) -> Var<'t, S> {
        let v = Tensor::scalar(self.value().data().iter().copied().sum());
        self.unary(v, Op::SumAll(self.id))
    }

    pub fn mean_all(&self) -> Var<'t, S> {
        let v = {
            let x = self.value();
            Tensor::scalar(x.data().iter().copied().sum::<S>() / S::of(x.numel().max(1) as f64))
        };
        self.unary(v, Op::Mean(self.id))
    }
}

fn rotate<S: Scalar>(x: &[S], shape: &[usize], cos: &[S], sin: &[S], per_batch: bool, inverse: bool) -> Vec<S> {
    let (b, h, t, d) = (shape[0], shape[1], shape[2], shape[3]);
    let half = d / 2;
    let mut out = vec![S::zero(); x.len()];
    for bi in 0..b {
        for hi in 0..h {
            for ti in 0..t {
                let row = ((bi * h + hi) * t + ti) * d;
                let trig = if per_batch { (bi * t + ti) * half } else { ti * half };
                for i in 0..half {
                    let (c, mut s) = (cos[trig + i], sin[trig + i]);
                    if inverse {
                        s = -s;
                    }
                    let (x0, x1) = (x[row + 2 * i], x[row + 2 * i + 1]);
                    out[row + 2 * i] = x0 * c - x1 * s;
                    out[row + 2 * i + 1] = x0 * s + x1 * c;
                }
            }
        }
    }
    out
}

fn accumulate<'g, S: Scalar>(grads: &'g mut [Option<Vec<S>>], nodes: &[Node<S>], id: usize) -> Option<&'g mut Vec<S>> {
    if !nodes[id].needs_grad {
        return None;
    }
    let len = nodes[id].value.numel();
    Some(grads[id].get_or_insert_with(|| vec![S::zero(); len]))
}

fn broadcast_reduce<S: Scalar>(
    grads: &mut [Option<Vec<S>>],
    nodes: &[Node<S>],
    out_shape: &[usize],
    id: usize,
    g: &[S],
    f: impl Fn(usize, S) -> S,
) {
    let in_shape = nodes[id].value.shape().to_vec();
    if let Some(dst) = accumulate(grads, nodes, id) {
        let bc = Broadcast::new(out_shape, &in_shape);
        for (i, &gi) in g.iter().enumerate() {
            dst[bc.index(i)] += f(i, gi);
        }
    }
}

/// Propagates `g` (the gradient of node `id`) into its parents.
pub(crate) fn backward<S: Scalar>(nodes: &[Node<S>], id: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
    let node = &nodes[id];
    let out_shape = node.value.shape();
    match &node.op {
        Op::Leaf => {}
        &Op::Add(a, b) => {
            broadcast_reduce(grads, nodes, out_shape, a, g, |_, gi| gi);
            broadcast_reduce(grads, nodes, out_shape, b, g, |_, gi| gi);
        }
        &Op::Sub(a, b) => {
            broadcast_reduce(grads, nodes, out_shape, a, g, |_, gi| gi);
            broadcast_reduce(grads, nodes, out_shape, b, g, |_, gi| -gi);
        }
        &Op::Mul(a, b) => {
            let (av, bv) = (&nodes[a].value, &nodes[b].value);
            let ia = Broadcast::new(out_shape, av.shape());
            let ib = Broadcast::new(out_shape, bv.shape());
            let (ad, bd) = (av.data(), bv.data());
            broadcast_reduce(grads, nodes, out_shape, a, g, |i, gi| gi * bd[ib.index(i)]);
            broadcast_reduce(grads, nodes, out_shape, b, g, |i, gi| gi * ad[ia.index(i)]);
        }
        &Op::Scale(x, c) => {
            if let Some(dst) = accumulate(grads, nodes, x) {
                dst.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi * c);
            }
        }
        &Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[a].value, &nodes[b].value);
            let plan = MatMulPlan::new(av.shape(), bv.shape()).expect("recorded matmul shapes");
            let (need_a, need_b) = (nodes[a].needs_grad, nodes[b].needs_grad);
            if a == b {
                let mut ga = vec![S::zero(); av.numel()];
                let mut gb = vec![S::zero(); bv.numel()];
                plan.backward(av.data(), bv.data(), g, Some(&mut ga), Some(&mut gb));
                if let Some(dst) = accumulate(grads, nodes, a) {
                    dst.iter_mut().zip(ga.iter().zip(&gb)).for_each(|(d, (&x, &y))| *d += x + y);
                }
                return;
            }
            let mut ga = if need_a { grads[a].take().or_else(|| Some(vec![S::zero(); av.numel()])) } else { None };
            let mut gb = if need_b { grads[b].take().or_else(|| Some(vec![S::zero(); bv.numel()])) } else { None };
            plan.backward(av.data(), bv.data(), g, ga.as_deref_mut(), gb.as_deref_mut());
            if need_a {
                grads[a] = ga;
            }
            if need_b {
                grads[b] = gb;
            }
        }
        Op::Permute(x, perm) => {
            let (_, offsets) = kernels::permute_offsets(nodes[*x].value.shape(), perm).expect("recorded permutation");
            if let Some(dst) = accumulate(grads, nodes, *x) {
                for (&o, &gi) in offsets.iter().zip(g) {
                    dst[o] += gi;
                }
            }
        }
        &Op::Reshape(x) => {
            if let Some(dst) = accumulate(grads, nodes, x) {
                dst.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
            }
        }
        &Op::Softmax { x, axis } => {
            if let Some(dst) = accumulate(grads, nodes, x) {
                kernels::softmax_backward(node.value.data(), g, out_shape, axis, dst);
            }
        }
        Op::MaskedFill { x, keep } => {
            if let Some(dst) = accumulate(grads, nodes, *x) {
                for ((d, &gi), &k) in dst.iter_mut().zip(g).zip(keep) {
                    if k {
                        *d += gi;
                    }
                }
            }
        }
        Op::LayerNorm { x, gain, bias, stats } => {
            let (x, gain, bias) = (*x, *gain, *bias);
            let mut gx = if nodes[x].needs_grad { Some(grads[x].take().unwrap_or_else(|| vec![S::zero(); nodes[x].value.numel()])) } else { None };
            let gain_len = nodes[gain].value.numel();
            let mut ggain = if nodes[gain].needs_grad && gain != x { Some(grads[gain].take().unwrap_or_else(|| vec![S::zero(); gain_len])) } else { None };
            let mut gbias = if nodes[bias].needs_grad && bias != x && bias != gain { Some(grads[bias].take().unwrap_or_else(|| vec![S::zero(); gain_len])) } else { None };
            kernels::layer_norm_backward(
                nodes[x].value.data(),
                nodes[gain].value.data(),
                stats,
                g,
                gx.as_deref_mut(),
                ggain.as_deref_mut(),
                gbias.as_deref_mut(),
            );
            if gx.is_some() {
                grads[x] = gx;
            }
            if ggain.is_some() {
                grads[gain] = ggain;
            }
            if gbias.is_some() {
                grads[bias] = gbias;
            }
        }
        Op::Dropout { x, multipliers } => {
            if let Some(dst) = accumulate(grads, nodes, *x) {
                for ((d, &gi), &m) in dst.iter_mut().zip(g).zip(multipliers) {
                    *d += gi * m;
                }
            }
        }
        &Op::Activation(x, kind) => {
            let xv = &nodes[x].value;
            let xs: Vec<f64> = xv.data().iter().map(|v| v.f64()).collect();
            if let Some(dst) = accumulate(grads, nodes, x) {
                for ((d, &gi), &xi) in dst.iter_mut().zip(g).zip(&xs) {
                    *d += gi * S::of(kind.derivative(xi));
                }
            }
        }
        Op::Embedding { table, ids } => {
            let d = nodes[*table].value.shape()[1];
            if let Some(dst) = accumulate(grads, nodes, *table) {
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dst[id * d + j] += g[r * d + j];
                    }
                }
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
            smoothing,
            count,
        } => {
            let v = *nodes[*logits].value.shape().last().expect("logits rank");
            let scale = g[0] / S::of(*count as f64);
            let uniform = *smoothing / S::of(v as f64);
            if let Some(dst) = accumulate(grads, nodes, *logits) {
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    for j in 0..v {
                        let mut q = uniform;
                        if j == t {
                            q += S::one() - *smoothing;
                        }
                        dst[r * v + j] += scale * (probs[r * v + j] - q);
                    }
                }
            }
        }
        Op::Rotary { x, cos, sin, per_batch } => {
            let back = rotate(g, out_shape, cos, sin, *per_batch, true);
            if let Some(dst) = accumulate(grads, nodes, *x) {
                dst.iter_mut().zip(&back).for_each(|(d, &b)| *d += b);
            }
        }
        &Op::SumAll(x) => {
            if let Some(dst) = accumulate(grads, nodes, x) {
                dst.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        &Op::Mean(x) => {
            let n = S::of(nodes[x].value.numel().max(1) as f64);
            if let Some(dst) = accumulate(grads, nodes, x) {
                dst.iter_mut().for_each(|d| *d += g[0] / n);
            }
        }
    }
}
