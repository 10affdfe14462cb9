//! Named parameters, the forward-pass context, and the two generic layers
//! (affine projection, layer norm) every block is built from.

mod params;

use std::cell::Cell;

pub use params::{ParamId, ParamStore, Parameter};
use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::positional::HookCounters;
use crate::rng::SeedStream;
use crate::tensor::{Scalar, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Everything a block needs during one forward pass.
pub struct Ctx<'t, S: Scalar> {
    pub tape: &'t Tape<S>,
    pub params: &'t ParamStore<S>,
    pub training: bool,
    seeds: SeedStream,
    dropout_calls: Cell<u64>,
    counters: HookCounters,
}

impl<'t, S: Scalar> Ctx<'t, S> {
    pub fn new(tape: &'t Tape<S>, params: &'t ParamStore<S>, training: bool, seeds: SeedStream) -> Self {
        Self {
            tape,
            params,
            training,
            seeds,
            dropout_calls: Cell::new(0),
            counters: HookCounters::default(),
        }
    }

    pub fn eval(tape: &'t Tape<S>, params: &'t ParamStore<S>) -> Self {
        Self::new(tape, params, false, SeedStream::new(0))
    }

    pub fn param(&self, id: ParamId) -> Var<'t, S> {
        self.tape.param(self.params, id)
    }

    pub fn constant(&self, t: Tensor<S>) -> Var<'t, S> {
        self.tape.constant(t)
    }

    /// Dropout with a fresh stream per call, so masks are reproducible given
    /// the context seed and call order.
    pub fn dropout(&self, x: Var<'t, S>, rate: f64) -> Result<Var<'t, S>> {
        if !self.training || rate == 0.0 {
            return x.dropout(rate, false, self.seeds);
        }
        let n = self.dropout_calls.get();
        self.dropout_calls.set(n + 1);
        x.dropout(rate, true, self.seeds.child(n))
    }

    pub fn counters(&self) -> &HookCounters {
        &self.counters
    }
}

/// `x · W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Uniform(-1/√in, 1/√in) weights, zero bias.
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w: Vec<f64> = (0..in_dim * out_dim).map(|_| rng.gen_range(-bound..bound)).collect();
        let weight = store.register(&format!("{name}.weight"), Tensor::from_f64(&[in_dim, out_dim], &w)?)?;
        let bias = store.register(&format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<'t, S: Scalar>(&self, ctx: &Ctx<'t, S>, x: Var<'t, S>) -> Result<Var<'t, S>> {
        x.matmul(ctx.param(self.weight))?.add(ctx.param(self.bias))
    }

    pub fn param_count(in_dim: usize, out_dim: usize) -> usize {
        in_dim * out_dim + out_dim
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, dim: usize) -> Result<Self> {
        let gain = store.register(&format!("{name}.gain"), Tensor::full(&[dim], S::one()))?;
        let bias = store.register(&format!("{name}.bias"), Tensor::zeros(&[dim]))?;
        Ok(Self { gain, bias, dim })
    }

    pub fn forward<'t, S: Scalar>(&self, ctx: &Ctx<'t, S>, x: Var<'t, S>) -> Result<Var<'t, S>> {
        x.layer_norm(ctx.param(self.gain), ctx.param(self.bias), S::of(LAYER_NORM_EPS))
    }
}
