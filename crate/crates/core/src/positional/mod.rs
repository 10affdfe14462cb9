//! Positional encodings and the strategy manager that routes each one to its
//! injection point.
//!
//! | strategy   | injection point                              |
//! |------------|----------------------------------------------|
//! | sinusoidal | added to token embeddings                    |
//! | learned    | added to token embeddings                    |
//! | rotary     | rotates queries and keys after the head split |
//! | ALiBi      | biases the raw attention scores              |
//!
//! Any subset may be active at once. Additive terms are summed before being
//! added to the embeddings; rotary and ALiBi each act at their own hook.

mod alibi;
mod learned;
mod rotary;
mod sinusoidal;

use std::cell::Cell;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use alibi::{alibi_bias, AlibiMode, AlibiSlopes};
pub use learned::LearnedPositionTable;
pub use rotary::rotary_transform;
pub use sinusoidal::sinusoidal_encoding;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Ctx, ParamStore};
use crate::tensor::Scalar;

/// On/off flags for the four strategies plus their parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodingSet {
    pub sinusoidal: bool,
    pub learned: bool,
    pub rotary: bool,
    pub alibi: bool,
    pub sinusoidal_base: f64,
    pub rotary_base: f64,
    /// Rows of each learned table; `None` means the model's `max_len`.
    pub learned_max_positions: Option<usize>,
    /// ALiBi distance mode for encoder self-attention. Decoder self-attention
    /// is always causal and cross-attention carries no bias.
    pub alibi_mode: AlibiMode,
}

impl Default for EncodingSet {
    fn default() -> Self {
        Self {
            sinusoidal: true,
            learned: false,
            rotary: false,
            alibi: false,
            sinusoidal_base: 10_000.0,
            rotary_base: 10_000.0,
            learned_max_positions: None,
            alibi_mode: AlibiMode::Symmetric,
        }
    }
}

impl EncodingSet {
    pub fn none() -> Self {
        Self {
            sinusoidal: false,
            ..Self::default()
        }
    }

    pub fn all() -> Self {
        Self {
            sinusoidal: true,
            learned: true,
            rotary: true,
            alibi: true,
            ..Self::default()
        }
    }

    pub fn active_count(&self) -> usize {
        [self.sinusoidal, self.learned, self.rotary, self.alibi]
            .iter()
            .filter(|&&on| on)
            .count()
    }
}

/// Real-valued positions, `[batch, len]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Positions {
    batch: usize,
    len: usize,
    values: Vec<f64>,
}

impl Positions {
    pub fn new(batch: usize, len: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != batch * len {
            return Err(Error::shape("positions", &[batch, len], &[values.len()]));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite position {bad}")));
        }
        Ok(Self { batch, len, values })
    }

    /// `0, 1, ..., len - 1` for every row.
    pub fn sequential(batch: usize, len: usize) -> Self {
        let values = (0..batch).flat_map(|_| (0..len).map(|t| t as f64)).collect();
        Self { batch, len, values }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, b: usize) -> &[f64] {
        &self.values[b * self.len..(b + 1) * self.len]
    }

    /// Rows reordered by `perm` within each batch entry.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for b in 0..self.batch {
            let row = self.row(b);
            values.extend(perm.iter().map(|&i| row[i]));
        }
        Self { values, ..*self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    Sinusoidal,
    Learned,
    Rotary,
    Alibi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InjectionPoint {
    PreAdditive,
    QueryKey,
    ScoreBias,
}

impl StrategyKind {
    pub fn injection(&self) -> InjectionPoint {
        match self {
            StrategyKind::Sinusoidal | StrategyKind::Learned => InjectionPoint::PreAdditive,
            StrategyKind::Rotary => InjectionPoint::QueryKey,
            StrategyKind::Alibi => InjectionPoint::ScoreBias,
        }
    }

    fn index(&self) -> usize {
        *self as usize
    }
}

/// Per-forward application counts of each strategy and hook.
#[derive(Debug, Default)]
pub struct HookCounters {
    applied: [Cell<usize>; 4],
    pre_additive_calls: Cell<usize>,
    qk_calls: Cell<usize>,
    score_bias_calls: Cell<usize>,
    attention_calls: Cell<usize>,
}

impl HookCounters {
    pub(crate) fn record(&self, kind: StrategyKind) {
        let c = &self.applied[kind.index()];
        c.set(c.get() + 1);
    }

    pub(crate) fn bump(cell: &Cell<usize>) {
        cell.set(cell.get() + 1);
    }

    pub(crate) fn record_attention_call(&self) {
        Self::bump(&self.attention_calls);
    }

    pub fn applied(&self, kind: StrategyKind) -> usize {
        self.applied[kind.index()].get()
    }

    pub fn pre_additive_calls(&self) -> usize {
        self.pre_additive_calls.get()
    }

    pub fn qk_calls(&self) -> usize {
        self.qk_calls.get()
    }

    pub fn score_bias_calls(&self) -> usize {
        self.score_bias_calls.get()
    }

    pub fn attention_calls(&self) -> usize {
        self.attention_calls.get()
    }
}

/// One positional strategy. Each implementation overrides only the hook of
/// its own injection point; the others stay identities.
pub trait PositionalStrategy<S: Scalar>: Send + Sync {
    fn kind(&self) -> StrategyKind;

    /// Term to add to `[B, T, d_model]` token embeddings.
    fn additive<'t>(&self, _ctx: &Ctx<'t, S>, _positions: &Positions, _d_model: usize) -> Result<Option<Var<'t, S>>> {
        Ok(None)
    }

    /// Transform of `[B, H, T, d_k]` queries and keys.
    fn transform_qk<'t>(
        &self,
        q: Var<'t, S>,
        k: Var<'t, S>,
        _q_pos: &Positions,
        _k_pos: &Positions,
    ) -> Result<(Var<'t, S>, Var<'t, S>)> {
        Ok((q, k))
    }

    /// Bias `[B, H, T_q, T_k]` added to the attention scores.
    fn score_bias(
        &self,
        _q_pos: &Positions,
        _k_pos: &Positions,
        _mode: AlibiMode,
    ) -> Result<Option<crate::tensor::Tensor<S>>> {
        Ok(None)
    }
}

struct Sinusoidal {
    base: f64,
}

impl<S: Scalar> PositionalStrategy<S> for Sinusoidal {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Sinusoidal
    }

    fn additive<'t>(&self, ctx: &Ctx<'t, S>, positions: &Positions, d_model: usize) -> Result<Option<Var<'t, S>>> {
        Ok(Some(ctx.constant(sinusoidal_encoding(positions, d_model, self.base)?)))
    }
}

impl<S: Scalar> PositionalStrategy<S> for LearnedPositionTable {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Learned
    }

    fn additive<'t>(&self, ctx: &Ctx<'t, S>, positions: &Positions, _d_model: usize) -> Result<Option<Var<'t, S>>> {
        self.encode(ctx, positions).map(Some)
    }
}

struct Rotary {
    base: f64,
}

impl<S: Scalar> PositionalStrategy<S> for Rotary {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Rotary
    }

    fn transform_qk<'t>(
        &self,
        q: Var<'t, S>,
        k: Var<'t, S>,
        q_pos: &Positions,
        k_pos: &Positions,
    ) -> Result<(Var<'t, S>, Var<'t, S>)> {
        rotary_transform(q, k, q_pos, k_pos, self.base)
    }
}

impl<S: Scalar> PositionalStrategy<S> for AlibiSlopes {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Alibi
    }

    fn score_bias(
        &self,
        q_pos: &Positions,
        k_pos: &Positions,
        mode: AlibiMode,
    ) -> Result<Option<crate::tensor::Tensor<S>>> {
        alibi::batched_bias(q_pos, k_pos, self, mode).map(Some)
    }
}

/// The strategy manager: owns the active strategies of one stack (encoder or
/// decoder) and applies each at its injection point.
pub struct EncodingManager<S: Scalar> {
    set: EncodingSet,
    d_model: usize,
    strategies: Vec<Box<dyn PositionalStrategy<S>>>,
}

impl<S: Scalar> EncodingManager<S> {
    /// Builds the strategies switched on in `set`. A learned table named
    /// `{prefix}.learned_positions` is registered in `store` when needed.
    pub fn new(
        set: &EncodingSet,
        store: &mut ParamStore<S>,
        prefix: &str,
        d_model: usize,
        n_heads: usize,
        max_len: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut strategies: Vec<Box<dyn PositionalStrategy<S>>> = Vec::new();
        if set.sinusoidal {
            if d_model % 2 != 0 {
                return Err(Error::InvalidConfig(format!("sinusoidal encoding needs even d_model, got {d_model}")));
            }
            strategies.push(Box::new(Sinusoidal { base: set.sinusoidal_base }));
        }
        if set.learned {
            let rows = set.learned_max_positions.unwrap_or(max_len);
            let table = LearnedPositionTable::new(store, &format!("{prefix}.learned_positions"), rows, d_model, rng)?;
            strategies.push(Box::new(table));
        }
        if set.rotary {
            strategies.push(Box::new(Rotary { base: set.rotary_base }));
        }
        if set.alibi {
            strategies.push(Box::new(AlibiSlopes::new(n_heads)?));
        }
        Ok(Self {
            set: set.clone(),
            d_model,
            strategies,
        })
    }

    /// A manager over explicitly supplied strategies, applied in the given order.
    pub fn from_strategies(set: EncodingSet, d_model: usize, strategies: Vec<Box<dyn PositionalStrategy<S>>>) -> Self {
        Self {
            set,
            d_model,
            strategies,
        }
    }

    pub fn set(&self) -> &EncodingSet {
        &self.set
    }

    pub fn kinds(&self) -> Vec<StrategyKind> {
        self.strategies.iter().map(|s| s.kind()).collect()
    }

    /// `embeddings + Σ additive encodings`. Identity when no additive strategy is on.
    pub fn apply_pre_additive<'t>(
        &self,
        ctx: &Ctx<'t, S>,
        embeddings: Var<'t, S>,
        positions: &Positions,
    ) -> Result<Var<'t, S>> {
        HookCounters::bump(&ctx.counters().pre_additive_calls);
        let mut total: Option<Var<'t, S>> = None;
        for s in &self.strategies {
            if let Some(term) = s.additive(ctx, positions, self.d_model)? {
                ctx.counters().record(s.kind());
                total = Some(match total {
                    None => term,
                    Some(acc) => acc.add(term)?,
                });
            }
        }
        match total {
            None => Ok(embeddings),
            Some(t) => embeddings.add(t),
        }
    }

    pub fn apply_qk<'t>(
        &self,
        ctx: &Ctx<'t, S>,
        q: Var<'t, S>,
        k: Var<'t, S>,
        q_pos: &Positions,
        k_pos: &Positions,
    ) -> Result<(Var<'t, S>, Var<'t, S>)> {
        HookCounters::bump(&ctx.counters().qk_calls);
        let (mut q, mut k) = (q, k);
        for s in &self.strategies {
            if s.kind().injection() == InjectionPoint::QueryKey {
                (q, k) = s.transform_qk(q, k, q_pos, k_pos)?;
                ctx.counters().record(s.kind());
            }
        }
        Ok((q, k))
    }

    /// Adds every active score bias. `mode == None` marks an attention call
    /// that takes no bias (cross-attention).
    pub fn apply_score_bias<'t>(
        &self,
        ctx: &Ctx<'t, S>,
        scores: Var<'t, S>,
        q_pos: &Positions,
        k_pos: &Positions,
        mode: Option<AlibiMode>,
    ) -> Result<Var<'t, S>> {
        HookCounters::bump(&ctx.counters().score_bias_calls);
        let Some(mode) = mode else { return Ok(scores) };
        let mut scores = scores;
        for s in &self.strategies {
            if let Some(bias) = s.score_bias(q_pos, k_pos, mode)? {
                ctx.counters().record(s.kind());
                scores = scores.add(ctx.constant(bias))?;
            }
        }
        Ok(scores)
    }
}

/// The score-bias hook handed to an attention method: bound to the positions
/// of one attention call, so methods need no global state.
pub struct ScoreBias<'a, S: Scalar> {
    bound: Option<(&'a EncodingManager<S>, &'a Positions, &'a Positions, Option<AlibiMode>)>,
}

impl<'a, S: Scalar> ScoreBias<'a, S> {
    pub fn none() -> Self {
        Self { bound: None }
    }

    pub fn new(
        manager: &'a EncodingManager<S>,
        q_pos: &'a Positions,
        k_pos: &'a Positions,
        mode: Option<AlibiMode>,
    ) -> Self {
        Self {
            bound: Some((manager, q_pos, k_pos, mode)),
        }
    }

    pub fn apply<'t>(&self, ctx: &Ctx<'t, S>, scores: Var<'t, S>) -> Result<Var<'t, S>> {
        match self.bound {
            None => Ok(scores),
            Some((m, q, k, mode)) => m.apply_score_bias(ctx, scores, q, k, mode),
        }
    }
}
