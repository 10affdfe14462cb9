use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Positions;
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Ctx, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Trainable `[max_positions, d_model]` table indexed by integer position.
#[derive(Clone, Debug)]
pub struct LearnedPositionTable {
    pub table: ParamId,
    pub max_positions: usize,
    pub d_model: usize,
}

impl LearnedPositionTable {
    pub const INIT_STD: f64 = 0.02;

    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        max_positions: usize,
        d_model: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let normal = Normal::new(0.0, Self::INIT_STD).expect("valid std");
        let data: Vec<f64> = (0..max_positions * d_model).map(|_| normal.sample(rng)).collect();
        let table = store.register(name, Tensor::from_f64(&[max_positions, d_model], &data)?)?;
        Ok(Self {
            table,
            max_positions,
            d_model,
        })
    }

    /// Validates positions as table rows.
    pub fn row_ids(&self, positions: &Positions) -> Result<Vec<usize>> {
        positions
            .values()
            .iter()
            .map(|&p| {
                if p.fract() != 0.0 || p < 0.0 || p >= self.max_positions as f64 {
                    Err(Error::InvalidPosition {
                        position: p,
                        max: self.max_positions,
                    })
                } else {
                    Ok(p as usize)
                }
            })
            .collect()
    }

    /// Row lookup `[B, T, d_model]`; gradients flow into the table.
    pub fn encode<'t, S: Scalar>(&self, ctx: &Ctx<'t, S>, positions: &Positions) -> Result<Var<'t, S>> {
        let ids = self.row_ids(positions)?;
        ctx.param(self.table)
            .embedding(&ids, &[positions.batch(), positions.len()])
    }
}
