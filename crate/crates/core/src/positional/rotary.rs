use super::Positions;
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Rotates `[B, H, T, d_k]` queries and keys pairwise by position-dependent
/// angles `pos · base^(-2i/d_k)`. Queries use `q_pos`, keys use `k_pos`, so
/// cross-attention rotates each side by its own sequence positions.
pub fn rotary_transform<'t, S: Scalar>(
    q: Var<'t, S>,
    k: Var<'t, S>,
    q_pos: &Positions,
    k_pos: &Positions,
    base: f64,
) -> Result<(Var<'t, S>, Var<'t, S>)> {
    for (x, pos) in [(q, q_pos), (k, k_pos)] {
        let shape = x.shape();
        if shape.len() != 4 || shape[2] != pos.len() {
            return Err(Error::shape("rotary_transform", &shape, &[pos.batch(), pos.len()]));
        }
        if shape[3] % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "rotary encoding needs an even head dimension, got {}",
                shape[3]
            )));
        }
    }
    Ok((q.rotary(q_pos.values(), base)?, k.rotary(k_pos.values(), base)?))
}
