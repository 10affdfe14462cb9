use serde::{Deserialize, Serialize};

use super::Positions;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlibiMode {
    /// Only keys at or before the query index are biased; later keys are left
    /// at zero for the causal mask to remove.
    Causal,
    /// `-slope · |pos_i - pos_j|` for every pair.
    #[default]
    Symmetric,
}

/// Per-head slopes `2^(-8h/H)` for `h = 1..=H`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlibiSlopes {
    slopes: Vec<f64>,
}

impl AlibiSlopes {
    pub fn new(n_heads: usize) -> Result<Self> {
        if n_heads == 0 {
            return Err(Error::InvalidArgument("ALiBi needs at least one head".into()));
        }
        let h = n_heads as f64;
        let slopes = (1..=n_heads).map(|i| 2f64.powf(-8.0 * i as f64 / h)).collect();
        Ok(Self { slopes })
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn n_heads(&self) -> usize {
        self.slopes.len()
    }
}

/// Bias `[H, T_q, T_k]` for one sequence.
pub fn alibi_bias<S: Scalar>(q_pos: &[f64], k_pos: &[f64], slopes: &AlibiSlopes, mode: AlibiMode) -> Tensor<S> {
    let (tq, tk) = (q_pos.len(), k_pos.len());
    let mut data = Vec::with_capacity(slopes.n_heads() * tq * tk);
    for &m in slopes.slopes() {
        for (i, &pi) in q_pos.iter().enumerate() {
            for (j, &pj) in k_pos.iter().enumerate() {
                let v = if mode == AlibiMode::Causal && j > i {
                    0.0
                } else {
                    -m * (pi - pj).abs()
                };
                data.push(S::of(v));
            }
        }
    }
    Tensor::new(&[slopes.n_heads(), tq, tk], data).expect("bias shape")
}

/// Bias `[B, H, T_q, T_k]` from per-batch positions.
pub(crate) fn batched_bias<S: Scalar>(
    q_pos: &Positions,
    k_pos: &Positions,
    slopes: &AlibiSlopes,
    mode: AlibiMode,
) -> Result<Tensor<S>> {
    if q_pos.batch() != k_pos.batch() {
        return Err(Error::shape("alibi", &[q_pos.batch()], &[k_pos.batch()]));
    }
    let b = q_pos.batch();
    let mut data = Vec::with_capacity(b * slopes.n_heads() * q_pos.len() * k_pos.len());
    for bi in 0..b {
        data.extend(alibi_bias::<S>(q_pos.row(bi), k_pos.row(bi), slopes, mode).into_data());
    }
    Tensor::new(&[b, slopes.n_heads(), q_pos.len(), k_pos.len()], data)
}
