use serde::{Deserialize, Serialize};

use crate::autograd::Activation;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// The six searchable values of one architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchParams {
    pub sinusoidal: bool,
    pub learned: bool,
    pub rotary: bool,
    pub alibi: bool,
    pub dropout_rate: f64,
    pub activation: Activation,
}

impl ArchParams {
    pub fn encodings_on(&self) -> usize {
        [self.sinusoidal, self.learned, self.rotary, self.alibi]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    /// Overrides the six searchable fields of `base`.
    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        let mut cfg = base.clone();
        cfg.encoding.sinusoidal = self.sinusoidal;
        cfg.encoding.learned = self.learned;
        cfg.encoding.rotary = self.rotary;
        cfg.encoding.alibi = self.alibi;
        cfg.dropout_rate = self.dropout_rate;
        cfg.activation = self.activation;
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub dropout_rates: Vec<f64>,
    pub activations: Vec<Activation>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            dropout_rates: vec![0.0, 0.05, 0.1, 0.2],
            activations: Activation::ALL.to_vec(),
        }
    }
}

/// Number of levels of each of the six parameters, in [`SearchSpace::levels`] order.
pub const N_PARAMS: usize = 6;

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.dropout_rates.is_empty() || self.activations.is_empty() {
            return Err(Error::InvalidConfig("search space needs at least one dropout rate and activation".into()));
        }
        if let Some(p) = self.dropout_rates.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return Err(Error::InvalidConfig(format!("dropout candidate {p} outside [0, 1)")));
        }
        Ok(())
    }

    pub fn cardinalities(&self) -> [usize; N_PARAMS] {
        [2, 2, 2, 2, self.dropout_rates.len(), self.activations.len()]
    }

    pub fn size(&self) -> usize {
        self.cardinalities().iter().product()
    }

    /// Mixed-radix decoding of `index` into per-parameter levels.
    pub fn levels(&self, mut index: usize) -> [usize; N_PARAMS] {
        let mut out = [0; N_PARAMS];
        for (slot, card) in out.iter_mut().zip(self.cardinalities()).rev() {
            *slot = index % card;
            index /= card;
        }
        out
    }

    pub fn index_of_levels(&self, levels: &[usize; N_PARAMS]) -> usize {
        levels
            .iter()
            .zip(self.cardinalities())
            .fold(0, |acc, (&l, c)| acc * c + l)
    }

    pub fn config(&self, index: usize) -> ArchParams {
        let l = self.levels(index);
        ArchParams {
            sinusoidal: l[0] == 1,
            learned: l[1] == 1,
            rotary: l[2] == 1,
            alibi: l[3] == 1,
            dropout_rate: self.dropout_rates[l[4]],
            activation: self.activations[l[5]],
        }
    }

    /// Index of `arch`, or `None` when a value is not a candidate.
    pub fn index_of(&self, arch: &ArchParams) -> Option<usize> {
        let dropout = self.dropout_rates.iter().position(|&p| p == arch.dropout_rate)?;
        let act = self.activations.iter().position(|&a| a == arch.activation)?;
        let b = |v: bool| usize::from(v);
        Some(self.index_of_levels(&[
            b(arch.sinusoidal),
            b(arch.learned),
            b(arch.rotary),
            b(arch.alibi),
            dropout,
            act,
        ]))
    }
}
