use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    Padding,
    Causal,
    Combined,
}

/// Boolean attention mask broadcastable to `[B, H, T_q, T_k]`; `true` means
/// the key may be attended.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    kind: MaskKind,
    shape: [usize; 4],
    allow: Vec<bool>,
}

impl AttentionMask {
    pub fn new(kind: MaskKind, shape: [usize; 4], allow: Vec<bool>) -> Result<Self> {
        if allow.len() != shape.iter().product::<usize>() {
            return Err(Error::shape("attention mask", &shape, &[allow.len()]));
        }
        Ok(Self { kind, shape, allow })
    }

    /// Blocks padded keys. `key_valid` is `[B, T_k]`.
    pub fn padding(key_valid: &[bool], batch: usize, q_len: usize) -> Result<Self> {
        if batch == 0 || key_valid.len() % batch != 0 {
            return Err(Error::shape("padding mask", &[batch], &[key_valid.len()]));
        }
        let k_len = key_valid.len() / batch;
        let mut allow = Vec::with_capacity(batch * q_len * k_len);
        for b in 0..batch {
            for _ in 0..q_len {
                allow.extend_from_slice(&key_valid[b * k_len..(b + 1) * k_len]);
            }
        }
        Self::new(MaskKind::Padding, [batch, 1, q_len, k_len], allow)
    }

    /// Query `i` may attend key `j` iff `j <= i`.
    pub fn causal(len: usize) -> Self {
        let allow = (0..len).flat_map(|i| (0..len).map(move |j| j <= i)).collect();
        Self {
            kind: MaskKind::Causal,
            shape: [1, 1, len, len],
            allow,
        }
    }

    /// Elementwise AND of two broadcast-compatible masks.
    pub fn and(&self, other: &AttentionMask) -> Result<Self> {
        let mut shape = [0; 4];
        for d in 0..4 {
            let (a, b) = (self.shape[d], other.shape[d]);
            shape[d] = match (a, b) {
                _ if a == b => a,
                (1, _) => b,
                (_, 1) => a,
                _ => return Err(Error::shape("mask and", &self.shape, &other.shape)),
            };
        }
        let mut allow = Vec::with_capacity(shape.iter().product());
        for b in 0..shape[0] {
            for h in 0..shape[1] {
                for i in 0..shape[2] {
                    for j in 0..shape[3] {
                        allow.push(self.allows(b, h, i, j) && other.allows(b, h, i, j));
                    }
                }
            }
        }
        Self::new(MaskKind::Combined, shape, allow)
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn shape(&self) -> &[usize; 4] {
        &self.shape
    }

    pub fn data(&self) -> &[bool] {
        &self.allow
    }

    /// Broadcast-aware lookup.
    pub fn allows(&self, b: usize, h: usize, i: usize, j: usize) -> bool {
        let [sb, sh, sq, sk] = self.shape;
        let idx = [b, h, i, j]
            .iter()
            .zip([sb, sh, sq, sk])
            .fold(0, |acc, (&x, d)| acc * d + if d == 1 { 0 } else { x });
        self.allow[idx]
    }

    /// Every query row must keep at least one key.
    pub fn validate(&self) -> Result<()> {
        let [sb, sh, sq, sk] = self.shape;
        for b in 0..sb {
            for h in 0..sh {
                for i in 0..sq {
                    let row = ((b * sh + h) * sq + i) * sk;
                    if !self.allow[row..row + sk].iter().any(|&a| a) {
                        return Err(Error::FullyMasked {
                            location: format!("batch {b}, head {h}, query row {i}"),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}
