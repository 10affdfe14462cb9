use super::Positions;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Fixed sinusoidal table `[B, T, d_model]`: dim `2i` is `sin(pos / base^(2i/d))`,
/// dim `2i+1` the matching cosine. Positions need not be integers.
pub fn sinusoidal_encoding<S: Scalar>(positions: &Positions, d_model: usize, base: f64) -> Result<Tensor<S>> {
    if d_model % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "sinusoidal encoding needs an even d_model, got {d_model}"
        )));
    }
    let freqs: Vec<f64> = (0..d_model / 2)
        .map(|i| base.powf(-((2 * i) as f64) / d_model as f64))
        .collect();
    let mut data = Vec::with_capacity(positions.values().len() * d_model);
    for &p in positions.values() {
        for &f in &freqs {
            let (s, c) = (p * f).sin_cos();
            data.push(S::of(s));
            data.push(S::of(c));
        }
    }
    Tensor::new(&[positions.batch(), positions.len(), d_model], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(pos: f64, d: usize) -> Vec<f64> {
        let p = Positions::new(1, 1, vec![pos]).unwrap();
        sinusoidal_encoding::<f64>(&p, d, 10_000.0).unwrap().into_data()
    }

    #[test]
    fn position_zero() {
        assert_eq!(at(0.0, 4), vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn position_one_closed_form() {
        let want = [0.84147, 0.54030, 0.01000, 0.99995];
        for (g, w) in at(1.0, 4).iter().zip(want) {
            assert!((g - w).abs() < 1e-5, "{g} vs {w}");
        }
    }

    #[test]
    fn fractional_position() {
        let got = at(0.5, 4);
        let want = [0.5f64.sin(), 0.5f64.cos(), 0.005f64.sin(), 0.005f64.cos()];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn odd_width_rejected() {
        let p = Positions::sequential(1, 3);
        assert!(sinusoidal_encoding::<f32>(&p, 5, 10_000.0).is_err());
    }
}
