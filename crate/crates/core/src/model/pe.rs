use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Sinusoidal table `[c, v]`: row `2i` holds `sin(p / 10000^(2i/c))` and row
/// `2i+1` the matching cosine, for joint position `p`.
pub fn positional_encoding<T: Real>(c: usize, v: usize) -> Result<Tensor<T>> {
    if !c.is_multiple_of(2) {
        return Err(Error::Config(format!("positional encoding needs an even width, got {c}")));
    }
    let mut data = vec![T::zero(); c * v];
    for i in 0..c / 2 {
        let inv_freq = 10000f64.powf(-((2 * i) as f64) / c as f64);
        for p in 0..v {
            let a = p as f64 * inv_freq;
            data[2 * i * v + p] = T::of(a.sin());
            data[(2 * i + 1) * v + p] = T::of(a.cos());
        }
    }
    Tensor::new(vec![c, v], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_entries() {
        let pe = positional_encoding::<f64>(64, 150).unwrap();
        assert_eq!(pe.at(&[0, 0]), 0.0);
        assert_eq!(pe.at(&[1, 0]), 1.0);
        assert!((pe.at(&[0, 1]) - 0.841471).abs() < 1e-6);
        assert_eq!(pe.at(&[0, 1]), 1f64.sin());
    }

    #[test]
    fn pair_energy_is_half_width() {
        for c in [2, 8, 64, 256] {
            let pe = positional_encoding::<f64>(c, 150).unwrap();
            for p in 0..150 {
                let e: f64 = (0..c).map(|r| pe.at(&[r, p]).powi(2)).sum();
                assert!((e - c as f64 / 2.0).abs() < 1e-12, "c={c} p={p} e={e}");
            }
        }
    }

    #[test]
    fn odd_width_rejected() {
        assert!(positional_encoding::<f32>(3, 4).is_err());
    }
}
