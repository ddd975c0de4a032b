use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Network hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Frames per tuple.
    pub n: usize,
    /// Output width of each STTA + IFFA layer; its length is the depth.
    pub channels: Vec<usize>,
    pub heads: usize,
    pub qk_dim_per_head: usize,
    /// Width of the output projection along the flattened joint axis.
    pub k1: usize,
    /// Temporal extent of the inter-frame aggregation over tuples.
    pub k2: usize,
    /// Width of the feature mapping and tuple encoding.
    pub c1: usize,
    pub pe_enabled: bool,
    pub sgr_enabled: bool,
    pub iffa_enabled: bool,
    pub leaky_slope: f64,
    pub num_classes: usize,
    pub t0: usize,
    pub v0: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n: 6,
            channels: vec![64, 64, 128, 128, 256, 256, 256, 256],
            heads: 4,
            qk_dim_per_head: 16,
            k1: 1,
            k2: 3,
            c1: 64,
            pe_enabled: true,
            sgr_enabled: true,
            iffa_enabled: true,
            leaky_slope: 0.1,
            num_classes: 60,
            t0: 120,
            v0: 25,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl ModelConfig {
    /// Two-layer network used by gradient checks.
    pub fn tiny() -> Self {
        Self {
            n: 3,
            channels: vec![8, 8],
            heads: 2,
            qk_dim_per_head: 4,
            c1: 8,
            num_classes: 3,
            t0: 12,
            v0: 5,
            ..Self::default()
        }
    }

    /// Four-layer network for desk-scale training runs.
    pub fn small() -> Self {
        Self {
            n: 3,
            channels: vec![16, 16, 32, 32],
            heads: 2,
            qk_dim_per_head: 8,
            c1: 16,
            num_classes: 4,
            t0: 24,
            v0: 8,
            ..Self::default()
        }
    }

    pub fn layers(&self) -> usize {
        self.channels.len()
    }

    /// Tuples per sequence.
    pub fn tuples(&self) -> usize {
        self.t0 / self.n
    }

    /// Joints per tuple.
    pub fn tuple_joints(&self) -> usize {
        self.n * self.v0
    }

    /// Input and output width of layer `i`.
    pub fn layer_io(&self, i: usize) -> (usize, usize) {
        let cin = if i == 0 { self.c1 } else { self.channels[i - 1] };
        (cin, self.channels[i])
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.channels.is_empty() {
            return fail("channels must list at least one layer".into());
        }
        if self.n == 0 || !self.t0.is_multiple_of(self.n) {
            return fail(format!(
                "n={} must divide t0={} (valid choices: {:?})",
                self.n,
                self.t0,
                (1..=self.t0).filter(|d| self.t0.is_multiple_of(*d)).collect::<Vec<_>>()
            ));
        }
        if self.heads == 0 || self.qk_dim_per_head == 0 {
            return fail("heads and qk_dim_per_head must be positive".into());
        }
        if let Some(c) = self.channels.iter().find(|&&c| c == 0 || c % self.heads != 0) {
            return fail(format!("layer width {c} is not a positive multiple of heads={}", self.heads));
        }
        for (name, k) in [("k1", self.k1), ("k2", self.k2)] {
            if k % 2 == 0 {
                return fail(format!("{name}={k} must be odd for same padding"));
            }
        }
        if self.k1 > self.tuple_joints() {
            return fail(format!("k1={} exceeds the {} joints per tuple", self.k1, self.tuple_joints()));
        }
        if self.c1 == 0 || (self.pe_enabled && !self.c1.is_multiple_of(2)) {
            return fail(format!("c1={} must be positive and even when positional encoding is on", self.c1));
        }
        if self.num_classes == 0 || self.v0 == 0 {
            return fail("num_classes and v0 must be positive".into());
        }
        if !(self.leaky_slope.is_finite() && self.bn_eps > 0.0 && (0.0..=1.0).contains(&self.bn_momentum)) {
            return fail("leaky_slope must be finite, bn_eps positive and bn_momentum in [0, 1]".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).into()
    }

    /// Trainable scalars, counted from the layer formulas.
    pub fn count_params(&self) -> usize {
        let (h, d, v, c1) = (self.heads, self.qk_dim_per_head, self.tuple_joints(), self.c1);
        let bn = |c: usize| 2 * c;
        let mut total = 3 * c1 + bn(c1) + c1 * c1 + c1;
        for i in 0..self.layers() {
            let (cin, cout) = self.layer_io(i);
            total += 2 * (cin * h * d + h * d);
            total += cin * cout + cout;
            if self.sgr_enabled {
                total += h * v * v;
            }
            total += cout * cout * self.k1 + bn(cout);
            if cin != cout {
                total += cin * cout + bn(cout);
            }
            total += cout * cout + bn(cout);
            if self.iffa_enabled {
                total += cout * cout * self.k2 + bn(cout);
            }
        }
        total + (self.channels[self.layers() - 1] + 1) * self.num_classes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for c in [ModelConfig::default(), ModelConfig::tiny(), ModelConfig::small()] {
            c.validate().unwrap();
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            ModelConfig { n: 7, ..Default::default() },
            ModelConfig { heads: 3, ..Default::default() },
            ModelConfig { k2: 2, ..Default::default() },
            ModelConfig { channels: vec![], ..Default::default() },
            ModelConfig { c1: 63, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
        let msg = ModelConfig { n: 7, ..Default::default() }.validate().unwrap_err().to_string();
        assert!(msg.contains("must divide"), "{msg}");
    }

    #[test]
    fn digest_tracks_content() {
        let a = ModelConfig::default();
        assert_eq!(a.digest(), a.clone().digest());
        assert_ne!(a.digest(), ModelConfig { k2: 5, ..a.clone() }.digest());
    }

    #[test]
    fn json_round_trip_and_partial_files() {
        let c = ModelConfig::small();
        let back: ModelConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let partial: ModelConfig = serde_json::from_str(r#"{"n": 4}"#).unwrap();
        assert_eq!(partial.n, 4);
        assert!(serde_json::from_str::<ModelConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn class_count_moves_params_by_head_width() {
        let a = ModelConfig::default();
        let b = ModelConfig { num_classes: 120, ..a.clone() };
        assert_eq!(b.count_params() - a.count_params(), 60 * (256 + 1));
    }
}
