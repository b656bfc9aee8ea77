use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 3D rotary embedding over `(t, x, y)`: the feature vector is split into three
/// equal blocks, one per axis, each rotated pairwise at geometric frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotaryConfig {
    pub dim: usize,
    pub base_frequency: f64,
}

impl Default for RotaryConfig {
    fn default() -> Self {
        Self {
            dim: 384,
            base_frequency: 1e4,
        }
    }
}

impl RotaryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim % 6 != 0 {
            return Err(Error::Config(format!(
                "rotary dim {} must be a positive multiple of 6",
                self.dim
            )));
        }
        if !(self.base_frequency > 1.0) {
            return Err(Error::Config(format!(
                "rotary base_frequency {} must exceed 1",
                self.base_frequency
            )));
        }
        Ok(())
    }

    /// Angular frequency of pair `k` within an axis block.
    pub fn frequency(&self, k: usize) -> f64 {
        let axis_dim = (self.dim / 3) as f64;
        self.base_frequency.powf(-2.0 * k as f64 / axis_dim)
    }
}

pub fn apply_rotary(vec: &[f64], coords: [f64; 3], c: &RotaryConfig) -> Result<Vec<f64>> {
    c.validate()?;
    if vec.len() != c.dim {
        return Err(Error::DimensionMismatch {
            context: "rotary input",
            expected: c.dim,
            actual: vec.len(),
        });
    }
    let axis_dim = c.dim / 3;
    let mut out = vec.to_vec();
    for (axis, &pos) in coords.iter().enumerate() {
        let block = axis * axis_dim;
        for k in 0..axis_dim / 2 {
            let (s, co) = (pos * c.frequency(k)).sin_cos();
            let i = block + 2 * k;
            let (a, b) = (vec[i], vec[i + 1]);
            out[i] = a * co - b * s;
            out[i + 1] = a * s + b * co;
        }
    }
    Ok(out)
}
