use std::path::Path;

use crate::error::{Error, Result};
use crate::panorama::Raster;

/// Deterministic map from a square RGB raster to a fixed-length vector.
pub trait FeatureExtractor: Send + Sync {
    fn dim(&self) -> usize;
    fn extract(&self, raster: &Raster) -> Vec<f64>;
}

/// Box-downsamples the view to a `grid x grid` RGB image, subtracts the
/// mean over all entries and flattens it (192 values for the 8x8 default).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyExtractor {
    pub grid: usize,
}

impl Default for ToyExtractor {
    fn default() -> Self {
        Self { grid: 8 }
    }
}

impl FeatureExtractor for ToyExtractor {
    fn dim(&self) -> usize {
        self.grid * self.grid * 3
    }

    fn extract(&self, raster: &Raster) -> Vec<f64> {
        let g = self.grid;
        let n = raster.size();
        let span = |i: usize| {
            let lo = i * n / g;
            let hi = ((i + 1) * n / g).max(lo + 1).min(n);
            (lo.min(n - 1), hi)
        };
        let mut out = Vec::with_capacity(self.dim());
        for cy in 0..g {
            let (y0, y1) = span(cy);
            for cx in 0..g {
                let (x0, x1) = span(cx);
                let mut acc = [0.0; 3];
                for y in y0..y1 {
                    for px in &raster.pixels()[y * n + x0..y * n + x1] {
                        for k in 0..3 {
                            acc[k] += px[k];
                        }
                    }
                }
                let count = ((y1 - y0) * (x1 - x0)) as f64;
                out.extend(acc.map(|v| v / count));
            }
        }
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        out.iter_mut().for_each(|v| *v -= mean);
        out
    }
}

/// Cosine similarity; 0 when either vector is all zeros.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Text vector file: a `dim N` header line followed by N whitespace-separated
/// values. Lines starting with `#` are comments.
pub fn load_feature_vector(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::Manifest {
        path: path.to_path_buf(),
        message,
    };
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| bad("missing `dim` header".into()))?;
    let dim: usize = header
        .strip_prefix("dim")
        .and_then(|d| d.trim().parse().ok())
        .ok_or_else(|| bad(format!("bad header `{header}`")))?;
    let values = lines
        .flat_map(str::split_whitespace)
        .map(|tok| tok.parse::<f64>().map_err(|e| bad(format!("bad value `{tok}`: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if values.len() != dim {
        return Err(bad(format!("declared dim {dim} but found {} values", values.len())));
    }
    Ok(values)
}

pub fn save_feature_vector(path: impl AsRef<Path>, values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut text = format!("dim {}\n", values.len());
    for v in values {
        text.push_str(&format!("{v:e}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
