use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Discrete Fréchet distance between two polylines.
///
/// Dynamic program over the coupling lattice,
/// `c(i, j) = max(|a_i - b_j|, min(c(i-1, j), c(i, j-1), c(i-1, j-1)))`,
/// in `O(nm)` time while keeping a single row of the shorter path.
pub fn discrete_frechet(path_a: &[Vector3<f64>], path_b: &[Vector3<f64>]) -> Result<f64> {
    if path_a.is_empty() || path_b.is_empty() {
        return Err(Error::EmptyPath("discrete_frechet"));
    }
    // the distance is symmetric, so iterate rows over the longer path
    let (outer, inner) = if path_a.len() >= path_b.len() {
        (path_a, path_b)
    } else {
        (path_b, path_a)
    };

    let mut row = Vec::with_capacity(inner.len());
    let mut acc = 0.0f64;
    for b in inner {
        acc = acc.max((outer[0] - b).norm());
        row.push(acc);
    }

    for a in &outer[1..] {
        let mut diag = row[0];
        row[0] = row[0].max((a - inner[0]).norm());
        for j in 1..inner.len() {
            let up = row[j];
            let best = up.min(row[j - 1]).min(diag);
            row[j] = best.max((a - inner[j]).norm());
            diag = up;
        }
    }
    Ok(row[inner.len() - 1])
}
