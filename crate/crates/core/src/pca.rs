//! Two-component principal-component projection for embedding-space plots.
//!
//! Implemented with power iteration plus deflation so the crate stays free
//! of LAPACK bindings; the matrices involved are tiny (dozens of vectors,
//! widths in the tens).

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

const ITERATIONS: usize = 300;

/// Project the rows of `points` onto their top two principal components.
///
/// Returns an `[n, 2]` coordinate matrix. Fails with
/// [`Error::DegenerateGeometry`] when fewer than two distinct rows exist,
/// since no plane is determined.
pub fn project_2d(points: &Array2<f64>) -> Result<Array2<f64>> {
    let n = points.nrows();
    let d = points.ncols();
    let distinct = {
        let mut rows: Vec<Vec<u64>> = points
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        rows.sort();
        rows.dedup();
        rows.len()
    };
    if distinct < 2 {
        return Err(Error::DegenerateGeometry(format!(
            "need at least 2 distinct vectors for a 2-D projection, got {distinct}"
        )));
    }

    // center
    let mean = points.sum_axis(ndarray::Axis(0)) / n as f64;
    let mut centered = points.clone();
    for mut row in centered.rows_mut() {
        row -= &mean;
    }

    // covariance (biased normalization is fine for direction finding)
    let cov = centered.t().dot(&centered) / n as f64;

    let v1 = power_iterate(&cov, 0);
    let lambda1 = v1.dot(&cov.dot(&v1));
    // deflate and find the second direction
    let mut deflated = cov.clone();
    for i in 0..d {
        for j in 0..d {
            deflated[[i, j]] -= lambda1 * v1[i] * v1[j];
        }
    }
    let mut v2 = power_iterate(&deflated, 1);
    // force orthogonality to v1; for rank-1 data the deflated matrix is ~0
    // and the iterate may still point along v1
    let overlap = v2.dot(&v1);
    v2 = &v2 - &(&v1 * overlap);
    let norm = v2.dot(&v2).sqrt();
    if norm > 1e-9 {
        v2 /= norm;
    } else {
        // any direction orthogonal to v1 works: orthogonalize the basis
        // vector least aligned with v1
        let k = (0..d)
            .min_by(|&a, &b| v1[a].abs().partial_cmp(&v1[b].abs()).unwrap())
            .unwrap();
        v2 = Array1::zeros(d);
        v2[k] = 1.0;
        let overlap = v2.dot(&v1);
        v2 = &v2 - &(&v1 * overlap);
        normalize(&mut v2);
    }

    let mut out = Array2::zeros((n, 2));
    for (i, row) in centered.rows().into_iter().enumerate() {
        out[[i, 0]] = row.dot(&v1);
        out[[i, 1]] = row.dot(&v2);
    }
    Ok(out)
}

/// Deterministic power iteration; `phase` varies the start vector so the
/// second component does not start parallel to the first.
fn power_iterate(m: &Array2<f64>, phase: usize) -> Array1<f64> {
    let d = m.ncols();
    let mut v = Array1::from_shape_fn(d, |i| {
        1.0 + 0.37 * ((i + 1) * (phase + 2)) as f64 % 1.9
    });
    normalize(&mut v);
    for _ in 0..ITERATIONS {
        let next = m.dot(&v);
        let norm = next.dot(&next).sqrt();
        if norm < 1e-300 {
            // zero matrix after deflation: direction is arbitrary; keep v
            break;
        }
        v = next / norm;
    }
    v
}

fn normalize(v: &mut Array1<f64>) {
    let norm = v.dot(&*v).sqrt();
    if norm > 0.0 {
        *v /= norm;
    }
}
