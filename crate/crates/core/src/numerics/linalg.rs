use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used for rank checks.
pub const RANK_TOL: f64 = 1e-10;

/// Numerical rank of `x` via SVD with a relative tolerance.
pub fn rank(x: &DMatrix<f64>) -> usize {
    if x.nrows() == 0 || x.ncols() == 0 {
        return 0;
    }
    let sv = x.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > RANK_TOL * max).count()
}

pub fn ensure_full_column_rank(x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() < x.ncols() || rank(x) < x.ncols() {
        return Err(Error::RankDeficient);
    }
    Ok(())
}

/// Inverse of a symmetric positive definite matrix (Cholesky, falling back to LU).
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.inverse());
    }
    a.clone().try_inverse().ok_or(Error::RankDeficient)
}

pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    a.clone().lu().solve(b).ok_or(Error::RankDeficient)
}

/// Least squares `y ~ x` through the normal equations after a rank check.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    ensure_full_column_rank(x)?;
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    solve_spd(&xtx, &xty)
}

/// Sum over clusters of `s_g s_g'` with `s_g = Σ_{i∈g} x_i u_i`.
/// `clusters` holds dense cluster ids `0..n_clusters`.
pub fn cluster_meat(
    x: &DMatrix<f64>,
    u: &DVector<f64>,
    clusters: &[usize],
    n_clusters: usize,
) -> DMatrix<f64> {
    let k = x.ncols();
    let mut scores = DMatrix::<f64>::zeros(n_clusters, k);
    for (i, &g) in clusters.iter().enumerate() {
        for j in 0..k {
            scores[(g, j)] += x[(i, j)] * u[i];
        }
    }
    scores.transpose() * scores
}

/// Number of distinct ids in a dense id vector.
pub fn count_clusters(clusters: &[usize]) -> usize {
    clusters.iter().copied().max().map_or(0, |m| m + 1)
}

/// Relabel arbitrary ids to dense `0..G` in first-appearance order.
pub fn densify<T: Ord + Clone>(ids: &[T]) -> (Vec<usize>, usize) {
    let mut map = std::collections::BTreeMap::new();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let next = map.len();
        let v = *map.entry(id.clone()).or_insert(next);
        out.push(v);
    }
    let g = map.len();
    (out, g)
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_recovers_exact_line() {
        let x = DMatrix::from_fn(6, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_fn(6, |i, _| 2.0 - 0.5 * i as f64);
        let b = ols(&x, &y).unwrap();
        assert!((b[0] - 2.0).abs() < 1e-12 && (b[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn collinear_design_is_rejected() {
        let x = DMatrix::from_fn(5, 2, |i, _| i as f64);
        assert_eq!(ols(&x, &DVector::zeros(5)), Err(Error::RankDeficient));
    }

    #[test]
    fn meat_with_singletons_is_outer_product_sum() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let u = DVector::from_row_slice(&[1.0, -1.0, 0.5]);
        let m = cluster_meat(&x, &u, &[0, 1, 2], 3);
        assert!((m[(0, 0)] - (1.0 + 4.0 + 2.25)).abs() < 1e-12);
        let pooled = cluster_meat(&x, &u, &[0, 0, 0], 1);
        assert!((pooled[(0, 0)] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn densify_keeps_first_appearance_order() {
        let (ids, g) = densify(&["b", "a", "b", "c"]);
        assert_eq!(ids, vec![0, 1, 0, 2]);
        assert_eq!(g, 3);
    }
}
