//! Logistic regression by IRLS with a cluster-robust sandwich covariance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::linalg::{cluster_meat, count_clusters, ensure_full_column_rank, min_eigenvalue, spd_inverse};
use crate::numerics::stats::{logistic, normal_two_sided_p};

pub const MAX_ITER: usize = 100;
pub const TOL: f64 = 1e-10;
/// |β_j| beyond this is read as divergence towards separation.
pub const SEPARATION_BOUND: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
    pub odds_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitFit {
    pub coefficients: Vec<Coefficient>,
    /// Clustered sandwich, rows in coefficient order.
    pub cov_robust: Vec<Vec<f64>>,
    pub loglik: f64,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub iterations: usize,
    pub converged: bool,
    pub separation: bool,
    pub gradient_max: f64,
    pub cluster_var: String,
}

impl LogitFit {
    pub fn beta(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.estimate).collect()
    }

    pub fn coef(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        logistic(self.coefficients.iter().zip(x).map(|(c, v)| c.estimate * v).sum())
    }
}

fn loglik(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    // log p = −log(1+e^{−η}), log(1−p) = −log(1+e^{η})
    let softplus = |z: f64| if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| -yi * softplus(-e) - (1.0 - yi) * softplus(e))
        .sum()
}

/// `x` must contain any intercept column; `clusters` are arbitrary ids per row.
pub fn fit_logit<C: Ord + Clone>(
    x: &DMatrix<f64>,
    y: &[f64],
    names: &[String],
    clusters: &[C],
    cluster_var: &str,
) -> Result<LogitFit> {
    let (n, k) = x.shape();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if y.len() != n || clusters.len() != n || names.len() != k {
        return Err(Error::Dimension(format!(
            "{n} rows, {k} columns but {} responses, {} clusters, {} names",
            y.len(),
            clusters.len(),
            names.len()
        )));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidParams("response must be 0/1".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams("non-finite predictor".into()));
    }
    ensure_full_column_rank(x)?;

    let mut beta = DVector::zeros(k);
    let mut ll = loglik(x, y, &beta);
    let mut converged = false;
    let mut iterations = 0;
    let yv = DVector::from_column_slice(y);
    for it in 1..=MAX_ITER {
        iterations = it;
        let eta = x * &beta;
        let p = eta.map(logistic);
        let w = p.map(|pi| (pi * (1.0 - pi)).max(1e-300));
        let grad = x.transpose() * (&yv - &p);
        let mut xtwx = DMatrix::zeros(k, k);
        for i in 0..n {
            let row = x.row(i);
            xtwx += row.transpose() * row * w[i];
        }
        let step = match xtwx.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => match xtwx.lu().solve(&grad) {
                Some(s) => s,
                None => break,
            },
        };
        // step halving keeps the log-likelihood from decreasing
        let mut t = 1.0;
        let mut next = &beta + &step * t;
        let mut ll_next = loglik(x, y, &next);
        while ll_next < ll - 1e-12 * ll.abs() && t > 1e-6 {
            t *= 0.5;
            next = &beta + &step * t;
            ll_next = loglik(x, y, &next);
        }
        let change = (&next - &beta).amax();
        beta = next;
        ll = ll_next;
        if change < TOL {
            converged = true;
            break;
        }
        if beta.amax() > 50.0 {
            break;
        }
    }

    let p = (x * &beta).map(logistic);
    let resid = &yv - &p;
    let grad = x.transpose() * &resid;
    let gradient_max = grad.amax();
    converged = converged && gradient_max < 1e-8 * (1.0 + n as f64 / 1e4);
    let separation = beta.amax() > SEPARATION_BOUND;

    let mut bread = DMatrix::zeros(k, k);
    for i in 0..n {
        let row = x.row(i);
        bread += row.transpose() * row * (p[i] * (1.0 - p[i]));
    }
    let (ids, g) = crate::numerics::linalg::densify(clusters);
    debug_assert_eq!(g, count_clusters(&ids));
    let cov = match spd_inverse(&bread) {
        Ok(inv) => {
            let meat = cluster_meat(x, &resid, &ids, g);
            let scale = if g > 1 { g as f64 / (g as f64 - 1.0) } else { 1.0 };
            let v = &inv * meat * &inv * scale;
            (&v + v.transpose()) * 0.5
        }
        Err(_) => DMatrix::from_element(k, k, f64::NAN),
    };
    debug_assert!(cov.iter().any(|v| v.is_nan()) || min_eigenvalue(&cov) > -1e-8 * (1.0 + cov.amax()));

    let coefficients = (0..k)
        .map(|j| {
            let se = cov[(j, j)].max(0.0).sqrt();
            let z = beta[j] / se;
            Coefficient {
                name: names[j].clone(),
                estimate: beta[j],
                se,
                z,
                p: normal_two_sided_p(z),
                odds_ratio: beta[j].exp(),
            }
        })
        .collect();
    Ok(LogitFit {
        coefficients,
        cov_robust: (0..k).map(|i| (0..k).map(|j| cov[(i, j)]).collect()).collect(),
        loglik: ll,
        n_obs: n,
        n_clusters: g,
        iterations,
        converged,
        separation,
        gradient_max,
        cluster_var: cluster_var.to_string(),
    })
}

pub(crate) fn design(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let k = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::stream_rng;
    use rand::Rng;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|j| format!("x{j}")).collect()
    }

    fn dgp(n: usize, beta: [f64; 2], seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = stream_rng(seed, 0);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![1.0, rng.random_range(-1.5..1.5)]).collect();
        let y = rows
            .iter()
            .map(|r| rng.random_bool(logistic(beta[0] + beta[1] * r[1])) as u8 as f64)
            .collect();
        (design(&rows), y)
    }

    #[test]
    fn recovers_planted_coefficients() {
        let (x, y) = dgp(5000, [-1.0, 2.0], 8);
        let ids: Vec<usize> = (0..5000).map(|i| i / 10).collect();
        let fit = fit_logit(&x, &y, &names(2), &ids, "block").unwrap();
        assert!(fit.converged && !fit.separation);
        assert!(fit.gradient_max < 1e-8);
        for (c, truth) in fit.coefficients.iter().zip([-1.0, 2.0]) {
            assert!((c.estimate - truth).abs() < 3.0 * c.se, "{} vs {truth}", c.estimate);
        }
        let cov = DMatrix::from_fn(2, 2, |i, j| fit.cov_robust[i][j]);
        assert!(min_eigenvalue(&cov) > -1e-8);
        assert_eq!(fit.n_clusters, 500);
    }

    #[test]
    fn independent_response_covers_zero() {
        let (x, _) = dgp(2000, [0.0, 0.0], 2);
        let mut rng = stream_rng(99, 0);
        let y: Vec<f64> = (0..2000).map(|_| rng.random_bool(0.5) as u8 as f64).collect();
        let ids: Vec<usize> = (0..2000).collect();
        let fit = fit_logit(&x, &y, &names(2), &ids, "row").unwrap();
        let s = &fit.coefficients[1];
        assert!(s.estimate.abs() < 1.96 * s.se * 1.5);
    }

    #[test]
    fn separation_is_flagged() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![1.0, i as f64 / 40.0]).collect();
        let y: Vec<f64> = (0..40).map(|i| (i >= 20) as u8 as f64).collect();
        let ids: Vec<usize> = (0..40).collect();
        let fit = fit_logit(&design(&rows), &y, &names(2), &ids, "row").unwrap();
        assert!(fit.separation);
        let cut = -fit.coefficients[0].estimate / fit.coefficients[1].estimate;
        assert!((cut - 19.5 / 40.0).abs() < 0.02, "cut {cut}");
    }

    #[test]
    fn rescaling_a_predictor_rescales_its_coefficient() {
        let (x, y) = dgp(1000, [0.5, -1.0], 4);
        let mut x3 = x.clone();
        for i in 0..x3.nrows() {
            x3[(i, 1)] *= 3.0;
        }
        let ids: Vec<usize> = (0..1000).collect();
        let a = fit_logit(&x, &y, &names(2), &ids, "row").unwrap();
        let b = fit_logit(&x3, &y, &names(2), &ids, "row").unwrap();
        assert!((a.coefficients[1].estimate / 3.0 - b.coefficients[1].estimate).abs() < 1e-9);
        for i in 0..1000 {
            let pa = a.predict(&[x[(i, 0)], x[(i, 1)]]);
            let pb = b.predict(&[x3[(i, 0)], x3[(i, 1)]]);
            assert!((pa - pb).abs() < 1e-9);
        }
    }

    #[test]
    fn rank_and_shape_errors() {
        let rows: Vec<Vec<f64>> = (0..10).map(|_| vec![1.0, 2.0]).collect();
        let y = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let ids: Vec<usize> = (0..10).collect();
        assert_eq!(
            fit_logit(&design(&rows), &y, &names(2), &ids, "row").unwrap_err(),
            Error::RankDeficient
        );
        let bad = vec![0.5; 10];
        assert!(fit_logit(&design(&rows), &bad, &names(2), &ids, "row").is_err());
    }
}
