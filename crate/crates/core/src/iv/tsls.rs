//! Two-stage least squares with cluster-robust (HC1-scaled) inference.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::numerics::linalg::{cluster_meat, densify, ensure_full_column_rank, ols, spd_inverse};
use crate::numerics::stats::normal_two_sided_p;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sargan {
    pub stat: f64,
    pub df: usize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub coefficients: Vec<Estimate>,
    pub cov: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub n_obs: usize,
    pub n_clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSlsFit {
    /// Coefficient on the (first) endogenous regressor.
    pub beta: f64,
    pub se_cluster: f64,
    pub coefficients: Vec<Estimate>,
    pub first_stage_f: f64,
    pub first_stage_f_kind: String,
    pub first_stage_df: usize,
    pub sargan: Option<Sargan>,
    pub wu_hausman_p: f64,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub warnings: Vec<String>,
}

fn to_matrix(cols: &[&[f64]]) -> DMatrix<f64> {
    let n = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

/// Clustered sandwich `B⁻¹ M B⁻¹ · G/(G−1) · (n−1)/(n−k)` with bread `x'x`.
fn clustered_cov(x: &DMatrix<f64>, u: &DVector<f64>, clusters: &[usize], g: usize) -> Result<DMatrix<f64>> {
    let (n, k) = x.shape();
    let inv = spd_inverse(&(x.transpose() * x))?;
    let meat = cluster_meat(x, u, clusters, g);
    let gf = g as f64;
    let scale = if g > 1 && n > k {
        gf / (gf - 1.0) * (n as f64 - 1.0) / (n - k) as f64
    } else {
        1.0
    };
    let v = &inv * meat * &inv * scale;
    Ok((&v + v.transpose()) * 0.5)
}

fn estimates(names: &[String], beta: &DVector<f64>, cov: &DMatrix<f64>) -> Vec<Estimate> {
    names
        .iter()
        .enumerate()
        .map(|(j, n)| {
            let se = cov[(j, j)].max(0.0).sqrt();
            let t = beta[j] / se;
            Estimate {
                name: n.clone(),
                estimate: beta[j],
                se,
                t,
                p: normal_two_sided_p(t),
            }
        })
        .collect()
}

/// Cluster-robust Wald test that the coefficients `idx` are jointly zero, as F = W/q.
fn wald_f(beta: &DVector<f64>, cov: &DMatrix<f64>, idx: &[usize]) -> f64 {
    let q = idx.len();
    let b = DVector::from_iterator(q, idx.iter().map(|&j| beta[j]));
    let v = DMatrix::from_fn(q, q, |a, c| cov[(idx[a], idx[c])]);
    match spd_inverse(&v) {
        Ok(vi) => (b.transpose() * vi * &b)[(0, 0)] / q as f64,
        Err(_) => f64::INFINITY,
    }
}

pub fn ols_clustered<C: Ord + Clone>(y: &[f64], x: &[&[f64]], names: &[String], clusters: &[C]) -> Result<LinearFit> {
    let xm = to_matrix(x);
    let yv = DVector::from_column_slice(y);
    let beta = ols(&xm, &yv)?;
    let u = &yv - &xm * &beta;
    let (ids, g) = densify(clusters);
    let cov = clustered_cov(&xm, &u, &ids, g)?;
    Ok(LinearFit {
        coefficients: estimates(names, &beta, &cov),
        cov: (0..cov.nrows()).map(|i| cov.row(i).iter().copied().collect()).collect(),
        residuals: u.iter().copied().collect(),
        n_obs: y.len(),
        n_clusters: g,
    })
}

/// Cluster-robust Wald F on the excluded instruments in the first stage.
pub fn first_stage_f<C: Ord + Clone>(endog: &[f64], excluded: &[&[f64]], exog: &[&[f64]], clusters: &[C]) -> Result<f64> {
    let z_cols: Vec<&[f64]> = excluded.iter().chain(exog).copied().collect();
    let z = to_matrix(&z_cols);
    let x = DVector::from_column_slice(endog);
    let pi = ols(&z, &x)?;
    let v = &x - &z * &pi;
    let (ids, g) = densify(clusters);
    let cov = clustered_cov(&z, &v, &ids, g)?;
    Ok(wald_f(&pi, &cov, &(0..excluded.len()).collect::<Vec<_>>()))
}

/// 2SLS of `y` on `[endog, exog]` with instruments `[excluded, exog]`.
/// Inputs are taken as already demeaned; no intercept is added.
pub fn two_sls<C: Ord + Clone>(
    y: &[f64],
    endog: &[&[f64]],
    excluded: &[&[f64]],
    exog: &[&[f64]],
    names: &[String],
    clusters: &[C],
) -> Result<TwoSlsFit> {
    let n = y.len();
    let k1 = endog.len();
    let m = excluded.len();
    if k1 == 0 || m == 0 {
        return Err(Error::InvalidParams("need an endogenous regressor and an instrument".into()));
    }
    if m < k1 {
        return Err(Error::InvalidParams("fewer instruments than endogenous regressors".into()));
    }
    let all_cols = endog.iter().chain(excluded).chain(exog);
    if all_cols.clone().any(|c| c.len() != n) || clusters.len() != n {
        return Err(Error::Dimension("columns differ in length".into()));
    }
    if names.len() != k1 + exog.len() {
        return Err(Error::Dimension("one name per regressor".into()));
    }
    let x_cols: Vec<&[f64]> = endog.iter().chain(exog).copied().collect();
    let z_cols: Vec<&[f64]> = excluded.iter().chain(exog).copied().collect();
    let x = to_matrix(&x_cols);
    let z = to_matrix(&z_cols);
    ensure_full_column_rank(&x)?;
    ensure_full_column_rank(&z)?;
    let yv = DVector::from_column_slice(y);
    let (ids, g) = densify(clusters);

    let ztz_inv = spd_inverse(&(z.transpose() * &z))?;
    let pi = &ztz_inv * (z.transpose() * &x);
    let xhat = &z * &pi;
    let beta = spd_inverse(&(xhat.transpose() * &xhat))? * (xhat.transpose() * &yv);
    let u = &yv - &x * &beta;
    let cov = clustered_cov(&xhat, &u, &ids, g)?;

    // first stage for the first endogenous regressor: cluster-robust Wald F on excluded
    let x0 = x.column(0).into_owned();
    let pi0 = pi.column(0).into_owned();
    let v0 = &x0 - &z * &pi0;
    let cov_fs = clustered_cov(&z, &v0, &ids, g)?;
    let first_stage_f = wald_f(&pi0, &cov_fs, &(0..m).collect::<Vec<_>>());

    let sargan = (m > k1).then(|| {
        let fitted = &z * (&ztz_inv * (z.transpose() * &u));
        let uu = u.dot(&u);
        let stat = if uu > 0.0 { n as f64 * fitted.dot(&fitted) / uu } else { 0.0 };
        let df = m - k1;
        let p = ChiSquared::new(df as f64).map(|d| 1.0 - d.cdf(stat)).unwrap_or(f64::NAN);
        Sargan { stat, df, p }
    });

    // control function: add first-stage residuals to the structural equation
    let mut cf_cols = x_cols.clone();
    let v_cols: Vec<Vec<f64>> = (0..k1)
        .map(|j| {
            let r = x.column(j) - &z * pi.column(j);
            r.iter().copied().collect()
        })
        .collect();
    cf_cols.extend(v_cols.iter().map(Vec::as_slice));
    let xc = to_matrix(&cf_cols);
    let wu_hausman_p = match ols(&xc, &yv) {
        Ok(bc) => {
            let uc = &yv - &xc * &bc;
            match clustered_cov(&xc, &uc, &ids, g) {
                Ok(cc) => {
                    let idx: Vec<usize> = (x_cols.len()..cf_cols.len()).collect();
                    let f = wald_f(&bc, &cc, &idx);
                    ChiSquared::new(k1 as f64)
                        .map(|d| 1.0 - d.cdf(f * k1 as f64))
                        .unwrap_or(f64::NAN)
                }
                Err(_) => f64::NAN,
            }
        }
        Err(_) => f64::NAN,
    };

    let mut warnings = Vec::new();
    if first_stage_f < 1.0 {
        warnings.push(format!("weak design: first-stage F = {first_stage_f:.3} < 1"));
    } else if first_stage_f < 10.0 {
        warnings.push(format!("first-stage F = {first_stage_f:.2} below 10"));
    }
    let coefficients = estimates(names, &beta, &cov);
    Ok(TwoSlsFit {
        beta: beta[0],
        se_cluster: coefficients[0].se,
        coefficients,
        first_stage_f,
        first_stage_f_kind: "cluster-robust Wald F on excluded instruments".into(),
        first_stage_df: m,
        sargan,
        wu_hausman_p,
        n_obs: n,
        n_clusters: g,
        warnings,
    })
}
