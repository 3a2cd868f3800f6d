//! Instrument diagnostics: within-cell permutation of the first stage, an
//! early-round placebo and a cross-fitted ridge "optimal" instrument.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::IvDesign;
use super::tsls::{first_stage_f, ols_clustered, TwoSlsFit};
use crate::error::{Error, Result};
use crate::numerics::linalg::densify;
use crate::numerics::stream_rng;
use crate::panel::Panel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationTest {
    pub observed_f: f64,
    pub p: f64,
    pub reps: usize,
}

/// Shuffles the first excluded instrument within village×round cells and
/// reports the share of shuffled first-stage F at least as large as observed.
pub fn permutation_test(design: &IvDesign, reps: usize, seed: u64) -> Result<PermutationTest> {
    let d = design.demeaned()?;
    let exog: Vec<&[f64]> = d.controls.iter().map(Vec::as_slice).collect();
    let excluded: Vec<&[f64]> = d.instruments.iter().map(Vec::as_slice).collect();
    let observed_f = first_stage_f(&d.endog, &excluded, &exog, &design.clusters)?;

    let mut by_cell: Vec<Vec<usize>> = vec![Vec::new(); design.cells.iter().max().map_or(0, |m| m + 1)];
    for (i, &c) in design.cells.iter().enumerate() {
        by_cell[c].push(i);
    }
    let raw = &design.instruments[0];
    let hits: Vec<bool> = (0..reps)
        .into_par_iter()
        .map(|r| -> Result<bool> {
            let mut rng = stream_rng(seed, r as u64);
            let mut z = raw.clone();
            for rows in &by_cell {
                let mut vals: Vec<f64> = rows.iter().map(|&i| raw[i]).collect();
                vals.shuffle(&mut rng);
                for (&i, v) in rows.iter().zip(vals) {
                    z[i] = v;
                }
            }
            let zd = design.plan.apply(&z)?;
            let mut ex: Vec<&[f64]> = vec![&zd];
            ex.extend(excluded.iter().skip(1));
            Ok(first_stage_f(&d.endog, &ex, &exog, &design.clusters)? >= observed_f)
        })
        .collect::<Result<_>>()?;
    Ok(PermutationTest {
        observed_f,
        p: if reps > 0 { hits.iter().filter(|&&h| h).count() as f64 / reps as f64 } else { f64::NAN },
        reps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placebo {
    pub round: u32,
    pub beta: f64,
    pub se: f64,
    pub n_obs: usize,
}

fn demean_by(x: &[f64], ids: &[usize]) -> Vec<f64> {
    let n = ids.iter().max().map_or(0, |m| m + 1);
    let mut s = vec![0.0; n];
    let mut c = vec![0.0; n];
    for (v, &g) in x.iter().zip(ids) {
        s[g] += v;
        c[g] += 1.0;
    }
    x.iter().zip(ids).map(|(v, &g)| v - s[g] / c[g]).collect()
}

/// Round-1 own contribution on the first instrument at the earliest round
/// where the instrument exists, both demeaned within village.
pub fn placebo(panel: &Panel, design: &IvDesign) -> Result<Placebo> {
    let t0 = design.rows.iter().map(|r| r.1).min().ok_or(Error::EmptyPanel)?;
    let mut y = Vec::new();
    let mut z = Vec::new();
    let mut vil = Vec::new();
    let mut cl = Vec::new();
    for (i, &(p, t)) in design.rows.iter().enumerate() {
        if t != t0 {
            continue;
        }
        if let Some(c1) = panel.contribution(p, 1) {
            y.push(c1);
            z.push(design.instruments[0][i]);
            vil.push(design.villages[i]);
            cl.push(design.clusters[i]);
        }
    }
    let (vil, _) = densify(&vil);
    let yd = demean_by(&y, &vil);
    let zd = demean_by(&z, &vil);
    let fit = ols_clustered(&yd, &[&zd], &["instrument".into()], &cl)?;
    Ok(Placebo {
        round: t0,
        beta: fit.coefficients[0].estimate,
        se: fit.coefficients[0].se,
        n_obs: y.len(),
    })
}

pub const RIDGE_PENALTIES: [f64; 4] = [0.01, 0.1, 1.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossFitIv {
    pub fit: TwoSlsFit,
    pub penalty: f64,
    pub fold_mse: Vec<f64>,
    pub folds: usize,
}

/// Ridge on standardized columns: minimizes |y − Xb|² + λ·n·|b|².
fn ridge(x: &[&[f64]], y: &[f64], rows: &[usize], lambda: f64) -> Vec<f64> {
    let k = x.len();
    let n = rows.len() as f64;
    let mut a = nalgebra::DMatrix::<f64>::zeros(k, k);
    let mut b = nalgebra::DVector::<f64>::zeros(k);
    for &i in rows {
        for p in 0..k {
            b[p] += x[p][i] * y[i];
            for q in 0..k {
                a[(p, q)] += x[p][i] * x[q][i];
            }
        }
    }
    for p in 0..k {
        a[(p, p)] += lambda * n;
    }
    a.cholesky().map(|c| c.solve(&b)).map_or(vec![0.0; k], |s| s.iter().copied().collect())
}

/// Out-of-fold ridge prediction of the demeaned peer regressor from all
/// excluded instruments, used as the single instrument. Folds split clusters.
pub fn crossfit_ridge(design: &IvDesign, folds: usize, seed: u64) -> Result<CrossFitIv> {
    if folds < 2 {
        return Err(Error::InvalidParams("need at least 2 folds".into()));
    }
    let d = design.demeaned()?;
    let sd: Vec<f64> = d
        .instruments
        .iter()
        .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt().max(1e-300))
        .collect();
    let std: Vec<Vec<f64>> = d.instruments.iter().zip(&sd).map(|(c, s)| c.iter().map(|v| v / s).collect()).collect();
    let x: Vec<&[f64]> = std.iter().map(Vec::as_slice).collect();

    let (cl, g) = densify(&design.clusters);
    let mut order: Vec<usize> = (0..g).collect();
    order.shuffle(&mut stream_rng(seed, 0));
    let mut fold_of_cluster = vec![0; g];
    for (pos, &c) in order.iter().enumerate() {
        fold_of_cluster[c] = pos % folds;
    }
    let fold: Vec<usize> = cl.iter().map(|&c| fold_of_cluster[c]).collect();

    let n = d.endog.len();
    let predict = |lambda: f64| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for f in 0..folds {
            let train: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
            let b = ridge(&x, &d.endog, &train, lambda);
            for i in (0..n).filter(|&i| fold[i] == f) {
                out[i] = (0..x.len()).map(|p| b[p] * x[p][i]).sum();
            }
        }
        out
    };
    let mut best = (f64::INFINITY, 0.0, Vec::new());
    let mut fold_mse = Vec::new();
    for &lambda in &RIDGE_PENALTIES {
        let pred = predict(lambda);
        let mse = pred.iter().zip(&d.endog).map(|(p, e)| (p - e).powi(2)).sum::<f64>() / n as f64;
        fold_mse.push(mse);
        if mse < best.0 {
            best = (mse, lambda, pred);
        }
    }
    let fit = design.estimate_with(&d, &[best.2])?;
    Ok(CrossFitIv {
        fit,
        penalty: best.1,
        fold_mse,
        folds,
    })
}
