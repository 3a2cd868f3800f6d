//! Nonparametric drift `m(c) = E[Δc | c]` and its zero (the empirical tipping point).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::golden::bisect;
use crate::numerics::spline::{default_lambda_grid, evaluate, fit_gcv, BSplineBasis, SplineStats};
use crate::numerics::stats::quantile;
use crate::numerics::stream_rng;
use crate::panel::Panel;

pub const MIN_PLAYERS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    pub interior_knots: usize,
    pub bootstrap_reps: usize,
    /// Lower and upper trimming percentiles of the level `c`.
    pub trim: (f64, f64),
    pub grid_points: usize,
    pub seed: u64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            interior_knots: 12,
            bootstrap_reps: 500,
            trim: (0.01, 0.99),
            grid_points: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftFit {
    pub grid: Vec<f64>,
    pub m_hat: Vec<f64>,
    pub band_lo: Vec<f64>,
    pub band_hi: Vec<f64>,
    /// First downward zero crossing; `None` when the drift never changes sign.
    pub c_star: Option<f64>,
    pub c_star_ci: Option<(f64, f64)>,
    pub lambda: f64,
    pub edf: f64,
    pub n_players: usize,
    pub n_increments: usize,
    pub trim_range: (f64, f64),
    /// Bootstrap replicates whose curve had a downward crossing.
    pub bootstrap_roots: usize,
}

/// Per-player sufficient statistics, so the bootstrap only sums matrices.
struct PlayerStats {
    btb: DMatrix<f64>,
    bty: DVector<f64>,
    yty: f64,
    n: usize,
}

fn sum_stats<'a>(k: usize, items: impl Iterator<Item = &'a PlayerStats>) -> SplineStats {
    let mut out = SplineStats {
        btb: DMatrix::zeros(k, k),
        bty: DVector::zeros(k),
        yty: 0.0,
        n: 0,
    };
    for s in items {
        out.btb += &s.btb;
        out.bty += &s.bty;
        out.yty += s.yty;
        out.n += s.n;
    }
    out
}

fn first_down_crossing(basis: &BSplineBasis, coef: &DVector<f64>, grid: &[f64], m: &[f64]) -> Option<f64> {
    let j = (0..m.len() - 1).find(|&j| m[j] > 0.0 && m[j + 1] <= 0.0)?;
    if m[j + 1] == 0.0 {
        return Some(grid[j + 1]);
    }
    bisect(|x| evaluate(basis, coef, x), grid[j], grid[j + 1], 1e-10)
}

pub fn fit_drift(panel: &Panel, cfg: &DriftConfig) -> Result<DriftFit> {
    if panel.rounds() < 2 {
        return Err(Error::TooFewRounds {
            needed: 2,
            found: panel.rounds() as usize,
        });
    }
    // increments c_{t+1} − c_t for t = 1..T−1 (the last round only closes a pair)
    let mut per_player: Vec<Vec<(f64, f64)>> = Vec::new();
    for p in 0..panel.n_players() {
        let pairs: Vec<(f64, f64)> = (1..panel.rounds())
            .filter_map(|t| {
                let a = panel.contribution(p, t)?;
                let b = panel.contribution(p, t + 1)?;
                Some((a, b - a))
            })
            .collect();
        if !pairs.is_empty() {
            per_player.push(pairs);
        }
    }
    if per_player.len() < MIN_PLAYERS {
        return Err(Error::TooFewPlayers {
            needed: MIN_PLAYERS,
            found: per_player.len(),
        });
    }
    if cfg.grid_points < 2 || !(cfg.trim.0 >= 0.0 && cfg.trim.0 < cfg.trim.1 && cfg.trim.1 <= 1.0) {
        return Err(Error::InvalidParams("need ≥ 2 grid points and 0 ≤ lo < hi ≤ 1 trims".into()));
    }

    let levels: Vec<f64> = per_player.iter().flatten().map(|(c, _)| *c).collect();
    let mut lo = quantile(&levels, cfg.trim.0);
    let mut hi = quantile(&levels, cfg.trim.1);
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let basis = BSplineBasis::uniform(lo, hi, cfg.interior_knots)?;
    let k = basis.len();
    let stats: Vec<PlayerStats> = per_player
        .iter()
        .map(|pairs| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = pairs
                .iter()
                .filter(|(c, _)| *c >= lo && *c <= hi)
                .cloned()
                .unzip();
            let s = SplineStats::accumulate(&basis, &xs, &ys);
            PlayerStats {
                btb: s.btb,
                bty: s.bty,
                yty: s.yty,
                n: s.n,
            }
        })
        .collect();

    let lambdas = default_lambda_grid();
    let full = sum_stats(k, stats.iter());
    let fit = fit_gcv(&basis, &full, &lambdas)?;
    let grid: Vec<f64> = (0..cfg.grid_points)
        .map(|i| lo + (hi - lo) * i as f64 / (cfg.grid_points - 1) as f64)
        .collect();
    let m_hat: Vec<f64> = grid.iter().map(|&x| evaluate(&basis, &fit.coef, x)).collect();
    let c_star = first_down_crossing(&basis, &fit.coef, &grid, &m_hat);

    // player-level bootstrap with the penalty re-selected in every replicate
    let n = stats.len();
    let boot: Vec<Option<(Vec<f64>, Option<f64>)>> = (0..cfg.bootstrap_reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(cfg.seed, rep as u64);
            let draw: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let s = sum_stats(k, draw.iter().map(|&i| &stats[i]));
            let f = fit_gcv(&basis, &s, &lambdas).ok()?;
            let m: Vec<f64> = grid.iter().map(|&x| evaluate(&basis, &f.coef, x)).collect();
            let root = first_down_crossing(&basis, &f.coef, &grid, &m);
            Some((m, root))
        })
        .collect();
    let boot: Vec<(Vec<f64>, Option<f64>)> = boot.into_iter().flatten().collect();

    let (mut band_lo, mut band_hi) = (m_hat.clone(), m_hat.clone());
    if !boot.is_empty() {
        for j in 0..grid.len() {
            let col: Vec<f64> = boot.iter().map(|(m, _)| m[j]).collect();
            band_lo[j] = quantile(&col, 0.025).min(m_hat[j]);
            band_hi[j] = quantile(&col, 0.975).max(m_hat[j]);
        }
    }
    let roots: Vec<f64> = boot.iter().filter_map(|(_, r)| *r).collect();
    let c_star_ci = (c_star.is_some() && !roots.is_empty())
        .then(|| (quantile(&roots, 0.025), quantile(&roots, 0.975)));

    Ok(DriftFit {
        grid,
        m_hat,
        band_lo,
        band_hi,
        c_star,
        c_star_ci,
        lambda: fit.lambda,
        edf: fit.edf,
        n_players: n,
        n_increments: full.n,
        trim_range: (lo, hi),
        bootstrap_roots: roots.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn ar_panel(players: usize, target: f64, a: f64, sd: f64, seed: u64) -> Panel {
        let mut rng = stream_rng(seed, 0);
        let noise = Normal::new(0.0, sd).unwrap();
        let paths: Vec<Vec<Option<f64>>> = (0..players)
            .map(|_| {
                let mut c = rng.random_range(0.0..=12.0);
                (0..10)
                    .map(|t| {
                        if t > 0 {
                            c = (c + a * (target - c) + noise.sample(&mut rng)).clamp(0.0, 12.0);
                        }
                        Some(c)
                    })
                    .collect()
            })
            .collect();
        Panel::from_paths(&paths, 5, 10).unwrap()
    }

    #[test]
    fn linear_drift_root_is_recovered() {
        let panel = ar_panel(1000, 6.5, 0.4, 1.0, 3);
        let fit = fit_drift(
            &panel,
            &DriftConfig {
                bootstrap_reps: 100,
                seed: 1,
                ..DriftConfig::default()
            },
        )
        .unwrap();
        let c = fit.c_star.unwrap();
        assert!((c - 6.5).abs() < 0.25, "c*={c}");
        let (lo, hi) = fit.c_star_ci.unwrap();
        assert!(lo <= c && c <= hi);
        for j in 0..fit.grid.len() {
            assert!(fit.band_lo[j] <= fit.m_hat[j] && fit.m_hat[j] <= fit.band_hi[j]);
        }
    }

    #[test]
    fn constant_panel_has_no_crossing() {
        let paths: Vec<Vec<Option<f64>>> = (0..60).map(|i| vec![Some((i % 12) as f64); 10]).collect();
        let panel = Panel::from_paths(&paths, 5, 4).unwrap();
        let fit = fit_drift(
            &panel,
            &DriftConfig {
                bootstrap_reps: 20,
                ..DriftConfig::default()
            },
        )
        .unwrap();
        assert!(fit.c_star.is_none() && fit.c_star_ci.is_none());
        assert!(fit.m_hat.iter().all(|m| m.abs() < 1e-9));
    }

    #[test]
    fn too_few_players() {
        let paths: Vec<Vec<Option<f64>>> = (0..20).map(|i| vec![Some((i % 12) as f64); 10]).collect();
        let panel = Panel::from_paths(&paths, 5, 4).unwrap();
        assert!(matches!(
            fit_drift(&panel, &DriftConfig::default()),
            Err(Error::TooFewPlayers { needed: 50, found: 20 })
        ));
    }
}
