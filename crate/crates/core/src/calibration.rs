//! Fitting (d, k) of the Fermi–Moran process to an observed 2×2 transition
//! matrix: coarse grid under common random numbers, then box-clamped
//! Nelder–Mead refinement.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moran::{simulate_fermi, FermiParams, FermiVariant, TransitionMatrix2};
use crate::numerics::nelder_mead::{self, NelderMeadConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Range {
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.lo + i as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub d: Range,
    pub k: Range,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            d: Range {
                lo: -2.0,
                hi: 3.0,
                step: 0.25,
            },
            k: Range {
                lo: 0.0,
                hi: 1.5,
                step: 0.25,
            },
        }
    }
}

impl Grid {
    /// Parses `d=lo:hi:step,k=lo:hi:step`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut d = None;
        let mut k = None;
        for part in s.split(',') {
            let (name, spec) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidGrid(format!("expected name=lo:hi:step in `{part}`")))?;
            let nums: Vec<f64> = spec
                .split(':')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::InvalidGrid(format!("bad number in `{part}`")))?;
            if nums.len() != 3 {
                return Err(Error::InvalidGrid(format!("`{part}` needs lo:hi:step")));
            }
            let r = Range {
                lo: nums[0],
                hi: nums[1],
                step: nums[2],
            };
            match name.trim() {
                "d" => d = Some(r),
                "k" => k = Some(r),
                other => return Err(Error::InvalidGrid(format!("unknown axis `{other}`"))),
            }
        }
        let g = Self {
            d: d.ok_or_else(|| Error::InvalidGrid("missing d axis".into()))?,
            k: k.ok_or_else(|| Error::InvalidGrid("missing k axis".into()))?,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("d", &self.d), ("k", &self.k)] {
            if !(r.step > 0.0) || !(r.hi >= r.lo) || !r.lo.is_finite() || !r.hi.is_finite() {
                return Err(Error::InvalidGrid(format!("axis {name} is empty or has step ≤ 0")));
            }
        }
        if self.k.lo < 0.0 {
            return Err(Error::InvalidGrid("k range must lie in [0, ∞)".into()));
        }
        Ok(())
    }

    /// Cells in scan order: d outer, k inner.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        let ks = self.k.values();
        self.d
            .values()
            .into_iter()
            .flat_map(|d| ks.iter().map(move |&k| (d, k)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Simulation settings; `d_tilt`, `k_intensity` and `replicates` are overridden.
    pub sim: FermiParams,
    pub initial_high_share: f64,
    pub variant: FermiVariant,
    pub grid_replicates: usize,
    pub refine_replicates: usize,
    pub refine: bool,
    pub simplex_tol: f64,
    pub max_iter: usize,
    pub keep_surface: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            sim: FermiParams::default(),
            initial_high_share: 0.5,
            variant: FermiVariant::Multinomial,
            grid_replicates: 200,
            refine_replicates: 1000,
            refine: true,
            simplex_tol: 1e-3,
            max_iter: 200,
            keep_surface: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub d: f64,
    pub k: f64,
    pub rss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub d_hat: f64,
    pub k_hat: f64,
    /// The identified combination k·d.
    pub kd_hat: f64,
    pub rss: f64,
    pub grid_best: SurfacePoint,
    pub surface: Option<Vec<SurfacePoint>>,
    pub fitted: TransitionMatrix2,
    pub target: TransitionMatrix2,
    /// Estimate sits on the edge of the search box.
    pub boundary: bool,
    /// Refinement beat the grid minimum.
    pub refined: bool,
    pub refine_iterations: usize,
}

fn check_inputs(target: &TransitionMatrix2, grid: &Grid) -> Result<()> {
    if !target.is_row_stochastic(1e-9) {
        return Err(Error::NonStochasticTarget);
    }
    grid.validate()
}

fn simulate_at(cfg: &CalibrationConfig, d: f64, k: f64, reps: usize) -> Result<TransitionMatrix2> {
    let params = FermiParams {
        d_tilt: d,
        k_intensity: k,
        replicates: reps,
        ..cfg.sim.clone()
    };
    Ok(simulate_fermi(&params, cfg.initial_high_share, cfg.variant)?.matrix)
}

fn evaluate_grid(
    target: &TransitionMatrix2,
    cfg: &CalibrationConfig,
    grid: &Grid,
) -> Result<Vec<(SurfacePoint, TransitionMatrix2)>> {
    grid.cells()
        .into_par_iter()
        .map(|(d, k)| {
            let m = simulate_at(cfg, d, k, cfg.grid_replicates)?;
            Ok((SurfacePoint { d, k, rss: m.rss(target) }, m))
        })
        .collect()
}

/// RSS at every grid cell, in scan order (d outer, k inner).
pub fn loss_surface(
    target: &TransitionMatrix2,
    cfg: &CalibrationConfig,
    grid: &Grid,
) -> Result<Vec<SurfacePoint>> {
    check_inputs(target, grid)?;
    Ok(evaluate_grid(target, cfg, grid)?
        .into_iter()
        .map(|(p, _)| p)
        .collect())
}

pub fn calibrate(
    target: &TransitionMatrix2,
    cfg: &CalibrationConfig,
    grid: &Grid,
) -> Result<CalibrationResult> {
    check_inputs(target, grid)?;
    let evaluated = evaluate_grid(target, cfg, grid)?;
    // first cell in scan order wins ties
    let mut best = 0;
    for (i, (p, _)) in evaluated.iter().enumerate() {
        if p.rss < evaluated[best].0.rss {
            best = i;
        }
    }
    let (grid_best, grid_matrix) = evaluated[best];

    let (d_lo, d_hi) = (grid.d.lo, grid.d.values().last().copied().unwrap_or(grid.d.lo));
    let (k_lo, k_hi) = (grid.k.lo.max(0.0), grid.k.values().last().copied().unwrap_or(grid.k.lo));

    let mut chosen = (grid_best.d, grid_best.k, grid_best.rss, grid_matrix);
    let mut refined = false;
    let mut iterations = 0;
    if cfg.refine {
        let nm = NelderMeadConfig {
            diameter_tol: cfg.simplex_tol,
            max_iter: cfg.max_iter,
            initial_step: vec![grid.d.step, grid.k.step],
            lower: vec![d_lo, k_lo],
            upper: vec![d_hi, k_hi],
        };
        let objective = |x: &[f64]| {
            simulate_at(cfg, x[0], x[1], cfg.refine_replicates)
                .map(|m| m.rss(target))
                .unwrap_or(f64::INFINITY)
        };
        let min = nelder_mead::minimize(objective, &[grid_best.d, grid_best.k], &nm);
        iterations = min.iterations;
        let m = simulate_at(cfg, min.x[0], min.x[1], cfg.refine_replicates)?;
        let rss = m.rss(target);
        if rss < chosen.2 {
            chosen = (min.x[0], min.x[1], rss, m);
            refined = true;
        }
    }

    let (d_hat, k_hat, rss, fitted) = chosen;
    let edge = |x: f64, lo: f64, hi: f64| (x - lo).abs() < 1e-9 || (x - hi).abs() < 1e-9;
    Ok(CalibrationResult {
        d_hat,
        k_hat,
        kd_hat: d_hat * k_hat,
        rss,
        grid_best,
        surface: cfg
            .keep_surface
            .then(|| evaluated.iter().map(|(p, _)| *p).collect()),
        fitted,
        target: *target,
        boundary: edge(d_hat, d_lo, d_hi) || edge(k_hat, k_lo, k_hi),
        refined,
        refine_iterations: iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> CalibrationConfig {
        CalibrationConfig {
            sim: FermiParams {
                seed: 21,
                ..FermiParams::default()
            },
            grid_replicates: 60,
            refine_replicates: 120,
            max_iter: 30,
            keep_surface: true,
            ..CalibrationConfig::default()
        }
    }

    #[test]
    fn grid_parsing() {
        let g = Grid::parse("d=-2:3:0.25,k=0:1.5:0.25").unwrap();
        assert_eq!(g, Grid::default());
        assert_eq!(g.d.values().len(), 21);
        assert_eq!(g.k.values().len(), 7);
        assert_eq!(g.cells()[1], (-2.0, 0.25));
        assert!(matches!(Grid::parse("d=0:1:0,k=0:1:0.5"), Err(Error::InvalidGrid(_))));
        assert!(matches!(Grid::parse("d=0:1:0.5,k=-1:1:0.5"), Err(Error::InvalidGrid(_))));
        assert!(matches!(Grid::parse("d=0:1:0.5"), Err(Error::InvalidGrid(_))));
        assert!(matches!(Grid::parse("d=1:0:0.5,k=0:1:0.5"), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn non_stochastic_target_rejected() {
        let bad = TransitionMatrix2 {
            p: [[0.5, 0.4], [0.2, 0.8]],
        };
        assert_eq!(
            calibrate(&bad, &small_cfg(), &Grid::default()).unwrap_err(),
            Error::NonStochasticTarget
        );
    }

    #[test]
    fn result_invariants_and_reproducibility() {
        let target = TransitionMatrix2::new([[0.82, 0.18], [0.31, 0.69]]).unwrap();
        let grid = Grid::parse("d=-1:1:0.5,k=0:1:0.5").unwrap();
        let a = calibrate(&target, &small_cfg(), &grid).unwrap();
        let b = calibrate(&target, &small_cfg(), &grid).unwrap();
        assert_eq!(a, b);
        assert!((a.rss - a.fitted.rss(&a.target)).abs() < 1e-9);
        assert!(a.grid_best.rss >= a.rss - 1e-12);
        let surface = a.surface.clone().unwrap();
        let min = surface.iter().map(|p| p.rss).fold(f64::INFINITY, f64::min);
        assert_eq!(min, a.grid_best.rss);
        assert_eq!(loss_surface(&target, &small_cfg(), &grid).unwrap(), surface);
    }

    #[test]
    fn rss_is_relabeling_invariant() {
        let t = TransitionMatrix2::new([[0.82, 0.18], [0.31, 0.69]]).unwrap();
        let f = TransitionMatrix2::new([[0.7, 0.3], [0.4, 0.6]]).unwrap();
        assert!((t.rss(&f) - t.relabeled().rss(&f.relabeled())).abs() < 1e-15);
    }
}
