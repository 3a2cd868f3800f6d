//! Per-player recovery of the altruism weight `d` and the effective norm-pull
//! `φ = 2 k_norm h` from within-session choices.
//!
//! The default objective is least squares on first-order-condition residuals:
//! for every round t ≥ 2 with an observed choice and lagged leave-one-out peer
//! mean, `D_t = (b/N − κ) + d α c^(α−1) + φ·dev·g(dev)` with `dev = c − c̄_{t−1}`
//! and `g = exp(−k_norm dev²)` (or `g ≡ 1` in the quadratic limit, `k_norm = None`).
//! Rounds at the cap only need `D ≥ 0`, so they contribute `min(D, 0)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::closed_form_c_star;
use crate::error::{Error, Result};
use crate::numerics::golden;
use crate::numerics::nelder_mead::{minimize, NelderMeadConfig};
use crate::numerics::stats::{mean, quantile, quantile_sorted};
use crate::panel::Panel;
use crate::stage_game::{ModelParams, ENDOWMENT};

/// Stand-in for a zero contribution, where `c^(α−1)` is undefined.
pub const ZERO_RIDGE: f64 = 1e-3;
pub const MIN_ROUNDS: usize = 3;
pub const STARTS: [[f64; 2]; 3] = [[1.0, 0.0], [3.0, 0.0], [1.0, 0.5]];
const WINSOR_Q: f64 = 0.99;
const D_MAX: f64 = 1e4;
const PHI_MAX: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    FocResidual,
    /// Squared distance between observed choices and the model best reply.
    ChoiceError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackoutConfig {
    pub alpha: f64,
    pub b: f64,
    pub kappa: f64,
    pub n: usize,
    /// `None` is the quadratic limit of the norm term.
    pub k_norm: Option<f64>,
    pub objective: Objective,
}

impl BackoutConfig {
    pub fn new(alpha: f64) -> Self {
        let p = ModelParams::default();
        Self {
            alpha,
            b: p.b,
            kappa: p.kappa,
            n: p.n,
            k_norm: Some(p.k_norm),
            objective: Objective::FocResidual,
        }
    }

    fn params(&self, d: f64) -> ModelParams {
        ModelParams {
            b: self.b,
            kappa: self.kappa,
            n: self.n,
            alpha: self.alpha,
            d: vec![d],
            ..ModelParams::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParams(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.kappa > self.b / self.n as f64) {
            return Err(Error::InvalidParams("need κ > b/N".into()));
        }
        if let Some(k) = self.k_norm {
            if !(k > 0.0) {
                return Err(Error::InvalidParams("k_norm must be positive".into()));
            }
        }
        Ok(())
    }

    fn net_marginal(&self) -> f64 {
        self.b / self.n as f64 - self.kappa
    }

    fn bracket(&self, dev: f64) -> f64 {
        self.k_norm.map_or(1.0, |k| (-k * dev * dev).exp())
    }

    pub fn foc(&self, d: f64, phi: f64, c: f64, peers_lag: f64) -> f64 {
        let dev = c - peers_lag;
        self.net_marginal() + d * self.alpha * c.max(ZERO_RIDGE).powf(self.alpha - 1.0) + phi * dev * self.bracket(dev)
    }

    /// Utility up to terms that do not depend on own choice.
    fn utility(&self, d: f64, phi: f64, c: f64, peers_lag: f64) -> f64 {
        let dev = c - peers_lag;
        let norm = match self.k_norm {
            None => 0.5 * phi * dev * dev,
            Some(k) => -phi / (2.0 * k) * (-k * dev * dev).exp(),
        };
        self.net_marginal() * c + d * c.powf(self.alpha) + norm
    }

    /// Global maximizer over `[0, 12]` by grid scan plus golden refinement.
    pub fn best_reply(&self, d: f64, phi: f64, peers_lag: f64, step: f64) -> f64 {
        let u = |c: f64| self.utility(d, phi, c, peers_lag);
        let n = (ENDOWMENT / step).round() as usize;
        let grid: Vec<f64> = (0..=n).map(|j| (j as f64 * step).min(ENDOWMENT)).collect();
        let vals: Vec<f64> = grid.iter().map(|&c| u(c)).collect();
        let mut best = (grid[0], vals[0]);
        for j in 0..=n {
            let cand = if j > 0 && j < n && vals[j] >= vals[j - 1] && vals[j] >= vals[j + 1] {
                let (x, v) = golden::maximize(u, grid[j - 1], grid[j + 1], 1e-10);
                if v >= vals[j] {
                    (x, v)
                } else {
                    (grid[j], vals[j])
                }
            } else {
                (grid[j], vals[j])
            };
            if cand.1 >= best.1 {
                best = cand;
            }
        }
        best.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImpliedHigh {
    Lempiras(f64),
    AtCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackoutResult {
    pub player_id: String,
    pub d: f64,
    pub phi: f64,
    pub implied_c_high: ImpliedHigh,
    /// Objective value at the estimate.
    pub fit_residual: f64,
    pub alpha_used: f64,
    pub rounds_used: usize,
    /// Every usable round at the endowment: `d` is the smallest value that
    /// puts the singular strategy at the cap and `φ` is reported as 0.
    pub pinned_at_cap: bool,
    /// The two FOC regressors are collinear, so `φ` is fixed at 0.
    pub weakly_identified: bool,
}

/// One round's observation: own choice and last round's leave-one-out peer mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub c: f64,
    pub peers_lag: f64,
}

pub fn records_of(panel: &Panel, p: usize) -> Vec<Record> {
    (2..=panel.rounds())
        .filter_map(|t| {
            Some(Record {
                c: panel.contribution(p, t)?,
                peers_lag: panel.loo_mean_at(p, t - 1)?,
            })
        })
        .collect()
}

fn at_cap(c: f64) -> bool {
    c >= ENDOWMENT - 1e-9
}

fn winsorized_ss(r: &mut [f64]) -> f64 {
    let abs: Vec<f64> = r.iter().map(|v| v.abs()).collect();
    let q = quantile(&abs, WINSOR_Q);
    r.iter().map(|v| v.clamp(-q, q).powi(2)).sum()
}

fn foc_objective(cfg: &BackoutConfig, recs: &[Record], d: f64, phi: f64) -> f64 {
    let mut r: Vec<f64> = recs
        .iter()
        .map(|rec| {
            let v = cfg.foc(d, phi, rec.c, rec.peers_lag);
            if at_cap(rec.c) {
                v.min(0.0)
            } else {
                v
            }
        })
        .collect();
    winsorized_ss(&mut r)
}

fn choice_objective(cfg: &BackoutConfig, recs: &[Record], d: f64, phi: f64) -> f64 {
    let mut r: Vec<f64> = recs.iter().map(|rec| rec.c - cfg.best_reply(d, phi, rec.peers_lag, 0.05)).collect();
    winsorized_ss(&mut r)
}

fn objective(cfg: &BackoutConfig, recs: &[Record], d: f64, phi: f64) -> f64 {
    match cfg.objective {
        Objective::FocResidual => foc_objective(cfg, recs, d, phi),
        Objective::ChoiceError => choice_objective(cfg, recs, d, phi),
    }
}

/// Smallest `d` whose singular strategy reaches the endowment.
pub fn cap_altruism(cfg: &BackoutConfig) -> f64 {
    -cfg.net_marginal() * ENDOWMENT.powf(1.0 - cfg.alpha) / cfg.alpha
}

pub fn implied_high(cfg: &BackoutConfig, d: f64) -> ImpliedHigh {
    if !(d > 0.0) {
        return ImpliedHigh::Lempiras(0.0);
    }
    let c = closed_form_c_star(&cfg.params(d), d);
    if c >= ENDOWMENT {
        ImpliedHigh::AtCap
    } else {
        ImpliedHigh::Lempiras(c)
    }
}

/// True when the `d` and `φ` regressors of the interior FOC rounds are collinear.
fn collinear(cfg: &BackoutConfig, recs: &[Record]) -> bool {
    let (mut xx, mut zz, mut xz) = (0.0, 0.0, 0.0);
    for rec in recs.iter().filter(|r| !at_cap(r.c)) {
        let x = cfg.alpha * rec.c.max(ZERO_RIDGE).powf(cfg.alpha - 1.0);
        let dev = rec.c - rec.peers_lag;
        let z = dev * cfg.bracket(dev);
        xx += x * x;
        zz += z * z;
        xz += x * z;
    }
    zz <= 1e-12 * xx.max(1.0) || xx * zz - xz * xz <= 1e-10 * xx * zz
}

pub fn backout_player(player_id: &str, recs: &[Record], cfg: &BackoutConfig) -> Result<BackoutResult> {
    cfg.validate()?;
    if recs.len() < MIN_ROUNDS {
        return Err(Error::TooFewRounds {
            needed: MIN_ROUNDS,
            found: recs.len(),
        });
    }
    let base = BackoutResult {
        player_id: player_id.to_string(),
        d: 0.0,
        phi: 0.0,
        implied_c_high: ImpliedHigh::AtCap,
        fit_residual: 0.0,
        alpha_used: cfg.alpha,
        rounds_used: recs.len(),
        pinned_at_cap: false,
        weakly_identified: false,
    };
    if recs.iter().all(|r| at_cap(r.c)) {
        let d = cap_altruism(cfg);
        return Ok(BackoutResult {
            d,
            implied_c_high: ImpliedHigh::AtCap,
            fit_residual: objective(cfg, recs, d, 0.0),
            pinned_at_cap: true,
            weakly_identified: true,
            ..base
        });
    }

    let weak = collinear(cfg, recs);
    let (lower, upper) = if weak {
        (vec![0.0, 0.0], vec![D_MAX, 0.0])
    } else {
        (vec![0.0, 0.0], vec![D_MAX, PHI_MAX])
    };
    let nm = NelderMeadConfig {
        diameter_tol: 1e-9,
        max_iter: 2000,
        initial_step: vec![0.5, 0.1],
        lower,
        upper,
    };
    let f = |x: &[f64]| objective(cfg, recs, x[0], x[1]);
    let mut best: Option<(f64, f64, f64)> = None;
    for s in STARTS {
        let m = minimize(f, &s, &nm);
        if best.is_none_or(|b| m.value < b.2) {
            best = Some((m.x[0], m.x[1], m.value));
        }
    }
    let (d, phi, value) = best.expect("at least one start");
    Ok(BackoutResult {
        d,
        phi,
        implied_c_high: implied_high(cfg, d),
        fit_residual: value,
        weakly_identified: weak,
        ..base
    })
}

/// Every player with at least three usable rounds; the rest are skipped.
pub fn backout_panel(panel: &Panel, cfg: &BackoutConfig) -> Result<Vec<BackoutResult>> {
    cfg.validate()?;
    let out: Vec<Option<BackoutResult>> = (0..panel.n_players())
        .into_par_iter()
        .map(|p| backout_player(panel.player_id(p), &records_of(panel, p), cfg).ok())
        .collect();
    Ok(out.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub p10: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub p90: f64,
    pub max: f64,
    pub mean: f64,
}

impl Quantiles {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let mut s = xs.to_vec();
        s.sort_by(f64::total_cmp);
        Some(Self {
            min: s[0],
            p10: quantile_sorted(&s, 0.10),
            q1: quantile_sorted(&s, 0.25),
            median: quantile_sorted(&s, 0.5),
            q3: quantile_sorted(&s, 0.75),
            p90: quantile_sorted(&s, 0.90),
            max: s[s.len() - 1],
            mean: mean(&s),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackoutSummary {
    pub alpha: f64,
    pub n_players: usize,
    pub n_skipped: usize,
    pub d: Option<Quantiles>,
    pub phi: Option<Quantiles>,
    pub share_at_cap: f64,
    pub share_phi_below_0_1: f64,
    pub n_weakly_identified: usize,
}

pub fn summarize(results: &[BackoutResult], n_total: usize, alpha: f64) -> BackoutSummary {
    let n = results.len();
    let share = |f: &dyn Fn(&BackoutResult) -> bool| {
        if n == 0 {
            f64::NAN
        } else {
            results.iter().filter(|r| f(r)).count() as f64 / n as f64
        }
    };
    BackoutSummary {
        alpha,
        n_players: n,
        n_skipped: n_total - n,
        d: Quantiles::of(&results.iter().map(|r| r.d).collect::<Vec<_>>()),
        phi: Quantiles::of(&results.iter().map(|r| r.phi).collect::<Vec<_>>()),
        share_at_cap: share(&|r| r.implied_c_high == ImpliedHigh::AtCap),
        share_phi_below_0_1: share(&|r| r.phi <= 0.1),
        n_weakly_identified: results.iter().filter(|r| r.weakly_identified).count(),
    }
}

pub fn backout_summary(panel: &Panel, cfg: &BackoutConfig) -> Result<(Vec<BackoutResult>, BackoutSummary)> {
    let results = backout_panel(panel, cfg)?;
    let summary = summarize(&results, panel.n_players(), cfg.alpha);
    Ok((results, summary))
}

/// Equal-width histogram of `d` over `[0, max]`: (lower edge, upper edge, count).
pub fn d_histogram(results: &[BackoutResult], bins: usize) -> Vec<(f64, f64, usize)> {
    let hi = results.iter().map(|r| r.d).fold(0.0, f64::max);
    if bins == 0 || results.is_empty() {
        return Vec::new();
    }
    let w = if hi > 0.0 { hi / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for r in results {
        counts[((r.d / w) as usize).min(bins - 1)] += 1;
    }
    counts.into_iter().enumerate().map(|(j, n)| (j as f64 * w, (j + 1) as f64 * w, n)).collect()
}
