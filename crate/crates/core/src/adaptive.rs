//! Selection gradient, singular strategy classification and the numerical best reply.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::golden;
use crate::stage_game::{utility_unchecked, ModelParams, RoundContext, C_FLOOR, ENDOWMENT};

/// Default best-reply grid step in Lempiras.
pub const GRID_STEP: f64 = 0.01;
const BISECT_TOL: f64 = 1e-10;

/// `D(c) = (b/N − κ) + d α c^(α−1)`; the norm term vanishes when the
/// mutant sits at the resident norm.
pub fn selection_gradient(p: &ModelParams, i: usize, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::NonPositiveTrait(c));
    }
    Ok(gradient_unchecked(p, p.d_of(i), c))
}

fn gradient_unchecked(p: &ModelParams, d: f64, c: f64) -> f64 {
    p.net_marginal() + d * p.alpha * c.max(C_FLOOR).powf(p.alpha - 1.0)
}

/// Full first-order condition including the norm term, with `phi = 2 k_norm h`
/// and the Gaussian bracket evaluated at the deviation from `peers_lag`.
pub fn full_foc(p: &ModelParams, d: f64, phi: f64, c: f64, peers_lag: f64) -> f64 {
    let dev = c - peers_lag;
    gradient_unchecked(p, d, c) + phi * dev * (-p.k_norm * dev * dev).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularAnalysis {
    /// Singular strategy, clamped to the endowment when `at_cap`.
    pub c_star: f64,
    pub at_cap: bool,
    /// Unclamped closed-form root.
    pub c_star_closed_form: f64,
    /// Unclamped bisection root of the selection gradient.
    pub c_star_bisection: f64,
    pub gradient_at_root: f64,
    /// `D'(c*)`; negative means convergence-stable.
    pub gradient_slope: f64,
    pub convergence_stable: bool,
    pub ess: bool,
    pub branching: bool,
    /// `d α (α−1) c*^(α−2) + 2 k_norm h`
    pub curvature: f64,
}

pub fn closed_form_c_star(p: &ModelParams, d: f64) -> f64 {
    ((p.kappa - p.b / p.n as f64) / (d * p.alpha)).powf(1.0 / (p.alpha - 1.0))
}

fn bisection_root(p: &ModelParams, d: f64) -> f64 {
    let f = |c: f64| gradient_unchecked(p, d, c);
    let mut hi = 1.0;
    while f(hi) > 0.0 && hi < 1e300 {
        hi *= 2.0;
    }
    let mut lo = hi / 2.0;
    while f(lo) < 0.0 && lo > 1e-300 {
        lo /= 2.0;
    }
    let tol = BISECT_TOL * hi.max(1.0);
    golden::bisect(f, lo, hi, tol).unwrap_or(hi)
}

/// The value of `k_norm h` at which the curvature changes sign.
pub fn branching_boundary(p: &ModelParams, d: f64, c_star: f64) -> f64 {
    -d * p.alpha * (p.alpha - 1.0) * c_star.powf(p.alpha - 2.0) / 2.0
}

pub fn singular_strategy(p: &ModelParams, i: usize) -> Result<SingularAnalysis> {
    p.check_a1()?;
    p.validate()?;
    let d = p.d_of(i);
    if !(d > 0.0) {
        return Err(Error::NoSingularStrategy);
    }
    let closed = closed_form_c_star(p, d);
    let bisect = bisection_root(p, d);
    let at_cap = closed > ENDOWMENT;
    let c_star = closed.min(ENDOWMENT);
    let slope = d * p.alpha * (p.alpha - 1.0) * c_star.powf(p.alpha - 2.0);
    let curvature = slope + 2.0 * p.k_norm * p.h_of(i);
    let convergence_stable = slope < 0.0;
    let ess = curvature < 0.0;
    Ok(SingularAnalysis {
        c_star,
        at_cap,
        c_star_closed_form: closed,
        c_star_bisection: bisect,
        gradient_at_root: gradient_unchecked(p, d, c_star),
        gradient_slope: slope,
        convergence_stable,
        ess,
        branching: convergence_stable && !ess,
        curvature,
    })
}

/// Global maximizer of utility over `[0, 12]` against a lagged peer norm.
pub fn best_reply(p: &ModelParams, i: usize, peers_lag: f64) -> Result<f64> {
    best_reply_with_step(p, i, peers_lag, GRID_STEP)
}

pub fn best_reply_with_step(p: &ModelParams, i: usize, peers_lag: f64, step: f64) -> Result<f64> {
    p.validate()?;
    if !(0.0..=ENDOWMENT).contains(&peers_lag) {
        return Err(Error::InvalidParams("peers_lag outside [0, 12]".into()));
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidParams("grid step must lie in (0, 1]".into()));
    }
    Ok(best_reply_unchecked(p, i, peers_lag, step))
}

pub(crate) fn best_reply_unchecked(p: &ModelParams, i: usize, peers_lag: f64, step: f64) -> f64 {
    let u = |c: f64| {
        utility_unchecked(
            p,
            i,
            &RoundContext {
                own: c,
                peers_now: 0.0,
                peers_lag,
            },
        )
    };
    let n = (ENDOWMENT / step).round() as usize;
    let grid: Vec<f64> = (0..=n).map(|j| (j as f64 * step).min(ENDOWMENT)).collect();
    let vals: Vec<f64> = grid.iter().map(|&c| u(c)).collect();

    let mut cands: Vec<(f64, f64)> = vec![(grid[0], vals[0]), (grid[n], vals[n])];
    for j in 1..n {
        if vals[j] >= vals[j - 1] && vals[j] >= vals[j + 1] {
            let (x, v) = golden::maximize(u, grid[j - 1], grid[j + 1], 1e-10);
            cands.push(if v >= vals[j] { (x, v) } else { (grid[j], vals[j]) });
        }
    }
    // ties (within rounding) go to the larger contribution
    cands.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = cands[0];
    for &(c, v) in &cands[1..] {
        if v >= best.1 - 1e-12 * best.1.abs().max(1.0) {
            best = (c, v);
        }
    }
    best.0
}

/// Synchronous best-reply iteration: groups are consecutive blocks of N
/// players, each best-replying to last round's leave-one-out peer mean.
/// Returns `rounds` rows, the first being `initial`.
pub fn iterate_best_reply(p: &ModelParams, initial: &[f64], rounds: usize) -> Result<Vec<Vec<f64>>> {
    p.validate()?;
    if initial.is_empty() || initial.len() % p.n != 0 {
        return Err(Error::InvalidParams(format!(
            "{} players do not fill groups of {}",
            initial.len(),
            p.n
        )));
    }
    p.check_players(initial.len())?;
    if initial.iter().any(|c| !(0.0..=ENDOWMENT).contains(c)) {
        return Err(Error::InvalidParams("initial contributions outside [0, 12]".into()));
    }
    let mut traj = vec![initial.to_vec()];
    for _ in 1..rounds {
        let prev = traj.last().unwrap();
        let next: Vec<f64> = (0..prev.len())
            .map(|i| {
                let lag = loo_block_mean(prev, i, p.n);
                best_reply_unchecked(p, i, lag, GRID_STEP)
            })
            .collect();
        traj.push(next);
    }
    Ok(traj)
}

/// Leave-one-out mean of player `i` within its block of `n`.
pub(crate) fn loo_block_mean(values: &[f64], i: usize, n: usize) -> f64 {
    let start = (i / n) * n;
    let sum: f64 = values[start..start + n].iter().sum();
    (sum - values[i]) / (n - 1) as f64
}
