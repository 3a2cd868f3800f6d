//! Stage-game utility, material payoffs and welfare accounting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Panel;

/// Endowment per round, in Lempiras.
pub const ENDOWMENT: f64 = 12.0;

/// Solvers never evaluate `c^(α-1)` closer to zero than this.
pub const C_FLOOR: f64 = 1e-9;

/// Structural constants plus per-player traits.
///
/// `d` and `h` are either per-player vectors or a single value broadcast to
/// every player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub b: f64,
    pub kappa: f64,
    pub n: usize,
    pub alpha: f64,
    pub k_norm: f64,
    pub d: Vec<f64>,
    pub h: Vec<f64>,
    pub delta: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            b: 2.0,
            kappa: 1.0,
            n: 5,
            alpha: 0.5,
            k_norm: 1.0,
            d: vec![1.0],
            h: vec![0.0],
            delta: 0.01,
        }
    }
}

impl ModelParams {
    pub fn homogeneous(d: f64, h: f64) -> Self {
        Self {
            d: vec![d],
            h: vec![h],
            ..Self::default()
        }
    }

    pub fn d_of(&self, i: usize) -> f64 {
        if self.d.len() == 1 {
            self.d[0]
        } else {
            self.d[i]
        }
    }

    pub fn h_of(&self, i: usize) -> f64 {
        if self.h.len() == 1 {
            self.h[0]
        } else {
            self.h[i]
        }
    }

    /// Marginal private return of a unit contributed, net of cost: `b/N − κ`.
    pub fn net_marginal(&self) -> f64 {
        self.b / self.n as f64 - self.kappa
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if !(self.b > 0.0) || !(self.kappa > 0.0) {
            return bad("b and kappa must be positive");
        }
        if self.n < 2 {
            return bad("group size must be at least 2");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.k_norm >= 0.0) || !self.k_norm.is_finite() {
            return bad("k_norm must be non-negative");
        }
        if !(0.0..1.0).contains(&self.delta) {
            return bad("delta must lie in [0, 1)");
        }
        if self.d.is_empty() || self.h.is_empty() {
            return bad("d and h need at least one value");
        }
        if self.d.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return bad("d must be finite and non-negative");
        }
        if self.h.iter().any(|h| !(0.0..=1.0).contains(h)) {
            return bad("h must lie in [0, 1]");
        }
        Ok(())
    }

    /// `b > κ` (cooperation efficient) and `b/N < κ` (free riding privately optimal).
    pub fn check_a1(&self) -> Result<()> {
        if self.b > self.kappa && self.b / (self.n as f64) < self.kappa {
            Ok(())
        } else {
            Err(Error::AssumptionA1Violated {
                b: self.b,
                kappa: self.kappa,
                n: self.n,
            })
        }
    }

    /// Checks that per-player vectors cover `n_players`.
    pub fn check_players(&self, n_players: usize) -> Result<()> {
        for (name, v) in [("d", &self.d), ("h", &self.h)] {
            if v.len() != 1 && v.len() != n_players {
                return Err(Error::InvalidParams(format!(
                    "{name} has {} values for {n_players} players",
                    v.len()
                )));
            }
        }
        Ok(())
    }
}

/// Own contribution and the two peer means a player conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundContext {
    pub own: f64,
    pub peers_now: f64,
    pub peers_lag: f64,
}

fn in_range(x: f64) -> bool {
    (0.0..=ENDOWMENT).contains(&x)
}

pub fn altruism_term(d: f64, alpha: f64, c: f64) -> f64 {
    if c <= 0.0 {
        0.0
    } else {
        d * c.powf(alpha)
    }
}

pub fn norm_penalty(h: f64, k_norm: f64, c: f64, peers_lag: f64) -> f64 {
    let dev = c - peers_lag;
    -h * (-k_norm * dev * dev).exp()
}

/// Utility of player `i` without input checks; used inside solvers.
pub(crate) fn utility_unchecked(p: &ModelParams, i: usize, ctx: &RoundContext) -> f64 {
    let n = p.n as f64;
    let c = ctx.own;
    (p.b / n) * (c + (n - 1.0) * ctx.peers_now) - p.kappa * c
        + altruism_term(p.d_of(i), p.alpha, c)
        + norm_penalty(p.h_of(i), p.k_norm, c, ctx.peers_lag)
}

/// Instantaneous utility (utils, not Lempiras).
pub fn utility(p: &ModelParams, i: usize, ctx: &RoundContext) -> Result<f64> {
    p.validate()?;
    if i >= p.d.len().max(p.h.len()) && (p.d.len() > 1 || p.h.len() > 1) {
        return Err(Error::InvalidParams(format!("player index {i} out of range")));
    }
    if !in_range(ctx.own) || !in_range(ctx.peers_now) || !in_range(ctx.peers_lag) {
        return Err(Error::InvalidParams("round context outside [0, 12]".into()));
    }
    Ok(utility_unchecked(p, i, ctx))
}

/// Material payoff in Lempiras with a per-unit contribution subsidy `m`.
pub fn material_payoff(p: &ModelParams, own: f64, group_sum: f64, subsidy_m: f64) -> Result<f64> {
    if !(subsidy_m >= 0.0) {
        return Err(Error::InvalidParams("subsidy must be non-negative".into()));
    }
    if !(own >= 0.0) || group_sum < own - 1e-12 {
        return Err(Error::InvalidParams(
            "group sum must include the own contribution".into(),
        ));
    }
    let cost = (p.kappa - subsidy_m).max(0.0);
    Ok(p.b / p.n as f64 * group_sum - cost * own)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareRow {
    pub scenario: String,
    pub m: f64,
    pub mean_payoff: f64,
}

/// Mean material payoff per player-round: observed play, full cooperation,
/// and full cooperation under each subsidy `m`.
///
/// Observed payoffs use only group-rounds where every member's contribution
/// is present.
pub fn welfare_report(panel: &Panel, p: &ModelParams, scenarios: &[f64]) -> Result<Vec<WelfareRow>> {
    if panel.n_players() == 0 {
        return Err(Error::EmptyPanel);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for g in 0..panel.n_groups() {
        let members = panel.members(g);
        for t in 1..=panel.rounds() {
            let cs: Option<Vec<f64>> = members.iter().map(|&pl| panel.contribution(pl, t)).collect();
            let Some(cs) = cs else { continue };
            let sum: f64 = cs.iter().sum();
            for c in cs {
                total += material_payoff(p, c, sum, 0.0)?;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyPanel);
    }
    let full = |m: f64| material_payoff(p, ENDOWMENT, ENDOWMENT * p.n as f64, m);
    let mut rows = vec![
        WelfareRow {
            scenario: "observed".into(),
            m: 0.0,
            mean_payoff: total / count as f64,
        },
        WelfareRow {
            scenario: "full_cooperation".into(),
            m: 0.0,
            mean_payoff: full(0.0)?,
        },
    ];
    for &m in scenarios {
        rows.push(WelfareRow {
            scenario: "subsidy".into(),
            m,
            mean_payoff: full(m)?,
        });
    }
    Ok(rows)
}
