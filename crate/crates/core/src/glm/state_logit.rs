//! Pooled dynamic logit for being in the High state, with initial-condition
//! and average-exposure terms standing in for a player random intercept.

use serde::{Deserialize, Serialize};

use super::logit::{design, fit_logit, LogitFit};
use crate::error::{Error, Result};
use crate::panel::{state_of, Panel, Religion, State};
use crate::stage_game::ENDOWMENT;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateLogitConfig {
    pub threshold: f64,
    pub strict: bool,
    /// Adds male, age, education, indigenous and religion dummies; rows with
    /// a missing covariate are dropped.
    pub covariates: bool,
    /// Include the player-average lagged peer mean. It soaks up a persistent
    /// player effect but is not strictly exogenous when the player feeds back
    /// into the peers, so it biases λ in a pure Markov process.
    pub average_exposure: bool,
}

impl StateLogitConfig {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            strict: false,
            covariates: false,
            average_exposure: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateLogitFit {
    pub logit: LogitFit,
    pub or_peer_per_endowment: f64,
    /// Same effect per unit of currency: the per-endowment OR to the power 1/12.
    pub or_peer_per_lempira: f64,
    pub or_lagged_state: f64,
    pub or_round: f64,
    pub n_players: usize,
}

pub const PEER: &str = "peer_lag_per_endowment";

pub fn dynamic_state_logit(panel: &Panel, cfg: &StateLogitConfig) -> Result<StateLogitFit> {
    let t_max = panel.rounds();
    if t_max < 3 {
        return Err(Error::TooFewRounds { needed: 3, found: t_max as usize });
    }
    let s = |p: usize, t: u32| panel.contribution(p, t).map(|c| state_of(c, cfg.threshold, cfg.strict) == State::H);

    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut players = Vec::new();
    for p in 0..panel.n_players() {
        let Some(s1) = s(p, 1) else { continue };
        let extra = if cfg.covariates {
            let c = panel.covariates(p);
            let (Some(male), Some(age), Some(edu), Some(ind), Some(rel)) =
                (c.male, c.age, c.education, c.indigenous, c.religion)
            else {
                continue;
            };
            vec![
                male as u8 as f64,
                age,
                edu as f64,
                ind as u8 as f64,
                (rel == Religion::Protestant) as u8 as f64,
                (rel == Religion::None) as u8 as f64,
            ]
        } else {
            Vec::new()
        };
        let mut mine = Vec::new();
        for t in 2..=t_max {
            let (Some(now), Some(prev), Some(peer)) = (s(p, t), s(p, t - 1), panel.loo_mean_at(p, t - 1)) else {
                continue;
            };
            mine.push((now, prev, peer / ENDOWMENT, t));
        }
        if mine.is_empty() {
            continue;
        }
        let avg_peer = mine.iter().map(|m| m.2).sum::<f64>() / mine.len() as f64;
        for (now, prev, peer, t) in mine {
            let mut r = vec![1.0, prev as u8 as f64, peer, t as f64, s1 as u8 as f64];
            if cfg.average_exposure {
                r.push(avg_peer);
            }
            r.extend(&extra);
            rows.push(r);
            y.push(now as u8 as f64);
            players.push(p);
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let mut names: Vec<String> = ["intercept", "state_lag", PEER, "round", "state_initial"]
        .map(String::from)
        .to_vec();
    if cfg.average_exposure {
        names.push("peer_avg_per_endowment".into());
    }
    if cfg.covariates {
        names.extend(["male", "age", "education", "indigenous", "protestant", "no_religion"].map(String::from));
    }
    let logit = fit_logit(&design(&rows), &y, &names, &players, "player")?;
    let or = |n: &str| logit.coef(n).map_or(f64::NAN, |c| c.odds_ratio);
    let peer = or(PEER);
    let mut distinct = players.clone();
    distinct.dedup();
    Ok(StateLogitFit {
        or_peer_per_endowment: peer,
        or_peer_per_lempira: peer.powf(1.0 / ENDOWMENT),
        or_lagged_state: or("state_lag"),
        or_round: or("round"),
        n_players: distinct.len(),
        logit,
    })
}
