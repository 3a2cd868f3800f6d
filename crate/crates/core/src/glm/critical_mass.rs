//! Village-level critical mass: probability that a village finishes high as a
//! function of the share of initial contributors above the cutoff.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::logit::{design, fit_logit, LogitFit};
use crate::error::{Error, Result};
use crate::numerics::stats::{mean, quantile};
use crate::numerics::stream_rng;
use crate::panel::Panel;

pub const MIN_VILLAGES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalDefinition {
    LastRound,
    LastTwo,
}

impl FinalDefinition {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "round10" | "last" | "last_round" => Some(Self::LastRound),
            "last_two" | "last2" => Some(Self::LastTwo),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalMassConfig {
    pub threshold: f64,
    pub early_round: u32,
    pub final_definition: FinalDefinition,
    pub bootstrap_reps: usize,
    pub seed: u64,
}

impl CriticalMassConfig {
    pub fn new(threshold: f64, seed: u64) -> Self {
        Self {
            threshold,
            early_round: 1,
            final_definition: FinalDefinition::LastRound,
            bootstrap_reps: 500,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VillageRow {
    pub village_id: String,
    pub share_above: f64,
    pub finished_high: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalMassFit {
    pub logit: LogitFit,
    /// Share where the fitted probability crosses 0.5; absent if outside [0, 1].
    pub s_crit: Option<f64>,
    pub s_crit_ci: Option<(f64, f64)>,
    pub bootstrap_used: usize,
    pub rows: Vec<VillageRow>,
}

pub fn village_rows(panel: &Panel, cfg: &CriticalMassConfig) -> Result<Vec<VillageRow>> {
    let t_max = panel.rounds();
    if cfg.early_round < 1 || cfg.early_round > t_max {
        return Err(Error::InvalidParams(format!("early round {} outside 1..{t_max}", cfg.early_round)));
    }
    let final_rounds: Vec<u32> = match cfg.final_definition {
        FinalDefinition::LastRound => vec![t_max],
        FinalDefinition::LastTwo if t_max >= 2 => vec![t_max - 1, t_max],
        FinalDefinition::LastTwo => return Err(Error::TooFewRounds { needed: 2, found: t_max as usize }),
    };
    let mut rows = Vec::new();
    for v in 0..panel.n_villages() {
        let players: Vec<usize> = (0..panel.n_players()).filter(|&p| panel.village_of(p) == v).collect();
        let early: Vec<f64> = players.iter().filter_map(|&p| panel.contribution(p, cfg.early_round)).collect();
        let finals: Vec<f64> = final_rounds
            .iter()
            .filter_map(|&t| {
                let vals: Vec<f64> = players.iter().filter_map(|&p| panel.contribution(p, t)).collect();
                (!vals.is_empty()).then(|| mean(&vals))
            })
            .collect();
        if early.is_empty() || finals.is_empty() {
            continue;
        }
        rows.push(VillageRow {
            village_id: panel.village_id(v).to_string(),
            share_above: early.iter().filter(|&&c| c > cfg.threshold).count() as f64 / early.len() as f64,
            finished_high: mean(&finals) > cfg.threshold,
        });
    }
    Ok(rows)
}

fn fit_rows(rows: &[&VillageRow]) -> Result<(LogitFit, Option<f64>)> {
    let x = design(&rows.iter().map(|r| vec![1.0, r.share_above]).collect::<Vec<_>>());
    let y: Vec<f64> = rows.iter().map(|r| r.finished_high as u8 as f64).collect();
    let ids: Vec<usize> = (0..rows.len()).collect();
    let fit = fit_logit(&x, &y, &["intercept".into(), "share_above".into()], &ids, "village")?;
    let b = fit.beta();
    let s = -b[0] / b[1];
    Ok((fit, (s.is_finite() && (0.0..=1.0).contains(&s)).then_some(s)))
}

pub fn critical_mass(panel: &Panel, cfg: &CriticalMassConfig) -> Result<CriticalMassFit> {
    let rows = village_rows(panel, cfg)?;
    if rows.len() < MIN_VILLAGES {
        return Err(Error::TooFewVillages {
            needed: MIN_VILLAGES,
            found: rows.len(),
        });
    }
    let all: Vec<&VillageRow> = rows.iter().collect();
    let (logit, s_crit) = fit_rows(&all)?;

    let n = rows.len();
    let draws: Vec<f64> = (0..cfg.bootstrap_reps)
        .into_par_iter()
        .filter_map(|rep| {
            let mut rng = stream_rng(cfg.seed, rep as u64);
            let sample: Vec<&VillageRow> = (0..n).map(|_| &rows[rng.random_range(0..n)]).collect();
            fit_rows(&sample).ok().and_then(|(_, s)| s)
        })
        .collect();
    let s_crit_ci = (s_crit.is_some() && !draws.is_empty())
        .then(|| (quantile(&draws, 0.025), quantile(&draws, 0.975)));
    Ok(CriticalMassFit {
        logit,
        s_crit,
        s_crit_ci,
        bootstrap_used: draws.len(),
        rows,
    })
}
