//! Learning in levels: c_t on the lagged peer mean and own lag with player and
//! village×round fixed effects, clustered by group.

use serde::{Deserialize, Serialize};

use super::demean::{DemeanPlan, DemeanScheme};
use super::tsls::{ols_clustered, Estimate};
use crate::error::{Error, Result};
use crate::panel::Panel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelsFeFit {
    pub beta_group: Estimate,
    pub beta_own: Estimate,
    pub within_r2: f64,
    pub n_obs: usize,
    pub n_clusters: usize,
}

pub fn levels_fe(panel: &Panel) -> Result<LevelsFeFit> {
    let t_max = panel.rounds();
    let (mut y, mut m, mut own, mut a, mut b, mut g) = (vec![], vec![], vec![], vec![], vec![], vec![]);
    for p in 0..panel.n_players() {
        for t in 2..=t_max {
            let (Some(c), Some(peer), Some(prev)) = (panel.contribution(p, t), panel.loo_mean_at(p, t - 1), panel.contribution(p, t - 1)) else {
                continue;
            };
            y.push(c);
            m.push(peer);
            own.push(prev);
            a.push(Some(p));
            b.push(Some(panel.village_of(p) * t_max as usize + t as usize));
            g.push(panel.group_of(p));
        }
    }
    if y.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let plan = DemeanPlan::new(DemeanScheme::PlayerVillageRound, &a, &b)?;
    let (yd, md, od) = (plan.apply(&y)?, plan.apply(&m)?, plan.apply(&own)?);
    let fit = ols_clustered(&yd, &[&md, &od], &["peer_mean_lag1".into(), "own_lag1".into()], &g)?;
    let tss: f64 = yd.iter().map(|v| v * v).sum();
    let rss: f64 = fit.residuals.iter().map(|v| v * v).sum();
    Ok(LevelsFeFit {
        beta_group: fit.coefficients[0].clone(),
        beta_own: fit.coefficients[1].clone(),
        within_r2: if tss > 0.0 { 1.0 - rss / tss } else { 0.0 },
        n_obs: fit.n_obs,
        n_clusters: fit.n_clusters,
    })
}
