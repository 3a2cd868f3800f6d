//! Excluded instruments: leave-one-out trait composition, deeper peer lags and
//! the leave-one-village shift-share.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Panel, Trait};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstrumentKind {
    LooComposition { traits: Vec<Trait> },
    DeeperLag { order: u32 },
    LovShiftShare { traits: Vec<Trait> },
}

impl InstrumentKind {
    /// Parses `loo:male,no_religion`, `lag:2` or `lov:male,indigenous`.
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        let traits = || -> Result<Vec<Trait>> {
            arg.split(',')
                .filter(|t| !t.is_empty())
                .map(|t| Trait::parse(t).ok_or_else(|| Error::MissingTrait(t.to_string())))
                .collect()
        };
        match kind.trim() {
            "loo" | "loo_composition" => Ok(Self::LooComposition { traits: traits()? }),
            "lov" | "lov_shift_share" => Ok(Self::LovShiftShare { traits: traits()? }),
            "lag" | "deeper_lag" => arg
                .trim()
                .parse()
                .map(|order| Self::DeeperLag { order })
                .map_err(|_| Error::InvalidParams(format!("bad lag order in `{s}`"))),
            other => Err(Error::InvalidParams(format!("unknown instrument `{other}`"))),
        }
    }

    pub fn column_names(&self) -> Vec<String> {
        match self {
            Self::LooComposition { traits } => traits.iter().map(|t| format!("z_loo_{}", t.name())).collect(),
            Self::DeeperLag { order } => vec![format!("z_lag{order}")],
            Self::LovShiftShare { .. } => vec!["z_lov".into()],
        }
    }
}

/// Instrument columns at the (player, round) cells where every column is defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentSet {
    pub kind: InstrumentKind,
    pub names: Vec<String>,
    pub rows: Vec<(usize, u32)>,
    pub columns: Vec<Vec<f64>>,
}

impl InstrumentSet {
    pub fn index(&self) -> HashMap<(usize, u32), usize> {
        self.rows.iter().enumerate().map(|(i, &r)| (r, i)).collect()
    }
}

/// Leave-one-out share of `t` among groupmates.
fn loo_shares(panel: &Panel, traits: &[Trait]) -> Result<Vec<Vec<f64>>> {
    if traits.is_empty() {
        return Err(Error::InvalidParams("at least one trait is needed".into()));
    }
    let n1 = (panel.group_size() - 1) as f64;
    traits
        .iter()
        .map(|&tr| {
            let vals: Vec<f64> = (0..panel.n_players())
                .map(|p| panel.covariates(p).trait_value(tr).ok_or(Error::MissingTrait(tr.name().into())))
                .collect::<Result<_>>()?;
            Ok((0..panel.n_players())
                .map(|p| {
                    let s: f64 = panel.members(panel.group_of(p)).iter().filter(|&&q| q != p).map(|&q| vals[q]).sum();
                    s / n1
                })
                .collect())
        })
        .collect()
}

pub fn build_instruments(panel: &Panel, kind: &InstrumentKind) -> Result<InstrumentSet> {
    let t_max = panel.rounds();
    let mut rows = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); kind.column_names().len()];
    match kind {
        InstrumentKind::LooComposition { traits } => {
            let shares = loo_shares(panel, traits)?;
            for p in 0..panel.n_players() {
                for t in 1..=t_max {
                    rows.push((p, t));
                    for (col, s) in columns.iter_mut().zip(&shares) {
                        col.push(s[p]);
                    }
                }
            }
        }
        InstrumentKind::DeeperLag { order } => {
            if *order == 0 || *order >= t_max {
                return Err(Error::InsufficientLags { order: *order as usize, rounds: t_max });
            }
            for p in 0..panel.n_players() {
                for t in order + 1..=t_max {
                    if let Some(z) = panel.loo_mean_at(p, t - order) {
                        rows.push((p, t));
                        columns[0].push(z);
                    }
                }
            }
        }
        InstrumentKind::LovShiftShare { traits } => {
            if t_max < 2 {
                return Err(Error::InsufficientLags { order: 1, rounds: t_max });
            }
            if panel.n_villages() < 2 {
                return Err(Error::TooFewVillages { needed: 2, found: panel.n_villages() });
            }
            let shares = loo_shares(panel, traits)?;
            let nv = panel.n_villages();
            // per trait, round and village: contribution sum and count of trait bearers
            let mut acc = vec![vec![vec![(0.0, 0usize); nv]; t_max as usize]; traits.len()];
            for (l, &tr) in traits.iter().enumerate() {
                for p in 0..panel.n_players() {
                    if panel.covariates(p).trait_value(tr) != Some(1.0) {
                        continue;
                    }
                    for t in 1..=t_max {
                        if let Some(c) = panel.contribution(p, t) {
                            let cell = &mut acc[l][t as usize - 1][panel.village_of(p)];
                            cell.0 += c;
                            cell.1 += 1;
                        }
                    }
                }
            }
            let outside = |l: usize, t: u32, v: usize| -> Option<f64> {
                let cells = &acc[l][t as usize - 1];
                let (s, n) = cells.iter().enumerate().filter(|(w, _)| *w != v).fold((0.0, 0), |a, (_, c)| (a.0 + c.0, a.1 + c.1));
                (n > 0).then(|| s / n as f64)
            };
            for p in 0..panel.n_players() {
                let v = panel.village_of(p);
                for t in 2..=t_max {
                    let z: Option<f64> = (0..traits.len())
                        .map(|l| outside(l, t - 1, v).map(|mu| shares[l][p] * mu))
                        .sum();
                    if let Some(z) = z {
                        rows.push((p, t));
                        columns[0].push(z);
                    }
                }
            }
        }
    }
    Ok(InstrumentSet {
        kind: kind.clone(),
        names: kind.column_names(),
        rows,
        columns,
    })
}
