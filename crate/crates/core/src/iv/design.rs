//! Assembling estimation rows: outcome, peer regressor, instruments, controls,
//! the fixed-effect plan and the cluster map.

use serde::{Deserialize, Serialize};

use super::demean::{DemeanPlan, DemeanScheme};
use super::instruments::{build_instruments, InstrumentKind};
use super::tsls::{ols_clustered, two_sls, LinearFit, TwoSlsFit};
use crate::error::{Error, Result};
use crate::panel::{Panel, Trait};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeerTiming {
    Contemporaneous,
    Lagged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterLevel {
    Group,
    Village,
    Player,
}

impl ClusterLevel {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "group" => Some(Self::Group),
            "village" => Some(Self::Village),
            "player" => Some(Self::Player),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Group => "group",
            Self::Village => "village",
            Self::Player => "player",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Control {
    OwnLag,
    LaggedPeer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvSpec {
    pub timing: PeerTiming,
    pub instruments: Vec<InstrumentKind>,
    pub scheme: DemeanScheme,
    pub cluster: ClusterLevel,
    pub controls: Vec<Control>,
}

impl IvSpec {
    /// Same-round peer mean, lean composition set, round and village effects.
    pub fn contemporaneous() -> Self {
        Self {
            timing: PeerTiming::Contemporaneous,
            instruments: vec![InstrumentKind::LooComposition {
                traits: vec![Trait::Male, Trait::NoReligion, Trait::Indigenous],
            }],
            scheme: DemeanScheme::RoundVillage,
            cluster: ClusterLevel::Group,
            controls: Vec::new(),
        }
    }

    /// Lagged peer mean instrumented by the peer mean two rounds back, with
    /// player and village×round effects.
    pub fn lagged() -> Self {
        Self {
            timing: PeerTiming::Lagged,
            instruments: vec![InstrumentKind::DeeperLag { order: 2 }],
            scheme: DemeanScheme::PlayerVillageRound,
            cluster: ClusterLevel::Group,
            controls: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvDesign {
    pub spec: IvSpec,
    /// (player index, round) per estimation row.
    pub rows: Vec<(usize, u32)>,
    pub y: Vec<f64>,
    pub endog: Vec<f64>,
    pub endog_name: String,
    pub instruments: Vec<Vec<f64>>,
    pub instrument_names: Vec<String>,
    pub controls: Vec<Vec<f64>>,
    pub control_names: Vec<String>,
    pub plan: DemeanPlan,
    pub clusters: Vec<usize>,
    /// Village×round cell per row.
    pub cells: Vec<usize>,
    pub villages: Vec<usize>,
}

/// Demeaned columns of a design.
#[derive(Debug, Clone, PartialEq)]
pub struct Demeaned {
    pub y: Vec<f64>,
    pub endog: Vec<f64>,
    pub instruments: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
}

pub fn build_design(panel: &Panel, spec: &IvSpec) -> Result<IvDesign> {
    if spec.instruments.is_empty() {
        return Err(Error::InvalidParams("at least one instrument kind is needed".into()));
    }
    let sets: Vec<_> = spec
        .instruments
        .iter()
        .map(|k| build_instruments(panel, k))
        .collect::<Result<_>>()?;
    let indexes: Vec<_> = sets.iter().map(|s| s.index()).collect();
    let t_max = panel.rounds();

    let mut d = IvDesign {
        spec: spec.clone(),
        rows: Vec::new(),
        y: Vec::new(),
        endog: Vec::new(),
        endog_name: match spec.timing {
            PeerTiming::Contemporaneous => "peer_mean".into(),
            PeerTiming::Lagged => "peer_mean_lag1".into(),
        },
        instruments: vec![Vec::new(); sets.iter().map(|s| s.names.len()).sum()],
        instrument_names: sets.iter().flat_map(|s| s.names.clone()).collect(),
        controls: vec![Vec::new(); spec.controls.len()],
        control_names: spec
            .controls
            .iter()
            .map(|c| match c {
                Control::OwnLag => "own_lag1".to_string(),
                Control::LaggedPeer => "peer_mean_lag1".to_string(),
            })
            .collect(),
        plan: DemeanPlan::new::<usize, usize>(spec.scheme, &[], &[])?,
        clusters: Vec::new(),
        cells: Vec::new(),
        villages: Vec::new(),
    };
    let mut a_ids = Vec::new();
    let mut b_ids = Vec::new();
    for p in 0..panel.n_players() {
        for t in 1..=t_max {
            let Some(y) = panel.contribution(p, t) else { continue };
            let endog = match spec.timing {
                PeerTiming::Contemporaneous => panel.loo_mean_at(p, t),
                PeerTiming::Lagged if t > 1 => panel.loo_mean_at(p, t - 1),
                PeerTiming::Lagged => None,
            };
            let Some(endog) = endog else { continue };
            let Some(z): Option<Vec<f64>> = sets
                .iter()
                .zip(&indexes)
                .map(|(s, ix)| ix.get(&(p, t)).map(|&i| s.columns.iter().map(|c| c[i]).collect::<Vec<_>>()))
                .collect::<Option<Vec<_>>>()
                .map(|v| v.concat())
            else {
                continue;
            };
            let Some(ctrl): Option<Vec<f64>> = spec
                .controls
                .iter()
                .map(|c| match c {
                    Control::OwnLag if t > 1 => panel.contribution(p, t - 1),
                    Control::LaggedPeer if t > 1 => panel.loo_mean_at(p, t - 1),
                    _ => None,
                })
                .collect()
            else {
                continue;
            };
            let v = panel.village_of(p);
            let cell = v * t_max as usize + (t as usize - 1);
            d.rows.push((p, t));
            d.y.push(y);
            d.endog.push(endog);
            for (col, val) in d.instruments.iter_mut().zip(z) {
                col.push(val);
            }
            for (col, val) in d.controls.iter_mut().zip(ctrl) {
                col.push(val);
            }
            d.clusters.push(match spec.cluster {
                ClusterLevel::Group => panel.group_of(p),
                ClusterLevel::Village => v,
                ClusterLevel::Player => p,
            });
            d.cells.push(cell);
            d.villages.push(v);
            match spec.scheme {
                DemeanScheme::RoundVillage => {
                    a_ids.push(Some(t as usize));
                    b_ids.push(Some(v));
                }
                DemeanScheme::PlayerVillageRound => {
                    a_ids.push(Some(p));
                    b_ids.push(Some(cell));
                }
            }
        }
    }
    if d.rows.is_empty() {
        return Err(Error::EmptyPanel);
    }
    d.plan = DemeanPlan::new(spec.scheme, &a_ids, &b_ids)?;
    Ok(d)
}

impl IvDesign {
    pub fn demeaned(&self) -> Result<Demeaned> {
        let dm = |cols: &[Vec<f64>]| cols.iter().map(|c| self.plan.apply(c)).collect::<Result<Vec<_>>>();
        let out = Demeaned {
            y: self.plan.apply(&self.y)?,
            endog: self.plan.apply(&self.endog)?,
            instruments: dm(&self.instruments)?,
            controls: dm(&self.controls)?,
        };
        // a column that is constant within the absorbed cells carries no variation
        for (name, col) in self.instrument_names.iter().zip(&out.instruments) {
            if col.iter().all(|v| v.abs() < 1e-10) {
                return Err(Error::InvalidParams(format!("instrument {name} vanishes after demeaning")));
            }
        }
        Ok(out)
    }

    pub fn regressor_names(&self) -> Vec<String> {
        std::iter::once(self.endog_name.clone()).chain(self.control_names.iter().cloned()).collect()
    }

    pub fn estimate(&self) -> Result<TwoSlsFit> {
        let d = self.demeaned()?;
        self.estimate_with(&d, &d.instruments)
    }

    pub(crate) fn estimate_with(&self, d: &Demeaned, instruments: &[Vec<f64>]) -> Result<TwoSlsFit> {
        let z: Vec<&[f64]> = instruments.iter().map(Vec::as_slice).collect();
        let w: Vec<&[f64]> = d.controls.iter().map(Vec::as_slice).collect();
        two_sls(&d.y, &[&d.endog], &z, &w, &self.regressor_names(), &self.clusters)
    }

    /// OLS of the demeaned outcome on the demeaned peer regressor and controls.
    pub fn naive_ols(&self) -> Result<LinearFit> {
        let d = self.demeaned()?;
        let mut x: Vec<&[f64]> = vec![&d.endog];
        x.extend(d.controls.iter().map(Vec::as_slice));
        ols_clustered(&d.y, &x, &self.regressor_names(), &self.clusters)
    }
}
