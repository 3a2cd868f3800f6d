use serde::{Deserialize, Serialize};

use super::Panel;
use crate::error::{Error, Result};
use crate::numerics::stats::{mean, median, sample_sd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum State {
    L,
    H,
}

impl State {
    pub fn index(self) -> usize {
        match self {
            State::L => 0,
            State::H => 1,
        }
    }
}

/// How the High/Low cutoff ĉ is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "value", rename_all = "snake_case")]
pub enum ThresholdRule {
    Round1Mean,
    Round1Median,
    Fixed(f64),
}

impl ThresholdRule {
    /// Parses `round1_mean`, `round1_median`, `fixed:6` or a bare number.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        match s {
            "round1_mean" => Some(Self::Round1Mean),
            "round1_median" => Some(Self::Round1Median),
            _ => {
                let v = s.strip_prefix("fixed:").unwrap_or(s);
                v.parse::<f64>().ok().map(Self::Fixed)
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Round1Mean => "round1_mean".into(),
            Self::Round1Median => "round1_median".into(),
            Self::Fixed(v) => format!("fixed:{v}"),
        }
    }

    pub fn resolve(&self, panel: &Panel) -> Result<f64> {
        match self {
            Self::Fixed(v) => Ok(*v),
            Self::Round1Mean | Self::Round1Median => {
                let r1 = panel.round_values(1);
                if r1.is_empty() {
                    return Err(Error::EmptyPanel);
                }
                Ok(if matches!(self, Self::Round1Mean) {
                    mean(&r1)
                } else {
                    median(&r1)
                })
            }
        }
    }
}

/// Classifies one contribution; ties count as High unless `strict`.
pub fn state_of(c: f64, threshold: f64, strict: bool) -> State {
    let high = if strict { c > threshold } else { c >= threshold };
    if high {
        State::H
    } else {
        State::L
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimePath {
    pub player_id: String,
    pub contributions: Vec<Option<f64>>,
    pub z_scores: Vec<Option<f64>>,
    pub states: Vec<Option<State>>,
}

impl RegimePath {
    pub fn is_complete(&self) -> bool {
        self.contributions.iter().all(Option::is_some)
    }

    /// Number of state changes between consecutive observed rounds.
    pub fn flips(&self) -> usize {
        self.states
            .windows(2)
            .filter(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if a != b))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeMeta {
    pub threshold_rule: String,
    pub threshold_value: f64,
    pub strict: bool,
    #[serde(rename = "T")]
    pub rounds: u32,
    #[serde(rename = "N")]
    pub group_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSet {
    pub meta: RegimeMeta,
    pub paths: Vec<RegimePath>,
}

/// One regime path per player with per-round z-scores (sample SD across the
/// players observed in that round; a zero-variance round maps to z = 0).
pub fn classify_states(panel: &Panel, rule: ThresholdRule, strict: bool) -> Result<RegimeSet> {
    if panel.n_players() == 0 {
        return Err(Error::EmptyPanel);
    }
    let threshold = rule.resolve(panel)?;
    let t_max = panel.rounds();
    let moments: Vec<(f64, f64)> = (1..=t_max)
        .map(|t| {
            let v = panel.round_values(t);
            (mean(&v), sample_sd(&v))
        })
        .collect();
    let paths = (0..panel.n_players())
        .map(|p| {
            let contributions = panel.path(p).to_vec();
            let z_scores = contributions
                .iter()
                .zip(&moments)
                .map(|(c, (m, sd))| c.map(|c| if *sd > 0.0 { (c - m) / sd } else { 0.0 }))
                .collect();
            let states = contributions
                .iter()
                .map(|c| c.map(|c| state_of(c, threshold, strict)))
                .collect();
            RegimePath {
                player_id: panel.player_id(p).to_string(),
                contributions,
                z_scores,
                states,
            }
        })
        .collect();
    Ok(RegimeSet {
        meta: RegimeMeta {
            threshold_rule: rule.label(),
            threshold_value: threshold,
            strict,
            rounds: t_max,
            group_size: panel.group_size(),
        },
        paths,
    })
}
