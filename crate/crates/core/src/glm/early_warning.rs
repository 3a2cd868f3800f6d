//! Predicting a high finish from the first rounds: level, stability and trend.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::logit::{design, fit_logit, LogitFit};
use super::roc::{auc_mann_whitney, auc_trapezoid, roc_curve, youden, RocPoint};
use crate::error::{Error, Result};
use crate::numerics::stats::{mean, sample_sd};
use crate::numerics::stream_rng;
use crate::panel::Panel;

pub const MIN_PLAYERS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyWarningConfig {
    pub first_round: u32,
    pub last_round: u32,
    /// Finishing high means a final-round contribution ≥ this value.
    pub final_threshold: f64,
    /// Permute outcomes across players before fitting (null reference).
    pub shuffle_seed: Option<u64>,
}

impl EarlyWarningConfig {
    pub fn new(final_threshold: f64) -> Self {
        Self {
            first_round: 1,
            last_round: 3,
            final_threshold,
            shuffle_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyWarningFit {
    pub logit: LogitFit,
    pub auc: f64,
    pub auc_trapezoid: f64,
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub n_players: usize,
    pub roc: Vec<RocPoint>,
}

/// Mean, sample SD and centred-time OLS slope of an early window.
pub fn early_features(window: &[f64]) -> [f64; 3] {
    let n = window.len() as f64;
    let t_bar = (n - 1.0) / 2.0;
    let c_bar = mean(window);
    let sxx: f64 = (0..window.len()).map(|t| (t as f64 - t_bar).powi(2)).sum();
    let sxy: f64 = window.iter().enumerate().map(|(t, c)| (t as f64 - t_bar) * (c - c_bar)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let sd = if window.len() > 1 { sample_sd(window) } else { 0.0 };
    [c_bar, sd, slope]
}

pub fn early_warning(panel: &Panel, cfg: &EarlyWarningConfig) -> Result<EarlyWarningFit> {
    let t_max = panel.rounds();
    if cfg.first_round < 1 || cfg.last_round < cfg.first_round || cfg.last_round >= t_max {
        return Err(Error::InvalidParams(format!(
            "early window {}..{} must lie before the final round {t_max}",
            cfg.first_round, cfg.last_round
        )));
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut villages = Vec::new();
    for p in 0..panel.n_players() {
        let window: Option<Vec<f64>> = (cfg.first_round..=cfg.last_round).map(|t| panel.contribution(p, t)).collect();
        let (Some(window), Some(last)) = (window, panel.contribution(p, t_max)) else {
            continue;
        };
        let f = early_features(&window);
        rows.push(vec![1.0, f[0], f[1], f[2]]);
        labels.push(last >= cfg.final_threshold);
        villages.push(panel.village_of(p));
    }
    if rows.len() < MIN_PLAYERS {
        return Err(Error::TooFewPlayers {
            needed: MIN_PLAYERS,
            found: rows.len(),
        });
    }
    if let Some(seed) = cfg.shuffle_seed {
        labels.shuffle(&mut stream_rng(seed, 0));
    }
    let y: Vec<f64> = labels.iter().map(|&l| l as u8 as f64).collect();
    let names = ["intercept", "early_mean", "early_sd", "early_slope"].map(String::from);
    let logit = fit_logit(&design(&rows), &y, &names, &villages, "village")?;
    let scores: Vec<f64> = rows.iter().map(|r| logit.predict(r)).collect();
    let auc = auc_mann_whitney(&scores, &labels)?;
    let roc = roc_curve(&scores, &labels)?;
    let op = youden(&roc);
    Ok(EarlyWarningFit {
        auc,
        auc_trapezoid: auc_trapezoid(&roc),
        threshold: op.threshold,
        sensitivity: op.tpr,
        specificity: 1.0 - op.fpr,
        n_players: rows.len(),
        roc,
        logit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_of_a_line() {
        let f = early_features(&[2.0, 4.0, 6.0]);
        assert_eq!(f, [4.0, 2.0, 2.0]);
        assert_eq!(early_features(&[5.0, 5.0, 5.0]), [5.0, 0.0, 0.0]);
    }

    #[test]
    fn window_must_precede_final_round() {
        let paths: Vec<Vec<Option<f64>>> = (0..30).map(|i| vec![Some((i % 12) as f64); 3]).collect();
        let panel = Panel::from_paths(&paths, 5, 2).unwrap();
        assert!(early_warning(&panel, &EarlyWarningConfig::new(6.0)).is_err());
    }
}
