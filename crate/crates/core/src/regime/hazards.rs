//! Pooled first-order transition counts and discrete-time switching hazards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moran::TransitionMatrix2;
use crate::panel::RegimePath;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardCounts {
    /// `counts[from][to]`, rows L then H.
    pub counts: [[u64; 2]; 2],
    /// P(H→L); absent when no player-round starts in H.
    pub hazard_hl: Option<f64>,
    /// P(L→H); absent when no player-round starts in L.
    pub hazard_lh: Option<f64>,
    pub matrix: TransitionMatrix2,
    pub at_risk: [u64; 2],
}

/// Counts only pairs of consecutive rounds where both states are observed.
pub fn count_hazards(paths: &[RegimePath]) -> Result<HazardCounts> {
    if paths.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut counts = [[0u64; 2]; 2];
    for p in paths {
        for w in p.states.windows(2) {
            if let (Some(a), Some(b)) = (w[0], w[1]) {
                counts[a.index()][b.index()] += 1;
            }
        }
    }
    Ok(from_counts(counts))
}

pub fn from_counts(counts: [[u64; 2]; 2]) -> HazardCounts {
    let at_risk = [counts[0][0] + counts[0][1], counts[1][0] + counts[1][1]];
    let rate = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    HazardCounts {
        counts,
        hazard_hl: rate(counts[1][0], at_risk[1]),
        hazard_lh: rate(counts[0][1], at_risk[0]),
        matrix: TransitionMatrix2::from_counts(counts),
        at_risk,
    }
}
