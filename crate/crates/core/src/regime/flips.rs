//! How often players cross the High/Low cutoff.

use serde::{Deserialize, Serialize};

use crate::panel::RegimePath;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipStats {
    pub n_players: usize,
    pub no_flip: usize,
    pub exactly_one_flip: usize,
    pub two_or_more: usize,
    pub share_one: f64,
    pub share_multiple: f64,
    pub per_player: Vec<usize>,
}

pub fn multi_flip_stats(paths: &[RegimePath]) -> FlipStats {
    let per_player: Vec<usize> = paths.iter().map(RegimePath::flips).collect();
    let n = per_player.len();
    let one = per_player.iter().filter(|&&f| f == 1).count();
    let many = per_player.iter().filter(|&&f| f >= 2).count();
    let share = |x: usize| if n > 0 { x as f64 / n as f64 } else { 0.0 };
    FlipStats {
        n_players: n,
        no_flip: n - one - many,
        exactly_one_flip: one,
        two_or_more: many,
        share_one: share(one),
        share_multiple: share(many),
        per_player,
    }
}
