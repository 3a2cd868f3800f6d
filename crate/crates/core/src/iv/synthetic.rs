//! Planted peer-effect panels for recovery checks.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::stream_rng;
use crate::panel::{Covariates, Panel, Religion};
use crate::stage_game::ENDOWMENT;

const MID: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerDgp {
    pub n_villages: usize,
    pub groups_per_village: usize,
    pub rounds: u32,
    /// Response to last round's leave-one-out peer mean.
    pub beta_lag: f64,
    pub player_sd: f64,
    pub cell_sd: f64,
    /// Group×round shock shared by groupmates: the source of same-round co-movement.
    pub group_shock_sd: f64,
    pub noise_sd: f64,
    /// Player-effect shifts for male, indigenous and no-religion players.
    pub trait_effects: [f64; 3],
    pub seed: u64,
}

impl Default for PeerDgp {
    fn default() -> Self {
        Self {
            n_villages: 50,
            groups_per_village: 10,
            rounds: 10,
            beta_lag: 1.0,
            player_sd: 0.3,
            cell_sd: 0.2,
            group_shock_sd: 0.02,
            noise_sd: 0.02,
            trait_effects: [0.6, -0.5, 0.5],
            seed: 0,
        }
    }
}

/// c_it = 6 + κ_i + η_i + γ_vt + β·(c̄_{−i,g,t−1} − κ̄_{−i,g} − 6) + u_gt + ε_it,
/// with no lag term in round 1. κ is the trait-driven type (centred on the
/// population trait means), η an idiosyncratic taste. Players react to how far
/// their peers sit from what the peers' types predict, so group composition
/// moves same-round peer means without propagating into later rounds, while
/// tastes accumulate through the lag and give the peer mean its within-player
/// drift. Since the reference κ̄_{−i,g} is fixed per player it is absorbed by
/// the player effect: in levels this is c_it = α_i + γ_vt + β·c̄_{−i,t−1} + e_it.
pub fn simulate_peer_panel(dgp: &PeerDgp) -> Result<Panel> {
    let n = 5;
    let n_groups = dgp.n_villages * dgp.groups_per_village;
    let n_players = n_groups * n;
    let mut rng = stream_rng(dgp.seed, 0);
    let std = Normal::new(0.0, 1.0).expect("unit normal");

    let covs: Vec<Covariates> = (0..n_players)
        .map(|_| {
            let religion = match rng.random::<f64>() {
                u if u < 0.092 => Religion::None,
                u if u < 0.429 => Religion::Protestant,
                _ => Religion::Catholic,
            };
            Covariates {
                male: Some(rng.random_bool(0.41)),
                indigenous: Some(rng.random_bool(0.128)),
                religion: Some(religion),
                ..Covariates::default()
            }
        })
        .collect();
    let [m, ind, nr] = dgp.trait_effects;
    let centre = m * 0.41 + ind * 0.128 + nr * 0.092;
    // observable type and idiosyncratic taste
    let kind: Vec<f64> = covs
        .iter()
        .map(|c| {
            let on = |b: bool| if b { 1.0 } else { 0.0 };
            m * on(c.male.unwrap()) + ind * on(c.indigenous.unwrap()) + nr * on(c.religion == Some(Religion::None))
                - centre
        })
        .collect();
    let taste: Vec<f64> = (0..n_players).map(|_| dgp.player_sd * std.sample(&mut rng)).collect();

    let t_max = dgp.rounds as usize;
    let mut c = vec![vec![0.0; t_max]; n_players];
    for t in 0..t_max {
        let gamma: Vec<f64> = (0..dgp.n_villages).map(|_| dgp.cell_sd * std.sample(&mut rng)).collect();
        for g in 0..n_groups {
            let u = dgp.group_shock_sd * std.sample(&mut rng);
            let v = g / dgp.groups_per_village;
            let base = g * n;
            let prev_sum: f64 = if t > 0 { (0..n).map(|k| c[base + k][t - 1]).sum() } else { 0.0 };
            let kind_sum: f64 = (0..n).map(|k| kind[base + k]).sum();
            for k in 0..n {
                let i = base + k;
                let lag = if t > 0 {
                    let peers = (prev_sum - c[i][t - 1] - (kind_sum - kind[i])) / (n - 1) as f64;
                    dgp.beta_lag * (peers - MID)
                } else {
                    0.0
                };
                let level = MID + kind[i] + taste[i] + gamma[v] + lag + u + dgp.noise_sd * std.sample(&mut rng);
                c[i][t] = level.clamp(0.0, ENDOWMENT);
            }
        }
    }
    let paths: Vec<Vec<Option<f64>>> = c.into_iter().map(|row| row.into_iter().map(Some).collect()).collect();
    Panel::from_paths(&paths, n, dgp.groups_per_village)?.with_covariates(covs)
}
