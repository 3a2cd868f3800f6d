use clap::{Args, ValueEnum};
use serde::Serialize;

use pgg_core::panel::{classify_states, RegimeSet};
use pgg_core::regime::{
    cluster_trajectories, count_hazards, fit_drift, fit_hmm2, multi_flip_stats, DriftConfig, HmmConfig,
};

use super::{fmt, parse_rule, usage, CliResult, PanelArgs, Run};

/// How a contribution is mapped to Low/High.
#[derive(Debug, Clone, Args, Serialize)]
pub struct StateArgs {
    /// `round1_mean`, `round1_median`, `fixed:<v>` or a bare number.
    #[arg(long, default_value = "round1_mean")]
    pub threshold: String,
    /// High requires c > threshold rather than c ≥ threshold.
    #[arg(long)]
    pub strict: bool,
}

impl StateArgs {
    fn classify(&self, panel: &pgg_core::panel::Panel) -> CliResult<RegimeSet> {
        Ok(classify_states(panel, parse_rule(&self.threshold)?, self.strict)?)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DriftArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[arg(long, default_value_t = 12)]
    pub knots: usize,
    #[arg(long, default_value_t = 500)]
    pub bootstrap: usize,
    /// Lower and upper trimming quantiles of the level, `lo,hi`.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.01, 0.99])]
    pub trim: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    pub grid_points: usize,
    #[arg(long)]
    pub seed: u64,
}

pub fn drift(a: &DriftArgs, run: &mut Run) -> CliResult<()> {
    let panel = a.panel.load(run)?;
    let cfg = DriftConfig {
        interior_knots: a.knots,
        bootstrap_reps: a.bootstrap,
        trim: (a.trim[0], a.trim[1]),
        grid_points: a.grid_points,
        seed: a.seed,
    };
    let fit = fit_drift(&panel, &cfg)?;
    if fit.c_star.is_none() {
        run.warn("drift never crosses zero from above; no interior attractor");
    }
    run.csv(
        "drift_curve.csv",
        &["c", "m_hat", "band_lo", "band_hi"],
        (0..fit.grid.len()).map(|i| vec![fmt(fit.grid[i]), fmt(fit.m_hat[i]), fmt(fit.band_lo[i]), fmt(fit.band_hi[i])]),
    )?;
    run.json("drift.json", &fit)
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum HmmInput {
    /// Per-round z-scores of contributions.
    Z,
    /// Raw contributions.
    Contribution,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct HmmArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[arg(long, value_enum, default_value_t = HmmInput::Z)]
    pub on: HmmInput,
    #[arg(long, default_value_t = 5)]
    pub starts: usize,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Report transitions counted along Viterbi paths.
    #[arg(long)]
    pub viterbi: bool,
    #[arg(long)]
    pub seed: u64,
}

pub fn hmm(a: &HmmArgs, run: &mut Run) -> CliResult<()> {
    let panel = a.panel.load(run)?;
    let set = classify_states(&panel, pgg_core::panel::ThresholdRule::Round1Mean, false)?;
    let seqs: Vec<Vec<f64>> = set
        .paths
        .iter()
        .filter_map(|p| match a.on {
            HmmInput::Z => p.z_scores.iter().copied().collect(),
            HmmInput::Contribution => p.contributions.iter().copied().collect(),
        })
        .collect();
    let dropped = set.paths.len() - seqs.len();
    if dropped > 0 {
        run.warn(format!("{dropped} players with missing rounds left out of the HMM"));
    }
    let cfg = HmmConfig {
        max_iter: a.max_iter,
        seed: a.seed,
        n_starts: a.starts,
        viterbi_transitions: a.viterbi,
        ..HmmConfig::default()
    };
    let fit = fit_hmm2(&seqs, &cfg)?;
    if !fit.converged {
        run.warn("EM hit the iteration cap before converging");
    }
    if fit.collapsed {
        run.warn("the two hidden states are not separated");
    }
    run.csv(
        "hmm_high_share.csv",
        &["round", "high_share"],
        fit.high_share_by_round.iter().enumerate().map(|(t, s)| vec![(t + 1).to_string(), fmt(*s)]),
    )?;
    run.json("hmm.json", &fit)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct HazardArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[command(flatten)]
    pub states: StateArgs,
}

pub fn hazards(a: &HazardArgs, run: &mut Run) -> CliResult<()> {
    let panel = a.panel.load(run)?;
    let set = a.states.classify(&panel)?;
    let h = count_hazards(&set.paths)?;
    if h.hazard_hl.is_none() || h.hazard_lh.is_none() {
        run.warn("one state is never occupied; its hazard is undefined");
    }
    run.json(
        "hazards.json",
        &serde_json::json!({ "meta": set.meta, "hazards": h }),
    )?;
    run.csv(
        "hazards.csv",
        &["from", "to", "count", "prob"],
        [("L", 0), ("H", 1)].iter().flat_map(|&(fa, f)| {
            let h = &h;
            [("L", 0), ("H", 1)]
                .into_iter()
                .map(move |(ta, t)| vec![fa.into(), ta.into(), h.counts[f][t].to_string(), fmt(h.matrix.p[f][t])])
        }),
    )
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[command(flatten)]
    pub states: StateArgs,
    #[arg(long, default_value_t = 2)]
    pub k_min: usize,
    #[arg(long, default_value_t = 6)]
    pub k_max: usize,
}

pub fn cluster(a: &ClusterArgs, run: &mut Run) -> CliResult<()> {
    if a.k_min < 2 || a.k_max < a.k_min {
        return usage("need 2 ≤ k-min ≤ k-max");
    }
    let panel = a.panel.load(run)?;
    let set = a.states.classify(&panel)?;
    let res = cluster_trajectories(&set.paths, a.k_min, a.k_max)?;
    if res.excluded_incomplete > 0 {
        run.warn(format!("{} incomplete trajectories excluded", res.excluded_incomplete));
    }
    run.csv(
        "merges.csv",
        &["step", "left", "right", "height", "size"],
        res.merges
            .iter()
            .enumerate()
            .map(|(i, m)| vec![i.to_string(), m.left.to_string(), m.right.to_string(), fmt(m.height), m.size.to_string()]),
    )?;
    run.csv(
        "silhouette.csv",
        &["k", "silhouette_mean"],
        res.fits.iter().map(|f| vec![f.k.to_string(), fmt(f.silhouette_mean)]),
    )?;
    run.json("cluster.json", &res)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FlipArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[command(flatten)]
    pub states: StateArgs,
}

pub fn flips(a: &FlipArgs, run: &mut Run) -> CliResult<()> {
    let panel = a.panel.load(run)?;
    let set = a.states.classify(&panel)?;
    let stats = multi_flip_stats(&set.paths);
    run.csv(
        "flips_per_player.csv",
        &["player_id", "flips", "first_state", "last_state"],
        set.paths.iter().zip(&stats.per_player).map(|(p, f)| {
            let st = |s: Option<&Option<pgg_core::panel::State>>| {
                s.copied().flatten().map_or(String::new(), |s| format!("{s:?}"))
            };
            vec![p.player_id.clone(), f.to_string(), st(p.states.first()), st(p.states.last())]
        }),
    )?;
    run.json("flips.json", &serde_json::json!({ "meta": set.meta, "flips": stats }))
}
