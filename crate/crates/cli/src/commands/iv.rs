use clap::{Args, ValueEnum};
use serde::Serialize;

use pgg_core::iv::{
    build_design, crossfit_ridge, levels_fe, permutation_test, placebo, ClusterLevel, Control, InstrumentKind, IvSpec,
};

use super::{usage, CliResult, PanelArgs, Run};

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Design {
    /// Same-round peer mean, composition instruments, round and village effects.
    Contemporaneous,
    /// Lagged peer mean, deeper-lag instrument, player and village×round effects.
    Lagged,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IvArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[arg(long, value_enum, default_value_t = Design::Contemporaneous)]
    pub design: Design,
    /// Instrument sets, `;`-separated: `loo:male,no_religion`, `lag:2`, `lov:indigenous`.
    #[arg(long, value_delimiter = ';')]
    pub instruments: Vec<String>,
    /// `group`, `village` or `player`.
    #[arg(long, default_value = "group")]
    pub cluster: String,
    /// Add the player's own lagged contribution as a control.
    #[arg(long)]
    pub own_lag: bool,
    /// Within-cell permutations of the first instrument (0 skips the test).
    #[arg(long, default_value_t = 0)]
    pub permutations: usize,
    /// Regress the first-round contribution on the first-period peer mean.
    #[arg(long)]
    pub placebo: bool,
    /// Cross-fitted ridge first stage with this many folds (0 skips it).
    #[arg(long, default_value_t = 0)]
    pub crossfit: usize,
    /// Also run the fixed-effects regression in levels.
    #[arg(long)]
    pub levels: bool,
    #[arg(long)]
    pub seed: u64,
}

pub fn iv(a: &IvArgs, run: &mut Run) -> CliResult<()> {
    let mut spec = match a.design {
        Design::Contemporaneous => IvSpec::contemporaneous(),
        Design::Lagged => IvSpec::lagged(),
    };
    if !a.instruments.is_empty() {
        spec.instruments = a.instruments.iter().map(|s| InstrumentKind::parse(s)).collect::<Result<_, _>>()?;
    }
    let Some(cluster) = ClusterLevel::parse(&a.cluster) else {
        return usage(format!("unknown cluster level `{}`", a.cluster));
    };
    spec.cluster = cluster;
    if a.own_lag {
        spec.controls.push(Control::OwnLag);
    }
    if a.crossfit == 1 {
        return usage("cross-fitting needs at least 2 folds");
    }

    let panel = a.panel.load(run)?;
    let design = build_design(&panel, &spec)?;
    let fit = design.estimate()?;
    for w in &fit.warnings {
        run.warn(w.clone());
    }
    let mut ols = design.naive_ols()?;
    ols.residuals.clear();

    let perm = (a.permutations > 0).then(|| permutation_test(&design, a.permutations, a.seed)).transpose()?;
    let plc = a.placebo.then(|| placebo(&panel, &design)).transpose()?;
    let cf = (a.crossfit > 0).then(|| crossfit_ridge(&design, a.crossfit, a.seed)).transpose()?;
    let lv = a.levels.then(|| levels_fe(&panel)).transpose()?;

    run.json(
        "iv.json",
        &serde_json::json!({
            "spec": spec,
            "tsls": fit,
            "naive_ols": ols,
            "permutation": perm,
            "placebo": plc,
            "crossfit": cf,
            "levels": lv,
        }),
    )
}
