use clap::Args;
use serde::Serialize;

use pgg_core::glm::{
    critical_mass as fit_critical_mass, dynamic_state_logit, early_warning as fit_early_warning, CriticalMassConfig,
    EarlyWarningConfig, FinalDefinition, LogitFit, StateLogitConfig,
};

use super::{fmt, parse_rule, usage, CliResult, PanelArgs, Run};

fn logit_warnings(fit: &LogitFit, run: &mut Run) {
    if fit.separation {
        run.warn("quasi-complete separation; coefficients are not finite-sample meaningful");
    }
    if !fit.converged {
        run.warn("IRLS did not converge");
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CriticalMassArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    /// Contribution threshold for High: `round1_mean`, `fixed:<v>`, ...
    #[arg(long, default_value = "round1_mean")]
    pub threshold: String,
    /// Round whose High share is the predictor.
    #[arg(long, default_value_t = 1)]
    pub early_round: u32,
    /// Village finishes high by `last` round mean or `last_two` rounds mean.
    #[arg(long, default_value = "last")]
    pub final_def: String,
    #[arg(long, default_value_t = 500)]
    pub bootstrap: usize,
    #[arg(long)]
    pub seed: u64,
}

pub fn critical_mass(a: &CriticalMassArgs, run: &mut Run) -> CliResult<()> {
    let Some(final_definition) = FinalDefinition::parse(&a.final_def) else {
        return usage(format!("unknown final definition `{}`", a.final_def));
    };
    let rule = parse_rule(&a.threshold)?;
    let panel = a.panel.load(run)?;
    let thr = rule.resolve(&panel)?;
    let cfg = CriticalMassConfig {
        early_round: a.early_round,
        final_definition,
        bootstrap_reps: a.bootstrap,
        ..CriticalMassConfig::new(thr, a.seed)
    };
    let fit = fit_critical_mass(&panel, &cfg)?;
    logit_warnings(&fit.logit, run);
    if fit.s_crit.is_none() {
        run.warn("fitted probability never crosses 0.5 inside [0, 1]");
    }
    if a.bootstrap > 0 && fit.bootstrap_used < a.bootstrap {
        run.warn(format!("{} of {} bootstrap refits failed", a.bootstrap - fit.bootstrap_used, a.bootstrap));
    }
    run.csv(
        "villages.csv",
        &["village_id", "share_above", "finished_high"],
        fit.rows.iter().map(|r| vec![r.village_id.clone(), fmt(r.share_above), (r.finished_high as u8).to_string()]),
    )?;
    run.json("critical_mass.json", &serde_json::json!({ "threshold": thr, "fit": fit }))
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EarlyWarnArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[arg(long, default_value_t = 1)]
    pub first_round: u32,
    #[arg(long, default_value_t = 3)]
    pub last_round: u32,
    /// Finishing high means a final contribution at or above this.
    #[arg(long, default_value_t = 6.0)]
    pub final_threshold: f64,
    /// Permute outcomes with this seed first (null reference run).
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
}

pub fn early_warn(a: &EarlyWarnArgs, run: &mut Run) -> CliResult<()> {
    let panel = a.panel.load(run)?;
    let cfg = EarlyWarningConfig {
        first_round: a.first_round,
        last_round: a.last_round,
        final_threshold: a.final_threshold,
        shuffle_seed: a.shuffle_seed,
    };
    let fit = fit_early_warning(&panel, &cfg)?;
    logit_warnings(&fit.logit, run);
    run.csv(
        "roc.csv",
        &["threshold", "tpr", "fpr"],
        fit.roc.iter().map(|p| vec![fmt(p.threshold), fmt(p.tpr), fmt(p.fpr)]),
    )?;
    run.json("early_warning.json", &fit)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct StateLogitArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[arg(long, default_value = "round1_mean")]
    pub threshold: String,
    #[arg(long)]
    pub strict: bool,
    /// Add demographic controls.
    #[arg(long)]
    pub covariates: bool,
    /// Drop the player-average exposure term.
    #[arg(long)]
    pub no_average_exposure: bool,
}

pub fn state_logit(a: &StateLogitArgs, run: &mut Run) -> CliResult<()> {
    let rule = parse_rule(&a.threshold)?;
    let panel = a.panel.load(run)?;
    let cfg = StateLogitConfig {
        strict: a.strict,
        covariates: a.covariates,
        average_exposure: !a.no_average_exposure,
        ..StateLogitConfig::new(rule.resolve(&panel)?)
    };
    let fit = dynamic_state_logit(&panel, &cfg)?;
    logit_warnings(&fit.logit, run);
    run.json("state_logit.json", &fit)
}
