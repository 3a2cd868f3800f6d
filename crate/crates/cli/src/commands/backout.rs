use clap::{Args, ValueEnum};
use serde::Serialize;

use pgg_core::backout::{backout_summary, d_histogram, BackoutConfig, ImpliedHigh, Objective};

use super::{fmt, usage, CliResult, PanelArgs, Run};

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fit {
    /// Least-squares first-order-condition residuals.
    Foc,
    /// Squared distance between choices and model best replies.
    Choice,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BackoutArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 2.0)]
    pub b: f64,
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    /// Norm-penalty curvature; `0` uses the quadratic approximation.
    #[arg(long, default_value_t = 1.0)]
    pub k_norm: f64,
    #[arg(long, value_enum, default_value_t = Fit::Foc)]
    pub objective: Fit,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
}

pub fn backout(a: &BackoutArgs, run: &mut Run) -> CliResult<()> {
    if a.bins == 0 {
        return usage("need at least one histogram bin");
    }
    if !(a.k_norm >= 0.0) {
        return usage("k-norm must be non-negative");
    }
    let panel = a.panel.load(run)?;
    let cfg = BackoutConfig {
        b: a.b,
        kappa: a.kappa,
        n: panel.group_size(),
        k_norm: (a.k_norm > 0.0).then_some(a.k_norm),
        objective: match a.objective {
            Fit::Foc => Objective::FocResidual,
            Fit::Choice => Objective::ChoiceError,
        },
        ..BackoutConfig::new(a.alpha)
    };
    let (results, summary) = backout_summary(&panel, &cfg)?;
    if summary.n_skipped > 0 {
        run.warn(format!("{} players with fewer than three usable rounds skipped", summary.n_skipped));
    }
    if summary.n_weakly_identified > 0 {
        run.warn(format!("{} players weakly identified (phi fixed at 0)", summary.n_weakly_identified));
    }
    run.csv(
        "backout_players.csv",
        &["player_id", "d", "phi", "implied_c_high", "fit_residual", "rounds_used", "pinned_at_cap", "weakly_identified"],
        results.iter().map(|r| {
            vec![
                r.player_id.clone(),
                fmt(r.d),
                fmt(r.phi),
                match r.implied_c_high {
                    ImpliedHigh::Lempiras(c) => fmt(c),
                    ImpliedHigh::AtCap => "at-cap".into(),
                },
                fmt(r.fit_residual),
                r.rounds_used.to_string(),
                r.pinned_at_cap.to_string(),
                r.weakly_identified.to_string(),
            ]
        }),
    )?;
    run.csv(
        "backout_d_histogram.csv",
        &["lo", "hi", "count"],
        d_histogram(&results, a.bins).into_iter().map(|(lo, hi, n)| vec![fmt(lo), fmt(hi), n.to_string()]),
    )?;
    run.json("backout_summary.json", &summary)
}
