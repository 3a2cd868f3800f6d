use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use pgg_core::adaptive::singular_strategy;
use pgg_core::panel::{generate_synthetic, write_panel_csv, SyntheticConfig};
use pgg_core::stage_game::{welfare_report, ModelParams};

use super::{fmt, usage, CliError, CliResult, PanelArgs, Run};

/// Structural constants shared by the model subcommands.
#[derive(Debug, Clone, Args, Serialize)]
pub struct ParamArgs {
    /// Public-good multiplier.
    #[arg(long, default_value_t = 2.0)]
    pub b: f64,
    /// Private cost per Lempira contributed.
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    /// Group size.
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    /// Warm-glow curvature.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Norm-penalty curvature.
    #[arg(long, default_value_t = 1.0)]
    pub k_norm: f64,
    /// Altruism weight (broadcast to every player).
    #[arg(long, default_value_t = 1.0)]
    pub d: f64,
    /// Norm-penalty scale (broadcast to every player).
    #[arg(long, default_value_t = 0.0)]
    pub h: f64,
    /// Read the full parameter set from JSON instead (overrides the flags).
    #[arg(long)]
    pub params: Option<PathBuf>,
}

impl ParamArgs {
    pub fn build(&self, run: &mut Run) -> CliResult<ModelParams> {
        if let Some(path) = &self.params {
            let bytes = run.read_input(path)?;
            return serde_json::from_slice(&bytes).map_err(|e| CliError::Usage(format!("bad params JSON: {e}")));
        }
        Ok(ModelParams {
            b: self.b,
            kappa: self.kappa,
            n: self.n,
            alpha: self.alpha,
            k_norm: self.k_norm,
            d: vec![self.d],
            h: vec![self.h],
            ..ModelParams::default()
        })
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long, default_value_t = 10)]
    pub villages: usize,
    #[arg(long, default_value_t = 10)]
    pub groups_per_village: usize,
    #[arg(long, default_value_t = 10)]
    pub rounds: u32,
    /// Gaussian noise added to each best reply, in Lempiras.
    #[arg(long, default_value_t = 0.5)]
    pub noise_sd: f64,
    /// Skip the synthetic demographic covariates.
    #[arg(long)]
    pub no_covariates: bool,
    #[arg(long)]
    pub seed: u64,
}

pub fn simulate(a: &SimulateArgs, run: &mut Run) -> CliResult<()> {
    let params = a.params.build(run)?;
    let panel = generate_synthetic(
        &params,
        &SyntheticConfig {
            n_villages: a.villages,
            groups_per_village: a.groups_per_village,
            seed: a.seed,
            noise_sd: a.noise_sd,
            rounds: a.rounds,
            covariates: !a.no_covariates,
        },
    )?;
    let mut buf = Vec::new();
    write_panel_csv(&panel, &mut buf)?;
    run.write("panel.csv", &buf)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SingularArgs {
    #[command(flatten)]
    pub params: ParamArgs,
}

pub fn analyze_singular(a: &SingularArgs, run: &mut Run) -> CliResult<()> {
    let params = a.params.build(run)?;
    let s = singular_strategy(&params, 0)?;
    if s.at_cap {
        run.warn(format!("singular strategy {:.3} lies beyond the endowment", s.c_star_closed_form));
    }
    run.json("singular.json", &s)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct WelfareArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[command(flatten)]
    pub params: ParamArgs,
    /// Per-Lempira subsidies to evaluate under full cooperation.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub subsidy: Vec<f64>,
}

pub fn welfare(a: &WelfareArgs, run: &mut Run) -> CliResult<()> {
    if a.subsidy.iter().any(|m| !m.is_finite() || *m < 0.0) {
        return usage("subsidies must be finite and non-negative");
    }
    let panel = a.panel.load(run)?;
    let params = a.params.build(run)?;
    let rows = welfare_report(&panel, &params, &a.subsidy)?;
    run.csv(
        "welfare.csv",
        &["scenario", "m", "mean_payoff"],
        rows.iter().map(|r| vec![r.scenario.clone(), fmt(r.m), fmt(r.mean_payoff)]),
    )
}
