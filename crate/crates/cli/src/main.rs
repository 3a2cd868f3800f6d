use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

mod commands;

use commands::{backout, evolution, glm, iv, model, regime, CliResult, Run};

/// Public-goods game toolkit: structural model, imitation dynamics and
/// panel estimators for regime bifurcation in contribution data.
#[derive(Debug, Parser)]
#[command(name = "pgg", version, about)]
struct Cli {
    /// Directory for results and manifest.json.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "PGG_THREADS", default_value_t = 0)]
    threads: usize,
    /// Exit with status 3 when the run produced warnings.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Cmd {
    /// Simulate a panel from the structural model.
    Simulate(model::SimulateArgs),
    /// Singular strategy and its stability classification.
    AnalyzeSingular(model::SingularArgs),
    /// Observed payoffs against full-cooperation counterfactuals.
    Welfare(model::WelfareArgs),
    /// Two-state Fermi imitation process.
    SimulateFermi(evolution::FermiArgs),
    /// Fit (d, k) of the imitation process to an observed transition matrix.
    Calibrate(evolution::CalibrateArgs),
    /// Nonparametric drift of contribution increments.
    Drift(regime::DriftArgs),
    /// Two-state Gaussian hidden Markov model.
    Hmm(regime::HmmArgs),
    /// Low/High transition counts and hazards.
    Hazards(regime::HazardArgs),
    /// Ward clustering of z-score trajectories.
    Cluster(regime::ClusterArgs),
    /// Distribution of regime flips per player.
    Flips(regime::FlipArgs),
    /// Village-level logit of finishing high on early High share.
    CriticalMass(glm::CriticalMassArgs),
    /// Player-level early-warning logit and ROC.
    EarlyWarn(glm::EarlyWarnArgs),
    /// Dynamic logit of High status on lagged state and peers.
    StateLogit(glm::StateLogitArgs),
    /// Peer effects by two-stage least squares.
    Iv(iv::IvArgs),
    /// Per-player altruism and norm-weight back-out.
    Backout(backout::BackoutArgs),
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Simulate(_) => "simulate",
            Cmd::AnalyzeSingular(_) => "analyze-singular",
            Cmd::Welfare(_) => "welfare",
            Cmd::SimulateFermi(_) => "simulate-fermi",
            Cmd::Calibrate(_) => "calibrate",
            Cmd::Drift(_) => "drift",
            Cmd::Hmm(_) => "hmm",
            Cmd::Hazards(_) => "hazards",
            Cmd::Cluster(_) => "cluster",
            Cmd::Flips(_) => "flips",
            Cmd::CriticalMass(_) => "critical-mass",
            Cmd::EarlyWarn(_) => "early-warn",
            Cmd::StateLogit(_) => "state-logit",
            Cmd::Iv(_) => "iv",
            Cmd::Backout(_) => "backout",
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Cmd::Simulate(a) => Some(a.seed),
            Cmd::SimulateFermi(a) => Some(a.seed),
            Cmd::Calibrate(a) => Some(a.seed),
            Cmd::Drift(a) => Some(a.seed),
            Cmd::Hmm(a) => Some(a.seed),
            Cmd::CriticalMass(a) => Some(a.seed),
            Cmd::Iv(a) => Some(a.seed),
            Cmd::EarlyWarn(a) => a.shuffle_seed,
            _ => None,
        }
    }

    fn run(&self, run: &mut Run) -> CliResult<()> {
        match self {
            Cmd::Simulate(a) => model::simulate(a, run),
            Cmd::AnalyzeSingular(a) => model::analyze_singular(a, run),
            Cmd::Welfare(a) => model::welfare(a, run),
            Cmd::SimulateFermi(a) => evolution::simulate(a, run),
            Cmd::Calibrate(a) => evolution::calibrate(a, run),
            Cmd::Drift(a) => regime::drift(a, run),
            Cmd::Hmm(a) => regime::hmm(a, run),
            Cmd::Hazards(a) => regime::hazards(a, run),
            Cmd::Cluster(a) => regime::cluster(a, run),
            Cmd::Flips(a) => regime::flips(a, run),
            Cmd::CriticalMass(a) => glm::critical_mass(a, run),
            Cmd::EarlyWarn(a) => glm::early_warn(a, run),
            Cmd::StateLogit(a) => glm::state_logit(a, run),
            Cmd::Iv(a) => iv::iv(a, run),
            Cmd::Backout(a) => backout::backout(a, run),
        }
    }
}

fn execute(cli: &Cli) -> CliResult<Vec<String>> {
    let mut run = Run::new(&cli.out)?;
    cli.cmd.run(&mut run)?;
    // the subcommand's own arguments, without the enum tag
    let config = match serde_json::to_value(&cli.cmd).expect("arguments serialize") {
        serde_json::Value::Object(m) => m.into_iter().next().map_or(serde_json::Value::Null, |(_, v)| v),
        v => v,
    };
    run.finish(cli.cmd.name(), config, cli.cmd.seed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(&cli) {
        Ok(warnings) => {
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            if cli.strict && !warnings.is_empty() {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
