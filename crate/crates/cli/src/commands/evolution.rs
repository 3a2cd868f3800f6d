use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;

use pgg_core::calibration::{calibrate as run_calibration, CalibrationConfig, Grid};
use pgg_core::moran::{simulate_fermi, FermiParams, FermiVariant, TransitionMatrix2};

use super::{fmt, CliError, CliResult, Run};

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Multinomial,
    Pairwise,
}

impl From<Variant> for FermiVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Multinomial => FermiVariant::Multinomial,
            Variant::Pairwise => FermiVariant::Pairwise,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PopulationArgs {
    #[arg(long, default_value_t = 100)]
    pub pop: usize,
    /// Interaction unit size; 0 means well mixed.
    #[arg(long, default_value_t = 5)]
    pub group_size: usize,
    #[arg(long, default_value_t = 1)]
    pub events_per_round: usize,
    /// Rounds of imitation (transitions are read from round 1 to this one).
    #[arg(long, default_value_t = 9)]
    pub rounds: usize,
    /// Share of High players at the start.
    #[arg(long, default_value_t = 0.5)]
    pub initial_high: f64,
    #[arg(long, value_enum, default_value_t = Variant::Multinomial)]
    pub variant: Variant,
}

impl PopulationArgs {
    fn params(&self, d: f64, k: f64, reps: usize, seed: u64) -> FermiParams {
        FermiParams {
            d_tilt: d,
            k_intensity: k,
            population: self.pop,
            group_size: (self.group_size > 0).then_some(self.group_size),
            events_per_round: self.events_per_round,
            rounds: self.rounds,
            replicates: reps,
            seed,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FermiArgs {
    /// Fitness tilt toward High.
    #[arg(long, allow_negative_numbers = true)]
    pub d: f64,
    /// Imitation intensity.
    #[arg(long)]
    pub k: f64,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[command(flatten)]
    pub population: PopulationArgs,
    #[arg(long)]
    pub seed: u64,
}

pub fn simulate(a: &FermiArgs, run: &mut Run) -> CliResult<()> {
    let params = a.population.params(a.d, a.k, a.reps, a.seed);
    let out = simulate_fermi(&params, a.population.initial_high, a.population.variant.into())?;
    for &r in &out.empty_rows {
        run.warn(format!("no agents started in state {}; row reported as identity", ["Low", "High"][r]));
    }
    run.json("fermi.json", &out)?;
    run.csv(
        "high_share.csv",
        &["round", "high_share"],
        out.high_share.iter().enumerate().map(|(t, s)| vec![t.to_string(), fmt(*s)]),
    )
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CalibrateArgs {
    /// Observed 2×2 transition matrix as JSON: `[[LL, LH], [HL, HH]]` or `{"p": ...}`.
    #[arg(long)]
    pub target: PathBuf,
    /// Search box, `d=lo:hi:step,k=lo:hi:step`.
    #[arg(long, default_value = "d=-2:3:0.25,k=0:1.5:0.25")]
    pub grid: String,
    #[arg(long, default_value_t = 200)]
    pub grid_reps: usize,
    #[arg(long, default_value_t = 1000)]
    pub refine_reps: usize,
    /// Stop at the best grid cell.
    #[arg(long)]
    pub no_refine: bool,
    /// Also write the full RSS surface.
    #[arg(long)]
    pub surface: bool,
    #[command(flatten)]
    pub population: PopulationArgs,
    #[arg(long)]
    pub seed: u64,
}

fn parse_target(bytes: &[u8]) -> CliResult<TransitionMatrix2> {
    let bad = |e: serde_json::Error| CliError::Usage(format!("bad target JSON: {e}"));
    let v: serde_json::Value = serde_json::from_slice(bytes).map_err(bad)?;
    let inner = v.get("p").cloned().unwrap_or(v);
    let p: [[f64; 2]; 2] = serde_json::from_value(inner).map_err(bad)?;
    Ok(TransitionMatrix2::new(p)?)
}

pub fn calibrate(a: &CalibrateArgs, run: &mut Run) -> CliResult<()> {
    let target = parse_target(&run.read_input(&a.target)?)?;
    let grid = Grid::parse(&a.grid)?;
    let cfg = CalibrationConfig {
        sim: a.population.params(0.0, 0.0, a.grid_reps, a.seed),
        initial_high_share: a.population.initial_high,
        variant: a.population.variant.into(),
        grid_replicates: a.grid_reps,
        refine_replicates: a.refine_reps,
        refine: !a.no_refine,
        keep_surface: a.surface,
        ..CalibrationConfig::default()
    };
    let mut res = run_calibration(&target, &cfg, &grid)?;
    if res.boundary {
        run.warn("calibrated point lies on the edge of the search box");
    }
    if let Some(surface) = res.surface.take() {
        run.csv(
            "surface.csv",
            &["d", "k", "rss"],
            surface.iter().map(|s| vec![fmt(s.d), fmt(s.k), fmt(s.rss)]),
        )?;
    }
    run.json("calibration.json", &res)
}
