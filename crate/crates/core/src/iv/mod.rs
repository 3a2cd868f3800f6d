//! Peer effects by instrumental variables.

mod demean;
mod design;
mod diagnostics;
mod instruments;
mod levels;
mod synthetic;
mod tsls;

pub use demean::{DemeanPlan, DemeanScheme, MAX_SWEEPS, SWEEP_TOL};
pub use design::{build_design, ClusterLevel, Control, Demeaned, IvDesign, IvSpec, PeerTiming};
pub use diagnostics::{crossfit_ridge, permutation_test, placebo, CrossFitIv, PermutationTest, Placebo, RIDGE_PENALTIES};
pub use instruments::{build_instruments, InstrumentKind, InstrumentSet};
pub use levels::{levels_fe, LevelsFeFit};
pub use tsls::{first_stage_f, ols_clustered, two_sls, Estimate, LinearFit, Sargan, TwoSlsFit};
pub use synthetic::{simulate_peer_panel, PeerDgp};
