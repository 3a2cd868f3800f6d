//! Logistic models: critical mass, early warning and the dynamic state logit.

mod critical_mass;
mod early_warning;
mod logit;
mod roc;
mod state_logit;

pub use critical_mass::{critical_mass, village_rows, CriticalMassConfig, CriticalMassFit, FinalDefinition, VillageRow};
pub use early_warning::{early_features, early_warning, EarlyWarningConfig, EarlyWarningFit};
pub use logit::{fit_logit, Coefficient, LogitFit};
pub use roc::{auc_mann_whitney, auc_trapezoid, roc_curve, youden, RocPoint};
pub use state_logit::{dynamic_state_logit, StateLogitConfig, StateLogitFit};
