//! Regression for clustered binary responses under the multivariate
//! Bernoulli model with a generalized log-gamma random intercept.

pub mod data;
pub mod error;
pub mod fit;
pub mod glg;
pub mod glm;
pub mod glmm;
pub mod inference;
pub mod io;
pub mod mberglg;
pub mod montecarlo;
pub mod numerics;
pub mod optim;
pub mod quadrature;
pub mod residuals;

pub use data::{ClusterData, Dataset, Theta};
pub use error::{Error, Result};
pub use glg::GlgParams;
pub use mberglg::{Precision, SignedLogValue};
pub use fit::{fit_ml, fit_model, FitConfig, FitReport, InitStrategy, ModelKind};
pub use glm::Link;
pub use glmm::{glmm_fit, glmm_loglik, GlmmSpec};
pub use io::{load_dataset, FitArtifact, LongTable, ModelSpec};
pub use montecarlo::{MCReport, MCScenarioConfig, SimulateConfig};
pub use residuals::{Convention, EnvelopeBand, ResidualRecord};
