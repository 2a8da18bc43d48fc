//! Influence of observations on eigen-subspaces of covariance, correlation
//! and principal Hessian estimators.

pub mod analysis;
pub mod data;
pub mod error;
pub mod influence;
pub mod measures;
pub mod report;
pub mod sample;
pub mod spectral;
pub mod synthetic;
pub mod verify;

pub use analysis::{run_analysis, AnalysisConfig};
pub use data::{Dataset, StandardizationMode};
pub use error::{Error, Result};
pub use influence::{Contaminant, Divisor, Estimator, EstimatorKind, PopulationModel};
pub use report::{InfluenceReport, Method, ReportFormat};
pub use spectral::{EigenOrdering, EigenSystem, OrthonormalFrame, SubspaceSelection, SymmetricMatrix};
