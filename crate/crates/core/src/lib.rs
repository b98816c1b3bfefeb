//! Explainable export forecasting on country × product trade matrices.

pub mod data;
pub mod embedding;
pub mod error;
pub mod forest;
pub mod metrics;
pub mod models;
pub mod network;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod validation;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar of the concrete aliases below.
pub type Real = f64;

pub type Forest = forest::Forest<Real>;
pub type ExportTensor = data::ExportTensor<Real>;
pub type CompetitivenessSeries = data::CompetitivenessSeries<Real>;
pub type ScoreMatrix = pipeline::ScoreMatrix<Real>;
pub type ExplainerMatrix = pipeline::ExplainerMatrix<Real>;
pub type ValidatedImportance = validation::ValidatedImportance<Real>;
pub type FipsEmbedding = embedding::FipsEmbedding<Real>;
pub type LogitFit = models::LogitFit<Real>;
pub type ComplexityVector = models::ComplexityVector<Real>;
pub type SectorImportanceMatrix = network::SectorImportanceMatrix<Real>;
pub type PlanarGraph = network::PlanarGraph<Real>;
