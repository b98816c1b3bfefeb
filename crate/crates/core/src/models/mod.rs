//! Baselines and diagnostics around the density forecast: the logit fusion
//! of RCA and FIPS scores, and Fitness-Complexity.

pub mod complexity;
mod linalg;
pub mod logit;

pub use complexity::{
    explainer_complexity, explainer_complexity_curve, fitness_complexity, mean_log_complexity, ComplexityCurve,
    ComplexityParams, ComplexityVector, CurveBin, ExplainerWeighting,
};
pub use logit::{fit_logit, logit_cv_predict, LogitFit, LogitParams};
