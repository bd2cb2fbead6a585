//! Data, parameters and exact densities of the ordinal spatial models.

mod cutpoints;
mod data;
mod density;
mod spec;
mod state;

pub use cutpoints::{
    category_probs, cutpoints_from_simplex, inv_logit, log_category_prob, CutpointBlock,
};
pub use data::SurveyDataset;
pub use density::{in_support, linear_predictor, loglik, logposterior, logprior, LogLikelihood};
pub use spec::{CutpointMode, Dimensions, ModelSpec, Variant, DEFAULT_SIGMA_UPPER};
pub use state::ParameterState;

pub(crate) use cutpoints::category_probs_unchecked;
