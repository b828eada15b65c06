//! Naive Bayes classifiers trained on data whose class variable is
//! right-censored for part of the records.
//!
//! The estimator maximizes the compound collective conditional likelihood:
//! observed records contribute the class posterior, censored records the
//! posterior probability of exceeding their censoring threshold.

pub mod cli;
pub mod error;
pub mod estimator;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod numeric;
pub mod par;
pub mod simulation;
pub mod verify;

pub use error::{Error, Result};
pub use likelihood::{
    expansion_term_count, log_cccl, log_cccl_by_expansion, log_cccl_gradient, CcclEvaluation,
    Dataset, Observation, Status,
};
pub use model::{
    class_posterior, from_logits, survival_posterior, to_logits, LogitPoint, ModelSpec,
    ParameterPoint,
};
pub use par::Exec;
