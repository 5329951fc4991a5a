//! Federated learning simulator with bi-level model protection.
//!
//! The server embeds a backdoor trigger-set watermark into every aggregated
//! global model, constraining the retraining steps so they do not work against
//! the accumulated primitive-task descent direction, and then inserts a
//! distinct multi-bit fingerprint into the batch-norm scales of each client's
//! copy. A leaked model can then be verified through its trigger-set accuracy
//! and traced back to the client whose key produces the highest fingerprint
//! similarity score.

pub mod attacks;
pub mod config;
pub mod data;
pub mod error;
pub mod fingerprint;
pub mod nn;
pub mod seed;
pub mod sim;
pub mod watermark;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use nn::{BnMlp, ParamVector, Tensor2};
pub use sim::{run_experiment, ExperimentReport, Simulation};
