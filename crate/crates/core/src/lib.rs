//! Federated Gaussian-process toolkit.
//!
//! One GP hyper-parameter vector is trained across simulated clients that
//! each keep their data private, using consensus ADMM, proximal ADMM, FedAvg
//! or FedProx, optionally behind masked secure aggregation. The trained
//! models drive two applications: GP state-space transition learning for 2-D
//! target tracking, and temporal traffic forecasting with generalized
//! product-of-experts fusion.

pub mod error;
pub mod fed;
pub mod fusion;
pub mod gp;
pub mod harness;
pub mod kernels;
mod linalg;
pub mod optim;
pub mod secure_agg;
pub mod tracking;

pub use error::{Error, Result};
