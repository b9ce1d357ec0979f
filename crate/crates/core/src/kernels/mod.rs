//! Kernel families, composite kernel trees and their Gram matrices.
//!
//! Every continuous hyper-parameter is stored as the natural logarithm of a
//! positive quantity, and every gradient returned here is with respect to
//! that log value.
//!
//! Leaf families and their log-domain parameter layouts (input dimension `d`):
//!
//! | family       | count | layout                                             |
//! |--------------|-------|----------------------------------------------------|
//! | `ard_se`     | d + 1 | `[log σ², log ℓ_1, …, log ℓ_d]`                      |
//! | `periodic`   | 3     | `[log σ², log ℓ, log p]`                             |
//! | `neural_net` | d + 1 | `[log Σ_11, …, log Σ_(d+1)(d+1)]`                    |
//! | `arc_cosine` | 0     | order `q` and `layers` are structural              |
//!
//! A composite tree consumes parameters leaf by leaf in depth-first order.

mod families;
mod matrix;
mod spec;
mod uncertain;

pub use families::{eval_ard_se, eval_arc_cosine, eval_neural_net, eval_periodic, arc_cosine_angular};
pub(crate) use matrix::gram_with_grad;
pub use matrix::{eval_composite, eval_composite_with_grad, gram_matrix, kernel_matrix, kernel_matrix_grad};
pub use spec::{HyperParamVector, KernelFamily, KernelSpec};
pub use uncertain::{expected_kernel_mc, GaussianInput, MonteCarloEstimate};

/// Relative jitter (times the mean diagonal) added to every Gram matrix
/// before it is factorized.
pub const BASE_JITTER: f64 = 1e-10;
