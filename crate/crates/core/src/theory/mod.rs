//! Computable theory: Gaussian Wasserstein distances, sliced W1 between
//! empirical feature sets, and the implicit-regularization closed form of
//! statistic resampling together with a Monte-Carlo estimate of the same
//! expectation.

mod implicit_reg;
pub mod linalg;
pub mod verify;
mod wasserstein;

pub use implicit_reg::{
    channel_normalize, implicit_reg_closed_form, implicit_reg_monte_carlo, ImplicitReg, McEstimate,
    RegressionInstance,
};
pub use wasserstein::{
    empirical_domain_distance, gaussian_w2_diag, gaussian_w2_full, wasserstein_1d, DiagGaussian,
    FULL_COVARIANCE_MAX_DIM,
};
