//! Differentiable building blocks: a small reverse-mode tape, GRU cells,
//! feed-forward stacks, Gaussian heads and a finite-difference checker.

mod gaussian;
mod gradcheck;
mod layers;
mod params;
mod tape;

pub use gaussian::{
    gaussian_kl, gaussian_sample, standard_normal, GaussianHead, GaussianParams, GaussianVars, SIGMA_FLOOR,
};
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, ParamReport};
pub use layers::{bigru_encode, gru_run, gru_step, GruParams, Linear, Mlp};
pub use params::{Gradients, ParamId, ParamStore, ParamTensor};
pub use tape::{log_softmax, log_sum_exp, sigmoid, softmax, Tape, Var};

/// `ln(1 + e^x)` without overflow, clamped away from zero.
pub fn softplus_scalar(x: f64) -> f64 {
    let y = if x > 30.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
    y.max(f64::MIN_POSITIVE)
}

pub fn softplus(xs: &[f64]) -> Vec<f64> {
    xs.iter().copied().map(softplus_scalar).collect()
}
