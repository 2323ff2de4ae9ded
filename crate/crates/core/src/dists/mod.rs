//! Distribution engine: chi-square, the truncated Gaussian `L_{K,a}` and the
//! Gaussian / truncated-Gaussian mixture.

mod chi2;
mod mixture;
mod normal;
pub mod quadrature;
mod truncated;

pub use chi2::{chi2_cdf, chi2_pdf, chi2_quantile};
pub use mixture::{mixture_quantile, MixtureDist};
pub use normal::{norm_cdf, norm_pdf, norm_quantile};
pub use truncated::{trunc_cdf, trunc_sample, v_constant, TruncatedGaussian};
