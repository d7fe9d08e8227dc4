//! Dense linear algebra and special functions.

mod expm;
mod matrix;
mod special;

pub use expm::{is_subgenerator, mat_exp, uniformized_row_action};
pub use matrix::{DenseMatrix, ProbVector, PROB_MASS_TOL};
pub use special::{
    erlang_cdf, erlang_logpdf, erlang_lower_quantile, erlang_sf, erlang_upper_quantile,
    log_poisson_pmf, poisson_pmf_vec, poisson_truncation,
};
pub(crate) use special::log_poisson_pmf_unchecked;
