//! Special functions, quadrature rules and optimizers.

mod optimize;
mod quadrature;
mod special;

pub use optimize::{bfgs, golden_section, nelder_mead, Minimum, OptimizerSettings};
pub use quadrature::{gauss_hermite, GaussHermite};
pub use special::{
    chisq_upper_tail, std_normal_cdf, std_normal_pdf, std_normal_quantile, std_normal_upper_tail,
};
