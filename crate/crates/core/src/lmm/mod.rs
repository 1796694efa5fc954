//! Gaussian linear mixed models with crossed random intercepts, fitted by
//! maximum likelihood through the profiled deviance of a penalized
//! least-squares problem.

mod design;
mod fit;
mod nelder_mead;
mod pls;

pub use design::{build_design, DesignMatrices, Grouping, ModelSpec};
pub use fit::{
    fit_lmm, remove_fixed_effects, t_values, Coefficient, FitResult, OptimizerConfig, RandomFactor,
    TValue,
};
pub use nelder_mead::{nelder_mead, NelderMeadResult};
pub use pls::{profiled_deviance, PlsSolution, PlsSystem};
