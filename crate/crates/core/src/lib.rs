//! Multilevel Monte Carlo estimation of functionals of steady Darcy flow
//! through randomly layered porous media.
//!
//! The pressure equation `-div(k grad p) = f` on the unit cube is discretised
//! with cell-centred finite volumes on a hierarchy of uniform grids. The
//! permeability `k` is log-normal: piecewise constant or piecewise spatially
//! correlated on three random layers, or a single stationary field sampled by
//! circulant embedding. Level differences are coupled either by sharing the
//! random input (standard MLMC) or, for stationary fields, by averaging the
//! coarse functional over all parity subsamples of the fine field (coarse
//! grid variates).
//!
//! Module map:
//!
//! - [`grid`]: nested cell-centred grids and parity subgrids
//! - [`fields`]: layer geometry, Gaussian/log-normal samplers, level coupling
//! - [`assembly`]: the finite volume stencil system
//! - [`solver`]: multigrid-preconditioned conjugate gradients
//! - [`qoi`]: local-average and outflow functionals
//! - [`estimators`]: MC, MLMC and CGV-MLMC drivers with rate fits
//! - [`experiment`]: configuration-driven studies behind the CLI

// NaN must fail the positivity checks, so `!(x > 0.0)` is intentional.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assembly;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod fields;
pub mod grid;
pub mod problem;
pub mod qoi;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
