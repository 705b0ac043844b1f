//! MMSE denoisers under Gaussian noise viewed as proximal operators.
//!
//! The crate evaluates the posterior-mean denoiser of Gaussian/Laplace mixture
//! priors through Tweedie's formula, recovers its implicit regularizer both from
//! the inverse denoiser and as an upper Moreau envelope of `−ln p_Z`, and runs
//! plug-and-play proximal gradient descent with per-iteration stationarity and
//! descent diagnostics.

pub mod certificates;
pub mod cli;
pub mod deblur;
pub mod denoiser;
pub mod error;
pub mod fixtures;
pub mod format;
pub mod marginal;
pub mod moreau;
pub mod operators;
pub mod pnp;
pub mod prior;
pub mod quadrature;
pub mod regularizer;
pub mod special;

pub use error::{Error, Result};
