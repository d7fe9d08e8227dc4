//! Time-homogeneous uniformized approximations of time-inhomogeneous Markov
//! jump processes.
//!
//! A jump process with intensity `L(t)` is embedded into a Poisson grid of
//! rate `n`; the chain observed on that grid moves by `Q_l = I + L(chi_l)/n`.
//! Replacing the random epochs by nonrandom surrogates gives homogeneous
//! block generators whose absorption times are Erlang mixtures.

pub mod error;
pub mod grid;
pub mod iph;
pub mod model;
pub mod mph;
pub mod numkit;
pub mod qseq;
pub mod ruin;
pub mod transition;

pub use error::{Error, Result};
pub use numkit::{DenseMatrix, ProbVector};
