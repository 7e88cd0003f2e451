//! Load-sharing optimization for a station of three parallel centrifugal
//! compressors.
//!
//! The crate provides the building blocks of a closed-loop study of online
//! feedback optimization (OFO) under plant-model mismatch:
//!
//! - [`compressor`]: static compressor physics — efficiency maps (polynomial
//!   and sinusoidal), linear resistance curve, head and power.
//! - [`gp`]: Gaussian-process regression of the efficiency error with online
//!   dataset management and marginal-likelihood hyperparameter fitting.
//! - [`qp`]: exact active-set solver for the small dense projection QP used
//!   by the controller.
//! - [`ofo`]: the online feedback optimization law — sensitivity estimation,
//!   QP assembly, and the integral update.
//! - [`nlp`]: the perfect-knowledge load-sharing benchmark (grid search with
//!   local refinement).
//! - [`sim`]: the discrete-time closed-loop simulation, scenario definitions,
//!   metrics, and the mismatch sweep.

pub mod compressor;
pub mod gp;
pub mod nlp;
pub mod ofo;
pub mod qp;
pub mod rng;
pub mod sim;
