//! Certification of input-output stability for feedback loops between LTI
//! plants and gradient-bounded controllers.
//!
//! The crate is organised around the pipeline
//!
//! 1. [`system_model`] — plants, nonlinear residual blocks, augmentation;
//! 2. [`gradient_bounds`] — the controller uncertainty set and its quadratic
//!    constraint;
//! 3. [`iqc_blocks`] — integral quadratic constraints for the plant
//!    nonlinearities;
//! 4. [`certifier`] — LMI assembly, the feasibility engine, γ bisection,
//!    margin sweeps and the frequency-domain cross-check;
//! 5. [`simulator`], [`policy`], [`learner`] — closed-loop rollouts, neural
//!    controllers and the gradient-regulated policy-gradient learner.

pub mod bundle;
pub mod certifier;
pub mod config;
pub mod error;
pub mod gradient_bounds;
pub mod iqc_blocks;
pub mod learner;
pub mod linalg;
pub mod policy;
pub mod sdp;
pub mod simulator;
pub mod system_model;

pub use error::{Error, Result};
