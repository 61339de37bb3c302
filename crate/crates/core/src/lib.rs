//! Mean-field analysis of wide random fully-connected networks.
//!
//! The crate evaluates the infinite-width kernel recursions for an arbitrary
//! activation (variance map `F`, correlation map `f` and their derivatives),
//! solves for the edge-of-chaos initialisation frontier, provides the closed
//! forms available for piecewise-linear activations, verifies sufficient
//! conditions for `f` to approach the identity, and simulates finite-width
//! networks to validate all of the above.
//!
//! Every Gaussian expectation goes through [`quadrature`], so accuracy is
//! controlled in one place by [`QuadratureConfig`].

pub mod activation;
pub mod closedform;
pub mod conditions;
pub mod eoc;
mod error;
pub mod meanfield;
pub mod nonfinite;
pub mod quadrature;
pub mod simulator;

pub use activation::{Activation, ActivationKind, ReluLikeParams};
pub use eoc::{EocCurve, EocPoint, EocSolver, EocStatus};
pub use error::{Error, Result};
pub use meanfield::{
    DepthScales, FixedPoint, FixedPointStatus, KernelState, KernelTrace, MeanField,
    MeanFieldParams, PropagationMode,
};
pub use quadrature::{McConfig, QuadratureConfig};
