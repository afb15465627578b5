//! Online nonlinear Neyman-Pearson classification.
//!
//! The classifier is a single-hidden-layer network whose hidden layer starts
//! as random Fourier features of the rbf kernel ([`rff`]). It is trained one
//! sample at a time by SGD on a Lagrangian objective that trades miss rate
//! against a false-positive constraint `tau` ([`npnn`]), with the multiplier
//! driven by a sliding-window false-positive estimate ([`learner`]). A linear
//! baseline sharing the same loop lives in [`olnp`]. [`eval`] provides the
//! metrics and the permutation protocol, [`data`] loaders and synthetic
//! generators, and [`io`] configuration files and model snapshots.

pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod learner;
pub mod npnn;
pub mod olnp;
pub mod rff;
pub mod sample;
pub mod seed;

pub use error::{Error, Result};
pub use learner::{Hyperparams, ModelKind};
pub use sample::{Label, LabeledSample};
