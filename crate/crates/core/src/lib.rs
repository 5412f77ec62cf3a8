//! Certified robustness for dense networks via polyhedral envelopes of the
//! decision boundary, and training with the envelope hinge regularizer.

pub mod attack;
pub mod autodiff;
pub mod bounds;
pub mod envelope;
pub mod error;
pub mod linalg;
pub mod linearize;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod synthetic;
pub mod train;

pub use bounds::{AffineBound, IntervalBound, Propagator};
pub use envelope::{Certificate, Phase};
pub use error::{Error, Result};
pub use model::{Activation, AdversarialBudget, Dataset, InputBox, NeuralNetwork, Network, Norm};
