//! Adaptive fast-slow operator splitting for chemical Langevin equations.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the CLI uses.

pub mod brownian;
pub mod controller;
pub mod errormodel;
pub mod integrators;
pub mod metrics;
pub mod network;
pub mod scalar;
pub mod vectorfields;

pub use brownian::{BrownianIncrements, PathStream, StreamDomain};
pub use errormodel::{ErrorCoefficients, ErrorModel, ErrorTerms, FixedCoefficients, MseEstimator, TruncationPairs};
pub use network::{parse_network, ChannelClass, NetworkError, ReactionNetwork, ReactionSpec, StateVector};
pub use scalar::Real;
pub use vectorfields::VectorFields;

pub type Network = ReactionNetwork<f64>;
pub type Network32 = ReactionNetwork<f32>;
pub type State = StateVector<f64>;
pub type Coefficients = ErrorCoefficients<f64>;
