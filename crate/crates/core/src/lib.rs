//! Operation-dispatched probabilistic inference.
//!
//! Model components ("SFuncs") are defined implicitly by the operations
//! registered for them — sampling, density evaluation, support computation,
//! π/λ message computations, factor construction — and generic algorithms run
//! over heterogeneous networks by dispatching those operations through a
//! policy-controlled registry. Multiple implementations may coexist per
//! operation and kind (closed form next to enumeration, eager next to lazy),
//! and policies pick among them per call.
//!
//! The algorithm layers:
//! - [`ve`]: variable elimination over pluggable semirings (probability,
//!   max-product decoding, logic, mixed logical–probabilistic).
//! - [`bp`]: Pearl-style π/λ belief propagation honoring per-variable
//!   capability layers; exact on polytrees, damped iteration on loopy graphs.
//! - [`sampling`]: rejection, likelihood weighting, and λ-guided lookahead
//!   importance sampling.
//! - [`lazy`]: iterative range refinement around a base algorithm.
//! - [`em`]: expectation-maximization for discrete table parameters.

pub mod bp;
pub mod em;
pub mod error;
pub mod factor;
pub mod kernel;
pub mod lazy;
pub mod network;
pub mod ops;
pub mod sampling;
pub mod semiring;
pub mod sfunc;
pub mod value;
pub mod ve;

pub use error::{Error, Result};
pub use kernel::{Policy, Registry};
pub use network::{Evidence, Network, VarId};
pub use sfunc::SFunc;
pub use value::Value;
