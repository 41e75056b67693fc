//! Learning stable motion policies from demonstrations and composing them
//! into new ones through a graph over their Gaussian components.
//!
//! The pipeline, bottom up:
//!
//! - [`datasets`]: demonstrations (position/velocity samples with an
//!   attractor), velocity reconstruction, and built-in synthetic scenarios.
//! - [`gmm`]: Gaussian mixture fitting, densities, posteriors and the
//!   Bhattacharyya coefficient.
//! - [`lpvds`]: globally asymptotically stable linear parameter-varying
//!   policies `f(x) = Σ γ_k(x) A_k (x - x*)` fitted under a quadratic
//!   Lyapunov constraint.
//! - [`graph`]: the Gaussian graph, its bi-directional expansion and
//!   reduction, endpoint attachment and shortest-path queries.
//! - [`stitching`]: one time-invariant policy from a vertex selection.
//! - [`chaining`]: a hybrid automaton sequencing local policies through
//!   trigger and timer transitions.
//! - [`simulation`]: Euler rollouts and evaluation metrics.
//! - [`benchmark`]: pooled-endpoint instances and method synthesis.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, timing and
//! the command line live in the `dsstitch` crate.

#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod benchmark;
pub mod chaining;
pub mod datasets;
mod error;
pub mod gmm;
pub mod graph;
pub mod lpvds;
pub mod math;
pub mod optim;
pub mod simulation;
pub mod spatial;
pub mod stitching;

pub use error::{Error, Result};

pub use chaining::{ChainExecState, DsChain, Mode, SegmentKey, SegmentTable};
pub use datasets::{Demonstration, DemonstrationSet, ReferencePoint, Trajectory};
pub use gmm::{GaussianComponent, MixtureFit};
pub use graph::{EndpointAttachment, GaussianGraph, GraphParams, GraphVertex};
pub use lpvds::{FitReport, StablePolicy};
pub use stitching::{Reuse, StitchMethod, StitchRequest};
