//! Path-integral (continuous imaginary-time) toolkit for the transverse-field
//! Ising model.
//!
//! A quantum spin at inverse temperature `beta` is represented by a `±1`
//! trajectory on `[0, beta]` whose flips form a Poisson process of intensity
//! `lambda`, tilted by `exp(h • sigma)`. The crate provides:
//!
//! * exact single-site trajectory algebra, transfer kernels and samplers,
//! * a dense exact-diagonalization oracle for small graphs,
//! * heat-bath Glauber dynamics (continuum and Suzuki–Trotter grid modes) with
//!   censoring schedules and monotone couplings,
//! * an exact grid-scale solver for the tree cavity equation and the derived
//!   decay exponents,
//! * estimators and property batteries used by the tests and the CLI.

pub mod cavity;
pub mod ed;
pub mod error;
pub mod estimators;
pub mod glauber;
pub mod graph;
pub mod order;
pub mod report;
pub mod rng;
pub mod site_sampler;
pub mod trajectory;
pub mod transfer;

pub use error::{Error, Result};
pub use graph::{BoundaryKind, BoundarySpec, SiteGraph, SpinConfigMap, Tree};
pub use rng::StreamFactory;
pub use trajectory::{ModelParams, PiecewiseField, Sign, Trajectory};
pub use transfer::{EndpointCondition, IntervalKernel};
