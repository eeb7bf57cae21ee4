//! Numerics laboratory for a discrete time-dependent random conductance model
//! with stable-like jumps: scaled nonlocal generators, regional corrector
//! equations, and the measurement harness for homogenization rates.

pub mod config;
pub mod correctors;
pub mod diagnostics;
pub mod environment;
pub mod error;
pub mod experiment;
pub mod lattice;
pub mod operators;
pub mod report;
pub mod solver;
pub mod testfn;

pub use error::HomogError;

pub type Result<T> = std::result::Result<T, HomogError>;
