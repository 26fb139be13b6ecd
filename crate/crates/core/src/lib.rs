//! Federated-learning simulator benchmarking radial-basis-function
//! Kolmogorov-Arnold networks (FastKAN) against MLPs across six federated
//! optimization algorithms under Dirichlet non-IID data partitions.
//!
//! The crate is organized bottom-up:
//!
//! - [`numkit`] - flat parameter vectors, loss, finite-difference oracle
//! - [`models`] - FastKAN and MLP construction, forward, analytic backward
//! - [`fedopt`] - the six federated algorithms as local/server update rules
//! - [`datakit`] - synthetic datasets, Dirichlet partitioning, FKB files
//! - [`engine`] - round orchestration, evaluation, multi-seed reports
//! - [`seeding`] - keyed deterministic RNG streams

pub mod datakit;
pub mod engine;
pub mod error;
pub mod fedopt;
pub mod models;
pub mod numkit;
pub mod seeding;

pub use error::{Error, Result};
