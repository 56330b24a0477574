//! Transfer operators, pseudo-orbit reachability and stationary measures for
//! randomly perturbed piecewise-affine expanding maps.
//!
//! The pieces fit together as follows. A [`PiecewiseMap`] with a
//! [`NoiseKernel`] defines a Markov chain `x ↦ T(x) - ω`. Its Ulam
//! discretization ([`ulam`]) gives a sparse stochastic matrix whose closed
//! classes and stationary vectors ([`spectral`]) approximate the ergodic
//! stationary measures. The ε-pseudo-orbit cell graph ([`pseudo_orbit`])
//! predicts those supports combinatorially, and [`simulate`] checks both
//! against long sample paths.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod graph;
pub mod map_model;
pub mod noise;
pub mod partition;
pub mod pseudo_orbit;
pub mod simulate;
pub mod sparse;
pub mod spectral;
pub mod ulam;

pub use error::{Error, Result};
pub use map_model::{AffineBranch, Interval, PiecewiseMap, SkewFamily};
pub use noise::{BoundaryMode, KernelShape, NoiseKernel};
pub use partition::{Partition, Partition2d};
pub use sparse::CsrMatrix;
pub use ulam::{build_perturbed, build_ulam, build_ulam_2d, operator_distance, TransferMatrix};
