//! Analysis of finite-round versus infinite-round LOCC measurements.
//!
//! The crate is organised bottom-up:
//!
//! * [`ops`] holds dense complex-matrix primitives (spectral norm, PSD square
//!   roots, polar decomposition, pseudo-inverse, ray proportionality).
//! * [`measurement`] represents separable measurements as sets of product
//!   Kraus operators and estimates the distance between two measurements.
//! * [`tree`] validates LOCC protocol trees and unrolls repeating cycles.
//! * [`deficit`] computes the ray deficit and the finite-round classifier.
//! * [`constructions`] builds the explicit infinite-round families.
//! * [`simulate`] runs protocols exactly and produces convergence tables.
//! * [`io`] is the JSON wire format shared with the command-line tool.

pub mod constructions;
pub mod deficit;
mod error;
pub mod io;
pub mod measurement;
pub mod ops;
pub mod rng;
pub mod simulate;
pub mod tree;

pub use error::{Error, Result};

pub use constructions::{
    delta_one_chain, delta_one_two_round, general_family, general_family_from_chains,
    infinitize, qubit_family, GeneralFamily, GeneralFamilySpec, InfinitizeConfig,
    InfinitizeOutput, QubitFamily, QubitFamilyParams,
};
pub use deficit::{classify, delta, group_rays, Classification, DeficitReport, RayGroup};
pub use measurement::{
    apply, canonicalize, check_complete, distance_lower, distance_upper, DensityOperator,
    DistanceBudget, Measurement, Outcome, ProductKraus,
};
pub use ops::{
    polar_decompose, proportional, pseudo_inverse, psd_sqrt, spectral_norm, ComplexMatrix,
    PsdOperator, Ray, Tolerances, C64,
};
pub use simulate::{convergence, run, truncation_error, ConvergenceRow, RunRecord};
pub use tree::{
    leaf_measurement, local_steps, random_finite_tree, unroll, validate, CycleDescriptor,
    CycleStep, InfiniteProtocol, LoccNode, LoccTree, ValidationReport,
};
