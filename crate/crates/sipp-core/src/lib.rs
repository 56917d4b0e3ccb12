//! Sensitivity-informed pruning of feed-forward networks.
//!
//! This crate prunes the weights of dense and 2-D convolutional layers
//! using empirical sensitivity: for each weight, the largest relative
//! contribution it makes to any output patch over a small batch of inputs.
//! Three per-group strategies (deterministic top-m, sensitivity-proportional
//! importance sampling with reweighting, and an adaptive hybrid) come with
//! relative-error certificates, a global budget allocator distributes a
//! weight budget to minimize the summed certificates, and the bounds module
//! composes per-layer statistics into a network-level relative-error bound.
//!
//! All operations are pure functions of their inputs and safe to call
//! concurrently on shared networks.

pub mod allocate;
pub mod bounds;
pub mod error;
pub mod io;
pub mod net;
pub mod sensitivity;
pub mod sparsify;
pub mod tensor;

pub use error::{Error, Result};
pub use net::{
    extract_patches, forward, frobenius_norm, quadrant_split, Activation, ForwardTrace, LayerKind,
    LayerSpec, Network, ParameterGroup, Patches,
};
pub use sensitivity::{
    empirical_sensitivity, relative_importance, sample_set_size, RegularityConstants,
    SensitivityTable,
};
pub use sparsify::{
    derive_group_seed, expected_draws, sipp_det, sipp_hybrid, sipp_rand, sipp_rand_with_draws,
    CertificateParams, Method, PrunedGroup,
};
pub use allocate::{group_error, opt_alloc, sipp_simple, AllocOptions, AllocationPlan, Strategy};
pub use bounds::{
    layer_certificate, layer_condition, network_certificate, propagation_bound, sign_complexity,
    PruneCertificate,
};
pub use tensor::Tensor;
