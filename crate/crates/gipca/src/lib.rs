//! Generalized integrative principal component analysis (GIPCA).
//!
//! Decomposes the natural-parameter matrices of several data sources that
//! share the same samples into a mean, a joint low-rank structure common to
//! every source, and a per-source individual low-rank structure. Sources may
//! follow different single-parameter exponential-family distributions
//! (Gaussian with unit variance, Poisson, binomial with known trials), and
//! samples may be missing block-wise (a sample's whole row absent from a
//! source). The joint structure is what imputes the missing blocks.
//!
//! The crate provides the exponential-family kernels, a weighted-Newton GLM
//! solver that accepts heterogeneous links, the block coordinate descent
//! fitter with its likelihood-preserving identifiability regularization, an
//! adapted BIC with stepwise rank search, imputation (model-based and ad hoc
//! baselines), and seeded simulation scenarios for benchmarking.
//!
//! All numerics are generic over the scalar type; see [`Scalar`]. Concrete
//! `f64` aliases are exported at the crate root.

pub mod dataset;
pub mod exp_family;
pub mod fitter;
pub mod glm;
pub mod imputation;
pub mod params;
pub mod rank_selection;
pub mod scalar;
pub mod simulation;

pub use exp_family::DistributionKind;
pub use scalar::Scalar;
