//! Numerical laboratory for uniform scalar quantization surrogates.
//!
//! The crate is organized bottom-up:
//!
//! * [`numerics`]: normal CDF, quadrature, seeded RNG streams, compensated sums.
//! * [`sources`]: the toy sources (1-d/2-d Gaussian, Laplace).
//! * [`surrogates`]: forward calculations that replace rounding during training
//!   (additive noise, soft rounding, stochastic rounding, universal quantization,
//!   and their annealed combinations).
//! * [`backward`]: gradient estimators for those forwards (pathwise, straight-through,
//!   exact expected gradients) and a bias/variance measurement harness.
//! * [`entropy_model`]: discretized Gaussian/Laplacian entropy models, expected-rate
//!   quadrature, rate-error surfaces, zero-centered quantization.
//! * [`infotheory`]: mutual information between a source and its quantized or
//!   surrogate-quantized value, in bits.
//! * [`tinynet`]: small dense networks, the training loops used by the simulation
//!   experiments, and post-training of synthesis/entropy parameters.

pub mod backward;
pub mod entropy_model;
pub mod infotheory;
pub mod numerics;
pub mod sources;
pub mod surrogates;
pub mod tinynet;
