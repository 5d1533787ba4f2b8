//! Active domain adaptation with stochastic adversarial gradient embeddings (SAGE).
//!
//! A labeled source domain and an unlabeled target domain are aligned by a
//! class-level adversarial game; a small budget of target samples is sent to an
//! oracle, chosen by how much their annotation would redirect the adversarial
//! gradient. Everything runs on small dense networks with explicit gradients.
//!
//! Numeric code is generic over [`Scalar`] (`f32`/`f64`); experiments use the
//! `f64` aliases below.

pub mod active;
pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod model;
pub mod nn;
pub mod report;
pub mod runner;
pub mod sage;
pub mod scalar;
pub mod theory;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar type used by experiments.
pub type Real = f64;
pub type Net = nn::DenseNet<Real>;
pub type Tape = nn::GradientTape<Real>;
pub type Model = model::ModelBundle<Real>;
pub type Embedding = sage::SageVector<Real>;
pub type AdvGradient = sage::StochasticAdvGradient<Real>;
