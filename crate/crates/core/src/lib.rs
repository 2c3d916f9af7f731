//! biaslens: measure, synthesize, and stress-test spurious correlation in
//! labeled datasets.
//!
//! The crate has three pillars:
//!
//! - **Measurement** ([`dist`], [`metrics`]): exact categorical-distribution
//!   arithmetic and the bias measures built on it — per-feature bias
//!   magnitude (a KL divergence), dataset-level bias prevalence, the
//!   normalized ratio phi, and three prior conditional-probability/entropy
//!   measures.
//! - **Synthesis & theory** ([`synth`], [`theory`]): construction of joint
//!   distributions with controlled bias magnitude and prevalence, preset
//!   configurations, dataset sampling with BA/BC/BN tags, and dense-grid
//!   numeric verification of the two analytic propositions about the binary
//!   matched-marginal world.
//! - **Simulation** ([`sim`]): a desk-scale debiasing testbed — a biased
//!   auxiliary model and a debiased model trained jointly with loss-ratio
//!   sample reweighting, optionally destroying target features for the
//!   biased model's inputs, with per-group weight tracking and
//!   worst-group/balanced evaluation.
//!
//! [`io`] and [`cli`] wrap everything into file formats and a single binary.

pub mod cli;
pub mod dist;
pub mod error;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod sim;
pub mod synth;
pub mod theory;

pub use error::{Error, Result};
