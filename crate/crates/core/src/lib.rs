//! Synthesis and evaluation of residual generators that detect faults in
//! nonlinear differential-algebraic plants.
//!
//! The filter `r = a(p)^{-1} N(p) L(p) z` is parametrised by the stacked
//! numerator coefficients `nbar`. Linear programs, closed-form quadratic
//! programs and second-order cone programs pick `nbar` so that the plant
//! unknowns are decoupled, the fault stays visible, and the residual left by
//! the nonlinear terms is small on sampled scenarios.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dae;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod lti;
pub mod model;
pub mod poly;
pub mod power;
pub mod runtime;
pub mod signal;
pub mod signature;
pub mod synth;

pub use dae::{NonlinearDaeModel, OdeSystem};
pub use error::{Error, ErrorClass, Result};
pub use harness::{FilterSpec, ScenarioSet, TrainedFilter};
pub use model::{load_model, LoadedModel, ModelFile};
pub use poly::PolyMatrix;
pub use power::{Plant, PowerSystemConfig};
pub use signal::SampledSignal;
pub use synth::{FilterCoefficients, Payoff, Perspective, SynthesisResult};
