//! Inference of streambed exchange flux from subsurface temperature records.
//!
//! The crate covers the whole pipeline: a 1D coupled flow/heat column model
//! that produces synthetic flux and temperature series ([`hydro`]), noise
//! injection and split bookkeeping ([`data`]), window-function denoising
//! ([`smoothing`]), lagged feature construction ([`features`]), boosted
//! trees ([`gbt`]) and small neural networks ([`nn`]), accumulated local
//! effects ([`interpret`]), evaluation statistics ([`metrics`]) and the
//! config-driven experiment runner ([`harness`]).

// Negated float comparisons are deliberate: they reject NaN along with
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod features;
pub mod gbt;
pub mod harness;
pub mod hydro;
pub mod interpret;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod regressor;
pub mod smoothing;

pub use data::{FluxSeries, SplitIndices, SplitPlan, TemperatureField};
pub use error::{Error, Result};
pub use features::{FeatureKey, FeatureKind, FeatureMatrix};
pub use gbt::{GbtModel, GbtParams};
pub use hydro::{ColumnConfig, ColumnState, ForcingSeries, ForcingSpec, SimOutput};
pub use interpret::{AleCurve, ImportanceTable};
pub use matrix::Matrix;
pub use metrics::{EvalReport, SeedSummary};
pub use regressor::{Condition, Family, FittedModel, ModelSpec, Regressor, TrainData};
pub use smoothing::{WindowFilter, WindowKind};
