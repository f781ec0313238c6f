// `!(x > 0.0)` is used on purpose so NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classify;
pub mod density;
pub mod error;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod sdp;
pub mod stats;
pub mod synth;
pub mod validate;

pub use error::{Error, Result};
pub use model::{PhaseLabel, SessionRecord, Signal, SiteLabel, TreatmentLabel};
