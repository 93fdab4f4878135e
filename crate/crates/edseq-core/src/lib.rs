//! Event-detection toolkit: a tracing-attention sequence generator for
//! event-type sequences with attention-based trigger localization, plus the
//! surrounding corpus machinery, evaluation protocol, multi-domain training
//! strategies, and corpus-heterogeneity analytics.

pub mod checkpoint;
pub mod corpus;
pub mod decoder;
pub mod domain;
pub mod encoder;
pub mod error;
pub mod infer;
pub mod metrics;
pub mod model;
pub mod gradcheck;
pub mod params;
pub mod rng;
pub mod train;
pub mod schema;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod vocab;

pub use error::{Error, Result};
