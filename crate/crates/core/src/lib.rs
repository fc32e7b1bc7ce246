//! Online multimodal embedding of geotagged and non-geotagged short messages.
//!
//! Regions, hours, keywords and users share one vector space. Training
//! recovers each unit of a record from the others; a buffer keeps records
//! that are still informative; records without a location borrow one from
//! similar users.

pub mod analysis;
pub mod buffer;
pub mod discretize;
pub mod embed;
pub mod engine;
pub mod error;
pub mod eval;
pub mod geo;
pub mod ingest;
pub mod stats;
pub mod synth;
pub mod tfidf;
pub mod train;
pub mod unit;
pub mod vecmath;

pub use error::{Error, Result};
