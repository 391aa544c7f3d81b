//! Border disparity analytics for polygon geounits.
//!
//! Given census-style block groups with five-group population counts, this
//! crate measures how sharply ethnic diversity changes across core-city
//! borders:
//!
//! * [`ingest`] loads GeoJSON geounits, joins attribute tables, and labels
//!   each unit core / suburb / outside (suburbs are the places touching the
//!   core city).
//! * [`contiguity`] builds row-normalized queen contiguity matrices, masks
//!   cross-border pairs, and measures shared border lengths.
//! * [`indices`] computes the Herfindahl diversity index, the neighborhood
//!   lags NDI^U and NDI^A, their difference (the border disparity index,
//!   BDI), and local Moran's I for validation.
//! * [`aggregation`] summarizes BDI distributions per metro and per place,
//!   flags extreme values, correlates candidate place metrics, and ranks
//!   suburbs.
//! * [`regression`] fits place-level OLS models with MSA-clustered standard
//!   errors.
//! * [`pipeline`] wires the stages into a config-driven run emitting CSV,
//!   GeoJSON, and JSON outputs.
//!
//! Data-parallel loops run on rayon under the `parallel` feature (enabled
//! by default); disabling it yields a dependency-light sequential build
//! with identical results.

pub mod acs;
pub mod aggregation;
pub mod contiguity;
pub mod error;
pub mod geometry;
pub mod indices;
pub mod ingest;
pub mod par;
pub mod pipeline;
pub mod regression;
pub mod synth;

pub use error::{Error, Result};
