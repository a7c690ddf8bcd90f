//! Mining "significant dimensions": latent embedding dimensions of a dated
//! text corpus whose temporal statistics lead a daily count series.
//!
//! The pipeline runs ingest → text preprocessing → word embeddings and
//! day-averaged vectors → stationarity transforms → CCF screening and Boruta
//! selection → lead-shifted random-forest regression → theme extraction.

pub mod boruta;
pub mod calendar;
pub mod embedding;
pub mod error;
pub mod explain;
pub mod forest;
pub mod ingest;
pub mod predict;
pub mod select;
pub mod series;
pub mod stats;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
