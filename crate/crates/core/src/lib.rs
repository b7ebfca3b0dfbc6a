//! Geostatistical models for survey clusters whose published coordinates have
//! been randomly displaced.
//!
//! The pipeline runs: [`geo`] ingests clusters and administrative regions in
//! planar km, [`jitter`] describes (and samples) the displacement law,
//! [`quadrature`] turns it into per-cluster integration schemes, [`field`]
//! represents the latent Gaussian field, [`model`] fits the standard or
//! location-integrated model by Laplace approximation, and [`eval`] scores
//! predictions.

pub mod error;
pub mod eval;
pub mod field;
pub mod geo;
pub mod jitter;
pub mod model;
pub mod quadrature;
pub mod special;

pub use error::{Error, Result};
