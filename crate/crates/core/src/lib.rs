//! Detection of off-topic product reviews with non-iterative autoencoders.
//!
//! Reviews are embedded ([`encoder`]), scored by reconstruction error
//! ([`detector`]), labelled against a threshold fitted on training errors
//! ([`thresholding`]) and explained ([`explain`]). [`eval`] runs the
//! cross-validation protocol and [`survey`] the human forward-simulation study.

pub mod config;
pub mod corpus;
pub mod detector;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod explain;
pub mod survey;
pub mod synthetic;
pub mod thresholding;

#[cfg(test)]
mod test_http;

pub use error::{Error, Result};
