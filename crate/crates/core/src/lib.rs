//! Analysis toolkit for trained depthwise convolution kernels.
//!
//! The pipeline: load kernels into a [`corpus::Corpus`], preprocess them onto
//! the zero-sum hyperplane ([`geometry`]), train a 1D-code
//! [`autoencoder`], label the decoded [`spectrum`] against the
//! difference-of-Gaussians reference bank ([`dogfamily`]), assign every filter
//! to a pattern class ([`classifier`]) and summarize the result
//! ([`analytics`]). [`initgen`] renders DoG-family initialization kernels.

pub mod analytics;
pub mod autoencoder;
pub mod classifier;
pub mod cli;
pub mod corpus;
pub mod dogfamily;
pub mod error;
pub mod geometry;
pub mod initgen;
pub mod spectrum;
pub mod synthetic;

pub use error::{Error, Result};
