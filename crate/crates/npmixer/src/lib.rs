//! NPMixer: a multivariate time-series forecaster combining a learnable
//! stationary wavelet decomposition, channel-mixing attention over detail
//! sub-bands, hierarchical neighboring-patch mixing, and reversible instance
//! normalization — built on a minimal reverse-mode autodiff engine, with a
//! deterministic training and evaluation harness.

pub mod check;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod filters;
pub mod mixer;
pub mod model;
pub mod nn;
pub mod revin;
pub mod svg;
pub mod tensor;
pub mod train;
pub mod wavelet;
