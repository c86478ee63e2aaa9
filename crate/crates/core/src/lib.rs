//! Conditional Wasserstein GAN with gradient penalty, for distributional
//! forecasting and confidence intervals.
//!
//! The library is organised bottom-up: [`autodiff`] provides a
//! reverse-mode tape with double backpropagation, [`network`] builds ReLU
//! MLPs on it, [`optim`] and [`gan`] train them, and [`transport`],
//! [`confidence`] and [`evaluation`] assess the resulting generators.
//! [`experiment`] wires everything into reproducible runs for the `cwgan`
//! command-line tool.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod autodiff;
pub mod confidence;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod experiment;
pub mod gan;
pub mod network;
pub mod optim;
pub mod rng;
pub mod transport;

pub use error::{Error, Result};
pub use exec::Execution;
