//! Trellis-based (BCJR) soft symbol detection over intersymbol-interference
//! channels with bursty Markov-Middleton impulsive noise.
//!
//! The crate is organised bottom-up:
//!
//! - [`channel`]: tap profiles, noise levels, joint-state trellis construction
//!   and frame simulation.
//! - [`trellis`] / [`bcjr`]: the trellis model and scaled forward-backward
//!   inference producing state posteriors, symbol posteriors and LLRs.
//! - [`hmm`]: Baum-Welch learning of a trellis from unlabeled samples.
//! - [`nn`]: supervised classifier likelihoods with a Gaussian-mixture
//!   marginal, and the hybrid detector.
//! - [`fec`]: the (171,133) convolutional code, soft Viterbi decoding and
//!   interleaving.
//! - [`sim`]: configuration-driven Monte Carlo sweeps, CSV output and model
//!   reports.

pub mod bcjr;
pub mod channel;
pub mod error;
pub mod fec;
pub mod hmm;
pub mod nn;
pub mod rng;
pub mod sim;
pub mod trellis;

pub use error::{Error, Result};
