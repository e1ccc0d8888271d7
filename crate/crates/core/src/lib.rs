//! Beam prediction under adversarial attack and differential privacy.
//!
//! The crate covers the whole pipeline: synthetic multipath channels and
//! omni-received pilot features ([`channel`]), DFT codebooks and achievable
//! rates ([`beamcode`]), labelled datasets ([`dataset`]), a fully-connected
//! predictor with exact gradients ([`nn`]), white-box input attacks
//! ([`attacks`]), adversarial training ([`defense`]), DP-SGD with a Rényi
//! accountant ([`privacy`]) and the experiment harness ([`harness`]).

pub mod attacks;
pub mod beamcode;
pub mod channel;
pub mod container;
pub mod dataset;
pub mod defense;
pub mod error;
pub mod harness;
pub mod nn;
pub mod privacy;
pub mod rng;

pub use error::{Error, Result};
