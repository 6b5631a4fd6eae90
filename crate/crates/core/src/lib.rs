//! Rate-equation model of collective (Dicke) fluorescence from ensembles of
//! nitrogen-vacancy centres.
//!
//! The crate is organised bottom-up:
//!
//! * [`ladder`] builds the Dicke-ladder state space and its time-independent
//!   generator (collective decay, local dephasing with projection, and
//!   intersystem crossing).
//! * [`propagator`] evolves ladder states, evaluates the fluorescence rate and
//!   convolves traces with the detector response.
//! * [`ensemble`] mixes spin projections and domain sizes into a total trace.
//! * [`coherence`] evaluates zero-delay, delayed and time-integrated `g²`.
//! * [`physics`] holds closed-form auxiliary relations.
//! * [`fitting`] solves the inverse problem on measured decay histograms.
//!
//! Rates are angular frequencies in rad/s and times are in seconds throughout;
//! [`units`] converts to and from the MHz / ns / nm used at file boundaries.

pub mod coherence;
pub mod ensemble;
pub mod error;
pub mod fitting;
pub mod ladder;
pub mod physics;
pub mod propagator;
pub mod units;

mod optimize;

pub use error::{Error, Result};
