//! Testbed for replay-buffer eviction policies under local reward changes.
//!
//! The crate bundles everything needed to study how a model-based agent
//! adapts when a reward changes in one corner of the state-space while
//! training data only comes from that corner:
//!
//! * [`env`] — native MountainCar and MiniGrid variants with two terminal
//!   targets, phase-dependent rewards and a one-way zone around T1.
//! * [`nn`] — a small dense-network substrate (forward/backward, Adam,
//!   finite-difference gradient checking, parameter snapshots).
//! * [`replay`] — FIFO, reservoir and local-forgetting (LoFo) buffers
//!   behind one interface.
//! * [`locality`] — the contrastively trained state embedding that induces
//!   the distance used by the LoFo buffer, plus a handcrafted alternative.
//! * [`dyna`] — deep Dyna-Q: learned dynamics/reward/termination models and
//!   a Q-function trained purely on model predictions.
//! * [`seqbuf`] — the sequence-oriented variant: a locality-curated
//!   state-buffer paired with a trajectory-buffer with reward masking.
//! * [`loca`] — the two-phase experiment harness, evaluation, DP oracles
//!   and CSV artifact export.
//! * [`config`] — experiment configuration schema and presets.

pub mod config;
pub mod dyna;
pub mod env;
pub mod error;
pub mod loca;
pub mod locality;
pub mod nn;
pub mod replay;
pub mod seqbuf;

pub use error::{CoreError, Result};
