//! Scalable asynchronous multiparty computation over quorums.
//!
//! The crate bundles a deterministic asynchronous network simulator with the
//! protocol stack that runs on it: verifiable secret sharing and agreement at
//! quorum scale, a heavyweight quorum-internal MPC, the load-balanced
//! threshold counter, and the circuit-evaluation pipeline that ties them
//! together. Everything is generic over the prime field; the aliases below
//! fix the moduli used in practice.

pub mod agreement;
pub mod circuit;
pub mod codec;
pub mod config;
pub mod field;
pub mod harness;
pub mod hwmpc;
pub mod proto;
pub mod quorum;
pub mod sharing;
pub mod tcounter;
pub mod simnet;

pub use field::{Field, FieldError, Fp, Polynomial};
pub use simnet::{Behavior, Metrics, PlayerId, Simulation, Strategy};

/// Default field: the Mersenne prime `2^31 − 1`.
pub type Fp31 = Fp<2_147_483_647>;
/// Small fields for exhaustive checks.
pub type F7 = Fp<7>;
pub type F11 = Fp<11>;
pub type F101 = Fp<101>;
/// `2^16 + 1`, used when a mid-sized field keeps statistical tests cheap.
pub type F65537 = Fp<65_537>;
