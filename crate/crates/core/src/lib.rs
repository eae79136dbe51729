//! Zero-knowledge-proof authentication for wireless body area networks.
//!
//! [`zkp_math`] holds the group arithmetic and symmetric primitives,
//! [`handshake`] the BANZKP and BAN-GZKP state machines, [`adversary`] a
//! scripted attacker against them, [`wban_sim`] a posture-driven
//! convergecast simulator that carries the handshakes, and [`experiment`]
//! the repeated-run matrix with confidence intervals.
//!
//! Numeric code is generic over the float type; the aliases below fix it
//! to `f64` for everyday use.

pub mod adversary;
pub mod experiment;
pub mod handshake;
pub mod stats;
pub mod wban_sim;
pub mod zkp_math;

/// Handshake endpoint over the exact modular group.
pub type ExactEndpoint = handshake::Endpoint<zkp_math::ModularGroup>;
/// Handshake endpoint over the fast modeled group.
pub type ModeledEndpoint = handshake::Endpoint<zkp_math::ModeledGroup>;
/// Metric summary over repetitions in double precision.
pub type Summary = stats::Summary<f64>;
/// Radio parameters in double precision.
pub type Radio = wban_sim::RadioParams<f64>;
