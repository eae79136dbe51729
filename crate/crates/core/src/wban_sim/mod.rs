//! Discrete-event simulator of a seven-node on-body network: a
//! posture-driven channel, a simplified CSMA MAC, five convergecast
//! strategies, and both authentication schemes plugged into them.
//!
//! Time is in nanoseconds throughout. Runs are deterministic in their
//! configuration and seed.

use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::handshake::{HandshakeError, NodeId, Scheme, SimTime, DEFAULT_TIMEOUT};
use crate::zkp_math::{GroupParams, ModeledGroup, ModularGroup};

pub mod channel;
mod engine;
pub mod strategy;
pub mod trace;

pub use channel::{delivery_probability, received_power, step_channel, RadioParams};
pub use strategy::{best_path_tree, default_apap_parents, ParentTable, Strategy, StrategyConfig};
pub use trace::{LinkStats, LinkTrace, Posture, NODE_COUNT, NODE_NAMES, SINK, SOURCES};

pub const NS_PER_S: u64 = 1_000_000_000;
pub const NS_PER_MS: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("no trace for posture {posture} at {}", path.display())]
    MissingTrace { posture: Posture, path: PathBuf },
    #[error("{posture} trace has no entry for frame {frame} link {src}->{dst}")]
    MissingTraceEntry { posture: Posture, frame: usize, src: NodeId, dst: NodeId },
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Handshake(#[from] HandshakeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Authentication applied on top of a strategy; `None` is the plain
/// convergecast baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AuthMode {
    None,
    Banzkp,
    BanGzkp,
}

impl AuthMode {
    pub const ALL: [AuthMode; 3] = [AuthMode::None, AuthMode::Banzkp, AuthMode::BanGzkp];

    pub fn name(self) -> &'static str {
        match self {
            AuthMode::None => "none",
            AuthMode::Banzkp => Scheme::Banzkp.name(),
            AuthMode::BanGzkp => Scheme::BanGzkp.name(),
        }
    }

    pub fn scheme(self) -> Option<Scheme> {
        match self {
            AuthMode::None => None,
            AuthMode::Banzkp => Some(Scheme::Banzkp),
            AuthMode::BanGzkp => Some(Scheme::BanGzkp),
        }
    }
}

impl From<Scheme> for AuthMode {
    fn from(s: Scheme) -> Self {
        match s {
            Scheme::Banzkp => AuthMode::Banzkp,
            Scheme::BanGzkp => AuthMode::BanGzkp,
        }
    }
}

impl fmt::Display for AuthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AuthMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("none") {
            return Ok(AuthMode::None);
        }
        s.parse::<Scheme>().map(AuthMode::from)
    }
}

/// Which group implementation backs the handshakes. Both give identical
/// message sizes and outcomes; the modeled group is much faster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CryptoModel {
    #[default]
    Modeled,
    Exact,
}

/// Simplified CSMA/CA parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MacParams {
    /// Initial backoff window; it doubles on every busy retry. Zero forces
    /// every backoff to zero.
    pub backoff_max: SimTime,
    /// Busy retries that double the window; later retries keep the
    /// largest window. A busy medium never drops a frame.
    pub max_backoffs: u32,
    pub queue_capacity: usize,
    /// Receive-to-transmit turnaround before a hop acknowledgement.
    pub turnaround: SimTime,
    pub ack_bytes: usize,
}

impl Default for MacParams {
    fn default() -> Self {
        MacParams { backoff_max: 2_560_000, max_backoffs: 4, queue_capacity: 64, turnaround: 192_000, ack_bytes: 11 }
    }
}

/// Everything one run needs besides the trace.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub scheme: AuthMode,
    pub strategy: StrategyConfig,
    pub rate_pps: f64,
    /// Window during which sources generate packets.
    pub duration: SimTime,
    /// Extra time after generation stops so in-flight packets can land.
    pub drain: SimTime,
    pub seed: u64,
    pub radio: RadioParams<f64>,
    pub mac: MacParams,
    pub auth_timeout: SimTime,
    /// Reading size; the first 17 bytes carry the packet id, creation time
    /// and source.
    pub data_bytes: usize,
    /// Mark every pair as previously authenticated before the run starts.
    pub prewarm: bool,
    pub crypto: CryptoModel,
    pub sources: Vec<NodeId>,
}

/// Bytes of a reading taken up by its identifying header.
pub const READING_HEADER_BYTES: usize = 17;

impl SimConfig {
    pub fn new(scheme: AuthMode, strategy: Strategy, rate_pps: f64, duration_s: f64, seed: u64) -> Self {
        SimConfig {
            scheme,
            strategy: StrategyConfig::new(strategy),
            rate_pps,
            duration: seconds(duration_s),
            drain: 2 * NS_PER_S,
            seed,
            radio: RadioParams::default(),
            mac: MacParams::default(),
            auth_timeout: DEFAULT_TIMEOUT,
            data_bytes: 24,
            prewarm: false,
            crypto: CryptoModel::Modeled,
            sources: SOURCES.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.rate_pps.is_finite() && self.rate_pps >= 0.0) {
            return Err(SimError::Config(format!("bad packet rate {}", self.rate_pps)));
        }
        if self.data_bytes < READING_HEADER_BYTES {
            return Err(SimError::Config(format!("readings need at least {READING_HEADER_BYTES} bytes")));
        }
        if self.sources.iter().any(|&s| s == SINK || s as usize >= NODE_COUNT) {
            return Err(SimError::Config("sources must be non-sink body nodes".into()));
        }
        if self.mac.queue_capacity == 0 || self.auth_timeout == 0 {
            return Err(SimError::Config("queue capacity and auth timeout must be positive".into()));
        }
        self.radio.validate()?;
        self.strategy.validate()
    }
}

/// Converts seconds to simulated nanoseconds.
pub fn seconds(s: f64) -> SimTime {
    (s.max(0.0) * NS_PER_S as f64).round() as SimTime
}

/// Why a generated packet never reached the sink.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DropCause {
    QueueOverflow,
    LinkLoss,
    TtlExpired,
    NoRoute,
    AuthTimeout,
    AuthRejected,
    InFlight,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DropCounts {
    pub queue_overflow: u64,
    pub link_loss: u64,
    pub ttl_expired: u64,
    pub no_route: u64,
    pub auth_timeout: u64,
    pub auth_rejected: u64,
    /// Still queued or mid-handshake when the run ended.
    pub in_flight: u64,
}

impl DropCounts {
    pub fn add(&mut self, cause: DropCause) {
        let slot = match cause {
            DropCause::QueueOverflow => &mut self.queue_overflow,
            DropCause::LinkLoss => &mut self.link_loss,
            DropCause::TtlExpired => &mut self.ttl_expired,
            DropCause::NoRoute => &mut self.no_route,
            DropCause::AuthTimeout => &mut self.auth_timeout,
            DropCause::AuthRejected => &mut self.auth_rejected,
            DropCause::InFlight => &mut self.in_flight,
        };
        *slot += 1;
    }

    pub fn total(&self) -> u64 {
        self.queue_overflow
            + self.link_loss
            + self.ttl_expired
            + self.no_route
            + self.auth_timeout
            + self.auth_rejected
            + self.in_flight
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SourceMetrics {
    pub generated: u64,
    pub received: u64,
    pub sum_delay_ms: f64,
}

impl SourceMetrics {
    pub fn avg_delay_ms(&self) -> Option<f64> {
        (self.received > 0).then(|| self.sum_delay_ms / self.received as f64)
    }
}

/// Outcome of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub packets_generated: u64,
    pub packets_received_at_sink: u64,
    pub sum_end_to_end_delay_ms: f64,
    /// Every MAC frame emission: data, authentication, control and
    /// acknowledgements, retransmissions included.
    pub total_transmissions: u64,
    /// Handshake messages put on air; link-layer retransmissions of the
    /// same frame count once.
    pub auth_messages: u64,
    /// Hop count summed over delivered packets.
    pub delivered_hops: u64,
    pub drops: DropCounts,
    /// Indexed by node id.
    pub per_source: Vec<SourceMetrics>,
    pub simulated_ms: u64,
}

impl RunMetrics {
    pub fn reception_ratio(&self) -> f64 {
        if self.packets_generated == 0 {
            0.0
        } else {
            self.packets_received_at_sink as f64 / self.packets_generated as f64
        }
    }

    pub fn avg_delay_ms(&self) -> f64 {
        if self.packets_received_at_sink == 0 {
            0.0
        } else {
            self.sum_end_to_end_delay_ms / self.packets_received_at_sink as f64
        }
    }

    pub fn packets_dropped(&self) -> u64 {
        self.drops.total()
    }
}

/// Runs one configuration over an explicit trace.
pub fn run_with_trace(cfg: &SimConfig, trace: &LinkTrace) -> Result<RunMetrics, SimError> {
    cfg.validate()?;
    trace.validate()?;
    let params = GroupParams::default();
    match cfg.crypto {
        CryptoModel::Modeled => engine::simulate(cfg, trace, ModeledGroup::new(params)),
        CryptoModel::Exact => engine::simulate(cfg, trace, ModularGroup::new(params)),
    }
}

/// Runs one cell on the shipped synthetic trace for `posture`.
pub fn run_simulation(
    scheme: AuthMode,
    strategy: Strategy,
    posture: Posture,
    rate_pps: f64,
    duration_s: f64,
    seed: u64,
) -> Result<RunMetrics, SimError> {
    let cfg = SimConfig::new(scheme, strategy, rate_pps, duration_s, seed);
    run_with_trace(&cfg, &LinkTrace::synthetic(posture))
}
