//! Event loop, CSMA MAC, forwarding, and the two ways of plugging the
//! handshake into a strategy.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::handshake::{Endpoint, KeyMode, MessageKind, NetworkKeys, NodeId, Outcome, ProtocolMessage, Role, SimTime};
use crate::zkp_math::CyclicGroup;

use super::channel::{link_etx, sample_power};
use super::strategy::{best_path_tree, ParentTable, Strategy};
use super::trace::{LinkTrace, NODE_COUNT, SINK};
use super::{
    AuthMode, DropCause, RunMetrics, SimConfig, SimError, SourceMetrics, NS_PER_MS, NS_PER_S, READING_HEADER_BYTES,
};

type PacketId = u64;

/// Routing header of an end-to-end envelope, before its path entries.
const ROUTE_HEADER_BYTES: usize = 6;
/// Routing header of a hop-by-hop handshake frame.
const HOP_HEADER_BYTES: usize = 4;
const BEACON_BYTES: usize = 5;
const REQ_BYTES: usize = 6;
const REP_BYTES: usize = 6;
/// Extra wait past the expected acknowledgement before retransmitting.
const ACK_SLACK: SimTime = 100_000;
/// CTP neighbours not heard for this many beacon intervals are ignored.
const NEIGHBOR_LIFETIME: u64 = 3;
/// Attenuation a node reports for itself when it is the REQ target.
const TARGET_ESTIMATE: f64 = -1.0e3;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Packet {
    id: PacketId,
    source: NodeId,
    created: SimTime,
    ttl: u8,
    hops: u8,
}

/// Packs the identifying fields at the head of a reading; the rest is a
/// non-zero filler standing in for sensor samples.
fn encode_reading(p: &Packet, len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len);
    out.extend_from_slice(&p.id.to_be_bytes());
    out.extend_from_slice(&p.created.to_be_bytes());
    out.push(p.source);
    while out.len() < len {
        out.push(0xA5 ^ out.len() as u8);
    }
    out
}

fn decode_reading(bytes: &[u8]) -> Option<(PacketId, SimTime, NodeId)> {
    if bytes.len() < READING_HEADER_BYTES {
        return None;
    }
    let id = u64::from_be_bytes(bytes[0..8].try_into().ok()?);
    let created = u64::from_be_bytes(bytes[8..16].try_into().ok()?);
    Some((id, created, bytes[16]))
}

/// A unit routed end to end by the strategy: plain data, or a BANZKP
/// handshake message that relays forward without opening.
#[derive(Clone, Debug)]
struct Envelope {
    uid: u64,
    dest: NodeId,
    ttl: u8,
    /// Origin first, then every relay that forwarded it.
    path: Vec<NodeId>,
    /// Remaining explicit hops for reversed-path downstream routing.
    route: Vec<NodeId>,
    pkt: Option<Packet>,
    auth: Option<ProtocolMessage>,
}

#[derive(Clone, Debug)]
enum Body {
    Routed(Envelope),
    /// One hop of a BAN-GZKP handshake; the header names the packet so
    /// neighbours that already relayed it stay silent.
    Hop {
        msg: ProtocolMessage,
        pkt: Packet,
    },
    Ack {
        of: u64,
    },
    Beacon {
        cost: f64,
        parent: Option<NodeId>,
    },
    Req {
        req: u64,
        target: NodeId,
        estimate: f64,
    },
    Rep {
        req: u64,
        estimate: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
enum Dest {
    One(NodeId),
    Many(Vec<NodeId>),
    All,
}

impl Dest {
    fn includes(&self, n: NodeId) -> bool {
        match self {
            Dest::One(d) => *d == n,
            Dest::Many(ds) => ds.contains(&n),
            Dest::All => true,
        }
    }
}

#[derive(Clone, Debug)]
struct Frame {
    uid: u64,
    dst: Dest,
    bytes: usize,
    body: Body,
    /// Unicast that waits for a hop acknowledgement.
    ack: bool,
}

impl Frame {
    fn packet(&self) -> Option<PacketId> {
        match &self.body {
            Body::Routed(env) => env.pkt.map(|p| p.id),
            Body::Hop { pkt, .. } => Some(pkt.id),
            _ => None,
        }
    }

    fn is_auth(&self) -> bool {
        match &self.body {
            Body::Routed(env) => env.auth.is_some(),
            Body::Hop { .. } => true,
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mac {
    Idle,
    Backoff,
    Sending,
    AwaitAck(u64),
}

#[derive(Clone, Copy, Debug)]
struct Rx {
    air: u64,
    start: SimTime,
    corrupted: bool,
}

#[derive(Clone, Debug)]
struct Job {
    pkt: Packet,
    peers: BTreeSet<NodeId>,
    negotiating: bool,
}

#[derive(Clone, Copy, Debug)]
struct Neighbor {
    cost: f64,
    parent: Option<NodeId>,
    etx: f64,
    heard: SimTime,
}

#[derive(Clone, Debug)]
enum Pending {
    Forward(Envelope),
    Session,
}

#[derive(Clone, Debug)]
struct Negotiation {
    target: NodeId,
    estimate: f64,
    best: Option<(f64, NodeId)>,
    sends: u32,
    item: Pending,
}

struct Node<G: CyclicGroup> {
    endpoint: Option<Endpoint<G>>,
    queue: VecDeque<Frame>,
    mac: Mac,
    backoffs: u32,
    retx: u32,
    tx: Option<u64>,
    rx: Vec<Rx>,
    acked: HashSet<u64>,
    seen_env: HashSet<u64>,
    /// Copies of each flooded envelope heard so far.
    heard: HashMap<u64, u32>,
    seen_pkt: HashSet<PacketId>,
    /// Packets waiting for this node's single authentication slot, or
    /// waiting for a route.
    work: VecDeque<Packet>,
    job: Option<Job>,
    timers: BTreeSet<SimTime>,
    parent: Option<NodeId>,
    cost: f64,
    neighbors: BTreeMap<NodeId, Neighbor>,
    pending: BTreeMap<u64, Negotiation>,
    /// Responder side: the packet each peer's current session is about.
    inbound: BTreeMap<NodeId, Packet>,
}

#[derive(Clone, Debug)]
enum Ev {
    Generate { node: NodeId },
    Backoff { node: NodeId },
    TxEnd { air: u64 },
    SendAck { node: NodeId, to: NodeId, of: u64 },
    AckTimeout { node: NodeId, uid: u64 },
    AuthTimer { node: NodeId },
    Beacon { node: NodeId },
    ReqDecide { node: NodeId, req: u64 },
    ReqRetry { node: NodeId, req: u64 },
}

struct Scheduled {
    at: SimTime,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed so the max-heap pops the earliest event, then the earliest
    // inserted among equal timestamps.
    fn cmp(&self, other: &Self) -> Ordering {
        other.at.cmp(&self.at).then(other.seq.cmp(&self.seq))
    }
}

struct Air {
    src: NodeId,
    frame: Frame,
    receivers: Vec<NodeId>,
    mac: bool,
}

pub(super) struct Sim<'a, G: CyclicGroup> {
    cfg: &'a SimConfig,
    trace: &'a LinkTrace,
    tree: ParentTable,
    nodes: Vec<Node<G>>,
    now: SimTime,
    end: SimTime,
    gen_end: SimTime,
    events: BinaryHeap<Scheduled>,
    seq: u64,
    rng: ChaCha8Rng,
    air: BTreeMap<u64, Air>,
    next_air: u64,
    next_uid: u64,
    next_pkt: PacketId,
    next_req: u64,
    metrics: RunMetrics,
    packets: BTreeMap<PacketId, Packet>,
    received: HashSet<PacketId>,
    failures: BTreeMap<PacketId, DropCause>,
}

pub(super) fn simulate<G: CyclicGroup>(cfg: &SimConfig, trace: &LinkTrace, group: G) -> Result<RunMetrics, SimError> {
    let mut sim = Sim::new(cfg, trace, group)?;
    sim.start();
    sim.run()?;
    Ok(sim.finish())
}

impl<'a, G: CyclicGroup> Sim<'a, G> {
    pub(super) fn new(cfg: &'a SimConfig, trace: &'a LinkTrace, group: G) -> Result<Self, SimError> {
        let tree = match cfg.strategy.trees.get(&trace.posture()) {
            Some(t) => *t,
            None => best_path_tree(trace, &cfg.radio)?,
        };
        let members: Vec<NodeId> = (0..NODE_COUNT as NodeId).collect();
        let group = Arc::new(group);
        let keys =
            cfg.scheme.scheme().map(|_| NetworkKeys::generate(KeyMode::Global, &members, group.as_ref(), cfg.seed));
        let nodes = members
            .iter()
            .map(|&id| {
                let endpoint = cfg.scheme.scheme().zip(keys.as_ref()).map(|(scheme, keys)| {
                    let seed = cfg.seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(id as u64 + 1));
                    let mut e = Endpoint::new(keys.identity(id), scheme, Arc::clone(&group), seed)
                        .with_timeout(cfg.auth_timeout);
                    if cfg.prewarm {
                        for &p in &members {
                            if p != id {
                                e.mark_known(p);
                            }
                        }
                    }
                    e
                });
                Node {
                    endpoint,
                    queue: VecDeque::new(),
                    mac: Mac::Idle,
                    backoffs: 0,
                    retx: 0,
                    tx: None,
                    rx: Vec::new(),
                    acked: HashSet::new(),
                    seen_env: HashSet::new(),
                    heard: HashMap::new(),
                    seen_pkt: HashSet::new(),
                    work: VecDeque::new(),
                    job: None,
                    timers: BTreeSet::new(),
                    parent: None,
                    cost: if id == SINK { 0.0 } else { f64::INFINITY },
                    neighbors: BTreeMap::new(),
                    pending: BTreeMap::new(),
                    inbound: BTreeMap::new(),
                }
            })
            .collect();
        let gen_end = cfg.duration;
        let mut metrics =
            RunMetrics { per_source: vec![SourceMetrics::default(); NODE_COUNT], ..RunMetrics::default() };
        metrics.simulated_ms = (gen_end + cfg.drain) / NS_PER_MS;
        Ok(Sim {
            cfg,
            trace,
            tree,
            nodes,
            now: 0,
            end: gen_end + cfg.drain,
            gen_end,
            events: BinaryHeap::new(),
            seq: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            air: BTreeMap::new(),
            next_air: 0,
            next_uid: 0,
            next_pkt: 0,
            next_req: 0,
            metrics,
            packets: BTreeMap::new(),
            received: HashSet::new(),
            failures: BTreeMap::new(),
        })
    }

    fn strategy(&self) -> Strategy {
        self.cfg.strategy.kind
    }

    fn schedule(&mut self, at: SimTime, ev: Ev) {
        self.seq += 1;
        self.events.push(Scheduled { at, seq: self.seq, ev });
    }

    fn generation_interval(&self) -> Option<SimTime> {
        (self.cfg.rate_pps > 0.0).then(|| ((NS_PER_S as f64 / self.cfg.rate_pps).round() as SimTime).max(1))
    }

    pub(super) fn start(&mut self) {
        if let Some(interval) = self.generation_interval() {
            for &s in &self.cfg.sources.clone() {
                let phase = self.rng.random_range(0..interval);
                if phase < self.gen_end {
                    self.schedule(phase, Ev::Generate { node: s });
                }
            }
        }
        if self.strategy() == Strategy::Ctp {
            let interval = self.cfg.strategy.beacon_interval;
            for n in 0..NODE_COUNT as NodeId {
                let at = self.rng.random_range(0..interval);
                self.schedule(at, Ev::Beacon { node: n });
            }
        }
    }

    pub(super) fn run(&mut self) -> Result<(), SimError> {
        self.run_until(self.end)
    }

    fn run_until(&mut self, limit: SimTime) -> Result<(), SimError> {
        while let Some(top) = self.events.peek() {
            if top.at > limit {
                break;
            }
            let Scheduled { at, ev, .. } = self.events.pop().expect("peeked");
            self.now = at;
            self.dispatch(ev)?;
        }
        Ok(())
    }

    pub(super) fn finish(mut self) -> RunMetrics {
        for id in self.packets.keys() {
            if !self.received.contains(id) {
                let cause = self.failures.get(id).copied().unwrap_or(DropCause::InFlight);
                self.metrics.drops.add(cause);
            }
        }
        self.metrics
    }

    fn dispatch(&mut self, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::Generate { node } => self.on_generate(node),
            Ev::Backoff { node } => self.on_backoff(node),
            Ev::TxEnd { air } => self.on_tx_end(air),
            Ev::SendAck { node, to, of } => self.on_send_ack(node, to, of),
            Ev::AckTimeout { node, uid } => {
                self.on_ack_timeout(node, uid);
                Ok(())
            }
            Ev::AuthTimer { node } => self.on_auth_timer(node),
            Ev::Beacon { node } => self.on_beacon(node),
            Ev::ReqDecide { node, req } => self.on_req_decide(node, req),
            Ev::ReqRetry { node, req } => self.on_req_retry(node, req),
        }
    }

    // ---- bookkeeping -------------------------------------------------

    fn fail(&mut self, pkt: Option<PacketId>, cause: DropCause) {
        if let Some(id) = pkt {
            if !self.received.contains(&id) {
                self.failures.insert(id, cause);
            }
        }
    }

    fn deliver(&mut self, p: Packet) {
        if !self.received.insert(p.id) {
            return;
        }
        let delay_ms = (self.now - p.created) as f64 / NS_PER_MS as f64;
        self.metrics.packets_received_at_sink += 1;
        self.metrics.sum_end_to_end_delay_ms += delay_ms;
        self.metrics.delivered_hops += p.hops as u64;
        let src = &mut self.metrics.per_source[p.source as usize];
        src.received += 1;
        src.sum_delay_ms += delay_ms;
        self.failures.remove(&p.id);
    }

    fn fresh_uid(&mut self) -> u64 {
        self.next_uid += 1;
        self.next_uid
    }

    fn new_envelope(
        &mut self,
        origin: NodeId,
        dest: NodeId,
        pkt: Option<Packet>,
        auth: Option<ProtocolMessage>,
    ) -> Envelope {
        Envelope {
            uid: self.fresh_uid(),
            dest,
            ttl: self.cfg.strategy.ttl,
            path: vec![origin],
            route: Vec::new(),
            pkt,
            auth,
        }
    }

    fn frame(&mut self, dst: Dest, body: Body) -> Frame {
        let header = self.cfg.radio.header_bytes;
        let bytes = match &body {
            Body::Routed(env) => {
                let payload = env.auth.as_ref().map_or(self.cfg.data_bytes, |m| m.wire_len());
                header + ROUTE_HEADER_BYTES + env.path.len() + env.route.len() + payload
            }
            Body::Hop { msg, .. } => header + HOP_HEADER_BYTES + msg.wire_len(),
            Body::Ack { .. } => self.cfg.mac.ack_bytes,
            Body::Beacon { .. } => header + BEACON_BYTES,
            Body::Req { .. } => header + REQ_BYTES,
            Body::Rep { .. } => header + REP_BYTES,
        };
        let ack = self.strategy() == Strategy::TreeBased
            && matches!(dst, Dest::One(_))
            && matches!(body, Body::Routed(_) | Body::Hop { .. });
        Frame { uid: self.fresh_uid(), dst, bytes, body, ack }
    }

    fn send(&mut self, node: NodeId, dst: Dest, body: Body) {
        let f = self.frame(dst, body);
        self.enqueue(node, f);
    }

    fn endpoint(&mut self, node: NodeId) -> &mut Endpoint<G> {
        self.nodes[node as usize].endpoint.as_mut().expect("authenticated run")
    }

    fn arm_timer(&mut self, node: NodeId) {
        let Some(d) = self.nodes[node as usize].endpoint.as_ref().and_then(|e| e.next_deadline()) else {
            return;
        };
        let d = d.max(self.now);
        if self.nodes[node as usize].timers.insert(d) {
            self.schedule(d, Ev::AuthTimer { node });
        }
    }

    // ---- MAC ---------------------------------------------------------

    fn enqueue(&mut self, node: NodeId, frame: Frame) {
        let n = &mut self.nodes[node as usize];
        if n.queue.len() >= self.cfg.mac.queue_capacity {
            let pkt = frame.packet();
            self.fail(pkt, DropCause::QueueOverflow);
            if let Body::Req { req, .. } = frame.body {
                self.schedule(self.now, Ev::ReqRetry { node, req });
            }
            return;
        }
        n.queue.push_back(frame);
        if n.mac == Mac::Idle {
            self.start_backoff(node);
        }
    }

    fn start_backoff(&mut self, node: NodeId) {
        let window = self.cfg.mac.backoff_max.saturating_mul(1 << self.nodes[node as usize].backoffs.min(16));
        let delay = if window == 0 { 0 } else { self.rng.random_range(0..=window) };
        self.nodes[node as usize].mac = Mac::Backoff;
        self.schedule(self.now + delay, Ev::Backoff { node });
    }

    fn mac_next(&mut self, node: NodeId) {
        let n = &mut self.nodes[node as usize];
        n.mac = Mac::Idle;
        n.backoffs = 0;
        n.retx = 0;
        if !n.queue.is_empty() {
            self.start_backoff(node);
        }
    }

    /// Carrier sense sees transmissions that started strictly earlier, so
    /// senders whose backoffs end at the same instant collide.
    fn medium_busy(&self, node: NodeId) -> bool {
        let n = &self.nodes[node as usize];
        n.tx.is_some() || n.rx.iter().any(|r| r.start < self.now)
    }

    fn on_backoff(&mut self, node: NodeId) -> Result<(), SimError> {
        if self.nodes[node as usize].mac != Mac::Backoff {
            return Ok(());
        }
        if self.medium_busy(node) {
            let n = &mut self.nodes[node as usize];
            n.backoffs = (n.backoffs + 1).min(self.cfg.mac.max_backoffs);
            self.start_backoff(node);
            return Ok(());
        }
        let frame = self.nodes[node as usize].queue.front().expect("queued").clone();
        if self.rebroadcast_redundant(node, &frame) {
            self.nodes[node as usize].queue.pop_front();
            self.mac_next(node);
            return Ok(());
        }
        self.nodes[node as usize].mac = Mac::Sending;
        self.start_air(node, frame, true)
    }

    /// Counter-based flood suppression: a relay cancels its pending
    /// rebroadcast once it has heard the envelope often enough.
    fn rebroadcast_redundant(&self, node: NodeId, frame: &Frame) -> bool {
        let threshold = self.cfg.strategy.flood_suppression;
        let Body::Routed(env) = &frame.body else {
            return false;
        };
        threshold > 0
            && self.strategy() == Strategy::FloodToSink
            && env.path.first() != Some(&node)
            && self.nodes[node as usize].heard.get(&env.uid).copied().unwrap_or(0) >= threshold
    }

    fn start_air(&mut self, node: NodeId, frame: Frame, mac: bool) -> Result<(), SimError> {
        self.metrics.total_transmissions += 1;
        // Link-layer retransmissions repeat a handshake message; they are
        // not new ones.
        if frame.is_auth() && !(mac && self.nodes[node as usize].retx > 0) {
            self.metrics.auth_messages += 1;
        }
        self.next_air += 1;
        let id = self.next_air;
        let now = self.now;
        let mut receivers = Vec::new();
        for r in 0..NODE_COUNT as NodeId {
            if r == node {
                continue;
            }
            let power = sample_power(self.trace, &self.cfg.radio, node, r, now, &mut self.rng)?;
            if power < self.cfg.radio.sensitivity_dbm {
                continue;
            }
            let rn = &mut self.nodes[r as usize];
            let clash = rn.tx.is_some() || !rn.rx.is_empty();
            for other in rn.rx.iter_mut() {
                other.corrupted = true;
            }
            rn.rx.push(Rx { air: id, start: now, corrupted: clash });
            receivers.push(r);
        }
        let me = &mut self.nodes[node as usize];
        for r in me.rx.iter_mut() {
            r.corrupted = true;
        }
        me.tx = Some(id);
        let airtime = self.cfg.radio.airtime(frame.bytes);
        self.air.insert(id, Air { src: node, frame, receivers, mac });
        self.schedule(now + airtime, Ev::TxEnd { air: id });
        Ok(())
    }

    fn on_tx_end(&mut self, id: u64) -> Result<(), SimError> {
        let air = self.air.remove(&id).expect("airborne frame");
        self.nodes[air.src as usize].tx = None;
        let mut got = Vec::new();
        for &r in &air.receivers {
            let rn = &mut self.nodes[r as usize];
            let pos = rn.rx.iter().position(|x| x.air == id).expect("registered reception");
            let rx = rn.rx.remove(pos);
            if !rx.corrupted && air.frame.dst.includes(r) {
                got.push(r);
            }
        }
        if got.is_empty() && !matches!(air.frame.body, Body::Ack { .. }) {
            self.fail(air.frame.packet(), DropCause::LinkLoss);
        }
        if let Body::Req { req, .. } = air.frame.body {
            let s = &self.cfg.strategy;
            let (decide, retry) = (s.rep_window, s.req_retry_timeout);
            self.schedule(self.now + decide, Ev::ReqDecide { node: air.src, req });
            self.schedule(self.now + retry, Ev::ReqRetry { node: air.src, req });
        }
        if air.mac {
            if air.frame.ack {
                self.nodes[air.src as usize].mac = Mac::AwaitAck(air.frame.uid);
                let wait = self.cfg.mac.turnaround + self.cfg.radio.airtime(self.cfg.mac.ack_bytes) + ACK_SLACK;
                self.schedule(self.now + wait, Ev::AckTimeout { node: air.src, uid: air.frame.uid });
            } else {
                self.nodes[air.src as usize].queue.pop_front();
                self.mac_next(air.src);
            }
        }
        for r in got {
            self.on_frame(r, air.src, air.frame.clone())?;
        }
        Ok(())
    }

    fn on_send_ack(&mut self, node: NodeId, to: NodeId, of: u64) -> Result<(), SimError> {
        if self.nodes[node as usize].tx.is_some() {
            return Ok(());
        }
        let f = self.frame(Dest::One(to), Body::Ack { of });
        self.start_air(node, f, false)
    }

    fn on_ack_timeout(&mut self, node: NodeId, uid: u64) {
        if self.nodes[node as usize].mac != Mac::AwaitAck(uid) {
            return;
        }
        let n = &mut self.nodes[node as usize];
        n.retx += 1;
        if n.retx > self.cfg.strategy.max_retransmissions {
            let f = n.queue.pop_front().expect("awaited frame");
            self.fail(f.packet(), DropCause::LinkLoss);
            self.mac_next(node);
        } else {
            n.backoffs = 0;
            self.start_backoff(node);
        }
    }

    // ---- upper layers ------------------------------------------------

    fn on_frame(&mut self, r: NodeId, from: NodeId, frame: Frame) -> Result<(), SimError> {
        if frame.ack {
            let at = self.now + self.cfg.mac.turnaround;
            self.schedule(at, Ev::SendAck { node: r, to: from, of: frame.uid });
            if !self.nodes[r as usize].acked.insert(frame.uid) {
                return Ok(());
            }
        }
        match frame.body {
            Body::Ack { of } => {
                if self.nodes[r as usize].mac == Mac::AwaitAck(of) {
                    self.nodes[r as usize].queue.pop_front();
                    self.mac_next(r);
                }
                Ok(())
            }
            Body::Beacon { cost, parent } => self.on_beacon_rx(r, from, cost, parent),
            Body::Req { req, target, estimate } => {
                let mine = if r == target { TARGET_ESTIMATE } else { self.trace.link_at(self.now, r, target)?.mean_db };
                if mine < estimate {
                    self.send(r, Dest::One(from), Body::Rep { req, estimate: mine });
                }
                Ok(())
            }
            Body::Rep { req, estimate } => {
                if let Some(n) = self.nodes[r as usize].pending.get_mut(&req) {
                    let better = match n.best {
                        None => true,
                        Some((e, id)) => estimate < e || (estimate == e && from < id),
                    };
                    if better {
                        n.best = Some((estimate, from));
                    }
                }
                Ok(())
            }
            Body::Routed(env) => self.on_envelope(r, env),
            Body::Hop { msg, pkt } => self.on_hop(r, from, msg, pkt),
        }
    }

    fn on_generate(&mut self, node: NodeId) -> Result<(), SimError> {
        self.next_pkt += 1;
        let pkt = Packet { id: self.next_pkt, source: node, created: self.now, ttl: self.cfg.strategy.ttl, hops: 0 };
        self.metrics.packets_generated += 1;
        self.metrics.per_source[node as usize].generated += 1;
        self.packets.insert(pkt.id, pkt);
        if let Some(interval) = self.generation_interval() {
            if self.now + interval < self.gen_end {
                self.schedule(self.now + interval, Ev::Generate { node });
            }
        }
        let n = &mut self.nodes[node as usize];
        n.seen_pkt.insert(pkt.id);
        if n.work.len() >= self.cfg.mac.queue_capacity {
            self.fail(Some(pkt.id), DropCause::QueueOverflow);
            return Ok(());
        }
        n.work.push_back(pkt);
        self.try_start(node)
    }

    /// Whether a node can hand a packet to the strategy right now. Only a
    /// CTP node that has not yet heard a usable beacon has to wait.
    fn has_route(&self, node: NodeId) -> bool {
        self.strategy() != Strategy::Ctp || node == SINK || self.nodes[node as usize].parent.is_some()
    }

    /// Starts work on queued packets while the node's single
    /// authentication slot is free.
    fn try_start(&mut self, node: NodeId) -> Result<(), SimError> {
        loop {
            let n = &self.nodes[node as usize];
            if n.job.is_some() || !self.has_route(node) {
                return Ok(());
            }
            let Some(pkt) = n.work.front().copied() else {
                return Ok(());
            };
            self.nodes[node as usize].work.pop_front();
            match self.cfg.scheme {
                AuthMode::None => {
                    let env = self.new_envelope(node, SINK, Some(pkt), None);
                    self.originate(node, env)?;
                }
                AuthMode::Banzkp => {
                    let data = encode_reading(&pkt, self.cfg.data_bytes);
                    let now = self.now;
                    let msg = self.endpoint(node).initiate(SINK, data, now)?;
                    self.nodes[node as usize].job =
                        Some(Job { pkt, peers: BTreeSet::from([SINK]), negotiating: false });
                    let env = self.new_envelope(node, SINK, Some(pkt), Some(msg));
                    self.originate(node, env)?;
                    self.arm_timer(node);
                }
                AuthMode::BanGzkp => self.start_hop(node, pkt)?,
            }
        }
    }

    /// BAN-GZKP: picks the next-hop candidates for `pkt` and opens the
    /// handshake with them.
    fn start_hop(&mut self, node: NodeId, pkt: Packet) -> Result<(), SimError> {
        let candidates: Vec<NodeId> = match self.strategy() {
            Strategy::Ctp => self.nodes[node as usize].parent.into_iter().collect(),
            Strategy::TreeBased => self.tree[node as usize].into_iter().collect(),
            Strategy::Apap => self.cfg.strategy.apap_parents[node as usize].clone(),
            Strategy::FloodToSink => (0..NODE_COUNT as NodeId).filter(|&m| m != node).collect(),
            Strategy::MiniAtt => {
                self.nodes[node as usize].job = Some(Job { pkt, peers: BTreeSet::new(), negotiating: true });
                return self.negotiate(node, SINK, Pending::Session);
            }
        };
        if candidates.is_empty() {
            self.fail(Some(pkt.id), DropCause::NoRoute);
            return Ok(());
        }
        self.open_session(node, pkt, candidates)
    }

    fn open_session(&mut self, node: NodeId, pkt: Packet, candidates: Vec<NodeId>) -> Result<(), SimError> {
        let data = encode_reading(&pkt, self.cfg.data_bytes);
        let now = self.now;
        let msg = if let [only] = candidates[..] {
            self.endpoint(node).initiate(only, data, now)?
        } else {
            self.endpoint(node).initiate_group(&candidates, data, now)?
        };
        let dst = match (self.strategy(), &candidates[..]) {
            (Strategy::FloodToSink, _) => Dest::All,
            (_, [only]) => Dest::One(*only),
            _ => Dest::Many(candidates.clone()),
        };
        self.nodes[node as usize].job = Some(Job { pkt, peers: candidates.into_iter().collect(), negotiating: false });
        self.send(node, dst, Body::Hop { msg, pkt });
        self.arm_timer(node);
        Ok(())
    }

    /// A session of the node's current job ended without delivering; the
    /// packet is lost once no candidate is left.
    fn job_peer_failed(&mut self, node: NodeId, peer: NodeId, cause: DropCause) -> Result<(), SimError> {
        let n = &mut self.nodes[node as usize];
        let Some(job) = n.job.as_mut() else {
            return Ok(());
        };
        if job.negotiating || !job.peers.remove(&peer) || !job.peers.is_empty() {
            return Ok(());
        }
        let id = job.pkt.id;
        n.job = None;
        self.fail(Some(id), cause);
        self.try_start(node)
    }

    fn job_done(&mut self, node: NodeId) -> Result<(), SimError> {
        self.nodes[node as usize].job = None;
        self.try_start(node)
    }

    fn on_auth_timer(&mut self, node: NodeId) -> Result<(), SimError> {
        self.nodes[node as usize].timers.remove(&self.now);
        let now = self.now;
        let expired = self.endpoint(node).on_timeout(now);
        for e in expired {
            match e.role {
                Role::Initiator => self.job_peer_failed(node, e.peer, DropCause::AuthTimeout)?,
                Role::Responder => {
                    let p = self.nodes[node as usize].inbound.remove(&e.peer);
                    self.fail(p.map(|p| p.id), DropCause::AuthTimeout);
                }
            }
        }
        self.arm_timer(node);
        Ok(())
    }

    fn is_initiator_step(kind: MessageKind) -> bool {
        matches!(kind, MessageKind::Auth2 | MessageKind::Auth4 | MessageKind::Auth2Opt)
    }

    /// Whether a non-opening hop message belongs to the packet the node is
    /// currently authenticating with `from`.
    fn expects(&self, r: NodeId, from: NodeId, msg: &ProtocolMessage, id: PacketId) -> bool {
        let n = &self.nodes[r as usize];
        if Self::is_initiator_step(msg.kind) {
            n.job.as_ref().is_some_and(|j| j.pkt.id == id)
        } else {
            n.inbound.get(&from).is_some_and(|p| p.id == id)
        }
    }

    fn on_hop(&mut self, r: NodeId, from: NodeId, msg: ProtocolMessage, pkt: Packet) -> Result<(), SimError> {
        if msg.kind == MessageKind::Auth1 {
            let n = &mut self.nodes[r as usize];
            if n.seen_pkt.contains(&pkt.id) {
                return Ok(());
            }
            // Flooding relays suppress a packet id from its first sighting,
            // so losing a first-finisher race also ends their part in it.
            if self.cfg.strategy.kind == Strategy::FloodToSink && r != SINK {
                n.seen_pkt.insert(pkt.id);
            }
            n.inbound.insert(from, pkt);
        } else if !self.expects(r, from, &msg, pkt.id) {
            // A late reply from a session the node already abandoned.
            return Ok(());
        }
        let now = self.now;
        match self.endpoint(r).handle(&msg, now) {
            Outcome::Send(reply) => {
                let finished = reply.kind.carries_data();
                let to = reply.receiver;
                self.send(r, Dest::One(to), Body::Hop { msg: reply, pkt });
                if finished {
                    self.job_done(r)?;
                }
            }
            Outcome::Accepted { data, .. } => {
                self.nodes[r as usize].inbound.remove(&from);
                if let Some((id, created, source)) = decode_reading(&data) {
                    let p = Packet { id, source, created, ttl: pkt.ttl, hops: pkt.hops + 1 };
                    self.nodes[r as usize].seen_pkt.insert(id);
                    self.accept_packet(r, p)?;
                }
            }
            Outcome::Rejected(_) => {
                if Self::is_initiator_step(msg.kind) {
                    self.job_peer_failed(r, from, DropCause::AuthRejected)?;
                } else {
                    self.fail(Some(pkt.id), DropCause::AuthRejected);
                }
            }
            Outcome::Ignored => {}
        }
        self.arm_timer(r);
        Ok(())
    }

    /// BAN-GZKP relay or sink taking custody of an authenticated packet.
    fn accept_packet(&mut self, r: NodeId, mut p: Packet) -> Result<(), SimError> {
        if r == SINK {
            self.deliver(p);
            return Ok(());
        }
        if p.ttl <= 1 {
            self.fail(Some(p.id), DropCause::TtlExpired);
            return Ok(());
        }
        p.ttl -= 1;
        let n = &mut self.nodes[r as usize];
        if n.work.len() >= self.cfg.mac.queue_capacity {
            self.fail(Some(p.id), DropCause::QueueOverflow);
            return Ok(());
        }
        n.work.push_back(p);
        self.try_start(r)
    }

    fn originate(&mut self, node: NodeId, env: Envelope) -> Result<(), SimError> {
        self.nodes[node as usize].seen_env.insert(env.uid);
        self.forward(node, env)
    }

    fn on_envelope(&mut self, r: NodeId, mut env: Envelope) -> Result<(), SimError> {
        if self.strategy() == Strategy::FloodToSink {
            *self.nodes[r as usize].heard.entry(env.uid).or_insert(0) += 1;
        }
        if !self.nodes[r as usize].seen_env.insert(env.uid) {
            return Ok(());
        }
        if env.dest == r {
            return match env.auth.take() {
                None => {
                    if let Some(mut p) = env.pkt {
                        p.hops = env.path.len() as u8;
                        self.deliver(p);
                    }
                    Ok(())
                }
                Some(msg) => self.on_end_to_end(r, env, msg),
            };
        }
        if env.ttl <= 1 {
            self.fail(env.pkt.map(|p| p.id), DropCause::TtlExpired);
            return Ok(());
        }
        env.ttl -= 1;
        env.path.push(r);
        self.forward(r, env)
    }

    /// BANZKP: a handshake message reached its end point.
    fn on_end_to_end(&mut self, r: NodeId, env: Envelope, msg: ProtocolMessage) -> Result<(), SimError> {
        let now = self.now;
        if msg.kind == MessageKind::Auth1 {
            if let Some(p) = env.pkt {
                self.nodes[r as usize].inbound.insert(msg.sender, p);
            }
        }
        let out = self.endpoint(r).handle(&msg, now);
        match out {
            Outcome::Send(reply) => {
                let finished = reply.kind.carries_data();
                let dest = reply.receiver;
                let mut out = self.new_envelope(r, dest, env.pkt, Some(reply));
                if dest != SINK {
                    out.route = env.path.iter().rev().copied().collect();
                }
                self.originate(r, out)?;
                if finished {
                    self.job_done(r)?;
                }
            }
            Outcome::Accepted { data, from } => {
                self.nodes[r as usize].inbound.remove(&from);
                if let Some((id, created, source)) = decode_reading(&data) {
                    let hops = env.path.len() as u8;
                    self.deliver(Packet { id, source, created, ttl: env.ttl, hops });
                }
            }
            Outcome::Rejected(_) => {
                if Self::is_initiator_step(msg.kind) {
                    self.job_peer_failed(r, msg.sender, DropCause::AuthRejected)?;
                } else {
                    self.fail(env.pkt.map(|p| p.id), DropCause::AuthRejected);
                }
            }
            Outcome::Ignored => {}
        }
        self.arm_timer(r);
        Ok(())
    }

    /// Next CTP hop from `node` down to `dest`: the child of `node` on
    /// `dest`'s current parent chain.
    fn ctp_child_toward(&self, node: NodeId, dest: NodeId) -> Option<NodeId> {
        let mut d = dest;
        for _ in 0..NODE_COUNT {
            let p = self.nodes[d as usize].parent?;
            if p == node {
                return Some(d);
            }
            d = p;
        }
        None
    }

    /// Hands an envelope to the strategy at `node`.
    fn forward(&mut self, node: NodeId, mut env: Envelope) -> Result<(), SimError> {
        let upstream = env.dest == SINK;
        let pkt = env.pkt.map(|p| p.id);
        let dst = match self.strategy() {
            Strategy::FloodToSink => Some(Dest::All),
            Strategy::MiniAtt => return self.negotiate(node, env.dest, Pending::Forward(env)),
            Strategy::Apap if upstream => match self.cfg.strategy.apap_parents[node as usize][..] {
                [] => None,
                [one] => Some(Dest::One(one)),
                ref many => Some(Dest::Many(many.to_vec())),
            },
            Strategy::TreeBased if upstream => self.tree[node as usize].map(Dest::One),
            Strategy::Ctp if upstream => self.nodes[node as usize].parent.map(Dest::One),
            Strategy::Ctp => self.ctp_child_toward(node, env.dest).map(Dest::One),
            Strategy::Apap | Strategy::TreeBased => {
                if env.route.first() == Some(&node) {
                    env.route.remove(0);
                }
                (!env.route.is_empty()).then(|| Dest::One(env.route.remove(0)))
            }
        };
        match dst {
            Some(dst) => self.send(node, dst, Body::Routed(env)),
            None => self.fail(pkt, DropCause::NoRoute),
        }
        Ok(())
    }

    // ---- MiniAtt negotiation -----------------------------------------

    fn negotiate(&mut self, node: NodeId, target: NodeId, item: Pending) -> Result<(), SimError> {
        let estimate = self.trace.link_at(self.now, node, target)?.mean_db;
        self.next_req += 1;
        let req = self.next_req;
        self.nodes[node as usize].pending.insert(req, Negotiation { target, estimate, best: None, sends: 0, item });
        self.send_req(node, req);
        Ok(())
    }

    fn send_req(&mut self, node: NodeId, req: u64) {
        let Some(n) = self.nodes[node as usize].pending.get_mut(&req) else {
            return;
        };
        n.sends += 1;
        let (target, estimate) = (n.target, n.estimate);
        self.send(node, Dest::All, Body::Req { req, target, estimate });
    }

    fn on_req_decide(&mut self, node: NodeId, req: u64) -> Result<(), SimError> {
        let chosen = self.nodes[node as usize].pending.get(&req).and_then(|n| n.best);
        if let Some((_, next)) = chosen {
            let n = self.nodes[node as usize].pending.remove(&req).expect("present");
            self.execute(node, next, n.item)?;
        }
        Ok(())
    }

    fn on_req_retry(&mut self, node: NodeId, req: u64) -> Result<(), SimError> {
        let Some(n) = self.nodes[node as usize].pending.get(&req) else {
            return Ok(());
        };
        if n.best.is_some() {
            return self.on_req_decide(node, req);
        }
        if n.sends <= self.cfg.strategy.max_retransmissions {
            self.send_req(node, req);
            return Ok(());
        }
        let n = self.nodes[node as usize].pending.remove(&req).expect("present");
        match n.item {
            Pending::Forward(env) => self.fail(env.pkt.map(|p| p.id), DropCause::NoRoute),
            Pending::Session => {
                if let Some(job) = self.nodes[node as usize].job.take() {
                    self.fail(Some(job.pkt.id), DropCause::NoRoute);
                }
                self.try_start(node)?;
            }
        }
        Ok(())
    }

    fn execute(&mut self, node: NodeId, next: NodeId, item: Pending) -> Result<(), SimError> {
        match item {
            Pending::Forward(env) => {
                self.send(node, Dest::One(next), Body::Routed(env));
                Ok(())
            }
            Pending::Session => {
                let Some(job) = self.nodes[node as usize].job.take() else {
                    return Ok(());
                };
                self.open_session(node, job.pkt, vec![next])
            }
        }
    }

    // ---- CTP ---------------------------------------------------------

    fn on_beacon(&mut self, node: NodeId) -> Result<(), SimError> {
        let n = &self.nodes[node as usize];
        if node == SINK || n.parent.is_some() {
            let body = Body::Beacon { cost: n.cost, parent: n.parent };
            self.send(node, Dest::All, body);
        }
        let interval = self.cfg.strategy.beacon_interval;
        let jitter = self.rng.random_range(0..=interval / 10);
        self.schedule(self.now + interval + jitter, Ev::Beacon { node });
        Ok(())
    }

    fn on_beacon_rx(&mut self, r: NodeId, from: NodeId, cost: f64, parent: Option<NodeId>) -> Result<(), SimError> {
        if r == SINK {
            return Ok(());
        }
        let etx = link_etx(&self.cfg.radio, self.trace.link_at(self.now, r, from)?);
        let now = self.now;
        let lifetime = NEIGHBOR_LIFETIME * self.cfg.strategy.beacon_interval;
        let n = &mut self.nodes[r as usize];
        n.neighbors.insert(from, Neighbor { cost, parent, etx, heard: now });
        let best = n
            .neighbors
            .iter()
            .filter(|(_, nb)| now - nb.heard <= lifetime && nb.parent != Some(r) && (nb.cost + nb.etx).is_finite())
            .map(|(&id, nb)| (nb.cost + nb.etx, id))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let had_route = n.parent.is_some();
        match best {
            Some((c, id)) => {
                n.parent = Some(id);
                n.cost = c;
            }
            None => {
                n.parent = None;
                n.cost = f64::INFINITY;
            }
        }
        if !had_route && self.nodes[r as usize].parent.is_some() {
            self.try_start(r)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wban_sim::trace::{LinkStats, Posture};
    use crate::wban_sim::{run_with_trace, MacParams};
    use crate::zkp_math::{GroupParams, ModeledGroup};

    fn group() -> ModeledGroup {
        ModeledGroup::new(GroupParams::default())
    }

    /// Only the listed undirected links are usable, at 0 dB.
    fn links_only(pairs: &[(NodeId, NodeId)]) -> LinkTrace {
        LinkTrace::from_fn(Posture::Sit, 1, 100, |_, s, d| {
            let on = pairs.iter().any(|&(a, b)| (a, b) == (s, d) || (b, a) == (s, d));
            LinkStats { mean_db: if on { 0.0 } else { 90.0 }, std_db: 0.0 }
        })
        .unwrap()
    }

    #[test]
    fn reading_round_trip() {
        let p = Packet { id: 77, source: 4, created: 123_456, ttl: 7, hops: 0 };
        let bytes = encode_reading(&p, 24);
        assert_eq!(bytes.len(), 24);
        assert!(bytes.iter().any(|&b| b != 0));
        assert_eq!(decode_reading(&bytes), Some((77, 123_456, 4)));
    }

    #[test]
    fn single_sender_airs_after_one_backoff() {
        let cfg = SimConfig::new(AuthMode::None, Strategy::FloodToSink, 0.0, 1.0, 1);
        let trace = LinkTrace::perfect(Posture::Sit);
        let mut sim = Sim::new(&cfg, &trace, group()).unwrap();
        let f = sim.frame(Dest::One(SINK), Body::Beacon { cost: 0.0, parent: None });
        sim.enqueue(0, f);
        sim.run_until(cfg.mac.backoff_max).unwrap();
        assert_eq!(sim.metrics.total_transmissions, 1);
        assert_eq!(sim.nodes[0].backoffs, 0);
    }

    #[test]
    fn forced_tie_collides_at_the_common_receiver() {
        let mut cfg = SimConfig::new(AuthMode::None, Strategy::FloodToSink, 0.0, 1.0, 1);
        cfg.mac = MacParams { backoff_max: 0, ..MacParams::default() };
        let trace = LinkTrace::perfect(Posture::Sit);
        let mut sim = Sim::new(&cfg, &trace, group()).unwrap();
        for (src, id) in [(0u8, 1u64), (2, 2)] {
            let p = Packet { id, source: src, created: 0, ttl: 1, hops: 0 };
            let env = Envelope {
                uid: 100 + id,
                dest: SINK,
                ttl: 1,
                path: vec![src],
                route: vec![],
                pkt: Some(p),
                auth: None,
            };
            let f = sim.frame(Dest::One(SINK), Body::Routed(env));
            sim.enqueue(src, f);
        }
        sim.run_until(NS_PER_S).unwrap();
        assert_eq!(sim.metrics.total_transmissions, 2);
        assert_eq!(sim.metrics.packets_received_at_sink, 0);
        assert_eq!(sim.failures.get(&1), Some(&DropCause::LinkLoss));
        assert_eq!(sim.failures.get(&2), Some(&DropCause::LinkLoss));
    }

    #[test]
    fn flood_ttl_exhausts_on_a_long_line() {
        // 4 - 5 - 0 - 3 - 2 - 1: five hops from the ankle to the sink.
        let trace = links_only(&[(4, 5), (5, 0), (0, 3), (3, 2), (2, 1)]);
        let mut cfg = SimConfig::new(AuthMode::None, Strategy::FloodToSink, 1.0, 5.0, 3);
        cfg.sources = vec![4];
        cfg.strategy.ttl = 3;
        let m = run_with_trace(&cfg, &trace).unwrap();
        assert!(m.packets_generated > 0);
        assert_eq!(m.packets_received_at_sink, 0);
        assert_eq!(m.drops.ttl_expired, m.packets_generated);
        cfg.strategy.ttl = 7;
        let m = run_with_trace(&cfg, &trace).unwrap();
        assert_eq!(m.packets_received_at_sink, m.packets_generated);
    }

    #[test]
    fn apap_multicast_reaches_both_parents() {
        let cfg = SimConfig::new(AuthMode::None, Strategy::Apap, 0.0, 1.0, 1);
        let trace = LinkTrace::perfect(Posture::Sit);
        let mut sim = Sim::new(&cfg, &trace, group()).unwrap();
        sim.next_pkt = 1;
        let p = Packet { id: 1, source: 6, created: 0, ttl: 7, hops: 0 };
        let env = sim.new_envelope(6, SINK, Some(p), None);
        sim.originate(6, env.clone()).unwrap();
        assert_eq!(sim.nodes[6].queue[0].dst, Dest::Many(vec![3, 0]));
        sim.run_until(NS_PER_S).unwrap();
        assert!(sim.nodes[3].seen_env.contains(&env.uid));
        assert!(sim.nodes[0].seen_env.contains(&env.uid));
        assert_eq!(sim.metrics.packets_received_at_sink, 1);
    }

    #[test]
    fn reversed_path_routing() {
        let cfg = SimConfig::new(AuthMode::Banzkp, Strategy::Apap, 0.0, 1.0, 1);
        let trace = LinkTrace::perfect(Posture::Sit);
        let mut sim = Sim::new(&cfg, &trace, group()).unwrap();
        let mut env = sim.new_envelope(SINK, 6, None, None);
        env.route = vec![3, 6];
        sim.forward(SINK, env).unwrap();
        let f = sim.nodes[SINK as usize].queue[0].clone();
        assert_eq!(f.dst, Dest::One(3));
        let Body::Routed(env) = f.body else { panic!() };
        assert_eq!(env.route, vec![6]);
    }

    #[test]
    fn miniatt_picks_the_lowest_estimate() {
        let cfg = SimConfig::new(AuthMode::None, Strategy::MiniAtt, 0.0, 1.0, 1);
        let trace = LinkTrace::perfect(Posture::Sit);
        let mut sim = Sim::new(&cfg, &trace, group()).unwrap();
        let env = sim.new_envelope(4, SINK, None, None);
        sim.nodes[4]
            .pending
            .insert(9, Negotiation { target: SINK, estimate: 50.0, best: None, sends: 1, item: Pending::Forward(env) });
        let far = sim.frame(Dest::One(4), Body::Rep { req: 9, estimate: 45.0 });
        sim.on_frame(4, 5, far).unwrap();
        let near = sim.frame(Dest::One(4), Body::Rep { req: 9, estimate: 30.0 });
        sim.on_frame(4, 0, near).unwrap();
        sim.on_req_decide(4, 9).unwrap();
        assert_eq!(sim.nodes[4].queue.back().unwrap().dst, Dest::One(0));
    }

    #[test]
    fn ctp_downstream_follows_the_current_tree() {
        // Two frames: the ankle's best parent is the thigh, then the navel.
        let trace = LinkTrace::from_fn(Posture::Sit, 2, 5_000, |frame, s, d| {
            let pair = (s.min(d), s.max(d));
            let mean = match (pair, frame) {
                ((0, 1), _) | ((1, 5), _) => 10.0,
                ((4, 5), 0) | ((0, 4), 1) => 10.0,
                ((0, 4), 0) | ((4, 5), 1) => 39.5,
                _ => 90.0,
            };
            LinkStats { mean_db: mean, std_db: 1.0 }
        })
        .unwrap();
        let cfg = SimConfig::new(AuthMode::None, Strategy::Ctp, 0.0, 12.0, 5);
        let mut sim = Sim::new(&cfg, &trace, group()).unwrap();
        sim.start();
        sim.run_until(4 * NS_PER_S).unwrap();
        assert_eq!(sim.nodes[4].parent, Some(5));
        assert_eq!(sim.ctp_child_toward(SINK, 4), Some(5));
        assert_eq!(sim.ctp_child_toward(5, 4), Some(4));
        sim.run_until(9 * NS_PER_S).unwrap();
        assert_eq!(sim.nodes[4].parent, Some(0));
        assert_eq!(sim.ctp_child_toward(SINK, 4), Some(0));
        assert_eq!(sim.ctp_child_toward(0, 4), Some(4));
        assert_eq!(sim.ctp_child_toward(5, 4), None);
    }

    #[test]
    fn flood_first_finisher_is_the_only_data_hop() {
        let mut cfg = SimConfig::new(AuthMode::BanGzkp, Strategy::FloodToSink, 0.0, 1.0, 2);
        cfg.prewarm = true;
        // Three mutually audible neighbours around the source; none hears
        // the sink.
        let trace = links_only(&[(4, 5), (4, 0), (4, 6), (0, 5), (0, 6), (5, 6)]);
        let mut sim = Sim::new(&cfg, &trace, group()).unwrap();
        sim.next_pkt = 1;
        let pkt = Packet { id: 1, source: 4, created: 0, ttl: 7, hops: 0 };
        sim.nodes[4].seen_pkt.insert(1);
        sim.start_hop(4, pkt).unwrap();
        let holders = |sim: &Sim<ModeledGroup>| -> Vec<NodeId> {
            [0u8, 5, 6]
                .into_iter()
                .filter(|&n| {
                    let node = &sim.nodes[n as usize];
                    node.work.iter().any(|p| p.id == 1) || node.job.as_ref().is_some_and(|j| j.pkt.id == 1)
                })
                .collect()
        };
        while holders(&sim).is_empty() {
            let Scheduled { at, ev, .. } = sim.events.pop().expect("session in progress");
            sim.now = at;
            sim.dispatch(ev).unwrap();
        }
        assert_eq!(holders(&sim).len(), 1);
        assert!(sim.nodes[4].job.is_none());
        let e = sim.nodes[4].endpoint.as_ref().unwrap();
        assert_eq!(e.live_sessions(), 0, "sibling sessions closed with the first finisher");
    }

    #[test]
    fn flood_relays_stop_after_hearing_enough_copies() {
        let trace = LinkTrace::perfect(Posture::Walk);
        let tx = |threshold: u32| {
            let mut cfg = SimConfig::new(AuthMode::None, Strategy::FloodToSink, 1.0, 1.0, 4);
            cfg.sources = vec![4];
            cfg.strategy.flood_suppression = threshold;
            let m = simulate(&cfg, &trace, group()).unwrap();
            assert_eq!((m.packets_generated, m.packets_received_at_sink), (1, 1));
            m.total_transmissions
        };
        // The source, then five relays; the sink never rebroadcasts.
        assert_eq!(tx(0), 6);
        // Every relay hears the source and two rebroadcasts.
        assert_eq!(tx(3), 3);
    }

    #[test]
    fn stale_hop_reply_is_ignored() {
        let mut cfg = SimConfig::new(AuthMode::BanGzkp, Strategy::TreeBased, 0.0, 1.0, 3);
        cfg.prewarm = true;
        let trace = LinkTrace::perfect(Posture::Walk);
        let mut sim = Sim::new(&cfg, &trace, group()).unwrap();
        let old = Packet { id: 1, source: 5, created: 0, ttl: 7, hops: 0 };
        let auth1 = sim.endpoint(5).initiate(SINK, encode_reading(&old, 24), 0).unwrap();
        let Outcome::Send(stale) = sim.endpoint(SINK).handle(&auth1, 0) else { panic!("sink answers") };
        sim.start_hop(5, Packet { id: 2, ..old }).unwrap();
        sim.on_hop(5, SINK, stale, old).unwrap();
        assert_eq!(sim.nodes[5].job.as_ref().map(|j| j.pkt.id), Some(2));
        assert_eq!(sim.nodes[5].endpoint.as_ref().unwrap().live_sessions(), 1);
    }
}
