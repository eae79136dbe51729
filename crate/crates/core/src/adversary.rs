//! A symbolic attacker and scripted attack scenarios.
//!
//! The attacker Z taps links, remembers what it sees in a [`KnowledgeSet`],
//! replays or forges messages, XORs ciphertexts together and tries candidate
//! keys on captured blobs. It never computes discrete logarithms. Each
//! [`Scenario`] is a fixed script run against honest [`Endpoint`]s of the
//! scheme under test; its verdict depends only on how the victims react.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::handshake::{
    decode_fields, encode_fields, CheckFailure, Credentials, Endpoint, HandshakeError, KeyMode, MessageKind,
    NetworkKeys, NodeId, Outcome, ProtocolMessage, Scheme, SimTime, BROADCAST,
};
use crate::zkp_math::{stream_encrypt, BitString, CyclicGroup, ModularGroup, SymmetricKey, DEFAULT_DATA_KEY_BITS};

/// Candidate keys tried by the guessing attack.
pub const GUESS_BUDGET: usize = 1 << 16;

/// Invalid Auth1 messages injected by the DDoS scenario.
pub const DDOS_INJECTIONS: usize = 1000;

/// Length of the sensor readings honest nodes send in scenarios.
const READING_BYTES: usize = 24;

/// Simulated time between two deliveries on the scenario testbed.
const TICK: SimTime = 1_000_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Captured {
    pub message: ProtocolMessage,
    pub phase: u8,
    pub time: SimTime,
}

/// Everything the attacker has observed or derived.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KnowledgeSet {
    pub known_ids: BTreeSet<NodeId>,
    pub captured: Vec<Captured>,
    pub known_keys: Vec<SymmetricKey>,
    pub derived_bytes: Vec<Vec<u8>>,
}

impl KnowledgeSet {
    /// Records a tapped message. A plaintext Auth4 also yields K_CS.
    pub fn intercept(&mut self, msg: &ProtocolMessage, time: SimTime) {
        self.known_ids.insert(msg.sender);
        if msg.receiver != BROADCAST {
            self.known_ids.insert(msg.receiver);
        }
        if msg.kind == MessageKind::Auth4 {
            if let Some([k]) = msg.fields().as_deref() {
                if let Ok(key) = SymmetricKey::from_bytes(k) {
                    if !self.known_keys.contains(&key) {
                        self.known_keys.push(key);
                    }
                }
            }
        }
        self.captured.push(Captured { message: msg.clone(), phase: msg.kind.phase(), time });
    }

    pub fn derive(&mut self, bytes: Vec<u8>) {
        self.derived_bytes.push(bytes);
    }

    /// The most recent capture of a given kind.
    pub fn last(&self, kind: MessageKind) -> Option<&ProtocolMessage> {
        self.captured.iter().rev().map(|c| &c.message).find(|m| m.kind == kind)
    }

    /// Every byte the attacker holds, in a fixed order.
    pub fn all_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for k in &self.known_keys {
            out.extend_from_slice(k.as_bytes());
        }
        for c in &self.captured {
            out.extend_from_slice(&c.message.encode());
        }
        for d in &self.derived_bytes {
            out.extend_from_slice(d);
        }
        out
    }

    /// Substring scan for a secret byte string.
    pub fn contains(&self, needle: &[u8]) -> bool {
        !needle.is_empty() && self.all_bytes().windows(needle.len()).any(|w| w == needle)
    }

    /// Whether V (wire encoding or secret rendering) or K_I is held.
    pub fn holds_secret<G: CyclicGroup>(&self, creds: &Credentials<G>, group: &G) -> bool {
        self.contains(&group.encode(&creds.shared_secret))
            || self.contains(group.secret_bits(&creds.shared_secret).as_bytes())
            || self.contains(creds.initial_key.as_bytes())
    }
}

/// `c1 XOR c2`, truncated to the shorter input.
pub fn xor_redundancy(c1: &[u8], c2: &[u8]) -> Vec<u8> {
    c1.iter().zip(c2).map(|(a, b)| a ^ b).collect()
}

/// Tries `key` on an identity-bearing blob. Succeeds when the plaintext
/// parses as a field list whose first field is `expected_id`.
pub fn decrypt_attempt(key: &SymmetricKey, blob: &[u8], expected_id: NodeId) -> Option<Vec<Vec<u8>>> {
    // A cheap prefix check before the full decryption: the plaintext must
    // start with the one-byte id field.
    let head = stream_encrypt(key, blob.get(..3)?).ok()?;
    if head != [0, 1, expected_id] {
        return None;
    }
    let plain = stream_encrypt(key, blob).ok()?;
    let fields = decode_fields(&plain)?;
    if fields.len() < 2 {
        return None;
    }
    Some(fields.into_iter().map(<[u8]>::to_vec).collect())
}

/// Sliding windows of `bits` bits over `stream`, one per bit offset, at most
/// `budget` of them.
pub fn candidate_keys(stream: &[u8], bits: usize, budget: usize) -> Vec<SymmetricKey> {
    let total = stream.len() * 8;
    if total < bits {
        return Vec::new();
    }
    let Some(rendering) = BitString::from_bytes(stream, total) else {
        return Vec::new();
    };
    (0..=total - bits)
        .take(budget)
        .filter_map(|start| {
            let mut w = BitString::zeros(bits);
            for k in 0..bits {
                if rendering.get(start + k) {
                    w.set(k, true);
                }
            }
            SymmetricKey::new(w).ok()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    ForgeNode,
    AuthReplayPart1,
    AuthReplayPart2,
    ManInMiddleGuess,
    DataReplay,
    RedundancyCrack,
    SinkDDoS,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::ForgeNode,
        Scenario::AuthReplayPart1,
        Scenario::AuthReplayPart2,
        Scenario::ManInMiddleGuess,
        Scenario::DataReplay,
        Scenario::RedundancyCrack,
        Scenario::SinkDDoS,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::ForgeNode => "ForgeNode",
            Scenario::AuthReplayPart1 => "AuthReplayPart1",
            Scenario::AuthReplayPart2 => "AuthReplayPart2",
            Scenario::ManInMiddleGuess => "ManInMiddleGuess",
            Scenario::DataReplay => "DataReplay",
            Scenario::RedundancyCrack => "RedundancyCrack",
            Scenario::SinkDDoS => "SinkDDoS",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown scenario {s}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Verdict {
    AttackSucceeded,
    AttackBlocked,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::AttackSucceeded => "AttackSucceeded",
            Verdict::AttackBlocked => "AttackBlocked",
        })
    }
}

#[derive(Debug, Error)]
pub enum AdversaryError {
    #[error("scenario misconfigured: {0}")]
    ScenarioMisconfigured(String),
    #[error(transparent)]
    Handshake(#[from] HandshakeError),
}

/// Honest roles a scenario needs: a data source, an optional relay on its
/// path and the sink.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScenarioTopology {
    pub source: NodeId,
    pub relay: Option<NodeId>,
    pub sink: NodeId,
}

impl Default for ScenarioTopology {
    /// Ankle to chest through the thigh.
    fn default() -> Self {
        ScenarioTopology { source: 4, relay: Some(5), sink: 1 }
    }
}

impl ScenarioTopology {
    fn validate(&self, scenario: Scenario) -> Result<(), AdversaryError> {
        let mut ids = vec![self.source, self.sink];
        ids.extend(self.relay);
        if ids.contains(&BROADCAST) {
            return Err(AdversaryError::ScenarioMisconfigured("node id 255 is reserved".into()));
        }
        let distinct: BTreeSet<_> = ids.iter().collect();
        if distinct.len() != ids.len() {
            return Err(AdversaryError::ScenarioMisconfigured("source, relay and sink must be distinct".into()));
        }
        if scenario == Scenario::SinkDDoS && self.relay.is_none() {
            return Err(AdversaryError::ScenarioMisconfigured("SinkDDoS needs a relay between source and sink".into()));
        }
        Ok(())
    }

    fn members(&self) -> Vec<NodeId> {
        let mut v = vec![self.source, self.sink];
        v.extend(self.relay);
        v.sort_unstable();
        v
    }

    /// The node the source authenticates with: the sink end to end under
    /// BANZKP, the first hop under BAN-GZKP.
    fn peer(&self, scheme: Scheme) -> NodeId {
        match scheme {
            Scheme::Banzkp => self.sink,
            Scheme::BanGzkp => self.relay.unwrap_or(self.sink),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub scheme: Scheme,
    pub seed: u64,
    pub verdict: Verdict,
    /// One action or reaction per line.
    pub transcript: Vec<String>,
    pub knowledge: KnowledgeSet,
    /// Substring oracle over the final knowledge set.
    pub secret_exposed: bool,
    /// Adversary-originated messages that reached the sink (SinkDDoS only).
    pub sink_adversary_messages: Option<usize>,
}

impl ScenarioReport {
    pub fn transcript_text(&self) -> String {
        let mut s = self.transcript.join("\n");
        s.push('\n');
        s
    }
}

/// Honest nodes of one scenario over a tapped, lossless medium.
struct Testbed {
    scheme: Scheme,
    group: Arc<ModularGroup>,
    keys: NetworkKeys<ModularGroup>,
    nodes: BTreeMap<NodeId, Endpoint<ModularGroup>>,
    honest_rng: ChaCha8Rng,
    now: SimTime,
    log: Vec<String>,
}

impl Testbed {
    fn new(scheme: Scheme, members: &[NodeId], seed: u64) -> Self {
        let group = Arc::new(ModularGroup::default());
        let keys = NetworkKeys::generate(KeyMode::Global, members, &*group, seed);
        let nodes =
            members.iter().map(|&id| (id, Endpoint::new(keys.identity(id), scheme, group.clone(), seed))).collect();
        Testbed {
            scheme,
            group,
            keys,
            nodes,
            honest_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x686f_6e65),
            now: 0,
            log: Vec::new(),
        }
    }

    fn creds(&self, a: NodeId, b: NodeId) -> Credentials<ModularGroup> {
        self.keys.credentials(a, b).expect("members").clone()
    }

    fn reading(&mut self) -> Vec<u8> {
        let mut v = vec![0u8; READING_BYTES];
        self.honest_rng.fill_bytes(&mut v);
        v
    }

    fn node(&mut self, id: NodeId) -> &mut Endpoint<ModularGroup> {
        self.nodes.get_mut(&id).expect("member")
    }

    fn initiate(&mut self, from: NodeId, to: NodeId, data: Vec<u8>) -> ProtocolMessage {
        self.now += TICK;
        let now = self.now;
        let m = self.node(from).initiate(to, data, now).expect("configured peer");
        self.log.push(format!("honest {from} starts session with {to}"));
        m
    }

    /// Delivers `msg` to its receiver and logs the reaction.
    fn deliver(&mut self, msg: &ProtocolMessage, origin: &str) -> Outcome {
        self.now += TICK;
        let now = self.now;
        let out = self.node(msg.receiver).handle(msg, now);
        self.log.push(format!("{origin} {:?} {}->{} {}B", msg.kind, msg.sender, msg.receiver, msg.wire_len()));
        self.log.push(format!("  node {} {}", msg.receiver, describe(&out)));
        out
    }

    /// Runs an exchange starting with `first`, tapping every message.
    /// Stops before delivering a message of kind `stop_before` and returns
    /// it; returns `None` when the exchange ended.
    fn pump(
        &mut self,
        z: &mut KnowledgeSet,
        first: ProtocolMessage,
        stop_before: Option<MessageKind>,
    ) -> (Option<ProtocolMessage>, Option<Outcome>) {
        let mut next = first;
        loop {
            z.intercept(&next, self.now);
            if Some(next.kind) == stop_before {
                self.log.push(format!("tap holds {:?} {}->{}", next.kind, next.sender, next.receiver));
                return (Some(next), None);
            }
            match self.deliver(&next, "wire") {
                Outcome::Send(m) => next = m,
                other => return (None, Some(other)),
            }
        }
    }

    /// An honest, fully tapped session.
    fn tapped_session(&mut self, z: &mut KnowledgeSet, from: NodeId, to: NodeId) -> (Vec<u8>, Vec<ProtocolMessage>) {
        let data = self.reading();
        let start = z.captured.len();
        let first = self.initiate(from, to, data.clone());
        let (_, end) = self.pump(z, first, None);
        debug_assert!(matches!(end, Some(Outcome::Accepted { .. })));
        let msgs = z.captured[start..].iter().map(|c| c.message.clone()).collect();
        (data, msgs)
    }

    fn inject(&mut self, msg: ProtocolMessage, what: &str) -> Outcome {
        self.log.push(format!("Z injects {what}"));
        self.deliver(&msg, "Z")
    }
}

fn describe(out: &Outcome) -> String {
    match out {
        Outcome::Send(m) => format!("replies {:?} {}B", m.kind, m.wire_len()),
        Outcome::Accepted { from, data } => format!("accepts data from {from} ({}B)", data.len()),
        Outcome::Rejected(f) => format!("checking failed: {f}"),
        Outcome::Ignored => "ignores it".to_string(),
    }
}

/// Runs one scripted attack against honest nodes of `scheme`.
pub fn run_scenario(
    scenario: Scenario,
    scheme: Scheme,
    topology: ScenarioTopology,
    seed: u64,
) -> Result<ScenarioReport, AdversaryError> {
    topology.validate(scenario)?;
    let mut tb = Testbed::new(scheme, &topology.members(), seed);
    let mut z = KnowledgeSet::default();
    let mut zrng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a_5a5a);
    let a = topology.source;
    let b = topology.peer(scheme);
    tb.log.push(format!("scenario {scenario} scheme {scheme} seed {seed}"));
    tb.log.push(format!("source {a} peer {b} sink {}", topology.sink));

    let mut ddos_count = None;
    let succeeded = match scenario {
        Scenario::ForgeNode => forge_node(&mut tb, &mut zrng, a, b),
        Scenario::AuthReplayPart1 => auth_replay_part1(&mut tb, &mut z, a, b),
        Scenario::AuthReplayPart2 => auth_replay_part2(&mut tb, &mut z, a, b),
        Scenario::ManInMiddleGuess => man_in_middle_guess(&mut tb, &mut z, a, b),
        Scenario::DataReplay => data_replay(&mut tb, &mut z, a, b),
        Scenario::RedundancyCrack => redundancy_crack(&mut tb, &mut z, a, b),
        Scenario::SinkDDoS => {
            let relay = topology.relay.expect("validated");
            let n = sink_ddos(&mut tb, &mut zrng, a, relay, topology.sink);
            ddos_count = Some(n);
            n > 0
        }
    };
    let verdict = if succeeded { Verdict::AttackSucceeded } else { Verdict::AttackBlocked };
    let creds = tb.creds(a, b);
    let secret_exposed = z.holds_secret(&creds, &*tb.group);
    tb.log.push(format!(
        "knowledge: {} messages, {} keys, {} derived",
        z.captured.len(),
        z.known_keys.len(),
        z.derived_bytes.len()
    ));
    tb.log.push(format!("secret exposed: {secret_exposed}"));
    tb.log.push(format!("verdict {verdict}"));
    Ok(ScenarioReport {
        scenario,
        scheme,
        seed,
        verdict,
        transcript: tb.log,
        knowledge: z,
        secret_exposed,
        sink_adversary_messages: ddos_count,
    })
}

/// Z has no K_I. It forges each message under its own key and random
/// values, continuing only as far as the victim lets it.
fn forge_node(tb: &mut Testbed, zrng: &mut ChaCha8Rng, a: NodeId, b: NodeId) -> bool {
    let k_z = SymmetricKey::random(zrng, 128).expect("non-empty");
    let v_z = tb.group.random_element(zrng);
    let forged = |kind, fields: &[&[u8]], k: &SymmetricKey| ProtocolMessage {
        kind,
        sender: a,
        receiver: b,
        payload: encode_fields(&[&stream_encrypt(k, &encode_fields(fields)).expect("key")]),
    };
    let m1 = forged(MessageKind::Auth1, &[&[a], &tb.group.encode(&v_z)], &k_z);
    if !matches!(tb.inject(m1, "Auth1 under its own key as the source"), Outcome::Send(_)) {
        return false;
    }
    let mut guess = vec![0u8; 25];
    zrng.fill_bytes(&mut guess);
    let m3 = forged(MessageKind::Auth3, &[&[a], &guess], &k_z);
    if !matches!(tb.inject(m3, "Auth3 with a guessed interval"), Outcome::Send(_)) {
        return false;
    }
    let data = forged(MessageKind::Auth5Data, &[&[a], b"forged"], &k_z);
    matches!(tb.inject(data, "forged data"), Outcome::Accepted { .. })
}

/// Honest warm-up: two tapped sessions, so a BAN-GZKP pair has moved to the
/// fast path.
fn warm_up(tb: &mut Testbed, z: &mut KnowledgeSet, a: NodeId, b: NodeId) -> Vec<ProtocolMessage> {
    tb.tapped_session(z, a, b);
    tb.tapped_session(z, a, b).1
}

/// Z replays the source's side of an old session to the peer.
fn auth_replay_part1(tb: &mut Testbed, z: &mut KnowledgeSet, a: NodeId, b: NodeId) -> bool {
    let old = warm_up(tb, z, a, b);
    let upstream: Vec<ProtocolMessage> = old.into_iter().filter(|m| m.sender == a).collect();
    let mut expect_data = false;
    for m in upstream {
        let out = tb.inject(m.clone(), &format!("replay of old {:?}", m.kind));
        match out {
            Outcome::Send(reply) => {
                // The fast path needs the data right after Auth2Opt.
                expect_data = reply.kind == MessageKind::Auth2Opt;
                if expect_data {
                    let data = upstream_data(z, a).expect("captured");
                    let out = tb.inject(data, "old data message in the fast-path slot");
                    return matches!(out, Outcome::Accepted { .. });
                }
            }
            Outcome::Accepted { .. } => return true,
            Outcome::Rejected(_) | Outcome::Ignored => return false,
        }
    }
    expect_data
}

/// The last captured data message from `a`, re-tagged for the fast path.
fn upstream_data(z: &KnowledgeSet, a: NodeId) -> Option<ProtocolMessage> {
    z.captured
        .iter()
        .rev()
        .map(|c| &c.message)
        .find(|m| m.sender == a && m.kind.carries_data())
        .map(|m| ProtocolMessage { kind: MessageKind::Auth3OptData, ..m.clone() })
}

/// Z answers a fresh Auth1 from the source with the peer's old replies.
fn auth_replay_part2(tb: &mut Testbed, z: &mut KnowledgeSet, a: NodeId, b: NodeId) -> bool {
    let old = warm_up(tb, z, a, b);
    let data = tb.reading();
    let first = tb.initiate(a, b, data);
    let stop = match tb.scheme {
        Scheme::Banzkp => MessageKind::Auth2,
        Scheme::BanGzkp => MessageKind::Auth2Opt,
    };
    let (held, _) = tb.pump(z, first, Some(stop));
    if held.is_some() {
        tb.log.push("Z blocks the genuine reply".into());
    }
    for m in old.into_iter().filter(|m| m.sender == b) {
        match tb.inject(m.clone(), &format!("replay of old {:?}", m.kind)) {
            Outcome::Send(reply) if reply.kind.carries_data() => return true,
            Outcome::Send(reply) => {
                tb.log.push(format!("Z blocks {:?}", reply.kind));
            }
            _ => return false,
        }
    }
    false
}

/// Z taps sessions, XORs everything it holds and tries every window of its
/// knowledge as a key against every identity-bearing blob.
fn man_in_middle_guess(tb: &mut Testbed, z: &mut KnowledgeSet, a: NodeId, b: NodeId) -> bool {
    // BAN-GZKP is attacked on the three-message exchange: the first contact
    // happens once, before Z is in place.
    let sessions = match tb.scheme {
        Scheme::Banzkp => 3,
        Scheme::BanGzkp => {
            let data = tb.reading();
            let first = tb.initiate(a, b, data);
            let mut scratch = KnowledgeSet::default();
            tb.pump(&mut scratch, first, None);
            tb.log.push("first contact happens before the tap".into());
            3
        }
    };
    for _ in 0..sessions {
        tb.tapped_session(z, a, b);
    }
    let blobs: Vec<(Vec<u8>, NodeId)> = z
        .captured
        .iter()
        .filter(|c| c.message.kind != MessageKind::Auth4)
        .flat_map(|c| {
            let sender = c.message.sender;
            c.message.fields().unwrap_or_default().into_iter().map(move |f| (f.to_vec(), sender))
        })
        .collect();
    let keys: Vec<Vec<u8>> = z.known_keys.iter().map(|k| k.as_bytes().to_vec()).collect();
    for i in 0..blobs.len() {
        for j in i + 1..blobs.len() {
            z.derive(xor_redundancy(&blobs[i].0, &blobs[j].0));
        }
        for k in &keys {
            z.derive(xor_redundancy(&blobs[i].0, k));
        }
    }
    let candidates = candidate_keys(&z.all_bytes(), DEFAULT_DATA_KEY_BITS, GUESS_BUDGET);
    tb.log.push(format!("Z tries {} candidate keys on {} blobs", candidates.len(), blobs.len()));
    let hit =
        candidates.iter().find_map(|k| blobs.iter().position(|(blob, id)| decrypt_attempt(k, blob, *id).is_some()));
    match hit {
        Some(i) => {
            tb.log.push(format!("  a candidate opened blob {i}"));
            true
        }
        None => {
            tb.log.push("  no candidate opened any blob".into());
            let creds = tb.creds(a, b);
            z.holds_secret(&creds, &*tb.group)
        }
    }
}

/// Z injects an old data message as soon as the peer is waiting for data.
fn data_replay(tb: &mut Testbed, z: &mut KnowledgeSet, a: NodeId, b: NodeId) -> bool {
    let old = warm_up(tb, z, a, b);
    let old_data = old.last().expect("data message").clone();
    let fresh = tb.reading();
    let first = tb.initiate(a, b, fresh);
    let stop = match tb.scheme {
        Scheme::Banzkp => MessageKind::Auth4,
        Scheme::BanGzkp => MessageKind::Auth2Opt,
    };
    let (held, _) = tb.pump(z, first, Some(stop));
    let Some(held) = held else { return false };
    let replay = ProtocolMessage {
        kind: match tb.scheme {
            Scheme::Banzkp => MessageKind::Auth5Data,
            Scheme::BanGzkp => MessageKind::Auth3OptData,
        },
        ..old_data
    };
    let out = tb.inject(replay, "old data message");
    let accepted = matches!(out, Outcome::Accepted { .. });
    tb.log.push(format!("tap releases {:?}", held.kind));
    tb.pump(z, held, None);
    accepted
}

/// Z XORs two captured data ciphertexts and compares with the XOR of the
/// plaintexts the honest source encrypted.
fn redundancy_crack(tb: &mut Testbed, z: &mut KnowledgeSet, a: NodeId, b: NodeId) -> bool {
    let (d1, s1) = tb.tapped_session(z, a, b);
    let (d2, s2) = tb.tapped_session(z, a, b);
    let blob = |s: &[ProtocolMessage]| -> Vec<u8> {
        let m = s.last().expect("data message");
        m.fields().expect("well formed")[0].to_vec()
    };
    let c = xor_redundancy(&blob(&s1), &blob(&s2));
    z.derive(c.clone());
    let m1 = encode_fields(&[&[a], &d1]);
    let m2 = encode_fields(&[&[a], &d2]);
    let m = xor_redundancy(&m1, &m2);
    let equal = c == m;
    tb.log.push(format!("Z computes c1 xor c2 over {}B; equals m1 xor m2: {equal}", c.len()));
    equal
}

/// Z floods the relay with invalid Auth1 messages. A BANZKP relay forwards
/// traffic it cannot check; a BAN-GZKP relay authenticates its own
/// neighbour first and forwards only data it accepted.
fn sink_ddos(tb: &mut Testbed, zrng: &mut ChaCha8Rng, a: NodeId, relay: NodeId, sink: NodeId) -> usize {
    let mut at_sink = 0usize;
    let mut rejected_at_relay = 0usize;
    let mut rejected_at_sink = 0usize;
    for _ in 0..DDOS_INJECTIONS {
        let k = SymmetricKey::random(zrng, 128).expect("non-empty");
        let v = tb.group.random_element(zrng);
        let blob = stream_encrypt(&k, &encode_fields(&[&[a], &tb.group.encode(&v)])).expect("key");
        let payload = encode_fields(&[&blob]);
        match tb.scheme {
            Scheme::Banzkp => {
                // The relay is transparent: the message is addressed to the
                // sink and forwarded unchanged.
                let m = ProtocolMessage { kind: MessageKind::Auth1, sender: a, receiver: sink, payload };
                at_sink += 1;
                tb.now += TICK;
                let now = tb.now;
                if matches!(tb.node(sink).handle(&m, now), Outcome::Rejected(_)) {
                    rejected_at_sink += 1;
                }
            }
            Scheme::BanGzkp => {
                let m = ProtocolMessage { kind: MessageKind::Auth1, sender: a, receiver: relay, payload };
                tb.now += TICK;
                let now = tb.now;
                match tb.node(relay).handle(&m, now) {
                    Outcome::Rejected(_) => rejected_at_relay += 1,
                    // Anything the relay answers stays on the Z-relay link;
                    // only accepted data would be sent on towards the sink.
                    Outcome::Accepted { .. } => at_sink += 1,
                    _ => {}
                }
            }
        }
    }
    tb.log.push(format!("Z injects {DDOS_INJECTIONS} invalid Auth1 at relay {relay}"));
    match tb.scheme {
        Scheme::Banzkp => tb.log.push(format!(
            "  relay {relay} forwards {at_sink}; sink {sink} spends a check on each and rejects {rejected_at_sink}"
        )),
        Scheme::BanGzkp => tb.log.push(format!("  relay {relay} rejects {rejected_at_relay}; forwards {at_sink}")),
    }
    tb.log.push(format!("adversary messages at sink: {at_sink}"));
    at_sink
}

/// Pairs of captured data ciphertexts for which `c1 XOR c2 = m1 XOR m2`,
/// out of `pairs`, each pair from two consecutive honest sessions.
pub fn redundancy_trials(scheme: Scheme, pairs: usize, seed: u64) -> usize {
    let (a, b) = (0, 1);
    let mut tb = Testbed::new(scheme, &[a, b], seed);
    let mut z = KnowledgeSet::default();
    let mut equal = 0;
    for _ in 0..pairs {
        if redundancy_crack(&mut tb, &mut z, a, b) {
            equal += 1;
        }
        // Captures are not needed across trials.
        z.captured.clear();
        z.derived_bytes.clear();
        tb.log.clear();
    }
    equal
}

/// Injects an arbitrary payload as node 0 into a fresh node 1 and returns
/// the victim's reaction.
pub fn inject_raw(scheme: Scheme, kind: MessageKind, payload: Vec<u8>, seed: u64) -> Outcome {
    let mut tb = Testbed::new(scheme, &[0, 1], seed);
    tb.inject(ProtocolMessage { kind, sender: 0, receiver: 1, payload }, "raw payload")
}

/// The checking failure behind a rejection, if any.
pub fn is_checking_failure(out: &Outcome) -> Option<CheckFailure> {
    match out {
        Outcome::Rejected(f) => Some(*f),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xor_of_equal_inputs_is_zero_and_truncates() {
        assert_eq!(xor_redundancy(&[1, 2, 3], &[1, 2, 3]), vec![0, 0, 0]);
        assert_eq!(xor_redundancy(&[0xF0, 1], &[0x0F]), vec![0xFF]);
    }

    #[test]
    fn tap_on_a_full_session_captures_five_and_k_cs() {
        let mut tb = Testbed::new(Scheme::Banzkp, &[0, 1], 1);
        let mut z = KnowledgeSet::default();
        tb.tapped_session(&mut z, 0, 1);
        assert_eq!(z.captured.len(), 5);
        assert_eq!(z.known_keys.len(), 1);
        let k_cs = z.last(MessageKind::Auth4).unwrap().fields().unwrap()[0].to_vec();
        assert_eq!(z.known_keys[0].as_bytes(), &k_cs[..]);
        assert_eq!(z.known_ids, BTreeSet::from([0, 1]));
    }

    #[test]
    fn fast_path_tap_holds_three_messages_and_no_keys() {
        let mut tb = Testbed::new(Scheme::BanGzkp, &[0, 1], 2);
        tb.tapped_session(&mut KnowledgeSet::default(), 0, 1);
        let mut z = KnowledgeSet::default();
        tb.tapped_session(&mut z, 0, 1);
        assert_eq!(z.captured.len(), 3);
        assert!(z.known_keys.is_empty());
    }

    #[test]
    fn injected_messages_fail_checking() {
        for scheme in [Scheme::Banzkp, Scheme::BanGzkp] {
            let out = inject_raw(scheme, MessageKind::Auth1, vec![], 3);
            assert_eq!(is_checking_failure(&out), Some(CheckFailure::Undecryptable));
            let junk = encode_fields(&[&[7u8; 40]]);
            assert!(is_checking_failure(&inject_raw(scheme, MessageKind::Auth1, junk, 3)).is_some());
        }
    }

    #[test]
    fn replayed_auth1_is_answered_then_the_attack_dies() {
        for scheme in [Scheme::Banzkp, Scheme::BanGzkp] {
            let r = run_scenario(Scenario::AuthReplayPart1, scheme, ScenarioTopology::default(), 4).unwrap();
            assert_eq!(r.verdict, Verdict::AttackBlocked);
            let answered = r.transcript.iter().any(|l| l.contains("replies Auth2"));
            let failed = r.transcript.iter().any(|l| l.contains("checking failed"));
            assert!(answered && failed, "{}", r.transcript_text());
        }
    }

    #[test]
    fn sink_ddos_needs_a_relay() {
        let topo = ScenarioTopology { relay: None, ..Default::default() };
        assert!(matches!(
            run_scenario(Scenario::SinkDDoS, Scheme::Banzkp, topo, 0),
            Err(AdversaryError::ScenarioMisconfigured(_))
        ));
        assert!(run_scenario(Scenario::DataReplay, Scheme::Banzkp, topo, 0).is_ok());
    }

    #[test]
    fn candidate_windows_slide_by_one_bit() {
        let keys = candidate_keys(&[0b1000_0000, 0, 0], 8, 100);
        assert_eq!(keys.len(), 17);
        assert_eq!(keys[0].as_bytes(), &[0b1000_0000]);
        assert_eq!(keys[1].as_bytes(), &[0]);
        assert_eq!(candidate_keys(&[0; 4], 8, 5).len(), 5);
    }
}
