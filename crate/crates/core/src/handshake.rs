//! BANZKP and BAN-GZKP authentication state machines.
//!
//! An [`Endpoint`] owns one node's credentials, its session tables and the
//! table of peers it has fully authenticated before. Sessions are keyed by
//! ordered pair: at most one live session per (initiator, responder).
//!
//! Full exchange (both schemes on first contact):
//!
//! ```text
//! 1) I -> R  E(K_I[ID_I || V^p])
//! 2) I <- R  E(K_I[ID_R || V^q || RI]), E(K_CS[V_RI^(p*q)])
//! 3) I -> R  E(K_I[ID_I || V_RI^(q*p)])
//! 4) I <- R  K_CS
//! 5) I -> R  E(K[ID_I || DATA])        K = K_I (BANZKP) or K_R (BAN-GZKP)
//! ```
//!
//! BAN-GZKP fast path, once the responder has completed a full exchange with
//! this initiator:
//!
//! ```text
//! 1) I -> R  E(K_I[ID_I || V^p])
//! 2) I <- R  E(K_I[ID_R || V^q || RI || R || V_RI^(p*q)])
//! 3) I -> R  E(K_R[ID_I || DATA])
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::zkp_math::{
    random_pointer, stream_encrypt, BitString, CyclicGroup, GroupParams, IntervalPointer, MathError, ModularGroup,
    SymmetricKey,
};

pub type NodeId = u8;

/// Receiver id used when one Auth1 is addressed to several neighbours.
pub const BROADCAST: NodeId = 255;

/// Simulated time in nanoseconds.
pub type SimTime = u64;

pub const DEFAULT_TIMEOUT: SimTime = 500_000_000;
pub const DEFAULT_INITIAL_KEY_BITS: usize = 128;
pub const COMMIT_KEY_BITS: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Banzkp,
    BanGzkp,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Banzkp => "BANZKP",
            Scheme::BanGzkp => "BAN_GZKP",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "BANZKP" => Ok(Scheme::Banzkp),
            "BAN_GZKP" | "BANGZKP" | "GZKP" => Ok(Scheme::BanGzkp),
            other => Err(format!("unknown scheme {other}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Initiator,
    Responder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKind {
    Auth1,
    Auth2,
    Auth3,
    Auth4,
    Auth5Data,
    Auth2Opt,
    Auth3OptData,
}

impl MessageKind {
    pub fn tag(self) -> u8 {
        match self {
            MessageKind::Auth1 => 0x01,
            MessageKind::Auth2 => 0x02,
            MessageKind::Auth3 => 0x03,
            MessageKind::Auth4 => 0x04,
            MessageKind::Auth5Data => 0x05,
            MessageKind::Auth2Opt => 0x12,
            MessageKind::Auth3OptData => 0x13,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0x01 => MessageKind::Auth1,
            0x02 => MessageKind::Auth2,
            0x03 => MessageKind::Auth3,
            0x04 => MessageKind::Auth4,
            0x05 => MessageKind::Auth5Data,
            0x12 => MessageKind::Auth2Opt,
            0x13 => MessageKind::Auth3OptData,
            _ => return None,
        })
    }

    /// Position of this message in its exchange (1-based).
    pub fn phase(self) -> u8 {
        match self {
            MessageKind::Auth1 => 1,
            MessageKind::Auth2 | MessageKind::Auth2Opt => 2,
            MessageKind::Auth3 | MessageKind::Auth3OptData => 3,
            MessageKind::Auth4 => 4,
            MessageKind::Auth5Data => 5,
        }
    }

    /// Messages that carry application data.
    pub fn carries_data(self) -> bool {
        matches!(self, MessageKind::Auth5Data | MessageKind::Auth3OptData)
    }

    /// Messages travelling from responder back to initiator.
    pub fn is_downstream(self) -> bool {
        matches!(self, MessageKind::Auth2 | MessageKind::Auth4 | MessageKind::Auth2Opt)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("message shorter than its header")]
    Truncated,
    #[error("unknown message tag {0:#04x}")]
    UnknownTag(u8),
}

/// A protocol message as it appears on the wire: a tag byte, sender and
/// receiver id bytes, then the payload, which is a sequence of fields each
/// prefixed with a 2-byte big-endian length.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ProtocolMessage {
    pub kind: MessageKind,
    pub sender: NodeId,
    pub receiver: NodeId,
    pub payload: Vec<u8>,
}

impl fmt::Debug for ProtocolMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}({} -> {}, {} bytes)", self.kind, self.sender, self.receiver, self.payload.len())
    }
}

impl ProtocolMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(3 + self.payload.len());
        out.push(self.kind.tag());
        out.push(self.sender);
        out.push(self.receiver);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < 3 {
            return Err(CodecError::Truncated);
        }
        let kind = MessageKind::from_tag(bytes[0]).ok_or(CodecError::UnknownTag(bytes[0]))?;
        Ok(ProtocolMessage { kind, sender: bytes[1], receiver: bytes[2], payload: bytes[3..].to_vec() })
    }

    pub fn wire_len(&self) -> usize {
        3 + self.payload.len()
    }

    /// The top-level payload fields (ciphertext blobs or plaintext values).
    pub fn fields(&self) -> Option<Vec<&[u8]>> {
        decode_fields(&self.payload)
    }
}

pub fn encode_fields(fields: &[&[u8]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(fields.iter().map(|f| f.len() + 2).sum());
    for field in fields {
        let len = u16::try_from(field.len()).expect("field longer than 65535 bytes");
        out.extend_from_slice(&len.to_be_bytes());
        out.extend_from_slice(field);
    }
    out
}

/// Splits a length-prefixed field sequence. Fails unless the input is
/// consumed exactly.
pub fn decode_fields(mut bytes: &[u8]) -> Option<Vec<&[u8]>> {
    let mut fields = Vec::new();
    while !bytes.is_empty() {
        if bytes.len() < 2 {
            return None;
        }
        let len = u16::from_be_bytes([bytes[0], bytes[1]]) as usize;
        bytes = &bytes[2..];
        if bytes.len() < len {
            return None;
        }
        fields.push(&bytes[..len]);
        bytes = &bytes[len..];
    }
    Some(fields)
}

/// Why a received message failed its check.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum CheckFailure {
    #[error("payload does not decode under the expected key")]
    Undecryptable,
    #[error("sender is not a configured peer")]
    UnknownPeer,
    #[error("embedded identity does not match the sender")]
    WrongIdentity,
    #[error("challenge interval mismatch")]
    IntervalMismatch,
    #[error("commitment does not open to our interval")]
    CommitmentMismatch,
    #[error("message not expected in the current phase")]
    UnexpectedPhase,
    #[error("fast path requested for an unknown peer")]
    PeerNotKnown,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HandshakeError {
    #[error("checking failed: {0}")]
    CheckingFailed(CheckFailure),
    #[error("no live session for this message")]
    NoSession,
    #[error(transparent)]
    Math(#[from] MathError),
}

impl From<CheckFailure> for HandshakeError {
    fn from(f: CheckFailure) -> Self {
        HandshakeError::CheckingFailed(f)
    }
}

/// Pre-shared material for one pair of nodes.
pub struct Credentials<G: CyclicGroup = ModularGroup> {
    pub initial_key: SymmetricKey,
    pub shared_secret: G::Element,
}

impl<G: CyclicGroup> Clone for Credentials<G> {
    fn clone(&self) -> Self {
        Credentials { initial_key: self.initial_key.clone(), shared_secret: self.shared_secret.clone() }
    }
}

impl<G: CyclicGroup> PartialEq for Credentials<G> {
    fn eq(&self, other: &Self) -> bool {
        self.initial_key == other.initial_key && self.shared_secret == other.shared_secret
    }
}

impl<G: CyclicGroup> Eq for Credentials<G> {}

impl<G: CyclicGroup> fmt::Debug for Credentials<G> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Credentials(..)")
    }
}

impl<G: CyclicGroup> Credentials<G> {
    pub fn generate(rng: &mut dyn RngCore, group: &G) -> Self {
        Credentials {
            initial_key: SymmetricKey::random(rng, DEFAULT_INITIAL_KEY_BITS).expect("non-empty key"),
            shared_secret: group.random_element(rng),
        }
    }
}

/// Which pre-shared keys a node holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KeyMode {
    /// One K_I and V for the whole network.
    Global,
    /// Independent K_I and V per unordered pair of nodes.
    Pairwise,
}

/// Credentials for every node in a network, as installed at deployment.
#[derive(Clone, Debug)]
pub struct NetworkKeys<G: CyclicGroup = ModularGroup> {
    mode: KeyMode,
    members: Vec<NodeId>,
    global: Option<Credentials<G>>,
    pairs: BTreeMap<(NodeId, NodeId), Credentials<G>>,
}

impl<G: CyclicGroup> NetworkKeys<G> {
    pub fn generate(mode: KeyMode, members: &[NodeId], group: &G, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6b65_7973);
        let mut keys = NetworkKeys { mode, members: members.to_vec(), global: None, pairs: BTreeMap::new() };
        match mode {
            KeyMode::Global => keys.global = Some(Credentials::generate(&mut rng, group)),
            KeyMode::Pairwise => {
                for (i, &a) in members.iter().enumerate() {
                    for &b in &members[i + 1..] {
                        keys.pairs.insert(pair_key(a, b), Credentials::generate(&mut rng, group));
                    }
                }
            }
        }
        keys
    }

    pub fn mode(&self) -> KeyMode {
        self.mode
    }

    pub fn members(&self) -> &[NodeId] {
        &self.members
    }

    pub fn credentials(&self, a: NodeId, b: NodeId) -> Option<&Credentials<G>> {
        if !self.members.contains(&a) || !self.members.contains(&b) {
            return None;
        }
        match self.mode {
            KeyMode::Global => self.global.as_ref(),
            KeyMode::Pairwise => self.pairs.get(&pair_key(a, b)),
        }
    }

    /// The keyring installed on node `id`.
    pub fn identity(&self, id: NodeId) -> NodeIdentity<G> {
        let mut peers = BTreeMap::new();
        for &m in &self.members {
            if m != id {
                if let Some(c) = self.credentials(id, m) {
                    peers.insert(m, c.clone());
                }
            }
        }
        NodeIdentity { id, peers }
    }
}

fn pair_key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    (a.min(b), a.max(b))
}

/// A node's id and the credentials it shares with each configured peer.
#[derive(Clone, Debug)]
pub struct NodeIdentity<G: CyclicGroup = ModularGroup> {
    pub id: NodeId,
    pub peers: BTreeMap<NodeId, Credentials<G>>,
}

impl<G: CyclicGroup> NodeIdentity<G> {
    pub fn new(id: NodeId) -> Self {
        NodeIdentity { id, peers: BTreeMap::new() }
    }

    pub fn with_peer(mut self, peer: NodeId, creds: Credentials<G>) -> Self {
        self.peers.insert(peer, creds);
        self
    }
}

/// Work performed by one side of a session.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    /// Modular exponentiations ("big number multiplications").
    pub exponentiations: u32,
    pub encryptions: u32,
    pub decryptions: u32,
    pub messages_sent: u32,
}

impl Counters {
    /// Cipher operations; each encryption is paired with one decryption
    /// on the honest path.
    pub fn enc_dec_ops(&self) -> u32 {
        self.encryptions
    }
}

impl std::ops::Add for Counters {
    type Output = Counters;

    fn add(self, o: Counters) -> Counters {
        Counters {
            exponentiations: self.exponentiations + o.exponentiations,
            encryptions: self.encryptions + o.encryptions,
            decryptions: self.decryptions + o.decryptions,
            messages_sent: self.messages_sent + o.messages_sent,
        }
    }
}

impl std::ops::AddAssign for Counters {
    fn add_assign(&mut self, o: Counters) {
        *self = *self + o;
    }
}

/// Per ordered pair authentication state.
#[derive(Clone)]
pub struct SessionState<G: CyclicGroup = ModularGroup> {
    pub role: Role,
    pub scheme: Scheme,
    /// Last phase sent or received (1..=5).
    pub phase: u8,
    pub peer: NodeId,
    pub my_nonce: G::Exponent,
    pub peer_public: Option<G::Element>,
    pub session_secret: Option<G::Element>,
    pub ri: Option<IntervalPointer>,
    pub r: Option<IntervalPointer>,
    pub k_cs: Option<SymmetricKey>,
    pub k_r: Option<SymmetricKey>,
    pub pending_commitment: Option<Vec<u8>>,
    /// Our own view of V_RI^(p*q).
    pub interval: Option<BitString>,
    /// True when this session runs the three-message exchange.
    pub fast_path: bool,
    pub timeout_deadline: SimTime,
    pub counters: Counters,
    data: Option<Vec<u8>>,
    group: Option<u64>,
}

impl<G: CyclicGroup> fmt::Debug for SessionState<G> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SessionState")
            .field("role", &self.role)
            .field("scheme", &self.scheme)
            .field("phase", &self.phase)
            .field("peer", &self.peer)
            .field("fast_path", &self.fast_path)
            .field("deadline", &self.timeout_deadline)
            .field("counters", &self.counters)
            .finish()
    }
}

impl<G: CyclicGroup> SessionState<G> {
    /// Data queued by an initiator and not yet sent.
    pub fn queued_data(&self) -> Option<&[u8]> {
        self.data.as_deref()
    }
}

/// What the endpoint did with an incoming message.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    /// Send this message next. When it carries data, the local initiator
    /// side of the session is complete.
    Send(ProtocolMessage),
    /// The responder accepted a data message; its session is complete.
    Accepted { from: NodeId, data: Vec<u8> },
    /// Checking failed: the message was dropped and the session closed.
    Rejected(CheckFailure),
    /// No session expects this message; dropped without state change.
    Ignored,
}

/// A completed session, reported for instrumentation.
#[derive(Clone, Debug)]
pub struct CompletedSession<G: CyclicGroup = ModularGroup> {
    pub role: Role,
    pub peer: NodeId,
    pub scheme: Scheme,
    pub fast_path: bool,
    pub messages: u8,
    pub counters: Counters,
    pub session_secret: G::Element,
    pub data_key: Option<SymmetricKey>,
}

/// A session closed because its deadline passed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Expired {
    pub role: Role,
    pub peer: NodeId,
    pub lost_data: Option<Vec<u8>>,
}

/// One node's authentication engine.
pub struct Endpoint<G: CyclicGroup = ModularGroup> {
    identity: NodeIdentity<G>,
    scheme: Scheme,
    group: Arc<G>,
    rng: ChaCha8Rng,
    timeout: SimTime,
    known_peers: HashSet<NodeId>,
    initiated: HashMap<NodeId, SessionState<G>>,
    responding: HashMap<NodeId, SessionState<G>>,
    completed: Vec<CompletedSession<G>>,
    totals: Counters,
    next_group: u64,
}

impl<G: CyclicGroup> fmt::Debug for Endpoint<G> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Endpoint")
            .field("id", &self.identity.id)
            .field("scheme", &self.scheme)
            .field("live_initiated", &self.initiated.len())
            .field("live_responding", &self.responding.len())
            .finish()
    }
}

impl<G: CyclicGroup> Endpoint<G> {
    pub fn new(identity: NodeIdentity<G>, scheme: Scheme, group: Arc<G>, seed: u64) -> Self {
        let stream = seed ^ (u64::from(identity.id) << 56) ^ 0x656e_6470;
        Endpoint {
            identity,
            scheme,
            group,
            rng: ChaCha8Rng::seed_from_u64(stream),
            timeout: DEFAULT_TIMEOUT,
            known_peers: HashSet::new(),
            initiated: HashMap::new(),
            responding: HashMap::new(),
            completed: Vec::new(),
            totals: Counters::default(),
            next_group: 0,
        }
    }

    pub fn with_timeout(mut self, timeout: SimTime) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn id(&self) -> NodeId {
        self.identity.id
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn params(&self) -> &GroupParams {
        self.group.params()
    }

    pub fn group(&self) -> &G {
        &self.group
    }

    pub fn timeout(&self) -> SimTime {
        self.timeout
    }

    /// Whether this node has completed a full exchange with `peer` acting
    /// as initiator, enabling the fast path for that peer's next session.
    pub fn knows_peer(&self, peer: NodeId) -> bool {
        self.known_peers.contains(&peer)
    }

    pub fn mark_known(&mut self, peer: NodeId) {
        self.known_peers.insert(peer);
    }

    pub fn initiated_session(&self, peer: NodeId) -> Option<&SessionState<G>> {
        self.initiated.get(&peer)
    }

    pub fn responding_session(&self, initiator: NodeId) -> Option<&SessionState<G>> {
        self.responding.get(&initiator)
    }

    pub fn live_sessions(&self) -> usize {
        self.initiated.len() + self.responding.len()
    }

    /// Completed sessions since the last call.
    pub fn drain_completed(&mut self) -> Vec<CompletedSession<G>> {
        std::mem::take(&mut self.completed)
    }

    /// Lifetime work counters.
    pub fn totals(&self) -> Counters {
        self.totals
    }

    fn creds(&self, peer: NodeId) -> Result<&Credentials<G>, CheckFailure> {
        self.identity.peers.get(&peer).ok_or(CheckFailure::UnknownPeer)
    }

    fn bump(&mut self, c: &mut Counters, exps: u32, enc: u32, dec: u32, sent: u32) {
        c.exponentiations += exps;
        c.encryptions += enc;
        c.decryptions += dec;
        c.messages_sent += sent;
        self.totals.exponentiations += exps;
        self.totals.encryptions += enc;
        self.totals.decryptions += dec;
        self.totals.messages_sent += sent;
    }

    fn fresh_session(&mut self, role: Role, peer: NodeId, nonce: G::Exponent, now: SimTime) -> SessionState<G> {
        SessionState {
            role,
            scheme: self.scheme,
            phase: 0,
            peer,
            my_nonce: nonce,
            peer_public: None,
            session_secret: None,
            ri: None,
            r: None,
            k_cs: None,
            k_r: None,
            pending_commitment: None,
            interval: None,
            fast_path: false,
            timeout_deadline: now + self.timeout,
            counters: Counters::default(),
            data: None,
            group: None,
        }
    }

    /// Starts a session with `peer` for one data payload and returns Auth1.
    /// Any incomplete session this node had initiated towards `peer` is
    /// abandoned.
    pub fn initiate(&mut self, peer: NodeId, data: Vec<u8>, now: SimTime) -> Result<ProtocolMessage, HandshakeError> {
        let group = Arc::clone(&self.group);
        let creds = self.creds(peer)?.clone();
        let nonce = group.random_exponent(&mut self.rng);
        let my_public = group.pow(&creds.shared_secret, &nonce)?;
        let mut session = self.fresh_session(Role::Initiator, peer, nonce, now);
        let id = [self.id()];
        let inner = encode_fields(&[&id, &group.encode(&my_public)]);
        let blob = stream_encrypt(&creds.initial_key, &inner)?;
        let mut c = Counters::default();
        self.bump(&mut c, 1, 1, 0, 1);
        session.counters = c;
        session.phase = 1;
        session.data = Some(data);
        self.initiated.insert(peer, session);
        Ok(ProtocolMessage {
            kind: MessageKind::Auth1,
            sender: self.id(),
            receiver: peer,
            payload: encode_fields(&[&blob]),
        })
    }

    /// Starts one session per candidate next hop with a single broadcast
    /// Auth1. All candidates must share this node's initial key and secret.
    /// The first session to complete claims the data; its siblings are
    /// closed at that moment.
    pub fn initiate_group(
        &mut self,
        peers: &[NodeId],
        data: Vec<u8>,
        now: SimTime,
    ) -> Result<ProtocolMessage, HandshakeError> {
        let group = Arc::clone(&self.group);
        let first = *peers.first().ok_or(CheckFailure::UnknownPeer)?;
        let creds = self.creds(first)?.clone();
        for &p in peers {
            if *self.creds(p)? != creds {
                return Err(CheckFailure::UnknownPeer.into());
            }
        }
        let nonce = group.random_exponent(&mut self.rng);
        let my_public = group.pow(&creds.shared_secret, &nonce)?;
        let id = [self.id()];
        let inner = encode_fields(&[&id, &group.encode(&my_public)]);
        let blob = stream_encrypt(&creds.initial_key, &inner)?;
        let mut c = Counters::default();
        self.bump(&mut c, 1, 1, 0, 1);
        let group = self.next_group;
        self.next_group += 1;
        for &p in peers {
            let mut s = self.fresh_session(Role::Initiator, p, nonce.clone(), now);
            s.counters = c;
            s.phase = 1;
            s.data = Some(data.clone());
            s.group = Some(group);
            self.initiated.insert(p, s);
        }
        Ok(ProtocolMessage {
            kind: MessageKind::Auth1,
            sender: self.id(),
            receiver: BROADCAST,
            payload: encode_fields(&[&blob]),
        })
    }

    /// Dispatches an incoming message to the step that expects it.
    pub fn handle(&mut self, msg: &ProtocolMessage, now: SimTime) -> Outcome {
        if msg.receiver != self.id() && !(msg.receiver == BROADCAST && msg.kind == MessageKind::Auth1) {
            return Outcome::Ignored;
        }
        let result = match msg.kind {
            MessageKind::Auth1 => {
                let fast = self.scheme == Scheme::BanGzkp && self.knows_peer(msg.sender);
                if fast {
                    self.respond_opt(msg, now)
                } else {
                    self.respond_full(msg, now)
                }
            }
            MessageKind::Auth2 => self.challenge_reply(msg, now),
            MessageKind::Auth3 => self.verify_and_commit(msg, now),
            MessageKind::Auth4 => self.confirm_and_send_data(msg, now),
            MessageKind::Auth2Opt => self.finish_opt_and_send_data(msg, now),
            MessageKind::Auth5Data | MessageKind::Auth3OptData => {
                return match self.receive_data(msg, now) {
                    Ok(data) => Outcome::Accepted { from: msg.sender, data },
                    Err(HandshakeError::CheckingFailed(f)) => Outcome::Rejected(f),
                    Err(_) => Outcome::Ignored,
                }
            }
        };
        match result {
            Ok(reply) => Outcome::Send(reply),
            Err(HandshakeError::CheckingFailed(f)) => Outcome::Rejected(f),
            Err(_) => Outcome::Ignored,
        }
    }

    /// Decrypts the single K_I blob of an Auth1 and returns the initiator's
    /// public value.
    fn open_auth1(&mut self, msg: &ProtocolMessage, counters: &mut Counters) -> Result<G::Element, HandshakeError> {
        let group = Arc::clone(&self.group);
        let creds = self.creds(msg.sender)?.clone();
        let fields = msg.fields().ok_or(CheckFailure::Undecryptable)?;
        let [blob] = fields[..] else {
            return Err(CheckFailure::Undecryptable.into());
        };
        self.bump(counters, 0, 0, 1, 0);
        let inner = stream_encrypt(&creds.initial_key, blob)?;
        let parts = decode_fields(&inner).ok_or(CheckFailure::Undecryptable)?;
        let [id, public] = parts[..] else {
            return Err(CheckFailure::Undecryptable.into());
        };
        if id != [msg.sender] {
            return Err(CheckFailure::WrongIdentity.into());
        }
        let public = group.decode(public).map_err(|_| CheckFailure::Undecryptable)?;
        Ok(public)
    }

    /// Responder, step 2 of the full exchange.
    pub fn respond_full(&mut self, msg: &ProtocolMessage, now: SimTime) -> Result<ProtocolMessage, HandshakeError> {
        let group = Arc::clone(&self.group);
        let initiator = msg.sender;
        // A valid Auth1 replaces any incomplete session from this initiator
        // when the new session is inserted; an invalid one leaves it alone.
        let mut c = Counters::default();
        let peer_public = self.open_auth1(msg, &mut c)?;
        let creds = self.creds(initiator)?.clone();
        let q = group.random_exponent(&mut self.rng);
        let my_public = group.pow(&creds.shared_secret, &q)?;
        let secret = group.pow(&peer_public, &q)?;
        self.bump(&mut c, 2, 0, 0, 0);
        let ri = random_pointer(&mut self.rng, group.params());
        let interval = group.interval(&secret, ri)?;
        let k_cs = SymmetricKey::random(&mut self.rng, COMMIT_KEY_BITS)?;

        let id = [self.id()];
        let inner = encode_fields(&[&id, &group.encode(&my_public), &ri.to_be_bytes()]);
        let blob = stream_encrypt(&creds.initial_key, &inner)?;
        let commitment = stream_encrypt(&k_cs, &encode_fields(&[interval.as_bytes()]))?;
        self.bump(&mut c, 0, 2, 0, 1);

        let mut s = self.fresh_session(Role::Responder, initiator, q, now);
        s.phase = 2;
        s.peer_public = Some(peer_public);
        s.session_secret = Some(secret);
        s.ri = Some(ri);
        s.interval = Some(interval);
        s.k_cs = Some(k_cs);
        s.counters = c;
        self.responding.insert(initiator, s);
        Ok(ProtocolMessage {
            kind: MessageKind::Auth2,
            sender: self.id(),
            receiver: initiator,
            payload: encode_fields(&[&blob, &commitment]),
        })
    }

    /// Responder, step 2 of the fast path. Only valid for a known peer.
    pub fn respond_opt(&mut self, msg: &ProtocolMessage, now: SimTime) -> Result<ProtocolMessage, HandshakeError> {
        let group = Arc::clone(&self.group);
        let initiator = msg.sender;
        if self.scheme != Scheme::BanGzkp || !self.knows_peer(initiator) {
            return Err(CheckFailure::PeerNotKnown.into());
        }
        let mut c = Counters::default();
        let peer_public = self.open_auth1(msg, &mut c)?;
        let creds = self.creds(initiator)?.clone();
        let q = group.random_exponent(&mut self.rng);
        let my_public = group.pow(&creds.shared_secret, &q)?;
        let secret = group.pow(&peer_public, &q)?;
        self.bump(&mut c, 2, 0, 0, 0);
        let ri = random_pointer(&mut self.rng, group.params());
        let r = random_pointer(&mut self.rng, group.params());
        let interval = group.interval(&secret, ri)?;
        let k_r = group.data_key(&secret, r)?;

        let id = [self.id()];
        let inner =
            encode_fields(&[&id, &group.encode(&my_public), &ri.to_be_bytes(), &r.to_be_bytes(), interval.as_bytes()]);
        let blob = stream_encrypt(&creds.initial_key, &inner)?;
        self.bump(&mut c, 0, 1, 0, 1);

        let mut s = self.fresh_session(Role::Responder, initiator, q, now);
        s.phase = 2;
        s.fast_path = true;
        s.peer_public = Some(peer_public);
        s.session_secret = Some(secret);
        s.ri = Some(ri);
        s.r = Some(r);
        s.interval = Some(interval);
        s.k_r = Some(k_r);
        s.counters = c;
        self.responding.insert(initiator, s);
        Ok(ProtocolMessage {
            kind: MessageKind::Auth2Opt,
            sender: self.id(),
            receiver: initiator,
            payload: encode_fields(&[&blob]),
        })
    }

    fn take_initiated(&mut self, peer: NodeId, phase: u8) -> Result<SessionState<G>, HandshakeError> {
        match self.initiated.get(&peer) {
            None => Err(HandshakeError::NoSession),
            Some(s) if s.phase != phase => Err(HandshakeError::NoSession),
            Some(_) => Ok(self.initiated.remove(&peer).expect("present")),
        }
    }

    fn take_responding(&mut self, peer: NodeId, phase: u8) -> Result<SessionState<G>, HandshakeError> {
        match self.responding.get(&peer) {
            None => Err(HandshakeError::NoSession),
            Some(s) if s.phase != phase => Err(HandshakeError::NoSession),
            Some(_) => Ok(self.responding.remove(&peer).expect("present")),
        }
    }

    /// Initiator, step 3 of the full exchange.
    pub fn challenge_reply(&mut self, msg: &ProtocolMessage, now: SimTime) -> Result<ProtocolMessage, HandshakeError> {
        let group = Arc::clone(&self.group);
        let peer = msg.sender;
        let mut s = self.take_initiated(peer, 1)?;
        let creds = self.creds(peer)?.clone();
        let step = (|| -> Result<(G::Element, IntervalPointer, Vec<u8>), HandshakeError> {
            let fields = msg.fields().ok_or(CheckFailure::Undecryptable)?;
            let [blob, commitment] = fields[..] else {
                return Err(CheckFailure::Undecryptable.into());
            };
            self.bump(&mut s.counters, 0, 0, 1, 0);
            let inner = stream_encrypt(&creds.initial_key, blob)?;
            let parts = decode_fields(&inner).ok_or(CheckFailure::Undecryptable)?;
            let [id, public, ri] = parts[..] else {
                return Err(CheckFailure::Undecryptable.into());
            };
            if id != [peer] {
                return Err(CheckFailure::WrongIdentity.into());
            }
            let public = group.decode(public).map_err(|_| CheckFailure::Undecryptable)?;
            let ri: [u8; 2] = ri.try_into().map_err(|_| CheckFailure::Undecryptable)?;
            let ri = IntervalPointer::from_be_bytes(ri, group.params()).map_err(|_| CheckFailure::Undecryptable)?;
            Ok((public, ri, commitment.to_vec()))
        })();
        let (peer_public, ri, commitment) = match step {
            Ok(v) => v,
            Err(e) => {
                self.close_group(&s);
                return Err(e);
            }
        };
        let secret = group.pow(&peer_public, &s.my_nonce)?;
        self.bump(&mut s.counters, 1, 0, 0, 0);
        let interval = group.interval(&secret, ri)?;
        let id = [self.id()];
        let inner = encode_fields(&[&id, interval.as_bytes()]);
        let blob = stream_encrypt(&creds.initial_key, &inner)?;
        self.bump(&mut s.counters, 0, 1, 0, 1);
        s.phase = 3;
        s.peer_public = Some(peer_public);
        s.session_secret = Some(secret);
        s.ri = Some(ri);
        s.interval = Some(interval);
        s.pending_commitment = Some(commitment);
        s.timeout_deadline = now + self.timeout;
        self.initiated.insert(peer, s);
        Ok(ProtocolMessage {
            kind: MessageKind::Auth3,
            sender: self.id(),
            receiver: peer,
            payload: encode_fields(&[&blob]),
        })
    }

    /// Responder, step 4: reveal K_CS if the initiator's interval matches.
    pub fn verify_and_commit(
        &mut self,
        msg: &ProtocolMessage,
        now: SimTime,
    ) -> Result<ProtocolMessage, HandshakeError> {
        let group = Arc::clone(&self.group);
        let peer = msg.sender;
        let mut s = self.take_responding(peer, 2)?;
        if s.fast_path {
            return Err(CheckFailure::UnexpectedPhase.into());
        }
        let creds = self.creds(peer)?.clone();
        let fields = msg.fields().ok_or(CheckFailure::Undecryptable)?;
        let [blob] = fields[..] else {
            return Err(CheckFailure::Undecryptable.into());
        };
        self.bump(&mut s.counters, 0, 0, 1, 0);
        let inner = stream_encrypt(&creds.initial_key, blob)?;
        let parts = decode_fields(&inner).ok_or(CheckFailure::Undecryptable)?;
        let [id, interval] = parts[..] else {
            return Err(CheckFailure::Undecryptable.into());
        };
        if id != [peer] {
            return Err(CheckFailure::WrongIdentity.into());
        }
        let mine = s.interval.as_ref().expect("set in step 2");
        if interval != mine.as_bytes() {
            return Err(CheckFailure::IntervalMismatch.into());
        }
        let k_cs = s.k_cs.clone().expect("set in step 2");
        if self.scheme == Scheme::BanGzkp {
            let secret = s.session_secret.as_ref().expect("set in step 2");
            let pointer = IntervalPointer::from_key(&k_cs, group.params());
            s.r = Some(pointer);
            s.k_r = Some(group.data_key(secret, pointer)?);
        }
        self.bump(&mut s.counters, 0, 0, 0, 1);
        s.phase = 4;
        s.timeout_deadline = now + self.timeout;
        self.responding.insert(peer, s);
        Ok(ProtocolMessage {
            kind: MessageKind::Auth4,
            sender: self.id(),
            receiver: peer,
            payload: encode_fields(&[k_cs.as_bytes()]),
        })
    }

    /// Initiator, step 5: open the commitment and send the data.
    pub fn confirm_and_send_data(
        &mut self,
        msg: &ProtocolMessage,
        now: SimTime,
    ) -> Result<ProtocolMessage, HandshakeError> {
        let group = Arc::clone(&self.group);
        let _ = now;
        let peer = msg.sender;
        let mut s = self.take_initiated(peer, 3)?;
        let creds = self.creds(peer)?.clone();
        let checked = (|| -> Result<SymmetricKey, HandshakeError> {
            let fields = msg.fields().ok_or(CheckFailure::Undecryptable)?;
            let [k_cs] = fields[..] else {
                return Err(CheckFailure::Undecryptable.into());
            };
            let k_cs = SymmetricKey::from_bytes(k_cs).map_err(|_| CheckFailure::Undecryptable)?;
            let commitment = s.pending_commitment.as_ref().expect("set in step 3");
            self.bump(&mut s.counters, 0, 0, 1, 0);
            let opened = stream_encrypt(&k_cs, commitment)?;
            let parts = decode_fields(&opened).ok_or(CheckFailure::CommitmentMismatch)?;
            let mine = s.interval.as_ref().expect("set in step 3");
            if parts.len() != 1 || parts[0] != mine.as_bytes() {
                return Err(CheckFailure::CommitmentMismatch.into());
            }
            Ok(k_cs)
        })();
        let k_cs = match checked {
            Ok(k) => k,
            Err(e) => {
                self.close_group(&s);
                return Err(e);
            }
        };
        let data_key = match self.scheme {
            Scheme::Banzkp => creds.initial_key.clone(),
            Scheme::BanGzkp => {
                let pointer = IntervalPointer::from_key(&k_cs, group.params());
                s.r = Some(pointer);
                let key = group.data_key(s.session_secret.as_ref().expect("set in step 3"), pointer)?;
                s.k_r = Some(key.clone());
                key
            }
        };
        s.k_cs = Some(k_cs);
        let data = s.data.take().unwrap_or_default();
        let id = [self.id()];
        let blob = stream_encrypt(&data_key, &encode_fields(&[&id, &data]))?;
        self.bump(&mut s.counters, 0, 1, 0, 1);
        s.phase = 5;
        self.close_group(&s);
        self.finish(s, 5);
        Ok(ProtocolMessage {
            kind: MessageKind::Auth5Data,
            sender: self.id(),
            receiver: peer,
            payload: encode_fields(&[&blob]),
        })
    }

    /// Initiator, step 3 of the fast path.
    pub fn finish_opt_and_send_data(
        &mut self,
        msg: &ProtocolMessage,
        now: SimTime,
    ) -> Result<ProtocolMessage, HandshakeError> {
        let group = Arc::clone(&self.group);
        let _ = now;
        let peer = msg.sender;
        let mut s = self.take_initiated(peer, 1)?;
        if self.scheme != Scheme::BanGzkp {
            self.initiated.insert(peer, s);
            return Err(CheckFailure::UnexpectedPhase.into());
        }
        let creds = self.creds(peer)?.clone();
        let checked =
            (|| -> Result<(G::Element, IntervalPointer, IntervalPointer, G::Element, BitString), HandshakeError> {
                let fields = msg.fields().ok_or(CheckFailure::Undecryptable)?;
                let [blob] = fields[..] else {
                    return Err(CheckFailure::Undecryptable.into());
                };
                self.bump(&mut s.counters, 0, 0, 1, 0);
                let inner = stream_encrypt(&creds.initial_key, blob)?;
                let parts = decode_fields(&inner).ok_or(CheckFailure::Undecryptable)?;
                let [id, public, ri, r, interval] = parts[..] else {
                    return Err(CheckFailure::Undecryptable.into());
                };
                if id != [peer] {
                    return Err(CheckFailure::WrongIdentity.into());
                }
                let public = group.decode(public).map_err(|_| CheckFailure::Undecryptable)?;
                let ptr = |b: &[u8]| -> Result<IntervalPointer, HandshakeError> {
                    let b: [u8; 2] = b.try_into().map_err(|_| CheckFailure::Undecryptable)?;
                    Ok(IntervalPointer::from_be_bytes(b, group.params()).map_err(|_| CheckFailure::Undecryptable)?)
                };
                let ri = ptr(ri)?;
                let r = ptr(r)?;
                // The initiator always re-derives the interval, even here.
                let secret = group.pow(&public, &s.my_nonce)?;
                self.bump(&mut s.counters, 1, 0, 0, 0);
                let mine = group.interval(&secret, ri)?;
                if interval != mine.as_bytes() {
                    return Err(CheckFailure::IntervalMismatch.into());
                }
                Ok((public, ri, r, secret, mine))
            })();
        let (public, ri, r, secret, interval) = match checked {
            Ok(v) => v,
            Err(e) => {
                self.close_group(&s);
                return Err(e);
            }
        };
        let k_r = group.data_key(&secret, r)?;
        let data = s.data.take().unwrap_or_default();
        let id = [self.id()];
        let blob = stream_encrypt(&k_r, &encode_fields(&[&id, &data]))?;
        self.bump(&mut s.counters, 0, 1, 0, 1);
        s.phase = 3;
        s.fast_path = true;
        s.peer_public = Some(public);
        s.session_secret = Some(secret);
        s.ri = Some(ri);
        s.r = Some(r);
        s.interval = Some(interval);
        s.k_r = Some(k_r);
        self.close_group(&s);
        self.finish(s, 3);
        Ok(ProtocolMessage {
            kind: MessageKind::Auth3OptData,
            sender: self.id(),
            receiver: peer,
            payload: encode_fields(&[&blob]),
        })
    }

    /// Responder, final step: check and accept the data message.
    pub fn receive_data(&mut self, msg: &ProtocolMessage, now: SimTime) -> Result<Vec<u8>, HandshakeError> {
        let _ = now;
        let peer = msg.sender;
        let expected_phase = match msg.kind {
            MessageKind::Auth5Data => 4,
            MessageKind::Auth3OptData => 2,
            _ => return Err(CheckFailure::UnexpectedPhase.into()),
        };
        let mut s = self.take_responding(peer, expected_phase)?;
        if s.fast_path != (msg.kind == MessageKind::Auth3OptData) {
            return Err(CheckFailure::UnexpectedPhase.into());
        }
        let key = match self.scheme {
            Scheme::Banzkp => self.creds(peer)?.initial_key.clone(),
            Scheme::BanGzkp => s.k_r.clone().expect("derived before data"),
        };
        let fields = msg.fields().ok_or(CheckFailure::Undecryptable)?;
        let [blob] = fields[..] else {
            return Err(CheckFailure::Undecryptable.into());
        };
        self.bump(&mut s.counters, 0, 0, 1, 0);
        let inner = stream_encrypt(&key, blob)?;
        let parts = decode_fields(&inner).ok_or(CheckFailure::Undecryptable)?;
        let [id, data] = parts[..] else {
            return Err(CheckFailure::Undecryptable.into());
        };
        if id != [peer] {
            return Err(CheckFailure::WrongIdentity.into());
        }
        let data = data.to_vec();
        let messages = if s.fast_path { 3 } else { 5 };
        if !s.fast_path && self.scheme == Scheme::BanGzkp {
            self.known_peers.insert(peer);
        }
        s.phase = messages;
        self.finish(s, messages);
        Ok(data)
    }

    fn finish(&mut self, s: SessionState<G>, messages: u8) {
        let data_key = match (s.role, self.scheme) {
            (_, Scheme::BanGzkp) => s.k_r.clone(),
            (_, Scheme::Banzkp) => self.creds(s.peer).ok().map(|c| c.initial_key.clone()),
        };
        self.completed.push(CompletedSession {
            role: s.role,
            peer: s.peer,
            scheme: s.scheme,
            fast_path: s.fast_path,
            messages,
            counters: s.counters,
            session_secret: s.session_secret.clone().expect("complete session has secret"),
            data_key,
        });
    }

    /// Drops the other sessions of a multi-receiver group once one member
    /// has completed or failed in a way that ends the group.
    fn close_group(&mut self, s: &SessionState<G>) {
        if let Some(g) = s.group {
            if s.phase == 5 || s.phase == 3 && s.fast_path {
                self.initiated.retain(|_, o| o.group != Some(g));
            }
        }
    }

    /// Closes every session whose deadline has passed.
    pub fn on_timeout(&mut self, now: SimTime) -> Vec<Expired> {
        let mut out = Vec::new();
        let mut expired: Vec<NodeId> =
            self.initiated.iter().filter(|(_, s)| s.timeout_deadline <= now).map(|(&p, _)| p).collect();
        expired.sort_unstable();
        for p in expired {
            let s = self.initiated.remove(&p).expect("present");
            out.push(Expired { role: Role::Initiator, peer: p, lost_data: s.data });
        }
        let mut expired: Vec<NodeId> =
            self.responding.iter().filter(|(_, s)| s.timeout_deadline <= now).map(|(&p, _)| p).collect();
        expired.sort_unstable();
        for p in expired {
            self.responding.remove(&p);
            out.push(Expired { role: Role::Responder, peer: p, lost_data: None });
        }
        out
    }

    /// Abandons an initiated session (e.g. when a multi-receiver group is
    /// resolved elsewhere). Returns its queued data if it was unsent.
    pub fn abandon(&mut self, peer: NodeId) -> Option<Vec<u8>> {
        self.initiated.remove(&peer).and_then(|s| s.data)
    }

    /// Earliest pending deadline across all live sessions.
    pub fn next_deadline(&self) -> Option<SimTime> {
        self.initiated.values().chain(self.responding.values()).map(|s| s.timeout_deadline).min()
    }
}

/// The messages of one direct session between two endpoints and how the
/// responder ended it.
#[derive(Clone, Debug)]
pub struct SessionRun {
    pub messages: Vec<ProtocolMessage>,
    pub delivered: Option<Vec<u8>>,
    pub rejected: Option<CheckFailure>,
}

/// Drives one session from `initiator` to `responder` over a lossless link,
/// delivering every reply immediately.
pub fn run_session<G: CyclicGroup>(
    initiator: &mut Endpoint<G>,
    responder: &mut Endpoint<G>,
    data: Vec<u8>,
    now: SimTime,
) -> Result<SessionRun, HandshakeError> {
    let mut run = SessionRun { messages: Vec::new(), delivered: None, rejected: None };
    let mut next = initiator.initiate(responder.id(), data, now)?;
    loop {
        run.messages.push(next.clone());
        let target = if next.receiver == responder.id() { &mut *responder } else { &mut *initiator };
        match target.handle(&next, now) {
            Outcome::Send(m) => next = m,
            Outcome::Accepted { data, .. } => {
                run.delivered = Some(data);
                return Ok(run);
            }
            Outcome::Rejected(f) => {
                run.rejected = Some(f);
                return Ok(run);
            }
            Outcome::Ignored => return Ok(run),
        }
    }
}

/// Seed of the checked-in test vectors.
pub const VECTOR_SEED: u64 = 0x5EED;
pub const VECTOR_DATA: &[u8] = b"heart rate 072 bpm";

/// The messages of a fixed-seed session from node 0 to node 1 over the
/// default 2048-bit group. For BAN-GZKP a second, fast-path session follows
/// the first.
pub fn test_vectors(scheme: Scheme) -> Result<Vec<ProtocolMessage>, HandshakeError> {
    let group = Arc::new(ModularGroup::default());
    let keys = NetworkKeys::generate(KeyMode::Global, &[0, 1], &*group, VECTOR_SEED);
    let mut a = Endpoint::new(keys.identity(0), scheme, group.clone(), VECTOR_SEED);
    let mut b = Endpoint::new(keys.identity(1), scheme, group, VECTOR_SEED);
    let mut out = run_session(&mut a, &mut b, VECTOR_DATA.to_vec(), 0)?.messages;
    if scheme == Scheme::BanGzkp {
        out.extend(run_session(&mut a, &mut b, VECTOR_DATA.to_vec(), 1)?.messages);
    }
    Ok(out)
}

/// Hex dump of [`test_vectors`], one message per line: kind then the
/// encoded message.
pub fn test_vector_text(scheme: Scheme) -> Result<String, HandshakeError> {
    let mut out = String::new();
    for m in test_vectors(scheme)? {
        out.push_str(&format!("{:?} {}\n", m.kind, hex::encode(m.encode())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zkp_math::{pow_secret, GroupParams, ModularGroup};

    fn pair(scheme: Scheme, seed: u64) -> (Endpoint, Endpoint) {
        let group = Arc::new(ModularGroup::default());
        let keys = NetworkKeys::generate(KeyMode::Global, &[0, 1], &*group, seed);
        (
            Endpoint::new(keys.identity(0), scheme, group.clone(), seed),
            Endpoint::new(keys.identity(1), scheme, group, seed + 1),
        )
    }

    #[test]
    fn field_codec_rejects_trailing_bytes() {
        let enc = encode_fields(&[b"ab", b""]);
        assert_eq!(enc, vec![0, 2, b'a', b'b', 0, 0]);
        assert_eq!(decode_fields(&enc).unwrap(), vec![&b"ab"[..], &b""[..]]);
        assert!(decode_fields(&enc[..5]).is_none());
        assert!(decode_fields(&[0]).is_none());
    }

    #[test]
    fn message_codec_round_trip_and_errors() {
        let m = ProtocolMessage { kind: MessageKind::Auth2Opt, sender: 3, receiver: 1, payload: vec![9, 9] };
        assert_eq!(m.encode(), vec![0x12, 3, 1, 9, 9]);
        assert_eq!(ProtocolMessage::decode(&m.encode()).unwrap(), m);
        assert_eq!(ProtocolMessage::decode(&[1, 2]), Err(CodecError::Truncated));
        assert_eq!(ProtocolMessage::decode(&[0x77, 2, 3]), Err(CodecError::UnknownTag(0x77)));
    }

    #[test]
    fn auth1_decrypts_to_id_and_public_value() {
        let (mut a, _) = pair(Scheme::Banzkp, 1);
        let params = GroupParams::default();
        let keys = NetworkKeys::generate(KeyMode::Global, &[0, 1], &ModularGroup::default(), 1);
        let creds = keys.credentials(0, 1).unwrap();
        let m = a.initiate(1, b"x".to_vec(), 0).unwrap();
        let blob = m.fields().unwrap()[0].to_vec();
        let inner = stream_encrypt(&creds.initial_key, &blob).unwrap();
        let parts = decode_fields(&inner).unwrap();
        assert_eq!(parts[0], [0]);
        let s = a.initiated_session(1).unwrap();
        let expected = pow_secret(&creds.shared_secret, &s.my_nonce, &params).unwrap();
        assert_eq!(parts[1], expected.to_fixed_bytes(&params));
    }

    #[test]
    fn two_initiations_use_distinct_nonces() {
        let (mut a, _) = pair(Scheme::Banzkp, 2);
        a.initiate(1, vec![], 0).unwrap();
        let p1 = a.initiated_session(1).unwrap().my_nonce.clone();
        a.initiate(1, vec![], 0).unwrap();
        let p2 = a.initiated_session(1).unwrap().my_nonce.clone();
        assert_ne!(p1, p2);
    }

    #[test]
    fn initiator_has_two_exponentiations_after_auth3() {
        let (mut a, mut b) = pair(Scheme::Banzkp, 3);
        let m1 = a.initiate(1, vec![1], 0).unwrap();
        let Outcome::Send(m2) = b.handle(&m1, 0) else { panic!() };
        let Outcome::Send(m3) = a.handle(&m2, 0) else { panic!() };
        assert_eq!(m3.kind, MessageKind::Auth3);
        assert_eq!(a.initiated_session(1).unwrap().counters.exponentiations, 2);
    }

    #[test]
    fn flipped_interval_bit_closes_responder() {
        let (mut a, mut b) = pair(Scheme::Banzkp, 4);
        let m1 = a.initiate(1, vec![1], 0).unwrap();
        let Outcome::Send(m2) = b.handle(&m1, 0) else { panic!() };
        let Outcome::Send(mut m3) = a.handle(&m2, 0) else { panic!() };
        let last = m3.payload.len() - 1;
        m3.payload[last] ^= 0x01;
        assert_eq!(b.handle(&m3, 0), Outcome::Rejected(CheckFailure::IntervalMismatch));
        assert!(b.responding_session(0).is_none());
    }

    #[test]
    fn wrong_commit_key_closes_initiator() {
        let (mut a, mut b) = pair(Scheme::Banzkp, 5);
        let m1 = a.initiate(1, vec![1], 0).unwrap();
        let Outcome::Send(m2) = b.handle(&m1, 0) else { panic!() };
        let Outcome::Send(m3) = a.handle(&m2, 0) else { panic!() };
        let Outcome::Send(mut m4) = b.handle(&m3, 0) else { panic!() };
        m4.payload[3] ^= 0x80;
        assert_eq!(a.handle(&m4, 0), Outcome::Rejected(CheckFailure::CommitmentMismatch));
        assert!(a.initiated_session(1).is_none());
    }

    #[test]
    fn timeout_closes_and_keeps_peer_unknown() {
        let (mut a, mut b) = pair(Scheme::BanGzkp, 6);
        let m1 = a.initiate(1, vec![7], 0).unwrap();
        let Outcome::Send(_m2) = b.handle(&m1, 0) else { panic!() };
        assert_eq!(a.next_deadline(), Some(DEFAULT_TIMEOUT));
        assert!(a.on_timeout(DEFAULT_TIMEOUT - 1).is_empty());
        let expired = a.on_timeout(DEFAULT_TIMEOUT);
        assert_eq!(expired, vec![Expired { role: Role::Initiator, peer: 1, lost_data: Some(vec![7]) }]);
        b.on_timeout(DEFAULT_TIMEOUT);
        assert!(!b.knows_peer(0));
        assert_eq!(b.live_sessions(), 0);
    }

    #[test]
    fn fast_path_rejected_for_unknown_peer() {
        let (mut a, mut b) = pair(Scheme::BanGzkp, 7);
        let m1 = a.initiate(1, vec![], 0).unwrap();
        assert!(matches!(b.respond_opt(&m1, 0), Err(HandshakeError::CheckingFailed(CheckFailure::PeerNotKnown))));
    }

    #[test]
    fn empty_payload_fails_checking() {
        let (_, mut b) = pair(Scheme::BanGzkp, 8);
        let m = ProtocolMessage { kind: MessageKind::Auth1, sender: 0, receiver: 1, payload: vec![] };
        assert_eq!(b.handle(&m, 0), Outcome::Rejected(CheckFailure::Undecryptable));
    }

    #[test]
    fn unsolicited_data_is_ignored() {
        let (_, mut b) = pair(Scheme::Banzkp, 9);
        let m = ProtocolMessage { kind: MessageKind::Auth5Data, sender: 0, receiver: 1, payload: vec![0, 1, 2] };
        assert_eq!(b.handle(&m, 0), Outcome::Ignored);
    }

    #[test]
    fn pairwise_keys_differ_between_pairs() {
        let keys = NetworkKeys::generate(KeyMode::Pairwise, &[0, 1, 2], &ModularGroup::default(), 1);
        assert_ne!(keys.credentials(0, 1), keys.credentials(0, 2));
        assert_eq!(keys.credentials(0, 1), keys.credentials(1, 0));
        assert!(keys.credentials(0, 9).is_none());
    }
}
