//! Group arithmetic, secret-window extraction, data-key derivation and the
//! XOR stream cipher shared by both authentication schemes.
//!
//! All exponentiation happens modulo a public prime. The session secret
//! `V^(p*q)` is rendered as a fixed-width bit string of `min_secret_bits`
//! bits (the low-order bits of the residue, most significant first), and
//! windows of that string become the challenge interval and the data key.

use std::fmt;
use std::path::Path;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// 2048-bit MODP prime (RFC 3526, group 14).
pub const MODP_2048_HEX: &str = "\
    FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD1\
    29024E088A67CC74020BBEA63B139B22514A08798E3404DD\
    EF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245\
    E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED\
    EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3D\
    C2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F\
    83655D23DCA3AD961C62F356208552BB9ED529077096966D\
    670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B\
    E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9\
    DE2BCBF6955817183995497CEA956AE515D2261898FA0510\
    15728E5A8AACAA68FFFFFFFFFFFFFFFF";

pub const DEFAULT_MIN_SECRET_BITS: usize = 1096;
pub const DEFAULT_INTERVAL_BITS: usize = 200;
pub const DEFAULT_DATA_KEY_BITS: usize = 128;
pub const DEFAULT_NONCE_BITS: usize = 256;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MathError {
    #[error("base must be at least 2")]
    DegenerateBase,
    #[error("exponent must be at least 2")]
    DegenerateExponent,
    #[error("pointer {start} outside secret width {width}")]
    PointerOutOfRange { start: usize, width: usize },
    #[error("key must have at least one bit")]
    EmptyKey,
    #[error("element is not reduced modulo the group prime")]
    NotReduced,
    #[error("invalid group parameters: {0}")]
    InvalidParams(String),
    #[error("group config: {0}")]
    Config(String),
}

/// Public group description shared by every node.
#[derive(Clone, PartialEq, Eq)]
pub struct GroupParams {
    modulus: BigUint,
    min_secret_bits: usize,
    interval_bits: usize,
    data_key_bits: usize,
    nonce_bits: usize,
}

impl fmt::Debug for GroupParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GroupParams")
            .field("modulus_bits", &self.modulus.bits())
            .field("min_secret_bits", &self.min_secret_bits)
            .field("interval_bits", &self.interval_bits)
            .field("data_key_bits", &self.data_key_bits)
            .field("nonce_bits", &self.nonce_bits)
            .finish()
    }
}

impl Default for GroupParams {
    fn default() -> Self {
        GroupParams {
            modulus: BigUint::parse_bytes(MODP_2048_HEX.as_bytes(), 16).expect("MODP constant is valid hex"),
            min_secret_bits: DEFAULT_MIN_SECRET_BITS,
            interval_bits: DEFAULT_INTERVAL_BITS,
            data_key_bits: DEFAULT_DATA_KEY_BITS,
            nonce_bits: DEFAULT_NONCE_BITS,
        }
    }
}

impl GroupParams {
    /// Builds and validates a parameter set. The modulus is checked with a
    /// Miller-Rabin test, so this is not free for large moduli.
    pub fn new(
        modulus: BigUint,
        min_secret_bits: usize,
        interval_bits: usize,
        data_key_bits: usize,
    ) -> Result<Self, MathError> {
        let params =
            GroupParams { modulus, min_secret_bits, interval_bits, data_key_bits, nonce_bits: DEFAULT_NONCE_BITS };
        params.validate()?;
        Ok(params)
    }

    pub fn with_nonce_bits(mut self, nonce_bits: usize) -> Result<Self, MathError> {
        if nonce_bits < 2 {
            return Err(MathError::InvalidParams(format!("nonce_bits {nonce_bits} < 2")));
        }
        self.nonce_bits = nonce_bits;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), MathError> {
        if self.min_secret_bits == 0 {
            return Err(MathError::InvalidParams("min_secret_bits is 0".into()));
        }
        if self.interval_bits == 0 || self.interval_bits > self.min_secret_bits {
            return Err(MathError::InvalidParams(format!(
                "interval_bits {} not in 1..={}",
                self.interval_bits, self.min_secret_bits
            )));
        }
        if self.data_key_bits == 0 || self.data_key_bits > self.min_secret_bits {
            return Err(MathError::InvalidParams(format!(
                "data_key_bits {} not in 1..={}",
                self.data_key_bits, self.min_secret_bits
            )));
        }
        if self.min_secret_bits > u16::MAX as usize {
            return Err(MathError::InvalidParams("min_secret_bits must fit a 2-byte pointer".into()));
        }
        if (self.modulus.bits() as usize) < self.min_secret_bits {
            return Err(MathError::InvalidParams(format!(
                "modulus has {} bits, fewer than min_secret_bits {}",
                self.modulus.bits(),
                self.min_secret_bits
            )));
        }
        if !is_probable_prime(&self.modulus, 24) {
            return Err(MathError::InvalidParams("modulus is not prime".into()));
        }
        Ok(())
    }

    /// Parses `key = value` lines. `modulus` accepts decimal or `0x` hex;
    /// omitted keys keep their defaults.
    pub fn parse_config(text: &str) -> Result<Self, MathError> {
        let mut params = GroupParams::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() || line.starts_with('[') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| MathError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let value: String = value.chars().filter(|c| !c.is_whitespace() && *c != '_').collect();
            let int = |v: &str| v.parse::<usize>().map_err(|e| MathError::Config(format!("line {}: {e}", lineno + 1)));
            match key.trim() {
                "modulus" => params.modulus = parse_biguint(&value)?,
                "min_secret_bits" => params.min_secret_bits = int(&value)?,
                "interval_bits" => params.interval_bits = int(&value)?,
                "data_key_bits" => params.data_key_bits = int(&value)?,
                "nonce_bits" => params.nonce_bits = int(&value)?,
                other => return Err(MathError::Config(format!("line {}: unknown key {other}", lineno + 1))),
            }
        }
        params.validate()?;
        if params.nonce_bits < 2 {
            return Err(MathError::InvalidParams("nonce_bits < 2".into()));
        }
        Ok(params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MathError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| MathError::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse_config(&text)
    }

    pub fn modulus(&self) -> &BigUint {
        &self.modulus
    }

    pub fn min_secret_bits(&self) -> usize {
        self.min_secret_bits
    }

    pub fn interval_bits(&self) -> usize {
        self.interval_bits
    }

    pub fn data_key_bits(&self) -> usize {
        self.data_key_bits
    }

    pub fn nonce_bits(&self) -> usize {
        self.nonce_bits
    }

    /// Width in bytes of a serialized group element.
    pub fn element_bytes(&self) -> usize {
        (self.modulus.bits() as usize).div_ceil(8)
    }

    /// Width in bytes of a serialized challenge interval.
    pub fn interval_bytes(&self) -> usize {
        self.interval_bits.div_ceil(8)
    }
}

fn parse_biguint(text: &str) -> Result<BigUint, MathError> {
    let parsed = if let Some(hex) = text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
        BigUint::parse_bytes(hex.as_bytes(), 16)
    } else {
        BigUint::parse_bytes(text.as_bytes(), 10)
    };
    parsed.ok_or_else(|| MathError::Config(format!("cannot parse integer {text:?}")))
}

/// Miller-Rabin with deterministic bases drawn from a fixed-seed stream.
pub fn is_probable_prime(n: &BigUint, rounds: usize) -> bool {
    let two = BigUint::from(2u32);
    if *n < two {
        return false;
    }
    for small in [2u32, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let s = BigUint::from(small);
        if *n == s {
            return true;
        }
        if (n % &s).is_zero() {
            return false;
        }
    }
    let n_minus_one = n - 1u32;
    let mut d = n_minus_one.clone();
    let mut r = 0u32;
    while d.is_even() {
        d >>= 1;
        r += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(witness_seed(n));
    let byte_len = (n.bits() as usize).div_ceil(8);
    'witness: for _ in 0..rounds {
        let a = loop {
            let mut buf = vec![0u8; byte_len];
            rng.fill_bytes(&mut buf);
            let cand = BigUint::from_bytes_be(&buf) % n;
            if cand >= two && cand < n_minus_one {
                break cand;
            }
        };
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_one {
            continue;
        }
        for _ in 1..r {
            x = x.modpow(&two, n);
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

// Witness seed depends on n so distinct moduli do not share witnesses.
fn witness_seed(n: &BigUint) -> u64 {
    n.iter_u64_digits().fold(0x5eed_u64, |acc, d| acc.rotate_left(7) ^ d)
}

/// A residue in `[0, modulus)`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct GroupElement(BigUint);

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupElement({} bits)", self.0.bits())
    }
}

impl GroupElement {
    pub fn new(value: BigUint, params: &GroupParams) -> Result<Self, MathError> {
        if value >= params.modulus {
            return Err(MathError::NotReduced);
        }
        Ok(GroupElement(value))
    }

    pub fn from_u64(value: u64, params: &GroupParams) -> Result<Self, MathError> {
        Self::new(BigUint::from(value), params)
    }

    pub fn value(&self) -> &BigUint {
        &self.0
    }

    /// Big-endian, left-padded to the modulus byte width.
    pub fn to_fixed_bytes(&self, params: &GroupParams) -> Vec<u8> {
        let width = params.element_bytes();
        let raw = self.0.to_bytes_be();
        let mut out = vec![0u8; width.saturating_sub(raw.len())];
        out.extend_from_slice(&raw);
        out
    }

    pub fn from_fixed_bytes(bytes: &[u8], params: &GroupParams) -> Result<Self, MathError> {
        if bytes.len() != params.element_bytes() {
            return Err(MathError::NotReduced);
        }
        Self::new(BigUint::from_bytes_be(bytes), params)
    }

    /// The fixed-width bit rendering used for window extraction: the low
    /// `min_secret_bits` bits of the residue, most significant first.
    pub fn secret_bits(&self, params: &GroupParams) -> BitString {
        let width = params.min_secret_bits;
        let mut bits = BitString::zeros(width);
        for i in 0..width {
            if self.0.bit((width - 1 - i) as u64) {
                bits.set(i, true);
            }
        }
        bits
    }
}

/// A secret exponent, never 0 or 1.
#[derive(Clone, PartialEq, Eq)]
pub struct Nonce(BigUint);

impl fmt::Debug for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Nonce({} bits)", self.0.bits())
    }
}

impl Nonce {
    pub fn new(value: BigUint) -> Result<Self, MathError> {
        if value < BigUint::from(2u32) {
            return Err(MathError::DegenerateExponent);
        }
        Ok(Nonce(value))
    }

    pub fn from_u64(value: u64) -> Result<Self, MathError> {
        Self::new(BigUint::from(value))
    }

    pub fn value(&self) -> &BigUint {
        &self.0
    }
}

/// Start offset of a window inside the secret's bit rendering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IntervalPointer(u16);

impl IntervalPointer {
    pub fn new(start_bit: usize, params: &GroupParams) -> Result<Self, MathError> {
        if start_bit >= params.min_secret_bits {
            return Err(MathError::PointerOutOfRange { start: start_bit, width: params.min_secret_bits });
        }
        Ok(IntervalPointer(start_bit as u16))
    }

    /// Reads a key as a big-endian integer and reduces it into the secret
    /// width. This is how a transmitted commitment key becomes a pointer.
    pub fn from_key(key: &SymmetricKey, params: &GroupParams) -> Self {
        let n = BigUint::from_bytes_be(key.as_bytes());
        let reduced = n % BigUint::from(params.min_secret_bits);
        let start = reduced.iter_u32_digits().next().unwrap_or(0) as u16;
        IntervalPointer(start)
    }

    pub fn start_bit(self) -> usize {
        self.0 as usize
    }

    pub fn to_be_bytes(self) -> [u8; 2] {
        self.0.to_be_bytes()
    }

    /// Decodes a wire pointer; fails if it lies outside the secret width.
    pub fn from_be_bytes(bytes: [u8; 2], params: &GroupParams) -> Result<Self, MathError> {
        Self::new(u16::from_be_bytes(bytes) as usize, params)
    }
}

/// Packed bit string, most significant bit of each byte first. Bits past
/// `len` in the final byte are always zero.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitString {
    bytes: Vec<u8>,
    len: usize,
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 64 {
            let s: String = (0..self.len).map(|i| if self.get(i) { '1' } else { '0' }).collect();
            write!(f, "BitString({s})")
        } else {
            write!(f, "BitString({} bits, {})", self.len, hex::encode(&self.bytes))
        }
    }
}

impl BitString {
    pub fn zeros(len: usize) -> Self {
        BitString { bytes: vec![0u8; len.div_ceil(8)], len }
    }

    /// Parses a string of `0`/`1` characters.
    pub fn from_bit_str(s: &str) -> Option<Self> {
        let mut out = BitString::zeros(s.len());
        for (i, c) in s.chars().enumerate() {
            match c {
                '0' => {}
                '1' => out.set(i, true),
                _ => return None,
            }
        }
        Some(out)
    }

    pub fn from_bytes(bytes: &[u8], len: usize) -> Option<Self> {
        if bytes.len() != len.div_ceil(8) {
            return None;
        }
        let mut out = BitString { bytes: bytes.to_vec(), len };
        out.clear_tail();
        if out.bytes != bytes {
            return None;
        }
        Some(out)
    }

    fn clear_tail(&mut self) {
        let rem = self.len % 8;
        if rem != 0 {
            if let Some(last) = self.bytes.last_mut() {
                *last &= 0xFFu8 << (8 - rem);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        (self.bytes[i / 8] >> (7 - i % 8)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, v: bool) {
        let mask = 1u8 << (7 - i % 8);
        if v {
            self.bytes[i / 8] |= mask;
        } else {
            self.bytes[i / 8] &= !mask;
        }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn to_bit_string(&self) -> String {
        (0..self.len).map(|i| if self.get(i) { '1' } else { '0' }).collect()
    }
}

/// Key material for the XOR stream cipher.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SymmetricKey(BitString);

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymmetricKey({} bits)", self.0.len)
    }
}

impl SymmetricKey {
    pub fn new(bits: BitString) -> Result<Self, MathError> {
        if bits.is_empty() {
            return Err(MathError::EmptyKey);
        }
        Ok(SymmetricKey(bits))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MathError> {
        Self::new(BitString::from_bytes(bytes, bytes.len() * 8).ok_or(MathError::EmptyKey)?)
    }

    pub fn random<R: RngCore + ?Sized>(rng: &mut R, bits: usize) -> Result<Self, MathError> {
        let mut bytes = vec![0u8; bits.div_ceil(8)];
        rng.fill_bytes(&mut bytes);
        let mut s = BitString { bytes, len: bits };
        s.clear_tail();
        Self::new(s)
    }

    pub fn bit_len(&self) -> usize {
        self.0.len
    }

    pub fn bits(&self) -> &BitString {
        &self.0
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.0.as_bytes()
    }
}

/// `base^exponent mod modulus`.
pub fn pow_secret(base: &GroupElement, exponent: &Nonce, params: &GroupParams) -> Result<GroupElement, MathError> {
    if base.0 < BigUint::from(2u32) {
        return Err(MathError::DegenerateBase);
    }
    if exponent.0 < BigUint::from(2u32) {
        return Err(MathError::DegenerateExponent);
    }
    Ok(GroupElement(base.0.modpow(&exponent.0, &params.modulus)))
}

/// Reads `length_bits` bits of a rendering starting at `start`, wrapping
/// cyclically past its end.
pub fn extract_bits(rendering: &BitString, start: usize, length_bits: usize) -> Result<BitString, MathError> {
    let width = rendering.len();
    if start >= width {
        return Err(MathError::PointerOutOfRange { start, width });
    }
    if length_bits == 0 || length_bits > width {
        return Err(MathError::InvalidParams(format!("window length {length_bits} not in 1..={width}")));
    }
    let mut out = BitString::zeros(length_bits);
    for k in 0..length_bits {
        if rendering.get((start + k) % width) {
            out.set(k, true);
        }
    }
    Ok(out)
}

pub fn extract_interval(
    secret: &GroupElement,
    start: IntervalPointer,
    length_bits: usize,
    params: &GroupParams,
) -> Result<BitString, MathError> {
    extract_bits(&secret.secret_bits(params), start.start_bit(), length_bits)
}

/// Session data key: a `data_key_bits` window of the session secret.
pub fn derive_data_key(
    secret: &GroupElement,
    pointer: IntervalPointer,
    params: &GroupParams,
) -> Result<SymmetricKey, MathError> {
    SymmetricKey::new(extract_interval(secret, pointer, params.data_key_bits, params)?)
}

/// XORs the plaintext with the key repeated bit-cyclically.
pub fn stream_encrypt(key: &SymmetricKey, plaintext: &[u8]) -> Result<Vec<u8>, MathError> {
    let bits = &key.0;
    if bits.is_empty() {
        return Err(MathError::EmptyKey);
    }
    if bits.len() % 8 == 0 {
        let kb = bits.as_bytes();
        return Ok(plaintext.iter().enumerate().map(|(i, b)| b ^ kb[i % kb.len()]).collect());
    }
    let l = bits.len();
    Ok(plaintext
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let mut ks = 0u8;
            for j in 0..8 {
                if bits.get((i * 8 + j) % l) {
                    ks |= 1 << (7 - j);
                }
            }
            b ^ ks
        })
        .collect())
}

/// Uniform exponent in `[2, 2^nonce_bits)`.
pub fn random_nonce<R: RngCore + ?Sized>(rng: &mut R, params: &GroupParams) -> Nonce {
    let bits = params.nonce_bits;
    let mut buf = vec![0u8; bits.div_ceil(8)];
    loop {
        rng.fill_bytes(&mut buf);
        let excess = buf.len() * 8 - bits;
        if excess > 0 {
            buf[0] &= 0xFF >> excess;
        }
        let v = BigUint::from_bytes_be(&buf);
        if v >= BigUint::from(2u32) {
            return Nonce(v);
        }
    }
}

/// Uniform pointer in `[0, min_secret_bits)`.
pub fn random_pointer<R: Rng + ?Sized>(rng: &mut R, params: &GroupParams) -> IntervalPointer {
    IntervalPointer(rng.random_range(0..params.min_secret_bits) as u16)
}

/// Uniform element in `[2, modulus)`, used for shared secrets.
pub fn random_element<R: RngCore + ?Sized>(rng: &mut R, params: &GroupParams) -> GroupElement {
    let width = params.element_bytes();
    let mut buf = vec![0u8; width];
    loop {
        rng.fill_bytes(&mut buf);
        let excess = width * 8 - params.modulus.bits() as usize;
        if excess > 0 {
            buf[0] &= 0xFF >> excess;
        }
        let v = BigUint::from_bytes_be(&buf);
        if v >= BigUint::from(2u32) && v < params.modulus {
            return GroupElement(v);
        }
    }
}

/// Group arithmetic the handshake runs on.
///
/// [`ModularGroup`] is the real construction. [`ModeledGroup`] is an
/// algebraic stand-in for simulation: it keeps exponent commutativity, the
/// wire width of elements and the fixed-width secret rendering, at a tiny
/// fraction of the cost, but offers no secrecy.
pub trait CyclicGroup: Clone + fmt::Debug + Send + Sync {
    type Element: Clone + Eq + fmt::Debug + Send + Sync;
    type Exponent: Clone + Eq + fmt::Debug + Send + Sync;

    fn params(&self) -> &GroupParams;
    fn random_exponent(&self, rng: &mut dyn RngCore) -> Self::Exponent;
    fn random_element(&self, rng: &mut dyn RngCore) -> Self::Element;
    fn pow(&self, base: &Self::Element, exponent: &Self::Exponent) -> Result<Self::Element, MathError>;
    /// Fixed-width wire encoding, `params().element_bytes()` long.
    fn encode(&self, element: &Self::Element) -> Vec<u8>;
    fn decode(&self, bytes: &[u8]) -> Result<Self::Element, MathError>;
    /// The `min_secret_bits`-wide rendering windows are cut from.
    fn secret_bits(&self, element: &Self::Element) -> BitString;

    fn interval(&self, secret: &Self::Element, start: IntervalPointer) -> Result<BitString, MathError> {
        extract_bits(&self.secret_bits(secret), start.start_bit(), self.params().interval_bits())
    }

    fn data_key(&self, secret: &Self::Element, pointer: IntervalPointer) -> Result<SymmetricKey, MathError> {
        SymmetricKey::new(extract_bits(&self.secret_bits(secret), pointer.start_bit(), self.params().data_key_bits())?)
    }
}

/// Exponentiation modulo the public prime.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ModularGroup {
    params: GroupParams,
}

impl ModularGroup {
    pub fn new(params: GroupParams) -> Self {
        ModularGroup { params }
    }
}

impl CyclicGroup for ModularGroup {
    type Element = GroupElement;
    type Exponent = Nonce;

    fn params(&self) -> &GroupParams {
        &self.params
    }

    fn random_exponent(&self, rng: &mut dyn RngCore) -> Nonce {
        random_nonce(rng, &self.params)
    }

    fn random_element(&self, rng: &mut dyn RngCore) -> GroupElement {
        random_element(rng, &self.params)
    }

    fn pow(&self, base: &GroupElement, exponent: &Nonce) -> Result<GroupElement, MathError> {
        pow_secret(base, exponent, &self.params)
    }

    fn encode(&self, element: &GroupElement) -> Vec<u8> {
        element.to_fixed_bytes(&self.params)
    }

    fn decode(&self, bytes: &[u8]) -> Result<GroupElement, MathError> {
        GroupElement::from_fixed_bytes(bytes, &self.params)
    }

    fn secret_bits(&self, element: &GroupElement) -> BitString {
        element.secret_bits(&self.params)
    }
}

/// Order of the modeled group, the Mersenne prime 2^61 - 1.
pub const MODELED_ORDER: u64 = (1 << 61) - 1;

/// Models `g^x` by its discrete log `x` in the multiplicative group mod
/// 2^61 - 1, so `(g^x)^e = g^(x*e)`. Encodings and renderings are expanded
/// from `x` with a seeded stream so their sizes match [`ModularGroup`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ModeledGroup {
    params: GroupParams,
}

impl ModeledGroup {
    pub fn new(params: GroupParams) -> Self {
        ModeledGroup { params }
    }

    fn expand(x: u64, domain: u64, out: &mut [u8]) {
        let mut rng = ChaCha8Rng::seed_from_u64(x ^ domain.rotate_left(32));
        rng.fill_bytes(out);
    }
}

fn mul_mod_order(a: u64, b: u64) -> u64 {
    ((a as u128 * b as u128) % MODELED_ORDER as u128) as u64
}

impl CyclicGroup for ModeledGroup {
    type Element = u64;
    type Exponent = u64;

    fn params(&self) -> &GroupParams {
        &self.params
    }

    fn random_exponent(&self, rng: &mut dyn RngCore) -> u64 {
        rng.random_range(2..MODELED_ORDER)
    }

    fn random_element(&self, rng: &mut dyn RngCore) -> u64 {
        rng.random_range(2..MODELED_ORDER)
    }

    fn pow(&self, base: &u64, exponent: &u64) -> Result<u64, MathError> {
        if *base < 2 {
            return Err(MathError::DegenerateBase);
        }
        if *exponent < 2 {
            return Err(MathError::DegenerateExponent);
        }
        Ok(mul_mod_order(*base, *exponent))
    }

    fn encode(&self, element: &u64) -> Vec<u8> {
        let width = self.params.element_bytes();
        let mut out = vec![0u8; width];
        let pad = width - 8;
        Self::expand(*element, 0xE1, &mut out[..pad]);
        out[pad..].copy_from_slice(&element.to_be_bytes());
        out
    }

    fn decode(&self, bytes: &[u8]) -> Result<u64, MathError> {
        let width = self.params.element_bytes();
        if bytes.len() != width || width < 8 {
            return Err(MathError::NotReduced);
        }
        let x = u64::from_be_bytes(bytes[width - 8..].try_into().expect("8 bytes"));
        if x == 0 || x >= MODELED_ORDER || self.encode(&x) != bytes {
            return Err(MathError::NotReduced);
        }
        Ok(x)
    }

    fn secret_bits(&self, element: &u64) -> BitString {
        let width = self.params.min_secret_bits();
        let mut bytes = vec![0u8; width.div_ceil(8)];
        Self::expand(*element, 0x5B, &mut bytes);
        let mut bits = BitString { bytes, len: width };
        bits.clear_tail();
        bits
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(modulus: u64, width: usize) -> GroupParams {
        GroupParams::new(BigUint::from(modulus), width, width.min(4), width.min(4)).unwrap()
    }

    #[test]
    fn default_modulus_is_prime_and_wide() {
        let p = GroupParams::default();
        assert_eq!(p.modulus().bits(), 2048);
        assert!(is_probable_prime(p.modulus(), 16));
        assert!(p.validate().is_ok());
    }

    #[test]
    fn rejects_composite_and_narrow_moduli() {
        assert!(GroupParams::new(BigUint::from(1001u32), 8, 4, 4).is_err());
        assert!(GroupParams::new(BigUint::from(1009u32), 11, 4, 4).is_err());
        assert!(GroupParams::new(BigUint::from(1009u32), 8, 9, 4).is_err());
    }

    #[test]
    fn pow_small_example() {
        let params = small(1009, 8);
        let v = GroupElement::from_u64(3, &params).unwrap();
        let e = Nonce::from_u64(5).unwrap();
        assert_eq!(pow_secret(&v, &e, &params).unwrap().value(), &BigUint::from(243u32));
    }

    #[test]
    fn pow_rejects_degenerate_inputs() {
        let params = small(1009, 8);
        let one = GroupElement::from_u64(1, &params).unwrap();
        let e = Nonce::from_u64(5).unwrap();
        assert_eq!(pow_secret(&one, &e, &params), Err(MathError::DegenerateBase));
        assert_eq!(Nonce::from_u64(1), Err(MathError::DegenerateExponent));
        assert_eq!(Nonce::from_u64(0), Err(MathError::DegenerateExponent));
    }

    #[test]
    fn window_examples() {
        let bits = BitString::from_bit_str("10110011").unwrap();
        assert_eq!(extract_bits(&bits, 2, 3).unwrap().to_bit_string(), "110");
        assert_eq!(extract_bits(&bits, 6, 4).unwrap().to_bit_string(), "1110");
        assert!(matches!(extract_bits(&bits, 8, 1), Err(MathError::PointerOutOfRange { start: 8, width: 8 })));
    }

    #[test]
    fn rendering_is_fixed_width() {
        let params = GroupParams::default();
        let two = GroupElement::from_u64(2, &params).unwrap();
        let bits = two.secret_bits(&params);
        assert_eq!(bits.len(), 1096);
        assert!(bits.get(1094));
        assert_eq!((0..1096).filter(|&i| bits.get(i)).count(), 1);
    }

    #[test]
    fn zero_secret_gives_zero_key() {
        let params = GroupParams::default();
        let zero = GroupElement::from_u64(0, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let ptr = random_pointer(&mut rng, &params);
            let key = derive_data_key(&zero, ptr, &params).unwrap();
            assert_eq!(key.bit_len(), 128);
            assert!(key.as_bytes().iter().all(|b| *b == 0));
        }
    }

    #[test]
    fn xor_with_ones() {
        let key = SymmetricKey::from_bytes(&[0xFF]).unwrap();
        assert_eq!(stream_encrypt(&key, &[0x00, 0x0F]).unwrap(), vec![0xFF, 0xF0]);
    }

    #[test]
    fn odd_length_key_cycles_bitwise() {
        // key 101 repeated: 10110110 11011011
        let key = SymmetricKey::new(BitString::from_bit_str("101").unwrap()).unwrap();
        assert_eq!(stream_encrypt(&key, &[0, 0]).unwrap(), vec![0b1011_0110, 0b1101_1011]);
    }

    #[test]
    fn empty_key_is_rejected() {
        assert_eq!(SymmetricKey::new(BitString::zeros(0)), Err(MathError::EmptyKey));
    }

    #[test]
    fn nonce_is_reproducible_from_seed() {
        let params = GroupParams::default();
        let a = random_nonce(&mut ChaCha8Rng::seed_from_u64(42), &params);
        let b = random_nonce(&mut ChaCha8Rng::seed_from_u64(42), &params);
        assert_eq!(a, b);
    }

    #[test]
    fn nonce_range_contract() {
        let params = GroupParams::default().with_nonce_bits(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100_000 {
            let n = random_nonce(&mut rng, &params);
            assert!(*n.value() >= BigUint::from(2u32) && *n.value() < BigUint::from(8u32));
        }
    }

    #[test]
    fn pointer_from_key_reduces_into_width() {
        let params = GroupParams::default();
        let key = SymmetricKey::from_bytes(&[0xFF; 16]).unwrap();
        let ptr = IntervalPointer::from_key(&key, &params);
        let expected =
            (BigUint::from_bytes_be(&[0xFF; 16]) % 1096u32).to_u32_digits().first().copied().unwrap_or(0) as usize;
        assert_eq!(ptr.start_bit(), expected);
    }

    #[test]
    fn modeled_group_commutes_and_round_trips() {
        let g = ModeledGroup::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let v = g.random_element(&mut rng);
            let p = g.random_exponent(&mut rng);
            let q = g.random_exponent(&mut rng);
            let pq = g.pow(&g.pow(&v, &p).unwrap(), &q).unwrap();
            let qp = g.pow(&g.pow(&v, &q).unwrap(), &p).unwrap();
            assert_eq!(pq, qp);
            let enc = g.encode(&pq);
            assert_eq!(enc.len(), GroupParams::default().element_bytes());
            assert_eq!(g.decode(&enc).unwrap(), pq);
            assert_eq!(g.secret_bits(&pq).len(), 1096);
        }
        let mut enc = g.encode(&12345);
        enc[0] ^= 1;
        assert!(g.decode(&enc).is_err());
    }

    #[test]
    fn config_parses_hex_and_decimal() {
        let text = "# group\nmodulus = 0x3F1\nmin_secret_bits = 8\ninterval_bits = 4\ndata_key_bits = 2\n";
        let p = GroupParams::parse_config(text).unwrap();
        assert_eq!(p.modulus(), &BigUint::from(1009u32));
        let p =
            GroupParams::parse_config("modulus = 1009\nmin_secret_bits=8\ninterval_bits=4\ndata_key_bits=4").unwrap();
        assert_eq!(p.min_secret_bits(), 8);
        assert!(
            GroupParams::parse_config("modulus = 1000\nmin_secret_bits=8\ninterval_bits=4\ndata_key_bits=4").is_err()
        );
        assert!(GroupParams::parse_config("bogus = 1").is_err());
        assert_eq!(GroupParams::parse_config("").unwrap(), GroupParams::default());
    }
}
