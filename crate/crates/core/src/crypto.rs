//! Primitives shared by every scheme: fixed-length key strings, the
//! pluggable key derivation function, XOR masking, a MAC for the fixed
//! variants and the seeded randomness stream.
//!
//! The `ToyMix` KDF is a non-cryptographic mixer with a published
//! definition (see `docs/toy_mix.md`) so that test vectors can be
//! reproduced by any implementation.

use std::collections::BTreeSet;
use std::fmt;

use hmac::{Hmac, KeyInit, Mac};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::Sha256;
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::PartyId;

/// Default key length in bytes (128 bits).
pub const DEFAULT_KEY_BYTES: usize = 16;

/// Length of a [`Tag`] in bytes.
pub const TAG_BYTES: usize = 32;

const HMAC_SHA256_BYTES: usize = 32;

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("length mismatch: {left} bytes vs {right} bytes")]
    LengthMismatch { left: usize, right: usize },
    #[error("long-term key of {key} bytes is not a positive multiple of the {output}-byte KDF output")]
    KeyLength { key: usize, output: usize },
    #[error("KDF output length {requested} outside 1..={max}")]
    OutputLength { requested: usize, max: usize },
    #[error("empty key")]
    EmptyKey,
    #[error("invalid hex: {0}")]
    Hex(String),
}

/// A fixed-length secret byte string. Keys, masks and masked payloads are
/// all `KeyBytes`.
///
/// Equality is constant-time in the content of the two strings.
#[derive(Clone, Default)]
pub struct KeyBytes(Vec<u8>);

impl KeyBytes {
    pub fn new(bytes: Vec<u8>) -> Self {
        KeyBytes(bytes)
    }

    pub fn zero(len: usize) -> Self {
        KeyBytes(vec![0; len])
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        hex::decode(s)
            .map(KeyBytes)
            .map_err(|e| CryptoError::Hex(e.to_string()))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().fold(0u8, |acc, b| acc | b) == 0
    }

    /// `self ∥ other`.
    pub fn concat(&self, other: &KeyBytes) -> KeyBytes {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        KeyBytes(v)
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.0
    }
}

impl PartialEq for KeyBytes {
    fn eq(&self, other: &Self) -> bool {
        self.0.ct_eq(&other.0).into()
    }
}

impl Eq for KeyBytes {}

impl fmt::Debug for KeyBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyBytes({})", self.to_hex())
    }
}

impl From<&[u8]> for KeyBytes {
    fn from(b: &[u8]) -> Self {
        KeyBytes(b.to_vec())
    }
}

impl Serialize for KeyBytes {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for KeyBytes {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        KeyBytes::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Public one-time value agreed before a session.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Nonce(Vec<u8>);

impl Nonce {
    pub fn new(bytes: Vec<u8>) -> Self {
        Nonce(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        hex::decode(s)
            .map(Nonce)
            .map_err(|e| CryptoError::Hex(e.to_string()))
    }
}

impl fmt::Debug for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Nonce({})", self.to_hex())
    }
}

impl Serialize for Nonce {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Nonce {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Nonce::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Every nonce a party has used. Honest parties refuse to start a second
/// session with a nonce already in their ledger.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonceLedger {
    used: BTreeSet<Nonce>,
}

impl NonceLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `nonce`; returns `false` (and records nothing) if it was
    /// already used.
    pub fn record(&mut self, nonce: &Nonce) -> bool {
        self.used.insert(nonce.clone())
    }

    pub fn contains(&self, nonce: &Nonce) -> bool {
        self.used.contains(nonce)
    }

    pub fn len(&self) -> usize {
        self.used.len()
    }

    pub fn is_empty(&self) -> bool {
        self.used.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Nonce> {
        self.used.iter()
    }
}

/// Public second input of the KDF.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KdfContext {
    pub nonce: Nonce,
    /// Empty for the baseline schemes; sorted participant identities for
    /// the identity-binding variants.
    pub bound_identities: Vec<PartyId>,
    pub label: String,
}

impl KdfContext {
    pub fn new(label: &str, nonce: Nonce) -> Self {
        KdfContext {
            nonce,
            bound_identities: Vec::new(),
            label: label.to_owned(),
        }
    }

    /// Context binding `ids` in canonical (sorted, deduplicated) order.
    pub fn bound(label: &str, nonce: Nonce, ids: impl IntoIterator<Item = PartyId>) -> Self {
        let ids: BTreeSet<PartyId> = ids.into_iter().collect();
        KdfContext {
            nonce,
            bound_identities: ids.into_iter().collect(),
            label: label.to_owned(),
        }
    }

    /// Length-prefixed encoding:
    /// `u32be(|label|) label u32be(|nonce|) nonce u32be(#ids) (u32be(|id|) id)*`.
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.label.len() + self.nonce.0.len());
        put_field(&mut out, self.label.as_bytes());
        put_field(&mut out, self.nonce.as_bytes());
        out.extend_from_slice(&(self.bound_identities.len() as u32).to_be_bytes());
        for id in &self.bound_identities {
            put_field(&mut out, id.as_str().as_bytes());
        }
        out
    }
}

fn put_field(out: &mut Vec<u8>, field: &[u8]) {
    out.extend_from_slice(&(field.len() as u32).to_be_bytes());
    out.extend_from_slice(field);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KdfAlgorithm {
    /// HMAC-SHA256 truncated to the output length.
    #[serde(rename = "REFERENCE_KEYED_HASH")]
    ReferenceKeyedHash,
    /// The documented non-cryptographic mixer.
    #[serde(rename = "TOY_MIX")]
    ToyMix,
}

impl KdfAlgorithm {
    pub fn name(self) -> &'static str {
        match self {
            KdfAlgorithm::ReferenceKeyedHash => "REFERENCE_KEYED_HASH",
            KdfAlgorithm::ToyMix => "TOY_MIX",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "REFERENCE_KEYED_HASH" | "REFERENCE" | "HMAC" => Some(KdfAlgorithm::ReferenceKeyedHash),
            "TOY_MIX" | "TOY" => Some(KdfAlgorithm::ToyMix),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KdfSpec {
    pub algorithm: KdfAlgorithm,
    pub output_length: usize,
}

impl KdfSpec {
    pub fn new(algorithm: KdfAlgorithm, output_length: usize) -> Self {
        KdfSpec {
            algorithm,
            output_length,
        }
    }

    pub fn reference(output_length: usize) -> Self {
        Self::new(KdfAlgorithm::ReferenceKeyedHash, output_length)
    }

    pub fn toy(output_length: usize) -> Self {
        Self::new(KdfAlgorithm::ToyMix, output_length)
    }

    fn max_output(&self) -> usize {
        match self.algorithm {
            KdfAlgorithm::ReferenceKeyedHash => HMAC_SHA256_BYTES,
            KdfAlgorithm::ToyMix => usize::MAX,
        }
    }

    /// Checks the output length and that `key_len` is a positive multiple of
    /// it (one key, or the concatenation of several).
    pub fn check(&self, key_len: usize) -> Result<(), CryptoError> {
        let max = self.max_output();
        if self.output_length == 0 || self.output_length > max {
            return Err(CryptoError::OutputLength {
                requested: self.output_length,
                max,
            });
        }
        if key_len == 0 || !key_len.is_multiple_of(self.output_length) {
            return Err(CryptoError::KeyLength {
                key: key_len,
                output: self.output_length,
            });
        }
        Ok(())
    }
}

/// Derives a one-time key from a long-term key and public context.
pub fn kdf_derive(
    long_term: &KeyBytes,
    ctx: &KdfContext,
    spec: KdfSpec,
) -> Result<KeyBytes, CryptoError> {
    spec.check(long_term.len())?;
    let input = ctx.serialize();
    let out = match spec.algorithm {
        KdfAlgorithm::ReferenceKeyedHash => {
            let mut mac = HmacSha256::new_from_slice(long_term.as_bytes())
                .expect("HMAC accepts any key length");
            mac.update(&input);
            let mut full = mac.finalize().into_bytes().to_vec();
            full.truncate(spec.output_length);
            full
        }
        KdfAlgorithm::ToyMix => toy_mix(long_term.as_bytes(), &input, spec.output_length),
    };
    Ok(KeyBytes(out))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// FNV-1a absorption of `u32be(|key|) ∥ key ∥ ctx` followed by a
/// SplitMix64 output stream, little-endian words.
fn toy_mix(key: &[u8], ctx: &[u8], len: usize) -> Vec<u8> {
    let mut h = FNV_OFFSET;
    let key_len = (key.len() as u32).to_be_bytes();
    for &b in key_len.iter().chain(key).chain(ctx) {
        h = (h ^ u64::from(b)).wrapping_mul(FNV_PRIME);
    }
    let mut out = Vec::with_capacity(len + 8);
    let mut ctr = h;
    while out.len() < len {
        ctr = ctr.wrapping_add(GOLDEN_GAMMA);
        let mut z = ctr;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        out.extend_from_slice(&z.to_le_bytes());
    }
    out.truncate(len);
    out
}

pub fn xor_combine(a: &KeyBytes, b: &KeyBytes) -> Result<KeyBytes, CryptoError> {
    if a.len() != b.len() {
        return Err(CryptoError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(KeyBytes(
        a.0.iter().zip(&b.0).map(|(x, y)| x ^ y).collect(),
    ))
}

/// In-place `dst ^= src` over equal-length slices.
pub fn xor_in_place(dst: &mut [u8], src: &[u8]) -> Result<(), CryptoError> {
    if dst.len() != src.len() {
        return Err(CryptoError::LengthMismatch {
            left: dst.len(),
            right: src.len(),
        });
    }
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= s;
    }
    Ok(())
}

/// HMAC-SHA256 authentication tag.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Tag(pub [u8; TAG_BYTES]);

impl Tag {
    pub fn from_slice(b: &[u8]) -> Option<Tag> {
        <[u8; TAG_BYTES]>::try_from(b).ok().map(Tag)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tag({})", hex::encode(self.0))
    }
}

pub fn mac_tag(key: &KeyBytes, message: &[u8]) -> Result<Tag, CryptoError> {
    if key.is_empty() {
        return Err(CryptoError::EmptyKey);
    }
    let mut mac = HmacSha256::new_from_slice(key.as_bytes()).expect("HMAC accepts any key length");
    mac.update(message);
    let bytes = mac.finalize().into_bytes();
    let mut out = [0u8; TAG_BYTES];
    out.copy_from_slice(&bytes);
    Ok(Tag(out))
}

/// Constant-time tag check. An empty key never verifies.
pub fn mac_verify(key: &KeyBytes, message: &[u8], tag: &Tag) -> bool {
    if key.is_empty() {
        return false;
    }
    let mut mac = HmacSha256::new_from_slice(key.as_bytes()).expect("HMAC accepts any key length");
    mac.update(message);
    mac.verify_slice(&tag.0).is_ok()
}

/// The single source of randomness for one scenario.
#[derive(Clone, Debug)]
pub struct SeedStream {
    seed: u64,
    rng: ChaCha20Rng,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream {
            seed,
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn bytes(&mut self, len: usize) -> Vec<u8> {
        let mut v = vec![0u8; len];
        self.rng.fill_bytes(&mut v);
        v
    }

    pub fn key(&mut self, len: usize) -> KeyBytes {
        KeyBytes(self.bytes(len))
    }

    /// A key guaranteed to be non-zero.
    pub fn nonzero_key(&mut self, len: usize) -> KeyBytes {
        loop {
            let k = self.key(len);
            if !k.is_zero() {
                return k;
            }
        }
    }

    pub fn nonce(&mut self, len: usize) -> Nonce {
        Nonce(self.bytes(len))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw from `[0, bound)`; `bound` must be positive.
    pub fn below(&mut self, bound: u64) -> u64 {
        self.rng.random_range(0..bound)
    }

    /// Uniform draw from `[lo, hi]`.
    pub fn between(&mut self, lo: u64, hi: u64) -> u64 {
        self.rng.random_range(lo..=hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn k(hex: &str) -> KeyBytes {
        KeyBytes::from_hex(hex).unwrap()
    }

    // Golden vectors produced by tests/oracles/toy_mix.py.
    #[test]
    fn toy_mix_golden_vectors() {
        let spec = KdfSpec::toy(16);
        let ctx = KdfContext::new("t", Nonce::new(vec![1; 16]));
        assert_eq!(
            kdf_derive(&KeyBytes::zero(16), &ctx, spec).unwrap().to_hex(),
            "a03f55c8663e9d91f0dff69494928afd"
        );

        let key = KeyBytes::new((0u8..16).collect());
        let ctx = KdfContext::new("otk", Nonce::new(vec![0xaa; 16]));
        assert_eq!(
            kdf_derive(&key, &ctx, spec).unwrap().to_hex(),
            "e9e990b5d40b55ac3412c61518e24cdb"
        );

        let ctx = KdfContext::bound(
            "otk",
            Nonce::new(vec![0xaa; 16]),
            ["C", "A", "B"].map(PartyId::from),
        );
        assert_eq!(
            kdf_derive(&key, &ctx, spec).unwrap().to_hex(),
            "f2ee9300d79ceb749a4f0709831b056e"
        );

        let ctx = KdfContext::new("group", Nonce::new((0u8..16).collect()));
        assert_eq!(
            kdf_derive(&KeyBytes::new(vec![0xff; 32]), &ctx, KdfSpec::toy(32))
                .unwrap()
                .to_hex(),
            "79db040ba73dc23ee097c6673624c2a920d1e5e2a84d9c55fc89a385503681f8"
        );
    }

    #[test]
    fn reference_kdf_is_truncated_hmac_sha256() {
        let key = KeyBytes::new((0u8..16).collect());
        let ctx = KdfContext::new("otk", Nonce::new(vec![0xaa; 16]));
        assert_eq!(
            kdf_derive(&key, &ctx, KdfSpec::reference(16)).unwrap().to_hex(),
            "8401417c560777162c08660f394a22af"
        );
        let ctx = KdfContext::bound("otk", Nonce::new(vec![0xaa; 16]), ["A", "B", "C"].map(PartyId::from));
        assert_eq!(
            kdf_derive(&key, &ctx, KdfSpec::reference(16)).unwrap().to_hex(),
            "187ed6c56bcbec00d5231d764dbfdfd0"
        );
    }

    #[test]
    fn kdf_is_deterministic() {
        let mut rng = SeedStream::new(1);
        let key = rng.key(16);
        let ctx = KdfContext::new("otk", rng.nonce(16));
        for spec in [KdfSpec::toy(16), KdfSpec::reference(16)] {
            assert_eq!(
                kdf_derive(&key, &ctx, spec).unwrap(),
                kdf_derive(&key, &ctx, spec).unwrap()
            );
        }
    }

    #[test]
    fn kdf_length_errors() {
        let ctx = KdfContext::new("otk", Nonce::new(vec![0; 16]));
        assert_eq!(
            kdf_derive(&KeyBytes::zero(15), &ctx, KdfSpec::toy(16)),
            Err(CryptoError::KeyLength { key: 15, output: 16 })
        );
        assert_eq!(
            kdf_derive(&KeyBytes::zero(0), &ctx, KdfSpec::toy(16)),
            Err(CryptoError::KeyLength { key: 0, output: 16 })
        );
        assert_eq!(
            kdf_derive(&KeyBytes::zero(64), &ctx, KdfSpec::reference(64)),
            Err(CryptoError::OutputLength { requested: 64, max: 32 })
        );
        assert!(kdf_derive(&KeyBytes::zero(32), &ctx, KdfSpec::toy(16)).is_ok());
    }

    fn random_ctx(rng: &mut SeedStream) -> KdfContext {
        let labels = ["otk", "group", "t", "a", ""];
        let names = ["A", "B", "C", "D", "E", "AB", ""];
        let nonce_len = rng.below(20) as usize;
        let ids = (0..rng.below(4))
            .map(|_| PartyId::from(names[rng.below(names.len() as u64) as usize]))
            .collect();
        KdfContext {
            nonce: rng.nonce(nonce_len),
            bound_identities: ids,
            label: labels[rng.below(labels.len() as u64) as usize].to_owned(),
        }
    }

    #[test]
    fn context_serialization_is_injective() {
        let mut rng = SeedStream::new(7);
        let mut pairs = 0;
        while pairs < 10_000 {
            let a = random_ctx(&mut rng);
            let b = random_ctx(&mut rng);
            if a == b {
                continue;
            }
            pairs += 1;
            assert_ne!(a.serialize(), b.serialize(), "{a:?} vs {b:?}");
        }
        // Field boundaries cannot be shifted between label, nonce and ids.
        let x = KdfContext::new("ab", Nonce::new(b"c".to_vec()));
        let y = KdfContext::new("a", Nonce::new(b"bc".to_vec()));
        assert_ne!(x.serialize(), y.serialize());
    }

    #[test]
    fn kdf_collision_scan() {
        let mut rng = SeedStream::new(11);
        let key = rng.key(16);
        for spec in [KdfSpec::toy(16), KdfSpec::reference(16)] {
            let mut seen = HashSet::new();
            let mut contexts = HashSet::new();
            while contexts.len() < 10_000 {
                let ctx = KdfContext::new("otk", rng.nonce(16));
                if contexts.insert(ctx.serialize()) {
                    assert!(seen.insert(kdf_derive(&key, &ctx, spec).unwrap().into_vec()));
                }
            }
        }
    }

    #[test]
    fn bound_identities_are_canonical() {
        let n = Nonce::new(vec![3; 16]);
        let a = KdfContext::bound("otk", n.clone(), ["B", "A", "C"].map(PartyId::from));
        let b = KdfContext::bound("otk", n, ["C", "B", "A", "A"].map(PartyId::from));
        assert_eq!(a, b);
    }

    #[test]
    fn xor_basic_cases() {
        let x = k("00112233445566778899aabbccddeeff");
        assert_eq!(xor_combine(&x, &KeyBytes::zero(16)).unwrap(), x);
        assert!(xor_combine(&x, &x).unwrap().is_zero());
        let m = k("0f0f0f0f0f0f0f0f0f0f0f0f0f0f0f0f");
        assert_eq!(xor_combine(&xor_combine(&x, &m).unwrap(), &m).unwrap(), x);
        assert_eq!(
            xor_combine(&x, &KeyBytes::zero(15)),
            Err(CryptoError::LengthMismatch { left: 16, right: 15 })
        );
    }

    #[test]
    fn xor_algebra_exhaustive_single_byte() {
        let one = |b: u16| KeyBytes::new(vec![b as u8]);
        for a in 0..256u16 {
            let ka = one(a);
            assert_eq!(xor_combine(&ka, &one(0)).unwrap(), ka);
            assert!(xor_combine(&ka, &ka).unwrap().is_zero());
            for b in 0..256u16 {
                let kb = one(b);
                let ab = xor_combine(&ka, &kb).unwrap();
                assert_eq!(ab, xor_combine(&kb, &ka).unwrap());
                assert_eq!(xor_combine(&ab, &kb).unwrap(), ka);
            }
        }
        // Associativity on a coarser grid keeps this test fast.
        for a in (0..256u16).step_by(7) {
            for b in (0..256u16).step_by(5) {
                for c in (0..256u16).step_by(3) {
                    let l = xor_combine(&xor_combine(&one(a), &one(b)).unwrap(), &one(c)).unwrap();
                    let r = xor_combine(&one(a), &xor_combine(&one(b), &one(c)).unwrap()).unwrap();
                    assert_eq!(l, r);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn xor_algebra_16_bytes(a in proptest::array::uniform16(any::<u8>()),
                                b in proptest::array::uniform16(any::<u8>()),
                                c in proptest::array::uniform16(any::<u8>())) {
            let (a, b, c) = (KeyBytes::from(&a[..]), KeyBytes::from(&b[..]), KeyBytes::from(&c[..]));
            let ab = xor_combine(&a, &b).unwrap();
            prop_assert_eq!(&ab, &xor_combine(&b, &a).unwrap());
            prop_assert_eq!(
                xor_combine(&ab, &c).unwrap(),
                xor_combine(&a, &xor_combine(&b, &c).unwrap()).unwrap()
            );
            prop_assert_eq!(xor_combine(&ab, &b).unwrap(), a.clone());
            prop_assert_eq!(xor_combine(&a, &KeyBytes::zero(16)).unwrap(), a);
        }

        #[test]
        fn mac_accepts_own_tags(key in proptest::collection::vec(any::<u8>(), 1..48),
                                msg in proptest::collection::vec(any::<u8>(), 0..96)) {
            let key = KeyBytes::new(key);
            let tag = mac_tag(&key, &msg).unwrap();
            prop_assert!(mac_verify(&key, &msg, &tag));
        }
    }

    #[test]
    fn mac_rejects_every_single_bit_flip() {
        let mut rng = SeedStream::new(3);
        let key = rng.key(16);
        let msg = rng.bytes(64);
        let tag = mac_tag(&key, &msg).unwrap();
        assert!(mac_verify(&key, &msg, &tag));
        for bit in 0..512 {
            let mut mask = vec![0u8; 64];
            mask[bit / 8] = 1 << (bit % 8);
            let mut flipped = msg.clone();
            xor_in_place(&mut flipped, &mask).unwrap();
            assert!(!mac_verify(&key, &flipped, &tag), "bit {bit}");
        }
        for bit in 0..TAG_BYTES * 8 {
            let mut t = tag;
            t.0[bit / 8] ^= 1 << (bit % 8);
            assert!(!mac_verify(&key, &msg, &t));
        }
    }

    #[test]
    fn mac_rejects_wrong_keys() {
        let mut rng = SeedStream::new(4);
        let key = rng.key(16);
        let msg = b"C-value || nonce || identities";
        let tag = mac_tag(&key, msg).unwrap();
        for _ in 0..1_000 {
            let other = rng.key(16);
            assert!(other == key || !mac_verify(&other, msg, &tag));
        }
        assert!(!mac_verify(&KeyBytes::default(), msg, &tag));
        assert_eq!(mac_tag(&KeyBytes::default(), msg), Err(CryptoError::EmptyKey));
    }

    #[test]
    fn seed_stream_is_deterministic() {
        let mut a = SeedStream::new(42);
        let mut b = SeedStream::new(42);
        for _ in 0..10 {
            assert_eq!(a.key(16), b.key(16));
        }
        assert_ne!(SeedStream::new(42).key(16), SeedStream::new(43).key(16));
    }

    #[test]
    fn seed_stream_birthday_scan() {
        let mut rng = SeedStream::new(5);
        let mut seen = HashSet::with_capacity(100_000);
        for _ in 0..100_000 {
            assert!(seen.insert(rng.bytes(16)));
        }
    }

    #[test]
    fn seed_stream_byte_frequencies_pass_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mut rng = SeedStream::new(6);
        let mut counts = [0u64; 256];
        let draws = 100_000;
        for _ in 0..draws {
            for b in rng.bytes(16) {
                counts[b as usize] += 1;
            }
        }
        let expected = (draws * 16) as f64 / 256.0;
        let stat: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        let critical = ChiSquared::new(255.0).unwrap().inverse_cdf(0.999);
        assert!((critical - 330.52).abs() < 0.01, "critical {critical}");
        assert!(stat < critical, "chi-square {stat} >= {critical}");
    }

    #[test]
    fn nonce_ledger_refuses_reuse() {
        let mut ledger = NonceLedger::new();
        let n = Nonce::new(vec![9; 16]);
        assert!(ledger.record(&n));
        assert!(!ledger.record(&n));
        assert_eq!(ledger.len(), 1);
    }

    #[test]
    fn key_bytes_serde_is_hex() {
        let key = k("deadbeef");
        let s = serde_json::to_string(&key).unwrap();
        assert_eq!(s, "\"deadbeef\"");
        assert_eq!(serde_json::from_str::<KeyBytes>(&s).unwrap(), key);
    }
}
