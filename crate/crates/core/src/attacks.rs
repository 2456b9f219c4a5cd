//! The attack catalog: adversary strategies, verdict predicates and a suite
//! runner that replays every attack against its baseline scheme and, where
//! one exists, the fixed variant.
//!
//! Strategies only ever see what [`Adversary`] hands them (whole envelopes)
//! plus an explicit [`Grant`] of the long-term keys their identity
//! legitimately holds. Everything else they know is derived by XOR and KDF
//! from those two sources.
//!
//! A verdict is a list of [`Claim`]s evaluated on the terminal party states.
//! The attack succeeds iff every claim holds. The claims are stored in the
//! session records so the auditor can re-derive each one from the transcript.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::audit::{audit_runs, AuditError, Claim};
use crate::crypto::{
    kdf_derive, mac_tag, mac_verify, xor_combine, KdfSpec, KeyBytes, Nonce, SeedStream, Tag,
    TAG_BYTES,
};
use crate::netsim::{
    Adversary, AdversaryAction, Envelope, EnvelopeKind, Injector, Io, Network, Party,
};
use crate::protocols::{
    a4, build_machines, run_in_world, run_stage, Machine, ProtocolError, Role, RunOptions,
    RunRecord, SchemeConfig, Scheme, SetupMessage, Status, World,
};
use crate::PartyId;

/// Identity every catalog strategy operates under.
pub const ADVERSARY: &str = "E";

/// Mixed into the scenario seed to give adversaries their own stream.
const ADVERSARY_STREAM: u64 = 0x5eed_0fad_7e55_a11e;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttackError {
    #[error("unknown attack {0:?}")]
    UnknownAttack(String),
    #[error("{attack} does not target {scheme}")]
    BadTarget { attack: AttackId, scheme: Scheme },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("audit failed: {0}")]
    Audit(#[from] AuditError),
}

#[allow(non_camel_case_types)]
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum AttackId {
    ATK_A1_IDCONF,
    ATK_A1_MITM,
    ATK_A2_TAMPER,
    ATK_A3_IDCONF,
    ATK_A4_MASK,
    ATK_A4_NONCE,
}

impl AttackId {
    pub const ALL: [AttackId; 6] = [
        AttackId::ATK_A1_IDCONF,
        AttackId::ATK_A1_MITM,
        AttackId::ATK_A2_TAMPER,
        AttackId::ATK_A3_IDCONF,
        AttackId::ATK_A4_MASK,
        AttackId::ATK_A4_NONCE,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackId::ATK_A1_IDCONF => "ATK_A1_IDCONF",
            AttackId::ATK_A1_MITM => "ATK_A1_MITM",
            AttackId::ATK_A2_TAMPER => "ATK_A2_TAMPER",
            AttackId::ATK_A3_IDCONF => "ATK_A3_IDCONF",
            AttackId::ATK_A4_MASK => "ATK_A4_MASK",
            AttackId::ATK_A4_NONCE => "ATK_A4_NONCE",
        }
    }

    pub fn parse(s: &str) -> Result<AttackId, AttackError> {
        AttackId::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| AttackError::UnknownAttack(s.to_owned()))
    }

    pub fn baseline(self) -> Scheme {
        match self {
            AttackId::ATK_A1_IDCONF | AttackId::ATK_A1_MITM => Scheme::A1,
            AttackId::ATK_A2_TAMPER => Scheme::A2,
            AttackId::ATK_A3_IDCONF => Scheme::A3_3,
            AttackId::ATK_A4_MASK | AttackId::ATK_A4_NONCE => Scheme::A4,
        }
    }

    /// The variant that is meant to resist this attack.
    pub fn fixed(self) -> Option<Scheme> {
        match self {
            AttackId::ATK_A1_IDCONF | AttackId::ATK_A1_MITM => Some(Scheme::A1F),
            AttackId::ATK_A4_MASK | AttackId::ATK_A4_NONCE => Some(Scheme::A4F),
            AttackId::ATK_A2_TAMPER | AttackId::ATK_A3_IDCONF => None,
        }
    }

    pub fn targets(self) -> Vec<Scheme> {
        std::iter::once(self.baseline()).chain(self.fixed()).collect()
    }
}

impl fmt::Display for AttackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Long-term keys an adversary identity legitimately owns, and the public
/// KDF parameters. This is the only key material a strategy receives.
#[derive(Clone, Debug)]
pub struct Grant {
    pub id: PartyId,
    pub spec: KdfSpec,
    keys: BTreeMap<PartyId, KeyBytes>,
}

impl Grant {
    /// Hands `id` exactly its own keyring from `world`.
    pub fn from_world(world: &World, id: &PartyId) -> Grant {
        Grant {
            id: id.clone(),
            spec: world.kdf,
            keys: world.keyring(id),
        }
    }

    pub fn peers(&self) -> impl Iterator<Item = &PartyId> {
        self.keys.keys()
    }

    /// One-time key with `peer` under the announcement `setup`.
    pub fn one_time(&self, peer: &PartyId, setup: &SetupMessage) -> Option<KeyBytes> {
        kdf_derive(self.keys.get(peer)?, &setup.otk_context(), self.spec).ok()
    }
}

/// Structured evidence behind a verdict.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Evidence {
    /// Every condition of the verdict, each with its evaluated truth.
    pub conditions: Vec<Claim>,
    /// Keys the adversary extracted or chose, by name.
    pub adversary_knowledge: BTreeMap<String, KeyBytes>,
    pub details: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AttackVerdict {
    pub attack: AttackId,
    pub target: Scheme,
    pub seed: u64,
    pub success: bool,
    pub evidence: Evidence,
    /// The audited sessions the evidence refers to.
    #[serde(skip)]
    pub records: Vec<RunRecord>,
}

/// Knobs used by boundary tests.
#[derive(Clone, Debug, Default)]
pub struct AttackOptions {
    /// Overrides the adversary's randomly drawn XOR mask.
    pub mask: Option<KeyBytes>,
}

fn e() -> PartyId {
    PartyId::from(ADVERSARY)
}

fn p(s: &str) -> PartyId {
    PartyId::from(s)
}

fn adversary_rng(seed: u64) -> SeedStream {
    SeedStream::new(seed ^ ADVERSARY_STREAM)
}

fn cfg_for(scheme: Scheme, parties: &[&str], center: Option<&str>, seed: u64) -> SchemeConfig {
    let mut cfg = SchemeConfig::standard(scheme, parties.len(), seed);
    cfg.parties = parties.iter().map(|x| p(x)).collect();
    cfg.center = center.map(p);
    cfg
}

/// Evaluates `wanted` on `rec`, stores the claims in it, and reports
/// whether every one holds.
fn conclude(rec: &mut RunRecord, wanted: Vec<Claim>, evidence: &mut Evidence) -> bool {
    let evaluated: Vec<Claim> = wanted.into_iter().map(|c| with_truth(c, rec)).collect();
    let all = evaluated.iter().all(Claim::holds);
    rec.claims = evaluated.clone();
    evidence.conditions.extend(evaluated);
    all
}

fn with_truth(c: Claim, rec: &RunRecord) -> Claim {
    let t = c.evaluate(rec);
    match c {
        Claim::KeysEqual { left, right, .. } => Claim::KeysEqual { left, right, holds: t },
        Claim::KeysDiffer { left, right, .. } => Claim::KeysDiffer { left, right, holds: t },
        Claim::KeyValue { party, key, .. } => Claim::KeyValue { party, key, holds: t },
        Claim::KeyShift { party, reference, mask, .. } => Claim::KeyShift {
            party,
            reference,
            mask,
            holds: t,
        },
        Claim::Belief { party, peers, .. } => Claim::Belief { party, peers, holds: t },
        Claim::OneTimeKey { party, peer, key, .. } => Claim::OneTimeKey {
            party,
            peer,
            key,
            holds: t,
        },
        Claim::Status { party, status, .. } => Claim::Status { party, status, holds: t },
    }
}

/// Records `who`'s terminal status and key in the evidence details.
fn describe(rec: &RunRecord, who: &str, evidence: &mut Evidence) {
    let Some(st) = rec.party(&p(who)) else { return };
    let status = match st.cause() {
        Some(c) => format!("{:?} ({c:?})", st.status()),
        None => format!("{:?}", st.status()),
    };
    evidence.details.insert(format!("{who}_status"), status);
    if let Some(k) = st.accepted_key() {
        evidence.details.insert(format!("{who}_key"), k.to_hex());
    }
}

fn accepted(party: &str) -> Claim {
    Claim::Status {
        party: p(party),
        status: Status::Accepted,
        holds: false,
    }
}

fn believes(party: &str, peers: &[&str]) -> Claim {
    Claim::Belief {
        party: p(party),
        peers: peers.iter().map(|x| p(x)).collect(),
        holds: false,
    }
}

fn same_key(left: &str, right: &str) -> Claim {
    Claim::KeysEqual {
        left: p(left),
        right: p(right),
        holds: false,
    }
}

/// Rewrites one participant name in the SETUP addressed to `victim`, and
/// records whatever is addressed to the adversary itself.
#[derive(Debug)]
pub struct IdentitySwap {
    grant: Grant,
    victim: PartyId,
    from: PartyId,
    to: PartyId,
    pub own_setup: Option<SetupMessage>,
    pub own_masked: Option<(PartyId, Vec<u8>)>,
}

impl IdentitySwap {
    pub fn new(grant: Grant, victim: PartyId, from: PartyId, to: PartyId) -> Self {
        IdentitySwap {
            grant,
            victim,
            from,
            to,
            own_setup: None,
            own_masked: None,
        }
    }

    /// The session key, when the adversary was itself a legitimate
    /// recipient of the session.
    pub fn extracted_key(&self) -> Option<KeyBytes> {
        let setup = self.own_setup.as_ref()?;
        let (center, masked) = self.own_masked.as_ref()?;
        let mask = self.grant.one_time(center, setup)?;
        xor_combine(&KeyBytes::new(masked.clone()), &mask).ok()
    }
}

impl Adversary for IdentitySwap {
    fn id(&self) -> &PartyId {
        &self.grant.id
    }

    fn decide(&mut self, env: &Envelope, _: &mut Injector<'_>) -> AdversaryAction {
        if env.kind != EnvelopeKind::Setup || env.receiver != self.victim {
            return AdversaryAction::Deliver;
        }
        let Some(mut setup) = SetupMessage::decode(&env.payload) else {
            return AdversaryAction::Deliver;
        };
        for slot in setup.participants.iter_mut().filter(|x| **x == self.from) {
            *slot = self.to.clone();
        }
        AdversaryAction::Modify(setup.encode())
    }

    fn receive(&mut self, env: &Envelope) {
        match env.kind {
            EnvelopeKind::Setup => self.own_setup = SetupMessage::decode(&env.payload),
            EnvelopeKind::Protocol => {
                self.own_masked = Some((env.claimed_sender.clone(), env.payload.clone()))
            }
            EnvelopeKind::Broadcast => {}
        }
    }
}

/// XORs a mask into the first `mask.len()` bytes of PROTOCOL payloads sent
/// by `targets`.
#[derive(Debug)]
pub struct MaskTamper {
    id: PartyId,
    targets: Vec<PartyId>,
    mask: KeyBytes,
}

impl MaskTamper {
    pub fn new(targets: Vec<PartyId>, mask: KeyBytes) -> Self {
        MaskTamper {
            id: e(),
            targets,
            mask,
        }
    }
}

impl Adversary for MaskTamper {
    fn id(&self) -> &PartyId {
        &self.id
    }

    fn decide(&mut self, env: &Envelope, _: &mut Injector<'_>) -> AdversaryAction {
        if env.kind != EnvelopeKind::Protocol || !self.targets.contains(&env.true_sender) {
            return AdversaryAction::Deliver;
        }
        let mut payload = env.payload.clone();
        for (b, m) in payload.iter_mut().zip(self.mask.as_bytes()) {
            *b ^= m;
        }
        AdversaryAction::Modify(payload)
    }
}

fn idconf(
    target: Scheme,
    seed: u64,
    cfg: SchemeConfig,
    victim: &str,
    claims: Vec<Claim>,
) -> Result<AttackVerdict, AttackError> {
    let mut world = World::new(seed, cfg.kdf_spec());
    let grant = Grant::from_world(&world, &e());
    let mut adv = IdentitySwap::new(grant, p(victim), p("D"), p("B"));
    let mut rec = run_in_world(
        &mut world,
        &cfg,
        &mut adv,
        &RunOptions {
            stage: Some("attack".into()),
            ..Default::default()
        },
    )?;
    let mut evidence = Evidence::default();
    evidence
        .details
        .insert("forged_setup".into(), format!("{victim} told D is B"));
    let success = conclude(&mut rec, claims, &mut evidence);
    Ok(AttackVerdict {
        attack: AttackId::ATK_A1_IDCONF,
        target,
        seed,
        success,
        evidence,
        records: vec![rec],
    })
}

/// A and D run a session through center C; E tells A the session is with B.
fn a1_idconf(target: Scheme, seed: u64) -> Result<AttackVerdict, AttackError> {
    let cfg = cfg_for(target, &["A", "D"], Some("C"), seed);
    let claims = vec![
        accepted("A"),
        accepted("D"),
        same_key("A", "D"),
        believes("A", &["B"]),
        believes("D", &["A"]),
        believes("C", &["A", "D"]),
    ];
    idconf(target, seed, cfg, "A", claims)
}

/// Initiator A runs the three-party scheme with C and D; E tells C that
/// the third member is B.
fn a3_idconf(target: Scheme, seed: u64) -> Result<AttackVerdict, AttackError> {
    let cfg = cfg_for(target, &["A", "C", "D"], None, seed);
    let claims = vec![
        accepted("A"),
        accepted("C"),
        accepted("D"),
        same_key("C", "A"),
        same_key("C", "D"),
        believes("C", &["A", "B"]),
        believes("D", &["A", "C"]),
        believes("A", &["C", "D"]),
    ];
    let mut v = idconf(target, seed, cfg, "C", claims)?;
    v.attack = AttackId::ATK_A3_IDCONF;
    Ok(v)
}

fn a2_tamper(target: Scheme, seed: u64, opts: &AttackOptions) -> Result<AttackVerdict, AttackError> {
    let cfg = cfg_for(target, &["A"], Some("S"), seed);
    let mask = opts
        .mask
        .clone()
        .unwrap_or_else(|| adversary_rng(seed).nonzero_key(cfg.key_bytes));
    let mut world = World::new(seed, cfg.kdf_spec());
    let mut adv = MaskTamper::new(vec![p("S")], mask.clone());
    let mut rec = run_in_world(&mut world, &cfg, &mut adv, &RunOptions::default())?;
    let mut evidence = Evidence::default();
    evidence.adversary_knowledge.insert("M".into(), mask.clone());
    let claims = vec![
        accepted("A"),
        Claim::KeyShift {
            party: p("A"),
            reference: p("S"),
            mask,
            holds: false,
        },
        Claim::KeysDiffer {
            left: p("A"),
            right: p("S"),
            holds: false,
        },
    ];
    let success = conclude(&mut rec, claims, &mut evidence);
    Ok(AttackVerdict {
        attack: AttackId::ATK_A2_TAMPER,
        target,
        seed,
        success,
        evidence,
        records: vec![rec],
    })
}

fn a4_mask(target: Scheme, seed: u64, opts: &AttackOptions) -> Result<AttackVerdict, AttackError> {
    let cfg = SchemeConfig::standard(target, 3, seed);
    let mask = opts
        .mask
        .clone()
        .unwrap_or_else(|| adversary_rng(seed).nonzero_key(cfg.key_bytes));
    let mut world = World::new(seed, cfg.kdf_spec());
    let mut adv = MaskTamper::new(vec![p("A"), p("B")], mask.clone());
    let mut rec = run_in_world(&mut world, &cfg, &mut adv, &RunOptions::default())?;
    let mut evidence = Evidence::default();
    evidence.adversary_knowledge.insert("M".into(), mask.clone());
    describe(&rec, "C", &mut evidence);
    if let Some(k) = rec.key_of(&p("A")) {
        evidence.details.insert("honest_key".into(), k.to_hex());
    }
    let claims = vec![
        accepted("C"),
        Claim::KeyShift {
            party: p("C"),
            reference: p("A"),
            mask,
            holds: false,
        },
        Claim::KeysDiffer {
            left: p("C"),
            right: p("A"),
            holds: false,
        },
    ];
    let success = conclude(&mut rec, claims, &mut evidence);
    Ok(AttackVerdict {
        attack: AttackId::ATK_A4_MASK,
        target,
        seed,
        success,
        evidence,
        records: vec![rec],
    })
}

/// Authenticated encryption for the relay check: keystream and tag are
/// HMAC outputs under the session key.
pub mod channel {
    use super::*;

    fn keystream(key: &KeyBytes, len: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(len);
        let mut block = 0u32;
        while out.len() < len {
            let t = mac_tag(key, &[b"ks".as_slice(), &block.to_be_bytes()].concat())
                .expect("non-empty key");
            out.extend_from_slice(t.as_bytes());
            block += 1;
        }
        out.truncate(len);
        out
    }

    pub fn seal(key: &KeyBytes, msg: &[u8]) -> Vec<u8> {
        let mut ct: Vec<u8> = msg.iter().zip(keystream(key, msg.len())).map(|(m, k)| m ^ k).collect();
        let tag = mac_tag(key, &[b"tag".as_slice(), &ct].concat()).expect("non-empty key");
        ct.extend_from_slice(tag.as_bytes());
        ct
    }

    pub fn open(key: &KeyBytes, sealed: &[u8]) -> Option<Vec<u8>> {
        let split = sealed.len().checked_sub(TAG_BYTES)?;
        let (ct, tag) = sealed.split_at(split);
        if !mac_verify(key, &[b"tag".as_slice(), ct].concat(), &Tag::from_slice(tag)?) {
            return None;
        }
        Some(ct.iter().zip(keystream(key, ct.len())).map(|(c, k)| c ^ k).collect())
    }
}

/// Application endpoint for the relay check.
#[derive(Debug)]
struct Endpoint {
    id: PartyId,
    key: KeyBytes,
    outgoing: Option<(PartyId, Vec<u8>)>,
    received: Option<Option<Vec<u8>>>,
}

impl Party for Endpoint {
    fn id(&self) -> &PartyId {
        &self.id
    }

    fn start(&mut self, io: &mut Io<'_>) {
        if let Some((to, msg)) = self.outgoing.take() {
            io.send(&to, EnvelopeKind::Protocol, channel::seal(&self.key, &msg));
        }
    }

    fn receive(&mut self, env: &Envelope, _: &mut Io<'_>) {
        self.received = Some(channel::open(&self.key, &env.payload));
    }
}

/// Opens A's traffic with the key shared with A and reseals it with the key
/// shared with B.
struct Relay {
    id: PartyId,
    key_a: KeyBytes,
    key_b: KeyBytes,
    read: Option<Vec<u8>>,
}

impl Adversary for Relay {
    fn id(&self) -> &PartyId {
        &self.id
    }

    fn decide(&mut self, env: &Envelope, _: &mut Injector<'_>) -> AdversaryAction {
        match channel::open(&self.key_a, &env.payload) {
            Some(plain) => {
                let resealed = channel::seal(&self.key_b, &plain);
                self.read = Some(plain);
                AdversaryAction::Modify(resealed)
            }
            None => AdversaryAction::Drop,
        }
    }
}

/// One identity-confusion leg of the relay attack: `victim` runs a session
/// with E through C, believing its peer is `believed`.
fn mitm_leg(
    world: &mut World,
    target: Scheme,
    victim: &str,
    believed: &str,
) -> Result<(RunRecord, Option<KeyBytes>), AttackError> {
    let mut cfg = cfg_for(target, &[victim, ADVERSARY], Some("C"), world.rng.seed());
    cfg.kdf = world.kdf.algorithm;
    for (a, b) in cfg.key_pairs() {
        world.provision(&a, &b);
    }
    let machines: Vec<Machine> = build_machines(world, &cfg, &RunOptions::default())?
        .into_iter()
        .filter(|m| m.state().id != e())
        .collect();
    let grant = Grant::from_world(world, &e());
    let mut adv = IdentitySwap::new(grant, p(victim), e(), p(believed));
    let rec = run_stage(world, target, &format!("leg-{victim}"), machines, &mut adv)?;
    Ok((rec, adv.extracted_key()))
}

fn a1_mitm(target: Scheme, seed: u64) -> Result<AttackVerdict, AttackError> {
    let spec = SchemeConfig::standard(target, 2, seed).kdf_spec();
    let mut world = World::new(seed, spec);
    let (mut leg_a, key1) = mitm_leg(&mut world, target, "A", "B")?;
    let (mut leg_b, key2) = mitm_leg(&mut world, target, "B", "A")?;

    let mut evidence = Evidence::default();
    let mut success = true;
    for (rec, key, who, peer, name) in [
        (&mut leg_a, &key1, "A", "B", "key1"),
        (&mut leg_b, &key2, "B", "A", "key2"),
    ] {
        let Some(k) = key else {
            success = false;
            continue;
        };
        evidence.adversary_knowledge.insert(name.into(), k.clone());
        let claims = vec![
            accepted(who),
            believes(who, &[peer]),
            Claim::KeyValue {
                party: p(who),
                key: k.clone(),
                holds: false,
            },
        ];
        success &= conclude(rec, claims, &mut evidence);
    }

    // Relay check: A seals a message "for B" under its own key; E reads and
    // reseals it; B opens it under its own key.
    let relayed = match (leg_a.key_of(&p("A")), leg_b.key_of(&p("B")), &key1, &key2) {
        (Some(ka), Some(kb), Some(k1), Some(k2)) => {
            let message = b"wire 100 to account 7 -- A".to_vec();
            let mut net = Network::new("RELAY");
            net.register(Endpoint {
                id: p("A"),
                key: ka.clone(),
                outgoing: Some((p("B"), message.clone())),
                received: None,
            })
            .map_err(ProtocolError::from)?;
            net.register(Endpoint {
                id: p("B"),
                key: kb.clone(),
                outgoing: None,
                received: None,
            })
            .map_err(ProtocolError::from)?;
            let mut relay = Relay {
                id: e(),
                key_a: k1.clone(),
                key_b: k2.clone(),
                read: None,
            };
            net.run_until_quiescent(&mut adversary_rng(seed), &mut relay)
                .map_err(ProtocolError::from)?;
            let b_got = net.party(&p("B")).and_then(|b| b.received.clone()).flatten();
            let ok = b_got.as_deref() == Some(message.as_slice())
                && relay.read.as_deref() == Some(message.as_slice());
            evidence
                .details
                .insert("relay_message".into(), String::from_utf8_lossy(&message).into_owned());
            ok
        }
        _ => false,
    };
    evidence
        .details
        .insert("relay_delivered_undetected".into(), relayed.to_string());
    Ok(AttackVerdict {
        attack: AttackId::ATK_A1_MITM,
        target,
        seed,
        success: success && relayed,
        evidence,
        records: vec![leg_a, leg_b],
    })
}

/// Insider choreography against the consistency check.
///
/// Stage 1 (with A) and stage 2 (with B): E announces a session in which it
/// is the other initiator, drops the masked value addressed to C and strips
/// its own one-time key from it, learning `K_AC` and `K_BC`. Stage 3: E
/// announces a session between A, B and C in their names and sends
/// `K_AC ⊕ K*` and `K_BC ⊕ K*`. All three stages use the same nonce.
#[derive(Debug)]
pub struct NonceStager {
    grant: Grant,
    nonce: Nonce,
    /// Sessions to announce, in stage order.
    script: Script,
    fired: bool,
    pub learned: BTreeMap<PartyId, KeyBytes>,
}

#[derive(Debug, Clone)]
enum Script {
    Harvest { victim: PartyId, scheme: Scheme },
    Forge { scheme: Scheme, key: KeyBytes, known: BTreeMap<PartyId, KeyBytes> },
}

impl NonceStager {
    fn harvest_setup(&self, victim: &PartyId, scheme: Scheme) -> SetupMessage {
        SetupMessage {
            scheme,
            participants: vec![victim.clone(), self.grant.id.clone(), p("C")],
            distributor: self.grant.id.clone(),
            initiators: vec![victim.clone(), self.grant.id.clone()],
            nonce: self.nonce.clone(),
        }
    }
}

impl Adversary for NonceStager {
    fn id(&self) -> &PartyId {
        &self.grant.id
    }

    fn decide(&mut self, env: &Envelope, _: &mut Injector<'_>) -> AdversaryAction {
        let Script::Harvest { victim, scheme } = &self.script else {
            return AdversaryAction::Deliver;
        };
        if env.kind != EnvelopeKind::Protocol || env.true_sender != *victim {
            return AdversaryAction::Deliver;
        }
        let setup = self.harvest_setup(victim, *scheme);
        let len = self.grant.spec.output_length;
        if let Some(mine) = self.grant.one_time(victim, &setup) {
            if env.payload.len() >= len {
                let masked = KeyBytes::from(&env.payload[..len]);
                let k = xor_combine(&masked, &mine).expect("lengths match");
                self.learned.insert(victim.clone(), k);
            }
        }
        AdversaryAction::Drop
    }

    fn idle(&mut self, inject: &mut Injector<'_>) {
        if self.fired {
            return;
        }
        self.fired = true;
        match self.script.clone() {
            Script::Harvest { victim, scheme } => {
                let setup = self.harvest_setup(&victim, scheme);
                inject.inject(&self.grant.id, &victim, EnvelopeKind::Setup, setup.encode());
            }
            Script::Forge { scheme, key, known } => {
                let (a, b, c) = (p("A"), p("B"), p("C"));
                let setup = SetupMessage {
                    scheme,
                    participants: vec![a.clone(), b.clone(), c.clone()],
                    distributor: a.clone(),
                    initiators: vec![a.clone(), b.clone()],
                    nonce: self.nonce.clone(),
                };
                inject.inject(&a, &c, EnvelopeKind::Setup, setup.encode());
                for who in [&a, &b] {
                    let Some(k) = known.get(who) else { continue };
                    let masked = xor_combine(k, &key).expect("lengths match");
                    let mut payload = masked.as_bytes().to_vec();
                    if scheme == Scheme::A4F {
                        // E's best effort: a tag under the key it learned.
                        let tag = mac_tag(k, &a4::mac_input(masked.as_bytes(), &setup))
                            .expect("non-empty key");
                        payload.extend_from_slice(tag.as_bytes());
                    }
                    inject.inject(who, &c, EnvelopeKind::Protocol, payload);
                }
            }
        }
    }
}

fn a4_nonce(target: Scheme, seed: u64) -> Result<AttackVerdict, AttackError> {
    let cfg = SchemeConfig::standard(target, 3, seed);
    let spec = cfg.kdf_spec();
    let mut world = World::new(seed, spec);
    for (a, b) in cfg.key_pairs() {
        world.provision(&a, &b);
    }
    // E is a legitimate-looking insider with keys shared with A and B.
    world.provision(&p("A"), &e());
    world.provision(&p("B"), &e());

    let mut rng = adversary_rng(seed);
    let nonce = rng.nonce(spec.output_length);
    let k_star = rng.key(spec.output_length);
    let grant = Grant::from_world(&world, &e());

    let mut records = Vec::new();
    let mut learned = BTreeMap::new();
    for victim in ["A", "B"] {
        let machines = vec![
            Machine::A4Initiator(a4::Initiator::new(
                world.party_state(&p(victim), Role::Initiator),
                target,
                spec,
            )),
            Machine::A4Responder(a4::Responder::new(
                world.party_state(&p("C"), Role::Responder),
                target,
                spec,
            )),
        ];
        let mut adv = NonceStager {
            grant: grant.clone(),
            nonce: nonce.clone(),
            script: Script::Harvest {
                victim: p(victim),
                scheme: target,
            },
            fired: false,
            learned: BTreeMap::new(),
        };
        let stage = format!("stage-{}-{victim}", records.len() + 1);
        records.push(run_stage(&mut world, target, &stage, machines, &mut adv)?);
        learned.extend(adv.learned);
    }

    let machines = vec![Machine::A4Responder(a4::Responder::new(
        world.party_state(&p("C"), Role::Responder),
        target,
        spec,
    ))];
    let mut adv = NonceStager {
        grant,
        nonce: nonce.clone(),
        script: Script::Forge {
            scheme: target,
            key: k_star.clone(),
            known: learned.clone(),
        },
        fired: false,
        learned: BTreeMap::new(),
    };
    records.push(run_stage(&mut world, target, "stage-3-C", machines, &mut adv)?);

    let mut evidence = Evidence::default();
    evidence.adversary_knowledge.insert("K*".into(), k_star.clone());
    evidence.details.insert("nonce".into(), nonce.to_hex());
    let mut success = true;
    for (i, victim) in ["A", "B"].into_iter().enumerate() {
        let Some(k) = learned.get(&p(victim)) else {
            success = false;
            continue;
        };
        evidence
            .adversary_knowledge
            .insert(format!("K_{victim}C"), k.clone());
        let claims = vec![Claim::OneTimeKey {
            party: p(victim),
            peer: p("C"),
            key: k.clone(),
            holds: false,
        }];
        success &= conclude(&mut records[i], claims, &mut evidence);
    }
    let mut forged = vec![
        accepted("C"),
        Claim::KeyValue {
            party: p("C"),
            key: k_star,
            holds: false,
        },
    ];
    for victim in ["A", "B"] {
        if let Some(k) = learned.get(&p(victim)) {
            forged.push(Claim::OneTimeKey {
                party: p("C"),
                peer: p(victim),
                key: k.clone(),
                holds: false,
            });
        }
    }
    success &= conclude(&mut records[2], forged, &mut evidence);

    // Nobody honest was asked to use a nonce twice.
    let mut honest_reuse = false;
    for rec in &records {
        for st in rec.parties.values() {
            honest_reuse |= st.cause() == Some(&crate::protocols::RejectCause::NonceReuse);
        }
    }
    evidence
        .details
        .insert("honest_nonce_reuse".into(), honest_reuse.to_string());
    describe(&records[2], "C", &mut evidence);
    Ok(AttackVerdict {
        attack: AttackId::ATK_A4_NONCE,
        target,
        seed,
        success: success && !honest_reuse,
        evidence,
        records,
    })
}

/// Runs one attack against `target` for one seed.
pub fn run_attack(id: AttackId, target: Scheme, seed: u64) -> Result<AttackVerdict, AttackError> {
    run_attack_with(id, target, seed, &AttackOptions::default())
}

pub fn run_attack_with(
    id: AttackId,
    target: Scheme,
    seed: u64,
    opts: &AttackOptions,
) -> Result<AttackVerdict, AttackError> {
    if !id.targets().contains(&target) {
        return Err(AttackError::BadTarget { attack: id, scheme: target });
    }
    match id {
        AttackId::ATK_A1_IDCONF => a1_idconf(target, seed),
        AttackId::ATK_A1_MITM => a1_mitm(target, seed),
        AttackId::ATK_A2_TAMPER => a2_tamper(target, seed, opts),
        AttackId::ATK_A3_IDCONF => a3_idconf(target, seed),
        AttackId::ATK_A4_MASK => a4_mask(target, seed, opts),
        AttackId::ATK_A4_NONCE => a4_nonce(target, seed),
    }
}

/// Aggregate over seeds for one `(attack, target)` pair.
#[derive(Clone, Debug, Serialize)]
pub struct ReplayBlock {
    pub attack: AttackId,
    pub target: Scheme,
    pub seeds: u64,
    pub successes: u64,
    pub audited: u64,
    pub evidence_sample: Evidence,
}

/// One catalog entry: the baseline block plus replays against fixes.
#[derive(Clone, Debug, Serialize)]
pub struct AttackBlock {
    #[serde(flatten)]
    pub baseline: ReplayBlock,
    pub fixed_replays: Vec<ReplayBlock>,
}

impl AttackBlock {
    /// Baseline always falls and every fix always stands.
    pub fn expected(&self) -> bool {
        self.baseline.successes == self.baseline.seeds
            && self.fixed_replays.iter().all(|r| r.successes == 0)
    }

    pub fn deviations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let b = &self.baseline;
        if b.successes != b.seeds {
            out.push(format!("{} vs {}: {}/{} successes", b.attack, b.target, b.successes, b.seeds));
        }
        for r in &self.fixed_replays {
            if r.successes != 0 {
                out.push(format!("{} vs {}: {}/{} successes", r.attack, r.target, r.successes, r.seeds));
            }
        }
        out
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub base_seed: u64,
    pub attacks: Vec<AttackBlock>,
}

impl SuiteReport {
    pub fn expected_world(&self) -> bool {
        self.attacks.iter().all(AttackBlock::expected)
    }

    pub fn deviations(&self) -> Vec<String> {
        self.attacks.iter().flat_map(AttackBlock::deviations).collect()
    }
}

/// Runs `id` against `target` for seeds `base..base+seeds`, auditing every
/// session; `sink` sees each verdict (e.g. to write transcripts).
pub fn replay(
    id: AttackId,
    target: Scheme,
    base: u64,
    seeds: u64,
    sink: &mut dyn FnMut(&AttackVerdict),
) -> Result<ReplayBlock, AttackError> {
    let mut successes = 0;
    let mut audited = 0;
    let mut sample = None;
    for s in base..base + seeds {
        let v = run_attack(id, target, s)?;
        audit_runs(&v.records)?;
        audited += 1;
        successes += u64::from(v.success);
        sink(&v);
        if sample.is_none() {
            sample = Some(v.evidence.clone());
        }
    }
    Ok(ReplayBlock {
        attack: id,
        target,
        seeds,
        successes,
        audited,
        evidence_sample: sample.unwrap_or_default(),
    })
}

pub fn run_suite(
    ids: &[AttackId],
    base: u64,
    seeds: u64,
    sink: &mut dyn FnMut(&AttackVerdict),
) -> Result<SuiteReport, AttackError> {
    let mut attacks = Vec::new();
    for &id in ids {
        let baseline = replay(id, id.baseline(), base, seeds, sink)?;
        let fixed_replays = id
            .fixed()
            .into_iter()
            .map(|f| replay(id, f, base, seeds, sink))
            .collect::<Result<_, _>>()?;
        attacks.push(AttackBlock {
            baseline,
            fixed_replays,
        });
    }
    Ok(SuiteReport {
        base_seed: base,
        attacks,
    })
}
