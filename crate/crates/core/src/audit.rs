//! Session record files and an independent transcript auditor.
//!
//! A record file holds one or more sessions. Each session is three kinds of
//! JSON lines:
//!
//! 1. a header: `{"record":"header", scheme, stage, seed, kdf, key_bytes,
//!    adversary, parties, long_term_keys, prior_nonces}`,
//! 2. one transcript event per line, exactly as exported by
//!    [`crate::netsim::Transcript::to_jsonl`],
//! 3. an outcome: `{"record":"outcome", parties, warnings, claims}`.
//!
//! The auditor does not reuse the protocol state machines. From the header
//! key material and the delivered messages it replays what every honest
//! party must have sent and concluded, then checks that the transcript and
//! outcome agree bit-exactly and that every recorded [`Claim`] is true.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::crypto::{
    kdf_derive, mac_verify, KdfAlgorithm, KdfContext, KdfSpec, KeyBytes, Nonce, Tag, TAG_BYTES,
};
use crate::netsim::{ActionRecord, EnvelopeKind, EventLine, TranscriptEvent};
use crate::protocols::{RejectCause, Role, RunRecord, Scheme, SetupMessage, Status};
use crate::PartyId;

/// A statement about a session's outcome that an attack verdict rests on.
/// `holds` is what the claimant asserts; the auditor recomputes it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "claim", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Claim {
    KeysEqual { left: PartyId, right: PartyId, holds: bool },
    /// Both parties accepted, with different keys.
    KeysDiffer { left: PartyId, right: PartyId, holds: bool },
    KeyValue { party: PartyId, key: KeyBytes, holds: bool },
    /// `party`'s key equals `reference`'s key XOR `mask`.
    KeyShift { party: PartyId, reference: PartyId, mask: KeyBytes, holds: bool },
    Belief { party: PartyId, peers: BTreeSet<PartyId>, holds: bool },
    /// `party`'s one-time key with `peer` equals `key`.
    OneTimeKey { party: PartyId, peer: PartyId, key: KeyBytes, holds: bool },
    Status { party: PartyId, status: Status, holds: bool },
}

impl Claim {
    pub fn holds(&self) -> bool {
        match self {
            Claim::KeysEqual { holds, .. }
            | Claim::KeysDiffer { holds, .. }
            | Claim::KeyValue { holds, .. }
            | Claim::KeyShift { holds, .. }
            | Claim::Belief { holds, .. }
            | Claim::OneTimeKey { holds, .. }
            | Claim::Status { holds, .. } => *holds,
        }
    }

    /// Evaluates the claim against a finished session.
    pub fn evaluate(&self, rec: &RunRecord) -> bool {
        let key = |p: &PartyId| rec.key_of(p);
        match self {
            Claim::KeysEqual { left, right, .. } => {
                matches!((key(left), key(right)), (Some(a), Some(b)) if a == b)
            }
            Claim::KeysDiffer { left, right, .. } => {
                matches!((key(left), key(right)), (Some(a), Some(b)) if a != b)
            }
            Claim::KeyValue { party, key: k, .. } => key(party) == Some(k),
            Claim::KeyShift { party, reference, mask, .. } => match (key(party), key(reference)) {
                (Some(a), Some(b)) => xor(b.as_bytes(), mask.as_bytes()).as_deref() == Some(a.as_bytes()),
                _ => false,
            },
            Claim::Belief { party, peers, .. } => {
                rec.party(party).is_some_and(|s| &s.believed_peers == peers)
            }
            Claim::OneTimeKey { party, peer, key: k, .. } => rec
                .party(party)
                .and_then(|s| s.one_time_keys.get(peer))
                .is_some_and(|x| x == k),
            Claim::Status { party, status, .. } => {
                rec.party(party).is_some_and(|s| s.status() == *status)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LongTermEntry {
    pub a: PartyId,
    pub b: PartyId,
    pub key_hex: KeyBytes,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub record: String,
    pub scheme: Scheme,
    pub stage: String,
    pub seed: u64,
    pub kdf: KdfAlgorithm,
    pub key_bytes: usize,
    pub adversary: PartyId,
    /// Registration order.
    pub parties: Vec<PartyId>,
    pub long_term_keys: Vec<LongTermEntry>,
    pub prior_nonces: BTreeMap<PartyId, Vec<Nonce>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartyOutcome {
    pub id: PartyId,
    pub role: Role,
    pub status: Status,
    pub cause: Option<RejectCause>,
    pub believed_peers: BTreeSet<PartyId>,
    pub nonce_hex: Option<Nonce>,
    pub accepted_key_hex: Option<KeyBytes>,
    pub one_time_keys: BTreeMap<PartyId, KeyBytes>,
    pub nonce_ledger: Vec<Nonce>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub record: String,
    pub parties: Vec<PartyOutcome>,
    pub warnings: Vec<String>,
    pub claims: Vec<Claim>,
}

/// One parsed session.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditRecord {
    pub header: Header,
    pub events: Vec<EventLine>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("{}", mismatch_text(.stage, .seq, .reason))]
    Mismatch {
        stage: String,
        seq: Option<u64>,
        reason: String,
    },
}

fn mismatch_text(stage: &str, seq: &Option<u64>, reason: &str) -> String {
    match seq {
        Some(s) => format!("stage {stage}: seq {s}: {reason}"),
        None => format!("stage {stage}: {reason}"),
    }
}

impl AuditError {
    /// The transcript position the mismatch is attributed to.
    pub fn seq(&self) -> Option<u64> {
        match self {
            AuditError::Mismatch { seq, .. } => *seq,
            AuditError::Parse { .. } => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub records: usize,
    pub events: usize,
    pub claims: usize,
    /// Claims that were asserted to hold and do.
    pub claims_holding: usize,
}

fn json_line<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string(v).expect("record lines serialize");
    s.push('\n');
    s
}

/// Serializes one session as header, events and outcome lines.
pub fn encode_record(rec: &RunRecord) -> String {
    let header = Header {
        record: "header".into(),
        scheme: rec.scheme,
        stage: rec.stage.clone(),
        seed: rec.seed,
        kdf: rec.kdf.algorithm,
        key_bytes: rec.kdf.output_length,
        adversary: rec.adversary.clone(),
        parties: rec.order.clone(),
        long_term_keys: rec
            .long_term_keys
            .iter()
            .map(|((a, b), k)| LongTermEntry {
                a: a.clone(),
                b: b.clone(),
                key_hex: k.clone(),
            })
            .collect(),
        prior_nonces: rec
            .prior_nonces
            .iter()
            .map(|(p, l)| (p.clone(), l.iter().cloned().collect()))
            .collect(),
    };
    let outcome = Outcome {
        record: "outcome".into(),
        parties: rec
            .order
            .iter()
            .map(|id| {
                let st = &rec.parties[id];
                PartyOutcome {
                    id: id.clone(),
                    role: st.role,
                    status: st.status(),
                    cause: st.cause().cloned(),
                    believed_peers: st.believed_peers.clone(),
                    nonce_hex: st.nonce.clone(),
                    accepted_key_hex: st.accepted_key().cloned(),
                    one_time_keys: st.one_time_keys.clone(),
                    nonce_ledger: st.nonce_ledger.iter().cloned().collect(),
                    warnings: st.warnings.clone(),
                }
            })
            .collect(),
        warnings: rec.warnings.clone(),
        claims: rec.claims.clone(),
    };
    let mut out = json_line(&header);
    out.push_str(&rec.transcript.to_jsonl());
    out.push_str(&json_line(&outcome));
    out
}

pub fn encode_records<'a>(recs: impl IntoIterator<Item = &'a RunRecord>) -> String {
    recs.into_iter().map(encode_record).collect()
}

/// Splits a record file into sessions.
pub fn parse_records(text: &str) -> Result<Vec<AuditRecord>, AuditError> {
    let mut out = Vec::new();
    let mut open: Option<(Header, Vec<EventLine>)> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let err = |reason: String| AuditError::Parse { line, reason };
        let v: Value = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        match v.get("record").and_then(Value::as_str) {
            Some("header") => {
                if open.is_some() {
                    return Err(err("header inside an open session".into()));
                }
                let h = serde_json::from_value(v).map_err(|e| err(e.to_string()))?;
                open = Some((h, Vec::new()));
            }
            Some("outcome") => {
                let (header, events) = open.take().ok_or_else(|| err("outcome without header".into()))?;
                let outcome = serde_json::from_value(v).map_err(|e| err(e.to_string()))?;
                out.push(AuditRecord {
                    header,
                    events,
                    outcome,
                });
            }
            Some(other) => return Err(err(format!("unknown record type {other:?}"))),
            None => {
                let (_, events) = open.as_mut().ok_or_else(|| err("event outside a session".into()))?;
                events.push(serde_json::from_value(v).map_err(|e| err(e.to_string()))?);
            }
        }
    }
    if open.is_some() {
        return Err(AuditError::Parse {
            line: text.lines().count(),
            reason: "session without outcome".into(),
        });
    }
    if out.is_empty() {
        return Err(AuditError::Parse {
            line: 0,
            reason: "no sessions".into(),
        });
    }
    Ok(out)
}

/// Audits every session in a record file.
pub fn audit_text(text: &str) -> Result<AuditReport, AuditError> {
    let mut report = AuditReport::default();
    for rec in parse_records(text)? {
        let r = audit_record(&rec)?;
        report.records += 1;
        report.events += r.events;
        report.claims += r.claims;
        report.claims_holding += r.claims_holding;
    }
    Ok(report)
}

/// Serializes and audits finished sessions.
pub fn audit_runs<'a>(recs: impl IntoIterator<Item = &'a RunRecord>) -> Result<AuditReport, AuditError> {
    audit_text(&encode_records(recs))
}

fn xor(a: &[u8], b: &[u8]) -> Option<Vec<u8>> {
    (a.len() == b.len()).then(|| a.iter().zip(b).map(|(x, y)| x ^ y).collect())
}

fn peers_of(setup: &SetupMessage, me: &PartyId) -> BTreeSet<PartyId> {
    let mut s: BTreeSet<PartyId> = match setup.scheme {
        Scheme::A2 if *me != setup.distributor => [setup.distributor.clone()].into(),
        Scheme::B2V1 => setup
            .participants
            .iter()
            .chain([&setup.distributor])
            .cloned()
            .collect(),
        _ => setup.participants.iter().cloned().collect(),
    };
    s.remove(me);
    s
}

fn otk_ctx(setup: &SetupMessage) -> KdfContext {
    let n = setup.nonce.clone();
    match setup.scheme {
        Scheme::A1F => KdfContext::bound(
            "otk",
            n,
            setup.participants.iter().chain([&setup.distributor]).cloned(),
        ),
        Scheme::A4F => KdfContext::bound("otk", n, setup.participants.iter().cloned()),
        _ => KdfContext::new("otk", n),
    }
}

fn a4_mac_message(masked: &[u8], setup: &SetupMessage) -> Vec<u8> {
    let ctx = KdfContext::bound("a4f-mac", setup.nonce.clone(), setup.participants.iter().cloned());
    [masked, &ctx.serialize()].concat()
}

fn tree_depth(i: usize) -> usize {
    (i + 1).ilog2() as usize
}

fn tree_level(d: usize, n: usize) -> (usize, usize) {
    (((1 << d) - 1).min(n), ((1 << (d + 1)) - 1).min(n))
}

struct Inbound<'a> {
    seq: u64,
    claimed: &'a PartyId,
    kind: EnvelopeKind,
    payload: &'a [u8],
}

struct Sent<'a> {
    seq: u64,
    receiver: &'a PartyId,
    kind: EnvelopeKind,
    payload: &'a [u8],
}

/// The auditor's own model of one honest party.
struct Model {
    me: PartyId,
    scheme: Scheme,
    spec: KdfSpec,
    keys: BTreeMap<PartyId, KeyBytes>,
    ledger: BTreeSet<Nonce>,
    status: Status,
    cause: Option<RejectCause>,
    beliefs: BTreeSet<PartyId>,
    nonce: Option<Nonce>,
    key: Option<KeyBytes>,
    otk: BTreeMap<PartyId, KeyBytes>,
    warnings: Vec<String>,
    sends: Vec<(PartyId, EnvelopeKind, Vec<u8>)>,
    others: Vec<PartyId>,
}

impl Model {
    fn running(&self) -> bool {
        self.status == Status::Running
    }

    fn fail(&mut self, c: RejectCause) {
        if self.running() {
            self.status = Status::Rejected;
            self.cause = Some(c);
        }
    }

    fn done(&mut self, k: KeyBytes) {
        if self.running() {
            self.status = Status::Accepted;
            self.key = Some(k);
        }
    }

    fn fresh(&mut self, n: &Nonce) -> bool {
        if !self.ledger.insert(n.clone()) {
            self.fail(RejectCause::NonceReuse);
            return false;
        }
        self.nonce = Some(n.clone());
        true
    }

    fn one_time(&mut self, peer: &PartyId, ctx: &KdfContext) -> Option<KeyBytes> {
        let Some(l) = self.keys.get(peer) else {
            self.fail(RejectCause::MissingLongTermKey(peer.clone()));
            return None;
        };
        match kdf_derive(l, ctx, self.spec) {
            Ok(k) => {
                self.otk.insert(peer.clone(), k.clone());
                Some(k)
            }
            Err(_) => {
                self.fail(RejectCause::LengthMismatch);
                None
            }
        }
    }

    fn send(&mut self, to: &PartyId, kind: EnvelopeKind, payload: Vec<u8>) {
        self.sends.push((to.clone(), kind, payload));
    }

    fn broadcast(&mut self, payload: Vec<u8>) {
        for to in self.others.clone() {
            self.send(&to, EnvelopeKind::Broadcast, payload.clone());
        }
    }

    fn setup(&self, payload: &[u8]) -> Option<SetupMessage> {
        SetupMessage::decode(payload).filter(|s| s.scheme == self.scheme)
    }
}

type Issues = Vec<(Option<u64>, String)>;

/// Checks the SETUP messages a proposer sent and returns them decoded.
fn proposer_setups(m: &Model, sent: &[Sent<'_>], issues: &mut Issues) -> Vec<SetupMessage> {
    let mut out = Vec::new();
    for s in sent.iter().filter(|s| s.kind == EnvelopeKind::Setup) {
        match SetupMessage::decode(s.payload) {
            Some(d) if d.encode() == s.payload && d.scheme == m.scheme && d.distributor == m.me => {
                if m.ledger.contains(&d.nonce) {
                    issues.push((Some(s.seq), format!("{} announced a used nonce", m.me)));
                }
                out.push(d);
            }
            _ => {
                issues.push((Some(s.seq), format!("{} sent a malformed SETUP", m.me)));
                return Vec::new();
            }
        }
    }
    out
}

fn replay_center(m: &mut Model, sent: &[Sent<'_>], accepted: Option<&KeyBytes>, issues: &mut Issues) {
    let setups = proposer_setups(m, sent, issues);
    let Some(first) = setups.first().cloned() else {
        // A center that sent nothing failed before announcing; its own
        // record is the only evidence.
        m.status = Status::Rejected;
        return;
    };
    let first_seq = sent[0].seq;
    let recipients = first.participants.clone();
    let per_leg = m.scheme == Scheme::B2V1;
    if setups.len() != recipients.len() {
        issues.push((Some(first_seq), format!("center sent {} SETUPs", setups.len())));
        return;
    }
    for (i, s) in setups.iter().enumerate() {
        let nonce_ok = if per_leg { i == 0 || s.nonce != first.nonce } else { s.nonce == first.nonce };
        if s.participants != recipients || !s.initiators.is_empty() || !nonce_ok {
            issues.push((Some(sent[i].seq), "center SETUPs disagree".into()));
            return;
        }
    }
    for s in setups.iter().take(if per_leg { setups.len() } else { 1 }) {
        if !m.fresh(&s.nonce) {
            return;
        }
    }
    m.beliefs = recipients.iter().cloned().collect();
    let mut masks = Vec::new();
    for (r, s) in recipients.iter().zip(&setups) {
        match m.one_time(r, &otk_ctx(s)) {
            Some(k) => masks.push(k),
            None => return,
        }
    }
    let Some(key) = accepted.filter(|k| k.len() == m.spec.output_length).cloned() else {
        issues.push((Some(first_seq), "center announced a session without a usable key".into()));
        return;
    };
    for (r, s) in recipients.iter().zip(&setups) {
        m.send(r, EnvelopeKind::Setup, s.encode());
    }
    for (r, mask) in recipients.iter().zip(&masks) {
        let c = xor(key.as_bytes(), mask.as_bytes()).expect("lengths match");
        if c.iter().all(|b| *b == 0) {
            m.warnings.push(format!("masked value for {r} is all-zero"));
        }
        m.send(r, EnvelopeKind::Protocol, c);
    }
    m.done(key);
}

fn replay_recipient(m: &mut Model, inbox: &[Inbound<'_>]) {
    let mut center: Option<PartyId> = None;
    for msg in inbox {
        if !m.running() {
            break;
        }
        match msg.kind {
            EnvelopeKind::Setup if center.is_none() => {
                let Some(s) = m.setup(msg.payload) else {
                    m.fail(RejectCause::MalformedSetup);
                    continue;
                };
                if !s.participants.contains(&m.me) {
                    m.fail(RejectCause::NotAParticipant);
                } else if m.fresh(&s.nonce) {
                    m.beliefs = peers_of(&s, &m.me);
                    if m.one_time(&s.distributor, &otk_ctx(&s)).is_some() {
                        center = Some(s.distributor);
                    }
                }
            }
            EnvelopeKind::Protocol => match &center {
                None => m.fail(RejectCause::ProtocolBeforeSetup),
                Some(c) if c == msg.claimed => {
                    match xor(msg.payload, m.otk[c].as_bytes()) {
                        Some(k) => m.done(KeyBytes::new(k)),
                        None => m.fail(RejectCause::LengthMismatch),
                    }
                }
                Some(_) => {}
            },
            _ => {}
        }
    }
}

fn group_key(m: &Model, first: &KeyBytes, second: &KeyBytes, nonce: &Nonce) -> Option<KeyBytes> {
    let ikm = KeyBytes::new([first.as_bytes(), second.as_bytes()].concat());
    kdf_derive(&ikm, &KdfContext::new("group", nonce.clone()), m.spec).ok()
}

fn replay_root(m: &mut Model, sent: &[Sent<'_>], issues: &mut Issues) {
    let setups = proposer_setups(m, sent, issues);
    let Some(s) = setups.first().cloned() else {
        m.status = Status::Rejected;
        return;
    };
    let n = s.participants.len();
    if n < 3 || s.participants[0] != m.me || setups.iter().any(|x| *x != s) || setups.len() != n - 1 {
        issues.push((Some(sent[0].seq), "root SETUPs are inconsistent".into()));
        return;
    }
    if !m.fresh(&s.nonce) {
        return;
    }
    m.beliefs = peers_of(&s, &m.me);
    let ctx = otk_ctx(&s);
    let mut k = Vec::new();
    for p in &s.participants[1..] {
        match m.one_time(p, &ctx) {
            Some(x) => k.push(x),
            None => return,
        }
    }
    let Some(g) = group_key(m, &k[0], &k[1], &s.nonce) else {
        m.fail(RejectCause::LengthMismatch);
        return;
    };
    for p in &s.participants[1..] {
        m.send(p, EnvelopeKind::Setup, s.encode());
    }
    m.broadcast(xor(k[0].as_bytes(), k[1].as_bytes()).expect("lengths match"));
    let mut d = 2;
    while tree_level(d, n).0 < n {
        let (lo, hi) = tree_level(d, n);
        let mut payload = Vec::new();
        for c in lo..hi {
            // k is indexed from participant 1.
            payload.extend(xor(g.as_bytes(), k[c - 1].as_bytes()).expect("lengths match"));
        }
        m.broadcast(payload);
        d += 1;
    }
    m.done(g);
}

fn replay_member(m: &mut Model, inbox: &[Inbound<'_>]) {
    let mut session: Option<(SetupMessage, usize)> = None;
    let mut seen = 0usize;
    for msg in inbox {
        if !m.running() {
            break;
        }
        if msg.kind == EnvelopeKind::Setup {
            if session.is_some() {
                continue;
            }
            let Some(s) = m.setup(msg.payload).filter(|s| s.participants.len() >= 3) else {
                m.fail(RejectCause::MalformedSetup);
                continue;
            };
            match s.participants.iter().position(|p| *p == m.me) {
                None | Some(0) => m.fail(RejectCause::NotAParticipant),
                Some(i) => {
                    if m.fresh(&s.nonce) {
                        m.beliefs = peers_of(&s, &m.me);
                        let root = s.participants[0].clone();
                        if m.one_time(&root, &otk_ctx(&s)).is_some() {
                            session = Some((s, i));
                        }
                    }
                }
            }
            continue;
        }
        let Some((s, i)) = &session else {
            m.fail(RejectCause::ProtocolBeforeSetup);
            continue;
        };
        let root = &s.participants[0];
        if msg.claimed != root {
            continue;
        }
        seen += 1;
        let d = tree_depth(*i);
        if seen != d {
            continue;
        }
        let len = m.spec.output_length;
        let mine = m.otk[root].clone();
        let g = if d == 1 {
            let Some(other) = xor(msg.payload, mine.as_bytes()).map(KeyBytes::new) else {
                m.fail(RejectCause::LengthMismatch);
                continue;
            };
            if *i == 1 {
                group_key(m, &mine, &other, &s.nonce)
            } else {
                group_key(m, &other, &mine, &s.nonce)
            }
        } else {
            let (lo, hi) = tree_level(d, s.participants.len());
            if msg.payload.len() != len * (hi - lo) {
                m.fail(RejectCause::LengthMismatch);
                continue;
            }
            let at = (i - lo) * len;
            xor(&msg.payload[at..at + len], mine.as_bytes()).map(KeyBytes::new)
        };
        match g {
            Some(g) => m.done(g),
            None => m.fail(RejectCause::LengthMismatch),
        }
    }
}

/// `(initiators, responder)` of a well-formed A4 announcement.
fn a4_cast(s: &SetupMessage) -> Option<(Vec<PartyId>, PartyId)> {
    let init = &s.initiators;
    if s.participants.len() != 3 || init.len() != 2 || init[0] == init[1] {
        return None;
    }
    if !init.iter().all(|i| s.participants.contains(i)) {
        return None;
    }
    let rest: Vec<&PartyId> = s.participants.iter().filter(|p| !init.contains(p)).collect();
    (rest.len() == 1).then(|| (init.clone(), rest[0].clone()))
}

fn a4_contribute(m: &mut Model, s: &SetupMessage) {
    let Some((init, responder)) = a4_cast(s).filter(|(i, _)| i.contains(&m.me)) else {
        m.fail(RejectCause::NotAParticipant);
        return;
    };
    if !m.fresh(&s.nonce) {
        return;
    }
    m.beliefs = peers_of(s, &m.me);
    let other = init.iter().find(|i| **i != m.me).expect("two distinct initiators").clone();
    let ctx = otk_ctx(s);
    let Some(k_group) = m.one_time(&other, &ctx) else {
        return;
    };
    let Some(k_resp) = m.one_time(&responder, &ctx) else {
        return;
    };
    let mut c = xor(k_group.as_bytes(), k_resp.as_bytes()).expect("lengths match");
    if m.scheme == Scheme::A4F {
        let tag = crate::crypto::mac_tag(&k_resp, &a4_mac_message(&c, s)).expect("non-empty key");
        c.extend_from_slice(tag.as_bytes());
    }
    m.send(&responder, EnvelopeKind::Protocol, c);
    m.done(k_group);
}

fn replay_a4_initiator(m: &mut Model, sent: &[Sent<'_>], inbox: &[Inbound<'_>], issues: &mut Issues) {
    let setups = proposer_setups(m, sent, issues);
    if let Some(s) = setups.first().cloned() {
        let others: Vec<&PartyId> = s.participants.iter().filter(|p| **p != m.me).collect();
        if setups.iter().any(|x| *x != s) || setups.len() != others.len() {
            issues.push((Some(sent[0].seq), "A4 proposer SETUPs disagree".into()));
            return;
        }
        for p in others {
            m.send(p, EnvelopeKind::Setup, s.encode());
        }
        a4_contribute(m, &s);
        return;
    }
    if let Some(msg) = inbox.iter().find(|x| x.kind == EnvelopeKind::Setup) {
        match m.setup(msg.payload) {
            Some(s) => a4_contribute(m, &s),
            None => m.fail(RejectCause::MalformedSetup),
        }
    }
}

fn replay_a4_responder(m: &mut Model, inbox: &[Inbound<'_>]) {
    let mut session: Option<(SetupMessage, Vec<PartyId>)> = None;
    let mut got: BTreeMap<PartyId, Vec<u8>> = BTreeMap::new();
    for msg in inbox {
        if !m.running() {
            break;
        }
        match msg.kind {
            EnvelopeKind::Setup if session.is_none() => match m.setup(msg.payload) {
                None => m.fail(RejectCause::MalformedSetup),
                Some(s) => match a4_cast(&s).filter(|(_, r)| *r == m.me) {
                    None => m.fail(RejectCause::NotAParticipant),
                    Some((init, _)) => {
                        if m.fresh(&s.nonce) {
                            m.beliefs = peers_of(&s, &m.me);
                            let ctx = otk_ctx(&s);
                            if init.iter().all(|i| m.one_time(i, &ctx).is_some()) {
                                session = Some((s, init));
                            }
                        }
                    }
                },
            },
            EnvelopeKind::Protocol => {
                got.entry(msg.claimed.clone()).or_insert_with(|| msg.payload.to_vec());
            }
            _ => {}
        }
        if !m.running() {
            break;
        }
        let Some((s, init)) = &session else { continue };
        let (Some(c1), Some(c2)) = (got.get(&init[0]), got.get(&init[1])) else {
            continue;
        };
        let len = m.spec.output_length;
        let want = len + if m.scheme == Scheme::A4F { TAG_BYTES } else { 0 };
        if c1.len() != want || c2.len() != want {
            m.fail(RejectCause::LengthMismatch);
            break;
        }
        let mut views = Vec::new();
        for (c, i) in [(c1, &init[0]), (c2, &init[1])] {
            let k = &m.otk[i];
            if m.scheme == Scheme::A4F {
                let tag = Tag::from_slice(&c[len..]).expect("length checked");
                if !mac_verify(k, &a4_mac_message(&c[..len], s), &tag) {
                    m.fail(RejectCause::AuthFailure);
                    break;
                }
            }
            views.push(xor(&c[..len], k.as_bytes()).expect("lengths match"));
        }
        if !m.running() {
            break;
        }
        if views[0] == views[1] {
            m.done(KeyBytes::new(views.swap_remove(0)));
        } else {
            m.fail(RejectCause::ConsistencyMismatch);
        }
    }
}

struct PerRecord {
    events: usize,
    claims: usize,
    claims_holding: usize,
}

fn audit_record(rec: &AuditRecord) -> Result<PerRecord, AuditError> {
    let h = &rec.header;
    let stage = h.stage.clone();
    let mismatch = |seq: Option<u64>, reason: String| AuditError::Mismatch {
        stage: stage.clone(),
        seq,
        reason,
    };
    let parties: BTreeSet<&PartyId> = h.parties.iter().collect();
    if parties.len() != h.parties.len() || parties.contains(&h.adversary) {
        return Err(mismatch(None, "header party list is invalid".into()));
    }
    let spec = KdfSpec::new(h.kdf, h.key_bytes);
    if spec.check(h.key_bytes).is_err() {
        return Err(mismatch(None, "header KDF parameters are invalid".into()));
    }

    // Structure, in transcript order.
    let mut events: Vec<TranscriptEvent> = Vec::with_capacity(rec.events.len());
    for (i, line) in rec.events.iter().enumerate() {
        let bad = |r: &str| Err(mismatch(Some(line.seq), r.to_owned()));
        if line.seq != i as u64 {
            return bad("sequence numbers are not consecutive");
        }
        let Some(e) = line.to_event() else {
            return bad("unparseable kind, action or payload");
        };
        if e.delivered != (e.action != ActionRecord::Drop) {
            return bad("delivery flag contradicts the action");
        }
        let known = |p: &PartyId| parties.contains(p) || *p == h.adversary;
        if !known(&e.envelope.receiver) || e.final_receiver().is_some_and(|r| !known(r)) {
            return bad("unknown receiver");
        }
        if e.is_injected() {
            if e.envelope.true_sender != h.adversary {
                return bad("injected envelope not sent by the adversary");
            }
        } else if !parties.contains(&e.envelope.true_sender)
            || e.envelope.claimed_sender != e.envelope.true_sender
        {
            return bad("honest envelope with a forged or unknown sender");
        }
        events.push(e);
    }

    let outcomes: BTreeMap<&PartyId, &PartyOutcome> =
        rec.outcome.parties.iter().map(|p| (&p.id, p)).collect();
    if outcomes.len() != parties.len() || !parties.iter().all(|p| outcomes.contains_key(p)) {
        return Err(mismatch(None, "outcome parties differ from the header".into()));
    }

    let mut issues: Issues = Vec::new();
    let mut models: BTreeMap<PartyId, Model> = BTreeMap::new();
    for id in &h.parties {
        let out = outcomes[id];
        let inbox: Vec<Inbound<'_>> = events
            .iter()
            .filter(|e| e.final_receiver() == Some(id))
            .map(|e| Inbound {
                seq: e.envelope.seq,
                claimed: &e.envelope.claimed_sender,
                kind: e.envelope.kind,
                payload: e.delivered_payload().expect("delivered"),
            })
            .collect();
        let sent: Vec<Sent<'_>> = events
            .iter()
            .filter(|e| !e.is_injected() && e.envelope.true_sender == *id)
            .map(|e| Sent {
                seq: e.envelope.seq,
                receiver: &e.envelope.receiver,
                kind: e.envelope.kind,
                payload: &e.envelope.payload,
            })
            .collect();
        let mut m = Model {
            me: id.clone(),
            scheme: h.scheme,
            spec,
            keys: h
                .long_term_keys
                .iter()
                .filter_map(|e| {
                    if e.a == *id {
                        Some((e.b.clone(), e.key_hex.clone()))
                    } else if e.b == *id {
                        Some((e.a.clone(), e.key_hex.clone()))
                    } else {
                        None
                    }
                })
                .collect(),
            ledger: h.prior_nonces.get(id).into_iter().flatten().cloned().collect(),
            status: Status::Running,
            cause: None,
            beliefs: BTreeSet::new(),
            nonce: None,
            key: None,
            otk: BTreeMap::new(),
            warnings: Vec::new(),
            sends: Vec::new(),
            others: h.parties.iter().filter(|p| *p != id).cloned().collect(),
        };
        let before = issues.len();
        match (h.scheme, out.role) {
            (Scheme::A1 | Scheme::A1F | Scheme::A2 | Scheme::B2V1, Role::Center) => {
                replay_center(&mut m, &sent, out.accepted_key_hex.as_ref(), &mut issues)
            }
            (Scheme::A1 | Scheme::A1F | Scheme::A2, Role::Responder)
            | (Scheme::B2V1, Role::GroupMember) => replay_recipient(&mut m, &inbox),
            (Scheme::A3_3 | Scheme::B1, Role::Initiator) | (Scheme::A3_TREE | Scheme::B2V2, Role::TreeRoot) => {
                replay_root(&mut m, &sent, &mut issues)
            }
            (Scheme::A3_3 | Scheme::B1 | Scheme::A3_TREE | Scheme::B2V2, Role::GroupMember) => {
                replay_member(&mut m, &inbox)
            }
            (Scheme::A4 | Scheme::A4F, Role::Initiator) => {
                replay_a4_initiator(&mut m, &sent, &inbox, &mut issues)
            }
            (Scheme::A4 | Scheme::A4F, Role::Responder) => replay_a4_responder(&mut m, &inbox),
            (s, r) => {
                issues.push((None, format!("{id} has role {r:?}, which {s} does not use")));
            }
        }
        if issues.len() > before {
            models.insert(id.clone(), m);
            continue;
        }
        if m.running() {
            m.status = Status::Starved;
        }

        // What the party must have put on the wire.
        for (i, want) in m.sends.iter().enumerate() {
            match sent.get(i) {
                Some(s) if (s.receiver, s.kind, s.payload) == (&want.0, want.1, want.2.as_slice()) => {}
                Some(s) => issues.push((Some(s.seq), format!("{id} sent a payload the key material does not explain"))),
                None => issues.push((sent.last().map(|s| s.seq), format!("{id} is missing a send"))),
            }
        }
        if let Some(extra) = sent.get(m.sends.len()) {
            issues.push((Some(extra.seq), format!("{id} sent an unexplained message")));
        }

        // What the party must have concluded.
        let at = inbox.last().map(|x| x.seq).or(sent.last().map(|s| s.seq));
        let center_unaudited = out.role == Role::Center && sent.is_empty();
        let mut differs = Vec::new();
        if m.status != out.status {
            differs.push("status");
        }
        if !center_unaudited {
            if m.cause != out.cause {
                differs.push("cause");
            }
            if m.beliefs != out.believed_peers {
                differs.push("believed peers");
            }
            if m.nonce != out.nonce_hex {
                differs.push("nonce");
            }
            if m.key != out.accepted_key_hex {
                differs.push("accepted key");
            }
            if m.otk != out.one_time_keys {
                differs.push("one-time keys");
            }
            if m.ledger.iter().collect::<Vec<_>>() != out.nonce_ledger.iter().collect::<Vec<_>>() {
                differs.push("nonce ledger");
            }
            if m.warnings != out.warnings {
                differs.push("warnings");
            }
        } else if out.accepted_key_hex.is_some() {
            differs.push("accepted key");
        }
        if !differs.is_empty() {
            issues.push((at, format!("{id}: recorded {} disagree with the replay", differs.join(", "))));
        }
        models.insert(id.clone(), m);
    }

    if let Some((seq, reason)) = issues
        .iter()
        .min_by_key(|(s, _)| s.unwrap_or(u64::MAX))
        .cloned()
    {
        return Err(mismatch(seq, reason));
    }

    let mut holding = 0;
    for (i, c) in rec.outcome.claims.iter().enumerate() {
        let actual = claim_truth(c, &models);
        if actual != c.holds() {
            return Err(mismatch(None, format!("claim {i} ({c:?}) is {actual}")));
        }
        holding += usize::from(actual);
    }
    Ok(PerRecord {
        events: events.len(),
        claims: rec.outcome.claims.len(),
        claims_holding: holding,
    })
}

fn claim_truth(c: &Claim, models: &BTreeMap<PartyId, Model>) -> bool {
    let key = |p: &PartyId| models.get(p).and_then(|m| m.key.as_ref());
    match c {
        Claim::KeysEqual { left, right, .. } => {
            matches!((key(left), key(right)), (Some(a), Some(b)) if a.as_bytes() == b.as_bytes())
        }
        Claim::KeysDiffer { left, right, .. } => {
            matches!((key(left), key(right)), (Some(a), Some(b)) if a.as_bytes() != b.as_bytes())
        }
        Claim::KeyValue { party, key: k, .. } => key(party).is_some_and(|x| x.as_bytes() == k.as_bytes()),
        Claim::KeyShift { party, reference, mask, .. } => match (key(party), key(reference)) {
            (Some(a), Some(b)) => xor(b.as_bytes(), mask.as_bytes()).as_deref() == Some(a.as_bytes()),
            _ => false,
        },
        Claim::Belief { party, peers, .. } => models.get(party).is_some_and(|m| m.beliefs == *peers),
        Claim::OneTimeKey { party, peer, key: k, .. } => models
            .get(party)
            .and_then(|m| m.otk.get(peer))
            .is_some_and(|x| x.as_bytes() == k.as_bytes()),
        Claim::Status { party, status, .. } => models.get(party).is_some_and(|m| m.status == *status),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KdfAlgorithm;
    use crate::netsim::{AdversaryAction, Envelope, Injector, Passive};
    use crate::protocols::{run_scheme, run_with, KeyChoice, RunOptions, SchemeConfig};
    use crate::netsim::Adversary;

    fn all_configs() -> Vec<SchemeConfig> {
        let mut v: Vec<SchemeConfig> = [
            Scheme::A1,
            Scheme::A1F,
            Scheme::A2,
            Scheme::A3_3,
            Scheme::A4,
            Scheme::A4F,
            Scheme::B1,
        ]
        .into_iter()
        .map(|s| SchemeConfig::standard(s, 0, 3))
        .collect();
        v.extend((3..=8).map(|n| SchemeConfig::standard(Scheme::A3_TREE, n, 3)));
        v.push(SchemeConfig::standard(Scheme::B2V1, 4, 3));
        v.push(SchemeConfig::standard(Scheme::B2V2, 7, 3));
        v
    }

    #[test]
    fn honest_records_audit_clean() {
        for kdf in [KdfAlgorithm::ReferenceKeyedHash, KdfAlgorithm::ToyMix] {
            for cfg in all_configs() {
                let rec = run_scheme(&cfg.clone().with_kdf(kdf)).unwrap();
                let r = audit_runs([&rec]).unwrap_or_else(|e| panic!("{}: {e}", cfg.scheme));
                assert_eq!(r.events, rec.transcript.events.len());
            }
        }
    }

    #[test]
    fn record_roundtrip() {
        let rec = run_scheme(&SchemeConfig::standard(Scheme::A4F, 0, 8)).unwrap();
        let text = encode_record(&rec);
        let parsed = parse_records(&text).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].events, rec.transcript.event_lines());
        assert_eq!(parsed[0].header.parties, rec.order);
    }

    #[test]
    fn every_payload_digit_flip_is_caught() {
        for cfg in all_configs() {
            let rec = run_scheme(&cfg).unwrap();
            let text = encode_record(&rec);
            let lines: Vec<&str> = text.lines().collect();
            for (i, ev) in rec.transcript.event_lines().iter().enumerate() {
                // Flip the low bit of the last hex digit.
                let mut ev = ev.clone();
                let mut digits: Vec<char> = ev.payload_hex.chars().collect();
                let last = digits.last_mut().unwrap();
                *last = std::char::from_digit(last.to_digit(16).unwrap() ^ 1, 16).unwrap();
                ev.payload_hex = digits.into_iter().collect();
                let mut edited: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
                edited[i + 1] = serde_json::to_string(&ev).unwrap();
                let err = audit_text(&edited.join("\n")).unwrap_err();
                assert_eq!(err.seq(), Some(i as u64), "{}: {err}", cfg.scheme);
            }
        }
    }

    #[test]
    fn tampered_outcome_and_claims_are_caught() {
        let rec = run_scheme(&SchemeConfig::standard(Scheme::A3_3, 0, 4)).unwrap();
        let text = encode_record(&rec);
        let mut recs = parse_records(&text).unwrap();
        recs[0].outcome.parties[1].accepted_key_hex = Some(KeyBytes::zero(16));
        assert!(audit_record(&recs[0]).is_err());

        let mut rec2 = rec.clone();
        rec2.claims.push(Claim::KeysEqual {
            left: "A".into(),
            right: "B".into(),
            holds: false,
        });
        let err = audit_runs([&rec2]).unwrap_err();
        assert!(err.to_string().contains("claim 0"), "{err}");
        rec2.claims[0] = Claim::KeysEqual {
            left: "A".into(),
            right: "B".into(),
            holds: true,
        };
        assert_eq!(audit_runs([&rec2]).unwrap().claims_holding, 1);
    }

    struct Dropper;

    impl Adversary for Dropper {
        fn id(&self) -> &PartyId {
            static E: std::sync::OnceLock<PartyId> = std::sync::OnceLock::new();
            E.get_or_init(|| PartyId::from("E"))
        }

        fn decide(&mut self, env: &Envelope, _: &mut Injector<'_>) -> AdversaryAction {
            if env.kind == EnvelopeKind::Protocol {
                AdversaryAction::Drop
            } else {
                AdversaryAction::Deliver
            }
        }
    }

    #[test]
    fn starved_and_warning_sessions_audit_clean() {
        let rec = run_with(&SchemeConfig::standard(Scheme::A4, 0, 2), &mut Dropper, &RunOptions::default()).unwrap();
        assert_eq!(rec.party(&"C".into()).unwrap().status(), Status::Starved);
        audit_runs([&rec]).unwrap();

        let opts = RunOptions {
            key_choice: KeyChoice::EqualToFirstOneTimeKey,
            stage: None,
        };
        let rec = run_with(&SchemeConfig::standard(Scheme::A2, 0, 2), &mut Passive::new(), &opts).unwrap();
        assert_eq!(rec.warnings.len(), 1);
        audit_runs([&rec]).unwrap();
    }

    #[test]
    fn malformed_files_are_parse_errors() {
        assert!(matches!(parse_records(""), Err(AuditError::Parse { .. })));
        assert!(matches!(parse_records("{"), Err(AuditError::Parse { line: 1, .. })));
        let rec = run_scheme(&SchemeConfig::standard(Scheme::A1, 0, 1)).unwrap();
        let text = encode_record(&rec);
        let truncated: String = text.lines().take(3).collect::<Vec<_>>().join("\n");
        assert!(matches!(parse_records(&truncated), Err(AuditError::Parse { .. })));
    }
}
