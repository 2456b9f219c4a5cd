//! State machines for the KDF+XOR key distribution schemes and the scenario
//! runner that drives them over [`crate::netsim`].
//!
//! Every scheme follows the same two-step shape. A proposer announces the
//! session (participants and a fresh public nonce) in plaintext `SETUP`
//! messages; each party then derives one-time keys `f(L, N)` from its
//! long-term keys and the key being distributed travels XOR-masked with
//! those one-time keys.
//!
//! | scheme | proposer | masked messages |
//! |---|---|---|
//! | A1, A1F | center | `K ⊕ K_XC` to each of the two parties |
//! | A2 | server | `K ⊕ K_AS` |
//! | A3_3, B1 | initiator | broadcast `K_AB ⊕ K_AC` |
//! | A3_TREE, B2V2 | root | one broadcast per tree level, see [`group`] |
//! | A4, A4F | first initiator | `K_AB ⊕ K_AC` and `K_AB ⊕ K_BC` to the responder |
//! | B2V1 | distributor | one A1 leg per member |
//!
//! The `F` variants bind the sorted participant identities into every KDF
//! context; A4F additionally MACs both masked values.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::Claim;
use crate::crypto::{
    kdf_derive, CryptoError, KdfAlgorithm, KdfContext, KdfSpec, KeyBytes, Nonce, NonceLedger,
    SeedStream, DEFAULT_KEY_BYTES,
};
use crate::netsim::{Adversary, Envelope, Io, NetError, Network, Party, Passive, Transcript};
use crate::PartyId;

pub mod a4;
pub mod distributor;
pub mod group;

/// Label of the KDF context for one-time keys.
pub const OTK_LABEL: &str = "otk";
/// Label of the KDF context for the A3 group key.
pub const GROUP_LABEL: &str = "group";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[allow(non_camel_case_types)]
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scheme {
    A1,
    A1F,
    A2,
    A3_3,
    A3_TREE,
    A4,
    A4F,
    B1,
    B2V1,
    B2V2,
}

impl Scheme {
    pub const ALL: [Scheme; 10] = [
        Scheme::A1,
        Scheme::A1F,
        Scheme::A2,
        Scheme::A3_3,
        Scheme::A3_TREE,
        Scheme::A4,
        Scheme::A4F,
        Scheme::B1,
        Scheme::B2V1,
        Scheme::B2V2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::A1 => "A1",
            Scheme::A1F => "A1F",
            Scheme::A2 => "A2",
            Scheme::A3_3 => "A3_3",
            Scheme::A3_TREE => "A3_TREE",
            Scheme::A4 => "A4",
            Scheme::A4F => "A4F",
            Scheme::B1 => "B1",
            Scheme::B2V1 => "B2V1",
            Scheme::B2V2 => "B2V2",
        }
    }

    pub fn parse(s: &str) -> Option<Scheme> {
        Scheme::ALL.into_iter().find(|x| x.name() == s)
    }

    /// Whether participant identities enter the KDF context.
    pub fn binds_identities(self) -> bool {
        matches!(self, Scheme::A1F | Scheme::A4F)
    }

    pub fn family(self) -> Family {
        match self {
            Scheme::A1 | Scheme::A1F | Scheme::A2 | Scheme::B2V1 => Family::Distributor,
            Scheme::A3_3 | Scheme::A3_TREE | Scheme::B1 | Scheme::B2V2 => Family::Group,
            Scheme::A4 | Scheme::A4F => Family::Consistency,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Machine families sharing one message pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    /// A trusted party masks a key it chose for each recipient.
    Distributor,
    /// An initiator masks pairwise one-time keys for a group.
    Group,
    /// Two initiators, consistency check at the third party.
    Consistency,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Initiator,
    Responder,
    Center,
    GroupMember,
    TreeRoot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Running,
    Accepted,
    Rejected,
    Starved,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "cause", content = "detail", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectCause {
    MissingLongTermKey(PartyId),
    LengthMismatch,
    ConsistencyMismatch,
    AuthFailure,
    NonceReuse,
    NotAParticipant,
    ProtocolBeforeSetup,
    MalformedSetup,
}

/// A role's accumulated beliefs and keys.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartyState {
    pub id: PartyId,
    pub role: Role,
    pub believed_peers: BTreeSet<PartyId>,
    pub nonce: Option<Nonce>,
    pub long_term_keys: BTreeMap<PartyId, KeyBytes>,
    pub one_time_keys: BTreeMap<PartyId, KeyBytes>,
    pub nonce_ledger: NonceLedger,
    pub warnings: Vec<String>,
    accepted_key: Option<KeyBytes>,
    status: Status,
    cause: Option<RejectCause>,
}

impl PartyState {
    pub fn new(id: PartyId, role: Role, long_term_keys: BTreeMap<PartyId, KeyBytes>) -> Self {
        PartyState {
            id,
            role,
            believed_peers: BTreeSet::new(),
            nonce: None,
            long_term_keys,
            one_time_keys: BTreeMap::new(),
            nonce_ledger: NonceLedger::new(),
            warnings: Vec::new(),
            accepted_key: None,
            status: Status::Running,
            cause: None,
        }
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn cause(&self) -> Option<&RejectCause> {
        self.cause.as_ref()
    }

    /// Set iff the status is `Accepted`.
    pub fn accepted_key(&self) -> Option<&KeyBytes> {
        self.accepted_key.as_ref()
    }

    pub fn is_running(&self) -> bool {
        self.status == Status::Running
    }

    pub fn accept(&mut self, key: KeyBytes) {
        if self.is_running() {
            self.accepted_key = Some(key);
            self.status = Status::Accepted;
        }
    }

    pub fn reject(&mut self, cause: RejectCause) {
        if self.is_running() {
            self.status = Status::Rejected;
            self.cause = Some(cause);
        }
    }

    pub fn starve_if_running(&mut self) {
        if self.is_running() {
            self.status = Status::Starved;
        }
    }

    pub fn long_term(&self, peer: &PartyId) -> Option<&KeyBytes> {
        self.long_term_keys.get(peer)
    }

    /// Records the session nonce; rejects on reuse.
    pub(crate) fn use_nonce(&mut self, nonce: &Nonce) -> bool {
        if !self.nonce_ledger.record(nonce) {
            self.reject(RejectCause::NonceReuse);
            return false;
        }
        self.nonce = Some(nonce.clone());
        true
    }

    /// Derives and stores the one-time key shared with `peer`.
    pub(crate) fn derive_one_time(
        &mut self,
        peer: &PartyId,
        ctx: &KdfContext,
        spec: KdfSpec,
    ) -> Option<KeyBytes> {
        let Some(long_term) = self.long_term_keys.get(peer) else {
            self.reject(RejectCause::MissingLongTermKey(peer.clone()));
            return None;
        };
        match kdf_derive(long_term, ctx, spec) {
            Ok(k) => {
                self.one_time_keys.insert(peer.clone(), k.clone());
                Some(k)
            }
            Err(_) => {
                self.reject(RejectCause::LengthMismatch);
                None
            }
        }
    }
}

/// Plaintext session announcement carried by `SETUP` envelopes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetupMessage {
    pub scheme: Scheme,
    /// Ordered session slots. For the group schemes slot 0 is the initiator.
    pub participants: Vec<PartyId>,
    /// The party that chose the session: center, server, initiator or
    /// first A4 initiator.
    pub distributor: PartyId,
    /// The two A4 initiators; empty for other schemes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub initiators: Vec<PartyId>,
    pub nonce: Nonce,
}

impl SetupMessage {
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("setup messages serialize")
    }

    pub fn decode(bytes: &[u8]) -> Option<SetupMessage> {
        serde_json::from_slice(bytes).ok()
    }

    /// Identities bound into the KDF context by the fixed variants.
    pub fn binding_set(&self) -> BTreeSet<PartyId> {
        let mut ids: BTreeSet<PartyId> = self.participants.iter().cloned().collect();
        if self.scheme.family() == Family::Distributor {
            ids.insert(self.distributor.clone());
        }
        ids
    }

    /// The one-time key context this session prescribes.
    pub fn otk_context(&self) -> KdfContext {
        if self.scheme.binds_identities() {
            KdfContext::bound(OTK_LABEL, self.nonce.clone(), self.binding_set())
        } else {
            KdfContext::new(OTK_LABEL, self.nonce.clone())
        }
    }
}

/// Who the given party should believe shares the key, under `setup`.
pub fn expected_peers(setup: &SetupMessage, me: &PartyId) -> BTreeSet<PartyId> {
    let mut peers: BTreeSet<PartyId> = setup.participants.iter().cloned().collect();
    match setup.scheme {
        Scheme::A2 if me != &setup.distributor => {
            peers.clear();
            peers.insert(setup.distributor.clone());
        }
        Scheme::B2V1 => {
            peers.insert(setup.distributor.clone());
        }
        _ => {}
    }
    peers.remove(me);
    peers
}

/// Scenario description, loadable from JSON.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    pub parties: Vec<PartyId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<PartyId>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_key_bytes")]
    pub key_bytes: usize,
    #[serde(default = "default_kdf")]
    pub kdf: KdfAlgorithm,
}

fn default_key_bytes() -> usize {
    DEFAULT_KEY_BYTES
}

fn default_kdf() -> KdfAlgorithm {
    KdfAlgorithm::ReferenceKeyedHash
}

fn letters(n: usize) -> Vec<PartyId> {
    (0..n)
        .map(|i| {
            if i < 26 {
                PartyId::new(((b'A' + i as u8) as char).to_string())
            } else {
                PartyId::new(format!("P{i}"))
            }
        })
        .collect()
}

impl SchemeConfig {
    /// The default cast for `scheme`. `n` counts every party, the center
    /// included, and only matters for the tree and B2V1 schemes.
    pub fn standard(scheme: Scheme, n: usize, seed: u64) -> SchemeConfig {
        let (parties, center) = match scheme {
            Scheme::A1 | Scheme::A1F => (letters(2), Some(PartyId::from("C"))),
            Scheme::A2 => (letters(1), Some(PartyId::from("S"))),
            Scheme::A3_3 | Scheme::B1 | Scheme::A4 | Scheme::A4F => (letters(3), None),
            Scheme::A3_TREE | Scheme::B2V2 => (letters(n), None),
            Scheme::B2V1 => {
                let mut all = letters(n);
                let center = all.remove(0);
                (all, Some(center))
            }
        };
        SchemeConfig {
            scheme,
            parties,
            center,
            seed,
            key_bytes: DEFAULT_KEY_BYTES,
            kdf: default_kdf(),
        }
    }

    pub fn with_kdf(mut self, kdf: KdfAlgorithm) -> Self {
        self.kdf = kdf;
        self
    }

    pub fn kdf_spec(&self) -> KdfSpec {
        KdfSpec::new(self.kdf, self.key_bytes)
    }

    pub fn from_json(s: &str) -> Result<SchemeConfig, ProtocolError> {
        let cfg: SchemeConfig =
            serde_json::from_str(s).map_err(|e| ProtocolError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn center(&self) -> Result<&PartyId, ProtocolError> {
        self.center
            .as_ref()
            .ok_or_else(|| ProtocolError::Config(format!("{} needs a center", self.scheme)))
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let n = self.parties.len();
        let bad = |msg: String| Err(ProtocolError::Config(msg));
        let arity_ok = match self.scheme {
            Scheme::A1 | Scheme::A1F => n == 2,
            Scheme::A2 => n == 1,
            Scheme::A3_3 | Scheme::B1 | Scheme::A4 | Scheme::A4F => n == 3,
            Scheme::A3_TREE | Scheme::B2V2 => n >= 3,
            Scheme::B2V1 => n >= 2,
        };
        if !arity_ok {
            return bad(format!("{} does not take {n} parties", self.scheme));
        }
        let distinct: BTreeSet<&PartyId> = self.parties.iter().collect();
        if distinct.len() != n {
            return bad("duplicate party names".into());
        }
        match self.scheme.family() {
            Family::Distributor => {
                if distinct.contains(self.center()?) {
                    return bad("center listed as a party".into());
                }
            }
            _ => {
                if self.center.is_some() {
                    return bad(format!("{} has no center", self.scheme));
                }
            }
        }
        if let Err(e) = self.kdf_spec().check(self.key_bytes) {
            return bad(e.to_string());
        }
        Ok(())
    }

    /// Long-term key pairs the scheme assumes, in provisioning order.
    pub fn key_pairs(&self) -> Vec<(PartyId, PartyId)> {
        let p = &self.parties;
        match self.scheme.family() {
            Family::Distributor => {
                let c = self.center.clone().expect("validated");
                p.iter().map(|x| (x.clone(), c.clone())).collect()
            }
            Family::Group => p[1..].iter().map(|x| (p[0].clone(), x.clone())).collect(),
            Family::Consistency => vec![
                (p[0].clone(), p[1].clone()),
                (p[0].clone(), p[2].clone()),
                (p[1].clone(), p[2].clone()),
            ],
        }
    }

    /// Every party in the scenario, center included.
    pub fn all_parties(&self) -> Vec<PartyId> {
        let mut all = self.parties.clone();
        if let Some(c) = &self.center {
            all.push(c.clone());
        }
        all
    }
}

/// Optional overrides for the distributor's key choice.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum KeyChoice {
    #[default]
    Random,
    Fixed(KeyBytes),
    /// The distributor picks its one-time key with the first recipient,
    /// which makes the first masked value all-zero.
    EqualToFirstOneTimeKey,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub key_choice: KeyChoice,
    pub stage: Option<String>,
}

/// Long-term key material and nonce ledgers that persist across the
/// sessions of one scenario, plus its single randomness stream.
#[derive(Clone, Debug)]
pub struct World {
    pub rng: SeedStream,
    pub kdf: KdfSpec,
    long_term: BTreeMap<(PartyId, PartyId), KeyBytes>,
    ledgers: BTreeMap<PartyId, NonceLedger>,
}

fn pair(a: &PartyId, b: &PartyId) -> (PartyId, PartyId) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

impl World {
    pub fn new(seed: u64, kdf: KdfSpec) -> World {
        World {
            rng: SeedStream::new(seed),
            kdf,
            long_term: BTreeMap::new(),
            ledgers: BTreeMap::new(),
        }
    }

    pub fn key_bytes(&self) -> usize {
        self.kdf.output_length
    }

    /// Draws a long-term key for the pair unless one exists.
    pub fn provision(&mut self, a: &PartyId, b: &PartyId) -> KeyBytes {
        let len = self.key_bytes();
        let rng = &mut self.rng;
        self.long_term
            .entry(pair(a, b))
            .or_insert_with(|| rng.key(len))
            .clone()
    }

    pub fn long_term(&self, a: &PartyId, b: &PartyId) -> Option<&KeyBytes> {
        self.long_term.get(&pair(a, b))
    }

    pub fn long_term_table(&self) -> &BTreeMap<(PartyId, PartyId), KeyBytes> {
        &self.long_term
    }

    pub fn keyring(&self, id: &PartyId) -> BTreeMap<PartyId, KeyBytes> {
        self.long_term
            .iter()
            .filter_map(|((a, b), k)| {
                if a == id {
                    Some((b.clone(), k.clone()))
                } else if b == id {
                    Some((a.clone(), k.clone()))
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn ledger(&self, id: &PartyId) -> NonceLedger {
        self.ledgers.get(id).cloned().unwrap_or_default()
    }

    /// A fresh state for `id` carrying its keyring and nonce ledger.
    pub fn party_state(&self, id: &PartyId, role: Role) -> PartyState {
        let mut st = PartyState::new(id.clone(), role, self.keyring(id));
        st.nonce_ledger = self.ledger(id);
        st
    }

    fn store_ledger(&mut self, id: &PartyId, ledger: NonceLedger) {
        self.ledgers.insert(id.clone(), ledger);
    }
}

/// Any of the scheme state machines.
#[derive(Clone, Debug)]
pub enum Machine {
    Center(distributor::Center),
    Recipient(distributor::Recipient),
    GroupRoot(group::Root),
    GroupMember(group::Member),
    A4Initiator(a4::Initiator),
    A4Responder(a4::Responder),
}

impl Machine {
    pub fn state(&self) -> &PartyState {
        match self {
            Machine::Center(m) => &m.state,
            Machine::Recipient(m) => &m.state,
            Machine::GroupRoot(m) => &m.state,
            Machine::GroupMember(m) => &m.state,
            Machine::A4Initiator(m) => &m.state,
            Machine::A4Responder(m) => &m.state,
        }
    }

    fn state_mut(&mut self) -> &mut PartyState {
        match self {
            Machine::Center(m) => &mut m.state,
            Machine::Recipient(m) => &mut m.state,
            Machine::GroupRoot(m) => &mut m.state,
            Machine::GroupMember(m) => &mut m.state,
            Machine::A4Initiator(m) => &mut m.state,
            Machine::A4Responder(m) => &mut m.state,
        }
    }

    pub fn into_state(self) -> PartyState {
        match self {
            Machine::Center(m) => m.state,
            Machine::Recipient(m) => m.state,
            Machine::GroupRoot(m) => m.state,
            Machine::GroupMember(m) => m.state,
            Machine::A4Initiator(m) => m.state,
            Machine::A4Responder(m) => m.state,
        }
    }
}

impl Party for Machine {
    fn id(&self) -> &PartyId {
        &self.state().id
    }

    fn start(&mut self, io: &mut Io<'_>) {
        match self {
            Machine::Center(m) => m.start(io),
            Machine::GroupRoot(m) => m.start(io),
            Machine::A4Initiator(m) => m.start(io),
            _ => {}
        }
    }

    fn receive(&mut self, env: &Envelope, io: &mut Io<'_>) {
        match self {
            Machine::Center(_) | Machine::GroupRoot(_) => {}
            Machine::Recipient(m) => m.receive(env),
            Machine::GroupMember(m) => m.receive(env),
            Machine::A4Initiator(m) => m.receive(env, io),
            Machine::A4Responder(m) => m.receive(env),
        }
    }

    fn finish(&mut self) {
        self.state_mut().starve_if_running();
    }
}

/// Outcome of one session: the transcript plus everything the auditor needs.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub scheme: Scheme,
    pub stage: String,
    pub seed: u64,
    pub kdf: KdfSpec,
    pub adversary: PartyId,
    pub long_term_keys: BTreeMap<(PartyId, PartyId), KeyBytes>,
    /// Each party's nonce ledger when the session started.
    pub prior_nonces: BTreeMap<PartyId, NonceLedger>,
    pub transcript: Transcript,
    /// Registration order, which fixes broadcast fan-out order.
    pub order: Vec<PartyId>,
    pub parties: BTreeMap<PartyId, PartyState>,
    pub warnings: Vec<String>,
    pub claims: Vec<Claim>,
}

impl RunRecord {
    pub fn party(&self, id: &PartyId) -> Option<&PartyState> {
        self.parties.get(id)
    }

    pub fn key_of(&self, id: &PartyId) -> Option<&KeyBytes> {
        self.party(id).and_then(|p| p.accepted_key())
    }

    /// Checks that every party accepted the same key; returns it.
    pub fn agreed_key(&self) -> Result<KeyBytes, String> {
        let mut key: Option<&KeyBytes> = None;
        for (id, st) in &self.parties {
            let k = st
                .accepted_key()
                .ok_or_else(|| format!("{id} ended {:?} ({:?})", st.status(), st.cause()))?;
            match key {
                None => key = Some(k),
                Some(prev) if prev == k => {}
                Some(_) => return Err(format!("{id} holds a different key")),
            }
        }
        key.cloned().ok_or_else(|| "no parties".to_owned())
    }

    /// Honest-run contract: everyone accepted one key and believes the
    /// configured peer set.
    pub fn check_honest(&self, cfg: &SchemeConfig) -> Result<KeyBytes, String> {
        let key = self.agreed_key()?;
        let setup = SetupMessage {
            scheme: cfg.scheme,
            participants: cfg.parties.clone(),
            distributor: cfg.center.clone().unwrap_or_else(|| cfg.parties[0].clone()),
            initiators: Vec::new(),
            nonce: Nonce::default(),
        };
        for (id, st) in &self.parties {
            let want = expected_peers(&setup, id);
            if st.believed_peers != want {
                return Err(format!("{id} believes {:?}, expected {:?}", st.believed_peers, want));
            }
        }
        Ok(key)
    }
}

/// Runs one session with the given machines in `world`.
pub fn run_stage(
    world: &mut World,
    scheme: Scheme,
    stage: &str,
    machines: Vec<Machine>,
    adversary: &mut dyn Adversary,
) -> Result<RunRecord, ProtocolError> {
    let mut net = Network::new(scheme.name());
    let mut prior_nonces = BTreeMap::new();
    let mut order = Vec::new();
    for m in machines {
        prior_nonces.insert(m.state().id.clone(), m.state().nonce_ledger.clone());
        order.push(m.state().id.clone());
        net.register(m)?;
    }
    let transcript = net.run_until_quiescent(&mut world.rng, adversary)?;
    let mut parties = BTreeMap::new();
    let mut warnings = Vec::new();
    for m in net.into_parties() {
        let st = m.into_state();
        world.store_ledger(&st.id, st.nonce_ledger.clone());
        warnings.extend(st.warnings.iter().map(|w| format!("{}: {w}", st.id)));
        parties.insert(st.id.clone(), st);
    }
    Ok(RunRecord {
        scheme,
        stage: stage.to_owned(),
        seed: world.rng.seed(),
        kdf: world.kdf,
        adversary: adversary.id().clone(),
        long_term_keys: world.long_term.clone(),
        prior_nonces,
        transcript,
        order,
        parties,
        warnings,
        claims: Vec::new(),
    })
}

/// The machines an honest `cfg` session consists of, in registration order.
pub fn build_machines(
    world: &World,
    cfg: &SchemeConfig,
    opts: &RunOptions,
) -> Result<Vec<Machine>, ProtocolError> {
    cfg.validate()?;
    let spec = cfg.kdf_spec();
    let ps = &cfg.parties;
    Ok(match cfg.scheme.family() {
        Family::Distributor => {
            let c = cfg.center()?;
            let role = if cfg.scheme == Scheme::B2V1 {
                Role::GroupMember
            } else {
                Role::Responder
            };
            let mut out: Vec<Machine> = ps
                .iter()
                .map(|p| {
                    Machine::Recipient(distributor::Recipient::new(
                        world.party_state(p, role),
                        cfg.scheme,
                        spec,
                    ))
                })
                .collect();
            out.push(Machine::Center(distributor::Center::new(
                world.party_state(c, Role::Center),
                cfg.scheme,
                ps.clone(),
                spec,
                opts.key_choice.clone(),
            )));
            out
        }
        Family::Group => {
            let root_role = match cfg.scheme {
                Scheme::A3_3 | Scheme::B1 => Role::Initiator,
                _ => Role::TreeRoot,
            };
            let mut out = vec![Machine::GroupRoot(group::Root::new(
                world.party_state(&ps[0], root_role),
                cfg.scheme,
                ps.clone(),
                spec,
            ))];
            for p in &ps[1..] {
                out.push(Machine::GroupMember(group::Member::new(
                    world.party_state(p, Role::GroupMember),
                    cfg.scheme,
                    spec,
                )));
            }
            out
        }
        Family::Consistency => vec![
            Machine::A4Initiator(a4::Initiator::proposer(
                world.party_state(&ps[0], Role::Initiator),
                cfg.scheme,
                ps.clone(),
                vec![ps[0].clone(), ps[1].clone()],
                spec,
            )),
            Machine::A4Initiator(a4::Initiator::new(
                world.party_state(&ps[1], Role::Initiator),
                cfg.scheme,
                spec,
            )),
            Machine::A4Responder(a4::Responder::new(
                world.party_state(&ps[2], Role::Responder),
                cfg.scheme,
                spec,
            )),
        ],
    })
}

/// Provisions the scheme's long-term keys in `world` and runs one session.
pub fn run_in_world(
    world: &mut World,
    cfg: &SchemeConfig,
    adversary: &mut dyn Adversary,
    opts: &RunOptions,
) -> Result<RunRecord, ProtocolError> {
    cfg.validate()?;
    if world.kdf != cfg.kdf_spec() {
        return Err(ProtocolError::Config("world and scenario disagree on the KDF".into()));
    }
    for (a, b) in cfg.key_pairs() {
        world.provision(&a, &b);
    }
    let machines = build_machines(world, cfg, opts)?;
    let stage = opts.stage.as_deref().unwrap_or("honest");
    run_stage(world, cfg.scheme, stage, machines, adversary)
}

/// Runs `cfg` in a fresh world seeded from `cfg.seed`.
pub fn run_with(
    cfg: &SchemeConfig,
    adversary: &mut dyn Adversary,
    opts: &RunOptions,
) -> Result<RunRecord, ProtocolError> {
    cfg.validate()?;
    let mut world = World::new(cfg.seed, cfg.kdf_spec());
    run_in_world(&mut world, cfg, adversary, opts)
}

/// Honest run with a passive adversary.
pub fn run_scheme(cfg: &SchemeConfig) -> Result<RunRecord, ProtocolError> {
    run_with(cfg, &mut Passive::new(), &RunOptions::default())
}

fn expect_scheme(cfg: &SchemeConfig, allowed: &[Scheme]) -> Result<(), ProtocolError> {
    if allowed.contains(&cfg.scheme) {
        Ok(())
    } else {
        Err(ProtocolError::Config(format!(
            "expected one of {allowed:?}, got {}",
            cfg.scheme
        )))
    }
}

pub fn a1_run(cfg: &SchemeConfig, adversary: &mut dyn Adversary) -> Result<RunRecord, ProtocolError> {
    expect_scheme(cfg, &[Scheme::A1])?;
    run_with(cfg, adversary, &RunOptions::default())
}

pub fn a1f_run(cfg: &SchemeConfig, adversary: &mut dyn Adversary) -> Result<RunRecord, ProtocolError> {
    expect_scheme(cfg, &[Scheme::A1F])?;
    run_with(cfg, adversary, &RunOptions::default())
}

pub fn a2_run(cfg: &SchemeConfig, adversary: &mut dyn Adversary) -> Result<RunRecord, ProtocolError> {
    expect_scheme(cfg, &[Scheme::A2])?;
    run_with(cfg, adversary, &RunOptions::default())
}

pub fn a3_three_party_run(
    cfg: &SchemeConfig,
    adversary: &mut dyn Adversary,
) -> Result<RunRecord, ProtocolError> {
    expect_scheme(cfg, &[Scheme::A3_3])?;
    run_with(cfg, adversary, &RunOptions::default())
}

pub fn a3_tree_run(cfg: &SchemeConfig, adversary: &mut dyn Adversary) -> Result<RunRecord, ProtocolError> {
    expect_scheme(cfg, &[Scheme::A3_TREE])?;
    run_with(cfg, adversary, &RunOptions::default())
}

pub fn a4_run(cfg: &SchemeConfig, adversary: &mut dyn Adversary) -> Result<RunRecord, ProtocolError> {
    expect_scheme(cfg, &[Scheme::A4])?;
    run_with(cfg, adversary, &RunOptions::default())
}

pub fn a4f_run(cfg: &SchemeConfig, adversary: &mut dyn Adversary) -> Result<RunRecord, ProtocolError> {
    expect_scheme(cfg, &[Scheme::A4F])?;
    run_with(cfg, adversary, &RunOptions::default())
}

/// B1 is the three-party A3 scheme; B2V2 is the A3 tree; B2V1 runs one A1
/// leg from the distributor to each member.
pub fn b_schemes_run(
    cfg: &SchemeConfig,
    adversary: &mut dyn Adversary,
) -> Result<RunRecord, ProtocolError> {
    expect_scheme(cfg, &[Scheme::B1, Scheme::B2V1, Scheme::B2V2])?;
    run_with(cfg, adversary, &RunOptions::default())
}
