//! Masked-sum multiparty computation.
//!
//! Each party `X` publishes `Δ_X = d_X` combined with the pairwise one-time
//! keys it holds, each key entering once with its sign and once with the
//! opposite sign (or inverse), so the keys telescope away when all `Δ`
//! values are combined.
//!
//! Three settings are supported: `Z_n` under addition, `Z_p*` under
//! multiplication, and plain integers. The integer setting leaks and exists
//! to demonstrate [`leakage_bound`].
//!
//! All arithmetic is on `i128`, so any modulus below `2^63` is safe.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::SeedStream;
use crate::netsim::{
    Adversary, AdversaryAction, Envelope, EnvelopeKind, Injector, Io, NetError, Network, Party,
};
use crate::PartyId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmpcError {
    #[error("modulus {0} is not prime")]
    NotPrime(u64),
    #[error("modulus must be at least 2 and below 2^63, got {0}")]
    BadModulus(u64),
    #[error("{value} is not an element of {mode:?} mod {n}")]
    OutOfGroup { value: i128, mode: Mode, n: u64 },
    #[error("key set {0} was already used")]
    KeyReuse(u64),
    #[error("key set {0} was not issued by this ledger")]
    UnknownKeySet(u64),
    #[error("missing key {0}")]
    MissingKey(String),
    #[error("expected {expected} inputs, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("masking plan does not telescope: {0}")]
    Plan(String),
    #[error("{0} is too large to enumerate")]
    TooLarge(u64),
    #[error(transparent)]
    Net(#[from] NetError),
}

impl SmpcError {
    /// Machine-readable code, e.g. `KEY_REUSE`.
    pub fn code(&self) -> &'static str {
        match self {
            SmpcError::NotPrime(_) => "NOT_PRIME",
            SmpcError::BadModulus(_) => "BAD_MODULUS",
            SmpcError::OutOfGroup { .. } => "OUT_OF_GROUP",
            SmpcError::KeyReuse(_) => "KEY_REUSE",
            SmpcError::UnknownKeySet(_) => "UNKNOWN_KEY_SET",
            SmpcError::MissingKey(_) => "MISSING_KEY",
            SmpcError::Arity { .. } => "ARITY",
            SmpcError::Plan(_) => "BAD_PLAN",
            SmpcError::TooLarge(_) => "TOO_LARGE",
            SmpcError::Net(_) => "NET",
        }
    }
}

#[allow(non_camel_case_types)]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    ADDITIVE_MOD_N,
    MULTIPLICATIVE_MOD_P,
    INTEGER_LEAKY,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "ADDITIVE_MOD_N" | "additive" => Some(Mode::ADDITIVE_MOD_N),
            "MULTIPLICATIVE_MOD_P" | "multiplicative" => Some(Mode::MULTIPLICATIVE_MOD_P),
            "INTEGER_LEAKY" | "integer" => Some(Mode::INTEGER_LEAKY),
            _ => None,
        }
    }
}

/// Trial division below `2^32`; deterministic Miller-Rabin above, where
/// the first twelve primes are a complete witness set for 64-bit inputs.
pub fn is_prime(n: u64) -> bool {
    if n < 1 << 32 {
        return trial_division(n);
    }
    const WITNESSES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if WITNESSES.iter().any(|&w| n.is_multiple_of(w)) {
        return false;
    }
    let mulmod = |a: u64, b: u64| (a as u128 * b as u128 % n as u128) as u64;
    let powmod = |mut b: u64, mut e: u64| {
        let mut acc = 1u64;
        while e > 0 {
            if e & 1 == 1 {
                acc = mulmod(acc, b);
            }
            b = mulmod(b, b);
            e >>= 1;
        }
        acc
    };
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    WITNESSES.iter().all(|&a| {
        let mut x = powmod(a, d);
        if x == 1 || x == n - 1 {
            return true;
        }
        for _ in 1..s {
            x = mulmod(x, x);
            if x == n - 1 {
                return true;
            }
        }
        false
    })
}

fn trial_division(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n.is_multiple_of(2) {
        return n == 2;
    }
    let mut d = 3u64;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 2;
    }
    true
}

/// The algebraic setting. `n` is the modulus, or the key bound in integer
/// mode (keys lie in `[0, n-1]`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub mode: Mode,
    pub n: u64,
}

impl GroupSpec {
    pub fn new(mode: Mode, n: u64) -> Result<Self, SmpcError> {
        if !(2..1 << 63).contains(&n) {
            return Err(SmpcError::BadModulus(n));
        }
        if mode == Mode::MULTIPLICATIVE_MOD_P && !is_prime(n) {
            return Err(SmpcError::NotPrime(n));
        }
        Ok(GroupSpec { mode, n })
    }

    pub fn additive(n: u64) -> Result<Self, SmpcError> {
        Self::new(Mode::ADDITIVE_MOD_N, n)
    }

    pub fn multiplicative(p: u64) -> Result<Self, SmpcError> {
        Self::new(Mode::MULTIPLICATIVE_MOD_P, p)
    }

    pub fn integer(key_bound: u64) -> Result<Self, SmpcError> {
        Self::new(Mode::INTEGER_LEAKY, key_bound)
    }

    fn m(&self) -> i128 {
        self.n as i128
    }

    pub fn contains(&self, v: i128) -> bool {
        match self.mode {
            Mode::ADDITIVE_MOD_N => (0..self.m()).contains(&v),
            Mode::MULTIPLICATIVE_MOD_P => (1..self.m()).contains(&v),
            Mode::INTEGER_LEAKY => v >= 0,
        }
    }

    pub fn element(&self, v: i128) -> Result<GroupElement, SmpcError> {
        if self.contains(v) {
            Ok(GroupElement { value: v, group: *self })
        } else {
            Err(SmpcError::OutOfGroup {
                value: v,
                mode: self.mode,
                n: self.n,
            })
        }
    }

    /// Valid one-time keys: group elements, or `[0, n-1]` in integer mode.
    pub fn is_key(&self, v: i128) -> bool {
        match self.mode {
            Mode::INTEGER_LEAKY => (0..self.m()).contains(&v),
            _ => self.contains(v),
        }
    }

    pub fn identity(&self) -> i128 {
        match self.mode {
            Mode::MULTIPLICATIVE_MOD_P => 1,
            _ => 0,
        }
    }

    /// Canonical representative.
    pub fn reduce(&self, v: i128) -> i128 {
        match self.mode {
            Mode::INTEGER_LEAKY => v,
            _ => v.rem_euclid(self.m()),
        }
    }

    pub fn op(&self, a: i128, b: i128) -> i128 {
        match self.mode {
            Mode::ADDITIVE_MOD_N => (a + b).rem_euclid(self.m()),
            Mode::MULTIPLICATIVE_MOD_P => (a * b).rem_euclid(self.m()),
            Mode::INTEGER_LEAKY => a + b,
        }
    }

    pub fn inv(&self, a: i128) -> i128 {
        match self.mode {
            Mode::ADDITIVE_MOD_N => (-a).rem_euclid(self.m()),
            Mode::MULTIPLICATIVE_MOD_P => self.pow(a, self.m() - 2),
            Mode::INTEGER_LEAKY => -a,
        }
    }

    fn pow(&self, mut base: i128, mut e: i128) -> i128 {
        let m = self.m();
        let mut acc = 1i128;
        base = base.rem_euclid(m);
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base % m;
            }
            base = base * base % m;
            e >>= 1;
        }
        acc
    }

    pub fn fold(&self, vals: impl IntoIterator<Item = i128>) -> i128 {
        vals.into_iter().fold(self.identity(), |a, b| self.op(a, b))
    }

    /// `a ⊖ b`.
    pub fn sub(&self, a: i128, b: i128) -> i128 {
        self.op(a, self.inv(b))
    }

    /// A uniform group element (uniform key in integer mode).
    pub fn sample(&self, rng: &mut SeedStream) -> i128 {
        match self.mode {
            Mode::MULTIPLICATIVE_MOD_P => 1 + rng.below(self.n - 1) as i128,
            _ => rng.below(self.n) as i128,
        }
    }

    /// Every element, for small groups.
    pub fn elements(&self) -> Result<Vec<i128>, SmpcError> {
        if self.n > 1 << 12 {
            return Err(SmpcError::TooLarge(self.n));
        }
        let lo = if self.mode == Mode::MULTIPLICATIVE_MOD_P { 1 } else { 0 };
        Ok((lo..self.m()).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupElement {
    pub value: i128,
    pub group: GroupSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    /// Negation, or the inverse in `Z_p*`.
    Minus,
}

/// Which keys each party folds into its input, and with which sign.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MaskingPlan {
    pub parties: Vec<PartyId>,
    pub terms: BTreeMap<PartyId, Vec<(String, Sign)>>,
}

/// Name of the key shared by `a` and `b`, e.g. `AB`.
pub fn pair_name(a: &PartyId, b: &PartyId) -> String {
    format!("{a}{b}")
}

impl MaskingPlan {
    /// The standard plan: for `i < j` the earlier party adds `K_ij` and the
    /// later one subtracts it.
    pub fn pairwise(parties: &[&str]) -> Self {
        let parties: Vec<PartyId> = parties.iter().map(|p| PartyId::from(*p)).collect();
        let mut terms: BTreeMap<PartyId, Vec<(String, Sign)>> = BTreeMap::new();
        for (i, a) in parties.iter().enumerate() {
            terms.entry(a.clone()).or_default();
            for b in &parties[i + 1..] {
                let k = pair_name(a, b);
                terms.get_mut(a).unwrap().push((k.clone(), Sign::Plus));
                terms.entry(b.clone()).or_default().push((k, Sign::Minus));
            }
        }
        MaskingPlan { parties, terms }
    }

    pub fn three_party() -> Self {
        Self::pairwise(&["A", "B", "C"])
    }

    pub fn keys(&self) -> BTreeSet<String> {
        self.terms.values().flatten().map(|(k, _)| k.clone()).collect()
    }

    /// Every key appears exactly twice, once with each sign.
    pub fn validate(&self) -> Result<(), SmpcError> {
        let mut seen: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for (k, s) in self.terms.values().flatten() {
            let e = seen.entry(k).or_default();
            match s {
                Sign::Plus => e.0 += 1,
                Sign::Minus => e.1 += 1,
            }
        }
        for (k, (plus, minus)) in seen {
            if (plus, minus) != (1, 1) {
                return Err(SmpcError::Plan(format!("{k} appears +{plus}/-{minus}")));
            }
        }
        Ok(())
    }

    /// The combined mask party `who` applies.
    pub fn mask(
        &self,
        spec: &GroupSpec,
        who: &PartyId,
        keys: &BTreeMap<String, i128>,
    ) -> Result<i128, SmpcError> {
        let mut acc = spec.identity();
        for (k, s) in self.terms.get(who).into_iter().flatten() {
            let v = *keys.get(k).ok_or_else(|| SmpcError::MissingKey(k.clone()))?;
            acc = spec.op(
                acc,
                match s {
                    Sign::Plus => v,
                    Sign::Minus => spec.inv(v),
                },
            );
        }
        Ok(acc)
    }

    /// `Δ_X` for every party, in plan order.
    pub fn deltas(
        &self,
        spec: &GroupSpec,
        inputs: &[i128],
        keys: &BTreeMap<String, i128>,
    ) -> Result<Vec<i128>, SmpcError> {
        if inputs.len() != self.parties.len() {
            return Err(SmpcError::Arity {
                expected: self.parties.len(),
                got: inputs.len(),
            });
        }
        self.parties
            .iter()
            .zip(inputs)
            .map(|(p, &d)| Ok(spec.op(d, self.mask(spec, p, keys)?)))
            .collect()
    }
}

/// A batch of one-time keys, identified by the ledger that issued it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeySet {
    pub serial: u64,
    pub keys: BTreeMap<String, i128>,
}

impl KeySet {
    pub fn get(&self, name: &str) -> Result<i128, SmpcError> {
        self.keys
            .get(name)
            .copied()
            .ok_or_else(|| SmpcError::MissingKey(name.to_owned()))
    }
}

/// Issues key sets and refuses a second computation under the same one.
#[derive(Debug, Default)]
pub struct KeyLedger {
    issued: u64,
    used: BTreeSet<u64>,
}

impl KeyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn issue(&mut self, keys: BTreeMap<String, i128>) -> KeySet {
        let serial = self.issued;
        self.issued += 1;
        KeySet { serial, keys }
    }

    /// Literal keys, e.g. `[("AB", 7), ("AC", 11)]`.
    pub fn issue_literal(&mut self, keys: &[(&str, i128)]) -> KeySet {
        self.issue(keys.iter().map(|(k, v)| ((*k).to_owned(), *v)).collect())
    }

    /// Uniform keys for every name in `names`.
    pub fn issue_random<'a>(
        &mut self,
        spec: &GroupSpec,
        names: impl IntoIterator<Item = &'a str>,
        rng: &mut SeedStream,
    ) -> KeySet {
        let keys = names.into_iter().map(|k| (k.to_owned(), spec.sample(rng))).collect();
        self.issue(keys)
    }

    pub fn consume(&mut self, set: &KeySet) -> Result<(), SmpcError> {
        if set.serial >= self.issued {
            return Err(SmpcError::UnknownKeySet(set.serial));
        }
        if !self.used.insert(set.serial) {
            return Err(SmpcError::KeyReuse(set.serial));
        }
        Ok(())
    }

    pub fn is_used(&self, set: &KeySet) -> bool {
        self.used.contains(&set.serial)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SumOutcome {
    pub deltas: Vec<i128>,
    /// Aggregate recovered from the published values.
    pub sum: i128,
}

fn check_values(spec: &GroupSpec, inputs: &[i128], keys: &KeySet, names: &BTreeSet<String>) -> Result<(), SmpcError> {
    for &d in inputs {
        spec.element(d)?;
    }
    for k in names {
        let v = keys.get(k)?;
        if !spec.is_key(v) {
            return Err(SmpcError::OutOfGroup {
                value: v,
                mode: spec.mode,
                n: spec.n,
            });
        }
    }
    Ok(())
}

fn masked_run(
    spec: &GroupSpec,
    plan: &MaskingPlan,
    inputs: &[i128],
    keys: &KeySet,
    ledger: &mut KeyLedger,
) -> Result<Vec<i128>, SmpcError> {
    plan.validate()?;
    check_values(spec, inputs, keys, &plan.keys())?;
    let deltas = plan.deltas(spec, inputs, &keys.keys)?;
    ledger.consume(keys)?;
    Ok(deltas)
}

/// Everyone broadcasts; anyone recovers the aggregate.
pub fn scheme1_run(
    spec: &GroupSpec,
    inputs: &[i128],
    keys: &KeySet,
    ledger: &mut KeyLedger,
) -> Result<SumOutcome, SmpcError> {
    let deltas = masked_run(spec, &MaskingPlan::three_party(), inputs, keys, ledger)?;
    Ok(SumOutcome {
        sum: spec.fold(deltas.iter().copied()),
        deltas,
    })
}

/// Product over `Z_p*`; same masking with inverses.
pub fn multiplicative_run(
    spec: &GroupSpec,
    inputs: &[i128],
    keys: &KeySet,
    ledger: &mut KeyLedger,
) -> Result<SumOutcome, SmpcError> {
    if spec.mode != Mode::MULTIPLICATIVE_MOD_P {
        return Err(SmpcError::Plan("multiplicative run needs MULTIPLICATIVE_MOD_P".into()));
    }
    scheme1_run(spec, inputs, keys, ledger)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Scheme2Outcome {
    /// The values A and B broadcast.
    pub public: [i128; 2],
    /// C's value, never sent.
    pub private_c: i128,
    pub c_sum: i128,
}

/// A and B broadcast; C keeps `Δ_C` and alone learns the aggregate.
pub fn scheme2_run(
    spec: &GroupSpec,
    inputs: &[i128],
    keys: &KeySet,
    ledger: &mut KeyLedger,
) -> Result<Scheme2Outcome, SmpcError> {
    let d = masked_run(spec, &MaskingPlan::three_party(), inputs, keys, ledger)?;
    Ok(Scheme2Outcome {
        public: [d[0], d[1]],
        private_c: d[2],
        c_sum: spec.fold(d.iter().copied()),
    })
}

/// Aggregates consistent with an observer's view `(Δ_A, Δ_B)` of scheme 2:
/// every completion `(K_AB, K_AC, K_BC, d_C)`, with `d_A` and `d_B` solved
/// from the observed values.
pub fn observer_candidate_sums(
    spec: &GroupSpec,
    observed: [i128; 2],
) -> Result<BTreeSet<i128>, SmpcError> {
    let xs = spec.elements()?;
    let keys: Vec<i128> = match spec.mode {
        Mode::INTEGER_LEAKY => (0..spec.n as i128).collect(),
        _ => xs.clone(),
    };
    let mut out = BTreeSet::new();
    for &ab in &keys {
        for &ac in &keys {
            // Δ_A = d_A + K_AB + K_AC
            let d_a = spec.sub(spec.sub(observed[0], ab), ac);
            if !spec.contains(d_a) {
                continue;
            }
            for &bc in &keys {
                // Δ_B = d_B - K_AB + K_BC
                let d_b = spec.sub(spec.op(observed[1], ab), bc);
                if !spec.contains(d_b) {
                    continue;
                }
                for &d_c in &xs {
                    out.insert(spec.fold([d_a, d_b, d_c]));
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Scheme3Outcome {
    /// `Δ*_X = Δ_X ⊕ K_XD`, broadcast by A, B, C.
    pub starred: Vec<i128>,
    pub d_sum: i128,
}

/// A, B and C broadcast `Δ*` values; only D can strip the extra layer.
pub fn scheme3_run(
    spec: &GroupSpec,
    inputs: &[i128],
    keys: &KeySet,
    ledger: &mut KeyLedger,
) -> Result<Scheme3Outcome, SmpcError> {
    let plan = MaskingPlan::three_party();
    let outer = ["AD", "BD", "CD"];
    let mut names = plan.keys();
    names.extend(outer.iter().map(|s| (*s).to_owned()));
    plan.validate()?;
    check_values(spec, inputs, keys, &names)?;
    let inner = plan.deltas(spec, inputs, &keys.keys)?;
    let mut starred = Vec::with_capacity(3);
    for (d, k) in inner.iter().zip(outer) {
        starred.push(spec.op(*d, keys.get(k)?));
    }
    ledger.consume(keys)?;
    let mut d_sum = spec.fold(starred.iter().copied());
    for k in outer {
        d_sum = spec.sub(d_sum, keys.get(k)?);
    }
    Ok(Scheme3Outcome { starred, d_sum })
}

/// What a listener learns about `d_A` from `Δ_A = d_A + K_AB + K_AC` over
/// the integers with keys in `[0, n-1]`: the lower bound
/// `max(0, Δ_A - 2(n-1))`.
pub fn leakage_bound(delta: i128, n: u64) -> i128 {
    (delta - 2 * (n as i128 - 1)).max(0)
}

/// The input the last broadcaster `controller` must use so that the
/// aggregate comes out as `target`, given everyone else's published values.
pub fn atk_output_control(
    spec: &GroupSpec,
    plan: &MaskingPlan,
    controller: &PartyId,
    target: i128,
    observed: &BTreeMap<PartyId, i128>,
    own_keys: &BTreeMap<String, i128>,
) -> Result<i128, SmpcError> {
    let others = spec.fold(
        plan.parties
            .iter()
            .filter(|p| *p != controller)
            .map(|p| observed.get(p).copied().ok_or_else(|| SmpcError::MissingKey(format!("Δ_{p}"))))
            .collect::<Result<Vec<_>, _>>()?,
    );
    let mask = plan.mask(spec, controller, own_keys)?;
    Ok(spec.sub(spec.sub(target, others), mask))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OutputControlVerdict {
    pub target: i128,
    pub honest_input: i128,
    pub forced_input: i128,
    pub honest_sum: i128,
    /// Aggregate of the session actually run with the forced input.
    pub forced_sum: i128,
    pub success: bool,
}

/// Scheme 1 with C broadcasting last: A and B publish honestly, C solves
/// for the input that lands the aggregate on `target`, and the session
/// runs once with that input.
pub fn output_control_run(
    spec: &GroupSpec,
    inputs: &[i128],
    keys: &KeySet,
    ledger: &mut KeyLedger,
    target: i128,
) -> Result<OutputControlVerdict, SmpcError> {
    let plan = MaskingPlan::three_party();
    check_values(spec, inputs, keys, &plan.keys())?;
    spec.element(target)?;
    let honest = plan.deltas(spec, inputs, &keys.keys)?;
    let controller = plan.parties[2].clone();
    let observed: BTreeMap<PartyId, i128> = plan.parties[..2]
        .iter()
        .cloned()
        .zip(honest.iter().copied())
        .collect();
    let own: BTreeMap<String, i128> = plan.terms[&controller]
        .iter()
        .map(|(k, _)| Ok((k.clone(), keys.get(k)?)))
        .collect::<Result<_, SmpcError>>()?;
    let forced = atk_output_control(spec, &plan, &controller, target, &observed, &own)?;
    let mut forced_inputs = inputs.to_vec();
    forced_inputs[2] = forced;
    let out = scheme1_run(spec, &forced_inputs, keys, ledger)?;
    Ok(OutputControlVerdict {
        target,
        honest_input: inputs[2],
        forced_input: forced,
        honest_sum: spec.fold(honest),
        forced_sum: out.sum,
        success: out.sum == target,
    })
}

fn encode(v: i128) -> Vec<u8> {
    v.to_be_bytes().to_vec()
}

fn decode(b: &[u8]) -> Option<i128> {
    Some(i128::from_be_bytes(b.try_into().ok()?))
}

/// A scheme-1 participant on the simulated network.
#[derive(Debug)]
struct Broadcaster {
    id: PartyId,
    spec: GroupSpec,
    delta: i128,
    expected: usize,
    heard: BTreeMap<PartyId, i128>,
    malformed: bool,
}

impl Party for Broadcaster {
    fn id(&self) -> &PartyId {
        &self.id
    }

    fn start(&mut self, io: &mut Io<'_>) {
        io.broadcast(encode(self.delta));
    }

    fn receive(&mut self, env: &Envelope, _: &mut Io<'_>) {
        match decode(&env.payload) {
            Some(v) if self.spec.contains(v) || self.spec.mode == Mode::INTEGER_LEAKY => {
                self.heard.entry(env.claimed_sender.clone()).or_insert(v);
            }
            _ => self.malformed = true,
        }
    }
}

impl Broadcaster {
    /// The aggregate, once every other party has been heard.
    fn recovered(&self) -> Option<i128> {
        (!self.malformed && self.heard.len() == self.expected)
            .then(|| self.spec.op(self.spec.fold(self.heard.values().copied()), self.delta))
    }
}

/// Shifts the `Δ` broadcast by `victim` by `offset` on its way to everyone.
struct BroadcastTamper {
    id: PartyId,
    spec: GroupSpec,
    victim: PartyId,
    offset: i128,
}

impl Adversary for BroadcastTamper {
    fn id(&self) -> &PartyId {
        &self.id
    }

    fn decide(&mut self, env: &Envelope, _: &mut Injector<'_>) -> AdversaryAction {
        if env.kind != EnvelopeKind::Broadcast || env.true_sender != self.victim {
            return AdversaryAction::Deliver;
        }
        match decode(&env.payload) {
            Some(v) => AdversaryAction::Modify(encode(self.spec.op(v, self.offset))),
            None => AdversaryAction::Deliver,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TamperVerdict {
    pub victim: PartyId,
    pub offset: i128,
    pub honest_sum: i128,
    /// What each party computed; `None` means it noticed a problem.
    pub recovered: BTreeMap<PartyId, Option<i128>>,
    /// Every party that received the tampered value computed
    /// `honest ⊕ offset` and none flagged anything.
    pub success: bool,
}

/// Runs scheme 1 over the simulator while an adversary shifts `victim`'s
/// broadcast by `offset`.
pub fn atk_broadcast_tamper(
    spec: &GroupSpec,
    inputs: &[i128],
    keys: &KeySet,
    ledger: &mut KeyLedger,
    victim: &str,
    offset: i128,
    seed: u64,
) -> Result<TamperVerdict, SmpcError> {
    let honest = scheme1_run(spec, inputs, keys, ledger)?;
    let plan = MaskingPlan::three_party();
    let mut net = Network::new("SMPC_SCHEME1");
    for (p, &delta) in plan.parties.iter().zip(&honest.deltas) {
        net.register(Broadcaster {
            id: p.clone(),
            spec: *spec,
            delta,
            expected: plan.parties.len() - 1,
            heard: BTreeMap::new(),
            malformed: false,
        })?;
    }
    let victim = PartyId::from(victim);
    let mut adv = BroadcastTamper {
        id: PartyId::from("E"),
        spec: *spec,
        victim: victim.clone(),
        offset,
    };
    net.run_until_quiescent(&mut SeedStream::new(seed), &mut adv)?;
    let recovered: BTreeMap<PartyId, Option<i128>> = net
        .parties()
        .iter()
        .map(|b| (b.id.clone(), b.recovered()))
        .collect();
    let shifted = spec.op(honest.sum, offset);
    let success = recovered.iter().all(|(p, r)| {
        let want = if *p == victim { honest.sum } else { shifted };
        *r == Some(want)
    });
    Ok(TamperVerdict {
        victim,
        offset,
        honest_sum: honest.sum,
        recovered,
        success,
    })
}

/// The CLI instance file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub mode: Mode,
    pub n: u64,
    pub inputs: Vec<u64>,
    pub keys: BTreeMap<String, u64>,
}

impl Instance {
    pub fn spec(&self) -> Result<GroupSpec, SmpcError> {
        GroupSpec::new(self.mode, self.n)
    }

    pub fn inputs(&self) -> Vec<i128> {
        self.inputs.iter().map(|&d| d as i128).collect()
    }

    pub fn key_map(&self) -> BTreeMap<String, i128> {
        self.keys.iter().map(|(k, &v)| (k.clone(), v as i128)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn keys13(ledger: &mut KeyLedger) -> KeySet {
        ledger.issue_literal(&[("AB", 7), ("AC", 11), ("BC", 4)])
    }

    #[test]
    fn scheme1_worked_instance() {
        let spec = GroupSpec::additive(13).unwrap();
        let mut l = KeyLedger::new();
        let ks = keys13(&mut l);
        let out = scheme1_run(&spec, &[3, 5, 2], &ks, &mut l).unwrap();
        assert_eq!(out.deltas, [8, 2, 0]);
        assert_eq!(out.sum, 10);
        assert_eq!(
            scheme1_run(&spec, &[3, 5, 2], &ks, &mut l).unwrap_err().code(),
            "KEY_REUSE"
        );
    }

    #[test]
    fn zero_keys_unmask_nothing() {
        let spec = GroupSpec::additive(13).unwrap();
        let mut l = KeyLedger::new();
        let ks = l.issue_literal(&[("AB", 0), ("AC", 0), ("BC", 0)]);
        let out = scheme1_run(&spec, &[3, 5, 12], &ks, &mut l).unwrap();
        assert_eq!(out.deltas, [3, 5, 12]);
        assert_eq!(out.sum, 7);
    }

    #[test]
    fn ledger_rejects_foreign_sets() {
        let spec = GroupSpec::additive(13).unwrap();
        let mut other = KeyLedger::new();
        let mut l = KeyLedger::new();
        let _ = other.issue_literal(&[]);
        let foreign = other.issue_literal(&[("AB", 1), ("AC", 1), ("BC", 1)]);
        assert_eq!(
            scheme1_run(&spec, &[1, 1, 1], &foreign, &mut l),
            Err(SmpcError::UnknownKeySet(1))
        );
    }

    #[test]
    fn scheme2_instance_and_observer() {
        let spec = GroupSpec::additive(13).unwrap();
        let mut l = KeyLedger::new();
        let out = scheme2_run(&spec, &[3, 5, 2], &keys13(&mut l), &mut l).unwrap();
        assert_eq!(out.c_sum, 10);
        assert_eq!(out.public, [8, 2]);
        let cands = observer_candidate_sums(&spec, out.public).unwrap();
        assert_eq!(cands, (0..13).collect());

        let out = scheme2_run(&spec, &[3, 5, 0], &l.issue_literal(&[("AB", 7), ("AC", 11), ("BC", 4)]), &mut l)
            .unwrap();
        assert_ne!(spec.op(out.public[0], out.public[1]), out.c_sum);
    }

    #[test]
    fn scheme3_instance() {
        let spec = GroupSpec::additive(13).unwrap();
        let mut l = KeyLedger::new();
        let ks = l.issue_literal(&[("AB", 7), ("AC", 11), ("BC", 4), ("AD", 1), ("BD", 6), ("CD", 9)]);
        let out = scheme3_run(&spec, &[3, 5, 2], &ks, &mut l).unwrap();
        assert_eq!(out.starred, [9, 8, 9]);
        assert_eq!(out.d_sum, 10);

        let ks = l.issue_literal(&[("AB", 7), ("AC", 11), ("BC", 4), ("AD", 0), ("BD", 0), ("CD", 0)]);
        let out = scheme3_run(&spec, &[3, 5, 2], &ks, &mut l).unwrap();
        assert_eq!(out.starred, [8, 2, 0]);
    }

    #[test]
    fn multiplicative_instance() {
        let spec = GroupSpec::multiplicative(11).unwrap();
        assert_eq!([spec.inv(3), spec.inv(5), spec.inv(7)], [4, 9, 8]);
        let mut l = KeyLedger::new();
        let ks = l.issue_literal(&[("AB", 3), ("AC", 5), ("BC", 7)]);
        let out = multiplicative_run(&spec, &[2, 3, 4], &ks, &mut l).unwrap();
        assert_eq!(out.deltas, [8, 7, 2]);
        assert_eq!(out.sum, 2);

        let ks = l.issue_literal(&[("AB", 1), ("AC", 1), ("BC", 1)]);
        assert_eq!(multiplicative_run(&spec, &[2, 3, 4], &ks, &mut l).unwrap().deltas, [2, 3, 4]);
    }

    #[test]
    fn multiplicative_refusals() {
        assert_eq!(GroupSpec::multiplicative(12), Err(SmpcError::NotPrime(12)));
        let spec = GroupSpec::multiplicative(11).unwrap();
        let mut l = KeyLedger::new();
        let ks = l.issue_literal(&[("AB", 3), ("AC", 0), ("BC", 7)]);
        assert!(matches!(
            multiplicative_run(&spec, &[2, 3, 4], &ks, &mut l),
            Err(SmpcError::OutOfGroup { value: 0, .. })
        ));
        let ks = l.issue_literal(&[("AB", 3), ("AC", 5), ("BC", 7)]);
        assert!(multiplicative_run(&spec, &[0, 3, 4], &ks, &mut l).is_err());
        // Refused values do not burn the key set.
        assert!(!l.is_used(&ks));
    }

    #[test]
    fn primality_by_hand() {
        let primes: Vec<u64> = (0..40).filter(|&n| is_prime(n)).collect();
        assert_eq!(primes, [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37]);
        assert!(is_prime((1 << 61) - 1));
        // Carmichael and strong-pseudoprime composites above 2^32.
        assert!(!is_prime(4_294_967_297)); // 641 * 6700417
        assert!(!is_prime(3_825_123_056_546_413_051));
        assert!(!is_prime(((1u64 << 31) - 1) * ((1 << 31) - 1)));
        for n in (1u64 << 32) - 200..(1 << 32) + 200 {
            assert_eq!(is_prime(n), n < 1 << 32 && trial_division(n) || n >= 1 << 32 && trial_division_wide(n), "{n}");
        }
    }

    #[test]
    fn leakage_examples() {
        let spec = GroupSpec::integer(10).unwrap();
        let mut l = KeyLedger::new();
        let ks = l.issue_literal(&[("AB", 9), ("AC", 9), ("BC", 0)]);
        let out = scheme1_run(&spec, &[7, 0, 0], &ks, &mut l).unwrap();
        assert_eq!(out.deltas[0], 25);
        assert_eq!(leakage_bound(25, 10), 7);
        assert_eq!(leakage_bound(18, 10), 0);
        assert_eq!(leakage_bound(3, 10), 0);
    }

    #[test]
    fn leakage_sound_at_four() {
        for d in 0..4 {
            for ab in 0..4 {
                for ac in 0..4 {
                    assert!(leakage_bound(d + ab + ac, 4) <= d);
                }
            }
        }
    }

    #[test]
    fn output_control_instance() {
        let spec = GroupSpec::additive(13).unwrap();
        let plan = MaskingPlan::three_party();
        let observed = BTreeMap::from([(PartyId::from("A"), 8), (PartyId::from("B"), 2)]);
        let own = BTreeMap::from([("AC".to_owned(), 11), ("BC".to_owned(), 4)]);
        let c = PartyId::from("C");
        assert_eq!(atk_output_control(&spec, &plan, &c, 0, &observed, &own).unwrap(), 5);
        assert_eq!(atk_output_control(&spec, &plan, &c, 10, &observed, &own).unwrap(), 2);
        let mut l = KeyLedger::new();
        let ks = keys13(&mut l);
        assert_eq!(scheme1_run(&spec, &[3, 5, 5], &ks, &mut l).unwrap().sum, 0);
    }

    #[test]
    fn output_control_closed_loop() {
        let spec = GroupSpec::additive(13).unwrap();
        let mut l = KeyLedger::new();
        let v = output_control_run(&spec, &[3, 5, 2], &keys13(&mut l), &mut l, 0).unwrap();
        assert_eq!((v.forced_input, v.forced_sum, v.honest_sum), (5, 0, 10));
        let v = output_control_run(&spec, &[3, 5, 2], &keys13(&mut l), &mut l, 10).unwrap();
        assert_eq!(v.forced_input, v.honest_input);
        assert!(v.success);
    }

    #[test]
    fn output_control_any_party_count() {
        let spec = GroupSpec::additive(101).unwrap();
        let names = ["A", "B", "C", "D", "E", "F"];
        let plan = MaskingPlan::pairwise(&names);
        plan.validate().unwrap();
        let mut rng = SeedStream::new(3);
        let keys: BTreeMap<String, i128> = plan.keys().into_iter().map(|k| (k, spec.sample(&mut rng))).collect();
        let mut inputs: Vec<i128> = (0..6).map(|_| spec.sample(&mut rng)).collect();
        let deltas = plan.deltas(&spec, &inputs, &keys).unwrap();
        let observed = plan.parties.iter().cloned().zip(deltas).collect();
        let last = PartyId::from("F");
        inputs[5] = atk_output_control(&spec, &plan, &last, 42, &observed, &keys).unwrap();
        let forced = plan.deltas(&spec, &inputs, &keys).unwrap();
        assert_eq!(spec.fold(forced), 42);
    }

    #[test]
    fn broadcast_tamper_shifts_everyone() {
        let spec = GroupSpec::additive(13).unwrap();
        let mut l = KeyLedger::new();
        let v = atk_broadcast_tamper(&spec, &[3, 5, 2], &keys13(&mut l), &mut l, "B", 1, 0).unwrap();
        assert!(v.success);
        assert_eq!(v.honest_sum, 10);
        assert_eq!(v.recovered[&PartyId::from("A")], Some(11));
        assert_eq!(v.recovered[&PartyId::from("C")], Some(11));
        assert_eq!(v.recovered[&PartyId::from("B")], Some(10));

        let v = atk_broadcast_tamper(&spec, &[3, 5, 2], &keys13(&mut l), &mut l, "B", 0, 0).unwrap();
        assert!(v.recovered.values().all(|r| *r == Some(10)));
    }

    #[test]
    fn bad_plans_are_refused() {
        let mut plan = MaskingPlan::three_party();
        plan.terms.get_mut(&PartyId::from("C")).unwrap().pop();
        assert!(matches!(plan.validate(), Err(SmpcError::Plan(_))));
    }

    #[test]
    fn instance_file_parses() {
        let inst: Instance = serde_json::from_str(
            r#"{"mode":"ADDITIVE_MOD_N","n":13,"inputs":[3,5,2],"keys":{"AB":7,"AC":11,"BC":4}}"#,
        )
        .unwrap();
        assert_eq!(inst.spec().unwrap(), GroupSpec::additive(13).unwrap());
        assert_eq!(inst.inputs(), [3, 5, 2]);
        assert!(serde_json::from_str::<Instance>(r#"{"mode":"ADDITIVE_MOD_N","n":13}"#).is_err());
    }

    fn trial_division_wide(n: u64) -> bool {
        n >= 2 && (2..).take_while(|d: &u64| d * d <= n).all(|d| !n.is_multiple_of(d))
    }

    const MERSENNE61: u64 = (1 << 61) - 1;

    proptest! {
        #[test]
        fn telescoping_at_mersenne(d in prop::array::uniform3(0..MERSENNE61), k in prop::array::uniform3(0..MERSENNE61)) {
            let spec = GroupSpec::additive(MERSENNE61).unwrap();
            let mut l = KeyLedger::new();
            let ks = l.issue_literal(&[("AB", k[0] as i128), ("AC", k[1] as i128), ("BC", k[2] as i128)]);
            let d = d.map(|x| x as i128);
            let out = scheme1_run(&spec, &d, &ks, &mut l).unwrap();
            prop_assert_eq!(out.sum, spec.fold(d));
        }

        #[test]
        fn multiplicative_at_mersenne(d in prop::array::uniform3(1..MERSENNE61), k in prop::array::uniform3(1..MERSENNE61)) {
            let spec = GroupSpec::multiplicative(MERSENNE61).unwrap();
            let mut l = KeyLedger::new();
            let ks = l.issue_literal(&[("AB", k[0] as i128), ("AC", k[1] as i128), ("BC", k[2] as i128)]);
            let d = d.map(|x| x as i128);
            prop_assert_eq!(multiplicative_run(&spec, &d, &ks, &mut l).unwrap().sum, spec.fold(d));
        }

        #[test]
        fn inverse_roundtrip(a in 1..MERSENNE61) {
            let spec = GroupSpec::multiplicative(MERSENNE61).unwrap();
            prop_assert_eq!(spec.op(a as i128, spec.inv(a as i128)), 1);
        }
    }
}
