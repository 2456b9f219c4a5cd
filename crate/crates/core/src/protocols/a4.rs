//! Two-initiator group key scheme with a consistency check (A4) and its
//! MAC-authenticated variant (A4F).
//!
//! Initiators `A` and `B` send `C_A = K¹_AB ⊕ K¹_AC` and
//! `C_B = K²_AB ⊕ K²_BC` to the responder `C`, which computes
//! `K¹ = C_A ⊕ K³_AC` and `K² = C_B ⊕ K³_BC` and accepts iff they agree.
//! In A4F each masked value is followed by
//! `HMAC(K_XC, C_X ∥ ctx("a4f-mac", N, sorted participants))` and the
//! one-time keys bind the participant identities.

use std::collections::BTreeMap;

use crate::crypto::{mac_tag, mac_verify, xor_combine, KdfContext, KdfSpec, KeyBytes, Tag, TAG_BYTES};
use crate::netsim::{Envelope, EnvelopeKind, Io};
use crate::PartyId;

use super::{PartyState, RejectCause, Scheme, SetupMessage};

pub const MAC_LABEL: &str = "a4f-mac";

/// The bytes authenticated alongside a masked value in A4F.
pub fn mac_input(masked: &[u8], setup: &SetupMessage) -> Vec<u8> {
    let ctx = KdfContext::bound(MAC_LABEL, setup.nonce.clone(), setup.participants.iter().cloned());
    let mut out = masked.to_vec();
    out.extend(ctx.serialize());
    out
}

/// Roles in a well-formed A4 setup: `(initiators, responder)`.
pub fn roles(setup: &SetupMessage) -> Option<([PartyId; 2], PartyId)> {
    if setup.participants.len() != 3 || setup.initiators.len() != 2 {
        return None;
    }
    let [a, b] = [setup.initiators[0].clone(), setup.initiators[1].clone()];
    if a == b || !setup.participants.contains(&a) || !setup.participants.contains(&b) {
        return None;
    }
    let mut rest = setup.participants.iter().filter(|p| **p != a && **p != b);
    let r = rest.next()?.clone();
    rest.next().is_none().then_some(([a, b], r))
}

#[derive(Clone, Debug)]
pub struct Initiator {
    pub state: PartyState,
    scheme: Scheme,
    spec: KdfSpec,
    proposal: Option<(Vec<PartyId>, Vec<PartyId>)>,
    done: bool,
}

impl Initiator {
    /// An initiator waiting for someone else's `SETUP`.
    pub fn new(state: PartyState, scheme: Scheme, spec: KdfSpec) -> Self {
        Initiator {
            state,
            scheme,
            spec,
            proposal: None,
            done: false,
        }
    }

    /// An initiator that announces the session itself.
    pub fn proposer(
        state: PartyState,
        scheme: Scheme,
        participants: Vec<PartyId>,
        initiators: Vec<PartyId>,
        spec: KdfSpec,
    ) -> Self {
        Initiator {
            proposal: Some((participants, initiators)),
            ..Self::new(state, scheme, spec)
        }
    }

    pub(super) fn start(&mut self, io: &mut Io<'_>) {
        let Some((participants, initiators)) = self.proposal.take() else {
            return;
        };
        let setup = SetupMessage {
            scheme: self.scheme,
            participants,
            distributor: self.state.id.clone(),
            initiators,
            nonce: io.rng().nonce(self.spec.output_length),
        };
        for p in setup.participants.iter().filter(|p| **p != self.state.id) {
            io.send(p, EnvelopeKind::Setup, setup.encode());
        }
        self.run(&setup, io);
    }

    pub(super) fn receive(&mut self, env: &Envelope, io: &mut Io<'_>) {
        if self.done || !self.state.is_running() || env.kind != EnvelopeKind::Setup {
            return;
        }
        match SetupMessage::decode(&env.payload).filter(|s| s.scheme == self.scheme) {
            Some(setup) => self.run(&setup, io),
            None => self.state.reject(RejectCause::MalformedSetup),
        }
    }

    fn run(&mut self, setup: &SetupMessage, io: &mut Io<'_>) {
        self.done = true;
        let me = self.state.id.clone();
        let Some((initiators, responder)) = roles(setup).filter(|(i, _)| i.contains(&me)) else {
            self.state.reject(RejectCause::NotAParticipant);
            return;
        };
        if !self.state.use_nonce(&setup.nonce) {
            return;
        }
        self.state.believed_peers = super::expected_peers(setup, &me);
        let other = if initiators[0] == me { &initiators[1] } else { &initiators[0] };
        let ctx = setup.otk_context();
        let Some(group) = self.state.derive_one_time(other, &ctx, self.spec) else {
            return;
        };
        let Some(to_responder) = self.state.derive_one_time(&responder, &ctx, self.spec) else {
            return;
        };
        let masked = xor_combine(&group, &to_responder).expect("equal lengths").into_vec();
        let mut payload = masked.clone();
        if self.scheme == Scheme::A4F {
            let tag = mac_tag(&to_responder, &mac_input(&masked, setup)).expect("non-empty key");
            payload.extend_from_slice(tag.as_bytes());
        }
        io.send(&responder, EnvelopeKind::Protocol, payload);
        self.state.accept(group);
    }
}

#[derive(Clone, Debug)]
pub struct Responder {
    pub state: PartyState,
    scheme: Scheme,
    spec: KdfSpec,
    session: Option<(SetupMessage, [PartyId; 2])>,
    received: BTreeMap<PartyId, Vec<u8>>,
}

impl Responder {
    pub fn new(state: PartyState, scheme: Scheme, spec: KdfSpec) -> Self {
        Responder {
            state,
            scheme,
            spec,
            session: None,
            received: BTreeMap::new(),
        }
    }

    pub(super) fn receive(&mut self, env: &Envelope) {
        if !self.state.is_running() {
            return;
        }
        match env.kind {
            EnvelopeKind::Setup if self.session.is_none() => self.on_setup(env),
            EnvelopeKind::Protocol => {
                self.received
                    .entry(env.claimed_sender.clone())
                    .or_insert_with(|| env.payload.clone());
            }
            _ => {}
        }
        self.try_conclude();
    }

    fn on_setup(&mut self, env: &Envelope) {
        let Some(setup) = SetupMessage::decode(&env.payload).filter(|s| s.scheme == self.scheme)
        else {
            self.state.reject(RejectCause::MalformedSetup);
            return;
        };
        let me = self.state.id.clone();
        let Some((initiators, _)) = roles(&setup).filter(|(_, r)| *r == me) else {
            self.state.reject(RejectCause::NotAParticipant);
            return;
        };
        if !self.state.use_nonce(&setup.nonce) {
            return;
        }
        self.state.believed_peers = super::expected_peers(&setup, &me);
        let ctx = setup.otk_context();
        for i in &initiators {
            if self.state.derive_one_time(i, &ctx, self.spec).is_none() {
                return;
            }
        }
        self.session = Some((setup, initiators));
    }

    fn try_conclude(&mut self) {
        if !self.state.is_running() {
            return;
        }
        let Some((setup, initiators)) = &self.session else {
            return;
        };
        let (Some(first), Some(second)) = (
            self.received.get(&initiators[0]),
            self.received.get(&initiators[1]),
        ) else {
            return;
        };
        let len = self.spec.output_length;
        let want = if self.scheme == Scheme::A4F { len + TAG_BYTES } else { len };
        if first.len() != want || second.len() != want {
            self.state.reject(RejectCause::LengthMismatch);
            return;
        }
        let mut candidates = Vec::with_capacity(2);
        for (payload, initiator) in [(first, &initiators[0]), (second, &initiators[1])] {
            let one_time = &self.state.one_time_keys[initiator];
            let masked = &payload[..len];
            if self.scheme == Scheme::A4F {
                let tag = Tag::from_slice(&payload[len..]).expect("length checked");
                if !mac_verify(one_time, &mac_input(masked, setup), &tag) {
                    self.state.reject(RejectCause::AuthFailure);
                    return;
                }
            }
            candidates.push(xor_combine(&KeyBytes::from(masked), one_time).expect("checked"));
        }
        // KeyBytes equality is constant-time.
        if candidates[0] == candidates[1] {
            let key = candidates.swap_remove(0);
            self.state.accept(key);
        } else {
            self.state.reject(RejectCause::ConsistencyMismatch);
        }
    }
}
