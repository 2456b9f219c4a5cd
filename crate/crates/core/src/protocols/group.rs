//! Initiator-driven group schemes: the three-party A3 scheme, its binary
//! tree extension, and their B1/B2V2 aliases.
//!
//! Parties sit in a complete binary tree in list order, the initiator at
//! index 0 and the children of index `i` at `2i+1` and `2i+2`. The
//! initiator shares a one-time key `K_i = f(L_0i, N)` with every member.
//!
//! * Stage 0 is the three-party scheme: broadcast `K_1 ⊕ K_2`; members 1
//!   and 2 recover each other's key and everyone at the top derives
//!   `G = f(K_1 ∥ K_2, "group", N)`.
//! * Stage `s ≥ 1` broadcasts `G ⊕ K_c` for every node `c` on tree level
//!   `s + 1`, concatenated in index order.
//!
//! A member at depth `d` reads the `(d-1)`-th broadcast it receives from the
//! initiator. With `n` parties there are `floor(log2 n)` stages.

use std::ops::Range;

use crate::crypto::{kdf_derive, xor_combine, KdfContext, KdfSpec, KeyBytes};
use crate::netsim::{Envelope, EnvelopeKind, Io};
use crate::PartyId;

use super::{PartyState, RejectCause, Scheme, SetupMessage, GROUP_LABEL};

/// Tree depth of list index `i`; the initiator is depth 0.
pub fn depth(i: usize) -> usize {
    (usize::BITS - 1 - (i + 1).leading_zeros()) as usize
}

/// Indices on tree level `d` for an `n`-party tree.
pub fn level(d: usize, n: usize) -> Range<usize> {
    let start = (1usize << d) - 1;
    let end = ((1usize << (d + 1)) - 1).min(n);
    start.min(n)..end
}

/// Number of broadcasts the initiator sends for `n ≥ 3` parties.
pub fn stage_count(n: usize) -> usize {
    depth(n - 1)
}

pub(crate) fn group_key(
    first: &KeyBytes,
    second: &KeyBytes,
    setup: &SetupMessage,
    spec: KdfSpec,
) -> Option<KeyBytes> {
    let ctx = KdfContext::new(GROUP_LABEL, setup.nonce.clone());
    kdf_derive(&first.concat(second), &ctx, spec).ok()
}

#[derive(Clone, Debug)]
pub struct Root {
    pub state: PartyState,
    scheme: Scheme,
    participants: Vec<PartyId>,
    spec: KdfSpec,
}

impl Root {
    pub fn new(state: PartyState, scheme: Scheme, participants: Vec<PartyId>, spec: KdfSpec) -> Self {
        Root {
            state,
            scheme,
            participants,
            spec,
        }
    }

    pub(super) fn start(&mut self, io: &mut Io<'_>) {
        let n = self.participants.len();
        let setup = SetupMessage {
            scheme: self.scheme,
            participants: self.participants.clone(),
            distributor: self.state.id.clone(),
            initiators: Vec::new(),
            nonce: io.rng().nonce(self.spec.output_length),
        };
        if !self.state.use_nonce(&setup.nonce) {
            return;
        }
        self.state.believed_peers = super::expected_peers(&setup, &self.state.id);
        let ctx = setup.otk_context();
        let mut keys = vec![KeyBytes::default()];
        for p in &self.participants[1..] {
            match self.state.derive_one_time(p, &ctx, self.spec) {
                Some(k) => keys.push(k),
                None => return,
            }
        }
        let Some(group) = group_key(&keys[1], &keys[2], &setup, self.spec) else {
            self.state.reject(RejectCause::LengthMismatch);
            return;
        };

        for p in &self.participants[1..] {
            io.send(p, EnvelopeKind::Setup, setup.encode());
        }
        io.broadcast(xor_combine(&keys[1], &keys[2]).expect("equal lengths").into_vec());
        for stage in 1..stage_count(n) {
            let mut payload = Vec::new();
            for c in level(stage + 1, n) {
                payload.extend(xor_combine(&group, &keys[c]).expect("equal lengths").into_vec());
            }
            io.broadcast(payload);
        }
        self.state.accept(group);
    }
}

#[derive(Clone, Debug)]
pub struct Member {
    pub state: PartyState,
    scheme: Scheme,
    spec: KdfSpec,
    session: Option<(SetupMessage, usize)>,
    broadcasts_seen: usize,
}

impl Member {
    pub fn new(state: PartyState, scheme: Scheme, spec: KdfSpec) -> Self {
        Member {
            state,
            scheme,
            spec,
            session: None,
            broadcasts_seen: 0,
        }
    }

    pub(super) fn receive(&mut self, env: &Envelope) {
        if !self.state.is_running() {
            return;
        }
        match env.kind {
            EnvelopeKind::Setup => self.on_setup(env),
            EnvelopeKind::Broadcast | EnvelopeKind::Protocol => self.on_broadcast(env),
        }
    }

    fn on_setup(&mut self, env: &Envelope) {
        if self.session.is_some() {
            return;
        }
        let Some(setup) = SetupMessage::decode(&env.payload)
            .filter(|s| s.scheme == self.scheme && s.participants.len() >= 3)
        else {
            self.state.reject(RejectCause::MalformedSetup);
            return;
        };
        let Some(index) = setup.participants.iter().position(|p| p == &self.state.id) else {
            self.state.reject(RejectCause::NotAParticipant);
            return;
        };
        if index == 0 {
            self.state.reject(RejectCause::NotAParticipant);
            return;
        }
        if !self.state.use_nonce(&setup.nonce) {
            return;
        }
        self.state.believed_peers = super::expected_peers(&setup, &self.state.id);
        let root = setup.participants[0].clone();
        if self
            .state
            .derive_one_time(&root, &setup.otk_context(), self.spec)
            .is_some()
        {
            self.session = Some((setup, index));
        }
    }

    fn on_broadcast(&mut self, env: &Envelope) {
        let Some((setup, index)) = &self.session else {
            self.state.reject(RejectCause::ProtocolBeforeSetup);
            return;
        };
        let root = &setup.participants[0];
        if &env.claimed_sender != root {
            return;
        }
        let stage = self.broadcasts_seen;
        self.broadcasts_seen += 1;
        let d = depth(*index);
        if stage + 1 != d {
            return;
        }
        let len = self.spec.output_length;
        let mine = self.state.one_time_keys[root].clone();
        let n = setup.participants.len();
        let payload = &env.payload;
        let group = if d == 1 {
            if payload.len() != len {
                self.state.reject(RejectCause::LengthMismatch);
                return;
            }
            let other = xor_combine(&KeyBytes::new(payload.clone()), &mine).expect("checked");
            let (first, second) = if *index == 1 { (&mine, &other) } else { (&other, &mine) };
            group_key(first, second, setup, self.spec)
        } else {
            let lvl = level(d, n);
            if payload.len() != len * lvl.len() {
                self.state.reject(RejectCause::LengthMismatch);
                return;
            }
            let slot = index - lvl.start;
            let masked = KeyBytes::from(&payload[slot * len..(slot + 1) * len]);
            xor_combine(&masked, &mine).ok()
        };
        match group {
            Some(g) => self.state.accept(g),
            None => self.state.reject(RejectCause::LengthMismatch),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_shape() {
        assert_eq!((0..8).map(depth).collect::<Vec<_>>(), [0, 1, 1, 2, 2, 2, 2, 3]);
        assert_eq!(level(1, 3), 1..3);
        assert_eq!(level(2, 4), 3..4);
        assert_eq!(level(2, 7), 3..7);
        assert_eq!(level(3, 8), 7..8);
        // Hand count: n=3 one stage, n=4..7 two, n=8 three.
        assert_eq!(
            (3..=8).map(stage_count).collect::<Vec<_>>(),
            [1, 2, 2, 2, 2, 3]
        );
    }
}
