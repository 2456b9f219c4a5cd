//! Trusted-distributor schemes: A1, A1F, A2 and the repeated-A1 group
//! variant B2V1.
//!
//! The center announces the session, derives `K_XC = f(L_XC, N)` for every
//! recipient, picks the session key `K` and sends `K ⊕ K_XC` to each
//! recipient, who unmasks it with its own copy of `K_XC`. B2V1 runs one
//! such leg per member, each with its own nonce, distributing one key.

use crate::crypto::{xor_combine, KdfSpec, KeyBytes};
use crate::netsim::{Envelope, EnvelopeKind, Io};
use crate::PartyId;

use super::{KeyChoice, PartyState, RejectCause, Scheme, SetupMessage};

#[derive(Clone, Debug)]
pub struct Center {
    pub state: PartyState,
    scheme: Scheme,
    recipients: Vec<PartyId>,
    spec: KdfSpec,
    key_choice: KeyChoice,
}

impl Center {
    pub fn new(
        state: PartyState,
        scheme: Scheme,
        recipients: Vec<PartyId>,
        spec: KdfSpec,
        key_choice: KeyChoice,
    ) -> Self {
        Center {
            state,
            scheme,
            recipients,
            spec,
            key_choice,
        }
    }

    pub(super) fn start(&mut self, io: &mut Io<'_>) {
        let len = self.spec.output_length;
        let per_leg_nonce = self.scheme == Scheme::B2V1;
        let shared = io.rng().nonce(len);
        let mut legs = Vec::with_capacity(self.recipients.len());
        for (i, r) in self.recipients.iter().enumerate() {
            let nonce = if per_leg_nonce && i > 0 {
                io.rng().nonce(len)
            } else {
                shared.clone()
            };
            let setup = SetupMessage {
                scheme: self.scheme,
                participants: self.recipients.clone(),
                distributor: self.state.id.clone(),
                initiators: Vec::new(),
                nonce,
            };
            if (i == 0 || per_leg_nonce) && !self.state.use_nonce(&setup.nonce) {
                return;
            }
            legs.push((r.clone(), setup));
        }
        self.state.believed_peers = self.recipients.iter().cloned().collect();

        let mut masks = Vec::with_capacity(legs.len());
        for (r, setup) in &legs {
            match self.state.derive_one_time(r, &setup.otk_context(), self.spec) {
                Some(k) => masks.push(k),
                None => return,
            }
        }
        let key = match &self.key_choice {
            KeyChoice::Random => io.rng().key(len),
            KeyChoice::Fixed(k) if k.len() == len => k.clone(),
            KeyChoice::Fixed(_) => {
                self.state.reject(RejectCause::LengthMismatch);
                return;
            }
            KeyChoice::EqualToFirstOneTimeKey => masks[0].clone(),
        };

        for (r, setup) in &legs {
            io.send(r, EnvelopeKind::Setup, setup.encode());
        }
        for ((r, _), mask) in legs.iter().zip(&masks) {
            let masked = xor_combine(&key, mask).expect("equal lengths");
            if masked.is_zero() {
                self.state
                    .warnings
                    .push(format!("masked value for {r} is all-zero"));
            }
            io.send(r, EnvelopeKind::Protocol, masked.into_vec());
        }
        self.state.accept(key);
    }
}

#[derive(Clone, Debug)]
pub struct Recipient {
    pub state: PartyState,
    scheme: Scheme,
    spec: KdfSpec,
    center: Option<PartyId>,
}

impl Recipient {
    pub fn new(state: PartyState, scheme: Scheme, spec: KdfSpec) -> Self {
        Recipient {
            state,
            scheme,
            spec,
            center: None,
        }
    }

    pub(super) fn receive(&mut self, env: &Envelope) {
        if !self.state.is_running() {
            return;
        }
        match env.kind {
            EnvelopeKind::Setup => self.on_setup(env),
            EnvelopeKind::Protocol => self.on_masked(env),
            EnvelopeKind::Broadcast => {}
        }
    }

    fn on_setup(&mut self, env: &Envelope) {
        if self.center.is_some() {
            return;
        }
        let Some(setup) = SetupMessage::decode(&env.payload).filter(|s| s.scheme == self.scheme)
        else {
            self.state.reject(RejectCause::MalformedSetup);
            return;
        };
        if !setup.participants.contains(&self.state.id) {
            self.state.reject(RejectCause::NotAParticipant);
            return;
        }
        if !self.state.use_nonce(&setup.nonce) {
            return;
        }
        self.state.believed_peers = super::expected_peers(&setup, &self.state.id);
        if self
            .state
            .derive_one_time(&setup.distributor, &setup.otk_context(), self.spec)
            .is_some()
        {
            self.center = Some(setup.distributor);
        }
    }

    fn on_masked(&mut self, env: &Envelope) {
        let Some(center) = &self.center else {
            self.state.reject(RejectCause::ProtocolBeforeSetup);
            return;
        };
        if &env.claimed_sender != center {
            return;
        }
        let mask = &self.state.one_time_keys[center];
        match xor_combine(&KeyBytes::new(env.payload.clone()), mask) {
            Ok(key) => self.state.accept(key),
            Err(_) => self.state.reject(RejectCause::LengthMismatch),
        }
    }
}
