//! Deterministic message fabric with a programmable Dolev-Yao adversary.
//!
//! Envelopes are resolved strictly FIFO in send order. Before each honest
//! envelope is resolved the adversary observes a copy and picks exactly one
//! action for it; it may also inject envelopes of its own at any point, and
//! gets a chance to inject more whenever the queue drains. A run ends when
//! the queue is empty and the adversary stays idle.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::SeedStream;
use crate::PartyId;

/// Hard cap on resolved events per run.
pub const EVENT_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("unknown receiver {0}")]
    UnknownReceiver(PartyId),
    #[error("party {0} registered twice")]
    DuplicateParty(PartyId),
    #[error("livelock: more than {0} events")]
    Livelock(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EnvelopeKind {
    Setup,
    Protocol,
    Broadcast,
}

impl EnvelopeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvelopeKind::Setup => "SETUP",
            EnvelopeKind::Protocol => "PROTOCOL",
            EnvelopeKind::Broadcast => "BROADCAST",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "SETUP" => Some(EnvelopeKind::Setup),
            "PROTOCOL" => Some(EnvelopeKind::Protocol),
            "BROADCAST" => Some(EnvelopeKind::Broadcast),
            _ => None,
        }
    }
}

/// One in-flight message.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub seq: u64,
    pub true_sender: PartyId,
    /// Equal to `true_sender` for honest traffic; only injected envelopes
    /// may claim someone else.
    pub claimed_sender: PartyId,
    pub receiver: PartyId,
    pub kind: EnvelopeKind,
    pub payload: Vec<u8>,
}

/// The adversary's decision for one honest envelope.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AdversaryAction {
    Deliver,
    Drop,
    Modify(Vec<u8>),
    Redirect(PartyId),
}

/// What happened to an envelope, as recorded in the transcript.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ActionRecord {
    Deliver,
    Drop,
    Modify(Vec<u8>),
    Redirect(PartyId),
    /// The envelope was created by the adversary.
    Inject,
}

impl fmt::Display for ActionRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionRecord::Deliver => f.write_str("DELIVER"),
            ActionRecord::Drop => f.write_str("DROP"),
            ActionRecord::Modify(p) => write!(f, "MODIFY:{}", hex::encode(p)),
            ActionRecord::Redirect(to) => write!(f, "REDIRECT:{to}"),
            ActionRecord::Inject => f.write_str("INJECT"),
        }
    }
}

impl ActionRecord {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "DELIVER" => Some(ActionRecord::Deliver),
            "DROP" => Some(ActionRecord::Drop),
            "INJECT" => Some(ActionRecord::Inject),
            _ => {
                if let Some(h) = s.strip_prefix("MODIFY:") {
                    hex::decode(h).ok().map(ActionRecord::Modify)
                } else {
                    s.strip_prefix("REDIRECT:")
                        .map(|to| ActionRecord::Redirect(PartyId::from(to)))
                }
            }
        }
    }
}

/// Outbound message queued by a party.
#[derive(Clone, Debug)]
struct Outgoing {
    receiver: Option<PartyId>,
    kind: EnvelopeKind,
    payload: Vec<u8>,
}

/// A party's handle on the network during one callback.
pub struct Io<'a> {
    outbox: &'a mut Vec<Outgoing>,
    rng: &'a mut SeedStream,
}

impl Io<'_> {
    pub fn send(&mut self, to: &PartyId, kind: EnvelopeKind, payload: Vec<u8>) {
        self.outbox.push(Outgoing {
            receiver: Some(to.clone()),
            kind,
            payload,
        });
    }

    /// One `BROADCAST` envelope to every other registered party.
    pub fn broadcast(&mut self, payload: Vec<u8>) {
        self.outbox.push(Outgoing {
            receiver: None,
            kind: EnvelopeKind::Broadcast,
            payload,
        });
    }

    pub fn rng(&mut self) -> &mut SeedStream {
        self.rng
    }
}

/// A message-driven participant.
pub trait Party {
    fn id(&self) -> &PartyId;

    /// Called once, in registration order, when the run begins.
    fn start(&mut self, _io: &mut Io<'_>) {}

    fn receive(&mut self, env: &Envelope, io: &mut Io<'_>);

    /// Called once at quiescence.
    fn finish(&mut self) {}
}

/// Envelope creation handle for the adversary.
pub struct Injector<'a> {
    adversary: &'a PartyId,
    created: &'a mut Vec<Envelope>,
}

impl Injector<'_> {
    pub fn inject(
        &mut self,
        claimed_sender: &PartyId,
        receiver: &PartyId,
        kind: EnvelopeKind,
        payload: Vec<u8>,
    ) {
        self.created.push(Envelope {
            seq: 0,
            true_sender: self.adversary.clone(),
            claimed_sender: claimed_sender.clone(),
            receiver: receiver.clone(),
            kind,
            payload,
        });
    }
}

/// A network attacker. The adversary sees every envelope in full before it
/// is resolved and may delete, modify, redirect or inject messages; it
/// cannot see party state.
pub trait Adversary {
    fn id(&self) -> &PartyId;

    /// Receives a copy of every honest envelope before the decision.
    fn observe(&mut self, _env: &Envelope) {}

    fn decide(&mut self, _env: &Envelope, _inject: &mut Injector<'_>) -> AdversaryAction {
        AdversaryAction::Deliver
    }

    /// Called whenever the queue is empty. Injecting here keeps the run alive.
    fn idle(&mut self, _inject: &mut Injector<'_>) {}

    /// Delivery of an envelope addressed to the adversary's own identity.
    fn receive(&mut self, _env: &Envelope) {}
}

/// Delivers everything and records what it saw. Its identity is `EVE`.
#[derive(Debug, Clone)]
pub struct Passive {
    id: PartyId,
    pub observed: Vec<Envelope>,
}

impl Passive {
    pub fn new() -> Self {
        Passive {
            id: PartyId::from("EVE"),
            observed: Vec::new(),
        }
    }
}

impl Default for Passive {
    fn default() -> Self {
        Self::new()
    }
}

impl Adversary for Passive {
    fn id(&self) -> &PartyId {
        &self.id
    }

    fn observe(&mut self, env: &Envelope) {
        self.observed.push(env.clone());
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranscriptEvent {
    pub envelope: Envelope,
    pub action: ActionRecord,
    pub delivered: bool,
}

impl TranscriptEvent {
    /// The receiver that actually got the envelope, if any.
    pub fn final_receiver(&self) -> Option<&PartyId> {
        match &self.action {
            ActionRecord::Drop => None,
            ActionRecord::Redirect(to) => Some(to),
            _ => Some(&self.envelope.receiver),
        }
    }

    /// The payload the final receiver saw, if any.
    pub fn delivered_payload(&self) -> Option<&[u8]> {
        match &self.action {
            ActionRecord::Drop => None,
            ActionRecord::Modify(p) => Some(p),
            _ => Some(&self.envelope.payload),
        }
    }

    pub fn is_injected(&self) -> bool {
        self.action == ActionRecord::Inject
    }
}

/// One line of the JSON Lines export.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLine {
    pub seq: u64,
    pub true_sender: String,
    pub claimed_sender: String,
    pub receiver: String,
    pub kind: String,
    pub payload_hex: String,
    pub action: String,
    pub delivered: bool,
}

impl From<&TranscriptEvent> for EventLine {
    fn from(e: &TranscriptEvent) -> Self {
        EventLine {
            seq: e.envelope.seq,
            true_sender: e.envelope.true_sender.to_string(),
            claimed_sender: e.envelope.claimed_sender.to_string(),
            receiver: e.envelope.receiver.to_string(),
            kind: e.envelope.kind.as_str().to_owned(),
            payload_hex: hex::encode(&e.envelope.payload),
            action: e.action.to_string(),
            delivered: e.delivered,
        }
    }
}

impl EventLine {
    pub fn to_event(&self) -> Option<TranscriptEvent> {
        Some(TranscriptEvent {
            envelope: Envelope {
                seq: self.seq,
                true_sender: PartyId::from(self.true_sender.as_str()),
                claimed_sender: PartyId::from(self.claimed_sender.as_str()),
                receiver: PartyId::from(self.receiver.as_str()),
                kind: EnvelopeKind::parse(&self.kind)?,
                payload: hex::decode(&self.payload_hex).ok()?,
            },
            action: ActionRecord::parse(&self.action)?,
            delivered: self.delivered,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrafficStats {
    pub sent: usize,
    pub injected: usize,
    pub delivered: usize,
    pub dropped: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transcript {
    pub scheme: String,
    pub seed: u64,
    pub events: Vec<TranscriptEvent>,
}

impl Transcript {
    pub fn event_lines(&self) -> Vec<EventLine> {
        self.events.iter().map(EventLine::from).collect()
    }

    /// JSON Lines, one object per event, newline terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for line in self.event_lines() {
            out.push_str(&serde_json::to_string(&line).expect("event lines serialize"));
            out.push('\n');
        }
        out
    }

    pub fn stats(&self) -> TrafficStats {
        let mut s = TrafficStats::default();
        for e in &self.events {
            if e.is_injected() {
                s.injected += 1;
            } else {
                s.sent += 1;
            }
            if e.delivered {
                s.delivered += 1;
            } else {
                s.dropped += 1;
            }
        }
        s
    }

    pub fn count(&self, kind: EnvelopeKind) -> usize {
        self.events
            .iter()
            .filter(|e| e.delivered && e.envelope.kind == kind)
            .count()
    }
}

struct Pending {
    envelope: Envelope,
    injected: bool,
}

/// A single-threaded simulator instance over parties of type `P`.
pub struct Network<P> {
    scheme: String,
    parties: Vec<P>,
    queue: VecDeque<Pending>,
    next_seq: u64,
    event_limit: usize,
}

impl<P: Party> Network<P> {
    pub fn new(scheme: impl Into<String>) -> Self {
        Network {
            scheme: scheme.into(),
            parties: Vec::new(),
            queue: VecDeque::new(),
            next_seq: 0,
            event_limit: EVENT_LIMIT,
        }
    }

    pub fn with_event_limit(mut self, limit: usize) -> Self {
        self.event_limit = limit;
        self
    }

    pub fn register(&mut self, party: P) -> Result<(), NetError> {
        if self.position(party.id()).is_some() {
            return Err(NetError::DuplicateParty(party.id().clone()));
        }
        self.parties.push(party);
        Ok(())
    }

    pub fn parties(&self) -> &[P] {
        &self.parties
    }

    pub fn party(&self, id: &PartyId) -> Option<&P> {
        self.position(id).map(|i| &self.parties[i])
    }

    pub fn into_parties(self) -> Vec<P> {
        self.parties
    }

    fn position(&self, id: &PartyId) -> Option<usize> {
        self.parties.iter().position(|p| p.id() == id)
    }

    fn check_receiver(&self, to: &PartyId, adversary: &PartyId) -> Result<(), NetError> {
        if self.position(to).is_some() || to == adversary {
            Ok(())
        } else {
            Err(NetError::UnknownReceiver(to.clone()))
        }
    }

    fn enqueue(&mut self, mut envelope: Envelope, injected: bool) {
        envelope.seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push_back(Pending { envelope, injected });
    }

    fn enqueue_outgoing(
        &mut self,
        sender: &PartyId,
        outbox: Vec<Outgoing>,
        adversary: &PartyId,
    ) -> Result<(), NetError> {
        for out in outbox {
            let receivers: Vec<PartyId> = match out.receiver {
                Some(to) => {
                    self.check_receiver(&to, adversary)?;
                    vec![to]
                }
                None => self
                    .parties
                    .iter()
                    .map(|p| p.id().clone())
                    .filter(|id| id != sender)
                    .collect(),
            };
            for receiver in receivers {
                self.enqueue(
                    Envelope {
                        seq: 0,
                        true_sender: sender.clone(),
                        claimed_sender: sender.clone(),
                        receiver,
                        kind: out.kind,
                        payload: out.payload.clone(),
                    },
                    false,
                );
            }
        }
        Ok(())
    }

    fn enqueue_injected(
        &mut self,
        created: Vec<Envelope>,
        adversary: &PartyId,
    ) -> Result<(), NetError> {
        for env in created {
            self.check_receiver(&env.receiver, adversary)?;
            self.enqueue(env, true);
        }
        Ok(())
    }

    fn deliver(
        &mut self,
        env: &Envelope,
        rng: &mut SeedStream,
        adversary: &mut dyn Adversary,
    ) -> Result<(), NetError> {
        let adv_id = adversary.id().clone();
        match self.position(&env.receiver) {
            Some(i) => {
                let mut outbox = Vec::new();
                let mut io = Io {
                    outbox: &mut outbox,
                    rng,
                };
                self.parties[i].receive(env, &mut io);
                let sender = self.parties[i].id().clone();
                self.enqueue_outgoing(&sender, outbox, &adv_id)
            }
            None => {
                adversary.receive(env);
                Ok(())
            }
        }
    }

    /// Starts every party, resolves events until quiescence, then finishes
    /// every party.
    pub fn run_until_quiescent(
        &mut self,
        rng: &mut SeedStream,
        adversary: &mut dyn Adversary,
    ) -> Result<Transcript, NetError> {
        let adv_id = adversary.id().clone();
        if self.position(&adv_id).is_some() {
            return Err(NetError::DuplicateParty(adv_id));
        }
        let mut events = Vec::new();
        for i in 0..self.parties.len() {
            let mut outbox = Vec::new();
            let mut io = Io {
                outbox: &mut outbox,
                rng,
            };
            self.parties[i].start(&mut io);
            let sender = self.parties[i].id().clone();
            self.enqueue_outgoing(&sender, outbox, &adv_id)?;
        }

        loop {
            while let Some(Pending { envelope, injected }) = self.queue.pop_front() {
                if events.len() >= self.event_limit {
                    return Err(NetError::Livelock(self.event_limit));
                }
                if injected {
                    self.deliver(&envelope, rng, adversary)?;
                    events.push(TranscriptEvent {
                        envelope,
                        action: ActionRecord::Inject,
                        delivered: true,
                    });
                    continue;
                }

                let copy = envelope.clone();
                adversary.observe(&copy);
                let mut created = Vec::new();
                let action = adversary.decide(
                    &copy,
                    &mut Injector {
                        adversary: &adv_id,
                        created: &mut created,
                    },
                );
                self.enqueue_injected(created, &adv_id)?;

                let (record, delivered) = match action {
                    AdversaryAction::Deliver => {
                        self.deliver(&envelope, rng, adversary)?;
                        (ActionRecord::Deliver, true)
                    }
                    AdversaryAction::Drop => (ActionRecord::Drop, false),
                    AdversaryAction::Modify(payload) => {
                        let mut altered = envelope.clone();
                        altered.payload = payload.clone();
                        self.deliver(&altered, rng, adversary)?;
                        (ActionRecord::Modify(payload), true)
                    }
                    AdversaryAction::Redirect(to) => {
                        self.check_receiver(&to, &adv_id)?;
                        let mut altered = envelope.clone();
                        altered.receiver = to.clone();
                        self.deliver(&altered, rng, adversary)?;
                        (ActionRecord::Redirect(to), true)
                    }
                };
                events.push(TranscriptEvent {
                    envelope,
                    action: record,
                    delivered,
                });
            }

            let mut created = Vec::new();
            adversary.idle(&mut Injector {
                adversary: &adv_id,
                created: &mut created,
            });
            if created.is_empty() {
                break;
            }
            self.enqueue_injected(created, &adv_id)?;
        }

        for p in &mut self.parties {
            p.finish();
        }
        Ok(Transcript {
            scheme: self.scheme.clone(),
            seed: rng.seed(),
            events,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{xor_combine, KeyBytes};

    /// Sends its script at start and keeps everything it receives.
    struct Scripted {
        id: PartyId,
        script: Vec<(Option<&'static str>, Vec<u8>)>,
        inbox: Vec<Envelope>,
        finished: bool,
    }

    impl Scripted {
        fn new(id: &str, script: Vec<(Option<&'static str>, Vec<u8>)>) -> Self {
            Scripted {
                id: PartyId::from(id),
                script,
                inbox: Vec::new(),
                finished: false,
            }
        }
    }

    impl Party for Scripted {
        fn id(&self) -> &PartyId {
            &self.id
        }
        fn start(&mut self, io: &mut Io<'_>) {
            for (to, payload) in self.script.drain(..) {
                match to {
                    Some(to) => io.send(&PartyId::from(to), EnvelopeKind::Protocol, payload),
                    None => io.broadcast(payload),
                }
            }
        }
        fn receive(&mut self, env: &Envelope, _io: &mut Io<'_>) {
            self.inbox.push(env.clone());
        }
        fn finish(&mut self) {
            self.finished = true;
        }
    }

    /// Echoes every message back forever.
    struct Echo(PartyId, Option<&'static str>);

    impl Party for Echo {
        fn id(&self) -> &PartyId {
            &self.0
        }
        fn start(&mut self, io: &mut Io<'_>) {
            if let Some(to) = self.1 {
                io.send(&PartyId::from(to), EnvelopeKind::Protocol, vec![0]);
            }
        }
        fn receive(&mut self, env: &Envelope, io: &mut Io<'_>) {
            io.send(&env.true_sender, EnvelopeKind::Protocol, env.payload.clone());
        }
    }

    struct DropAll(PartyId);

    impl Adversary for DropAll {
        fn id(&self) -> &PartyId {
            &self.0
        }
        fn decide(&mut self, _env: &Envelope, _i: &mut Injector<'_>) -> AdversaryAction {
            AdversaryAction::Drop
        }
    }

    struct Masker(PartyId, KeyBytes);

    impl Adversary for Masker {
        fn id(&self) -> &PartyId {
            &self.0
        }
        fn decide(&mut self, env: &Envelope, _i: &mut Injector<'_>) -> AdversaryAction {
            let masked = xor_combine(&KeyBytes::new(env.payload.clone()), &self.1).unwrap();
            AdversaryAction::Modify(masked.into_vec())
        }
    }

    fn two_party(payload: Vec<u8>) -> Network<Scripted> {
        let mut net = Network::new("TEST");
        net.register(Scripted::new("A", vec![(Some("B"), payload)])).unwrap();
        net.register(Scripted::new("B", vec![])).unwrap();
        net
    }

    #[test]
    fn passive_delivery_is_bit_exact() {
        let mut net = two_party(vec![1, 2, 3]);
        let mut adv = Passive::new();
        let t = net.run_until_quiescent(&mut SeedStream::new(1), &mut adv).unwrap();
        let b = net.party(&"B".into()).unwrap();
        assert_eq!(b.inbox.len(), 1);
        assert_eq!(b.inbox[0].payload, vec![1, 2, 3]);
        assert_eq!(adv.observed.len(), 1);
        assert_eq!(t.events[0].action, ActionRecord::Deliver);
        assert!(net.parties().iter().all(|p| p.finished));
    }

    #[test]
    fn drop_all_leaves_inbox_empty() {
        let mut net = two_party(vec![1, 2, 3]);
        let t = net
            .run_until_quiescent(&mut SeedStream::new(1), &mut DropAll("E".into()))
            .unwrap();
        assert!(net.party(&"B".into()).unwrap().inbox.is_empty());
        assert_eq!(t.events[0].action, ActionRecord::Drop);
        assert!(!t.events[0].delivered);
    }

    #[test]
    fn modify_with_xor_mask() {
        let payload = KeyBytes::new((0u8..16).collect());
        let mask = KeyBytes::new(vec![0x5a; 16]);
        let mut net = two_party(payload.as_bytes().to_vec());
        let t = net
            .run_until_quiescent(&mut SeedStream::new(1), &mut Masker("E".into(), mask.clone()))
            .unwrap();
        let seen = &net.party(&"B".into()).unwrap().inbox[0].payload;
        assert_eq!(seen, xor_combine(&payload, &mask).unwrap().as_bytes());
        // The transcript keeps the original payload; the action carries the new one.
        assert_eq!(t.events[0].envelope.payload, payload.as_bytes());
        assert_eq!(t.events[0].delivered_payload().unwrap(), &seen[..]);
    }

    #[test]
    fn empty_scenario_has_empty_transcript() {
        let mut net: Network<Scripted> = Network::new("EMPTY");
        let t = net
            .run_until_quiescent(&mut SeedStream::new(0), &mut Passive::new())
            .unwrap();
        assert!(t.events.is_empty());
        assert_eq!(t.to_jsonl(), "");
    }

    #[test]
    fn broadcast_fans_out_per_recipient() {
        let mut net = Network::new("BC");
        net.register(Scripted::new("A", vec![(None, vec![7])])).unwrap();
        net.register(Scripted::new("B", vec![])).unwrap();
        net.register(Scripted::new("C", vec![])).unwrap();
        let mut adv = Passive::new();
        let t = net.run_until_quiescent(&mut SeedStream::new(0), &mut adv).unwrap();
        assert_eq!(adv.observed.len(), 2);
        assert_eq!(t.count(EnvelopeKind::Broadcast), 2);
        let receivers: Vec<_> = adv.observed.iter().map(|e| e.receiver.as_str()).collect();
        assert_eq!(receivers, ["B", "C"]);
    }

    #[test]
    fn unknown_receiver_is_a_configuration_error() {
        let mut net = Network::new("X");
        net.register(Scripted::new("A", vec![(Some("Z"), vec![])])).unwrap();
        assert_eq!(
            net.run_until_quiescent(&mut SeedStream::new(0), &mut Passive::new()),
            Err(NetError::UnknownReceiver("Z".into()))
        );
        let mut net = Network::new("X");
        net.register(Scripted::new("A", vec![])).unwrap();
        assert_eq!(
            net.register(Scripted::new("A", vec![])),
            Err(NetError::DuplicateParty("A".into()))
        );
    }

    #[test]
    fn livelock_guard_trips() {
        let mut net = Network::new("PINGPONG");
        net.register(Echo("A".into(), Some("B"))).unwrap();
        net.register(Echo("B".into(), None)).unwrap();
        assert_eq!(
            net.run_until_quiescent(&mut SeedStream::new(0), &mut Passive::new()),
            Err(NetError::Livelock(EVENT_LIMIT))
        );
    }

    struct Forger {
        id: PartyId,
        fired: bool,
    }

    impl Adversary for Forger {
        fn id(&self) -> &PartyId {
            &self.id
        }
        fn decide(&mut self, env: &Envelope, _i: &mut Injector<'_>) -> AdversaryAction {
            AdversaryAction::Redirect(if env.receiver.as_str() == "B" { "C".into() } else { env.receiver.clone() })
        }
        fn idle(&mut self, inject: &mut Injector<'_>) {
            if !self.fired {
                self.fired = true;
                inject.inject(&"A".into(), &"B".into(), EnvelopeKind::Setup, vec![9]);
            }
        }
    }

    #[test]
    fn injection_and_redirect_are_recorded_and_conserved() {
        let mut net = Network::new("INJ");
        net.register(Scripted::new("A", vec![(Some("B"), vec![1]), (Some("C"), vec![2])]))
            .unwrap();
        net.register(Scripted::new("B", vec![])).unwrap();
        net.register(Scripted::new("C", vec![])).unwrap();
        let mut adv = Forger { id: "E".into(), fired: false };
        let t = net.run_until_quiescent(&mut SeedStream::new(0), &mut adv).unwrap();
        assert_eq!(net.party(&"C".into()).unwrap().inbox.len(), 2);
        let b = &net.party(&"B".into()).unwrap().inbox;
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].claimed_sender.as_str(), "A");
        assert_eq!(b[0].true_sender.as_str(), "E");
        let s = t.stats();
        assert_eq!((s.sent, s.injected), (2, 1));
        assert_eq!(s.delivered + s.dropped, s.sent + s.injected);
        let seqs: Vec<u64> = t.events.iter().map(|e| e.envelope.seq).collect();
        assert_eq!(seqs, [0, 1, 2]);
        for e in &t.events {
            if !e.is_injected() {
                assert_eq!(e.envelope.claimed_sender, e.envelope.true_sender);
            }
        }
    }

    #[test]
    fn jsonl_round_trips_through_event_lines() {
        let mut net = two_party(vec![0xab, 0xcd]);
        let t = net
            .run_until_quiescent(&mut SeedStream::new(3), &mut Masker("E".into(), KeyBytes::new(vec![1, 1])))
            .unwrap();
        let text = t.to_jsonl();
        assert_eq!(
            text,
            "{\"seq\":0,\"true_sender\":\"A\",\"claimed_sender\":\"A\",\"receiver\":\"B\",\"kind\":\"PROTOCOL\",\"payload_hex\":\"abcd\",\"action\":\"MODIFY:aacc\",\"delivered\":true}\n"
        );
        let line: EventLine = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(line.to_event().unwrap(), t.events[0]);
    }

    #[test]
    fn same_seed_same_transcript() {
        let run = || {
            let mut net = Network::new("BC");
            net.register(Scripted::new("A", vec![(None, vec![7]), (Some("B"), vec![1])]))
                .unwrap();
            net.register(Scripted::new("B", vec![(Some("A"), vec![2])])).unwrap();
            net.run_until_quiescent(&mut SeedStream::new(9), &mut Passive::new())
                .unwrap()
                .to_jsonl()
        };
        assert_eq!(run(), run());
    }
}
