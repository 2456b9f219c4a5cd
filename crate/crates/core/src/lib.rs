//! A laboratory for lightweight KDF+XOR key distribution schemes.
//!
//! The crate implements the schemes as message-driven state machines over a
//! deterministic simulated network, encodes the known attacks against them as
//! adversary strategies, checks that identity binding and message MACs stop
//! those attacks, and implements the masked-sum multiparty computations that
//! reuse the same masking idea.
//!
//! Module map:
//!
//! * [`crypto`]: keys, nonces, the pluggable KDF, XOR, MAC and the seeded stream.
//! * [`netsim`]: the message fabric and the Dolev-Yao adversary interface.
//! * [`protocols`]: scheme state machines and the scenario runner.
//! * [`attacks`]: attack strategies and verdicts.
//! * [`audit`]: an independent transcript checker.
//! * [`smpc`]: masked-sum computation over Z_n and Z_p*.
//! * [`bench`]: XOR versus KDF cost measurement.

#![forbid(unsafe_code)]

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod attacks;
pub mod audit;
pub mod bench;
pub mod crypto;
pub mod netsim;
pub mod protocols;
pub mod smpc;

/// Name of a protocol participant.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartyId(String);

impl PartyId {
    pub fn new(name: impl Into<String>) -> Self {
        PartyId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PartyId {
    fn from(s: &str) -> Self {
        PartyId(s.to_owned())
    }
}
