//! The frozen A1 transcript. `tests/oracles/a1_golden.py` re-derives every
//! payload in it from the TOY_MIX reference.

use kdfxor_core::audit::{audit_text, encode_record};
use kdfxor_core::crypto::KdfAlgorithm;
use kdfxor_core::protocols::{run_scheme, Scheme, SchemeConfig};

const GOLDEN: &str = include_str!("golden/a1_seed42_toy.jsonl");

#[test]
fn a1_seed_42_toy_mix_is_frozen() {
    let cfg = SchemeConfig::standard(Scheme::A1, 2, 42).with_kdf(KdfAlgorithm::ToyMix);
    let rec = run_scheme(&cfg).unwrap();
    assert_eq!(encode_record(&rec), GOLDEN);
    assert_eq!(rec.transcript.events.len(), 4);
    assert_eq!(
        rec.agreed_key().unwrap().to_hex(),
        "c5210a2de4a8d4d3b4207beb0d419072"
    );
}

#[test]
fn golden_audits_clean() {
    let r = audit_text(GOLDEN).unwrap();
    assert_eq!((r.records, r.events), (1, 4));
}
