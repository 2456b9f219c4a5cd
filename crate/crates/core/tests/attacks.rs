use proptest::prelude::*;

use kdfxor_core::attacks::{run_attack, AttackId};
use kdfxor_core::audit::{audit_text, encode_records};
use kdfxor_core::crypto::xor_combine;
use kdfxor_core::protocols::{RejectCause, Scheme, Status};
use kdfxor_core::PartyId;

fn p(s: &str) -> PartyId {
    PartyId::from(s)
}

#[test]
fn mitm_against_fix_leaves_adversary_with_wrong_keys() {
    for seed in 0..20 {
        let v = run_attack(AttackId::ATK_A1_MITM, Scheme::A1F, seed).unwrap();
        assert!(!v.success);
        let k1 = &v.evidence.adversary_knowledge["key1"];
        assert_ne!(v.records[0].key_of(&p("A")), Some(k1));
        assert_eq!(v.evidence.details["relay_delivered_undetected"], "false");
    }
}

#[test]
fn idconf_against_three_party_scheme() {
    let v = run_attack(AttackId::ATK_A3_IDCONF, Scheme::A3_3, 8).unwrap();
    assert!(v.success);
    let rec = &v.records[0];
    let c = rec.party(&p("C")).unwrap();
    assert_eq!(c.believed_peers, [p("A"), p("B")].into_iter().collect());
    assert_eq!(rec.key_of(&p("C")), rec.key_of(&p("D")));
}

#[test]
fn attack_transcripts_roundtrip_through_the_auditor() {
    for id in AttackId::ALL {
        for target in id.targets() {
            let v = run_attack(id, target, 123).unwrap();
            let text = encode_records(&v.records);
            let r = audit_text(&text).unwrap();
            assert_eq!(r.records, v.records.len());
            let held = v.evidence.conditions.iter().filter(|c| c.holds()).count();
            assert_eq!(r.claims_holding, held, "{id} vs {target}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mask_shift_is_exact(seed in any::<u64>()) {
        let v = run_attack(AttackId::ATK_A4_MASK, Scheme::A4, seed).unwrap();
        prop_assert!(v.success);
        let rec = &v.records[0];
        let m = &v.evidence.adversary_knowledge["M"];
        let want = xor_combine(rec.key_of(&p("A")).unwrap(), m).unwrap();
        prop_assert_eq!(rec.key_of(&p("C")), Some(&want));
    }

    #[test]
    fn nonce_forgery_fails_authentication_on_fix(seed in any::<u64>()) {
        let v = run_attack(AttackId::ATK_A4_NONCE, Scheme::A4F, seed).unwrap();
        let c = v.records[2].party(&p("C")).unwrap();
        prop_assert_eq!(c.status(), Status::Rejected);
        prop_assert_eq!(c.cause(), Some(&RejectCause::AuthFailure));
    }
}
