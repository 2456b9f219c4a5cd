//! Steady-state properties of the cost harness. One test so nothing else in
//! this binary competes for the core while it measures.

use kdfxor_core::bench::{compare, measure, Op};

const STEADY_TOLERANCE: f64 = 0.20;
const REPRO_FACTOR: f64 = 2.0;
const ATTEMPTS: usize = 3;

fn relative_change(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.min(b)
}

#[test]
fn batching_and_reproducibility() {
    // Measurements can be disturbed by other processes; a property holds when
    // any of a few attempts satisfies it.
    for op in [Op::XOR, Op::KDF_REFERENCE] {
        let changes: Vec<f64> = (0..ATTEMPTS)
            .map(|_| {
                let one = measure(op, 128, 50_000, 3).unwrap().ns_per_op;
                let two = measure(op, 128, 100_000, 3).unwrap().ns_per_op;
                relative_change(one, two)
            })
            .collect();
        assert!(
            changes.iter().any(|&c| c < STEADY_TOLERANCE),
            "{op:?} per-op time moved by {changes:?} when iterations doubled"
        );
    }
    let ratios: Vec<(f64, f64)> = (0..ATTEMPTS)
        .map(|_| (compare(128, 50_000, 4).unwrap().ratio, compare(128, 50_000, 4).unwrap().ratio))
        .collect();
    assert!(
        ratios.iter().any(|&(a, b)| a.max(b) / a.min(b) < REPRO_FACTOR),
        "{ratios:?}"
    );
}
