//! Mutation fuzzing of the MLT and MVT decoders. `MLT_FUZZ_SECS` sets the budget.

mod common;

use common::fuzz::{budget, fuzz, Target};

#[test]
fn mutated_inputs_never_panic() {
    let report = fuzz(budget(5), 0xF022);
    println!("execs {} accepted {} rejected {}", report.execs, report.accepted, report.rejected);
    for (target, bytes, msg) in report.crashes.iter().take(5) {
        eprintln!("{target:?} crash ({} bytes): {msg}\n{bytes:?}", bytes.len());
    }
    assert!(report.crashes.is_empty(), "{} crashes", report.crashes.len());
    assert!(report.execs > 1000);
    assert!(report.rejected > 0);
}

#[test]
fn mvt_and_mlt_inputs_are_both_seeded() {
    let seeds = common::fuzz::seed_corpus(1, 4);
    assert!(seeds.iter().any(|s| s.0 == Target::Mlt) && seeds.iter().any(|s| s.0 == Target::Mvt));
}

/// Inputs that once crashed a decoder, kept under tests/crashes/.
#[test]
fn recorded_crashes_are_rejected() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/crashes");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let target = match path.extension().and_then(|e| e.to_str()) {
            Some("mlt") => Target::Mlt,
            Some("mvt") => Target::Mvt,
            _ => continue,
        };
        let bytes = std::fs::read(&path).unwrap();
        assert!(!common::fuzz::run_one(target, &bytes), "{} accepted", path.display());
        n += 1;
    }
    assert!(n > 0);
}
