mod common;

use dpsql_core::algebra::MechanismId;
use dpsql_core::mechanisms::apply;

#[test]
fn verdicts_match_labels() {
    let cat = common::catalog();
    let mut mismatches = Vec::new();
    for q in common::queries() {
        let parsed = q.parse(&cat);
        for m in MechanismId::ALL {
            let got = apply(m, &parsed, &cat, &q.params(0.1));
            if got.is_ok() != q.labelled(m) {
                mismatches.push(format!("{} {m}: labelled {}, got {:?}", q.id, q.labelled(m), got.err().map(|e| e.reason())));
            }
        }
    }
    assert!(mismatches.is_empty(), "{}", mismatches.join("\n"));
}

#[test]
fn zero_noise_rewrites_match_oracles() {
    let cat = common::catalog();
    let db = common::database(&cat);
    let mut failures = Vec::new();
    for q in common::queries() {
        for m in MechanismId::ALL.into_iter().filter(|&m| q.labelled(m)) {
            if let Err(e) = common::check_preserved(&q, m, &cat, &db) {
                failures.push(format!("{} {m}: {e}", q.id));
            }
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}
