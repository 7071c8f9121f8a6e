//! Runs in its own process: the injected fault is global.

use br_infill::gaussian::inject_bvn_fault;
use br_infill::verify::{run_suite, CriterionReport, Suite, VerifyOptions};

fn failing(reports: &[CriterionReport]) -> Vec<String> {
    reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.id.clone())
        .collect()
}

#[test]
fn a_small_bivariate_fault_fails_the_likelihood_suite() {
    let opts = VerifyOptions::default();
    let clean = failing(&run_suite(Suite::Likelihood, &opts));
    inject_bvn_fault(1e-6);
    let faulty = run_suite(Suite::Likelihood, &opts);
    inject_bvn_fault(0.0);
    for r in &faulty {
        println!(
            "{} {} {}",
            r.id,
            if r.passed { "PASS" } else { "FAIL" },
            r.detail
        );
    }
    let caught: Vec<String> = failing(&faulty)
        .into_iter()
        .filter(|id| !clean.contains(id))
        .collect();
    assert!(
        !caught.is_empty(),
        "fault not detected; clean failures {clean:?}"
    );
    assert!(run_suite(Suite::Numerics, &opts).iter().all(|r| r.passed));
}
