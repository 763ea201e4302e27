//! One pass/fail line per acceptance criterion, at the stated tolerances.

use std::collections::BTreeMap;

use hmlab_core::{run_suite, sensitivity, Check, Criterion, Suite, SuiteOptions, SuiteReport};

fn describe(checks: &[&Check]) -> String {
    checks
        .iter()
        .map(|c| format!("{}={:.3e}{}{:.1e}", c.name, c.value, if c.passed { "~" } else { "!" }, c.threshold))
        .collect::<Vec<_>>()
        .join(" ")
}

#[test]
fn acceptance() {
    let opts = SuiteOptions::default();
    let mut reports: BTreeMap<Suite, SuiteReport> = BTreeMap::new();
    for suite in Suite::ALL {
        let r = run_suite(suite, &opts).unwrap_or_else(|e| panic!("{suite}: {e}"));
        reports.insert(suite, r);
    }

    let mut failed = Vec::new();
    for criterion in Criterion::ALL {
        let checks: Vec<Check> = if criterion == Criterion::Sensitivity {
            Suite::ALL
                .iter()
                .map(|&s| sensitivity(s, &opts).unwrap_or_else(|e| panic!("{s}: {e}")))
                .collect()
        } else {
            criterion.suites().iter().flat_map(|s| reports[s].checks.clone()).collect()
        };
        let bad: Vec<&Check> = checks.iter().filter(|c| !c.passed).collect();
        let ok = bad.is_empty();
        println!(
            "{} {:<15} {} checks{}",
            if ok { "PASS" } else { "FAIL" },
            criterion.name(),
            checks.len(),
            if ok { String::new() } else { format!(": {}", describe(&bad)) }
        );
        if !ok {
            failed.push(criterion.name());
        }
    }
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
