//! Reference acceptance suite: one line per criterion, then a single verdict.

use std::io::Write;

use odp_core::verify::{Reference, Suite};

#[test]
fn reference_configuration_meets_every_criterion() {
    let suite = Suite::prepare(Reference::default()).expect("reference certificate");
    // Written straight to the process stdout so the lines survive output capture.
    let mut out = std::io::stdout().lock();
    writeln!(out).unwrap();
    let reports: Vec<_> = Suite::criteria()
        .into_iter()
        .map(|(id, _)| {
            let r = suite.run(id);
            writeln!(out, "acceptance {r}").unwrap();
            r
        })
        .collect();
    let failed: Vec<usize> = reports.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    writeln!(out, "acceptance summary: {}/{} passed", reports.len() - failed.len(), reports.len()).unwrap();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
