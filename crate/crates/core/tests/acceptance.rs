use std::io::Write;

use latent_price::verify::{run_battery, Scale};

#[test]
fn acceptance_criteria() {
    let ids = ["1", "2", "3", "4", "5", "6", "7", "8", "9", "10"];
    // bypass libtest capture so the report shows up in plain `cargo test`
    let report = |line: String| {
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{line}");
        let _ = out.flush();
    };
    let checks = run_battery(&ids, Scale::Full, |c| report(c.to_string())).expect("battery runs");
    assert_eq!(checks.len(), ids.len());
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.id).collect();
    report(format!("acceptance: {}/{} passed", checks.len() - failed.len(), checks.len()));
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
