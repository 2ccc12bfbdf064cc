use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_conic-psse"))
}

#[test]
fn pf_recover_on_case9_succeeds() {
    let out = bin().args(["pf-recover", "--case", "case9", "--trials", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let mut lines = stdout.lines();
    assert!(lines.next().unwrap().starts_with("trial,estimator,xi"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[1], "pf_socp");
    assert!(row[2].parse::<f64>().unwrap() < 1e-6);
}

#[test]
fn certify_reports_a_verified_certificate() {
    let out = bin().args(["certify", "--case", "case9"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("certificate verified"));
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let out = bin().args(["estimate", "--case", "/no/such/case.m"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["estimate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["estimate", "--case", "case9", "--tree", "bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compare_needs_two_estimators() {
    let out = bin().args(["compare", "--case", "case9", "--trials", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin()
        .args(["compare", "--case", "case9", "--trials", "2", "--noise-level", "0.01", "--relaxation", "psse_socp,gauss_newton"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}
