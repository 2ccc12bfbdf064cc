mod common;

use conic_psse::cases::load_case;
use conic_psse::certificates::{build_certificate, error_bound, verify_certificate};
use conic_psse::conic::{decompose, solve, ConeStructure, SolveStatus};
use conic_psse::harness::{self, EstimatorSpec, ExperimentConfig, RhoPolicy};
use conic_psse::measurements::{sample_measurements, MeasurementPlan, NoiseConfig};
use conic_psse::netmodel::{build_admittance, spanning_subgraph, TreeStrategy};
use conic_psse::recovery::{oracle_from_measurements, rank1_from_solution, xi, RecoveryMethod};
use conic_psse::relaxations::{assemble, check_assumption1, design_m0, M0Strategy, Penalty, RelaxationKind};

#[test]
fn noiseless_sdp_and_socp_agree_on_case14() {
    let case = load_case::<f64>("case14").unwrap();
    let model = build_admittance(&case);
    let edges = spanning_subgraph(&case, &model, &TreeStrategy::MinWeightTree).unwrap();
    let design = design_m0(&model, &edges, M0Strategy::MinusSusceptance);
    let v = case.voltages();
    let ms = sample_measurements(&model, &v, &MeasurementPlan::voltage_and_flows(&edges), &NoiseConfig::noiseless()).unwrap();
    let r = case.slack();
    let mut estimates = Vec::new();
    for kind in [RelaxationKind::PfSdp, RelaxationKind::PfSocp] {
        let prog = assemble(kind, &design, &ms, &model, 1.0, Penalty::WLAV).unwrap();
        let sol = solve(&prog, 1e-9).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let est = rank1_from_solution(&sol, &edges.bus_pairs(&model), r).unwrap();
        assert_eq!(est.method, RecoveryMethod::Rank1Exact);
        assert!(xi(&est.v, &v, r) <= 1e-6, "{kind}");
        estimates.push(est.v);
    }
    assert!(xi(&estimates[0], &estimates[1], r) <= 1e-6);
    let oracle = oracle_from_measurements(&model, &ms, &edges, r).unwrap();
    assert!(xi(&oracle.v, &v, r) <= 1e-10);
}

#[test]
fn certificate_survives_small_perturbation_of_the_operating_point() {
    let case = load_case::<f64>("case9").unwrap();
    let model = build_admittance(&case);
    let edges = spanning_subgraph(&case, &model, &TreeStrategy::MinWeightTree).unwrap();
    let design = design_m0(&model, &edges, M0Strategy::MinusSusceptance);
    let v: Vec<_> = case.voltages().iter().enumerate().map(|(k, z)| z * (1.0 + 1e-3 * k as f64)).collect();
    assert!(check_assumption1(&design, &model, &v, &edges).unwrap().pass);
    let cert = build_certificate(&v, &design, &edges, &model).unwrap();
    assert!(verify_certificate(&cert, &v).pass());
}

#[test]
fn psse_estimate_obeys_the_bound_and_decomposition_keeps_the_objective() {
    let case = load_case::<f64>("case9").unwrap();
    let model = build_admittance(&case);
    let edges = spanning_subgraph(&case, &model, &TreeStrategy::MinWeightTree).unwrap();
    let design = design_m0(&model, &edges, M0Strategy::MinusSusceptance);
    let v = case.voltages();
    let cert = build_certificate(&v, &design, &edges, &model).unwrap();
    let ms = sample_measurements(&model, &v, &MeasurementPlan::voltage_and_flows(&edges), &NoiseConfig::proportional(0.02, 11)).unwrap();
    let rho = cert.rho_min(&ms).unwrap();
    let prog = assemble(RelaxationKind::PsseSdp, &design, &ms, &model, rho, Penalty::WLAV).unwrap();
    let sol = solve(&prog, 1e-9).unwrap();
    let (z, _) = conic_psse::certificates::zeta(&sol.dense().unwrap(), &v).unwrap();
    let rep = error_bound(&cert, rho, &ms).unwrap();
    assert!(z <= rep.zeta_max + 1e-6, "{z} > {}", rep.zeta_max);

    let bags = decompose(&prog);
    let ConeStructure::PsdBags(list) = &bags.cones else { panic!("expected bags") };
    // tree-shaped sparsity: every bag is an edge
    assert!(list.iter().all(|b| b.len() == 2));
    assert_eq!(list.len(), 8);
    let d = solve(&bags, 1e-9).unwrap();
    assert!((d.objective - sol.objective).abs() <= 1e-6 * (1.0 + sol.objective.abs()));
}

#[test]
fn random_radial_networks_are_recovered_exactly() {
    let mut checked = 0;
    for seed in 0..40 {
        let case = common::random_tree_case(seed, 2 + (seed as usize % 5), seed % 2 == 0);
        let model = build_admittance(&case);
        let edges = spanning_subgraph(&case, &model, &TreeStrategy::MinWeightTree).unwrap();
        let design = design_m0(&model, &edges, M0Strategy::MinusSusceptance);
        let v = case.voltages();
        if !check_assumption1(&design, &model, &v, &edges).unwrap().pass {
            continue;
        }
        let cert = build_certificate(&v, &design, &edges, &model).unwrap();
        assert!(verify_certificate(&cert, &v).pass(), "seed {seed}");
        let ms = sample_measurements(&model, &v, &MeasurementPlan::voltage_and_flows(&edges), &NoiseConfig::noiseless()).unwrap();
        let prog = assemble(RelaxationKind::PfSdp, &design, &ms, &model, 1.0, Penalty::WLAV).unwrap();
        let sol = solve(&prog, 1e-9).unwrap();
        let est = rank1_from_solution(&sol, &edges.bus_pairs(&model), case.slack()).unwrap();
        assert!(xi(&est.v, &v, case.slack()) <= 1e-6, "seed {seed}");
        checked += 1;
    }
    assert!(checked >= 20, "only {checked} networks satisfied the angle conditions");
}

#[test]
fn replay_is_byte_identical_apart_from_timing() {
    let mut cfg = ExperimentConfig::new("case9");
    cfg.noise = NoiseConfig::proportional(0.01, 0);
    cfg.trials = 4;
    cfg.seed = 42;
    cfg.plan.injection_fraction = 0.3;
    cfg.estimators = vec![
        EstimatorSpec::conic(RelaxationKind::PsseSocp, Penalty::WLAV, RhoPolicy::RhoMin),
        EstimatorSpec::conic(RelaxationKind::PsseSdp, "wls".parse().unwrap(), RhoPolicy::Fixed(0.5)),
        EstimatorSpec::GaussNewton { config: Default::default() },
    ];
    let strip = |csv: String| -> Vec<String> {
        csv.lines().map(|l| l.rsplit_once(',').map(|(a, _)| a.to_string()).unwrap_or_default()).collect()
    };
    let a = strip(harness::run(&cfg).unwrap().trials_csv());
    let b = strip(harness::run(&cfg).unwrap().trials_csv());
    assert_eq!(a, b);
    assert_eq!(a.len(), 1 + 4 * 3);
}

#[test]
fn run_writes_reports_and_compare_pairs_measurements() {
    let dir = std::env::temp_dir().join(format!("conic-psse-{}", std::process::id()));
    let mut cfg = ExperimentConfig::new("case9");
    cfg.noise = NoiseConfig::proportional(0.01, 0);
    cfg.trials = 3;
    cfg.out_dir = Some(dir.clone());
    cfg.estimators = vec![
        EstimatorSpec::conic(RelaxationKind::PsseSocp, Penalty::WLAV, RhoPolicy::Fixed(1.0)),
        EstimatorSpec::GaussNewton { config: Default::default() },
    ];
    let cmp = harness::compare(&cfg).unwrap();
    assert_eq!(cmp.table.len(), 2);
    assert_eq!(cmp.report.exit_code(), harness::EXIT_OK);
    for t in 0..3 {
        let prints: Vec<_> = cmp.report.rows.iter().filter(|r| r.trial == t).map(|r| r.fingerprint.clone()).collect();
        assert_eq!(prints.len(), 2);
        assert_eq!(prints[0], prints[1]);
    }
    for f in ["trials.csv", "summary.csv", "report.json", "comparison.csv"] {
        assert!(dir.join(f).exists(), "{f} missing");
    }
    let header = std::fs::read_to_string(dir.join("trials.csv")).unwrap();
    assert!(header.starts_with("trial,estimator,xi,zeta,zeta_max,beta,lambda,f_wlav,rho_min,rho"));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn missing_case_fails_before_writing_anything() {
    let dir = std::env::temp_dir().join(format!("conic-psse-missing-{}", std::process::id()));
    let mut cfg = ExperimentConfig::new("/no/such/case.m");
    cfg.out_dir = Some(dir.clone());
    assert!(matches!(harness::run(&cfg), Err(conic_psse::Error::Config(_))));
    assert!(!dir.exists());
}

#[test]
fn sweep_error_shrinks_with_more_injections() {
    let mut cfg = ExperimentConfig::new("case14");
    cfg.noise = NoiseConfig::proportional(0.01, 0);
    cfg.trials = 10;
    cfg.seed = 7;
    cfg.estimators = vec![EstimatorSpec::conic(RelaxationKind::PsseSocp, Penalty::WLAV, RhoPolicy::Fixed(0.1))];
    let pts = harness::sweep(&cfg, &[0.0, 1.0]).unwrap();
    assert_eq!(pts.len(), 2);
    assert!(pts.iter().all(|p| p.failures == 0));
    assert!(pts[1].mean_xi < pts[0].mean_xi, "{} vs {}", pts[1].mean_xi, pts[0].mean_xi);
}

#[test]
fn heavy_bad_data_with_wls_does_not_stall_the_solver() {
    let cfg = ExperimentConfig::from_json(
        r#"{
            "case": "case14",
            "plan": { "injection_fraction": 0.2 },
            "noise": {
                "level": 0.01,
                "bad_data": { "mode": "uniform", "fraction": 0.1, "lo": 0.0, "hi": 2.0, "scope": "all_records" }
            },
            "estimators": [{ "kind": "conic", "relaxation": "psse_socp", "penalty": "wls+m0", "rho": 0.1 }],
            "trials": 20,
            "seed": 1
        }"#,
    )
    .unwrap();
    let report = harness::run(&cfg).unwrap();
    let failed: Vec<_> = report.rows.iter().filter(|r| r.failed).map(|r| r.trial).collect();
    assert!(failed.is_empty(), "trials {failed:?} failed");
}
