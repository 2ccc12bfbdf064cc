//! Experiment configuration, Monte-Carlo trials and report files.
//!
//! Trial `i` draws its measurements with seed `config.seed + i`; every
//! estimator in the configuration sees the same measurement set in a trial.
//! Trials run in parallel and rows are assembled in trial order, so reports
//! are reproducible apart from the timing column.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{gauss_newton_wls, GaussNewtonConfig};
use crate::cases::load_case;
use crate::certificates::{
    build_certificate, error_bound, extend_certificate, tail_bound, verify_certificate, zeta, CertificateCheck, DualCertificate, TailBound,
};
use crate::conic::{decompose, solve};
use crate::error::{Error, Result};
use crate::measurements::{sample_measurements, MeasurementKind, MeasurementPlan, MeasurementSet, NoiseConfig};
use crate::netmodel::{build_admittance, spanning_subgraph, AdmittanceModel, EdgeSet, NetworkCase, TreeStrategy};
use crate::recovery::{rank1_from_solution, xi, RecoveryMethod};
use crate::relaxations::{assemble, check_assumption1, design_m0, AssumptionReport, M0Strategy, ObjectiveDesign, Penalty, RelaxationKind};
use crate::Complex64;

pub const EXIT_OK: i32 = 0;
pub const EXIT_SOLVER_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Cases above this size need the stress flag.
pub const STRESS_BUSES: usize = 300;

/// Penalty weight: a fixed value or `max_j |sigma_j mu_j|` from the certificate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RhoPolicy {
    Fixed(f64),
    RhoMin,
}

impl FromStr for RhoPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "rho_min" || s == "rho-min" {
            return Ok(RhoPolicy::RhoMin);
        }
        s.parse::<f64>().map(RhoPolicy::Fixed).map_err(|_| Error::Config(format!("rho must be a number or rho_min, got '{s}'")))
    }
}

impl std::fmt::Display for RhoPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RhoPolicy::Fixed(x) => write!(f, "{x}"),
            RhoPolicy::RhoMin => f.write_str("rho_min"),
        }
    }
}

impl Serialize for RhoPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RhoPolicy::Fixed(x) => s.serialize_f64(*x),
            RhoPolicy::RhoMin => s.serialize_str("rho_min"),
        }
    }
}

impl<'de> Deserialize<'de> for RhoPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(RhoPolicy::Fixed(x)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

fn default_penalty() -> Penalty {
    Penalty::WLAV
}

fn default_rho() -> RhoPolicy {
    RhoPolicy::Fixed(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorSpec {
    Conic {
        relaxation: RelaxationKind,
        #[serde(default = "default_penalty")]
        penalty: Penalty,
        #[serde(default = "default_rho")]
        rho: RhoPolicy,
        #[serde(default)]
        decompose: bool,
    },
    GaussNewton {
        #[serde(default)]
        config: GaussNewtonConfig,
    },
}

impl EstimatorSpec {
    pub fn conic(relaxation: RelaxationKind, penalty: Penalty, rho: RhoPolicy) -> Self {
        EstimatorSpec::Conic { relaxation, penalty, rho, decompose: false }
    }

    pub fn label(&self) -> String {
        match self {
            EstimatorSpec::Conic { relaxation, penalty, rho, decompose } => {
                let mut s = if relaxation.is_pf() { relaxation.to_string() } else { format!("{relaxation}:{penalty}:rho={rho}") };
                if *decompose {
                    s.push_str(":bags");
                }
                s
            }
            EstimatorSpec::GaussNewton { .. } => "gauss_newton".into(),
        }
    }
}

/// Flow measurements to take.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowPlan {
    /// From-end active flow on each branch of the spanning tree.
    #[default]
    TreeFrom,
    /// Active flow at both ends of every branch.
    AllBothEnds,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanSpec {
    pub voltage_all: bool,
    pub flows: FlowPlan,
    /// Fraction of buses, chosen uniformly per trial, with an active injection measurement.
    pub injection_fraction: f64,
    pub extra: Vec<MeasurementKind>,
}

impl Default for PlanSpec {
    fn default() -> Self {
        Self { voltage_all: true, flows: FlowPlan::TreeFrom, injection_fraction: 0.0, extra: Vec::new() }
    }
}

/// Off-diagonal support of `M0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum M0Support {
    #[default]
    Tree,
    AllBranches,
}

fn default_tree() -> TreeStrategy {
    TreeStrategy::MinWeightTree
}

fn default_m0() -> M0Strategy<f64> {
    M0Strategy::MinusSusceptance
}

fn default_estimators() -> Vec<EstimatorSpec> {
    vec![EstimatorSpec::conic(RelaxationKind::PsseSdp, Penalty::WLAV, RhoPolicy::Fixed(1.0))]
}

fn default_noise() -> NoiseConfig<f64> {
    NoiseConfig::noiseless()
}

fn default_trials() -> usize {
    1
}

fn default_tol() -> f64 {
    1e-8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Built-in case name or a path to a MATPOWER / JSON case file.
    pub case: String,
    #[serde(default = "default_tree")]
    pub tree: TreeStrategy,
    #[serde(default = "default_m0")]
    pub m0: M0Strategy<f64>,
    #[serde(default)]
    pub m0_support: M0Support,
    #[serde(default)]
    pub plan: PlanSpec,
    /// The seed inside is replaced per trial.
    #[serde(default = "default_noise")]
    pub noise: NoiseConfig<f64>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorSpec>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Threshold for the empirical tail frequency of `zeta`.
    #[serde(default)]
    pub tail_t: Option<f64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub stress: bool,
}

impl ExperimentConfig {
    pub fn new(case: &str) -> Self {
        Self {
            case: case.into(),
            tree: default_tree(),
            m0: default_m0(),
            m0_support: M0Support::Tree,
            plan: PlanSpec::default(),
            noise: default_noise(),
            estimators: default_estimators(),
            trials: 1,
            seed: 0,
            tol: default_tol(),
            tail_t: None,
            out_dir: None,
            stress: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    fn check(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trial count must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators configured".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("solver tolerance must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.plan.injection_fraction) {
            return Err(Error::Config("injection fraction outside [0, 1]".into()));
        }
        for e in &self.estimators {
            if let EstimatorSpec::Conic { rho: RhoPolicy::Fixed(r), relaxation, .. } = e {
                if !relaxation.is_pf() && !(*r > 0.0) {
                    return Err(Error::Config(format!("estimator {}: rho must be positive", e.label())));
                }
            }
        }
        self.noise.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

/// Per-configuration state shared by all trials.
pub struct Context {
    pub config: ExperimentConfig,
    pub case: NetworkCase<f64>,
    pub model: AdmittanceModel<f64>,
    pub edges: EdgeSet,
    pub design: ObjectiveDesign<f64>,
    pub v_true: Vec<Complex64>,
    pub certificate: Option<DualCertificate<f64>>,
}

impl Context {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.check()?;
        let case: NetworkCase<f64> = load_case(&config.case).map_err(|e| Error::Config(format!("case '{}': {e}", config.case)))?;
        if case.n_buses() > STRESS_BUSES && !config.stress {
            return Err(Error::Config(format!(
                "case has {} buses; runs above {STRESS_BUSES} buses need the stress flag",
                case.n_buses()
            )));
        }
        if config.stress {
            for e in &config.estimators {
                if let EstimatorSpec::Conic { relaxation, decompose: false, .. } = e {
                    if !relaxation.is_socp() {
                        log::warn!("{}: full SDP on a stress case is expensive; consider an SOCP or --decompose", e.label());
                    }
                }
            }
        }
        let model = build_admittance(&case);
        let edges = spanning_subgraph(&case, &model, &config.tree).map_err(|e| Error::Config(e.to_string()))?;
        let m0_edges = match config.m0_support {
            M0Support::Tree => edges.clone(),
            M0Support::AllBranches => EdgeSet { branches: (0..model.n_branches()).collect() },
        };
        let design = design_m0(&model, &m0_edges, config.m0.clone());
        for w in &design.warnings {
            log::warn!("{w}");
        }
        let v_true = case.voltages();
        let certificate = match build_certificate(&v_true, &design, &m0_edges, &model) {
            Ok(c) => Some(c),
            Err(e) => {
                log::warn!("no certificate for this configuration: {e}");
                None
            }
        };
        let needs_cert = config.estimators.iter().any(|e| matches!(e, EstimatorSpec::Conic { rho: RhoPolicy::RhoMin, .. }));
        if needs_cert && certificate.is_none() {
            return Err(Error::Config("rho_min requested but no certificate could be built".into()));
        }
        Ok(Self { config: config.clone(), case, model, edges, design, v_true, certificate })
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.config.seed.wrapping_add(trial as u64)
    }

    pub fn plan(&self, trial: usize) -> MeasurementPlan {
        let n = self.model.n;
        let spec = &self.config.plan;
        let mut plan = MeasurementPlan { voltage_all: spec.voltage_all, tree_flows: None, extra: Vec::new() };
        match spec.flows {
            FlowPlan::TreeFrom => plan.tree_flows = Some(self.edges.clone()),
            FlowPlan::AllBothEnds => {
                for l in 0..self.model.n_branches() {
                    plan.extra.push(MeasurementKind::PFrom(l));
                    plan.extra.push(MeasurementKind::PTo(l));
                }
            }
            FlowPlan::None => {}
        }
        let count = (spec.injection_fraction * n as f64).round() as usize;
        if count > 0 {
            // separate stream from the noise draws
            let mut rng = ChaCha8Rng::seed_from_u64(self.trial_seed(trial) ^ 0x9e37_79b9_7f4a_7c15);
            let mut buses = sample(&mut rng, n, count).into_vec();
            buses.sort_unstable();
            plan.extra.extend(buses.into_iter().map(MeasurementKind::PInj));
        }
        plan.extra.extend(spec.extra.iter().copied());
        plan
    }

    pub fn measurements(&self, trial: usize) -> Result<MeasurementSet<f64>> {
        let noise = NoiseConfig { seed: self.trial_seed(trial), ..self.config.noise.clone() };
        sample_measurements(&self.model, &self.v_true, &self.plan(trial), &noise)
    }

    /// Certificate padded to the measurement list of `ms`, if it covers it.
    pub fn certificate_for(&self, ms: &MeasurementSet<f64>) -> Option<DualCertificate<f64>> {
        self.certificate.as_ref().and_then(|c| extend_certificate(c, &ms.kinds()).ok())
    }

    pub fn run_trial(&self, trial: usize) -> Vec<TrialRow> {
        let seed = self.trial_seed(trial);
        let ms = match self.measurements(trial) {
            Ok(ms) => ms,
            Err(e) => {
                return self
                    .config
                    .estimators
                    .iter()
                    .map(|spec| TrialRow::failed(trial, seed, spec.label(), String::new(), &e))
                    .collect()
            }
        };
        let fingerprint = format!("{:016x}", ms.fingerprint());
        let cert = self.certificate_for(&ms);
        self.config
            .estimators
            .iter()
            .map(|spec| {
                let t0 = Instant::now();
                let mut row = match self.estimate(spec, &ms, cert.as_ref()) {
                    Ok(r) => r,
                    Err(e) => TrialRow::failed(trial, seed, spec.label(), fingerprint.clone(), &e),
                };
                row.trial = trial;
                row.seed = seed;
                row.estimator = spec.label();
                row.fingerprint = fingerprint.clone();
                row.f_wlav = ms.f_wlav();
                row.time_ms = t0.elapsed().as_secs_f64() * 1e3;
                row
            })
            .collect()
    }

    fn estimate(&self, spec: &EstimatorSpec, ms: &MeasurementSet<f64>, cert: Option<&DualCertificate<f64>>) -> Result<TrialRow> {
        let reference = self.case.slack();
        let mut row = TrialRow::default();
        match spec {
            EstimatorSpec::GaussNewton { config } => {
                let (est, rep) = gauss_newton_wls(ms, &self.model, reference, config, Some(&self.v_true))?;
                row.status = serde_json::to_value(rep.status)?.as_str().unwrap_or("").to_string();
                row.xi = Some(xi(&est.v, &self.v_true, reference));
                row.failed = false;
            }
            EstimatorSpec::Conic { relaxation, penalty, rho, decompose: dec } => {
                let rho_min = cert.map(|c| c.rho_min(ms)).transpose()?;
                let rho_value = match rho {
                    RhoPolicy::Fixed(r) => *r,
                    RhoPolicy::RhoMin => rho_min.ok_or_else(|| Error::Config("rho_min needs a certificate".into()))?,
                };
                let mut program = assemble(*relaxation, &self.design, ms, &self.model, rho_value, *penalty)?;
                if *dec {
                    program = decompose(&program);
                }
                let sol = solve(&program, self.config.tol)?;
                row.status = serde_json::to_value(sol.status)?.as_str().unwrap_or("").to_string();
                row.failed = !sol.status.is_solved();
                row.objective = Some(sol.objective);
                // angles come from the spanning tree, where M0 makes the relaxation tight;
                // other blocks need not be rank one once injections are measured
                let est = rank1_from_solution(&sol, &self.edges.bus_pairs(&self.model), reference)?;
                row.xi = Some(xi(&est.v, &self.v_true, reference));
                // A sparse solution whose blocks all fit one voltage vector has
                // the rank-one completion v v*; other sparse solutions get no zeta.
                let x = sol.dense().or_else(|| {
                    (est.method == RecoveryMethod::Rank1Exact).then(|| {
                        let v = DVector::from_column_slice(&est.v);
                        &v * v.adjoint()
                    })
                });
                if let Some(x) = x {
                    let (z, b) = zeta(&x, &self.v_true)?;
                    row.zeta = Some(z);
                    row.beta = Some(b);
                }
                if !relaxation.is_pf() {
                    row.rho = Some(rho_value);
                }
                if let Some(c) = cert {
                    let rep = error_bound(c, rho_value, ms)?;
                    row.lambda = Some(rep.lambda);
                    row.rho_min = Some(rep.rho_min);
                    if !relaxation.is_pf() {
                        row.zeta_max = Some(rep.zeta_max);
                    }
                }
            }
        }
        Ok(row)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub estimator: String,
    pub xi: Option<f64>,
    pub zeta: Option<f64>,
    pub zeta_max: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    pub f_wlav: f64,
    pub rho_min: Option<f64>,
    pub rho: Option<f64>,
    pub objective: Option<f64>,
    pub status: String,
    pub failed: bool,
    pub seed: u64,
    pub fingerprint: String,
    pub time_ms: f64,
}

impl TrialRow {
    pub const CSV_HEADER: &'static str =
        "trial,estimator,xi,zeta,zeta_max,beta,lambda,f_wlav,rho_min,rho,objective,status,seed,fingerprint,time_ms";

    fn failed(trial: usize, seed: u64, estimator: String, fingerprint: String, e: &Error) -> Self {
        log::warn!("trial {trial}, {estimator}: {e}");
        TrialRow { trial, seed, estimator, fingerprint, status: format!("error: {e}").replace(',', ";"), failed: true, ..Default::default() }
    }

    pub fn csv_row(&self) -> String {
        let o = |x: Option<f64>| x.map(|v| format!("{v:.10e}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{:.10e},{},{},{},{},{},{},{:.3}",
            self.trial,
            self.estimator,
            o(self.xi),
            o(self.zeta),
            o(self.zeta_max),
            o(self.beta),
            o(self.lambda),
            self.f_wlav,
            o(self.rho_min),
            o(self.rho),
            o(self.objective),
            self.status,
            self.seed,
            self.fingerprint,
            self.time_ms
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub estimator: String,
    pub column: String,
    pub count: usize,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailSummary {
    pub estimator: String,
    pub bound: TailBound,
    /// Fraction of trials with `zeta > t`.
    pub frequency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub case: String,
    pub estimators: Vec<String>,
    pub rows: Vec<TrialRow>,
    pub aggregates: Vec<Aggregate>,
    pub tail: Vec<TailSummary>,
    pub failures: usize,
}

impl EstimationReport {
    fn build(ctx: &Context, rows: Vec<TrialRow>) -> Self {
        let estimators: Vec<String> = ctx.config.estimators.iter().map(EstimatorSpec::label).collect();
        let mut aggregates = Vec::new();
        type Col = fn(&TrialRow) -> Option<f64>;
        let columns: [(&str, Col); 6] = [
            ("xi", |r| r.xi),
            ("zeta", |r| r.zeta),
            ("zeta_max", |r| r.zeta_max),
            ("beta", |r| r.beta),
            ("lambda", |r| r.lambda),
            ("f_wlav", |r| Some(r.f_wlav)),
        ];
        for est in &estimators {
            for (name, get) in columns {
                let mut vals: Vec<f64> = rows.iter().filter(|r| &r.estimator == est).filter_map(get).filter(|x| x.is_finite()).collect();
                if vals.is_empty() {
                    continue;
                }
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                aggregates.push(Aggregate { estimator: est.clone(), column: name.into(), count: vals.len(), median: median(&mut vals), mean, max });
            }
        }
        let mut tail = Vec::new();
        if let Some(t) = ctx.config.tail_t {
            for est in &estimators {
                let sel: Vec<&TrialRow> = rows.iter().filter(|r| &r.estimator == est && r.zeta.is_some()).collect();
                let (Some(first), false) = (sel.first(), sel.is_empty()) else { continue };
                let (Some(lambda), Some(_)) = (first.lambda, first.rho) else { continue };
                // the largest rho over trials gives the weakest, still valid, bound
                let rho = sel.iter().filter_map(|r| r.rho).fold(0.0, f64::max);
                let m = ctx.measurements(0).map(|ms| ms.m()).unwrap_or(0);
                let bound = tail_bound(t, m, ctx.model.n, lambda, rho);
                let frequency = sel.iter().filter(|r| r.zeta.unwrap() > t).count() as f64 / sel.len() as f64;
                tail.push(TailSummary { estimator: est.clone(), bound, frequency });
            }
        }
        let failures = rows.iter().filter(|r| r.failed).count();
        EstimationReport { case: ctx.config.case.clone(), estimators, rows, aggregates, tail, failures }
    }

    pub fn exit_code(&self) -> i32 {
        if self.failures > 0 {
            EXIT_SOLVER_FAILURE
        } else {
            EXIT_OK
        }
    }

    pub fn aggregate(&self, estimator: &str, column: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.estimator == estimator && a.column == column)
    }

    pub fn trials_csv(&self) -> String {
        let mut s = String::from(TrialRow::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("estimator,column,count,median,mean,max\n");
        for a in &self.aggregates {
            let _ = writeln!(s, "{},{},{},{:.10e},{:.10e},{:.10e}", a.estimator, a.column, a.count, a.median, a.mean, a.max);
        }
        s
    }

    /// Writes `trials.csv`, `summary.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("trials.csv"), &self.trials_csv())?;
        write_file(&dir.join("summary.csv"), &self.summary_csv())?;
        write_file(&dir.join("report.json"), &serde_json::to_string_pretty(self)?)
    }
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| Error::Io { path: parent.display().to_string(), source })?;
    }
    fs::write(path, text).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

/// Runs every trial of `config`. Configuration problems are errors raised
/// before any trial; per-trial failures are recorded in the report.
pub fn run(config: &ExperimentConfig) -> Result<EstimationReport> {
    let ctx = Context::new(config)?;
    let rows: Vec<TrialRow> = (0..config.trials).into_par_iter().flat_map_iter(|t| ctx.run_trial(t)).collect();
    let report = EstimationReport::build(&ctx, rows);
    if let Some(dir) = &config.out_dir {
        report.write(dir)?;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifyReport {
    pub case: String,
    pub m0_strategy: String,
    pub assumption: AssumptionReport,
    pub check: Option<CertificateCheck>,
    pub certificate: Option<DualCertificate<f64>>,
    /// `max_j |sigma_j mu_j|` for the trial-0 measurement set.
    pub rho_min: Option<f64>,
}

impl CertifyReport {
    pub fn pass(&self) -> bool {
        self.check.as_ref().is_some_and(CertificateCheck::pass)
    }
}

/// Builds and verifies the dual certificate at the true operating point.
pub fn certify(config: &ExperimentConfig) -> Result<CertifyReport> {
    let mut cfg = config.clone();
    cfg.estimators.retain(|e| !matches!(e, EstimatorSpec::Conic { rho: RhoPolicy::RhoMin, .. }));
    if cfg.estimators.is_empty() {
        cfg.estimators = default_estimators();
    }
    let ctx = Context::new(&cfg)?;
    let assumption = check_assumption1(&ctx.design, &ctx.model, &ctx.v_true, &ctx.design.edges)?;
    let check = ctx.certificate.as_ref().map(|c| verify_certificate(c, &ctx.v_true));
    let rho_min = match &ctx.certificate {
        Some(_) => ctx.certificate_for(&ctx.measurements(0)?).map(|c| c.rho_min(&ctx.measurements(0)?)).transpose()?,
        None => None,
    };
    let report = CertifyReport {
        case: config.case.clone(),
        m0_strategy: ctx.design.strategy.name().to_string(),
        assumption,
        check,
        certificate: ctx.certificate.clone(),
        rho_min,
    };
    if let Some(dir) = &config.out_dir {
        write_file(&dir.join("certificate.json"), &serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub estimator: String,
    pub mean_xi: f64,
    pub median_xi: f64,
    pub max_xi: f64,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub report: EstimationReport,
    pub table: Vec<ComparisonRow>,
}

impl ComparisonReport {
    pub fn row(&self, estimator: &str) -> Option<&ComparisonRow> {
        self.table.iter().find(|r| r.estimator == estimator)
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("estimator,mean_xi,median_xi,max_xi,failures\n");
        for r in &self.table {
            let _ = writeln!(s, "{},{:.10e},{:.10e},{:.10e},{}", r.estimator, r.mean_xi, r.median_xi, r.max_xi, r.failures);
        }
        s
    }
}

/// Paired comparison: all estimators see identical measurement sets per
/// trial, which is verified through the measurement fingerprints.
pub fn compare(config: &ExperimentConfig) -> Result<ComparisonReport> {
    if config.estimators.len() < 2 {
        return Err(Error::Config("compare needs at least two estimators".into()));
    }
    let report = run(&ExperimentConfig { out_dir: None, ..config.clone() })?;
    for t in 0..config.trials {
        let mut prints = report.rows.iter().filter(|r| r.trial == t).map(|r| &r.fingerprint);
        if let Some(first) = prints.next() {
            if prints.any(|p| p != first) {
                return Err(Error::Estimator(format!("trial {t}: estimators saw different measurement sets")));
            }
        }
    }
    let table = report
        .estimators
        .iter()
        .map(|e| {
            let mut xs: Vec<f64> = report.rows.iter().filter(|r| &r.estimator == e).filter_map(|r| r.xi).collect();
            let mean = xs.iter().sum::<f64>() / xs.len().max(1) as f64;
            let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            ComparisonRow {
                estimator: e.clone(),
                mean_xi: mean,
                median_xi: median(&mut xs),
                max_xi: max,
                failures: report.rows.iter().filter(|r| &r.estimator == e && r.failed).count(),
            }
        })
        .collect();
    let out = ComparisonReport { report, table };
    if let Some(dir) = &config.out_dir {
        out.report.write(dir)?;
        write_file(&dir.join("comparison.csv"), &out.csv())?;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fraction: f64,
    pub estimator: String,
    pub mean_xi: f64,
    pub median_xi: f64,
    pub failures: usize,
}

/// Repeats the experiment with active injection measurements on the given
/// fractions of buses.
pub fn sweep(config: &ExperimentConfig, fractions: &[f64]) -> Result<Vec<SweepPoint>> {
    if fractions.is_empty() {
        return Err(Error::Config("sweep needs at least one fraction".into()));
    }
    let mut points = Vec::new();
    for &f in fractions {
        let mut cfg = ExperimentConfig { out_dir: None, ..config.clone() };
        cfg.plan.injection_fraction = f;
        let report = run(&cfg)?;
        for e in &report.estimators {
            let mut xs: Vec<f64> = report.rows.iter().filter(|r| &r.estimator == e).filter_map(|r| r.xi).collect();
            points.push(SweepPoint {
                fraction: f,
                estimator: e.clone(),
                mean_xi: xs.iter().sum::<f64>() / xs.len().max(1) as f64,
                median_xi: median(&mut xs),
                failures: report.rows.iter().filter(|r| &r.estimator == e && r.failed).count(),
            });
        }
    }
    if let Some(dir) = &config.out_dir {
        let mut s = String::from("fraction,estimator,mean_xi,median_xi,failures\n");
        for p in &points {
            let _ = writeln!(s, "{},{},{:.10e},{:.10e},{}", p.fraction, p.estimator, p.mean_xi, p.median_xi, p.failures);
        }
        write_file(&dir.join("sweep.csv"), &s)?;
    }
    Ok(points)
}
