use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use conic_psse::harness::{self, EstimatorSpec, ExperimentConfig, RhoPolicy, EXIT_CONFIG, EXIT_OK, EXIT_SOLVER_FAILURE};
use conic_psse::netmodel::TreeStrategy;
use conic_psse::relaxations::{Penalty, RelaxationKind};
use conic_psse::Error;

#[derive(Parser)]
#[command(name = "conic-psse", version, about = "Conic relaxations for power flow recovery and state estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Built-in case name (tb2, tb3, case9, case14, case30, case57, case118) or case file path.
    #[arg(long, global = true)]
    case: Option<String>,
    /// JSON experiment configuration; flags given on the command line override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Proportional noise level c.
    #[arg(long, global = true)]
    noise_level: Option<f64>,
    /// Penalty weight: a number or rho_min.
    #[arg(long, global = true)]
    rho: Option<RhoPolicy>,
    /// Comma-separated penalties: wlav, wls, nuclear, none, or fit+regularizer.
    #[arg(long, global = true, value_delimiter = ',')]
    penalty: Vec<Penalty>,
    /// Comma-separated estimators: pf_sdp, pf_socp, psse_sdp, psse_socp, gauss_newton.
    #[arg(long, global = true, value_delimiter = ',')]
    relaxation: Vec<String>,
    /// Measurement tree: min_weight_tree or full_graph.
    #[arg(long, global = true)]
    tree: Option<String>,
    /// Split the PSD constraint over the bags of a chordal extension.
    #[arg(long, global = true)]
    decompose: bool,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Allow cases above 300 buses.
    #[arg(long, global = true)]
    stress: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Noiseless power flow recovery through an exact relaxation.
    PfRecover,
    /// Penalized state estimation over Monte-Carlo trials.
    Estimate,
    /// Build and verify the dual certificate at the case operating point.
    Certify,
    /// Paired comparison of two or more estimators.
    Compare,
    /// Repeat estimation for several fractions of buses with injection measurements.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6,0.8,1")]
        fractions: Vec<f64>,
    },
}

fn parse_estimators(names: &[String], penalties: &[Penalty], rho: RhoPolicy, decompose: bool) -> Result<Vec<EstimatorSpec>, Error> {
    let penalties = if penalties.is_empty() { vec![Penalty::WLAV] } else { penalties.to_vec() };
    let mut out = Vec::new();
    for name in names {
        if name == "gauss_newton" || name == "gauss-newton" {
            out.push(EstimatorSpec::GaussNewton { config: Default::default() });
            continue;
        }
        let relaxation: RelaxationKind = name.parse()?;
        if relaxation.is_pf() {
            out.push(EstimatorSpec::Conic { relaxation, penalty: Penalty::WLAV, rho, decompose });
        } else {
            for &penalty in &penalties {
                out.push(EstimatorSpec::Conic { relaxation, penalty, rho, decompose });
            }
        }
    }
    Ok(out)
}

fn build_config(common: &Common, default_relaxation: &str) -> Result<ExperimentConfig, Error> {
    let mut cfg = match (&common.config, &common.case) {
        (Some(path), _) => match ExperimentConfig::load(path) {
            Err(e @ Error::Io { .. }) => return Err(Error::Config(e.to_string())),
            other => other?,
        },
        (None, Some(case)) => ExperimentConfig::new(case),
        (None, None) => return Err(Error::Config("either --case or --config is required".into())),
    };
    if let Some(case) = &common.case {
        cfg.case = case.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.trials {
        cfg.trials = t;
    }
    if let Some(c) = common.noise_level {
        cfg.noise.level = c;
    }
    if let Some(t) = &common.tree {
        cfg.tree = match t.as_str() {
            "min_weight_tree" | "min-weight-tree" => TreeStrategy::MinWeightTree,
            "full_graph" | "full-graph" => TreeStrategy::FullGraph,
            other => return Err(Error::Config(format!("unknown tree strategy '{other}'"))),
        };
    }
    if common.stress {
        cfg.stress = true;
    }
    if let Some(d) = &common.out_dir {
        cfg.out_dir = Some(d.clone());
    }
    let touched = !common.relaxation.is_empty() || !common.penalty.is_empty() || common.rho.is_some() || common.decompose;
    if touched || common.config.is_none() {
        let names = if common.relaxation.is_empty() {
            if common.config.is_some() {
                // overlay onto the configured estimators
                cfg.estimators.iter().map(|e| match e {
                    EstimatorSpec::Conic { relaxation, .. } => relaxation.to_string(),
                    EstimatorSpec::GaussNewton { .. } => "gauss_newton".into(),
                }).collect::<Vec<_>>()
            } else {
                vec![default_relaxation.to_string()]
            }
        } else {
            common.relaxation.clone()
        };
        let mut names = names;
        names.dedup();
        cfg.estimators = parse_estimators(&names, &common.penalty, common.rho.unwrap_or(RhoPolicy::Fixed(1.0)), common.decompose)?;
    }
    Ok(cfg)
}

fn fmt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4e}")).unwrap_or_else(|| "-".into())
}

fn execute(cli: &Cli) -> Result<i32, Error> {
    match &cli.command {
        Command::PfRecover | Command::Estimate => {
            let default = if matches!(cli.command, Command::PfRecover) { "pf_socp" } else { "psse_sdp" };
            let cfg = build_config(&cli.common, default)?;
            let report = harness::run(&cfg)?;
            println!("{}", conic_psse::harness::TrialRow::CSV_HEADER);
            for r in &report.rows {
                println!("{}", r.csv_row());
            }
            for a in report.aggregates.iter().filter(|a| a.column == "xi" || a.column == "zeta") {
                eprintln!("{} {}: median {:.4e} mean {:.4e} max {:.4e}", a.estimator, a.column, a.median, a.mean, a.max);
            }
            for t in &report.tail {
                eprintln!("{}: P(zeta > {}) <= {:.4e}, observed {:.4}", t.estimator, t.bound.t, t.bound.bound, t.frequency);
            }
            Ok(report.exit_code())
        }
        Command::Certify => {
            let cfg = build_config(&cli.common, "psse_sdp")?;
            let report = harness::certify(&cfg)?;
            println!("case {} with M0 = {}", report.case, report.m0_strategy);
            for e in report.assumption.failures() {
                println!(
                    "  line {} ({}-{}): m0-y {:.3} deg, v-y {:.3} deg, v-m0 {:.3} deg",
                    e.branch, e.from, e.to, e.m0_minus_y, e.v_minus_y, e.v_minus_m0
                );
            }
            println!("assumption holds on all edges: {}", report.assumption.pass);
            match (&report.certificate, &report.check) {
                (Some(c), Some(chk)) => {
                    println!("lambda {:.6} lambda_min {:.3e} ||Hv|| {:.3e}", c.lambda, c.lambda_min, c.residual);
                    println!("psd {} null vector {} rank n-1 {}", chk.psd, chk.null_vector, chk.rank);
                    println!("rho_min {}", fmt(report.rho_min));
                    println!("certificate {}", if chk.pass() { "verified" } else { "FAILED" });
                }
                _ => println!("no certificate could be constructed"),
            }
            Ok(if report.pass() { EXIT_OK } else { EXIT_SOLVER_FAILURE })
        }
        Command::Compare => {
            let cfg = build_config(&cli.common, "psse_sdp")?;
            let cmp = harness::compare(&cfg)?;
            print!("{}", cmp.csv());
            Ok(cmp.report.exit_code())
        }
        Command::Sweep { fractions } => {
            let cfg = build_config(&cli.common, "psse_socp")?;
            let points = harness::sweep(&cfg, fractions)?;
            println!("fraction,estimator,mean_xi,median_xi,failures");
            for p in &points {
                println!("{},{},{:.6e},{:.6e},{}", p.fraction, p.estimator, p.mean_xi, p.median_xi, p.failures);
            }
            Ok(if points.iter().any(|p| p.failures > 0) { EXIT_SOLVER_FAILURE } else { EXIT_OK })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match execute(&cli) {
        Ok(code) => code,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_SOLVER_FAILURE
        }
    };
    ExitCode::from(code as u8)
}
