//! Objective design, the angle conditions for exactness, and assembly of the
//! power-flow and state-estimation conic programs.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::conic::{ConeStructure, ConicProgram, Constraint, SlackPenalty};
use crate::error::{Error, Result};
use crate::measurements::MeasurementSet;
use crate::netmodel::{AdmittanceModel, EdgeSet};
use crate::scalar::{self, Scalar};
use crate::sparse::HermitianSparse;

/// Half-width of the excluded band at open-interval boundaries, in degrees.
pub const ANGLE_GUARD_DEG: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", rename_all = "snake_case")]
pub enum M0Strategy<T: Scalar> {
    /// `M0[s,t] = -B[s,t]` on the edge set, `M0[i,i] = sum_j |B[i,j]|`.
    MinusSusceptance,
    /// `M0[s,t] = -1` on the edge set, zero diagonal.
    UnitNegative,
    Custom(HermitianSparse<T>),
}

impl<T: Scalar> M0Strategy<T> {
    pub fn name(&self) -> &'static str {
        match self {
            M0Strategy::MinusSusceptance => "minus_susceptance",
            M0Strategy::UnitNegative => "unit_negative",
            M0Strategy::Custom(_) => "custom",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ObjectiveDesign<T: Scalar> {
    pub m0: HermitianSparse<T>,
    pub strategy: M0Strategy<T>,
    pub edges: EdgeSet,
    pub warnings: Vec<String>,
}

/// Angle of `M0[s,t]` relative to the coupling admittance must lie in (-180, 0).
fn m0_condition<T: Scalar>(m0st: Complex<T>, y: Complex<T>) -> T {
    scalar::wrap_deg(scalar::deg(scalar::arg(m0st) - scalar::arg(y)))
}

fn open_interval(value: f64, lo: f64, hi: f64) -> bool {
    value > lo + ANGLE_GUARD_DEG && value < hi - ANGLE_GUARD_DEG
}

pub fn design_m0<T: Scalar>(model: &AdmittanceModel<T>, edges: &EdgeSet, strategy: M0Strategy<T>) -> ObjectiveDesign<T> {
    let n = model.n;
    let pairs = edges.bus_pairs(model);
    let m0 = match &strategy {
        M0Strategy::MinusSusceptance => {
            let mut m = HermitianSparse::zeros(n);
            for &(s, t) in &pairs {
                m.add_offdiag(s, t, Complex::new(-model.y.get(s, t).im, T::zero()));
            }
            for i in 0..n {
                let d = model.y.row(i).iter().filter(|e| e.0 != i).fold(T::zero(), |acc, e| acc + e.1.im.abs());
                m.add_diag(i, d);
            }
            m
        }
        M0Strategy::UnitNegative => {
            let mut m = HermitianSparse::zeros(n);
            for &(s, t) in &pairs {
                m.add_offdiag(s, t, Complex::new(-T::one(), T::zero()));
            }
            m
        }
        M0Strategy::Custom(m) => m.clone(),
    };

    let mut warnings = Vec::new();
    let support = m0.support();
    if support != pairs {
        warnings.push(format!(
            "off-diagonal support of M0 has {} entries but the edge set covers {} bus pairs",
            support.len(),
            pairs.len()
        ));
    }
    for &l in &edges.branches {
        let (s, t) = model.ends[l];
        let y = model.coupling(l);
        let cond = m0_condition(m0.get(s, t), y).as_f64();
        let inductive = scalar::deg(scalar::arg(y)).as_f64();
        if !open_interval(cond, -180.0, 0.0) {
            warnings.push(format!(
                "branch {l} ({s}-{t}): angle(M0) - angle(y) = {cond:.6} deg outside (-180, 0){}",
                if open_interval(inductive, -180.0, 0.0) { "" } else { " (line is not inductive)" }
            ));
        }
        let (yff, yft, _, _) = model.branch_entries(l);
        if scalar::modulus(yft + model.y_series[l]).as_f64() > 1e-9 {
            warnings.push(format!("branch {l} ({s}-{t}): tap or phase shift, angle conditions use the tap-adjusted coupling"));
        }
        let diff = (yff.re - model.y_series[l].re).abs().as_f64();
        if diff > 1e-9 {
            warnings.push(format!(
                "branch {l} ({s}-{t}): from-side flow diagonal {:.6} differs from Re(y) {:.6}",
                yff.re.as_f64(),
                model.y_series[l].re.as_f64()
            ));
        }
    }
    ObjectiveDesign { m0, strategy, edges: edges.clone(), warnings }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeCondition {
    pub branch: usize,
    pub from: usize,
    pub to: usize,
    /// `angle(M0[s,t]) - angle(y_st)`, degrees, must be in (-180, 0).
    pub m0_minus_y: f64,
    /// `angle(v_s) - angle(v_t) - angle(y_st)`, must be in (0, 180).
    pub v_minus_y: f64,
    /// `angle(v_s) - angle(v_t) - angle(M0[s,t])`, must differ from 0 and 180.
    pub v_minus_m0: f64,
    pub m0_ok: bool,
    pub v_y_ok: bool,
    pub v_m0_ok: bool,
}

impl EdgeCondition {
    pub fn pass(&self) -> bool {
        self.m0_ok && self.v_y_ok && self.v_m0_ok
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub edges: Vec<EdgeCondition>,
    pub pass: bool,
}

impl AssumptionReport {
    pub fn failures(&self) -> impl Iterator<Item = &EdgeCondition> {
        self.edges.iter().filter(|e| !e.pass())
    }
}

/// Evaluates the three angle conditions on every edge of `edges`, using the
/// branch's from-to coupling admittance and angles wrapped to (-180, 180].
pub fn check_assumption1<T: Scalar>(
    design: &ObjectiveDesign<T>,
    model: &AdmittanceModel<T>,
    v: &[Complex<T>],
    edges: &EdgeSet,
) -> Result<AssumptionReport> {
    let mut out = Vec::with_capacity(edges.len());
    for &l in &edges.branches {
        let (s, t) = model.ends[l];
        if v[s] == Complex::default() || v[t] == Complex::default() {
            return Err(Error::Assumption(format!("zero voltage at an end of branch {l} ({s}-{t})")));
        }
        let y = scalar::arg(model.coupling(l));
        let m = scalar::arg(design.m0.get(s, t));
        let dv = scalar::arg(v[s]) - scalar::arg(v[t]);
        let w = |a: T| scalar::wrap_deg(scalar::deg(a)).as_f64();
        let (m0_minus_y, v_minus_y, v_minus_m0) = (w(m - y), w(dv - y), w(dv - m));
        out.push(EdgeCondition {
            branch: l,
            from: s,
            to: t,
            m0_minus_y,
            v_minus_y,
            v_minus_m0,
            m0_ok: open_interval(m0_minus_y, -180.0, 0.0),
            v_y_ok: open_interval(v_minus_y, 0.0, 180.0),
            v_m0_ok: open_interval(v_minus_m0.abs(), 0.0, 180.0),
        });
    }
    let pass = out.iter().all(EdgeCondition::pass);
    Ok(AssumptionReport { edges: out, pass })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelaxationKind {
    PfSdp,
    PfSocp,
    PsseSdp,
    PsseSocp,
}

impl RelaxationKind {
    pub fn is_pf(self) -> bool {
        matches!(self, RelaxationKind::PfSdp | RelaxationKind::PfSocp)
    }

    pub fn is_socp(self) -> bool {
        matches!(self, RelaxationKind::PfSocp | RelaxationKind::PsseSocp)
    }
}

impl FromStr for RelaxationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "pf_sdp" => Ok(RelaxationKind::PfSdp),
            "pf_socp" => Ok(RelaxationKind::PfSocp),
            "psse_sdp" => Ok(RelaxationKind::PsseSdp),
            "psse_socp" => Ok(RelaxationKind::PsseSocp),
            _ => Err(Error::Config(format!("unknown relaxation '{s}'"))),
        }
    }
}

impl fmt::Display for RelaxationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelaxationKind::PfSdp => "pf_sdp",
            RelaxationKind::PfSocp => "pf_socp",
            RelaxationKind::PsseSdp => "psse_sdp",
            RelaxationKind::PsseSocp => "psse_socp",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFit {
    /// `sum |nu_j| / sigma_j`
    Wlav,
    /// `sum nu_j^2 / sigma_j^2`
    Wls,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    /// `Tr(M0 X)`
    M0,
    /// `Tr(X)`, which equals the nuclear norm on the PSD cone.
    Nuclear,
    None,
}

/// Objective of the estimation programs: `rho * fit(nu) + regularizer(X)`.
///
/// Serialized as its string form, e.g. `"wlav+m0"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Penalty {
    pub fit: DataFit,
    pub regularizer: Regularizer,
}

impl Penalty {
    pub const WLAV: Penalty = Penalty { fit: DataFit::Wlav, regularizer: Regularizer::M0 };
    pub const WLS: Penalty = Penalty { fit: DataFit::Wls, regularizer: Regularizer::M0 };
}

/// `wlav`, `wls` (with `M0`), `nuclear`, `none` (with WLAV fit), or the
/// explicit form `fit+regularizer`, e.g. `wls+nuclear`.
impl FromStr for Penalty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let fit = |x: &str| match x {
            "wlav" => Ok(DataFit::Wlav),
            "wls" => Ok(DataFit::Wls),
            _ => Err(Error::Config(format!("unknown data fit '{x}'"))),
        };
        let reg = |x: &str| match x {
            "m0" => Ok(Regularizer::M0),
            "nuclear" => Ok(Regularizer::Nuclear),
            "none" => Ok(Regularizer::None),
            _ => Err(Error::Config(format!("unknown regularizer '{x}'"))),
        };
        let s = s.trim().to_ascii_lowercase();
        match s.split_once('+') {
            Some((a, b)) => Ok(Penalty { fit: fit(a)?, regularizer: reg(b)? }),
            None => match s.as_str() {
                "nuclear" => Ok(Penalty { fit: DataFit::Wlav, regularizer: Regularizer::Nuclear }),
                "none" => Ok(Penalty { fit: DataFit::Wlav, regularizer: Regularizer::None }),
                other => Ok(Penalty { fit: fit(other)?, regularizer: Regularizer::M0 }),
            },
        }
    }
}

impl Serialize for Penalty {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Penalty {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Penalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fit = match self.fit {
            DataFit::Wlav => "wlav",
            DataFit::Wls => "wls",
        };
        let reg = match self.regularizer {
            Regularizer::M0 => "m0",
            Regularizer::Nuclear => "nuclear",
            Regularizer::None => "none",
        };
        write!(f, "{fit}+{reg}")
    }
}

/// Builds the conic program for `kind`.
///
/// Power-flow kinds use hard equalities `Tr(M_j X) = z_j` and objective
/// `Tr(M0 X)`; estimation kinds make every equality slackable and minimize
/// `rho * fit(nu) + regularizer(X)`. SOCP kinds keep only the 2x2 principal
/// blocks on the pairs the program references.
pub fn assemble<T: Scalar>(
    kind: RelaxationKind,
    design: &ObjectiveDesign<T>,
    measurements: &MeasurementSet<T>,
    model: &AdmittanceModel<T>,
    rho: T,
    penalty: Penalty,
) -> Result<ConicProgram<T>> {
    let n = model.n;
    if measurements.n_buses != n || design.m0.dim() != n {
        return Err(Error::Program("measurement set, design and model disagree on the bus count".into()));
    }
    let matrices = measurements.matrices(model)?;
    let observed = measurements.observed();
    let slack = !kind.is_pf();
    let constraints: Vec<Constraint<T>> = matrices
        .into_iter()
        .zip(&observed)
        .map(|(m, &z)| Constraint { matrix: m.matrix, rhs: z, slack })
        .collect();

    let (objective, slack_penalty) = if kind.is_pf() {
        (design.m0.clone(), SlackPenalty::None)
    } else {
        if rho <= T::zero() {
            return Err(Error::Program("estimation programs need rho > 0".into()));
        }
        let sig = measurements.sigmas();
        let objective = match penalty.regularizer {
            Regularizer::M0 => design.m0.clone(),
            Regularizer::Nuclear => HermitianSparse::identity(n),
            Regularizer::None => HermitianSparse::zeros(n),
        };
        let weights = match penalty.fit {
            DataFit::Wlav => SlackPenalty::Wlav(sig.iter().map(|&s| rho / s).collect()),
            DataFit::Wls => SlackPenalty::Wls(sig.iter().map(|&s| rho / (s * s)).collect()),
        };
        (objective, weights)
    };

    let mut program = ConicProgram { n, objective, penalty: slack_penalty, constraints, cones: ConeStructure::FullPsd };
    if kind.is_socp() {
        program.cones = ConeStructure::TwoByTwo(program.sparsity_edges());
    }
    program.validate()?;
    Ok(program)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::load_case;
    use crate::measurements::{sample_measurements, MeasurementPlan, NoiseConfig};
    use crate::netmodel::{build_admittance, spanning_subgraph, NetworkCase, TreeStrategy};
    use crate::scalar::polar;

    fn setup(name: &str) -> (NetworkCase<f64>, AdmittanceModel<f64>, EdgeSet) {
        let c = load_case(name).unwrap();
        let m = build_admittance(&c);
        let e = spanning_subgraph(&c, &m, &TreeStrategy::MinWeightTree).unwrap();
        (c, m, e)
    }

    #[test]
    fn tb2_unit_negative_conditions() {
        let (c, m, e) = setup("tb2");
        let d = design_m0(&m, &e, M0Strategy::UnitNegative);
        assert!(d.warnings.is_empty(), "{:?}", d.warnings);
        assert_eq!(d.m0.get(0, 1), Complex::new(-1.0, 0.0));
        let r = check_assumption1(&d, &m, &c.voltages(), &e).unwrap();
        assert!(r.pass);
        let ec = &r.edges[0];
        assert!((ec.m0_minus_y + 90.0).abs() < 1e-9);
        assert!((ec.v_minus_y - 100.0).abs() < 1e-9);
        assert!((ec.v_minus_m0 + 170.0).abs() < 1e-9);
    }

    #[test]
    fn case9_minus_susceptance_passes_every_tree_edge() {
        let (_, m, e) = setup("case9");
        let d = design_m0(&m, &e, M0Strategy::MinusSusceptance);
        for &l in &e.branches {
            let (s, t) = m.ends[l];
            let z = d.m0.get(s, t);
            assert!(z.re < 0.0 && z.im == 0.0);
            let cond = m0_condition(z, m.coupling(l));
            assert!(cond > -180.0 && cond < 0.0, "branch {l}: {cond}");
        }
        assert_eq!(d.m0.support(), e.bus_pairs(&m));
    }

    #[test]
    fn resistive_line_warns() {
        let (_, mut m, e) = setup("tb2");
        // replace the line by y = 1 (purely resistive)
        m.yf.rows[0] = vec![(0, Complex::new(1.0, 0.0)), (1, Complex::new(-1.0, 0.0))];
        m.y_series[0] = Complex::new(1.0, 0.0);
        let d = design_m0(&m, &e, M0Strategy::UnitNegative);
        assert!(d.warnings.iter().any(|w| w.contains("(-180, 0)")), "{:?}", d.warnings);
    }

    #[test]
    fn lossless_line_at_minus_95_fails() {
        let (_, m, e) = setup("tb2");
        let d = design_m0(&m, &e, M0Strategy::UnitNegative);
        let v = [polar(1.0, 0.0), polar(1.0, 95f64.to_radians())];
        let r = check_assumption1(&d, &m, &v, &e).unwrap();
        assert!(!r.pass);
        assert!((r.edges[0].v_minus_y + 5.0).abs() < 1e-9);
        assert!(!r.edges[0].v_y_ok);
    }

    #[test]
    fn boundary_of_v_minus_m0_fails() {
        let (_, m, e) = setup("tb2");
        let mut m0 = HermitianSparse::zeros(2);
        m0.add_offdiag(0, 1, Complex::new(1.0, 0.0));
        let d = design_m0(&m, &e, M0Strategy::Custom(m0));
        // angle(v1) - angle(v2) - angle(M0) = 180 exactly
        let v = [polar(1.0, 0.0), polar(1.0, std::f64::consts::PI)];
        let r = check_assumption1(&d, &m, &v, &e).unwrap();
        assert!((r.edges[0].v_minus_m0 - 180.0).abs() < 1e-9);
        assert!(!r.edges[0].v_m0_ok);
    }

    #[test]
    fn zero_voltage_is_an_error() {
        let (_, m, e) = setup("tb2");
        let d = design_m0(&m, &e, M0Strategy::UnitNegative);
        let v = [Complex::new(0.0, 0.0), polar(1.0, 0.1)];
        assert!(matches!(check_assumption1(&d, &m, &v, &e), Err(Error::Assumption(_))));
    }

    #[test]
    fn penalty_parsing() {
        assert_eq!("wlav".parse::<Penalty>().unwrap(), Penalty::WLAV);
        assert_eq!("wls".parse::<Penalty>().unwrap(), Penalty::WLS);
        assert_eq!("nuclear".parse::<Penalty>().unwrap().regularizer, Regularizer::Nuclear);
        assert_eq!("none".parse::<Penalty>().unwrap(), Penalty { fit: DataFit::Wlav, regularizer: Regularizer::None });
        let p: Penalty = "wls+nuclear".parse().unwrap();
        assert_eq!(p.to_string().parse::<Penalty>().unwrap(), p);
        assert!("huber".parse::<Penalty>().is_err());
        assert_eq!(serde_json::to_string(&p).unwrap(), "\"wls+nuclear\"");
        assert_eq!(serde_json::from_str::<Penalty>("\"nuclear\"").unwrap(), "wlav+nuclear".parse().unwrap());
        assert_eq!("psse-socp".parse::<RelaxationKind>().unwrap(), RelaxationKind::PsseSocp);
    }

    #[test]
    fn pf_socp_structure_on_tb2() {
        let (c, m, e) = setup("tb2");
        let d = design_m0(&m, &e, M0Strategy::UnitNegative);
        let z = sample_measurements(&m, &c.voltages(), &MeasurementPlan::voltage_and_flows(&e), &NoiseConfig::noiseless()).unwrap();
        let p = assemble(RelaxationKind::PfSocp, &d, &z, &m, 1.0, Penalty::WLAV).unwrap();
        assert_eq!(p.constraints.len(), 3);
        assert!(p.constraints.iter().all(|c| !c.slack));
        assert_eq!(p.cones, ConeStructure::TwoByTwo(vec![(0, 1)]));
        assert_eq!(p.penalty, SlackPenalty::None);
    }

    #[test]
    fn psse_sdp_wlav_structure_on_case9() {
        let (c, m, e) = setup("case9");
        let d = design_m0(&m, &e, M0Strategy::MinusSusceptance);
        let z = sample_measurements(&m, &c.voltages(), &MeasurementPlan::voltage_and_flows(&e), &NoiseConfig::proportional(0.01, 3))
            .unwrap();
        let p = assemble(RelaxationKind::PsseSdp, &d, &z, &m, 1.0, Penalty::WLAV).unwrap();
        assert_eq!(p.constraints.len(), 17);
        assert!(p.constraints.iter().all(|c| c.slack));
        assert_eq!(p.cones, ConeStructure::FullPsd);
        assert_eq!(p.objective, d.m0);
        match &p.penalty {
            SlackPenalty::Wlav(w) => {
                for (w, r) in w.iter().zip(&z.records) {
                    assert!((w * r.sigma - 1.0).abs() < 1e-12);
                }
            }
            other => panic!("{other:?}"),
        }
        let none = assemble(RelaxationKind::PsseSdp, &d, &z, &m, 1.0, "none".parse().unwrap()).unwrap();
        assert!(none.objective.support().is_empty() && none.objective.diagonal().all(|(_, x)| x == 0.0));
        assert!(matches!(assemble(RelaxationKind::PsseSdp, &d, &z, &m, 0.0, Penalty::WLAV), Err(Error::Program(_))));
    }
}
