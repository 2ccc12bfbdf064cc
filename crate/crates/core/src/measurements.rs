//! Lifted measurement model: coefficient matrices and simulated measurement sets.
//!
//! Voltage records measure the squared magnitude `|v_k|^2`, not `|v_k|`.

use num_complex::Complex;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{AdmittanceModel, EdgeSet};
use crate::scalar::Scalar;
use crate::sparse::HermitianSparse;

/// What a measurement observes. Bus and branch indices are 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum MeasurementKind {
    VoltageSq(usize),
    PInj(usize),
    QInj(usize),
    PFrom(usize),
    PTo(usize),
    QFrom(usize),
    QTo(usize),
}

impl MeasurementKind {
    pub fn is_flow(self) -> bool {
        matches!(self, Self::PFrom(_) | Self::PTo(_) | Self::QFrom(_) | Self::QTo(_))
    }

    pub fn is_injection(self) -> bool {
        matches!(self, Self::PInj(_) | Self::QInj(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientMatrix<T: Scalar> {
    pub kind: MeasurementKind,
    pub matrix: HermitianSparse<T>,
}

/// `(1/2)(R^* e_k^T + e_k R)` for the real part of `conj(v_k) (R v)`, or
/// `(j/2)(e_k R - R^* e_k^T)` for the reactive part, where `R` is a single row.
fn row_quadratic<T: Scalar>(n: usize, k: usize, row: &[(usize, Complex<T>)], reactive: bool) -> HermitianSparse<T> {
    let mut m = HermitianSparse::zeros(n);
    let half = T::lit(0.5);
    for &(j, a) in row {
        if j == k {
            m.add_diag(k, if reactive { -a.im } else { a.re });
        } else if reactive {
            m.add_offdiag(k, j, Complex::new(-a.im * half, a.re * half));
        } else {
            m.add_offdiag(k, j, a.scale(half));
        }
    }
    m
}

pub fn build_matrix<T: Scalar>(model: &AdmittanceModel<T>, kind: MeasurementKind) -> Result<CoefficientMatrix<T>> {
    let n = model.n;
    let bus = |k: usize| {
        if k < n {
            Ok(k)
        } else {
            Err(Error::Measurement(format!("bus index {k} out of range (N = {n})")))
        }
    };
    let branch = |l: usize| {
        if l < model.n_branches() {
            Ok(l)
        } else {
            Err(Error::Measurement(format!("branch index {l} out of range (L = {})", model.n_branches())))
        }
    };
    let matrix = match kind {
        MeasurementKind::VoltageSq(k) => HermitianSparse::unit(n, bus(k)?),
        MeasurementKind::PInj(k) => row_quadratic(n, bus(k)?, model.y.row(k), false),
        MeasurementKind::QInj(k) => row_quadratic(n, bus(k)?, model.y.row(k), true),
        MeasurementKind::PFrom(l) => row_quadratic(n, model.ends[branch(l)?].0, model.yf.row(l), false),
        MeasurementKind::QFrom(l) => row_quadratic(n, model.ends[branch(l)?].0, model.yf.row(l), true),
        MeasurementKind::PTo(l) => row_quadratic(n, model.ends[branch(l)?].1, model.yt.row(l), false),
        MeasurementKind::QTo(l) => row_quadratic(n, model.ends[branch(l)?].1, model.yt.row(l), true),
    };
    Ok(CoefficientMatrix { kind, matrix })
}

/// `Tr(M v v*)`.
pub fn evaluate<T: Scalar>(m: &CoefficientMatrix<T>, v: &[Complex<T>]) -> T {
    m.matrix.quad_form(v)
}

// ---------------------------------------------------------------------------
// Noise

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BadDataScope {
    AllRecords,
    BranchFlows,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BadData {
    #[default]
    None,
    Gaussian { fraction: f64, stddev: f64, scope: BadDataScope },
    Uniform { fraction: f64, lo: f64, hi: f64, scope: BadDataScope },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindMultipliers {
    pub voltage_sq: f64,
    pub nodal: f64,
    pub branch: f64,
}

impl Default for KindMultipliers {
    fn default() -> Self {
        Self { voltage_sq: 1.0, nodal: 1.5, branch: 2.0 }
    }
}

impl KindMultipliers {
    fn of(&self, kind: MeasurementKind) -> f64 {
        match kind {
            MeasurementKind::VoltageSq(_) => self.voltage_sq,
            k if k.is_injection() => self.nodal,
            _ => self.branch,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NoiseConfig<T: Scalar> {
    /// Noise level `c`: the standard deviation is `multiplier * c * |true value|`.
    pub level: T,
    #[serde(default)]
    pub multipliers: KindMultipliers,
    /// Absolute per-kind standard deviations; replaces the proportional rule when set.
    #[serde(default)]
    pub absolute: Option<KindMultipliers>,
    #[serde(default = "default_floor")]
    pub sigma_floor: T,
    #[serde(default)]
    pub bad_data: BadData,
    #[serde(default)]
    pub seed: u64,
}

fn default_floor<T: Scalar>() -> T {
    T::lit(1e-4)
}

impl<T: Scalar> NoiseConfig<T> {
    pub fn proportional(level: T, seed: u64) -> Self {
        Self {
            level,
            multipliers: KindMultipliers::default(),
            absolute: None,
            sigma_floor: default_floor(),
            bad_data: BadData::None,
            seed,
        }
    }

    pub fn noiseless() -> Self {
        Self::proportional(T::zero(), 0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.level < T::zero() {
            return Err(Error::Measurement("noise level must be nonnegative".into()));
        }
        if self.sigma_floor <= T::zero() {
            return Err(Error::Measurement("sigma floor must be positive".into()));
        }
        let frac = match self.bad_data {
            BadData::None => 0.0,
            BadData::Gaussian { fraction, .. } | BadData::Uniform { fraction, .. } => fraction,
        };
        if !(0.0..=1.0).contains(&frac) {
            return Err(Error::Measurement(format!("bad-data fraction {frac} outside [0, 1]")));
        }
        if let BadData::Uniform { lo, hi, .. } = self.bad_data {
            if lo > hi {
                return Err(Error::Measurement("bad-data interval has lo > hi".into()));
            }
        }
        Ok(())
    }
}

/// Measurements to take.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPlan {
    pub voltage_all: bool,
    /// Active flow at the from end of each listed branch.
    pub tree_flows: Option<EdgeSet>,
    #[serde(default)]
    pub extra: Vec<MeasurementKind>,
}

impl MeasurementPlan {
    pub fn voltage_and_flows(edges: &EdgeSet) -> Self {
        Self { voltage_all: true, tree_flows: Some(edges.clone()), extra: Vec::new() }
    }

    pub fn kinds(&self, n: usize) -> Vec<MeasurementKind> {
        let mut out = Vec::new();
        if self.voltage_all {
            out.extend((0..n).map(MeasurementKind::VoltageSq));
        }
        if let Some(e) = &self.tree_flows {
            out.extend(e.branches.iter().map(|&l| MeasurementKind::PFrom(l)));
        }
        out.extend(self.extra.iter().copied());
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MeasurementRecord<T: Scalar> {
    #[serde(flatten)]
    pub kind: MeasurementKind,
    pub true_value: T,
    pub observed: T,
    pub sigma: T,
    /// Gaussian noise realization.
    pub noise: T,
    /// Gross error added on bad-data records, zero otherwise.
    pub outlier: T,
    pub bad_data: bool,
}

impl<T: Scalar> MeasurementRecord<T> {
    /// Total deviation `z - v* M v`.
    pub fn error(&self) -> T {
        self.noise + self.outlier
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MeasurementSet<T: Scalar> {
    pub n_buses: usize,
    pub records: Vec<MeasurementRecord<T>>,
}

impl<T: Scalar> MeasurementSet<T> {
    pub fn m(&self) -> usize {
        self.records.len()
    }

    /// `kappa = M / N`.
    pub fn kappa(&self) -> T {
        T::lit(self.m() as f64 / self.n_buses as f64)
    }

    pub fn kinds(&self) -> Vec<MeasurementKind> {
        self.records.iter().map(|r| r.kind).collect()
    }

    pub fn observed(&self) -> Vec<T> {
        self.records.iter().map(|r| r.observed).collect()
    }

    pub fn sigmas(&self) -> Vec<T> {
        self.records.iter().map(|r| r.sigma).collect()
    }

    pub fn matrices(&self, model: &AdmittanceModel<T>) -> Result<Vec<CoefficientMatrix<T>>> {
        self.records.iter().map(|r| build_matrix(model, r.kind)).collect()
    }

    /// `sum |eta_j| / sigma_j` over the realized deviations.
    pub fn f_wlav(&self) -> T {
        self.records.iter().fold(T::zero(), |acc, r| acc + r.error().abs() / r.sigma)
    }

    /// FNV-1a hash over kinds and bit patterns of every value.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        eat(self.n_buses as u64);
        for r in &self.records {
            let (tag, idx) = match r.kind {
                MeasurementKind::VoltageSq(i) => (0, i),
                MeasurementKind::PInj(i) => (1, i),
                MeasurementKind::QInj(i) => (2, i),
                MeasurementKind::PFrom(i) => (3, i),
                MeasurementKind::PTo(i) => (4, i),
                MeasurementKind::QFrom(i) => (5, i),
                MeasurementKind::QTo(i) => (6, i),
            };
            eat(tag);
            eat(idx as u64);
            for v in [r.true_value, r.observed, r.sigma, r.noise, r.outlier] {
                eat(v.as_f64().to_bits());
            }
            eat(r.bad_data as u64);
        }
        h
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Draws one measurement set.
///
/// The random stream is consumed in a fixed order: one standard normal per
/// record, then the bad-data subset, then one outlier draw per flagged record.
/// With a zero noise level every noise term is exactly zero.
pub fn sample_measurements<T: Scalar>(
    model: &AdmittanceModel<T>,
    v_true: &[Complex<T>],
    plan: &MeasurementPlan,
    noise: &NoiseConfig<T>,
) -> Result<MeasurementSet<T>> {
    if v_true.len() != model.n {
        return Err(Error::Measurement(format!("voltage profile has length {}, expected {}", v_true.len(), model.n)));
    }
    noise.validate()?;
    let kinds = plan.kinds(model.n);
    if kinds.is_empty() {
        return Err(Error::Measurement("empty measurement plan".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut records = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let truth = evaluate(&build_matrix(model, kind)?, v_true);
        let std = match &noise.absolute {
            Some(abs) => T::lit(abs.of(kind)),
            None => T::lit(noise.multipliers.of(kind)) * noise.level * truth.abs(),
        };
        let xi: f64 = rng.sample(StandardNormal);
        let eta = std * T::lit(xi);
        records.push(MeasurementRecord {
            kind,
            true_value: truth,
            observed: truth + eta,
            sigma: if std > noise.sigma_floor { std } else { noise.sigma_floor },
            noise: eta,
            outlier: T::zero(),
            bad_data: false,
        });
    }
    let (fraction, scope) = match noise.bad_data {
        BadData::None => (0.0, BadDataScope::AllRecords),
        BadData::Gaussian { fraction, scope, .. } | BadData::Uniform { fraction, scope, .. } => (fraction, scope),
    };
    let eligible: Vec<usize> = (0..records.len())
        .filter(|&j| scope == BadDataScope::AllRecords || records[j].kind.is_flow())
        .collect();
    let count = (fraction * eligible.len() as f64).round() as usize;
    if count > 0 {
        let mut picked: Vec<usize> = sample(&mut rng, eligible.len(), count).into_iter().map(|i| eligible[i]).collect();
        picked.sort_unstable();
        for j in picked {
            let gross = match noise.bad_data {
                BadData::Gaussian { stddev, .. } => stddev * rng.sample::<f64, _>(StandardNormal),
                BadData::Uniform { lo, hi, .. } => rng.gen_range(lo..=hi),
                BadData::None => unreachable!(),
            };
            let r = &mut records[j];
            r.outlier = T::lit(gross);
            r.observed += r.outlier;
            r.bad_data = true;
        }
    }
    Ok(MeasurementSet { n_buses: model.n, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::load_case;
    use crate::netmodel::{build_admittance, spanning_subgraph, NetworkCase, TreeStrategy};
    use crate::scalar::polar;

    fn tb2() -> (NetworkCase<f64>, AdmittanceModel<f64>) {
        let c = load_case("tb2").unwrap();
        let m = build_admittance(&c);
        (c, m)
    }

    #[test]
    fn p_from_pattern_on_lossless_line() {
        let (_, m) = tb2();
        let p = build_matrix(&m, MeasurementKind::PFrom(0)).unwrap();
        let d = p.matrix.to_dense();
        assert!((d[(0, 1)] - Complex::new(0.0, 2.5)).norm() < 1e-12);
        assert!((d[(1, 0)] - Complex::new(0.0, -2.5)).norm() < 1e-12);
        assert_eq!(d[(0, 0)], Complex::new(0.0, 0.0));
    }

    #[test]
    fn voltage_sq_is_unit_matrix() {
        let (_, m) = tb2();
        let e = build_matrix(&m, MeasurementKind::VoltageSq(1)).unwrap().matrix.to_dense();
        assert_eq!(e[(1, 1)], Complex::new(1.0, 0.0));
        assert_eq!(e.iter().filter(|z| **z != Complex::new(0.0, 0.0)).count(), 1);
    }

    #[test]
    fn p_from_value_matches_sine_formula() {
        let (c, m) = tb2();
        let p = build_matrix(&m, MeasurementKind::PFrom(0)).unwrap();
        // lossless line: p = |v1||v2||y| sin(theta1 - theta2)
        let oracle = 5.0 * 10f64.to_radians().sin();
        let got = evaluate(&p, &c.voltages());
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 0.86824).abs() < 1e-5);
    }

    #[test]
    fn evaluate_trivial_cases() {
        let (_, m) = tb2();
        let e = build_matrix(&m, MeasurementKind::VoltageSq(0)).unwrap();
        let v = [polar(0.95, 7f64.to_radians()), polar(1.0, 0.0)];
        assert!((evaluate(&e, &v) - 0.9025).abs() < 1e-15);
        let p = build_matrix(&m, MeasurementKind::QTo(0)).unwrap();
        assert_eq!(evaluate(&p, &[Complex::new(0.0, 0.0); 2]), 0.0);
    }

    #[test]
    fn out_of_range_index_rejected() {
        let (_, m) = tb2();
        assert!(build_matrix(&m, MeasurementKind::PInj(2)).is_err());
        assert!(build_matrix(&m, MeasurementKind::QFrom(1)).is_err());
    }

    #[test]
    fn noiseless_sampling_has_zero_noise() {
        let c: NetworkCase<f64> = load_case("case9").unwrap();
        let m = build_admittance(&c);
        let tree = spanning_subgraph(&c, &m, &TreeStrategy::MinWeightTree).unwrap();
        let set = sample_measurements(&m, &c.voltages(), &MeasurementPlan::voltage_and_flows(&tree), &NoiseConfig::noiseless()).unwrap();
        assert_eq!(set.m(), 17);
        assert!((set.kappa() - 17.0 / 9.0).abs() < 1e-15);
        for r in &set.records {
            assert_eq!(r.noise, 0.0);
            assert_eq!(r.observed, r.true_value);
            assert!(r.sigma > 0.0);
        }
    }

    #[test]
    fn uniform_bad_data_flags_exact_fraction() {
        let c: NetworkCase<f64> = load_case("case57").unwrap();
        let m = build_admittance(&c);
        let mut plan = MeasurementPlan { voltage_all: true, tree_flows: None, extra: Vec::new() };
        plan.extra = (0..43).map(MeasurementKind::PFrom).collect();
        let mut noise = NoiseConfig::proportional(0.01, 11);
        noise.bad_data = BadData::Uniform { fraction: 0.1, lo: 0.0, hi: 2.0, scope: BadDataScope::AllRecords };
        let set = sample_measurements(&m, &c.voltages(), &plan, &noise).unwrap();
        assert_eq!(set.m(), 100);
        let flagged: Vec<_> = set.records.iter().filter(|r| r.bad_data).collect();
        assert_eq!(flagged.len(), 10);
        for r in flagged {
            let extra = r.observed - (r.true_value + r.noise);
            assert!((0.0..=2.0).contains(&extra));
        }
    }

    #[test]
    fn empty_plan_rejected() {
        let (c, m) = tb2();
        let plan = MeasurementPlan { voltage_all: false, tree_flows: None, extra: Vec::new() };
        assert!(sample_measurements(&m, &c.voltages(), &plan, &NoiseConfig::noiseless()).is_err());
    }

    #[test]
    fn json_round_trip() {
        let c: NetworkCase<f64> = load_case("case9").unwrap();
        let m = build_admittance(&c);
        let tree = spanning_subgraph(&c, &m, &TreeStrategy::MinWeightTree).unwrap();
        let set = sample_measurements(&m, &c.voltages(), &MeasurementPlan::voltage_and_flows(&tree), &NoiseConfig::proportional(0.05, 3)).unwrap();
        let back = MeasurementSet::from_json(&set.to_json().unwrap()).unwrap();
        assert_eq!(back, set);
        assert!(set.to_json().unwrap().contains("\"kind\": \"p_from\""));
    }
}
