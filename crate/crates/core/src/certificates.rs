//! Closed-form dual certificates and the error bounds built on them.
//!
//! For voltage-magnitude measurements on every bus and active from-end flows
//! on a connected edge set, the multipliers are built line by line so that
//! each line's 2x2 block of `H(mu) = M0 + sum_j mu_j M_j` is PSD with null
//! vector `(v_s, v_t)`; summing over a connected edge set gives `H v = 0` and
//! `rank H = N - 1`.

use nalgebra::DMatrix;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurements::{build_matrix, MeasurementKind, MeasurementSet};
use crate::netmodel::{AdmittanceModel, EdgeSet};
use crate::relaxations::{check_assumption1, ObjectiveDesign};
use crate::scalar::Scalar;
use crate::sparse::HermitianSparse;

/// Eigenvalues below this multiple of the largest count as zero.
pub const RANK_TOL: f64 = 1e-6;
pub const PSD_TOL: f64 = 1e-8;
pub const NULL_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DualCertificate<T: Scalar> {
    /// Aligned with `kinds`.
    pub mu: Vec<T>,
    pub kinds: Vec<MeasurementKind>,
    pub h: HermitianSparse<T>,
    /// Ascending.
    pub eigenvalues: Vec<T>,
    /// Second-smallest eigenvalue of `H`.
    pub lambda: T,
    pub lambda_min: T,
    pub lambda_max: T,
    /// `||H v||`.
    pub residual: T,
    pub rank_deficiency: usize,
}

impl<T: Scalar> DualCertificate<T> {
    pub fn n(&self) -> usize {
        self.h.dim()
    }

    /// `max_j |sigma_j mu_j|` for a measurement set with the same kinds.
    pub fn rho_min(&self, measurements: &MeasurementSet<T>) -> Result<T> {
        self.check_alignment(measurements)?;
        Ok(self.mu.iter().zip(&measurements.records).fold(T::zero(), |acc, (m, r)| acc.max((*m * r.sigma).abs())))
    }

    fn check_alignment(&self, measurements: &MeasurementSet<T>) -> Result<()> {
        if measurements.kinds() != self.kinds {
            return Err(Error::Certificate("measurement set does not match the certificate's measurement list".into()));
        }
        Ok(())
    }
}

/// `H` and its eigen-data from explicit multipliers.
pub fn from_multipliers<T: Scalar>(
    mu: Vec<T>,
    kinds: Vec<MeasurementKind>,
    m0: &HermitianSparse<T>,
    model: &AdmittanceModel<T>,
    v: &[Complex<T>],
) -> Result<DualCertificate<T>> {
    if mu.len() != kinds.len() {
        return Err(Error::Certificate("multiplier count does not match the measurement list".into()));
    }
    let mut h = m0.clone();
    for (&k, &m) in kinds.iter().zip(&mu) {
        h.add_scaled(&build_matrix(model, k)?.matrix, m);
    }
    let mut eigenvalues: Vec<T> = h.to_dense().symmetric_eigenvalues().iter().copied().collect();
    eigenvalues.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let lambda_min = eigenvalues[0];
    let lambda_max = *eigenvalues.last().unwrap();
    let lambda = if eigenvalues.len() > 1 { eigenvalues[1] } else { lambda_min };
    let cut = T::lit(RANK_TOL) * lambda_max.abs();
    let rank_deficiency = eigenvalues.iter().filter(|e| **e <= cut).count();
    let hv = h.mul_vec(v);
    let residual = hv.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr()).sqrt();
    Ok(DualCertificate { mu, kinds, h, eigenvalues, lambda, lambda_min, lambda_max, residual, rank_deficiency })
}

/// Certificate for the measurement list `|v_k|^2` (all buses) followed by the
/// from-end active flow on each branch of `edges`.
///
/// Line `l = (s, t)` with coupling `y = -Yft` and from-side diagonal
/// `a = Re(Yff)` contributes
/// `mu_flow = 2 Im(v_s conj(v_t) conj(m)) / Im(v_s conj(v_t) conj(y))`,
/// `mu_t += -|v_s|^2 Im(m conj(y)) / Im(v_s conj(v_t) conj(y))`,
/// `mu_s += (|v_t|^2 / |v_s|^2) mu_t - a mu_flow`, where `m = M0[s,t]`
/// (split evenly over parallel branches). The diagonal of `M0` is then
/// cancelled through the voltage multipliers.
pub fn build_certificate<T: Scalar>(
    v: &[Complex<T>],
    design: &ObjectiveDesign<T>,
    edges: &EdgeSet,
    model: &AdmittanceModel<T>,
) -> Result<DualCertificate<T>> {
    let n = model.n;
    if v.len() != n {
        return Err(Error::Certificate(format!("voltage profile has length {}, expected {n}", v.len())));
    }
    if let Some(k) = v.iter().position(|z| *z == Complex::default()) {
        return Err(Error::Certificate(format!("zero voltage at bus {k}")));
    }
    // the construction needs the M0 and admittance conditions; an edge whose
    // voltage difference is aligned with M0 still yields a rank-one PSD block,
    // and verification decides validity
    let report = check_assumption1(design, model, v, edges)?;
    let bad: Vec<usize> = report.edges.iter().filter(|e| !(e.m0_ok && e.v_y_ok)).map(|e| e.branch).collect();
    if !bad.is_empty() {
        return Err(Error::Assumption(format!("angle conditions fail on branches {bad:?}")));
    }
    for e in report.edges.iter().filter(|e| !e.v_m0_ok) {
        log::warn!("branch {}: voltage angle difference is aligned with M0 ({:.3e} deg)", e.branch, e.v_minus_m0);
    }
    let mut multiplicity = std::collections::BTreeMap::new();
    for &l in &edges.branches {
        let (s, t) = model.ends[l];
        *multiplicity.entry((s.min(t), s.max(t))).or_insert(0usize) += 1;
    }
    let mut mu = vec![T::zero(); n + edges.len()];
    for (q, &l) in edges.branches.iter().enumerate() {
        let (s, t) = model.ends[l];
        let y = model.coupling(l);
        let a = model.branch_entries(l).0.re;
        let m = design.m0.get(s, t) / T::lit(multiplicity[&(s.min(t), s.max(t))] as f64);
        let w = v[s] * v[t].conj();
        let denom = (w * y.conj()).im;
        if denom == T::zero() {
            return Err(Error::Certificate(format!("degenerate denominator on branch {l}")));
        }
        let flow = T::lit(2.0) * (w * m.conj()).im / denom;
        let mu_t = -v[s].norm_sqr() * (m * y.conj()).im / denom;
        let mu_s = v[t].norm_sqr() / v[s].norm_sqr() * mu_t - a * flow;
        mu[n + q] = flow;
        mu[t] += mu_t;
        mu[s] += mu_s;
    }
    for (k, d) in design.m0.diagonal() {
        mu[k] -= d;
    }
    let kinds: Vec<MeasurementKind> = (0..n)
        .map(MeasurementKind::VoltageSq)
        .chain(edges.branches.iter().map(|&l| MeasurementKind::PFrom(l)))
        .collect();
    from_multipliers(mu, kinds, &design.m0, model, v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateCheck {
    pub psd: bool,
    pub null_vector: bool,
    pub rank: bool,
    /// `lambda_min / lambda_max`.
    pub psd_margin: f64,
    /// `||H v|| / (||H||_F ||v||)`.
    pub null_ratio: f64,
    pub rank_deficiency: usize,
}

impl CertificateCheck {
    pub fn pass(&self) -> bool {
        self.psd && self.null_vector && self.rank
    }
}

pub fn verify_certificate<T: Scalar>(cert: &DualCertificate<T>, v: &[Complex<T>]) -> CertificateCheck {
    let lmax = cert.lambda_max.as_f64();
    let lmin = cert.lambda_min.as_f64();
    let hv = cert.h.mul_vec(v);
    let hv_norm = hv.iter().map(|z| z.norm_sqr().as_f64()).sum::<f64>().sqrt();
    let v_norm = v.iter().map(|z| z.norm_sqr().as_f64()).sum::<f64>().sqrt();
    let hf = cert.h.frobenius_norm().as_f64();
    let null_ratio = if hf * v_norm > 0.0 { hv_norm / (hf * v_norm) } else { 0.0 };
    let deficiency = cert.eigenvalues.iter().filter(|e| e.as_f64() <= RANK_TOL * lmax.abs()).count();
    CertificateCheck {
        psd: lmin >= -PSD_TOL * lmax.abs(),
        null_vector: hv_norm <= NULL_TOL * hf * v_norm,
        rank: deficiency == 1,
        psd_margin: if lmax != 0.0 { lmin / lmax } else { 0.0 },
        null_ratio,
        rank_deficiency: deficiency,
    }
}

/// Pads `cert` with zero multipliers for the measurements in `kinds` it does
/// not cover; `H` is unchanged, so validity carries over.
pub fn extend_certificate<T: Scalar>(cert: &DualCertificate<T>, kinds: &[MeasurementKind]) -> Result<DualCertificate<T>> {
    let mut mu = Vec::with_capacity(kinds.len());
    let mut used = vec![false; cert.kinds.len()];
    for k in kinds {
        match cert.kinds.iter().enumerate().position(|(i, c)| c == k && !used[i]) {
            Some(i) => {
                used[i] = true;
                mu.push(cert.mu[i]);
            }
            None => mu.push(T::zero()),
        }
    }
    if used.iter().any(|u| !u) {
        return Err(Error::Certificate("target measurement list does not contain the certificate's measurements".into()));
    }
    Ok(DualCertificate { mu, kinds: kinds.to_vec(), ..cert.clone() })
}

/// Tail bound `P(zeta > t) <= exp(-gamma M)` for Gaussian noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailBound {
    pub t: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub bound: f64,
    /// Set when `gamma <= 0`; the bound is then at least 1.
    pub vacuous: bool,
}

/// `gamma = t^4 lambda^2 / (32 kappa^2 rho^2) - ln 2` with `kappa = M / N`.
pub fn tail_bound(t: f64, m: usize, n: usize, lambda: f64, rho: f64) -> TailBound {
    let kappa = m as f64 / n as f64;
    let gamma = t.powi(4) * lambda * lambda / (32.0 * kappa * kappa * rho * rho) - std::f64::consts::LN_2;
    let vacuous = gamma <= 0.0;
    TailBound { t, kappa, gamma, bound: if vacuous { 1.0 } else { (-gamma * m as f64).exp() }, vacuous }
}

/// Smallest `t` with `gamma(t) > 0`, scaled by `margin > 1`.
pub fn tail_threshold(m: usize, n: usize, lambda: f64, rho: f64, margin: f64) -> f64 {
    let kappa = m as f64 / n as f64;
    (32.0 * kappa * kappa * rho * rho * std::f64::consts::LN_2 / (lambda * lambda)).powf(0.25) * margin
}

/// `(zeta, beta)` with `beta = v* X v / ||v||^4` and
/// `zeta = ||X - beta v v*||_F / sqrt(N Tr X)`.
pub fn zeta<T: Scalar>(x: &DMatrix<Complex<T>>, v: &[Complex<T>]) -> Result<(T, T)> {
    let n = v.len();
    let tr = (0..n).fold(T::zero(), |acc, k| acc + x[(k, k)].re);
    if tr <= T::zero() {
        return Err(Error::Certificate("X has nonpositive trace".into()));
    }
    let vn2 = v.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr());
    if vn2 == T::zero() {
        return Err(Error::Certificate("zero voltage vector".into()));
    }
    let mut vxv: Complex<T> = Complex::default();
    for i in 0..n {
        for j in 0..n {
            vxv += v[i].conj() * x[(i, j)] * v[j];
        }
    }
    let beta = vxv.re / (vn2 * vn2);
    let mut f = T::zero();
    for i in 0..n {
        for j in 0..n {
            let d: Complex<T> = x[(i, j)] - (v[i] * v[j].conj()).scale(beta);
            f += d.norm_sqr();
        }
    }
    Ok((f.sqrt() / (T::lit(n as f64) * tr).sqrt(), beta))
}

/// Bound quantities for one estimation run; the columns after the bound
/// parameters are filled when the corresponding solution is available.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BoundReport<T: Scalar> {
    pub xi: Option<T>,
    pub zeta: Option<T>,
    pub zeta_max: T,
    pub beta: Option<T>,
    pub lambda: T,
    pub f_wlav: T,
    pub rho_min: T,
    pub rho: T,
    /// `2 sqrt(rho_min / (N lambda))` for this certificate, an upper bound
    /// on the minimum over all certificates.
    pub omega_hat: T,
    pub tail: Option<TailBound>,
}

impl<T: Scalar> BoundReport<T> {
    pub const CSV_HEADER: &'static str = "xi,zeta,zeta_max,beta,lambda,f_wlav,rho_min,rho,omega_hat";

    pub fn csv_row(&self) -> String {
        let o = |x: Option<T>| x.map(|v| format!("{:.10e}", v.as_f64())).unwrap_or_default();
        let f = |x: T| format!("{:.10e}", x.as_f64());
        [o(self.xi), o(self.zeta), f(self.zeta_max), o(self.beta), f(self.lambda), f(self.f_wlav), f(self.rho_min), f(self.rho), f(self.omega_hat)]
            .join(",")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `zeta_max = 2 sqrt(rho f_WLAV(eta) / (N lambda))` with `eta` the true
/// measurement errors of `measurements`.
pub fn error_bound<T: Scalar>(cert: &DualCertificate<T>, rho: T, measurements: &MeasurementSet<T>) -> Result<BoundReport<T>> {
    if cert.lambda <= T::zero() {
        return Err(Error::Certificate(format!("second eigenvalue {} is not positive", cert.lambda)));
    }
    let rho_min = cert.rho_min(measurements)?;
    if rho < rho_min {
        log::warn!("rho = {rho} is below rho_min = {rho_min}; the bound is not guaranteed");
    }
    let n = T::lit(cert.n() as f64);
    let f_wlav = measurements.f_wlav();
    let two = T::lit(2.0);
    Ok(BoundReport {
        xi: None,
        zeta: None,
        zeta_max: two * (rho * f_wlav / (n * cert.lambda)).sqrt(),
        beta: None,
        lambda: cert.lambda,
        f_wlav,
        rho_min,
        rho,
        omega_hat: omega_hat(cert, rho_min),
        tail: None,
    })
}

pub fn omega_hat<T: Scalar>(cert: &DualCertificate<T>, rho_min: T) -> T {
    T::lit(2.0) * (rho_min / (T::lit(cert.n() as f64) * cert.lambda)).sqrt()
}

/// Minimum of `omega_hat` over a family of valid certificates for the same
/// measurement set.
pub fn omega_hat_min<T: Scalar>(family: &[DualCertificate<T>], measurements: &MeasurementSet<T>) -> Result<T> {
    let mut best: Option<T> = None;
    for c in family {
        let w = omega_hat(c, c.rho_min(measurements)?);
        best = Some(match best {
            Some(b) if b <= w => b,
            _ => w,
        });
    }
    best.ok_or_else(|| Error::Certificate("empty certificate family".into()))
}
