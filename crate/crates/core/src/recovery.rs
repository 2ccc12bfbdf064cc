//! Voltage recovery from lifted solutions, the direct angle-propagation
//! power-flow solver, and the estimation error metric.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::conic::ipm::{self, Cone, ConeProblem, Pos, Settings, Term};
use crate::conic::ConicSolution;
use crate::error::{Error, Result};
use crate::measurements::{MeasurementKind, MeasurementSet};
use crate::netmodel::{AdmittanceModel, EdgeSet, NetworkCase};
use crate::scalar::{self, Scalar};

/// Diagonal entries down to this value are clipped to zero.
pub const DIAG_CLIP: f64 = -1e-9;
/// Slack allowed outside [-1, 1] before an arccos argument is rejected.
pub const ARCCOS_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryMethod {
    /// Angles fit every edge exactly.
    Rank1Exact,
    /// Angles minimize the l1 angle mismatch.
    Rank1Approx,
    DirectOracle,
    GaussNewton,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct VoltageEstimate<T: Scalar> {
    pub v: Vec<Complex<T>>,
    /// Internal index of the reference bus, whose angle is zero.
    pub reference: usize,
    pub method: RecoveryMethod,
}

impl<T: Scalar> VoltageEstimate<T> {
    /// `bus,vm,va_deg` with external bus ids.
    pub fn to_csv(&self, case: &NetworkCase<T>) -> String {
        let mut out = String::from("bus,vm,va_deg\n");
        for (k, z) in self.v.iter().enumerate() {
            out.push_str(&format!(
                "{},{:.10},{:.10}\n",
                case.buses[k].id,
                scalar::modulus(*z).as_f64(),
                scalar::deg(scalar::arg(*z)).as_f64()
            ));
        }
        out
    }
}

/// Rotates `v` so that `v[reference]` has angle zero.
pub fn gauge_fix<T: Scalar>(v: &[Complex<T>], reference: usize) -> Vec<Complex<T>> {
    let r = v[reference];
    let m = scalar::modulus(r);
    if m == T::zero() {
        return v.to_vec();
    }
    let rot = r.conj().unscale(m);
    v.iter().map(|z| z * rot).collect()
}

/// `||v_hat - v||_2 / sqrt(N)` after fixing both to zero angle at `reference`.
pub fn xi<T: Scalar>(v_hat: &[Complex<T>], v_true: &[Complex<T>], reference: usize) -> T {
    let a = gauge_fix(v_hat, reference);
    let b = gauge_fix(v_true, reference);
    let s = a.iter().zip(&b).fold(T::zero(), |acc, (x, y)| acc + (x - y).norm_sqr());
    (s / T::lit(v_hat.len() as f64)).sqrt()
}

fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for &(s, t) in edges {
        adj[s].push(t);
        adj[t].push(s);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(k) = stack.pop() {
        for &j in &adj[k] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Angles from edge differences `d_e = theta_s - theta_t` on a tree, by
/// breadth-first propagation from `reference`.
fn propagate<T: Scalar>(n: usize, edges: &[(usize, usize, T)], reference: usize) -> Vec<T> {
    let mut adj: Vec<Vec<(usize, T)>> = vec![Vec::new(); n];
    for &(s, t, d) in edges {
        adj[s].push((t, -d));
        adj[t].push((s, d));
    }
    let mut theta = vec![T::zero(); n];
    let mut seen = vec![false; n];
    seen[reference] = true;
    let mut queue = VecDeque::from([reference]);
    while let Some(k) = queue.pop_front() {
        for &(j, step) in &adj[k] {
            if !seen[j] {
                seen[j] = true;
                theta[j] = theta[k] + step;
                queue.push_back(j);
            }
        }
    }
    theta
}

/// `min sum_e |d_e - theta_s + theta_t|` with `theta_ref = 0`, as an LP over
/// shifted angles `u = theta + B` in `[0, 2B]` and split residuals.
pub fn angles_by_lp<T: Scalar>(n: usize, edges: &[(usize, usize, T)], reference: usize) -> Result<Vec<T>> {
    let big = T::pi() * T::lit(n as f64) + T::one();
    // block 0: u (n), w (n) box slacks; block 1: r+ / r- per edge
    let m = edges.len();
    let lin = |block: usize, i: usize, val: T| Term { block, pos: Pos::Lin(i), val };
    let mut rows = Vec::new();
    let mut b = Vec::new();
    for k in 0..n {
        if k == reference {
            rows.push(vec![lin(0, k, T::one())]);
            b.push(big);
            rows.push(vec![lin(0, n + k, T::one())]);
            b.push(big);
        } else {
            rows.push(vec![lin(0, k, T::one()), lin(0, n + k, T::one())]);
            b.push(big + big);
        }
    }
    let mut c = Vec::new();
    for (e, &(s, t, d)) in edges.iter().enumerate() {
        rows.push(vec![lin(0, s, T::one()), lin(0, t, -T::one()), lin(1, 2 * e, T::one()), lin(1, 2 * e + 1, -T::one())]);
        b.push(d);
        c.push(lin(1, 2 * e, T::one()));
        c.push(lin(1, 2 * e + 1, T::one()));
    }
    let prob = ConeProblem { cones: vec![Cone::NonNeg(2 * n), Cone::NonNeg(2 * m)], c, rows, b };
    let res = ipm::solve(&prob, &Settings { tol: T::lit(1e-10), ..Settings::default() });
    if !matches!(res.status, ipm::Status::Optimal | ipm::Status::AlmostOptimal) {
        return Err(Error::Recovery(format!("angle program ended with {:?}", res.status)));
    }
    let u = res.x[0].vec();
    Ok((0..n).map(|k| u[k] - u[reference]).collect())
}

/// Magnitudes `sqrt(X_kk)` and angles fitting `angle(X_st)` over `support`.
///
/// On a spanning tree, or when a breadth-first propagation already fits every
/// edge, the angles are propagated exactly; otherwise the l1 program is solved. `entry(s, t)` must return `X_st` for every pair of
/// `support`.
pub fn rank1_recover<T: Scalar>(
    diag: &[T],
    entry: impl Fn(usize, usize) -> Option<Complex<T>>,
    support: &[(usize, usize)],
    reference: usize,
) -> Result<VoltageEstimate<T>> {
    let n = diag.len();
    if reference >= n {
        return Err(Error::Recovery("reference bus out of range".into()));
    }
    let mut mags = Vec::with_capacity(n);
    for (k, &d) in diag.iter().enumerate() {
        if d < T::lit(DIAG_CLIP) {
            return Err(Error::Recovery(format!("X[{k},{k}] = {d} is negative")));
        }
        mags.push(if d > T::zero() { d.sqrt() } else { T::zero() });
    }
    let mut pairs: Vec<(usize, usize)> = support.iter().map(|&(s, t)| (s.min(t), s.max(t))).filter(|(s, t)| s != t).collect();
    pairs.sort_unstable();
    pairs.dedup();
    if n > 1 && !connected(n, &pairs) {
        return Err(Error::Recovery("edge support does not connect all buses".into()));
    }
    let mut diffs = Vec::with_capacity(pairs.len());
    for &(s, t) in &pairs {
        let z = entry(s, t).ok_or_else(|| Error::Recovery(format!("X[{s},{t}] is not available")))?;
        diffs.push((s, t, scalar::arg(z)));
    }
    let (theta, method) = if pairs.len() + 1 == n || n == 1 {
        (propagate(n, &diffs, reference), RecoveryMethod::Rank1Exact)
    } else {
        // unwrap each difference against a BFS-tree propagation so loops do not
        // carry a spurious multiple of 2 pi into the fit
        let seed = propagate(n, &diffs, reference);
        let diffs: Vec<_> = diffs
            .iter()
            .map(|&(s, t, d)| {
                let base = seed[s] - seed[t];
                (s, t, base + scalar::wrap_rad(d - base))
            })
            .collect();
        let fit = |th: &[T]| diffs.iter().fold(T::zero(), |acc, &(s, t, d)| acc + scalar::wrap_rad(d - th[s] + th[t]).abs());
        let th = if fit(&seed) <= T::lit(1e-12) { seed } else { angles_by_lp(n, &diffs, reference)? };
        let mismatch = fit(&th);
        let method = if mismatch <= T::lit(1e-7) { RecoveryMethod::Rank1Exact } else { RecoveryMethod::Rank1Approx };
        (th, method)
    };
    let v = (0..n).map(|k| scalar::polar(mags[k], scalar::wrap_rad(theta[k]))).collect();
    Ok(VoltageEstimate { v, reference, method })
}

pub fn rank1_from_solution<T: Scalar>(sol: &ConicSolution<T>, support: &[(usize, usize)], reference: usize) -> Result<VoltageEstimate<T>> {
    rank1_recover(&sol.diagonal(), |i, j| sol.entry(i, j), support, reference)
}

pub fn rank1_from_dense<T: Scalar>(x: &DMatrix<Complex<T>>, support: &[(usize, usize)], reference: usize) -> Result<VoltageEstimate<T>> {
    let diag: Vec<T> = (0..x.nrows()).map(|k| x[(k, k)].re).collect();
    rank1_recover(&diag, |i, j| Some(x[(i, j)]), support, reference)
}

/// Solves the power flow on a spanning tree from bus magnitudes and the
/// from-end active flow of each tree branch.
///
/// Per branch, `p = a |v_s|^2 - |y| |v_s| |v_t| cos(delta - angle(y))` with
/// `y = -Yft`, `a = Re(Yff)` and `delta = angle(v_s) - angle(v_t)`, so
/// `delta = angle(y) + arccos((a |v_s|^2 - p) / (|v_s| |v_t| |y|))`; the other
/// root would put `delta - angle(y)` outside (0, 180) degrees.
pub fn direct_pf_oracle<T: Scalar>(
    model: &AdmittanceModel<T>,
    magnitudes: &[T],
    flows: &[(usize, T)],
    edges: &EdgeSet,
    reference: usize,
) -> Result<VoltageEstimate<T>> {
    let n = model.n;
    if magnitudes.len() != n {
        return Err(Error::Recovery(format!("expected {n} magnitudes, got {}", magnitudes.len())));
    }
    if !edges.is_tree(n) || !connected(n, &edges.bus_pairs(model)) {
        return Err(Error::Recovery("the oracle needs a spanning tree".into()));
    }
    let mut diffs = Vec::with_capacity(edges.len());
    for &l in &edges.branches {
        let p = flows
            .iter()
            .find(|f| f.0 == l)
            .map(|f| f.1)
            .ok_or_else(|| Error::Recovery(format!("no flow given for branch {l}")))?;
        let (s, t) = model.ends[l];
        let y = model.coupling(l);
        let a = model.branch_entries(l).0.re;
        let (ms, mt) = (magnitudes[s], magnitudes[t]);
        let denom = ms * mt * scalar::modulus(y);
        if denom == T::zero() {
            return Err(Error::Recovery(format!("zero magnitude or admittance on branch {l}")));
        }
        let mut arg = (a * ms * ms - p) / denom;
        if arg.abs() > T::one() + T::lit(ARCCOS_TOL) {
            return Err(Error::Recovery(format!(
                "inconsistent data on branch {l}: arccos argument {}",
                arg.as_f64()
            )));
        }
        arg = arg.max(-T::one()).min(T::one());
        let phi = arg.acos();
        let guard = scalar::rad(T::lit(crate::relaxations::ANGLE_GUARD_DEG));
        if phi <= guard || phi >= T::pi() - guard {
            return Err(Error::Assumption(format!(
                "branch {l}: neither root keeps angle(v_s) - angle(v_t) - angle(y) inside (0, 180)"
            )));
        }
        diffs.push((s, t, scalar::arg(y) + phi));
    }
    let theta = propagate(n, &diffs, reference);
    let v = (0..n).map(|k| scalar::polar(magnitudes[k], scalar::wrap_rad(theta[k]))).collect();
    Ok(VoltageEstimate { v, reference, method: RecoveryMethod::DirectOracle })
}

/// Oracle inputs read from a measurement set holding every `|v_k|^2` and the
/// flows of `edges`.
pub fn oracle_from_measurements<T: Scalar>(
    model: &AdmittanceModel<T>,
    measurements: &MeasurementSet<T>,
    edges: &EdgeSet,
    reference: usize,
) -> Result<VoltageEstimate<T>> {
    let n = model.n;
    let mut mags = vec![None; n];
    let mut flows = Vec::new();
    for r in &measurements.records {
        match r.kind {
            MeasurementKind::VoltageSq(k) => mags[k] = Some(r.observed.max(T::zero()).sqrt()),
            MeasurementKind::PFrom(l) => flows.push((l, r.observed)),
            _ => {}
        }
    }
    let mags: Option<Vec<T>> = mags.into_iter().collect();
    let mags = mags.ok_or_else(|| Error::Recovery("a bus has no voltage magnitude measurement".into()))?;
    direct_pf_oracle(model, &mags, &flows, edges, reference)
}
