//! Gauss-Newton weighted least squares state estimation.
//!
//! The measurement functions are the same quadratic forms `v* M_j v` used by
//! the conic programs. The state is the bus angles (reference excluded) and
//! magnitudes; steps solve the normal equations with weights `1 / sigma^2`,
//! without damping or line search.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurements::{CoefficientMatrix, MeasurementSet};
use crate::netmodel::AdmittanceModel;
use crate::recovery::{RecoveryMethod, VoltageEstimate};
use crate::scalar::{self, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaussNewtonConfig {
    pub max_iter: usize,
    /// Stop when the largest state update falls below this.
    pub step_tol: f64,
    /// Start from `|v| = 1`, zero angles; otherwise from the supplied profile.
    pub flat_start: bool,
}

impl Default for GaussNewtonConfig {
    fn default() -> Self {
        Self { max_iter: 50, step_tol: 1e-8, flat_start: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaussNewtonStatus {
    Converged,
    MaxIterations,
    /// Weighted residual above 10x its best value for 3 consecutive iterations.
    Diverged,
    /// Gain matrix not positive definite: the state is not observable.
    SingularGain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussNewtonReport {
    pub status: GaussNewtonStatus,
    pub iterations: usize,
    /// Weighted sum of squared residuals at the returned iterate.
    pub objective: f64,
}

/// Values `v* M_j v` and the Jacobian with columns `[theta (k != ref), |v|]`.
fn linearize<T: Scalar>(
    mats: &[CoefficientMatrix<T>],
    v: &[Complex<T>],
    reference: usize,
) -> (DVector<T>, DMatrix<T>) {
    let n = v.len();
    let mut h = DVector::zeros(mats.len());
    let mut jac = DMatrix::zeros(mats.len(), 2 * n - 1);
    let two = T::lit(2.0);
    for (j, m) in mats.iter().enumerate() {
        let mv = m.matrix.mul_vec(v);
        let mut val = T::zero();
        for k in 0..n {
            let g = v[k].conj() * mv[k];
            val += g.re;
            if mv[k] == Complex::default() {
                continue;
            }
            if k != reference {
                let col = if k < reference { k } else { k - 1 };
                jac[(j, col)] = two * g.im;
            }
            let r = scalar::modulus(v[k]);
            if r != T::zero() {
                jac[(j, n - 1 + k)] = two * g.re / r;
            }
        }
        h[j] = val;
    }
    (h, jac)
}

fn weighted_ssr<T: Scalar>(r: &DVector<T>, w: &DVector<T>) -> T {
    r.iter().zip(w.iter()).fold(T::zero(), |acc, (a, b)| acc + *a * *a * *b)
}

/// Runs Gauss-Newton from a flat start (or from `start`), returning the
/// iterate with the smallest weighted residual seen.
pub fn gauss_newton_wls<T: Scalar>(
    measurements: &MeasurementSet<T>,
    model: &AdmittanceModel<T>,
    reference: usize,
    config: &GaussNewtonConfig,
    start: Option<&[Complex<T>]>,
) -> Result<(VoltageEstimate<T>, GaussNewtonReport)> {
    let n = model.n;
    if config.max_iter == 0 || config.step_tol <= 0.0 {
        return Err(Error::Estimator("iteration limit and step tolerance must be positive".into()));
    }
    if measurements.m() < 2 * n - 1 {
        return Err(Error::Estimator(format!(
            "{} measurements cannot determine {} state variables",
            measurements.m(),
            2 * n - 1
        )));
    }
    let mats = measurements.matrices(model)?;
    let z = DVector::from_vec(measurements.observed());
    let w = DVector::from_iterator(z.len(), measurements.sigmas().into_iter().map(|s| T::one() / (s * s)));

    let (mut theta, mut mag): (Vec<T>, Vec<T>) = match (config.flat_start, start) {
        (false, Some(s)) => {
            let s = crate::recovery::gauge_fix(s, reference);
            (s.iter().map(|x| scalar::arg(*x)).collect(), s.iter().map(|x| scalar::modulus(*x)).collect())
        }
        _ => (vec![T::zero(); n], vec![T::one(); n]),
    };
    let assemble = |theta: &[T], mag: &[T]| -> Vec<Complex<T>> { (0..n).map(|k| scalar::polar(mag[k], theta[k])).collect() };

    let mut v = assemble(&theta, &mag);
    let (h, mut jac) = linearize(&mats, &v, reference);
    let mut obj = weighted_ssr(&(&z - &h), &w);
    let mut best = (v.clone(), obj);
    let mut growth = 0;
    let mut status = GaussNewtonStatus::MaxIterations;
    let mut iterations = 0;
    let mut r = &z - &h;

    while iterations < config.max_iter {
        iterations += 1;
        let jw = DMatrix::from_fn(jac.nrows(), jac.ncols(), |i, j| jac[(i, j)] * w[i]);
        let gain = jw.transpose() * &jac;
        let rhs = jw.transpose() * &r;
        let chol = match gain.clone().cholesky() {
            Some(c) => c,
            None => {
                status = GaussNewtonStatus::SingularGain;
                break;
            }
        };
        let l = chol.l();
        let (dmin, dmax) = l.diagonal().iter().fold((T::max_value().unwrap(), T::zero()), |(a, b), d| (a.min(*d), b.max(*d)));
        if dmin * dmin <= T::lit(1e-12) * dmax * dmax {
            status = GaussNewtonStatus::SingularGain;
            break;
        }
        let dx = chol.solve(&rhs);
        for k in 0..n {
            if k != reference {
                theta[k] += dx[if k < reference { k } else { k - 1 }];
            }
            mag[k] += dx[n - 1 + k];
        }
        v = assemble(&theta, &mag);
        let (h, j2) = linearize(&mats, &v, reference);
        jac = j2;
        r = &z - &h;
        obj = weighted_ssr(&r, &w);
        if obj < best.1 {
            best = (v.clone(), obj);
        }
        if obj > T::lit(10.0) * best.1 {
            growth += 1;
            if growth >= 3 {
                status = GaussNewtonStatus::Diverged;
                break;
            }
        } else {
            growth = 0;
        }
        let step = dx.iter().fold(T::zero(), |acc, d| acc.max(d.abs()));
        if step < T::lit(config.step_tol) {
            status = GaussNewtonStatus::Converged;
            break;
        }
    }
    let estimate = VoltageEstimate { v: crate::recovery::gauge_fix(&best.0, reference), reference, method: RecoveryMethod::GaussNewton };
    Ok((estimate, GaussNewtonReport { status, iterations, objective: best.1.as_f64() }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::load_case;
    use crate::measurements::{sample_measurements, MeasurementKind, MeasurementPlan, NoiseConfig};
    use crate::netmodel::{build_admittance, spanning_subgraph, TreeStrategy};
    use crate::recovery::xi;

    #[test]
    fn jacobian_matches_finite_differences() {
        let c = load_case::<f64>("tb3").unwrap();
        let m = build_admittance(&c);
        let kinds = [MeasurementKind::PInj(1), MeasurementKind::QFrom(0), MeasurementKind::PTo(1), MeasurementKind::VoltageSq(2)];
        let mats: Vec<_> = kinds.iter().map(|&k| crate::measurements::build_matrix(&m, k).unwrap()).collect();
        let th = [0.0, -0.1, -0.2];
        let mg = [1.0, 0.98, 0.97];
        let v: Vec<_> = (0..3).map(|k| scalar::polar(mg[k], th[k])).collect();
        let (h0, jac) = linearize(&mats, &v, 0);
        let eps = 1e-7;
        for col in 0..5 {
            let (mut t2, mut m2) = (th, mg);
            if col < 2 {
                t2[col + 1] += eps;
            } else {
                m2[col - 2] += eps;
            }
            let v2: Vec<_> = (0..3).map(|k| scalar::polar(m2[k], t2[k])).collect();
            let (h1, _) = linearize(&mats, &v2, 0);
            for j in 0..4 {
                let fd = (h1[j] - h0[j]) / eps;
                assert!((fd - jac[(j, col)]).abs() < 1e-5, "row {j} col {col}: {fd} vs {}", jac[(j, col)]);
            }
        }
    }

    #[test]
    fn noiseless_tb2_converges() {
        let c = load_case::<f64>("tb2").unwrap();
        let m = build_admittance(&c);
        let e = spanning_subgraph(&c, &m, &TreeStrategy::MinWeightTree).unwrap();
        let mut plan = MeasurementPlan::voltage_and_flows(&e);
        plan.extra = vec![MeasurementKind::QFrom(0), MeasurementKind::PInj(1)];
        let ms = sample_measurements(&m, &c.voltages(), &plan, &NoiseConfig::noiseless()).unwrap();
        let (est, rep) = gauss_newton_wls(&ms, &m, 0, &GaussNewtonConfig::default(), None).unwrap();
        assert_eq!(rep.status, GaussNewtonStatus::Converged);
        assert!(xi(&est.v, &c.voltages(), 0) <= 1e-8);
        assert!(rep.objective <= 1e-12);
    }

    #[test]
    fn magnitudes_only_is_unobservable() {
        let c = load_case::<f64>("tb3").unwrap();
        let m = build_admittance(&c);
        let plan = MeasurementPlan {
            voltage_all: true,
            tree_flows: None,
            extra: vec![MeasurementKind::VoltageSq(0), MeasurementKind::VoltageSq(1)],
        };
        let ms = sample_measurements(&m, &c.voltages(), &plan, &NoiseConfig::noiseless()).unwrap();
        let (_, rep) = gauss_newton_wls(&ms, &m, 0, &GaussNewtonConfig::default(), None).unwrap();
        assert_eq!(rep.status, GaussNewtonStatus::SingularGain);
    }

    #[test]
    fn too_few_measurements_is_an_error() {
        let c = load_case::<f64>("tb3").unwrap();
        let m = build_admittance(&c);
        let plan = MeasurementPlan { voltage_all: true, tree_flows: None, extra: vec![] };
        let ms = sample_measurements(&m, &c.voltages(), &plan, &NoiseConfig::noiseless()).unwrap();
        assert!(matches!(gauss_newton_wls(&ms, &m, 0, &GaussNewtonConfig::default(), None), Err(Error::Estimator(_))));
    }
}
