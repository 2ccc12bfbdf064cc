//! Lifted conic programs over a Hermitian matrix variable `X`.
//!
//! A [`ConicProgram`] states `min Tr(M0 X) + penalty(nu)` subject to
//! `Tr(M_j X) + nu_j = z_j` and a PSD-type constraint on `X`, where `nu_j` is
//! fixed to zero for constraints without slack. [`solve`] maps the program to
//! real form and runs the built-in interior-point method.
//!
//! Dual convention: the returned multipliers `mu` satisfy
//! `H(mu) = M0 + sum_j mu_j M_j >= 0` and the dual objective is `-z'mu`.

pub mod chordal;
pub mod ipm;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::HermitianSparse;
use ipm::{Cone, ConeProblem, Pos, Settings, Term};

pub use chordal::{tree_decomposition, TreeDecomposition};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConeStructure {
    FullPsd,
    /// Each bag's principal submatrix is PSD.
    PsdBags(Vec<Vec<usize>>),
    /// Each listed 2x2 principal submatrix `(s, t)` is PSD.
    TwoByTwo(Vec<(usize, usize)>),
}

/// Penalty on the slack vector; weights are aligned with the constraints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", rename_all = "snake_case")]
pub enum SlackPenalty<T: Scalar> {
    None,
    /// `sum_j w_j |nu_j|`.
    Wlav(Vec<T>),
    /// `sum_j w_j nu_j^2`.
    Wls(Vec<T>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Constraint<T: Scalar> {
    pub matrix: HermitianSparse<T>,
    pub rhs: T,
    pub slack: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ConicProgram<T: Scalar> {
    pub n: usize,
    pub objective: HermitianSparse<T>,
    pub penalty: SlackPenalty<T>,
    pub constraints: Vec<Constraint<T>>,
    pub cones: ConeStructure,
}

impl<T: Scalar> ConicProgram<T> {
    /// Off-diagonal positions `(i, j)`, `i < j`, used by the objective or any constraint.
    pub fn sparsity_edges(&self) -> Vec<(usize, usize)> {
        let mut set: BTreeSet<(usize, usize)> = self.objective.support().into_iter().collect();
        for c in &self.constraints {
            set.extend(c.matrix.support());
        }
        set.into_iter().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if self.objective.dim() != n || self.constraints.iter().any(|c| c.matrix.dim() != n) {
            return Err(Error::Program("matrix dimension does not match the program".into()));
        }
        let weights = match &self.penalty {
            SlackPenalty::None => None,
            SlackPenalty::Wlav(w) | SlackPenalty::Wls(w) => Some(w),
        };
        match weights {
            None => {
                if self.constraints.iter().any(|c| c.slack) {
                    return Err(Error::Program("slack allowed but no penalty given".into()));
                }
            }
            Some(w) => {
                if w.len() != self.constraints.len() {
                    return Err(Error::Program("penalty weights do not match the constraint count".into()));
                }
                if self.constraints.iter().zip(w).any(|(c, w)| c.slack && *w <= T::zero()) {
                    return Err(Error::Program("slack penalty weights must be positive".into()));
                }
            }
        }
        match &self.cones {
            ConeStructure::FullPsd => {}
            ConeStructure::PsdBags(bags) => {
                if bags.iter().flatten().any(|&k| k >= n) {
                    return Err(Error::Program("bag index out of range".into()));
                }
                let cover: BTreeSet<(usize, usize)> = bags
                    .iter()
                    .flat_map(|b| {
                        b.iter().flat_map(move |&i| b.iter().filter(move |&&j| i < j).map(move |&j| (i, j)))
                    })
                    .collect();
                if let Some(e) = self.sparsity_edges().into_iter().find(|e| !cover.contains(e)) {
                    return Err(Error::Program(format!("entry {e:?} is not inside any bag")));
                }
            }
            ConeStructure::TwoByTwo(edges) => {
                if edges.iter().any(|&(s, t)| s >= n || t >= n || s == t) {
                    return Err(Error::Program("2x2 cone edge out of range".into()));
                }
                let listed: BTreeSet<(usize, usize)> = edges.iter().map(|&(s, t)| (s.min(t), s.max(t))).collect();
                if let Some(e) = self.sparsity_edges().into_iter().find(|e| !listed.contains(e)) {
                    return Err(Error::Program(format!(
                        "entry {e:?} is referenced but not covered by a 2x2 cone"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of real scalar variables the real form allocates.
    pub fn real_variable_count(&self) -> Result<usize> {
        let form = to_real(self)?;
        Ok(form
            .problem
            .cones
            .iter()
            .map(|c| match *c {
                Cone::NonNeg(k) | Cone::SecondOrder(k) => k,
                Cone::Psd(k) => k * (k + 1) / 2,
            })
            .sum())
    }

    /// JSON interchange: objective and constraint triplets `[i, j, re, im]`
    /// (upper triangle, 0-based), right-hand sides, slack flags, penalty and cones.
    pub fn export_json(&self) -> Result<String> {
        let trip = |m: &HermitianSparse<T>| -> Vec<[f64; 4]> {
            let mut out: Vec<[f64; 4]> =
                m.diagonal().map(|(k, v)| [k as f64, k as f64, v.as_f64(), 0.0]).collect();
            out.extend(m.upper().map(|((i, j), v)| [i as f64, j as f64, v.re.as_f64(), v.im.as_f64()]));
            out
        };
        let doc = serde_json::json!({
            "n": self.n,
            "objective": trip(&self.objective),
            "constraints": self.constraints.iter().map(|c| serde_json::json!({
                "triplets": trip(&c.matrix),
                "rhs": c.rhs.as_f64(),
                "slack": c.slack,
            })).collect::<Vec<_>>(),
            "penalty": match &self.penalty {
                SlackPenalty::None => serde_json::json!({"kind": "none"}),
                SlackPenalty::Wlav(w) => serde_json::json!({"kind": "wlav", "weights": w.iter().map(|x| x.as_f64()).collect::<Vec<_>>()}),
                SlackPenalty::Wls(w) => serde_json::json!({"kind": "wls", "weights": w.iter().map(|x| x.as_f64()).collect::<Vec<_>>()}),
            },
            "cones": &self.cones,
        });
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// Replaces the full PSD constraint by PSD constraints on the maximal
/// cliques of a chordal extension of the sparsity graph.
pub fn decompose<T: Scalar>(program: &ConicProgram<T>) -> ConicProgram<T> {
    let bags = chordal::chordal_bags(program.n, &program.sparsity_edges());
    ConicProgram { cones: ConeStructure::PsdBags(bags), ..program.clone() }
}

// ---------------------------------------------------------------------------
// Real form

/// Scalar coordinates of a Hermitian entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Entry {
    Diag(usize),
    Re(usize, usize),
    Im(usize, usize),
}

#[derive(Clone, Debug)]
enum SlackVars {
    Split { block: usize, plus: usize, minus: usize },
    Epigraph { block: usize, pos: usize, scale: f64 },
}

/// Real conic problem plus the bookkeeping to read Hermitian entries back.
#[derive(Clone, Debug)]
pub struct RealForm<T: Scalar> {
    pub problem: ConeProblem<T>,
    /// Canonical real expression of each covered Hermitian entry.
    pub entries: BTreeMap<Entry, Vec<Term<T>>>,
    /// Row index of constraint `j`.
    pub constraint_rows: Vec<usize>,
    slacks: Vec<Option<SlackVars>>,
}

impl<T: Scalar> RealForm<T> {
    /// Hermitian entry `(i, j)` of `X` read from a real point, if covered.
    pub fn entry(&self, x: &ipm::Point<T>, i: usize, j: usize) -> Option<Complex<T>> {
        let get = |e: Entry| self.entries.get(&e).map(|t| ipm::evaluate(t, x));
        if i == j {
            return get(Entry::Diag(i)).map(|d| Complex::new(d, T::zero()));
        }
        let (a, b) = (i.min(j), i.max(j));
        let z = Complex::new(get(Entry::Re(a, b))?, get(Entry::Im(a, b))?);
        Some(if i < j { z } else { z.conj() })
    }

    fn slack_value(&self, x: &ipm::Point<T>, j: usize) -> T {
        match &self.slacks[j] {
            None => T::zero(),
            Some(SlackVars::Split { block, plus, minus }) => {
                let v = x[*block].vec();
                v[*plus] - v[*minus]
            }
            Some(SlackVars::Epigraph { block, pos, scale }) => x[*block].vec()[*pos] * T::lit(*scale),
        }
    }
}

fn hermitian_block_entries<T: Scalar>(bag: &[usize], block: usize, out: &mut BTreeMap<Entry, Vec<Vec<Term<T>>>>) {
    let k = bag.len();
    let h = T::lit(0.5);
    let t = |p: usize, q: usize, val: T| Term { block, pos: Pos::sym(p, q), val };
    for a in 0..k {
        out.entry(Entry::Diag(bag[a])).or_default().push(vec![t(a, a, h), t(k + a, k + a, h)]);
        for b in a + 1..k {
            let (i, j) = (bag[a], bag[b]);
            out.entry(Entry::Re(i, j)).or_default().push(vec![t(a, b, h), t(k + a, k + b, h)]);
            out.entry(Entry::Im(i, j)).or_default().push(vec![t(k + a, b, h), t(a, k + b, -h)]);
        }
    }
}

/// Maps every Hermitian PSD block of size `k` to a real `2k x 2k` PSD block
/// `[[Re, -Im], [Im, Re]]` and every 2x2 edge cone to a 4-dimensional
/// second-order cone; entries shared between blocks are tied by equalities.
pub fn to_real<T: Scalar>(program: &ConicProgram<T>) -> Result<RealForm<T>> {
    program.validate()?;
    let n = program.n;
    let mut cones = Vec::new();
    let mut exprs: BTreeMap<Entry, Vec<Vec<Term<T>>>> = BTreeMap::new();
    let h = T::lit(0.5);
    match &program.cones {
        ConeStructure::FullPsd => {
            let bag: Vec<usize> = (0..n).collect();
            hermitian_block_entries(&bag, 0, &mut exprs);
            cones.push(Cone::Psd(2 * n));
        }
        ConeStructure::PsdBags(bags) => {
            for bag in bags {
                let mut sorted = bag.clone();
                sorted.sort_unstable();
                sorted.dedup();
                hermitian_block_entries(&sorted, cones.len(), &mut exprs);
                cones.push(Cone::Psd(2 * sorted.len()));
            }
        }
        ConeStructure::TwoByTwo(edges) => {
            let mut seen = BTreeSet::new();
            for &(s, t) in edges {
                let (s, t) = (s.min(t), s.max(t));
                if !seen.insert((s, t)) {
                    continue;
                }
                let block = cones.len();
                let lin = |i: usize, val: T| Term { block, pos: Pos::Lin(i), val };
                exprs.entry(Entry::Diag(s)).or_default().push(vec![lin(0, h), lin(1, h)]);
                exprs.entry(Entry::Diag(t)).or_default().push(vec![lin(0, h), lin(1, -h)]);
                exprs.entry(Entry::Re(s, t)).or_default().push(vec![lin(2, h)]);
                exprs.entry(Entry::Im(s, t)).or_default().push(vec![lin(3, h)]);
                cones.push(Cone::SecondOrder(4));
            }
        }
    }
    for k in 0..n {
        if !exprs.contains_key(&Entry::Diag(k)) {
            let block = cones.len();
            exprs.insert(Entry::Diag(k), vec![vec![Term { block, pos: Pos::Lin(0), val: T::one() }]]);
            cones.push(Cone::NonNeg(1));
        }
    }

    let mut rows: Vec<Vec<Term<T>>> = Vec::new();
    let mut b = Vec::new();
    let mut entries = BTreeMap::new();
    for (e, list) in exprs {
        let canonical = list[0].clone();
        for other in &list[1..] {
            let mut row = other.clone();
            row.extend(canonical.iter().map(|t| Term { val: -t.val, ..*t }));
            rows.push(row);
            b.push(T::zero());
        }
        entries.insert(e, canonical);
    }

    let functional = |m: &HermitianSparse<T>| -> Result<Vec<Term<T>>> {
        let two = T::lit(2.0);
        let mut out = Vec::new();
        let mut push = |e: Entry, coef: T| -> Result<()> {
            if coef == T::zero() {
                return Ok(());
            }
            let expr = entries.get(&e).ok_or_else(|| Error::Program(format!("entry {e:?} not covered by any cone")))?;
            out.extend(expr.iter().map(|t| Term { val: t.val * coef, ..*t }));
            Ok(())
        };
        for (k, d) in m.diagonal() {
            push(Entry::Diag(k), d)?;
        }
        for ((i, j), v) in m.upper() {
            push(Entry::Re(i, j), two * v.re)?;
            push(Entry::Im(i, j), two * v.im)?;
        }
        Ok(out)
    };

    let mut c = functional(&program.objective)?;
    let mut constraint_rows = Vec::with_capacity(program.constraints.len());
    for con in &program.constraints {
        constraint_rows.push(rows.len());
        rows.push(functional(&con.matrix)?);
        b.push(con.rhs);
    }

    let mut slacks: Vec<Option<SlackVars>> = vec![None; program.constraints.len()];
    let slackable: Vec<usize> = (0..program.constraints.len()).filter(|&j| program.constraints[j].slack).collect();
    if !slackable.is_empty() {
        let block = cones.len();
        match &program.penalty {
            SlackPenalty::Wlav(w) => {
                cones.push(Cone::NonNeg(2 * slackable.len()));
                for (q, &j) in slackable.iter().enumerate() {
                    let (plus, minus) = (2 * q, 2 * q + 1);
                    rows[constraint_rows[j]].push(Term { block, pos: Pos::Lin(plus), val: T::one() });
                    rows[constraint_rows[j]].push(Term { block, pos: Pos::Lin(minus), val: -T::one() });
                    c.push(Term { block, pos: Pos::Lin(plus), val: w[j] });
                    c.push(Term { block, pos: Pos::Lin(minus), val: w[j] });
                    slacks[j] = Some(SlackVars::Split { block, plus, minus });
                }
            }
            SlackPenalty::Wls(w) => {
                // (u0, u1, omega) in SOC with u0 - u1 = 1 gives u0 + u1 >= |omega|^2;
                // nu_j = omega_j / sqrt(w_j)
                cones.push(Cone::SecondOrder(2 + slackable.len()));
                for (q, &j) in slackable.iter().enumerate() {
                    let scale = T::one() / w[j].sqrt();
                    rows[constraint_rows[j]].push(Term { block, pos: Pos::Lin(2 + q), val: scale });
                    slacks[j] = Some(SlackVars::Epigraph { block, pos: 2 + q, scale: scale.as_f64() });
                }
                rows.push(vec![Term { block, pos: Pos::Lin(0), val: T::one() }, Term { block, pos: Pos::Lin(1), val: -T::one() }]);
                b.push(T::one());
                c.push(Term { block, pos: Pos::Lin(0), val: T::one() });
                c.push(Term { block, pos: Pos::Lin(1), val: T::one() });
            }
            SlackPenalty::None => unreachable!("validated"),
        }
    }

    Ok(RealForm { problem: ConeProblem { cones, c, rows, b }, entries, constraint_rows, slacks })
}

// ---------------------------------------------------------------------------
// Solve

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// Solved to within `1e3 * tol` after the iteration stalled.
    AlmostOptimal,
    Infeasible,
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_solved(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::AlmostOptimal)
    }
}

#[derive(Clone, Debug)]
pub struct ConicSolution<T: Scalar> {
    pub n: usize,
    /// Entries `(i, j)`, `i <= j`, available from the cone blocks.
    pub x: BTreeMap<(usize, usize), Complex<T>>,
    /// Slack per constraint, zero where no slack is allowed.
    pub nu: Vec<T>,
    /// Equality multipliers, sign convention `H(mu) = M0 + sum mu_j M_j`.
    pub mu: Vec<T>,
    pub objective: T,
    pub dual_objective: T,
    pub status: SolveStatus,
    pub primal_residual: T,
    pub dual_residual: T,
    pub gap: T,
    pub iterations: usize,
}

impl<T: Scalar> ConicSolution<T> {
    /// Entry `(i, j)` of `X` if it is part of the solution.
    pub fn entry(&self, i: usize, j: usize) -> Option<Complex<T>> {
        if i <= j {
            self.x.get(&(i, j)).copied()
        } else {
            self.x.get(&(j, i)).map(|z| z.conj())
        }
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.n).map(|k| self.entry(k, k).map(|z| z.re).unwrap_or_else(T::zero)).collect()
    }

    /// Dense `X`, or `None` when some entry is not determined (decomposed or SOC forms).
    pub fn dense(&self) -> Option<DMatrix<Complex<T>>> {
        let n = self.n;
        let mut d = DMatrix::from_element(n, n, Complex::default());
        for i in 0..n {
            for j in i..n {
                let z = self.entry(i, j)?;
                d[(i, j)] = z;
                d[(j, i)] = z.conj();
            }
        }
        Some(d)
    }

    /// `Tr(M X)` over the stored entries.
    pub fn trace_with(&self, m: &HermitianSparse<T>) -> T {
        m.trace_with(|i, j| self.entry(i, j).unwrap_or_default())
    }
}

/// `H(mu) = M0 + sum_j mu_j M_j`.
pub fn dual_matrix<T: Scalar>(program: &ConicProgram<T>, mu: &[T]) -> HermitianSparse<T> {
    let mut h = program.objective.clone();
    for (c, m) in program.constraints.iter().zip(mu) {
        h.add_scaled(&c.matrix, *m);
    }
    h
}

pub fn solve<T: Scalar>(program: &ConicProgram<T>, tol: T) -> Result<ConicSolution<T>> {
    let form = to_real(program)?;
    let res = ipm::solve(&form.problem, &Settings { tol, ..Settings::default() });
    let status = match res.status {
        ipm::Status::Optimal => SolveStatus::Optimal,
        ipm::Status::AlmostOptimal => SolveStatus::AlmostOptimal,
        ipm::Status::PrimalInfeasible | ipm::Status::DualInfeasible => SolveStatus::Infeasible,
        ipm::Status::MaxIterations | ipm::Status::NumericalFailure => SolveStatus::NumericalFailure,
    };
    if !status.is_solved() {
        log::warn!("conic solve ended with {:?} after {} iterations", res.status, res.iterations);
    }
    let mut x = BTreeMap::new();
    for e in form.entries.keys() {
        let (i, j) = match *e {
            Entry::Diag(k) => (k, k),
            Entry::Re(i, j) | Entry::Im(i, j) => (i, j),
        };
        if let std::collections::btree_map::Entry::Vacant(slot) = x.entry((i, j)) {
            if let Some(z) = form.entry(&res.x, i, j) {
                slot.insert(z);
            }
        }
    }
    let nu = (0..program.constraints.len()).map(|j| form.slack_value(&res.x, j)).collect();
    let mu = form.constraint_rows.iter().map(|&r| -res.y[r]).collect();
    Ok(ConicSolution {
        n: program.n,
        x,
        nu,
        mu,
        objective: res.primal_obj,
        dual_objective: res.dual_obj,
        status,
        primal_residual: res.primal_res,
        dual_residual: res.dual_res,
        gap: res.gap,
        iterations: res.iterations,
    })
}
