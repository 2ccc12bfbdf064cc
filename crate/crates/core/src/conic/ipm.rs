//! Primal-dual interior-point method for real linear conic programs
//!
//! ```text
//! minimize c'x  subject to  A x = b,  x in K
//! ```
//!
//! where `K` is a product of nonnegative orthants, second-order cones
//! `{(x0, x1) : x0 >= |x1|}` and real symmetric PSD cones. Uses
//! Nesterov-Todd scaling with Mehrotra's predictor-corrector, an infeasible
//! start, and a dense Cholesky factorization of the Schur complement
//! `A W^2 A'`. Linearly dependent equality rows are removed up front; an
//! inconsistent dependent row is reported as primal infeasibility.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cone {
    NonNeg(usize),
    SecondOrder(usize),
    /// Symmetric `n x n` block.
    Psd(usize),
}

impl Cone {
    fn degree(self) -> usize {
        match self {
            Cone::NonNeg(n) | Cone::Psd(n) => n,
            Cone::SecondOrder(_) => 1,
        }
    }
}

/// Position inside a block: a vector slot or the symmetric entry `(p, q)`, `p <= q`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pos {
    Lin(usize),
    Sym(usize, usize),
}

impl Pos {
    pub fn sym(p: usize, q: usize) -> Self {
        Pos::Sym(p.min(q), p.max(q))
    }
}

/// `val * x[block][pos]`; on a PSD block `Sym(p, q)` refers to the single
/// matrix entry, so the functional is `<C, X>` with `C_pq = C_qp = val / 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Term<T> {
    pub block: usize,
    pub pos: Pos,
    pub val: T,
}

#[derive(Clone, Debug)]
pub struct ConeProblem<T: Scalar> {
    pub cones: Vec<Cone>,
    pub c: Vec<Term<T>>,
    pub rows: Vec<Vec<Term<T>>>,
    pub b: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct Settings<T> {
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Scalar> Default for Settings<T> {
    fn default() -> Self {
        Self { tol: T::lit(1e-8), max_iter: 200 }
    }
}

/// Accuracy loss near degenerate optima can stall the iteration short of
/// `tol`; the best iterate is still reported if it is this close.
pub const REDUCED_FACTOR: f64 = 1e3;

/// Iterations without improving `max(pres, dres, gap)`, once it is below
/// `sqrt(tol)`, before giving up.
const STALL_LIMIT: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Optimal,
    /// Stalled or broke down with all measures within `REDUCED_FACTOR * tol`.
    AlmostOptimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
    NumericalFailure,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Block<T: Scalar> {
    Vec(DVector<T>),
    Mat(DMatrix<T>),
}

impl<T: Scalar> Block<T> {
    fn zeros(cone: Cone) -> Self {
        match cone {
            Cone::NonNeg(n) | Cone::SecondOrder(n) => Block::Vec(DVector::zeros(n)),
            Cone::Psd(n) => Block::Mat(DMatrix::zeros(n, n)),
        }
    }

    fn identity(cone: Cone) -> Self {
        match cone {
            Cone::NonNeg(n) => Block::Vec(DVector::from_element(n, T::one())),
            Cone::SecondOrder(n) => {
                let mut v = DVector::zeros(n);
                v[0] = T::one();
                Block::Vec(v)
            }
            Cone::Psd(n) => Block::Mat(DMatrix::identity(n, n)),
        }
    }

    pub fn vec(&self) -> &DVector<T> {
        match self {
            Block::Vec(v) => v,
            Block::Mat(_) => panic!("expected a vector block"),
        }
    }

    pub fn mat(&self) -> &DMatrix<T> {
        match self {
            Block::Mat(m) => m,
            Block::Vec(_) => panic!("expected a matrix block"),
        }
    }

    pub fn get(&self, pos: Pos) -> T {
        match (self, pos) {
            (Block::Vec(v), Pos::Lin(i)) => v[i],
            (Block::Mat(m), Pos::Sym(p, q)) => m[(p, q)],
            _ => panic!("position {pos:?} does not match block kind"),
        }
    }

    fn dot(&self, other: &Self) -> T {
        match (self, other) {
            (Block::Vec(a), Block::Vec(b)) => a.dot(b),
            (Block::Mat(a), Block::Mat(b)) => a.dot(b),
            _ => panic!("block kind mismatch"),
        }
    }

    fn axpy(&mut self, alpha: T, other: &Self) {
        match (self, other) {
            (Block::Vec(a), Block::Vec(b)) => a.axpy(alpha, b, T::one()),
            (Block::Mat(a), Block::Mat(b)) => *a += b * alpha,
            _ => panic!("block kind mismatch"),
        }
    }

    fn scaled(&self, s: T) -> Self {
        match self {
            Block::Vec(a) => Block::Vec(a * s),
            Block::Mat(a) => Block::Mat(a * s),
        }
    }

    fn sub(&self, other: &Self) -> Self {
        match (self, other) {
            (Block::Vec(a), Block::Vec(b)) => Block::Vec(a - b),
            (Block::Mat(a), Block::Mat(b)) => Block::Mat(a - b),
            _ => panic!("block kind mismatch"),
        }
    }

    fn norm_sq(&self) -> T {
        self.dot(self)
    }
}

pub type Point<T> = Vec<Block<T>>;

fn dot<T: Scalar>(a: &Point<T>, b: &Point<T>) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + x.dot(y))
}

fn norm<T: Scalar>(a: &Point<T>) -> T {
    a.iter().fold(T::zero(), |acc, x| acc + x.norm_sq()).sqrt()
}

fn axpy<T: Scalar>(a: &mut Point<T>, alpha: T, b: &Point<T>) {
    for (x, y) in a.iter_mut().zip(b) {
        x.axpy(alpha, y);
    }
}

fn sub<T: Scalar>(a: &Point<T>, b: &Point<T>) -> Point<T> {
    a.iter().zip(b).map(|(x, y)| x.sub(y)).collect()
}

#[derive(Clone, Debug)]
pub struct IpmResult<T: Scalar> {
    pub status: Status,
    pub x: Point<T>,
    /// One multiplier per original row (zero for rows removed as dependent).
    pub y: Vec<T>,
    pub s: Point<T>,
    pub primal_obj: T,
    pub dual_obj: T,
    pub iterations: usize,
    /// Relative primal residual `|Ax - b| / (1 + |b|)`.
    pub primal_res: T,
    /// Relative dual residual `|c - A'y - s| / (1 + |c|)`.
    pub dual_res: T,
    /// Relative duality gap.
    pub gap: T,
}

// ---------------------------------------------------------------------------
// Operator over the variable space

#[derive(Clone, Debug)]
struct Operator<T: Scalar> {
    cones: Vec<Cone>,
    rows: Vec<Vec<Term<T>>>,
    /// For each block: rows touching it with their terms in that block.
    by_block: Vec<Vec<(usize, Vec<(Pos, T)>)>>,
}

/// Merges duplicate positions and drops zeros.
fn canonical<T: Scalar>(terms: &[Term<T>]) -> Vec<Term<T>> {
    let mut sorted: Vec<Term<T>> = terms.to_vec();
    for t in &mut sorted {
        if let Pos::Sym(p, q) = t.pos {
            t.pos = Pos::sym(p, q);
        }
    }
    sorted.sort_by(|a, b| (a.block, a.pos).cmp(&(b.block, b.pos)));
    let mut out: Vec<Term<T>> = Vec::with_capacity(sorted.len());
    for t in sorted {
        match out.last_mut() {
            Some(last) if last.block == t.block && last.pos == t.pos => last.val += t.val,
            _ => out.push(t),
        }
    }
    out.retain(|t| t.val != T::zero());
    out
}

impl<T: Scalar> Operator<T> {
    fn new(cones: Vec<Cone>, rows: Vec<Vec<Term<T>>>) -> Self {
        let mut by_block: Vec<Vec<(usize, Vec<(Pos, T)>)>> = vec![Vec::new(); cones.len()];
        for (i, row) in rows.iter().enumerate() {
            let mut start = 0;
            while start < row.len() {
                let blk = row[start].block;
                let mut end = start;
                while end < row.len() && row[end].block == blk {
                    end += 1;
                }
                by_block[blk].push((i, row[start..end].iter().map(|t| (t.pos, t.val)).collect()));
                start = end;
            }
        }
        Self { cones, rows, by_block }
    }

    fn m(&self) -> usize {
        self.rows.len()
    }

    fn zeros(&self) -> Point<T> {
        self.cones.iter().map(|&c| Block::zeros(c)).collect()
    }

    fn apply(&self, x: &Point<T>) -> DVector<T> {
        DVector::from_iterator(
            self.m(),
            self.rows.iter().map(|row| row.iter().fold(T::zero(), |acc, t| acc + t.val * x[t.block].get(t.pos))),
        )
    }

    fn apply_t(&self, y: &DVector<T>) -> Point<T> {
        let mut out = self.zeros();
        for (i, row) in self.rows.iter().enumerate() {
            for t in row {
                add_term(&mut out[t.block], t.pos, t.val * y[i]);
            }
        }
        out
    }

    fn functional(&self, terms: &[Term<T>]) -> Point<T> {
        let mut out = self.zeros();
        for t in terms {
            add_term(&mut out[t.block], t.pos, t.val);
        }
        out
    }
}

fn add_term<T: Scalar>(b: &mut Block<T>, pos: Pos, v: T) {
    match (b, pos) {
        (Block::Vec(x), Pos::Lin(i)) => x[i] += v,
        (Block::Mat(m), Pos::Sym(p, q)) => {
            if p == q {
                m[(p, p)] += v;
            } else {
                let h = v * T::lit(0.5);
                m[(p, q)] += h;
                m[(q, p)] += h;
            }
        }
        _ => panic!("position {pos:?} does not match block kind"),
    }
}

/// Inner product of two canonical functionals under the trace metric.
fn term_gram<T: Scalar>(rows: &[Vec<Term<T>>]) -> DMatrix<T> {
    let m = rows.len();
    let mut by_key: BTreeMap<(usize, Pos), Vec<(usize, T)>> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        for t in row {
            let w = match t.pos {
                Pos::Sym(p, q) if p != q => t.val * T::lit(0.5f64.sqrt()),
                _ => t.val,
            };
            by_key.entry((t.block, t.pos)).or_default().push((i, w));
        }
    }
    let mut g = DMatrix::zeros(m, m);
    for list in by_key.values() {
        for &(i, a) in list {
            for &(j, b) in list {
                g[(i, j)] += a * b;
            }
        }
    }
    g
}

enum Presolve<T: Scalar> {
    Keep(Vec<usize>),
    /// Farkas-type certificate over the original rows.
    Inconsistent(Vec<T>),
}

/// Greedy independent row selection through a left-looking Cholesky of the Gram matrix.
fn independent_rows<T: Scalar>(rows: &[Vec<Term<T>>], b: &[T], tol: T) -> Presolve<T> {
    let m = rows.len();
    let g = term_gram(rows);
    let mut keep: Vec<usize> = Vec::new();
    // l[k] holds the row of the factor for row k restricted to kept rows
    let mut l: Vec<Vec<T>> = Vec::new();
    for k in 0..m {
        let gkk = g[(k, k)];
        if gkk <= T::zero() {
            if b[k].abs() > tol {
                let mut y = vec![T::zero(); m];
                y[k] = T::one();
                return Presolve::Inconsistent(y);
            }
            continue;
        }
        let mut lk = vec![T::zero(); keep.len()];
        for (jj, &j) in keep.iter().enumerate() {
            let mut v = g[(k, j)];
            for i in 0..jj {
                v -= lk[i] * l[jj][i];
            }
            lk[jj] = v / l[jj][jj];
        }
        let d = gkk - lk.iter().fold(T::zero(), |a, x| a + *x * *x);
        if d > tol * gkk {
            let mut row = lk;
            row.push(d.sqrt());
            l.push(row);
            keep.push(k);
            continue;
        }
        // dependent: a_k = sum lambda_j a_j with lambda = L^{-T} lk
        let r = keep.len();
        let mut lambda = lk.clone();
        for i in (0..r).rev() {
            let mut v = lambda[i];
            for j in i + 1..r {
                v -= l[j][i] * lambda[j];
            }
            lambda[i] = v / l[i][i];
        }
        let predicted = keep.iter().zip(&lambda).fold(T::zero(), |a, (&j, &c)| a + c * b[j]);
        let scale = T::one() + b[k].abs() + keep.iter().zip(&lambda).fold(T::zero(), |a, (&j, &c)| a + (c * b[j]).abs());
        if (b[k] - predicted).abs() > T::lit(1e-7) * scale {
            let mut y = vec![T::zero(); m];
            y[k] = T::one();
            for (&j, &c) in keep.iter().zip(&lambda) {
                y[j] = -c;
            }
            return Presolve::Inconsistent(y);
        }
        log::debug!("dropping equality row {k} as linearly dependent");
    }
    Presolve::Keep(keep)
}

// ---------------------------------------------------------------------------
// Nesterov-Todd scaling

enum Scaling<T: Scalar> {
    NonNeg { w: DVector<T>, lambda: DVector<T> },
    Soc { eta: T, wbar: DVector<T>, lambda: DVector<T> },
    Psd { r: DMatrix<T>, w: DMatrix<T>, lambda: DVector<T> },
}

fn jdot<T: Scalar>(a: &DVector<T>, b: &DVector<T>) -> T {
    a[0] * b[0] - a.rows(1, a.len() - 1).dot(&b.rows(1, b.len() - 1))
}

/// Hyperbolic reflection `Wbar g` for a unit `J`-norm vector `wbar`.
fn soc_wbar_apply<T: Scalar>(wbar: &DVector<T>, g: &DVector<T>) -> DVector<T> {
    let n = g.len();
    let w1 = wbar.rows(1, n - 1);
    let g1 = g.rows(1, n - 1);
    let d = w1.dot(&g1);
    let mut out = DVector::zeros(n);
    out[0] = wbar[0] * g[0] + d;
    let coef = g[0] + d / (T::one() + wbar[0]);
    for i in 1..n {
        out[i] = g[i] + coef * wbar[i];
    }
    out
}

impl<T: Scalar> Scaling<T> {
    fn new(cone: Cone, x: &Block<T>, s: &Block<T>) -> Option<Self> {
        match cone {
            Cone::NonNeg(_) => {
                let (x, s) = (x.vec(), s.vec());
                if x.iter().chain(s.iter()).any(|v| *v <= T::zero()) {
                    return None;
                }
                let w = x.zip_map(s, |a, b| (a / b).sqrt());
                let lambda = x.zip_map(s, |a, b| (a * b).sqrt());
                Some(Scaling::NonNeg { w, lambda })
            }
            Cone::SecondOrder(_) => {
                let (x, s) = (x.vec(), s.vec());
                let xj = jdot(x, x);
                let sj = jdot(s, s);
                if xj <= T::zero() || sj <= T::zero() || x[0] <= T::zero() || s[0] <= T::zero() {
                    return None;
                }
                let (xn, sn) = (xj.sqrt(), sj.sqrt());
                let xb = x / xn;
                let sb = s / sn;
                let gamma = ((T::one() + xb.dot(&sb)) * T::lit(0.5)).sqrt();
                let mut wbar = xb.clone();
                wbar[0] += sb[0];
                for i in 1..wbar.len() {
                    wbar[i] -= sb[i];
                }
                wbar /= T::lit(2.0) * gamma;
                let eta = (xn / sn).sqrt();
                let lambda = soc_wbar_apply(&wbar, s) * eta;
                Some(Scaling::Soc { eta, wbar, lambda })
            }
            Cone::Psd(_) => {
                let lx = x.mat().clone().cholesky()?.unpack();
                let ls = s.mat().clone().cholesky()?.unpack();
                let svd = (ls.transpose() * &lx).svd(true, true);
                let v = svd.v_t?.transpose();
                let sig = svd.singular_values;
                if sig.iter().any(|v| *v <= T::zero()) {
                    return None;
                }
                let mut r = lx * v;
                for (j, sj) in sig.iter().enumerate() {
                    let f = T::one() / sj.sqrt();
                    r.column_mut(j).scale_mut(f);
                }
                let w = &r * r.transpose();
                Some(Scaling::Psd { r, w, lambda: sig })
            }
        }
    }

    fn lambda_block(&self) -> Block<T> {
        match self {
            Scaling::NonNeg { lambda, .. } | Scaling::Soc { lambda, .. } => Block::Vec(lambda.clone()),
            Scaling::Psd { lambda, .. } => Block::Mat(DMatrix::from_diagonal(lambda)),
        }
    }

    /// Scaled to original primal space.
    fn p_apply(&self, g: &Block<T>) -> Block<T> {
        match self {
            Scaling::NonNeg { w, .. } => Block::Vec(w.component_mul(g.vec())),
            Scaling::Soc { eta, wbar, .. } => Block::Vec(soc_wbar_apply(wbar, g.vec()) * *eta),
            Scaling::Psd { r, .. } => Block::Mat(r * g.mat() * r.transpose()),
        }
    }

    /// Original dual space to scaled.
    fn q_inv_apply(&self, d: &Block<T>) -> Block<T> {
        match self {
            Scaling::NonNeg { w, .. } => Block::Vec(w.component_mul(d.vec())),
            Scaling::Soc { eta, wbar, .. } => Block::Vec(soc_wbar_apply(wbar, d.vec()) * *eta),
            Scaling::Psd { r, .. } => Block::Mat(r.transpose() * d.mat() * r),
        }
    }

    fn w2_apply(&self, u: &Block<T>) -> Block<T> {
        match self {
            Scaling::NonNeg { w, .. } => Block::Vec(w.component_mul(w).component_mul(u.vec())),
            Scaling::Soc { eta, wbar, .. } => {
                let u = u.vec();
                let t = T::lit(2.0) * wbar.dot(u);
                let mut out = wbar * t;
                out[0] -= u[0];
                for i in 1..u.len() {
                    out[i] += u[i];
                }
                Block::Vec(out * (*eta * *eta))
            }
            Scaling::Psd { w, .. } => Block::Mat(w * u.mat() * w),
        }
    }

    /// Solves `lambda o u = r` for `u`.
    fn lambda_div(&self, rhs: &Block<T>) -> Block<T> {
        match self {
            Scaling::NonNeg { lambda, .. } => Block::Vec(rhs.vec().component_div(lambda)),
            Scaling::Soc { lambda, .. } => {
                let r = rhs.vec();
                let n = r.len();
                let l0 = lambda[0];
                let l1 = lambda.rows(1, n - 1);
                let r1 = r.rows(1, n - 1);
                let det = jdot(lambda, lambda);
                let u0 = (l0 * r[0] - l1.dot(&r1)) / det;
                let mut u = DVector::zeros(n);
                u[0] = u0;
                for i in 1..n {
                    u[i] = (r[i] - u0 * lambda[i]) / l0;
                }
                Block::Vec(u)
            }
            Scaling::Psd { lambda, .. } => {
                let r = rhs.mat();
                let n = lambda.len();
                let two = T::lit(2.0);
                Block::Mat(DMatrix::from_fn(n, n, |i, j| two * r[(i, j)] / (lambda[i] + lambda[j])))
            }
        }
    }
}

/// Jordan product in the scaled space.
fn jordan<T: Scalar>(cone: Cone, a: &Block<T>, b: &Block<T>) -> Block<T> {
    match cone {
        Cone::NonNeg(_) => Block::Vec(a.vec().component_mul(b.vec())),
        Cone::SecondOrder(n) => {
            let (a, b) = (a.vec(), b.vec());
            let mut out = DVector::zeros(n);
            out[0] = a.dot(b);
            for i in 1..n {
                out[i] = a[0] * b[i] + b[0] * a[i];
            }
            Block::Vec(out)
        }
        Cone::Psd(_) => {
            let p = a.mat() * b.mat();
            Block::Mat((&p + p.transpose()) * T::lit(0.5))
        }
    }
}

/// Largest step `alpha` keeping `lambda + alpha d` in the cone (capped at `cap`).
fn max_step<T: Scalar>(cone: Cone, lambda: &Block<T>, d: &Block<T>, cap: T) -> T {
    let mut alpha = cap;
    match cone {
        Cone::NonNeg(_) => {
            for (l, di) in lambda.vec().iter().zip(d.vec().iter()) {
                if *di < T::zero() {
                    alpha = alpha.min(-*l / *di);
                }
            }
        }
        Cone::SecondOrder(_) => {
            let (l, d) = (lambda.vec(), d.vec());
            let a = jdot(d, d);
            let b = jdot(l, d);
            let c = jdot(l, l);
            // f(t) = a t^2 + 2 b t + c with f(0) = c > 0
            let disc = b * b - a * c;
            let smallest_root = if a == T::zero() {
                if b < T::zero() {
                    Some(-c / (T::lit(2.0) * b))
                } else {
                    None
                }
            } else if disc < T::zero() {
                None
            } else {
                let sq = disc.sqrt();
                let q = if b >= T::zero() { -(b + sq) } else { -b + sq };
                let r1 = q / a;
                let r2 = if q != T::zero() { c / q } else { T::zero() };
                [r1, r2].into_iter().filter(|r| *r > T::zero()).reduce(|x, y| x.min(y))
            };
            if let Some(r) = smallest_root {
                alpha = alpha.min(r);
            }
            if d[0] < T::zero() {
                alpha = alpha.min(-l[0] / d[0]);
            }
        }
        Cone::Psd(_) => {
            let l = lambda.mat();
            let n = l.nrows();
            let inv_sqrt: Vec<T> = (0..n).map(|i| T::one() / l[(i, i)].sqrt()).collect();
            let dm = d.mat();
            let sdm = DMatrix::from_fn(n, n, |i, j| dm[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
            let sym = (&sdm + sdm.transpose()) * T::lit(0.5);
            let ev = sym.symmetric_eigenvalues();
            let min = ev.iter().copied().fold(T::max_value().unwrap_or_else(T::one), |a, b| a.min(b));
            if min < T::zero() {
                alpha = alpha.min(-T::one() / min);
            }
        }
    }
    alpha
}

// ---------------------------------------------------------------------------
// Driver

struct Scaled<T: Scalar> {
    op: Operator<T>,
    c: Point<T>,
    b: DVector<T>,
    keep: Vec<usize>,
    row_scale: Vec<T>,
    b_scale: T,
    c_scale: T,
}

fn prepare<T: Scalar>(prob: &ConeProblem<T>) -> Result<Scaled<T>, Vec<T>> {
    let rows: Vec<Vec<Term<T>>> = prob.rows.iter().map(|r| canonical(r)).collect();
    let keep = match independent_rows(&rows, &prob.b, T::lit(1e-9)) {
        Presolve::Keep(k) => k,
        Presolve::Inconsistent(y) => return Err(y),
    };
    let gram = term_gram(&rows);
    let mut kept_rows = Vec::with_capacity(keep.len());
    let mut b = Vec::with_capacity(keep.len());
    let mut row_scale = Vec::with_capacity(keep.len());
    for &i in &keep {
        let d = gram[(i, i)].sqrt();
        kept_rows.push(rows[i].iter().map(|t| Term { val: t.val / d, ..*t }).collect());
        b.push(prob.b[i] / d);
        row_scale.push(d);
    }
    let op = Operator::new(prob.cones.clone(), kept_rows);
    let mut b = DVector::from_vec(b);
    let mut c = op.functional(&canonical(&prob.c));
    let b_scale = b.amax().max(T::one());
    let c_scale = norm(&c).max(T::one());
    b /= b_scale;
    for blk in &mut c {
        *blk = blk.scaled(T::one() / c_scale);
    }
    Ok(Scaled { op, c, b, keep, row_scale, b_scale, c_scale })
}

fn schur<T: Scalar>(op: &Operator<T>, scalings: &[Scaling<T>]) -> DMatrix<T> {
    let m = op.m();
    let mut mat = DMatrix::zeros(m, m);
    for (k, cone) in op.cones.iter().enumerate() {
        let touching = &op.by_block[k];
        if touching.is_empty() {
            continue;
        }
        match (&scalings[k], cone) {
            (Scaling::NonNeg { w, .. }, _) => {
                let mut per_var: BTreeMap<usize, Vec<(usize, T)>> = BTreeMap::new();
                for (i, terms) in touching {
                    for (pos, v) in terms {
                        if let Pos::Lin(p) = pos {
                            per_var.entry(*p).or_default().push((*i, *v));
                        }
                    }
                }
                for (p, list) in per_var {
                    let w2 = w[p] * w[p];
                    for &(i, a) in &list {
                        for &(j, b) in &list {
                            mat[(i, j)] += a * b * w2;
                        }
                    }
                }
            }
            (sc @ Scaling::Soc { .. }, Cone::SecondOrder(n)) => {
                let dense: Vec<DVector<T>> = touching
                    .iter()
                    .map(|(_, terms)| {
                        let mut v = DVector::zeros(*n);
                        for (pos, val) in terms {
                            if let Pos::Lin(p) = pos {
                                v[*p] += *val;
                            }
                        }
                        v
                    })
                    .collect();
                for (jj, (j, _)) in touching.iter().enumerate() {
                    let u = sc.w2_apply(&Block::Vec(dense[jj].clone()));
                    let u = u.vec();
                    for (ii, (i, terms)) in touching.iter().enumerate() {
                        if ii > jj {
                            break;
                        }
                        let mut acc = T::zero();
                        for (pos, val) in terms {
                            if let Pos::Lin(p) = pos {
                                acc += *val * u[*p];
                            }
                        }
                        mat[(*i, *j)] += acc;
                        if i != j {
                            mat[(*j, *i)] += acc;
                        }
                    }
                }
            }
            (Scaling::Psd { w, .. }, _) => {
                // full symmetric entry lists (a, b, C_ab)
                let half = T::lit(0.5);
                let full: Vec<Vec<(usize, usize, T)>> = touching
                    .iter()
                    .map(|(_, terms)| {
                        let mut e = Vec::with_capacity(terms.len() * 2);
                        for (pos, val) in terms {
                            if let Pos::Sym(p, q) = pos {
                                if p == q {
                                    e.push((*p, *p, *val));
                                } else {
                                    e.push((*p, *q, *val * half));
                                    e.push((*q, *p, *val * half));
                                }
                            }
                        }
                        e
                    })
                    .collect();
                for jj in 0..touching.len() {
                    for ii in 0..=jj {
                        // Tr(C_i W C_j W) = sum C_i[a,b] W[b,c] C_j[c,d] W[d,a]
                        let mut acc = T::zero();
                        for &(a, b, ci) in &full[ii] {
                            for &(c, d, cj) in &full[jj] {
                                acc += ci * cj * w[(b, c)] * w[(d, a)];
                            }
                        }
                        let (i, j) = (touching[ii].0, touching[jj].0);
                        mat[(i, j)] += acc;
                        if i != j {
                            mat[(j, i)] += acc;
                        }
                    }
                }
            }
            _ => unreachable!("scaling does not match cone"),
        }
    }
    mat
}

struct Factor<T: Scalar> {
    chol: nalgebra::Cholesky<T, nalgebra::Dyn>,
    /// Jacobi scaling `1 / sqrt(diag)`; the factor is of `D S D`.
    d: DVector<T>,
    mat: DMatrix<T>,
}

impl<T: Scalar> Factor<T> {
    fn new(mat: DMatrix<T>) -> Option<Self> {
        let m = mat.nrows();
        let mut d = DVector::zeros(m);
        for i in 0..m {
            let v = mat[(i, i)];
            if !(v > T::zero()) || !v.is_finite() {
                return None;
            }
            d[i] = T::one() / v.sqrt();
        }
        let mut scaled = DMatrix::from_fn(m, m, |i, j| mat[(i, j)] * d[i] * d[j]);
        let mut reg = T::lit(1e-15);
        let mut added = T::zero();
        for _ in 0..8 {
            if let Some(chol) = scaled.clone().cholesky() {
                return Some(Self { chol, d, mat });
            }
            for i in 0..m {
                scaled[(i, i)] += reg - added;
            }
            added = reg;
            reg *= T::lit(100.0);
        }
        None
    }

    fn raw_solve(&self, rhs: &DVector<T>) -> DVector<T> {
        let mut x = self.chol.solve(&rhs.component_mul(&self.d));
        x.component_mul_assign(&self.d);
        x
    }

    /// Solve with iterative refinement against the unregularized matrix,
    /// stopping once the residual no longer shrinks.
    fn solve(&self, rhs: &DVector<T>) -> DVector<T> {
        let mut x = self.raw_solve(rhs);
        let mut r = rhs - &self.mat * &x;
        let mut rn = r.norm();
        for _ in 0..8 {
            let cand = &x + self.raw_solve(&r);
            let rc = rhs - &self.mat * &cand;
            let cn = rc.norm();
            if !(cn < rn) {
                break;
            }
            x = cand;
            r = rc;
            rn = cn;
        }
        x
    }
}

struct Direction<T: Scalar> {
    dx: Point<T>,
    dy: DVector<T>,
    ds: Point<T>,
    dx_s: Point<T>,
    ds_s: Point<T>,
}

#[allow(clippy::too_many_arguments)]
fn newton<T: Scalar>(
    op: &Operator<T>,
    sc: &[Scaling<T>],
    factor: &Factor<T>,
    rp: &DVector<T>,
    rd: &Point<T>,
    g: &Point<T>,
) -> Direction<T> {
    let pg: Point<T> = sc.iter().zip(g).map(|(s, gi)| s.p_apply(gi)).collect();
    let w2rd: Point<T> = sc.iter().zip(rd).map(|(s, r)| s.w2_apply(r)).collect();
    let rhs = rp - op.apply(&pg) + op.apply(&w2rd);
    let mut dy = factor.solve(&rhs);
    let mut ds = sub(rd, &op.apply_t(&dy));
    let mut dx: Point<T> = sc.iter().zip(pg.iter().zip(&ds)).map(|(s, (p, d))| p.sub(&s.w2_apply(d))).collect();
    // The other two block equations hold by construction; refine A dx = rp,
    // which loses accuracy when the scaling spans many orders of magnitude.
    let mut err = rp - op.apply(&dx);
    let mut en = err.norm();
    for _ in 0..4 {
        let cy = factor.solve(&err);
        let cs: Point<T> = op.apply_t(&cy).iter().map(|b| b.scaled(-T::one())).collect();
        let cx: Point<T> = sc.iter().zip(&cs).map(|(s, d)| s.w2_apply(d).scaled(-T::one())).collect();
        let mut nx = dx.clone();
        axpy(&mut nx, T::one(), &cx);
        let ne = rp - op.apply(&nx);
        let nn = ne.norm();
        if !(nn < en) {
            break;
        }
        dx = nx;
        axpy(&mut ds, T::one(), &cs);
        dy += cy;
        err = ne;
        en = nn;
    }
    let ds_s: Point<T> = sc.iter().zip(&ds).map(|(s, d)| s.q_inv_apply(d)).collect();
    let dx_s: Point<T> = g.iter().zip(&ds_s).map(|(gi, d)| gi.sub(d)).collect();
    Direction { dx, dy, ds, dx_s, ds_s }
}

fn step_length<T: Scalar>(cones: &[Cone], lambda: &Point<T>, d: &Point<T>) -> T {
    let mut a = T::lit(1e30);
    for ((c, l), di) in cones.iter().zip(lambda).zip(d) {
        a = max_step(*c, l, di, a);
    }
    a
}

fn scalings<T: Scalar>(cones: &[Cone], x: &Point<T>, s: &Point<T>) -> Option<Vec<Scaling<T>>> {
    cones.iter().zip(x.iter().zip(s)).map(|(&cn, (xi, si))| Scaling::new(cn, xi, si)).collect()
}

pub fn solve<T: Scalar>(prob: &ConeProblem<T>, settings: &Settings<T>) -> IpmResult<T> {
    let m_orig = prob.rows.len();
    let zeros: Point<T> = prob.cones.iter().map(|&c| Block::zeros(c)).collect();
    let scaled = match prepare(prob) {
        Ok(s) => s,
        Err(y) => {
            return IpmResult {
                status: Status::PrimalInfeasible,
                x: zeros.clone(),
                y,
                s: zeros,
                primal_obj: T::zero(),
                dual_obj: T::zero(),
                iterations: 0,
                primal_res: T::zero(),
                dual_res: T::zero(),
                gap: T::zero(),
            }
        }
    };
    let Scaled { op, c, b, keep, row_scale, b_scale, c_scale } = scaled;
    let cones = op.cones.clone();
    let nu = T::lit(cones.iter().map(|c| c.degree()).sum::<usize>().max(1) as f64);
    let mut x: Point<T> = cones.iter().map(|&c| Block::identity(c)).collect();
    let mut s: Point<T> = x.clone();
    let mut y = DVector::zeros(op.m());
    let bnorm = b.norm();
    let cnorm = norm(&c);
    let tol = settings.tol;

    let mut status = Status::MaxIterations;
    let mut iterations = 0;
    let mut next_sc: Option<Vec<Scaling<T>>> = None;
    let mut best: Option<(T, Point<T>, DVector<T>, Point<T>)> = None;
    let mut stall = 0;
    let (mut pres, mut dres, mut gap_rel) = (T::zero(), T::zero(), T::zero());
    for it in 0..settings.max_iter {
        iterations = it;
        let rp = &b - op.apply(&x);
        let aty = op.apply_t(&y);
        let rd: Point<T> = c.iter().zip(aty.iter().zip(&s)).map(|(ci, (a, si))| ci.sub(a).sub(si)).collect();
        let pobj = dot(&c, &x);
        let dobj = b.dot(&y);
        let gap = dot(&x, &s);
        let mu = gap / nu;
        pres = rp.norm() / (T::one() + bnorm);
        dres = norm(&rd) / (T::one() + cnorm);
        gap_rel = gap.max((pobj - dobj).abs()) / (T::one() + pobj.abs().min(dobj.abs()));
        log::trace!("ipm {it}: pobj {pobj} dobj {dobj} pres {pres} dres {dres} gap {gap_rel}");
        if !(pres.is_finite() && dres.is_finite() && gap_rel.is_finite()) {
            status = Status::NumericalFailure;
            break;
        }
        if pres <= tol && dres <= tol && gap_rel <= tol {
            status = Status::Optimal;
            break;
        }
        let merit = pres.max(dres).max(gap_rel);
        if best.as_ref().map_or(true, |b| merit < b.0) {
            best = Some((merit, x.clone(), y.clone(), s.clone()));
            stall = 0;
        } else if merit <= tol.sqrt() {
            // only a stall near the floating-point floor; early oscillation is normal
            stall += 1;
            if stall >= STALL_LIMIT {
                status = Status::NumericalFailure;
                break;
            }
        }
        // certificates of infeasibility from diverging iterates
        if dobj > T::zero() {
            let aty_s = norm(&sub(&c, &rd)) / dobj;
            if aty_s <= tol && pres > tol {
                status = Status::PrimalInfeasible;
                break;
            }
        }
        if pobj < T::zero() {
            let ax = (&b - &rp).norm() / (-pobj);
            if ax <= tol && dres > tol {
                status = Status::DualInfeasible;
                break;
            }
        }

        let Some(sc) = next_sc.take().or_else(|| scalings(&cones, &x, &s)) else {
            status = Status::NumericalFailure;
            break;
        };
        let Some(factor) = Factor::new(schur(&op, &sc)) else {
            status = Status::NumericalFailure;
            break;
        };
        let lambda: Point<T> = sc.iter().map(|s| s.lambda_block()).collect();

        // predictor
        let g_aff: Point<T> = lambda.iter().map(|l| l.scaled(-T::one())).collect();
        let aff = newton(&op, &sc, &factor, &rp, &rd, &g_aff);
        let ap = step_length(&cones, &lambda, &aff.dx_s).min(T::one());
        let ad = step_length(&cones, &lambda, &aff.ds_s).min(T::one());
        let mut xa = lambda.clone();
        axpy(&mut xa, ap, &aff.dx_s);
        let mut sa = lambda.clone();
        axpy(&mut sa, ad, &aff.ds_s);
        let mu_aff = dot(&xa, &sa) / nu;
        let ratio = (mu_aff / mu).max(T::zero()).min(T::one());
        let sigma = ratio * ratio * ratio;

        // corrector
        let g: Point<T> = cones
            .iter()
            .enumerate()
            .map(|(k, &cn)| {
                let ll = jordan(cn, &lambda[k], &lambda[k]);
                let cross = jordan(cn, &aff.dx_s[k], &aff.ds_s[k]);
                let mut r = Block::identity(cn).scaled(sigma * mu);
                r.axpy(-T::one(), &ll);
                r.axpy(-T::one(), &cross);
                sc[k].lambda_div(&r)
            })
            .collect();
        let dir = newton(&op, &sc, &factor, &rp, &rd, &g);
        let frac = T::lit(0.99);
        let mut ap = (frac * step_length(&cones, &lambda, &dir.dx_s)).min(T::one());
        let mut ad = (frac * step_length(&cones, &lambda, &dir.ds_s)).min(T::one());
        // the step length is exact in the scaled space only; near the boundary
        // rounding can leave the unscaled iterate just outside the cone
        let mut accepted = false;
        for _ in 0..20 {
            let mut xn = x.clone();
            axpy(&mut xn, ap, &dir.dx);
            let mut sn = s.clone();
            axpy(&mut sn, ad, &dir.ds);
            if let Some(nsc) = scalings(&cones, &xn, &sn) {
                x = xn;
                s = sn;
                y.axpy(ad, &dir.dy, T::one());
                next_sc = Some(nsc);
                accepted = true;
                break;
            }
            ap *= T::lit(0.5);
            ad *= T::lit(0.5);
        }
        if !accepted {
            status = Status::NumericalFailure;
            break;
        }
        iterations = it + 1;
    }

    if matches!(status, Status::MaxIterations | Status::NumericalFailure) {
        if let Some((merit, bx, by, bs)) = best {
            x = bx;
            y = by;
            s = bs;
            let rp = &b - op.apply(&x);
            let aty = op.apply_t(&y);
            let rd: Point<T> = c.iter().zip(aty.iter().zip(&s)).map(|(ci, (a, si))| ci.sub(a).sub(si)).collect();
            let (pobj, dobj) = (dot(&c, &x), b.dot(&y));
            pres = rp.norm() / (T::one() + bnorm);
            dres = norm(&rd) / (T::one() + cnorm);
            gap_rel = dot(&x, &s).max((pobj - dobj).abs()) / (T::one() + pobj.abs().min(dobj.abs()));
            if merit <= tol * T::lit(REDUCED_FACTOR) {
                status = Status::AlmostOptimal;
            }
        }
    }

    // undo scaling
    let pobj = dot(&c, &x) * c_scale * b_scale;
    let dobj = b.dot(&y) * c_scale * b_scale;
    let x: Point<T> = x.iter().map(|blk| blk.scaled(b_scale)).collect();
    let s: Point<T> = s.iter().map(|blk| blk.scaled(c_scale)).collect();
    let mut y_full = vec![T::zero(); m_orig];
    for (k, &i) in keep.iter().enumerate() {
        y_full[i] = y[k] * c_scale / row_scale[k];
    }
    IpmResult {
        status,
        x,
        y: y_full,
        s,
        primal_obj: pobj,
        dual_obj: dobj,
        iterations,
        primal_res: pres,
        dual_res: dres,
        gap: gap_rel,
    }
}

/// Value of a linear functional at a point.
pub fn evaluate<T: Scalar>(terms: &[Term<T>], x: &Point<T>) -> T {
    terms.iter().fold(T::zero(), |acc, t| acc + t.val * x[t.block].get(t.pos))
}
