//! Network cases, admittance matrices and measurement-support subgraphs.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{self, polar, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BusRecord<T: Scalar> {
    /// External bus number as written in the case file.
    pub id: usize,
    pub kind: BusKind,
    pub p_load: T,
    pub q_load: T,
    pub g_shunt: T,
    pub b_shunt: T,
    pub vm: T,
    /// Radians.
    pub va: T,
}

/// Branch between internal bus indices `from` and `to` (0-based).
#[derive(Clone, Debug, PartialEq)]
pub struct BranchRecord<T: Scalar> {
    pub from: usize,
    pub to: usize,
    pub r: T,
    pub x: T,
    pub b: T,
    pub tap: T,
    /// Radians.
    pub shift: T,
}

/// Validated network: out-of-service branches are already dropped and bus
/// references are internal indices.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkCase<T: Scalar> {
    pub base_mva: T,
    pub buses: Vec<BusRecord<T>>,
    pub branches: Vec<BranchRecord<T>>,
}

impl<T: Scalar> NetworkCase<T> {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn slack(&self) -> usize {
        self.buses.iter().position(|b| b.kind == BusKind::Slack).expect("validated case has a slack bus")
    }

    /// Stored operating point `|v| e^{j angle}`.
    pub fn voltages(&self) -> Vec<Complex<T>> {
        self.buses.iter().map(|b| polar(b.vm, b.va)).collect()
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Same network with the given operating point stored on the buses.
    pub fn with_voltages(&self, v: &[Complex<T>]) -> Self {
        assert_eq!(v.len(), self.n_buses());
        let mut c = self.clone();
        for (b, z) in c.buses.iter_mut().zip(v) {
            b.vm = scalar::modulus(*z);
            b.va = scalar::arg(*z);
        }
        c
    }

    pub fn cast<U: Scalar>(&self) -> NetworkCase<U> {
        let c = |x: T| U::lit(x.as_f64());
        NetworkCase {
            base_mva: c(self.base_mva),
            buses: self
                .buses
                .iter()
                .map(|b| BusRecord {
                    id: b.id,
                    kind: b.kind,
                    p_load: c(b.p_load),
                    q_load: c(b.q_load),
                    g_shunt: c(b.g_shunt),
                    b_shunt: c(b.b_shunt),
                    vm: c(b.vm),
                    va: c(b.va),
                })
                .collect(),
            branches: self
                .branches
                .iter()
                .map(|l| BranchRecord {
                    from: l.from,
                    to: l.to,
                    r: c(l.r),
                    x: c(l.x),
                    b: c(l.b),
                    tap: c(l.tap),
                    shift: c(l.shift),
                })
                .collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_buses();
        if n == 0 {
            return Err(Error::Validation("case has no buses".into()));
        }
        match self.buses.iter().filter(|b| b.kind == BusKind::Slack).count() {
            0 => return Err(Error::Validation("no slack bus".into())),
            1 => {}
            _ => return Err(Error::Validation("multiple slack buses".into())),
        }
        let mut seen = BTreeMap::new();
        for b in &self.buses {
            if seen.insert(b.id, ()).is_some() {
                return Err(Error::Validation(format!("duplicate bus id {}", b.id)));
            }
        }
        for (l, br) in self.branches.iter().enumerate() {
            if br.from >= n || br.to >= n {
                return Err(Error::Validation(format!("branch {l} references a missing bus")));
            }
            if br.from == br.to {
                return Err(Error::Validation(format!("branch {l} connects bus {} to itself", self.buses[br.from].id)));
            }
            if br.r * br.r + br.x * br.x <= T::zero() {
                return Err(Error::Validation(format!("branch {l} has zero series impedance")));
            }
            if br.tap <= T::zero() {
                return Err(Error::Validation(format!("branch {l} has nonpositive tap ratio")));
            }
        }
        let comps = components(n, self.branches.iter().map(|b| (b.from, b.to)));
        if comps.len() > 1 {
            return Err(Error::Disconnected(self.describe_components(&comps)));
        }
        Ok(())
    }

    fn describe_components(&self, comps: &[Vec<usize>]) -> String {
        let ids = |c: &Vec<usize>| c.iter().map(|&k| self.buses[k].id.to_string()).collect::<Vec<_>>().join(", ");
        format!("buses {{{}}} are not connected to buses {{{}}}", ids(&comps[1]), ids(&comps[0]))
    }
}

/// Connected components (sorted, first component contains bus 0).
fn components(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for k in 0..n {
        let r = find(&mut parent, k);
        groups.entry(r).or_default().push(k);
    }
    groups.into_values().collect()
}

// ---------------------------------------------------------------------------
// Parsing

/// Parses either the canonical JSON schema or the MATPOWER table subset.
pub fn parse_case<T: Scalar>(text: &str) -> Result<NetworkCase<T>> {
    if text.trim_start().starts_with('{') {
        let doc: CaseDocument = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        doc.into_case()
    } else {
        parse_matpower(text)
    }
}

fn default_one() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

/// Canonical JSON case. Quantities are per unit, angles in degrees.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CaseDocument {
    pub base_mva: f64,
    pub buses: Vec<BusDocument>,
    pub branches: Vec<BranchDocument>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BusDocument {
    pub id: usize,
    pub kind: BusKind,
    #[serde(default)]
    pub p_load: f64,
    #[serde(default)]
    pub q_load: f64,
    #[serde(default)]
    pub g_shunt: f64,
    #[serde(default)]
    pub b_shunt: f64,
    #[serde(default = "default_one")]
    pub vm: f64,
    #[serde(default)]
    pub va_deg: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BranchDocument {
    pub from: usize,
    pub to: usize,
    #[serde(default)]
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default = "default_one")]
    pub tap: f64,
    #[serde(default)]
    pub shift_deg: f64,
    #[serde(default = "default_true")]
    pub in_service: bool,
}

impl CaseDocument {
    pub fn into_case<T: Scalar>(self) -> Result<NetworkCase<T>> {
        let buses: Vec<BusRecord<T>> = self
            .buses
            .iter()
            .map(|b| BusRecord {
                id: b.id,
                kind: b.kind,
                p_load: T::lit(b.p_load),
                q_load: T::lit(b.q_load),
                g_shunt: T::lit(b.g_shunt),
                b_shunt: T::lit(b.b_shunt),
                vm: T::lit(b.vm),
                va: scalar::rad(T::lit(b.va_deg)),
            })
            .collect();
        let index: BTreeMap<usize, usize> = buses.iter().enumerate().map(|(k, b)| (b.id, k)).collect();
        let mut branches = Vec::new();
        for (l, br) in self.branches.iter().enumerate() {
            if !br.in_service {
                continue;
            }
            let lookup = |id: usize| {
                index
                    .get(&id)
                    .copied()
                    .ok_or_else(|| Error::Validation(format!("branch {l} references unknown bus {id}")))
            };
            branches.push(BranchRecord {
                from: lookup(br.from)?,
                to: lookup(br.to)?,
                r: T::lit(br.r),
                x: T::lit(br.x),
                b: T::lit(br.b),
                tap: T::lit(if br.tap == 0.0 { 1.0 } else { br.tap }),
                shift: scalar::rad(T::lit(br.shift_deg)),
            });
        }
        let case = NetworkCase { base_mva: T::lit(self.base_mva), buses, branches };
        case.validate()?;
        Ok(case)
    }

    pub fn from_case<T: Scalar>(case: &NetworkCase<T>) -> Self {
        CaseDocument {
            base_mva: case.base_mva.as_f64(),
            buses: case
                .buses
                .iter()
                .map(|b| BusDocument {
                    id: b.id,
                    kind: b.kind,
                    p_load: b.p_load.as_f64(),
                    q_load: b.q_load.as_f64(),
                    g_shunt: b.g_shunt.as_f64(),
                    b_shunt: b.b_shunt.as_f64(),
                    vm: b.vm.as_f64(),
                    va_deg: scalar::deg(b.va).as_f64(),
                })
                .collect(),
            branches: case
                .branches
                .iter()
                .map(|l| BranchDocument {
                    from: case.buses[l.from].id,
                    to: case.buses[l.to].id,
                    r: l.r.as_f64(),
                    x: l.x.as_f64(),
                    b: l.b.as_f64(),
                    tap: l.tap.as_f64(),
                    shift_deg: scalar::deg(l.shift).as_f64(),
                    in_service: true,
                })
                .collect(),
        }
    }
}

struct Table {
    rows: Vec<(usize, Vec<f64>)>,
}

impl Table {
    /// Appends the rows found on one source line; true when the table closes.
    fn push_rows(&mut self, name: &str, line: &str, line_no: usize) -> Result<bool> {
        let (body, closes) = match line.find(']') {
            Some(p) => (&line[..p], true),
            None => (line, false),
        };
        for chunk in body.split(';') {
            let fields = chunk.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty());
            let mut row = Vec::new();
            for (col, f) in fields.enumerate() {
                row.push(f.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("mpc.{name} column {}: cannot parse '{f}' as a number", col + 1),
                })?);
            }
            if !row.is_empty() {
                self.rows.push((line_no, row));
            }
        }
        Ok(closes)
    }
}

const MATPOWER_TABLES: [&str; 3] = ["bus", "branch", "gen"];

fn parse_matpower<T: Scalar>(text: &str) -> Result<NetworkCase<T>> {
    let mut base_mva: Option<f64> = None;
    let mut tables: BTreeMap<&str, Table> = BTreeMap::new();
    let mut open: Option<(&str, Table)> = None;

    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = raw.split('%').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some((name, mut table)) = open.take() {
            if table.push_rows(name, line, line_no)? {
                tables.insert(name, table);
            } else {
                open = Some((name, table));
            }
            continue;
        }
        if line.starts_with("function") {
            continue;
        }
        let Some(rest) = line.strip_prefix("mpc.") else {
            log::warn!("line {line_no}: ignoring unsupported statement '{line}'");
            continue;
        };
        let Some((lhs, rhs)) = rest.split_once('=') else {
            return Err(Error::Parse { line: line_no, message: format!("expected assignment, found '{line}'") });
        };
        let lhs = lhs.trim();
        let rhs = rhs.trim();
        if lhs == "baseMVA" {
            let v = rhs.trim_end_matches(';').trim();
            base_mva = Some(v.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("mpc.baseMVA: cannot parse '{v}'"),
            })?);
        } else if let Some(name) = MATPOWER_TABLES.iter().copied().find(|t| *t == lhs) {
            let Some(after) = rhs.strip_prefix('[') else {
                return Err(Error::Parse { line: line_no, message: format!("mpc.{name} must be a numeric table") });
            };
            let mut table = Table { rows: Vec::new() };
            if table.push_rows(name, after, line_no)? {
                tables.insert(name, table);
            } else {
                open = Some((name, table));
            }
        } else if lhs == "version" {
            log::debug!("line {line_no}: ignoring mpc.version");
        } else {
            log::warn!("line {line_no}: ignoring mpc.{lhs}");
        }
    }
    if let Some((name, _)) = open {
        return Err(Error::Parse { line: text.lines().count(), message: format!("unterminated mpc.{name} table") });
    }
    let base = base_mva.ok_or(Error::Parse { line: 0, message: "missing mpc.baseMVA".into() })?;
    let bus = tables.get("bus").ok_or(Error::Parse { line: 0, message: "missing mpc.bus".into() })?;
    let branch = tables.get("branch").ok_or(Error::Parse { line: 0, message: "missing mpc.branch".into() })?;

    let need = |t: &str, row: &(usize, Vec<f64>), cols: usize| -> Result<()> {
        if row.1.len() < cols {
            Err(Error::Parse {
                line: row.0,
                message: format!("mpc.{t} row has {} columns, need at least {cols}", row.1.len()),
            })
        } else {
            Ok(())
        }
    };

    let mut buses = Vec::new();
    for row in &bus.rows {
        need("bus", row, 9)?;
        let r = &row.1;
        let kind = match r[1] as i64 {
            1 => BusKind::Pq,
            2 => BusKind::Pv,
            3 => BusKind::Slack,
            other => {
                return Err(Error::Parse {
                    line: row.0,
                    message: format!("mpc.bus column 2: unsupported bus type {other}"),
                })
            }
        };
        if r[0] < 1.0 || r[0].fract() != 0.0 {
            return Err(Error::Parse { line: row.0, message: format!("mpc.bus column 1: bad bus number {}", r[0]) });
        }
        buses.push(BusDocument {
            id: r[0] as usize,
            kind,
            p_load: r[2] / base,
            q_load: r[3] / base,
            g_shunt: r[4] / base,
            b_shunt: r[5] / base,
            vm: r[7],
            va_deg: r[8],
        });
    }
    let mut branches = Vec::new();
    for row in &branch.rows {
        need("branch", row, 11)?;
        let r = &row.1;
        branches.push(BranchDocument {
            from: r[0] as usize,
            to: r[1] as usize,
            r: r[2],
            x: r[3],
            b: r[4],
            tap: r[8],
            shift_deg: r[9],
            in_service: r[10] != 0.0,
        });
    }
    if let Some(gen) = tables.get("gen") {
        for row in &gen.rows {
            need("gen", row, 1)?;
        }
    }
    CaseDocument { base_mva: base, buses, branches }.into_case()
}

// ---------------------------------------------------------------------------
// Admittance

/// Sparse complex matrix as sorted `(column, value)` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRows<T: Scalar> {
    pub n_cols: usize,
    pub rows: Vec<Vec<(usize, Complex<T>)>>,
}

impl<T: Scalar> SparseRows<T> {
    fn new(n_rows: usize, n_cols: usize) -> Self {
        Self { n_cols, rows: vec![Vec::new(); n_rows] }
    }

    fn add(&mut self, i: usize, j: usize, v: Complex<T>) {
        let row = &mut self.rows[i];
        match row.binary_search_by_key(&j, |e| e.0) {
            Ok(p) => row[p].1 += v,
            Err(p) => row.insert(p, (j, v)),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> Complex<T> {
        let row = &self.rows[i];
        row.binary_search_by_key(&j, |e| e.0).map(|p| row[p].1).unwrap_or_default()
    }

    pub fn row(&self, i: usize) -> &[(usize, Complex<T>)] {
        &self.rows[i]
    }

    pub fn mul_vec(&self, v: &[Complex<T>]) -> Vec<Complex<T>> {
        self.rows.iter().map(|r| r.iter().fold(Complex::default(), |acc, &(j, a)| acc + a * v[j])).collect()
    }
}

/// Nodal and branch admittance matrices of a case.
#[derive(Clone, Debug)]
pub struct AdmittanceModel<T: Scalar> {
    pub n: usize,
    pub y: SparseRows<T>,
    pub yf: SparseRows<T>,
    pub yt: SparseRows<T>,
    /// Series admittance `1 / (r + jx)` per branch.
    pub y_series: Vec<Complex<T>>,
    /// `(from, to)` per branch.
    pub ends: Vec<(usize, usize)>,
}

impl<T: Scalar> AdmittanceModel<T> {
    pub fn n_branches(&self) -> usize {
        self.ends.len()
    }

    /// `Y[s,t]` / from-side entries of branch `l`: `(Yff, Yft, Ytf, Ytt)`.
    pub fn branch_entries(&self, l: usize) -> (Complex<T>, Complex<T>, Complex<T>, Complex<T>) {
        let (f, t) = self.ends[l];
        (self.yf.get(l, f), self.yf.get(l, t), self.yt.get(l, f), self.yt.get(l, t))
    }

    /// Admittance coupling the two ends in the from-side flow, `-Yft`.
    ///
    /// Equals the series admittance when the branch has no tap or shift.
    pub fn coupling(&self, l: usize) -> Complex<T> {
        -self.branch_entries(l).1
    }

    /// Net injections `diag(v (Y v)^*)`, i.e. `p + jq` per bus.
    pub fn injections(&self, v: &[Complex<T>]) -> Vec<Complex<T>> {
        let i = self.y.mul_vec(v);
        v.iter().zip(&i).map(|(a, b)| a * b.conj()).collect()
    }
}

pub fn build_admittance<T: Scalar>(case: &NetworkCase<T>) -> AdmittanceModel<T> {
    let n = case.n_buses();
    let nl = case.n_branches();
    let mut y = SparseRows::new(n, n);
    let mut yf = SparseRows::new(nl, n);
    let mut yt = SparseRows::new(nl, n);
    let mut y_series = Vec::with_capacity(nl);
    let mut ends = Vec::with_capacity(nl);
    let half = T::lit(0.5);
    for (l, br) in case.branches.iter().enumerate() {
        let ys = Complex::new(T::one(), T::zero()) / Complex::new(br.r, br.x);
        let tap = polar(br.tap, br.shift);
        let ytt = ys + Complex::new(T::zero(), br.b * half);
        let yff = ytt.unscale(br.tap * br.tap);
        let yft = -ys / tap.conj();
        let ytf = -ys / tap;
        let (f, t) = (br.from, br.to);
        yf.add(l, f, yff);
        yf.add(l, t, yft);
        yt.add(l, f, ytf);
        yt.add(l, t, ytt);
        y.add(f, f, yff);
        y.add(f, t, yft);
        y.add(t, f, ytf);
        y.add(t, t, ytt);
        y_series.push(ys);
        ends.push((f, t));
    }
    for (k, b) in case.buses.iter().enumerate() {
        if b.g_shunt != T::zero() || b.b_shunt != T::zero() {
            y.add(k, k, Complex::new(b.g_shunt, b.b_shunt));
        }
    }
    AdmittanceModel { n, y, yf, yt, y_series, ends }
}

// ---------------------------------------------------------------------------
// Spanning subgraphs

/// Ordered list of branch indices forming a connected spanning subgraph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSet {
    pub branches: Vec<usize>,
}

impl EdgeSet {
    pub fn len(&self) -> usize {
        self.branches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    /// True when the subgraph has exactly `n - 1` edges.
    pub fn is_tree(&self, n: usize) -> bool {
        self.branches.len() + 1 == n
    }

    /// Distinct unordered bus pairs covered by the edge set.
    pub fn bus_pairs<T: Scalar>(&self, model: &AdmittanceModel<T>) -> Vec<(usize, usize)> {
        let mut pairs: Vec<(usize, usize)> = self
            .branches
            .iter()
            .map(|&l| {
                let (f, t) = model.ends[l];
                (f.min(t), f.max(t))
            })
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeStrategy {
    MinWeightTree,
    FullGraph,
    Explicit(Vec<usize>),
}

#[derive(PartialEq)]
struct PrimKey {
    weight: f64,
    pair: (usize, usize),
    branch: usize,
    bus: usize,
}

impl Eq for PrimKey {}

impl Ord for PrimKey {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap
        other
            .weight
            .total_cmp(&self.weight)
            .then_with(|| other.pair.cmp(&self.pair))
            .then_with(|| other.branch.cmp(&self.branch))
    }
}

impl PartialOrd for PrimKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn spanning_subgraph<T: Scalar>(
    case: &NetworkCase<T>,
    model: &AdmittanceModel<T>,
    strategy: &TreeStrategy,
) -> Result<EdgeSet> {
    let n = case.n_buses();
    let check = |branches: &[usize]| -> Result<()> {
        let comps = components(n, branches.iter().map(|&l| model.ends[l]));
        if comps.len() > 1 {
            Err(Error::Disconnected(case.describe_components(&comps)))
        } else {
            Ok(())
        }
    };
    match strategy {
        TreeStrategy::FullGraph => {
            let all: Vec<usize> = (0..model.n_branches()).collect();
            check(&all)?;
            Ok(EdgeSet { branches: all })
        }
        TreeStrategy::Explicit(list) => {
            if let Some(&bad) = list.iter().find(|&&l| l >= model.n_branches()) {
                return Err(Error::Validation(format!("edge list references missing branch {bad}")));
            }
            let mut sorted = list.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != list.len() {
                return Err(Error::Validation("edge list contains duplicates".into()));
            }
            check(list)?;
            Ok(EdgeSet { branches: list.clone() })
        }
        TreeStrategy::MinWeightTree => {
            let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
            for (l, &(f, t)) in model.ends.iter().enumerate() {
                adj[f].push(l);
                adj[t].push(l);
            }
            // ties broken by external bus ids, then branch index, so the
            // result does not depend on the order branches were listed in
            let key = |l: usize, bus: usize| {
                let (f, t) = model.ends[l];
                let (a, b) = (case.buses[f].id, case.buses[t].id);
                PrimKey {
                    weight: 1.0 / scalar::modulus(model.y_series[l]).as_f64(),
                    pair: (a.min(b), a.max(b)),
                    branch: l,
                    bus,
                }
            };
            let start = (0..n).min_by_key(|&k| case.buses[k].id).unwrap_or(0);
            let mut in_tree = vec![false; n];
            in_tree[start] = true;
            let mut heap = BinaryHeap::new();
            for &l in &adj[start] {
                let (f, t) = model.ends[l];
                heap.push(key(l, if f == start { t } else { f }));
            }
            let mut chosen = Vec::with_capacity(n.saturating_sub(1));
            while let Some(k) = heap.pop() {
                if in_tree[k.bus] {
                    continue;
                }
                in_tree[k.bus] = true;
                chosen.push(k.branch);
                for &l in &adj[k.bus] {
                    let (f, t) = model.ends[l];
                    let other = if f == k.bus { t } else { f };
                    if !in_tree[other] {
                        heap.push(key(l, other));
                    }
                }
            }
            if chosen.len() + 1 != n {
                check(&chosen)?;
            }
            Ok(EdgeSet { branches: chosen })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_bus_json(shunt: f64) -> String {
        format!(
            r#"{{"base_mva": 100, "buses": [
                {{"id": 1, "kind": "slack", "b_shunt": {shunt}}},
                {{"id": 2, "kind": "pq", "va_deg": -10}}],
              "branches": [{{"from": 1, "to": 2, "r": 0, "x": 0.2}}]}}"#
        )
    }

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn two_bus_json_parses() {
        let case: NetworkCase<f64> = parse_case(&two_bus_json(0.0)).unwrap();
        assert_eq!(case.n_buses(), 2);
        assert_eq!(case.n_branches(), 1);
        assert!((case.buses[1].va + 10f64.to_radians()).abs() < 1e-15);
    }

    #[test]
    fn lossless_two_bus_admittance() {
        let case: NetworkCase<f64> = parse_case(&two_bus_json(0.0)).unwrap();
        let m = build_admittance(&case);
        assert!((m.y_series[0] - c(0.0, -5.0)).norm() < 1e-12);
        let expect = [[c(0.0, -5.0), c(0.0, 5.0)], [c(0.0, 5.0), c(0.0, -5.0)]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((m.y.get(i, j) - expect[i][j]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn shunt_only_changes_its_diagonal() {
        let case: NetworkCase<f64> = parse_case(&two_bus_json(0.1)).unwrap();
        let m = build_admittance(&case);
        assert!((m.y.get(0, 0) - c(0.0, -4.9)).norm() < 1e-12);
        assert!((m.y.get(0, 1) - c(0.0, 5.0)).norm() < 1e-12);
        assert!((m.y.get(1, 1) - c(0.0, -5.0)).norm() < 1e-12);
    }

    #[test]
    fn unit_tap_matches_plain_line() {
        let text = two_bus_json(0.0).replace(r#""x": 0.2"#, r#""x": 0.2, "tap": 1.0, "shift_deg": 0"#);
        let a = build_admittance(&parse_case::<f64>(&text).unwrap());
        let b = build_admittance(&parse_case::<f64>(&two_bus_json(0.0)).unwrap());
        assert_eq!(a.y, b.y);
        assert_eq!(a.yf, b.yf);
        assert_eq!(a.yt, b.yt);
    }

    #[test]
    fn two_slack_buses_rejected() {
        let text = two_bus_json(0.0).replace(r#""kind": "pq""#, r#""kind": "slack""#);
        let err = parse_case::<f64>(&text).unwrap_err();
        assert!(err.to_string().contains("multiple slack buses"), "{err}");
    }

    #[test]
    fn matpower_errors_carry_location() {
        let text = "mpc.baseMVA = 100;\nmpc.bus = [\n 1 3 0 0 0 0 1 1 0;\n 2 1 0 x 0 0 1 1 0;\n];\n";
        match parse_case::<f64>(text).unwrap_err() {
            Error::Parse { line, message } => {
                assert_eq!(line, 4);
                assert!(message.contains("'x'"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn matpower_drops_out_of_service_and_converts_units() {
        let text = "\
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1.0 0;
  2 1 50 20 0 10 1 0.98 -3;
  3 1 0 0 0 0 1 1.0 0;
];
mpc.branch = [
  1 2 0.01 0.1 0.02 0 0 0 0 0 1;
  2 3 0.01 0.1 0.02 0 0 0 0.98 2 1;
  1 3 0.01 0.1 0.02 0 0 0 0 0 0;
];
mpc.gencost = [ 2 0 0 3 0 1 0 ];
";
        let case: NetworkCase<f64> = parse_case(text).unwrap();
        assert_eq!(case.n_branches(), 2);
        assert!((case.buses[1].p_load - 0.5).abs() < 1e-15);
        assert!((case.buses[1].b_shunt - 0.1).abs() < 1e-15);
        assert!((case.branches[0].tap - 1.0).abs() < 1e-15);
        assert!((case.branches[1].shift - 2f64.to_radians()).abs() < 1e-15);
    }

    #[test]
    fn disconnected_case_names_component() {
        let text = r#"{"base_mva": 100, "buses": [
            {"id": 1, "kind": "slack"}, {"id": 2, "kind": "pq"}, {"id": 7, "kind": "pq"}],
          "branches": [{"from": 1, "to": 2, "x": 0.1}]}"#;
        let err = parse_case::<f64>(text).unwrap_err();
        assert!(matches!(err, Error::Disconnected(ref m) if m.contains('7')), "{err}");
    }

    #[test]
    fn path_graph_tree_is_whole_path() {
        let text = r#"{"base_mva": 100, "buses": [
            {"id": 1, "kind": "slack"}, {"id": 2, "kind": "pq"}, {"id": 3, "kind": "pq"}],
          "branches": [{"from": 1, "to": 2, "x": 0.1}, {"from": 2, "to": 3, "x": 0.3}]}"#;
        let case: NetworkCase<f64> = parse_case(text).unwrap();
        let m = build_admittance(&case);
        let mut e = spanning_subgraph(&case, &m, &TreeStrategy::MinWeightTree).unwrap();
        e.branches.sort();
        assert_eq!(e.branches, vec![0, 1]);
    }

    #[test]
    fn explicit_edge_set_must_span() {
        let text = r#"{"base_mva": 100, "buses": [
            {"id": 1, "kind": "slack"}, {"id": 2, "kind": "pq"}, {"id": 3, "kind": "pq"}],
          "branches": [{"from": 1, "to": 2, "x": 0.1}, {"from": 2, "to": 3, "x": 0.3}]}"#;
        let case: NetworkCase<f64> = parse_case(text).unwrap();
        let m = build_admittance(&case);
        assert!(spanning_subgraph(&case, &m, &TreeStrategy::Explicit(vec![1])).is_err());
        assert!(spanning_subgraph(&case, &m, &TreeStrategy::Explicit(vec![1, 0])).is_ok());
    }

    #[test]
    fn f32_assembly_matches_f64() {
        let c64: NetworkCase<f64> = parse_case(&two_bus_json(0.1)).unwrap();
        let m32 = build_admittance(&c64.cast::<f32>());
        let m64 = build_admittance(&c64);
        for i in 0..2 {
            for j in 0..2 {
                let a = m32.y.get(i, j);
                let b = m64.y.get(i, j);
                assert!((a.re as f64 - b.re).abs() < 1e-5 && (a.im as f64 - b.im).abs() < 1e-5);
            }
        }
    }
}
