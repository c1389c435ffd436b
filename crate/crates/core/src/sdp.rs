//! Dense conic programs over Hermitian matrices and their ADMM solver.
//!
//! A problem is stored in real standard form
//! `min c^T x  s.t.  A x = b,  x in K`, where `K` is a product of free
//! scalars, lower-bounded scalars, free Hermitian blocks and PSD Hermitian
//! blocks. Hermitian blocks use the isometric real parameterization: the
//! diagonal entries, then `sqrt(2) Re X_rs`, `sqrt(2) Im X_rs` for `r < s`.

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::channels::Channel;
use crate::error::{Error, Result};
use crate::operator::{eigh, symmetric_eigen, Operator};
use crate::scalar::C;

type Op = Operator<f64>;
type Cm = DMatrix<C<f64>>;

/// Lower bound placed on the overhead variable `f`.
pub const F_LOWER: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VarKind {
    Scalar { lower: Option<f64> },
    Hermitian { dim: usize },
    Psd { dim: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarDecl {
    pub name: String,
    #[serde(flatten)]
    pub kind: VarKind,
    pub offset: usize,
}

impl VarDecl {
    pub fn len(&self) -> usize {
        match self.kind {
            VarKind::Scalar { .. } => 1,
            VarKind::Hermitian { dim } | VarKind::Psd { dim } => dim * dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintGroup {
    pub name: String,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdpProblem {
    pub name: String,
    pub variables: Vec<VarDecl>,
    /// Objective coefficients over the real parameter vector.
    pub objective: Vec<f64>,
    pub maximize: bool,
    pub constraints: Vec<ConstraintGroup>,
    /// Sparse rows of `A` as `(column, value)` pairs.
    pub a: Vec<Vec<(usize, f64)>>,
    pub b: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    Infeasible,
    MaxIters,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VarValue {
    Scalar(f64),
    /// Row-major `[re, im]` pairs.
    Matrix(Vec<Vec<[f64; 2]>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdpSolution {
    pub status: Status,
    pub objective_value: f64,
    pub variables: BTreeMap<String, VarValue>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iters: usize,
    /// Over-relaxation factor.
    pub alpha: f64,
    pub rho: f64,
    /// Length of the stagnation window used by the infeasibility heuristic.
    pub window: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tol: 1e-7, max_iters: 200_000, alpha: 1.5, rho: 1.0, window: 5_000 }
    }
}

impl SdpProblem {
    pub fn num_vars(&self) -> usize {
        self.variables.last().map(|v| v.offset + v.len()).unwrap_or(0)
    }

    pub fn num_constraints(&self) -> usize {
        self.b.len()
    }

    pub fn psd_blocks(&self) -> Vec<(String, usize)> {
        self.variables
            .iter()
            .filter_map(|v| match v.kind {
                VarKind::Psd { dim } => Some((v.name.clone(), dim)),
                _ => None,
            })
            .collect()
    }

    pub fn free_scalars(&self) -> Vec<String> {
        self.variables
            .iter()
            .filter(|v| matches!(v.kind, VarKind::Scalar { .. }))
            .map(|v| v.name.clone())
            .collect()
    }

    pub fn variable(&self, name: &str) -> Option<&VarDecl> {
        self.variables.iter().find(|v| v.name == name)
    }

    /// Checks that every coefficient refers to a declared variable.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.objective.len() != n {
            return Err(Error::Format(format!("objective has {} entries for {n} variables", self.objective.len())));
        }
        if self.a.len() != self.b.len() {
            return Err(Error::Format("constraint rows and targets differ in number".into()));
        }
        if self.constraints.iter().map(|g| g.rows).sum::<usize>() != self.b.len() {
            return Err(Error::Format("constraint groups do not cover all rows".into()));
        }
        if self.a.iter().flatten().any(|&(j, v)| j >= n || !v.is_finite()) {
            return Err(Error::Format("constraint coefficient references an undeclared variable".into()));
        }
        let mut expect = 0;
        for v in &self.variables {
            if v.offset != expect {
                return Err(Error::Format(format!("variable {} has inconsistent offset", v.name)));
            }
            expect += v.len();
        }
        Ok(())
    }
}

impl SdpSolution {
    pub fn scalar(&self, name: &str) -> Option<f64> {
        match self.variables.get(name)? {
            VarValue::Scalar(x) => Some(*x),
            VarValue::Matrix(_) => None,
        }
    }

    pub fn matrix(&self, name: &str) -> Option<Op> {
        match self.variables.get(name)? {
            VarValue::Matrix(rows) => Op::from_pair_rows(rows).ok(),
            VarValue::Scalar(_) => None,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}

// ---------------------------------------------------------------------------
// Hermitian parameterization

pub(crate) fn herm_to_params(m: &Cm, out: &mut [f64]) {
    let n = m.nrows();
    for r in 0..n {
        out[r] = m[(r, r)].re;
    }
    let mut p = n;
    for r in 0..n {
        for s in r + 1..n {
            // average with the mirrored entry so slightly non-Hermitian input is symmetrized
            let z = (m[(r, s)] + m[(s, r)].conj()) * 0.5;
            out[p] = SQRT_2 * z.re;
            out[p + 1] = SQRT_2 * z.im;
            p += 2;
        }
    }
}

pub(crate) fn params_to_herm(x: &[f64], n: usize) -> Cm {
    let mut m = Cm::zeros(n, n);
    for r in 0..n {
        m[(r, r)] = C::new(x[r], 0.0);
    }
    let mut p = n;
    for r in 0..n {
        for s in r + 1..n {
            let z = C::new(x[p] / SQRT_2, x[p + 1] / SQRT_2);
            m[(r, s)] = z;
            m[(s, r)] = z.conj();
            p += 2;
        }
    }
    m
}

// ---------------------------------------------------------------------------
// Problem builder

/// One summand of a Hermitian-valued linear expression.
pub(crate) enum Term<'a> {
    /// Block variable with the image of each matrix unit `|r><s|`.
    Block(usize, &'a dyn Fn(usize, usize) -> Cm),
    /// Scalar variable times a fixed Hermitian operator.
    Scalar(usize, Cm),
}

pub(crate) struct Builder {
    p: SdpProblem,
    next: usize,
}

impl Builder {
    pub(crate) fn new(name: impl Into<String>, maximize: bool) -> Self {
        Self {
            p: SdpProblem {
                name: name.into(),
                variables: vec![],
                objective: vec![],
                maximize,
                constraints: vec![],
                a: vec![],
                b: vec![],
            },
            next: 0,
        }
    }

    fn declare(&mut self, name: &str, kind: VarKind) -> usize {
        let decl = VarDecl { name: name.into(), kind, offset: self.next };
        self.next += decl.len();
        self.p.objective.resize(self.next, 0.0);
        self.p.variables.push(decl);
        self.p.variables.len() - 1
    }

    pub(crate) fn scalar(&mut self, name: &str, lower: Option<f64>) -> usize {
        self.declare(name, VarKind::Scalar { lower })
    }

    pub(crate) fn psd(&mut self, name: &str, dim: usize) -> usize {
        self.declare(name, VarKind::Psd { dim })
    }

    pub(crate) fn hermitian(&mut self, name: &str, dim: usize) -> usize {
        self.declare(name, VarKind::Hermitian { dim })
    }

    fn block_dim(&self, var: usize) -> usize {
        match self.p.variables[var].kind {
            VarKind::Hermitian { dim } | VarKind::Psd { dim } => dim,
            VarKind::Scalar { .. } => panic!("variable {} is not a block", self.p.variables[var].name),
        }
    }

    /// Visits every real parameter of a block with the image of its basis element.
    fn for_each_param(&self, var: usize, image: &dyn Fn(usize, usize) -> Cm, mut visit: impl FnMut(usize, &Cm)) {
        let n = self.block_dim(var);
        let off = self.p.variables[var].offset;
        for r in 0..n {
            visit(off + r, &image(r, r));
        }
        let mut p = off + n;
        let inv = 1.0 / SQRT_2;
        for r in 0..n {
            for s in r + 1..n {
                let a = image(r, s);
                let b = image(s, r);
                visit(p, &(&a + &b).map(|z| z * inv));
                visit(p + 1, &(&a - &b).map(|z| z * C::new(0.0, inv)));
                p += 2;
            }
        }
    }

    /// Adds `sum terms = target` as Hermitian equations of dimension `out_dim`.
    pub(crate) fn constrain(&mut self, name: &str, out_dim: usize, terms: &[Term<'_>], target: &Cm) {
        let rows = out_dim * out_dim;
        let start = self.p.a.len();
        self.p.a.extend((0..rows).map(|_| Vec::new()));
        let mut tb = vec![0.0; rows];
        herm_to_params(target, &mut tb);
        self.p.b.extend_from_slice(&tb);
        let mut col = vec![0.0; rows];
        let push = |a: &mut Vec<Vec<(usize, f64)>>, j: usize, m: &Cm, col: &mut [f64]| {
            herm_to_params(m, col);
            for (i, &v) in col.iter().enumerate() {
                if v.abs() > 1e-15 {
                    a[start + i].push((j, v));
                }
            }
        };
        for t in terms {
            match t {
                Term::Block(var, image) => {
                    let mut cols: Vec<(usize, Cm)> = Vec::new();
                    self.for_each_param(*var, *image, |j, m| cols.push((j, m.clone())));
                    for (j, m) in cols {
                        push(&mut self.p.a, j, &m, &mut col);
                    }
                }
                Term::Scalar(var, op) => {
                    let j = self.p.variables[*var].offset;
                    push(&mut self.p.a, j, op, &mut col);
                }
            }
        }
        for row in &mut self.p.a[start..] {
            row.sort_by_key(|&(j, _)| j);
        }
        self.p.constraints.push(ConstraintGroup { name: name.into(), rows });
    }

    /// Adds `Re phi(X)` to the objective, with `phi(|r><s|)` given.
    pub(crate) fn objective_block(&mut self, var: usize, phi: &dyn Fn(usize, usize) -> C<f64>) {
        let image = |r: usize, s: usize| Cm::from_element(1, 1, phi(r, s));
        let mut updates = Vec::new();
        self.for_each_param(var, &image, |j, m| updates.push((j, m[(0, 0)].re)));
        for (j, v) in updates {
            self.p.objective[j] += v;
        }
    }

    pub(crate) fn objective_scalar(&mut self, var: usize, coef: f64) {
        let j = self.p.variables[var].offset;
        self.p.objective[j] += coef;
    }

    pub(crate) fn finish(self) -> SdpProblem {
        self.p
    }
}

// ---------------------------------------------------------------------------
// Solver

enum Cone {
    Free,
    Lower(f64),
    Psd(usize),
}

fn project_psd_params(x: &mut [f64], n: usize) {
    let m = params_to_herm(x, n);
    let se = symmetric_eigen(m);
    if se.eigenvalues.iter().all(|&l| l >= 0.0) {
        return;
    }
    let mut scaled = se.eigenvectors.clone();
    for (j, &l) in se.eigenvalues.iter().enumerate() {
        let w = l.max(0.0);
        scaled.column_mut(j).iter_mut().for_each(|z| *z *= w);
    }
    let p = &scaled * se.eigenvectors.adjoint();
    herm_to_params(&p, x);
}

fn project_cone(x: &mut DVector<f64>, cones: &[(usize, usize, Cone)]) {
    for (off, len, cone) in cones {
        match cone {
            Cone::Free => {}
            Cone::Lower(lb) => {
                if x[*off] < *lb {
                    x[*off] = *lb;
                }
            }
            Cone::Psd(n) => project_psd_params(&mut x.as_mut_slice()[*off..off + len], *n),
        }
    }
}

fn collect_solution(p: &SdpProblem, z: &DVector<f64>) -> BTreeMap<String, VarValue> {
    let mut out = BTreeMap::new();
    for v in &p.variables {
        let val = match v.kind {
            VarKind::Scalar { .. } => VarValue::Scalar(z[v.offset]),
            VarKind::Hermitian { dim } | VarKind::Psd { dim } => {
                let m = params_to_herm(&z.as_slice()[v.offset..v.offset + v.len()], dim);
                VarValue::Matrix((0..dim).map(|r| (0..dim).map(|s| [m[(r, s)].re, m[(r, s)].im]).collect()).collect())
            }
        };
        out.insert(v.name.clone(), val);
    }
    out
}

/// Solves with default settings except for tolerance and iteration cap.
pub fn solve(p: &SdpProblem, tol: f64, max_iters: usize) -> Result<SdpSolution> {
    solve_with(p, &SolverSettings { tol, max_iters, ..SolverSettings::default() })
}

pub fn solve_with(p: &SdpProblem, settings: &SolverSettings) -> Result<SdpSolution> {
    p.validate()?;
    let n = p.num_vars();
    let m = p.num_constraints();
    let sign = if p.maximize { -1.0 } else { 1.0 };
    let c = DVector::from_iterator(n, p.objective.iter().map(|&v| sign * v));

    // Row-normalized constraint matrix; the feasible set is unchanged.
    let mut a = DMatrix::<f64>::zeros(m, n);
    let mut b = DVector::<f64>::zeros(m);
    for (i, row) in p.a.iter().enumerate() {
        let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        let s = if norm > 0.0 { 1.0 / norm } else { 1.0 };
        for &(j, v) in row {
            a[(i, j)] += v * s;
        }
        b[i] = p.b[i] * s;
    }

    // Cached pseudo-inverse of A A^T.
    let aat = &a * a.transpose();
    let se = symmetric_eigen(aat);
    let lmax = se.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let inv = DVector::from_iterator(
        m,
        se.eigenvalues.iter().map(|&l| if l > 1e-11 * lmax.max(1e-300) { 1.0 / l } else { 0.0 }),
    );
    let g = &se.eigenvectors * DMatrix::from_diagonal(&inv) * se.eigenvectors.transpose();
    let pinv = a.transpose() * g;

    let x0 = &pinv * &b;
    let affine_gap = (&a * &x0 - &b).norm() / b.norm().max(1.0);
    if affine_gap > 1e-7 {
        return Ok(SdpSolution {
            status: Status::Infeasible,
            objective_value: f64::NAN,
            variables: BTreeMap::new(),
            primal_residual: affine_gap,
            dual_residual: f64::NAN,
            iterations: 0,
            message: format!("equality constraints are inconsistent (relative gap {affine_gap:.3e})"),
        });
    }

    let cones: Vec<(usize, usize, Cone)> = p
        .variables
        .iter()
        .map(|v| {
            let cone = match v.kind {
                VarKind::Scalar { lower: None } | VarKind::Hermitian { .. } => Cone::Free,
                VarKind::Scalar { lower: Some(lb) } => Cone::Lower(lb),
                VarKind::Psd { dim } => Cone::Psd(dim),
            };
            (v.offset, v.len(), cone)
        })
        .collect();

    let project_affine = |v: &DVector<f64>| -> DVector<f64> { v - &pinv * (&a * v - &b) };

    let alpha = settings.alpha;
    let mut rho = settings.rho;
    let mut z = x0.clone();
    project_cone(&mut z, &cones);
    let mut u = DVector::<f64>::zeros(n);
    let mut r_prim = f64::INFINITY;
    let mut r_dual = f64::INFINITY;
    let mut status = Status::MaxIters;
    let mut message = String::from("iteration cap reached");
    let mut iters = 0;

    let mut window_start_res = f64::INFINITY;
    let mut window_min_res = f64::INFINITY;
    let mut window_start_dual_norm = 0.0;

    for it in 1..=settings.max_iters {
        iters = it;
        let v = &z - &u - &c / rho;
        let x = project_affine(&v);
        let xh = &x * alpha + &z * (1.0 - alpha);
        let z_prev = z.clone();
        z = &xh + &u;
        project_cone(&mut z, &cones);
        u += &xh - &z;

        r_prim = (&x - &z).norm();
        r_dual = rho * (&z - &z_prev).norm();
        if r_prim <= settings.tol && r_dual <= settings.tol {
            status = Status::Optimal;
            message = "converged".into();
            break;
        }

        if it % 25 == 0 {
            if r_prim > 10.0 * r_dual && rho < 1e6 {
                rho *= 2.0;
                u /= 2.0;
            } else if r_dual > 10.0 * r_prim && rho > 1e-6 {
                rho /= 2.0;
                u *= 2.0;
            }
        }

        let res = r_prim.max(r_dual);
        window_min_res = window_min_res.min(res);
        if it % settings.window == 0 {
            let dual_norm = rho * u.norm();
            let stalled = window_min_res >= 0.99 * window_start_res;
            let growing = window_start_dual_norm > 0.0 && dual_norm > 1.5 * window_start_dual_norm;
            if stalled && growing && res > 1e3 * settings.tol {
                status = Status::Infeasible;
                message = format!(
                    "residual stalled at {res:.3e} over {} iterations while the dual iterate grew to {dual_norm:.3e}",
                    settings.window
                );
                break;
            }
            window_start_res = res;
            window_min_res = f64::INFINITY;
            window_start_dual_norm = dual_norm;
        }
    }

    let objective_value = p.objective.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
    Ok(SdpSolution {
        status,
        objective_value,
        variables: collect_solution(p, &z),
        primal_residual: r_prim,
        dual_residual: r_dual,
        iterations: iters,
        message,
    })
}

// ---------------------------------------------------------------------------
// Program builders

fn unit(n: usize, r: usize, s: usize) -> Cm {
    let mut m = Cm::zeros(n, n);
    m[(r, s)] = C::new(1.0, 0.0);
    m
}

/// `N^dagger(|j><i|)` for all `(j, i)`, from the channel matrix.
fn adjoint_units(noise: &Channel<f64>) -> Vec<Cm> {
    let d = noise.in_dim();
    let dout = noise.out_dim();
    let madj = noise.channel_matrix().entries.adjoint();
    // vec index of |j><i| in the output space is i * dout + j
    let mut out = Vec::with_capacity(dout * dout);
    for j in 0..dout {
        for i in 0..dout {
            let col = madj.column(i * dout + j);
            out.push(Cm::from_fn(d, d, |p, q| col[q * d + p]));
        }
    }
    out
}

fn check_square_cptp(noise: &Channel<f64>) -> Result<()> {
    if noise.in_dim() != noise.out_dim() {
        return Err(Error::DimensionMismatch("noise channel must have equal input and output dimension".into()));
    }
    if !noise.is_cptp(1e-8) {
        return Err(Error::InvalidParameter(format!("noise channel {} is not CPTP", noise.label())));
    }
    Ok(())
}

/// Largest dimension of a PSD block the builders will emit.
pub const MAX_BLOCK_DIM: usize = 256;

/// Minimum-overhead observable-shift program for `k` copies of `noise` and
/// the moment observable `h` on `d^k` dimensions. Variables: `J` (Choi matrix
/// of the trace-scaling retriever), `f`, `t`.
pub fn build_fmin(noise: &Channel<f64>, k: usize, h: &Op) -> Result<SdpProblem> {
    check_square_cptp(noise)?;
    let nk = noise.tensor_power(k)?;
    let dd = nk.in_dim();
    if h.dim() != dd {
        return Err(Error::DimensionMismatch(format!("observable has dimension {}, expected {dd}", h.dim())));
    }
    if dd * dd > MAX_BLOCK_DIM {
        return Err(Error::DimensionCap { dim: dd * dd, cap: MAX_BLOCK_DIM });
    }
    let adj = adjoint_units(&nk);
    let hm = h.matrix();
    let mut bld = Builder::new(format!("fmin[{}; k={k}]", noise.label()), false);
    let j = bld.psd("J", dd * dd);
    let f = bld.scalar("f", Some(F_LOWER));
    let t = bld.scalar("t", None);

    // tr_C J = f I
    let trace_out = |r: usize, s: usize| {
        let (b, c) = (r / dd, r % dd);
        let (bp, cp) = (s / dd, s % dd);
        if c == cp { unit(dd, b, bp) } else { Cm::zeros(dd, dd) }
    };
    bld.constrain("trace_scaling", dd, &[Term::Block(j, &trace_out), Term::Scalar(f, -Cm::identity(dd, dd))], &Cm::zeros(dd, dd));

    // N^dagger(C^dagger(H)) - t I = H
    let shifted = |r: usize, s: usize| {
        let (i, c) = (r / dd, r % dd);
        let (jj, cp) = (s / dd, s % dd);
        &adj[jj * dd + i] * hm[(cp, c)]
    };
    bld.constrain("observable_shift", dd, &[Term::Block(j, &shifted), Term::Scalar(t, -Cm::identity(dd, dd))], hm);
    bld.objective_scalar(f, 1.0);
    Ok(bld.finish())
}

/// Dual of the observable-shift program; maximizes `-tr[K H]`.
/// Variables: `M`, `K` (free Hermitian), `slack` (>= 0), `Z` (PSD).
pub fn build_dual_fmin(noise: &Channel<f64>, k: usize, h: &Op) -> Result<SdpProblem> {
    check_square_cptp(noise)?;
    let nk = noise.tensor_power(k)?;
    let dd = nk.in_dim();
    if h.dim() != dd {
        return Err(Error::DimensionMismatch(format!("observable has dimension {}, expected {dd}", h.dim())));
    }
    if dd * dd > MAX_BLOCK_DIM {
        return Err(Error::DimensionCap { dim: dd * dd, cap: MAX_BLOCK_DIM });
    }
    let hm = h.matrix().clone();
    let id = Cm::identity(dd, dd);
    let images: Vec<Cm> = (0..dd * dd)
        .map(|idx| {
            let out = nk.apply(&Op::from_matrix(unit(dd, idx / dd, idx % dd)).expect("square")).expect("dims");
            out.transpose().into_matrix()
        })
        .collect();
    let mut bld = Builder::new(format!("dual_fmin[{}; k={k}]", noise.label()), true);
    let mv = bld.hermitian("M", dd);
    let kv = bld.hermitian("K", dd);
    let sv = bld.scalar("slack", Some(0.0));
    let zv = bld.psd("Z", dd * dd);

    let z_img = |r: usize, s: usize| unit(dd * dd, r, s);
    let m_img = |r: usize, s: usize| -unit(dd, r, s).kronecker(&id);
    let k_img = |r: usize, s: usize| -images[r * dd + s].kronecker(&hm);
    bld.constrain(
        "dual_psd",
        dd * dd,
        &[Term::Block(zv, &z_img), Term::Block(mv, &m_img), Term::Block(kv, &k_img)],
        &Cm::zeros(dd * dd, dd * dd),
    );
    let tr = |r: usize, s: usize| Cm::from_element(1, 1, C::new(if r == s { 1.0 } else { 0.0 }, 0.0));
    bld.constrain("trace_m", 1, &[Term::Block(mv, &tr), Term::Scalar(sv, Cm::from_element(1, 1, C::new(1.0, 0.0)))], &Cm::from_element(1, 1, C::new(1.0, 0.0)));
    bld.constrain("trace_k", 1, &[Term::Block(kv, &tr)], &Cm::zeros(1, 1));
    bld.objective_block(kv, &|r, s| -hm[(s, r)]);
    Ok(bld.finish())
}

/// Dual-feasible point `(M, K)` for the observable-shift program.
#[derive(Clone, Debug)]
pub struct DualCertificate {
    pub m: Op,
    pub k: Op,
}

#[derive(Clone, Debug)]
pub struct CertificateCheck {
    pub feasible: bool,
    /// `-tr[K H]`, a lower bound on the optimal overhead when feasible.
    pub objective: f64,
    pub min_eigenvalue: f64,
    pub trace_m: f64,
    pub trace_k: f64,
}

/// `M (x) I + N^{(x)k}(K)^T (x) H`, the operator that must be PSD.
pub fn dual_slack(cert: &DualCertificate, noise: &Channel<f64>, k: usize, h: &Op) -> Result<Op> {
    let nk = noise.tensor_power(k)?;
    let dd = nk.in_dim();
    if cert.m.dim() != dd || cert.k.dim() != dd || h.dim() != dd {
        return Err(Error::DimensionMismatch(format!(
            "certificate blocks {}x{} and {}x{}, expected {dd}",
            cert.m.dim(),
            cert.m.dim(),
            cert.k.dim(),
            cert.k.dim()
        )));
    }
    let nkk = nk.apply(&cert.k.clone().with_dims(vec![dd])?)?.transpose().with_dims(vec![dd])?;
    let h1 = h.clone().with_dims(vec![dd])?;
    Ok(&cert.m.clone().with_dims(vec![dd])?.tensor(&Op::identity(dd)) + &nkk.tensor(&h1))
}

pub fn check_certificate(cert: &DualCertificate, noise: &Channel<f64>, k: usize, h: &Op) -> Result<CertificateCheck> {
    let z = dual_slack(cert, noise, k, h)?;
    let min_eigenvalue = z.min_eigenvalue();
    let trace_m = cert.m.trace().re;
    let trace_k = cert.k.trace().re;
    let feasible = z.is_hermitian(1e-9) && min_eigenvalue >= -1e-9 && trace_m <= 1.0 + 1e-9 && trace_k.abs() <= 1e-9;
    Ok(CertificateCheck { feasible, objective: -cert.k.trace_product(h).re, min_eigenvalue, trace_m, trace_k })
}

/// Closed-form dual point for two copies of single-qubit depolarizing noise.
pub fn de_certificate(eps: f64) -> DualCertificate {
    use crate::operator::pauli::string;
    let xyz = &(&string::<f64>(&[1, 1]) + &string(&[2, 2])) + &string(&[3, 3]);
    let m = &Op::identity_with_dims(vec![2, 2]).scale(0.25) - &xyz.scale(1.0 / 12.0);
    let k = xyz.scale(-1.0 / (6.0 * (1.0 - eps).powi(2)));
    DualCertificate { m, k }
}

/// Closed-form dual point for two copies of amplitude damping noise.
pub fn ad_certificate(eps: f64) -> DualCertificate {
    let e = |r: usize, s: usize| Op::matrix_unit(4, r, s);
    // |01> - |10>, unnormalized
    let singlet = &(&(&e(1, 1) - &e(1, 2)) - &e(2, 1)) + &e(2, 2);
    let m = &singlet.scale(0.25) + &e(3, 3).scale(0.5);
    let inner = &(&(&e(0, 0).scale(-eps) - &e(3, 3)) + &(&e(1, 1) + &e(2, 2)).scale((1.0 + eps) / 2.0))
        + &(&e(1, 2) + &e(2, 1)).scale((eps - 1.0) / 2.0);
    let k = inner.scale(1.0 / (2.0 * (1.0 - eps).powi(2)));
    DualCertificate { m: m.with_dims(vec![2, 2]).expect("4 = 2x2"), k: k.with_dims(vec![2, 2]).expect("4 = 2x2") }
}

/// Minimum quasi-probability cost of simulating the inverse of `noise`.
/// Variables: `J1`, `J2` (PSD Choi matrices), `p1`, `p2` (>= 0).
pub fn build_gmin(noise: &Channel<f64>) -> Result<SdpProblem> {
    check_square_cptp(noise)?;
    let d = noise.in_dim();
    if d * d > MAX_BLOCK_DIM {
        return Err(Error::DimensionCap { dim: d * d, cap: MAX_BLOCK_DIM });
    }
    let jn = noise.choi().matrix().clone();
    let mut bld = Builder::new(format!("gmin[{}]", noise.label()), false);
    let j1 = bld.psd("J1", d * d);
    let j2 = bld.psd("J2", d * d);
    let p1 = bld.scalar("p1", Some(0.0));
    let p2 = bld.scalar("p2", Some(0.0));
    let trace_out = |r: usize, s: usize| {
        let (b, c) = (r / d, r % d);
        let (bp, cp) = (s / d, s % d);
        if c == cp { unit(d, b, bp) } else { Cm::zeros(d, d) }
    };
    bld.constrain("trace_scaling_1", d, &[Term::Block(j1, &trace_out), Term::Scalar(p1, -Cm::identity(d, d))], &Cm::zeros(d, d));
    bld.constrain("trace_scaling_2", d, &[Term::Block(j2, &trace_out), Term::Scalar(p2, -Cm::identity(d, d))], &Cm::zeros(d, d));

    // link product of J_N with the unit |(b,c)><(b',c')| of J_D
    let link = |r: usize, s: usize| {
        let (b, c) = (r / d, r % d);
        let (bp, cp) = (s / d, s % d);
        let blk = Cm::from_fn(d, d, |a, ap| jn[(a * d + b, ap * d + bp)]);
        blk.kronecker(&unit(d, c, cp))
    };
    let neg_link = |r: usize, s: usize| -link(r, s);
    let id_choi = Channel::<f64>::identity(d).choi().matrix().clone();
    bld.constrain("inverse", d * d, &[Term::Block(j1, &link), Term::Block(j2, &neg_link)], &id_choi);
    bld.objective_scalar(p1, 1.0);
    bld.objective_scalar(p2, 1.0);
    Ok(bld.finish())
}

/// Multiplicativity of the channel-inverse overhead over tensor powers.
pub fn gmin_power(g1: f64, k: usize) -> f64 {
    g1.powi(k as i32)
}

/// Minimum cost of a Hermitian-preserving retriever `D = D1 - D2` with
/// `tr[O D(N(rho))] = tr[O rho]`. Variables: `J1`, `J2` (PSD), `c1`, `c2` (>= 0).
pub fn build_info_recover(noise: &Channel<f64>, obs: &Op) -> Result<SdpProblem> {
    check_square_cptp(noise)?;
    let dd = noise.in_dim();
    if obs.dim() != dd {
        return Err(Error::DimensionMismatch(format!("observable has dimension {}, expected {dd}", obs.dim())));
    }
    if dd * dd > MAX_BLOCK_DIM {
        return Err(Error::DimensionCap { dim: dd * dd, cap: MAX_BLOCK_DIM });
    }
    let adj = adjoint_units(noise);
    let om = obs.matrix();
    let mut bld = Builder::new(format!("info_recover[{}]", noise.label()), false);
    let j1 = bld.psd("J1", dd * dd);
    let j2 = bld.psd("J2", dd * dd);
    let c1 = bld.scalar("c1", Some(0.0));
    let c2 = bld.scalar("c2", Some(0.0));
    let trace_out = |r: usize, s: usize| {
        let (b, c) = (r / dd, r % dd);
        let (bp, cp) = (s / dd, s % dd);
        if c == cp { unit(dd, b, bp) } else { Cm::zeros(dd, dd) }
    };
    bld.constrain("trace_scaling_1", dd, &[Term::Block(j1, &trace_out), Term::Scalar(c1, -Cm::identity(dd, dd))], &Cm::zeros(dd, dd));
    bld.constrain("trace_scaling_2", dd, &[Term::Block(j2, &trace_out), Term::Scalar(c2, -Cm::identity(dd, dd))], &Cm::zeros(dd, dd));
    let heis = |r: usize, s: usize| {
        let (i, c) = (r / dd, r % dd);
        let (jj, cp) = (s / dd, s % dd);
        &adj[jj * dd + i] * om[(cp, c)]
    };
    let neg_heis = |r: usize, s: usize| -heis(r, s);
    bld.constrain("observable", dd, &[Term::Block(j1, &heis), Term::Block(j2, &neg_heis)], om);
    bld.objective_scalar(c1, 1.0);
    bld.objective_scalar(c2, 1.0);
    Ok(bld.finish())
}

/// Smallest eigenvalue of a Hermitian matrix held in a solution.
pub fn min_eigenvalue(m: &Op) -> f64 {
    eigh(&m.hermitian_part().into_matrix()).values.first().copied().unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::link_product;
    use crate::moments::moment_observable;
    use crate::operator::pauli;
    use crate::random;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn h(k: usize) -> Op {
        moment_observable::<f64>(k, 2).unwrap().matrix
    }

    fn fmin(noise: &Channel<f64>, k: usize) -> SdpSolution {
        let p = build_fmin(noise, k, &h(k)).unwrap();
        solve(&p, 1e-7, 200_000).unwrap()
    }

    #[test]
    fn herm_params_round_trip_and_isometry() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let a = random::random_hermitian::<f64>(5, &mut r);
        let b = random::random_hermitian::<f64>(5, &mut r);
        let mut xa = vec![0.0; 25];
        let mut xb = vec![0.0; 25];
        herm_to_params(a.matrix(), &mut xa);
        herm_to_params(b.matrix(), &mut xb);
        let back = Op::from_matrix(params_to_herm(&xa, 5)).unwrap();
        assert!(back.max_abs_diff(&a) < 1e-15);
        let dot: f64 = xa.iter().zip(&xb).map(|(p, q)| p * q).sum();
        assert_relative_eq!(dot, a.trace_product(&b).re, epsilon = 1e-12);
    }

    #[test]
    fn trivial_trace_program() {
        let mut bld = Builder::new("trace", false);
        let x = bld.psd("X", 3);
        let tr = |r: usize, s: usize| Cm::from_element(1, 1, C::new(if r == s { 1.0 } else { 0.0 }, 0.0));
        bld.constrain("unit_trace", 1, &[Term::Block(x, &tr)], &Cm::from_element(1, 1, C::new(1.0, 0.0)));
        bld.objective_block(x, &|r, s| C::new(if r == s { 1.0 } else { 0.0 }, 0.0));
        let sol = solve(&bld.finish(), 1e-7, 10_000).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert_relative_eq!(sol.objective_value, 1.0, epsilon = 1e-6);
        assert!(min_eigenvalue(&sol.matrix("X").unwrap()) >= -1e-7);
    }

    #[test]
    fn observable_shift_constraint_matches_literal_link_product() {
        // Evaluate the assembled rows at a random J and compare with the
        // literal formula tr_C[(I (x) H^T) J_F^T] built from the link product.
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let noise = Channel::<f64>::amplitude_damping(0.3).unwrap();
        let k = 2;
        let hk = h(k);
        let p = build_fmin(&noise, k, &hk).unwrap();
        let jc = random::random_hermitian::<f64>(16, &mut r);
        let (f, t) = (1.7, -0.4);
        let mut x = vec![0.0; p.num_vars()];
        let decl = p.variable("J").unwrap();
        herm_to_params(jc.matrix(), &mut x[decl.offset..decl.offset + 256]);
        x[p.variable("f").unwrap().offset] = f;
        x[p.variable("t").unwrap().offset] = t;
        let ax: Vec<f64> = p.a.iter().map(|row| row.iter().map(|&(j, v)| v * x[j]).sum()).collect();

        let nk = noise.tensor_power(k).unwrap();
        let jf = link_product(nk.choi(), &jc, 4, 4, 4).unwrap().with_dims(vec![4, 4]).unwrap();
        let lhs = (&Op::identity(4).tensor(&hk.transpose()) * &jf.transpose()).partial_trace(&[0]).unwrap();
        let mut expect = vec![0.0; 16];
        herm_to_params((&lhs - &Op::identity(4).scale(t)).matrix(), &mut expect);
        let tr_c = jc.clone().with_dims(vec![4, 4]).unwrap().partial_trace(&[0]).unwrap();
        let mut expect_tr = vec![0.0; 16];
        herm_to_params((&tr_c - &Op::identity(4).scale(f)).matrix(), &mut expect_tr);
        for i in 0..16 {
            assert!((ax[i] - expect_tr[i]).abs() < 1e-12, "trace row {i}");
            assert!((ax[16 + i] - expect[i]).abs() < 1e-12, "shift row {i}");
        }
    }

    #[test]
    fn fmin_identity_channel() {
        let sol = fmin(&Channel::identity(2), 2);
        assert_eq!(sol.status, Status::Optimal);
        assert_relative_eq!(sol.objective_value, 1.0, epsilon = 1e-5);
        assert!(sol.scalar("t").unwrap().abs() < 1e-5);
    }

    #[test]
    fn fmin_depolarizing() {
        for (eps, f_expect, t_expect) in [(0.1, 1.0 / 0.81, 0.19 / 1.62), (0.2, 1.5625, 0.28125)] {
            let sol = fmin(&Channel::depolarizing(eps, 2).unwrap(), 2);
            assert_eq!(sol.status, Status::Optimal, "{}", sol.message);
            assert_relative_eq!(sol.objective_value, f_expect, epsilon = 1e-4);
            assert_relative_eq!(sol.scalar("t").unwrap(), t_expect, epsilon = 1e-4);
            let j = sol.matrix("J").unwrap();
            assert!(min_eigenvalue(&j) >= -1e-7);
            let red = j.with_dims(vec![4, 4]).unwrap().partial_trace(&[0]).unwrap();
            assert!(red.max_abs_diff(&Op::identity(4).scale(sol.scalar("f").unwrap())) < 1e-6);
        }
    }

    #[test]
    fn fmin_amplitude_damping() {
        let sol = fmin(&Channel::amplitude_damping(0.2).unwrap(), 2);
        assert_eq!(sol.status, Status::Optimal, "{}", sol.message);
        assert_relative_eq!(sol.objective_value, 1.5625, epsilon = 1e-4);
        assert_relative_eq!(sol.scalar("t").unwrap(), -0.0625, epsilon = 1e-4);
    }

    #[test]
    fn fmin_full_depolarizing_is_infeasible() {
        let sol = fmin(&Channel::depolarizing(1.0, 2).unwrap(), 2);
        assert_eq!(sol.status, Status::Infeasible);
    }

    #[test]
    fn gmin_two_copy_depolarizing() {
        // Redundant equality rows here once tripped a loose eigen-solver threshold.
        let pair = Channel::depolarizing(0.1, 2).unwrap().tensor_power(2).unwrap();
        let sol = solve(&build_gmin(&pair).unwrap(), 1e-7, 200_000).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert_relative_eq!(sol.objective_value, (1.05f64 / 0.9).powi(2), epsilon = 1e-4);
    }

    #[test]
    fn solver_is_deterministic() {
        let a = fmin(&Channel::amplitude_damping(0.1).unwrap(), 2);
        let b = fmin(&Channel::amplitude_damping(0.1).unwrap(), 2);
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.objective_value.to_bits(), b.objective_value.to_bits());
    }

    #[test]
    fn iteration_cap_is_reported() {
        let p = build_fmin(&Channel::amplitude_damping(0.1).unwrap(), 2, &h(2)).unwrap();
        let sol = solve(&p, 1e-12, 10).unwrap();
        assert_eq!(sol.status, Status::MaxIters);
        assert_eq!(sol.iterations, 10);
    }

    #[test]
    fn depolarizing_certificate() {
        let noise = Channel::depolarizing(0.1, 2).unwrap();
        let chk = check_certificate(&de_certificate(0.1), &noise, 2, &h(2)).unwrap();
        assert!(chk.feasible, "{chk:?}");
        assert_relative_eq!(chk.objective, 1.0 / 0.81, epsilon = 1e-12);
    }

    #[test]
    fn amplitude_damping_certificate() {
        let noise = Channel::amplitude_damping(0.2).unwrap();
        let cert = ad_certificate(0.2);
        let chk = check_certificate(&cert, &noise, 2, &h(2)).unwrap();
        assert!(chk.feasible, "{chk:?}");
        assert_relative_eq!(chk.objective, 1.5625, epsilon = 1e-12);
        // the slack factorizes as M (x) I + (M - |11><11|) (x) H
        let z = dual_slack(&cert, &noise, 2, &h(2)).unwrap();
        let expect = &cert.m.tensor(&Op::identity(4)) + &(&cert.m - &Op::matrix_unit(4, 3, 3)).tensor(&h(2));
        assert!(z.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn zero_certificate() {
        let cert = DualCertificate { m: Op::zeros(4), k: Op::zeros(4) };
        let chk = check_certificate(&cert, &Channel::depolarizing(0.3, 2).unwrap(), 2, &h(2)).unwrap();
        assert!(chk.feasible);
        assert_eq!(chk.objective, 0.0);
    }

    #[test]
    fn dual_slack_matches_literal_formula() {
        // M (x) I + tr_A[(K^T (x) I_B (x) H_C)(J^{T_B} (x) I_C)]
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let noise = Channel::<f64>::amplitude_damping(0.35).unwrap();
        let cert = DualCertificate { m: random::random_hermitian(4, &mut r), k: random::random_hermitian(4, &mut r) };
        let hk = h(2);
        let jn = noise.tensor_power(2).unwrap().choi().clone().with_dims(vec![4, 4]).unwrap();
        let lhs = cert.k.transpose().with_dims(vec![4]).unwrap().tensor(&Op::identity(4)).tensor(&hk.clone().with_dims(vec![4]).unwrap());
        let rhs = jn.partial_transpose(&[1]).unwrap().tensor(&Op::identity(4));
        let term = (&lhs * &rhs).partial_trace(&[1, 2]).unwrap();
        let literal = &cert.m.clone().with_dims(vec![4]).unwrap().tensor(&Op::identity(4)) + &term;
        let z = dual_slack(&cert, &noise, 2, &hk).unwrap();
        assert!(z.max_abs_diff(&literal) < 1e-12);
    }

    #[test]
    fn dual_program_matches_primal() {
        for noise in [Channel::depolarizing(0.2, 2).unwrap(), Channel::amplitude_damping(0.2).unwrap()] {
            let p = build_dual_fmin(&noise, 2, &h(2)).unwrap();
            let sol = solve(&p, 1e-7, 200_000).unwrap();
            assert_eq!(sol.status, Status::Optimal, "{}", sol.message);
            assert_relative_eq!(sol.objective_value, 1.5625, epsilon = 1e-4);
            let cert = DualCertificate { m: sol.matrix("M").unwrap(), k: sol.matrix("K").unwrap() };
            let chk = check_certificate(&cert, &noise, 2, &h(2)).unwrap();
            assert!(chk.min_eigenvalue > -1e-6);
        }
    }

    #[test]
    fn gmin_single_qubit() {
        let cases = [
            (Channel::identity(2), 1.0),
            (Channel::depolarizing(0.1, 2).unwrap(), 1.05 / 0.9),
            (Channel::amplitude_damping(0.2).unwrap(), 1.2 / 0.8),
        ];
        for (noise, expect) in cases {
            let sol = solve(&build_gmin(&noise).unwrap(), 1e-7, 200_000).unwrap();
            assert_eq!(sol.status, Status::Optimal, "{}", sol.message);
            assert_relative_eq!(sol.objective_value, expect, epsilon = 1e-4);
        }
        assert_relative_eq!(gmin_power(1.5, 3), 3.375);
    }

    #[test]
    fn gmin_rejects_non_invertible() {
        let sol = solve(&build_gmin(&Channel::depolarizing(1.0, 2).unwrap()).unwrap(), 1e-7, 200_000).unwrap();
        assert_eq!(sol.status, Status::Infeasible);
    }

    #[test]
    fn info_recover_sandwich() {
        let noise = Channel::depolarizing(0.1, 2).unwrap();
        let sol = solve(&build_info_recover(&noise, &pauli::z()).unwrap(), 1e-7, 200_000).unwrap();
        assert_eq!(sol.status, Status::Optimal, "{}", sol.message);
        let g = 1.05 / 0.9;
        assert!(sol.objective_value >= 1.0 - 1e-5 && sol.objective_value <= g + 1e-5, "{}", sol.objective_value);
        let id = solve(&build_info_recover(&Channel::identity(2), &pauli::x()).unwrap(), 1e-7, 200_000).unwrap();
        assert_relative_eq!(id.objective_value, 1.0, epsilon = 1e-5);
    }

    #[test]
    fn problem_json_round_trip() {
        let p = build_fmin(&Channel::amplitude_damping(0.1).unwrap(), 2, &h(2)).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let back: SdpProblem = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        assert_eq!(p.psd_blocks(), vec![("J".to_string(), 16)]);
        assert_eq!(p.free_scalars(), vec!["f".to_string(), "t".to_string()]);
    }

    #[test]
    fn validation_rejects_undeclared_columns() {
        let mut p = build_gmin(&Channel::identity(2)).unwrap();
        p.a[0].push((10_000, 1.0));
        assert!(matches!(solve(&p, 1e-7, 10), Err(Error::Format(_))));
    }
}
