//! Retrieval protocols: a retriever map `C` with constants `f`, `t` such that
//! `f tr[H C(N^{(x)k}(rho^{(x)k}))] - t = tr[rho^k]`.
//!
//! Closed forms cover two copies under depolarizing and amplitude damping
//! noise. The recursive construction handles `k` copies of depolarized qudits,
//! and any optimal observable-shift program solution converts to a protocol.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::channels::{Channel, NoiseSpec};
use crate::error::{Error, Result};
use crate::moments::{moment, moment_observable, permutation_eigenprojectors};
use crate::operator::{pauli, Operator};
use crate::scalar::C;
use crate::sdp::SdpSolution;

type Op = Operator<f64>;
type Cm = DMatrix<C<f64>>;

/// Version of the protocol file layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Largest `d^k` for which recursive retrievers are built.
pub const RECURSIVE_DIM_CAP: usize = 64;

#[derive(Clone, Debug)]
pub enum Realization {
    /// Apply `U_j` with probability `p_j`.
    MixedUnitary { probabilities: Vec<f64>, unitaries: Vec<Op> },
    /// Measure in an orthonormal basis; outcome `i` prepares `states[i]`,
    /// whose moment-observable value is `values[i]`.
    MeasurementBased { basis: Vec<DVector<C<f64>>>, states: Vec<Op>, values: Vec<f64> },
    /// Linear map given by its Choi matrix.
    ChoiMap { channel: Channel<f64>, trace_preserving: bool },
    Recursive(RecursiveRetriever),
}

impl Realization {
    pub fn kind(&self) -> &'static str {
        match self {
            Realization::MixedUnitary { .. } => "mixed_unitary",
            Realization::MeasurementBased { .. } => "measurement_based",
            Realization::ChoiMap { .. } => "choi_map",
            Realization::Recursive(_) => "recursive",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RetrievalProtocol {
    pub label: String,
    pub k: usize,
    /// Dimension of a single copy.
    pub copy_dim: usize,
    pub f: f64,
    pub t: f64,
    /// Noise the protocol was built for, when known.
    pub noise: Option<NoiseSpec>,
    pub realization: Realization,
}

fn check_invertible_eps(eps: f64) -> Result<()> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidParameter(format!(
            "noise strength {eps} must lie in [0, 1); eps = 1 is not invertible"
        )));
    }
    Ok(())
}

fn unit(n: usize, r: usize, s: usize) -> Cm {
    let mut m = Cm::zeros(n, n);
    m[(r, s)] = C::new(1.0, 0.0);
    m
}

fn binomial(n: usize, r: usize) -> f64 {
    (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

// ---------------------------------------------------------------------------
// Two-copy depolarizing retriever

const DE_TWIRL_ROWS: [&str; 8] = [
    "-i 1 1 i; i 1 -1 i; i -1 1 i; -i -1 -1 i",
    "i -1 -1 -i; i 1 -1 i; i -1 1 i; i 1 1 -i",
    "i i i i; -1 1 -1 1; -1 -1 1 1; -i i i -i",
    "-i i i -i; 1 1 -1 -1; 1 -1 1 -1; i i i i",
    "i 1 1 -i; -i 1 -1 -i; -i -1 1 -i; i -1 -1 -i",
    "-i -1 -1 i; -i 1 -1 -i; -i -1 1 -i; -i 1 1 i",
    "i -i -i i; 1 1 -1 -1; 1 -1 1 -1; -i -i -i -i",
    "-i -i -i -i; -1 1 -1 1; -1 -1 1 1; i -i -i i",
];

fn parse_half_units(spec: &str) -> Op {
    let rows: Vec<Vec<C<f64>>> = spec
        .split(';')
        .map(|row| {
            row.split_whitespace()
                .map(|tok| match tok {
                    "1" => C::new(0.5, 0.0),
                    "-1" => C::new(-0.5, 0.0),
                    "i" => C::new(0.0, 0.5),
                    "-i" => C::new(0.0, -0.5),
                    other => panic!("bad matrix token {other}"),
                })
                .collect()
        })
        .collect();
    Op::from_fn(vec![2, 2], |r, s| rows[r][s])
}

/// The twelve two-qubit unitaries of the depolarizing twirl.
pub fn de_twirl_unitaries() -> Vec<Op> {
    let mut out = vec![
        Op::identity_with_dims(vec![2, 2]),
        pauli::string(&[1, 1]),
        pauli::string(&[2, 2]),
        pauli::string(&[3, 3]),
    ];
    out.extend(DE_TWIRL_ROWS.iter().map(|s| parse_half_units(s)));
    out
}

/// `sum_{P != I} P (x) P` over `n`-qubit Pauli strings.
pub fn pauli_pair_sum(n: usize) -> Op {
    let d = 1usize << n;
    let mut acc = Op::zeros_with_dims(vec![d, d]);
    for p in pauli::all_strings::<f64>(n).into_iter().skip(1) {
        let p = p.with_dims(vec![d]).expect("dims");
        acc += &p.tensor(&p);
    }
    acc
}

/// Closed-form Choi matrix `I/d^2 + W (x) W / (d^2 (d^2 - 1))` of the
/// two-copy depolarizing retriever, with `W = d SWAP - I`.
fn de_retriever_choi(d: usize, w: &Op) -> Op {
    let d2 = (d * d) as f64;
    let id = Op::identity_with_dims(vec![d, d]);
    &id.tensor(&id).scale(1.0 / d2) + &w.tensor(w).scale(1.0 / (d2 * (d2 - 1.0)))
}

/// Checks that the twirl unitaries are unitary and reproduce the closed-form Choi.
pub fn check_de_twirl() -> Result<()> {
    static CHECK: OnceLock<std::result::Result<(), String>> = OnceLock::new();
    CHECK
        .get_or_init(|| {
            let us = de_twirl_unitaries();
            for (j, u) in us.iter().enumerate() {
                let dev = (&u.adjoint() * u).max_abs_diff(&Op::identity_with_dims(vec![2, 2]));
                if dev > 1e-12 {
                    return Err(format!("twirl unitary {} deviates from unitarity by {dev:e}", j + 1));
                }
            }
            let kraus = us.iter().map(|u| u.matrix() * C::new((1.0f64 / 12.0).sqrt(), 0.0)).collect();
            let ch = Channel::from_kraus("twirl", vec![2, 2], vec![2, 2], kraus).map_err(|e| e.to_string())?;
            let dev = ch.choi().max_abs_diff(&de_retriever_choi(2, &pauli_pair_sum(1)));
            if dev > 1e-12 {
                return Err(format!("twirl Choi matrix deviates from closed form by {dev:e}"));
            }
            Ok(())
        })
        .clone()
        .map_err(Error::InvalidParameter)
}

/// Depolarizing noise on one qubit, two copies: uniform mixture of twelve unitaries.
pub fn de_second_moment(eps: f64) -> Result<RetrievalProtocol> {
    check_invertible_eps(eps)?;
    check_de_twirl()?;
    let g = (1.0 - eps).powi(2);
    Ok(RetrievalProtocol {
        label: format!("de_second_moment(eps={eps})"),
        k: 2,
        copy_dim: 2,
        f: 1.0 / g,
        t: (1.0 - g) / (2.0 * g),
        noise: Some(NoiseSpec::new(crate::channels::NoiseModel::Depolarizing, eps, 1)?),
        realization: Realization::MixedUnitary { probabilities: vec![1.0 / 12.0; 12], unitaries: de_twirl_unitaries() },
    })
}

/// Depolarizing noise on `n` qubits, two copies.
pub fn de_second_moment_nqubit(eps: f64, n: usize) -> Result<RetrievalProtocol> {
    check_invertible_eps(eps)?;
    if n == 0 || n > 3 {
        return Err(Error::DimensionCap { dim: 1 << (4 * n.min(16)), cap: 1 << 12 });
    }
    let d = 1usize << n;
    let g = (1.0 - eps).powi(2);
    let choi = de_retriever_choi(d, &pauli_pair_sum(n));
    let channel = Channel::from_choi(format!("de_retriever(n={n})"), vec![d, d], vec![d, d], choi)?;
    Ok(RetrievalProtocol {
        label: format!("de_second_moment_nqubit(eps={eps}, n={n})"),
        k: 2,
        copy_dim: d,
        f: 1.0 / g,
        t: (1.0 - g) / (d as f64 * g),
        noise: Some(NoiseSpec::new(crate::channels::NoiseModel::Depolarizing, eps, n)?),
        realization: Realization::ChoiMap { channel, trace_preserving: true },
    })
}

// ---------------------------------------------------------------------------
// Two-copy amplitude damping retriever

/// Basis `|00>, |Psi+>, |Psi->, |11>`.
pub fn ad_measurement_basis() -> Vec<DVector<C<f64>>> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let v = |a: [f64; 4]| DVector::from_iterator(4, a.iter().map(|&x| C::new(x, 0.0)));
    vec![v([1.0, 0.0, 0.0, 0.0]), v([0.0, h, h, 0.0]), v([0.0, h, -h, 0.0]), v([0.0, 0.0, 0.0, 1.0])]
}

/// Amplitude damping on one qubit, two copies: Bell-type measurement and
/// re-preparation.
pub fn ad_second_moment(eps: f64) -> Result<RetrievalProtocol> {
    check_invertible_eps(eps)?;
    let h = moment_observable::<f64>(2, 2)?.matrix;
    let id = Op::identity_with_dims(vec![2, 2]);
    let mixed = (&id.scale(1.0 + 2.0 * eps) + &h.scale(1.0 - 4.0 * eps)).scale(1.0 / 6.0);
    let anti = (&id - &h).scale(0.5);
    let sym = (&id + &h).scale(1.0 / 6.0);
    let states = vec![mixed.clone(), mixed, anti, sym];
    let values = states.iter().map(|s| s.expectation(&h)).collect();
    let g = (1.0 - eps).powi(2);
    Ok(RetrievalProtocol {
        label: format!("ad_second_moment(eps={eps})"),
        k: 2,
        copy_dim: 2,
        f: 1.0 / g,
        t: -eps * eps / g,
        noise: Some(NoiseSpec::new(crate::channels::NoiseModel::AmplitudeDamping, eps, 1)?),
        realization: Realization::MeasurementBased { basis: ad_measurement_basis(), states, values },
    })
}

/// Choi matrix `sum_i |b_i*><b_i*| (x) sigma_i` of a measure-and-prepare map.
fn measure_prepare_choi(basis: &[DVector<C<f64>>], states: &[Op]) -> Op {
    let din = basis[0].len();
    let dout = states[0].dim();
    let mut j = Cm::zeros(din * dout, din * dout);
    for (b, s) in basis.iter().zip(states) {
        let bc = b.map(|z| z.conj());
        j += (&bc * bc.adjoint()).kronecker(s.matrix());
    }
    Op::from_matrix(j).expect("square")
}

// ---------------------------------------------------------------------------
// Transfer maps between cyclic-permutation observables

/// Weights `x_l`, `y_l` writing `omega_{k-1}^l` as a nonnegative combination of
/// `omega_k^l` and `omega_k^{l+1}`.
pub fn transfer_weights(k: usize, l: usize) -> (f64, f64) {
    let kf = k as f64;
    let csc = 1.0 / (2.0 * PI / kf).sin();
    let x = csc * (2.0 * (kf - 1.0 - l as f64) * PI / (kf * (kf - 1.0))).sin();
    let y = csc * (2.0 * l as f64 * PI / (kf * (kf - 1.0))).sin();
    (x, y)
}

/// Nonnegative `(k-1) x k` matrices with `sum_m Q_lm omega_k^m = omega_{k-1}^l`
/// and `sum_m Qt_lm omega_k^m = -omega_{k-1}^l`.
pub fn transfer_coefficients(k: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if k < 3 {
        return Err(Error::InvalidParameter(format!("transfer maps need k >= 3, got {k}")));
    }
    let mut q = DMatrix::zeros(k - 1, k);
    for l in 0..k - 1 {
        let (x, y) = transfer_weights(k, l);
        q[(l, l)] = x;
        q[(l, l + 1)] = y;
    }
    let qt = if k % 2 == 1 {
        // -omega_{k-1}^l = omega_{k-1}^{l + (k-1)/2}: swap the two halves of the rows
        let half = (k - 1) / 2;
        DMatrix::from_fn(k - 1, k, |l, m| q[((l + half) % (k - 1), m)])
    } else {
        // -omega_k^m = omega_k^{m + k/2}: swap the two halves of the columns
        let half = k / 2;
        DMatrix::from_fn(k - 1, k, |l, m| q[(l, (m + half) % k)])
    };
    Ok((q, qt))
}

/// `max_l |sum_m Q_lm omega_k^m - sign omega_{k-1}^l|`.
pub fn transfer_condition_residual(q: &DMatrix<f64>, k: usize, sign: f64) -> f64 {
    let w = |n: usize, p: usize| C::from_polar(1.0, 2.0 * PI * p as f64 / n as f64);
    (0..k - 1)
        .map(|l| {
            let s: C<f64> = (0..k).map(|m| w(k, m) * q[(l, m)]).sum();
            (s - w(k - 1, l) * sign).norm()
        })
        .fold(0.0, f64::max)
}

/// Measure-and-prepare map `X -> sum_m tr[P_m X] / rank(P_m) * B_m` on the
/// first `k` of possibly more subsystems.
#[derive(Clone, Debug)]
pub struct TransferMap {
    pub k: usize,
    pub d: usize,
    inputs: Vec<Cm>,
    outputs: Vec<Cm>,
    ranks: Vec<f64>,
}

/// `tr_A[(A (x) I) X]` for `X` on `A (x) R`.
fn weighted_trace_first(a: &Cm, x: &Cm, dr: usize) -> Cm {
    let da = a.nrows();
    Cm::from_fn(dr, dr, |r, s| {
        let mut acc = C::new(0.0, 0.0);
        for i in 0..da {
            for j in 0..da {
                let aji = a[(j, i)];
                if aji != C::new(0.0, 0.0) {
                    acc += aji * x[(i * dr + r, j * dr + s)];
                }
            }
        }
        acc
    })
}

impl TransferMap {
    fn build(k: usize, d: usize, q: &DMatrix<f64>) -> Result<Self> {
        let big = permutation_eigenprojectors::<f64>(k, d)?;
        let small = permutation_eigenprojectors::<f64>(k - 1, d)?;
        let id = Cm::identity(d, d) * C::new(1.0 / d as f64, 0.0);
        let mut inputs = Vec::with_capacity(k);
        let mut outputs = Vec::with_capacity(k);
        let mut ranks = Vec::with_capacity(k);
        for m in 0..k {
            let p = big.eigenspace(m).matrix().clone();
            ranks.push(p.trace().re);
            inputs.push(p);
            let mut b = Cm::zeros(small.eigenspace(0).dim(), small.eigenspace(0).dim());
            for l in 0..k - 1 {
                if q[(l, m)] != 0.0 {
                    b += small.eigenspace(l).matrix() * C::new(q[(l, m)], 0.0);
                }
            }
            outputs.push(b.kronecker(&id));
        }
        if ranks.iter().any(|&r| r < 0.5) {
            return Err(Error::InvalidParameter(format!("empty permutation eigenspace for k={k}, d={d}")));
        }
        Ok(Self { k, d, inputs, outputs, ranks })
    }

    fn rest_dim(&self, x: &Cm) -> Result<usize> {
        let dk = self.d.pow(self.k as u32);
        if !x.nrows().is_multiple_of(dk) {
            return Err(Error::DimensionMismatch(format!("operator of dimension {} does not contain {dk}", x.nrows())));
        }
        Ok(x.nrows() / dk)
    }

    /// `(T (x) id)(X)`.
    pub fn apply_first(&self, x: &Cm) -> Result<Cm> {
        let dr = self.rest_dim(x)?;
        let mut out = Cm::zeros(x.nrows(), x.nrows());
        for ((p, b), r) in self.inputs.iter().zip(&self.outputs).zip(&self.ranks) {
            let red = weighted_trace_first(p, x, dr) / C::new(*r, 0.0);
            out += b.kronecker(&red);
        }
        Ok(out)
    }

    /// `(T^dagger (x) id)(Y)`.
    pub fn adjoint_first(&self, y: &Cm) -> Result<Cm> {
        let dr = self.rest_dim(y)?;
        let mut out = Cm::zeros(y.nrows(), y.nrows());
        for ((p, b), r) in self.inputs.iter().zip(&self.outputs).zip(&self.ranks) {
            let red = weighted_trace_first(b, y, dr) / C::new(*r, 0.0);
            out += p.kronecker(&red);
        }
        Ok(out)
    }

    pub fn apply(&self, x: &Op) -> Result<Op> {
        Op::new(self.apply_first(x.matrix())?, x.dims().to_vec())
    }

    pub fn adjoint_apply(&self, y: &Op) -> Result<Op> {
        Op::new(self.adjoint_first(y.matrix())?, y.dims().to_vec())
    }

    /// Choi matrix `sum_m P_m^T (x) B_m / rank(P_m)`.
    pub fn choi(&self) -> Op {
        let n = self.inputs[0].nrows();
        let mut j = Cm::zeros(n * n, n * n);
        for ((p, b), r) in self.inputs.iter().zip(&self.outputs).zip(&self.ranks) {
            j += p.transpose().kronecker(b) / C::new(*r, 0.0);
        }
        Op::new(j, vec![self.d; 2 * self.k]).expect("dims")
    }

    pub fn to_channel(&self, label: &str) -> Result<Channel<f64>> {
        Channel::from_choi(label, vec![self.d; self.k], vec![self.d; self.k], self.choi())
    }
}

#[derive(Clone, Debug)]
pub struct TransferMapPair {
    pub k: usize,
    pub d: usize,
    pub q: DMatrix<f64>,
    pub q_tilde: DMatrix<f64>,
    /// Maps `H_k` to `H_{k-1} (x) I / d`.
    pub forward: TransferMap,
    /// Maps `H_k` to `-H_{k-1} (x) I / d`.
    pub negated: TransferMap,
}

pub fn transfer_maps(k: usize, d: usize) -> Result<TransferMapPair> {
    let (q, q_tilde) = transfer_coefficients(k)?;
    let dim = (d as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
    if dim > RECURSIVE_DIM_CAP as u128 {
        return Err(Error::DimensionCap { dim: dim.min(usize::MAX as u128) as usize, cap: RECURSIVE_DIM_CAP });
    }
    let forward = TransferMap::build(k, d, &q)?;
    let negated = TransferMap::build(k, d, &q_tilde)?;
    Ok(TransferMapPair { k, d, q, q_tilde, forward, negated })
}

/// `R_l = (T_{l+1} (x) id) o ... o (T_{k-1} (x) id) o Tt_k`, mapping `H_k`
/// to `-H_l (x) I / d^{k-l}`.
#[derive(Clone, Debug)]
pub struct RecoveryMap {
    pub k: usize,
    pub l: usize,
    pub d: usize,
    /// Factors in application order.
    chain: Vec<TransferMap>,
}

impl RecoveryMap {
    fn from_pairs(k: usize, l: usize, d: usize, pairs: &[TransferMapPair]) -> Self {
        // pairs[j - 3] holds the maps for j copies
        let mut chain = vec![pairs[k - 3].negated.clone()];
        for j in (l + 1..k).rev() {
            chain.push(pairs[j - 3].forward.clone());
        }
        Self { k, l, d, chain }
    }

    pub fn apply(&self, x: &Op) -> Result<Op> {
        let mut m = x.matrix().clone();
        for t in &self.chain {
            m = t.apply_first(&m)?;
        }
        Op::new(m, x.dims().to_vec())
    }

    pub fn adjoint_apply(&self, y: &Op) -> Result<Op> {
        Op::new(self.adjoint_matrix(y.matrix())?, y.dims().to_vec())
    }

    fn adjoint_matrix(&self, y: &Cm) -> Result<Cm> {
        let mut m = y.clone();
        for t in self.chain.iter().rev() {
            m = t.adjoint_first(&m)?;
        }
        Ok(m)
    }

    pub fn choi(&self) -> Op {
        let n = self.d.pow(self.k as u32);
        let mut j = Cm::zeros(n * n, n * n);
        for r in 0..n {
            for s in 0..n {
                let mut m = unit(n, r, s);
                for t in &self.chain {
                    m = t.apply_first(&m).expect("dims");
                }
                j.view_mut((r * n, s * n), (n, n)).copy_from(&m);
            }
        }
        Op::new(j, vec![self.d; 2 * self.k]).expect("dims")
    }
}

pub fn recovery_map(k: usize, l: usize, d: usize) -> Result<RecoveryMap> {
    if l < 2 || l >= k {
        return Err(Error::InvalidParameter(format!("recovery map needs 2 <= l < k, got l={l}, k={k}")));
    }
    let pairs = (3..=k).map(|j| transfer_maps(j, d)).collect::<Result<Vec<_>>>()?;
    Ok(RecoveryMap::from_pairs(k, l, d, &pairs))
}

// ---------------------------------------------------------------------------
// Recursive k-copy depolarizing retriever

/// Shift constants `t_2, ..., t_k` for `k` copies of depolarized qudits.
/// Entry `i` holds `t_{i+2}`.
pub fn de_shift_constants(eps: f64, k: usize, d: usize) -> Result<Vec<f64>> {
    check_invertible_eps(eps)?;
    if k < 2 {
        return Err(Error::InvalidParameter(format!("moment order {k} < 2")));
    }
    let df = d as f64;
    let a = 1.0 - eps;
    let mut ts: Vec<f64> = Vec::with_capacity(k - 1);
    for j in 2..=k {
        // tr[D(rho)^j] = sum_l binom(j,l) a^l eps^{j-l} d^{l-j} tr[rho^l], where tr[rho^0] = d
        let mut acc = eps.powi(j as i32) / df.powi(j as i32 - 1) + j as f64 * a * eps.powi(j as i32 - 1) / df.powi(j as i32 - 1);
        for l in 2..j {
            acc -= binomial(j, l) * a.powi(l as i32) * eps.powi((j - l) as i32) / df.powi((j - l) as i32) * ts[l - 2];
        }
        ts.push(acc / a.powi(j as i32));
    }
    Ok(ts)
}

/// `C_k = id + sum_{l=2}^{k-1} binom(k,l) (1-eps)^l eps^{k-l} f_l R_l^dagger o (C_l (x) id)`,
/// with `C_2` the two-copy depolarizing retriever. Stored as factors and
/// applied factor by factor.
#[derive(Clone, Debug)]
pub struct RecursiveRetriever {
    pub k: usize,
    pub d: usize,
    pub eps: f64,
    pairs: Vec<TransferMapPair>,
    /// Superoperators of `C_2, ..., C_{k-1}`.
    lower: Vec<Cm>,
    w: Cm,
}

impl RecursiveRetriever {
    pub fn new(eps: f64, k: usize, d: usize) -> Result<Self> {
        check_invertible_eps(eps)?;
        if k < 2 || d < 2 {
            return Err(Error::InvalidParameter(format!("recursive retriever needs k >= 2 and d >= 2, got k={k}, d={d}")));
        }
        let dim = (d as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
        if dim > RECURSIVE_DIM_CAP as u128 {
            return Err(Error::DimensionCap { dim: dim.min(usize::MAX as u128) as usize, cap: RECURSIVE_DIM_CAP });
        }
        let pairs = (3..=k).map(|j| transfer_maps(j, d)).collect::<Result<Vec<_>>>()?;
        let swap = moment_observable::<f64>(2, d)?.matrix;
        let w = (&swap.scale(d as f64) - &Op::identity(d * d)).into_matrix();
        let mut me = Self { k, d, eps, pairs, lower: Vec::new(), w };
        for l in 2..k {
            let n = d.pow(l as u32);
            let mut sup = Cm::zeros(n * n, n * n);
            for s in 0..n {
                for r in 0..n {
                    let img = me.apply_level(l, &unit(n, r, s))?;
                    sup.set_column(s * n + r, &DVector::from_column_slice(img.as_slice()));
                }
            }
            me.lower.push(sup);
        }
        Ok(me)
    }

    fn apply_two_copy(&self, x: &Cm) -> Cm {
        let d2 = (self.d * self.d) as f64;
        let id = Cm::identity(x.nrows(), x.nrows());
        let tw: C<f64> = x.iter().zip(self.w.transpose().iter()).map(|(a, b)| a * b).sum();
        id * (x.trace() / d2) + &self.w * (tw / (d2 * (d2 - 1.0)))
    }

    /// `(C_l (x) id)(X)` using the stored superoperator.
    fn apply_lower_first(&self, l: usize, x: &Cm) -> Cm {
        let n = self.d.pow(l as u32);
        let dr = x.nrows() / n;
        let sup = &self.lower[l - 2];
        let mut out = Cm::zeros(x.nrows(), x.nrows());
        for a in 0..dr {
            for b in 0..dr {
                let block = Cm::from_fn(n, n, |i, j| x[(i * dr + a, j * dr + b)]);
                let v = sup * DVector::from_column_slice(block.as_slice());
                for j in 0..n {
                    for i in 0..n {
                        out[(i * dr + a, j * dr + b)] = v[j * n + i];
                    }
                }
            }
        }
        out
    }

    fn apply_level(&self, level: usize, x: &Cm) -> Result<Cm> {
        if level == 2 {
            return Ok(self.apply_two_copy(x));
        }
        let mut out = x.clone();
        for l in 2..level {
            let c = binomial(level, l) * (1.0 - self.eps).powi(l as i32) * self.eps.powi((level - l) as i32)
                / (1.0 - self.eps).powi(l as i32);
            if c == 0.0 {
                continue;
            }
            let inner = self.apply_lower_first(l, x);
            let rec = RecoveryMap::from_pairs(level, l, self.d, &self.pairs);
            out += rec.adjoint_matrix(&inner)? * C::new(c, 0.0);
        }
        Ok(out)
    }

    pub fn apply(&self, x: &Op) -> Result<Op> {
        let n = self.d.pow(self.k as u32);
        if x.dim() != n {
            return Err(Error::DimensionMismatch(format!("retriever acts on dimension {n}, got {}", x.dim())));
        }
        Op::new(self.apply_level(self.k, x.matrix())?, vec![self.d; self.k])
    }

    /// Dense Choi matrix; intended for verification at small `d^k`.
    pub fn choi(&self) -> Result<Op> {
        let n = self.d.pow(self.k as u32);
        let mut j = Cm::zeros(n * n, n * n);
        for r in 0..n {
            for s in 0..n {
                let img = self.apply_level(self.k, &unit(n, r, s))?;
                j.view_mut((r * n, s * n), (n, n)).copy_from(&img);
            }
        }
        Op::new(j, vec![self.d; 2 * self.k])
    }
}

/// `k` copies of depolarized qudits of dimension `d`.
pub fn de_kth_moment(eps: f64, k: usize, d: usize) -> Result<RetrievalProtocol> {
    let ts = de_shift_constants(eps, k, d)?;
    let retriever = RecursiveRetriever::new(eps, k, d)?;
    let noise = if d.is_power_of_two() && d.trailing_zeros() as usize <= crate::channels::MAX_COPY_QUBITS {
        Some(NoiseSpec::new(crate::channels::NoiseModel::Depolarizing, eps, d.trailing_zeros() as usize)?)
    } else {
        None
    };
    Ok(RetrievalProtocol {
        label: format!("de_kth_moment(eps={eps}, k={k}, d={d})"),
        k,
        copy_dim: d,
        f: 1.0 / (1.0 - eps).powi(k as i32),
        t: ts[k - 2],
        noise,
        realization: Realization::Recursive(retriever),
    })
}

// ---------------------------------------------------------------------------
// Protocols from program solutions

/// Tolerance on `tr_out J = f I` when extracting a protocol from a solution.
pub const EXTRACTION_TOL: f64 = 1e-5;

/// Turns an optimal observable-shift solution into a protocol with
/// retriever `J / f`.
pub fn from_sdp_solution(sol: &SdpSolution, k: usize, h: &Op) -> Result<RetrievalProtocol> {
    if !sol.is_optimal() {
        return Err(Error::NotConverged(format!("solution status {:?}: {}", sol.status, sol.message)));
    }
    let missing = |n: &str| Error::Format(format!("solution has no variable {n}"));
    let j = sol.matrix("J").ok_or_else(|| missing("J"))?;
    let f = sol.scalar("f").ok_or_else(|| missing("f"))?;
    let t = sol.scalar("t").ok_or_else(|| missing("t"))?;
    let dd = h.dim();
    if j.dim() != dd * dd {
        return Err(Error::DimensionMismatch(format!("Choi matrix of dimension {} for observable dimension {dd}", j.dim())));
    }
    let d = (dd as f64).powf(1.0 / k as f64).round() as usize;
    if d.pow(k as u32) != dd {
        return Err(Error::DimensionMismatch(format!("dimension {dd} is not a {k}-th power")));
    }
    let raw = j.hermitian_part().scale(1.0 / f).with_dims(vec![dd, dd])?;
    let tp_err = raw.partial_trace(&[0])?.max_abs_diff(&Op::identity(dd));
    if tp_err > EXTRACTION_TOL {
        return Err(Error::NotConverged(format!("retriever trace deviation {tp_err:e} exceeds {EXTRACTION_TOL:e}")));
    }
    // Clip the solver's small negative eigenvalues, then restore tr_out = I
    // exactly with the congruence (T^{-1/2} (x) I) J (T^{-1/2} (x) I).
    let psd = raw.project_psd().with_dims(vec![dd, dd])?;
    let fix = psd.partial_trace(&[0])?.spectral_map(|x| 1.0 / x.sqrt());
    let a = fix.tensor(&Op::identity(dd));
    let choi = (&(&a * &psd) * &a).hermitian_part().with_dims(vec![dd, dd])?;
    let channel = Channel::from_choi("sdp_retriever", vec![d; k], vec![d; k], choi)?;
    Ok(RetrievalProtocol {
        label: format!("sdp_retriever(k={k}, d={d})"),
        k,
        copy_dim: d,
        f,
        t,
        noise: None,
        realization: Realization::ChoiMap { channel, trace_preserving: true },
    })
}

// ---------------------------------------------------------------------------
// Evaluation

/// `N(rho)^{(x)k}` with subsystem dims `[d; k]`.
pub fn noisy_copies(noise: &Channel<f64>, rho: &Op, k: usize) -> Result<Op> {
    let out = noise.apply(rho)?;
    let d = out.dim();
    out.with_dims(vec![d])?.tensor_power(k).with_dims(vec![d; k])
}

impl RetrievalProtocol {
    pub fn total_dim(&self) -> usize {
        self.copy_dim.pow(self.k as u32)
    }

    /// Retriever output for a `k`-copy input.
    pub fn apply(&self, x: &Op) -> Result<Op> {
        let n = self.total_dim();
        if x.dim() != n {
            return Err(Error::DimensionMismatch(format!("protocol acts on dimension {n}, got {}", x.dim())));
        }
        let x = x.clone().with_dims(vec![self.copy_dim; self.k])?;
        match &self.realization {
            Realization::MixedUnitary { probabilities, unitaries } => {
                let mut acc = Op::zeros_with_dims(vec![self.copy_dim; self.k]);
                for (p, u) in probabilities.iter().zip(unitaries) {
                    let um = u.matrix();
                    let y = Op::new(um * x.matrix() * um.adjoint(), x.dims().to_vec())?;
                    acc += &y.scale(*p);
                }
                Ok(acc)
            }
            Realization::MeasurementBased { basis, states, .. } => {
                let mut acc = Op::zeros_with_dims(vec![self.copy_dim; self.k]);
                for (b, s) in basis.iter().zip(states) {
                    let p = (b.adjoint() * x.matrix() * b)[(0, 0)].re;
                    acc += &s.clone().with_dims(vec![self.copy_dim; self.k])?.scale(p);
                }
                Ok(acc)
            }
            Realization::ChoiMap { channel, .. } => channel.apply(&x)?.with_dims(vec![self.copy_dim; self.k]),
            Realization::Recursive(r) => r.apply(&x),
        }
    }

    /// Dense Choi matrix of the retriever.
    pub fn choi(&self) -> Result<Op> {
        match &self.realization {
            Realization::MixedUnitary { probabilities, unitaries } => {
                let kraus = probabilities.iter().zip(unitaries).map(|(p, u)| u.matrix() * C::new(p.sqrt(), 0.0)).collect();
                let dims = vec![self.copy_dim; self.k];
                Ok(Channel::from_kraus("mixed_unitary", dims.clone(), dims, kraus)?.choi().clone())
            }
            Realization::MeasurementBased { basis, states, .. } => Ok(measure_prepare_choi(basis, states)),
            Realization::ChoiMap { channel, .. } => Ok(channel.choi().clone()),
            Realization::Recursive(r) => r.choi(),
        }
    }

    /// Exact `zeta = tr[H C(X)]` for the `k`-copy noisy input `X`.
    pub fn exact_expectation(&self, noisy: &Op, h: &Op) -> Result<f64> {
        if h.dim() != self.total_dim() {
            return Err(Error::DimensionMismatch(format!(
                "observable dimension {} for protocol dimension {}",
                h.dim(),
                self.total_dim()
            )));
        }
        Ok(self.apply(noisy)?.trace_product(h).re)
    }

    /// `f zeta - t`.
    pub fn estimate_from(&self, zeta: f64) -> f64 {
        self.f * zeta - self.t
    }

    /// Recovered `tr[rho^k]` by exact evaluation.
    pub fn exact_moment(&self, noise: &Channel<f64>, rho: &Op) -> Result<f64> {
        let h = moment_observable::<f64>(self.k, self.copy_dim)?.matrix;
        let zeta = self.exact_expectation(&noisy_copies(noise, rho, self.k)?, &h)?;
        Ok(self.estimate_from(zeta))
    }

    /// `|f zeta - t - tr[rho^k]|`.
    pub fn contract_residual(&self, noise: &Channel<f64>, rho: &Op) -> Result<f64> {
        Ok((self.exact_moment(noise, rho)? - moment(rho, self.k)).abs())
    }

    /// Structural checks on the realization: unitarity, normalization, CP and TP.
    pub fn validate(&self) -> Result<()> {
        if !(self.f > 0.0) || !self.f.is_finite() || !self.t.is_finite() {
            return Err(Error::InvalidParameter(format!("invalid constants f={}, t={}", self.f, self.t)));
        }
        let n = self.total_dim();
        match &self.realization {
            Realization::MixedUnitary { probabilities, unitaries } => {
                if probabilities.len() != unitaries.len() || probabilities.iter().any(|&p| p < 0.0) {
                    return Err(Error::InvalidParameter("mixed-unitary weights are malformed".into()));
                }
                let total: f64 = probabilities.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(format!("probabilities sum to {total}")));
                }
                for u in unitaries {
                    if u.dim() != n || (&u.adjoint() * u).max_abs_diff(&Op::identity(n)) > 1e-12 {
                        return Err(Error::InvalidParameter("mixed-unitary member is not unitary".into()));
                    }
                }
            }
            Realization::MeasurementBased { basis, states, values } => {
                if basis.len() != states.len() || basis.len() != values.len() || basis.iter().any(|b| b.len() != n) {
                    return Err(Error::InvalidParameter("measurement data are malformed".into()));
                }
                let g = DMatrix::from_fn(basis.len(), basis.len(), |i, j| basis[i].dotc(&basis[j]));
                if (g - Cm::identity(basis.len(), basis.len())).iter().any(|z| z.norm() > 1e-12) {
                    return Err(Error::InvalidParameter("measurement basis is not orthonormal".into()));
                }
                for s in states {
                    if !s.is_psd(1e-10) || (s.trace().re - 1.0).abs() > 1e-10 {
                        return Err(Error::InvalidParameter("post-measurement state is not a density matrix".into()));
                    }
                }
            }
            Realization::ChoiMap { channel, trace_preserving } => {
                let j = channel.choi();
                if j.min_eigenvalue() < -1e-8 {
                    return Err(Error::InvalidParameter("retriever is not completely positive".into()));
                }
                if *trace_preserving && channel.trace_preservation_error() > 1e-8 {
                    return Err(Error::InvalidParameter("retriever is not trace preserving".into()));
                }
            }
            Realization::Recursive(r) => {
                if r.k != self.k || r.d != self.copy_dim {
                    return Err(Error::InvalidParameter("recursive retriever shape mismatch".into()));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// File format

type Rows = Vec<Vec<[f64; 2]>>;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum RealizationData {
    MixedUnitary { probabilities: Vec<f64>, unitaries: Vec<Rows> },
    MeasurementBased { basis: Vec<Vec<[f64; 2]>>, states: Vec<Rows>, values: Vec<f64> },
    ChoiMap { choi: Rows, trace_preserving: bool },
    Recursive { eps: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolFile {
    pub schema_version: u32,
    pub label: String,
    pub k: usize,
    pub copy_dim: usize,
    pub f: f64,
    pub t: f64,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(flatten)]
    pub realization: RealizationData,
}

impl RetrievalProtocol {
    pub fn to_file(&self) -> ProtocolFile {
        let realization = match &self.realization {
            Realization::MixedUnitary { probabilities, unitaries } => RealizationData::MixedUnitary {
                probabilities: probabilities.clone(),
                unitaries: unitaries.iter().map(|u| u.to_rows()).collect(),
            },
            Realization::MeasurementBased { basis, states, values } => RealizationData::MeasurementBased {
                basis: basis.iter().map(|b| b.iter().map(|z| [z.re, z.im]).collect()).collect(),
                states: states.iter().map(|s| s.to_rows()).collect(),
                values: values.clone(),
            },
            Realization::ChoiMap { channel, trace_preserving } => {
                RealizationData::ChoiMap { choi: channel.choi().to_rows(), trace_preserving: *trace_preserving }
            }
            Realization::Recursive(r) => RealizationData::Recursive { eps: r.eps },
        };
        ProtocolFile {
            schema_version: SCHEMA_VERSION,
            label: self.label.clone(),
            k: self.k,
            copy_dim: self.copy_dim,
            f: self.f,
            t: self.t,
            noise: self.noise,
            realization,
        }
    }

    pub fn from_file(file: &ProtocolFile) -> Result<Self> {
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!("unsupported protocol schema version {}", file.schema_version)));
        }
        if file.k < 2 || file.copy_dim < 2 {
            return Err(Error::Format(format!("invalid shape k={}, copy_dim={}", file.k, file.copy_dim)));
        }
        let dims = vec![file.copy_dim; file.k];
        let n: usize = dims.iter().product();
        let op = |rows: &Rows| -> Result<Op> {
            let o = Op::from_pair_rows(rows)?;
            if o.dim() != n {
                return Err(Error::Format(format!("matrix of dimension {} for protocol dimension {n}", o.dim())));
            }
            o.with_dims(dims.clone())
        };
        let realization = match &file.realization {
            RealizationData::MixedUnitary { probabilities, unitaries } => Realization::MixedUnitary {
                probabilities: probabilities.clone(),
                unitaries: unitaries.iter().map(op).collect::<Result<_>>()?,
            },
            RealizationData::MeasurementBased { basis, states, values } => Realization::MeasurementBased {
                basis: basis.iter().map(|b| DVector::from_iterator(b.len(), b.iter().map(|p| C::new(p[0], p[1])))).collect(),
                states: states.iter().map(op).collect::<Result<_>>()?,
                values: values.clone(),
            },
            RealizationData::ChoiMap { choi, trace_preserving } => {
                let j = Op::from_pair_rows(choi)?;
                if j.dim() != n * n {
                    return Err(Error::Format(format!("Choi matrix of dimension {} for protocol dimension {n}", j.dim())));
                }
                Realization::ChoiMap {
                    channel: Channel::from_choi(file.label.clone(), dims.clone(), dims.clone(), j)?,
                    trace_preserving: *trace_preserving,
                }
            }
            RealizationData::Recursive { eps } => Realization::Recursive(RecursiveRetriever::new(*eps, file.k, file.copy_dim)?),
        };
        let p = Self {
            label: file.label.clone(),
            k: file.k,
            copy_dim: file.copy_dim,
            f: file.f,
            t: file.t,
            noise: file.noise,
            realization,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(s)?)
    }
}
