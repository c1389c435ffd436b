//! Quantum channels in Kraus and Choi form.
//!
//! The Choi matrix is input-factor-first:
//! `J = sum_ij |i><j| (x) N(|i><j|)`, with subsystem dims `in_dims ++ out_dims`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{eigh, Operator};
use crate::scalar::{c, cr, phase, Real, C};

/// Absolute tolerance for CPTP checks.
pub const CPTP_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct Channel<T: Real> {
    label: String,
    in_dims: Vec<usize>,
    out_dims: Vec<usize>,
    kraus: Option<Vec<DMatrix<C<T>>>>,
    choi: OnceLock<Operator<T>>,
}

/// Superoperator acting on vectorized operators: `vec(N(X)) = M vec(X)`.
#[derive(Clone, Debug)]
pub struct ChannelMatrix<T: Real> {
    pub entries: DMatrix<C<T>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChannelJson {
    pub label: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub kraus: Vec<Vec<Vec<[f64; 2]>>>,
}

/// Supported single-copy noise families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    /// Global depolarizing noise on all `n` qubits of a copy.
    Depolarizing,
    /// Independent amplitude damping on each of the `n` qubits of a copy.
    AmplitudeDamping,
}

/// Noise acting on one copy of an `n`-qubit state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub model: NoiseModel,
    pub eps: f64,
    pub n: usize,
}

/// Largest number of qubits per copy accepted by [`NoiseSpec`].
pub const MAX_COPY_QUBITS: usize = 3;

impl NoiseSpec {
    pub fn new(model: NoiseModel, eps: f64, n: usize) -> Result<Self> {
        check_eps(eps)?;
        if n == 0 || n > MAX_COPY_QUBITS {
            return Err(Error::InvalidParameter(format!("copy size n = {n} outside 1..={MAX_COPY_QUBITS}")));
        }
        Ok(Self { model, eps, n })
    }

    pub fn copy_dim(&self) -> usize {
        1 << self.n
    }

    pub fn channel(&self) -> Result<Channel<f64>> {
        Self::new(self.model, self.eps, self.n)?;
        match self.model {
            NoiseModel::Depolarizing => Channel::depolarizing(self.eps, self.copy_dim()),
            NoiseModel::AmplitudeDamping => {
                let single = Channel::amplitude_damping(self.eps)?;
                if self.n == 1 { Ok(single) } else { single.tensor_power(self.n) }
            }
        }
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eps) || eps.is_nan() {
        return Err(Error::InvalidParameter(format!("noise strength {eps} outside [0, 1]")));
    }
    Ok(())
}

impl<T: Real> Channel<T> {
    /// Channel from Kraus operators mapping `prod(in_dims)` to `prod(out_dims)`.
    pub fn from_kraus(label: impl Into<String>, in_dims: Vec<usize>, out_dims: Vec<usize>, kraus: Vec<DMatrix<C<T>>>) -> Result<Self> {
        let din: usize = in_dims.iter().product();
        let dout: usize = out_dims.iter().product();
        if kraus.is_empty() {
            return Err(Error::DimensionMismatch("empty Kraus set".into()));
        }
        for k in &kraus {
            if k.nrows() != dout || k.ncols() != din {
                return Err(Error::DimensionMismatch(format!(
                    "Kraus operator is {}x{}, expected {dout}x{din}",
                    k.nrows(),
                    k.ncols()
                )));
            }
        }
        Ok(Self { label: label.into(), in_dims, out_dims, kraus: Some(kraus), choi: OnceLock::new() })
    }

    /// Channel given only by its Choi matrix.
    pub fn from_choi(label: impl Into<String>, in_dims: Vec<usize>, out_dims: Vec<usize>, choi: Operator<T>) -> Result<Self> {
        let mut dims = in_dims.clone();
        dims.extend_from_slice(&out_dims);
        let choi = choi.with_dims(dims)?;
        let cell = OnceLock::new();
        let _ = cell.set(choi);
        Ok(Self { label: label.into(), in_dims, out_dims, kraus: None, choi: cell })
    }

    pub fn identity(d: usize) -> Self {
        Self::from_kraus("identity", vec![d], vec![d], vec![DMatrix::identity(d, d)]).expect("square")
    }

    pub fn unitary(label: impl Into<String>, u: &Operator<T>) -> Self {
        Self::from_kraus(label, u.dims().to_vec(), u.dims().to_vec(), vec![u.matrix().clone()]).expect("square")
    }

    /// `rho -> (1 - eps) rho + eps tr[rho] I / d`, using the Weyl basis as Kraus set.
    pub fn depolarizing(eps: f64, d: usize) -> Result<Self> {
        check_eps(eps)?;
        if d < 2 {
            return Err(Error::InvalidParameter(format!("dimension {d} < 2")));
        }
        let d2 = (d * d) as f64;
        let mut kraus = Vec::with_capacity(d * d);
        for a in 0..d {
            for b in 0..d {
                let w = if a == 0 && b == 0 { 1.0 - eps + eps / d2 } else { eps / d2 };
                if w == 0.0 && !(a == 0 && b == 0) {
                    continue;
                }
                let s = T::of(w.sqrt());
                // X^a Z^b: |j> -> omega^{bj} |j + a>
                let mut m = DMatrix::zeros(d, d);
                for j in 0..d {
                    let ph: C<T> = phase(2.0 * std::f64::consts::PI * (b * j) as f64 / d as f64);
                    m[((j + a) % d, j)] = ph * s;
                }
                kraus.push(m);
            }
        }
        Self::from_kraus(format!("depolarizing(eps={eps}, d={d})"), vec![d], vec![d], kraus)
    }

    /// Single-qubit amplitude damping with decay probability `eps`.
    pub fn amplitude_damping(eps: f64) -> Result<Self> {
        check_eps(eps)?;
        let a0 = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c((1.0 - eps).sqrt(), 0.0)]);
        let a1 = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(eps.sqrt(), 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        Self::from_kraus(format!("amplitude_damping(eps={eps})"), vec![2], vec![2], vec![a0, a1])
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn in_dim(&self) -> usize {
        self.in_dims.iter().product()
    }

    pub fn out_dim(&self) -> usize {
        self.out_dims.iter().product()
    }

    pub fn in_dims(&self) -> &[usize] {
        &self.in_dims
    }

    pub fn out_dims(&self) -> &[usize] {
        &self.out_dims
    }

    pub fn kraus(&self) -> Option<&[DMatrix<C<T>>]> {
        self.kraus.as_deref()
    }

    /// Choi matrix, computed from the Kraus form on first request.
    pub fn choi(&self) -> &Operator<T> {
        self.choi.get_or_init(|| {
            let kraus = self.kraus.as_ref().expect("channel has neither Kraus nor Choi form");
            choi_from_kraus(kraus, &self.in_dims, &self.out_dims)
        })
    }

    /// Kraus operators, derived from the Choi spectrum when only the Choi form is held.
    pub fn to_kraus(&self) -> Result<Vec<DMatrix<C<T>>>> {
        if let Some(k) = &self.kraus {
            return Ok(k.clone());
        }
        let j = self.choi();
        let e = j.hermitian_eig(1e-8)?;
        let (din, dout) = (self.in_dim(), self.out_dim());
        let lmax = e.values.iter().cloned().fold(T::zero(), |a, b| a.max(b)).as_f64();
        let mut out = Vec::new();
        for (idx, &l) in e.values.iter().enumerate() {
            let lf = l.as_f64();
            if lf < -CPTP_TOL.max(1e-9 * lmax) {
                return Err(Error::InvalidParameter(format!("Choi matrix has negative eigenvalue {lf:e}")));
            }
            if lf <= 1e-13 * lmax.max(1.0) {
                continue;
            }
            let s = T::of(lf.sqrt());
            let v = e.vectors.column(idx);
            out.push(DMatrix::from_fn(dout, din, |a, i| v[i * dout + a] * s));
        }
        Ok(out)
    }

    pub fn apply(&self, rho: &Operator<T>) -> Result<Operator<T>> {
        if rho.dim() != self.in_dim() {
            return Err(Error::DimensionMismatch(format!(
                "channel input dimension {}, operator dimension {}",
                self.in_dim(),
                rho.dim()
            )));
        }
        let m = if let Some(kraus) = &self.kraus {
            let mut acc = DMatrix::zeros(self.out_dim(), self.out_dim());
            for k in kraus {
                acc += k * rho.matrix() * k.adjoint();
            }
            acc
        } else {
            let j = self.choi().matrix();
            let (din, dout) = (self.in_dim(), self.out_dim());
            let x = rho.matrix();
            DMatrix::from_fn(dout, dout, |a, b| {
                let mut acc = cr(T::zero());
                for i in 0..din {
                    for jj in 0..din {
                        acc += x[(i, jj)] * j[(i * dout + a, jj * dout + b)];
                    }
                }
                acc
            })
        };
        Operator::new(m, self.out_dims.clone())
    }

    /// Heisenberg-picture map `N^dagger`.
    pub fn adjoint_apply(&self, obs: &Operator<T>) -> Result<Operator<T>> {
        if obs.dim() != self.out_dim() {
            return Err(Error::DimensionMismatch(format!(
                "channel output dimension {}, observable dimension {}",
                self.out_dim(),
                obs.dim()
            )));
        }
        let m = if let Some(kraus) = &self.kraus {
            let mut acc = DMatrix::zeros(self.in_dim(), self.in_dim());
            for k in kraus {
                acc += k.adjoint() * obs.matrix() * k;
            }
            acc
        } else {
            let j = self.choi().matrix();
            let (din, dout) = (self.in_dim(), self.out_dim());
            let h = obs.matrix();
            // <j|N^dagger(H)|i> = sum_ab H_ba J[(i,a),(j,b)]
            DMatrix::from_fn(din, din, |jj, i| {
                let mut acc = cr(T::zero());
                for a in 0..dout {
                    for b in 0..dout {
                        acc += h[(b, a)] * j[(i * dout + a, jj * dout + b)];
                    }
                }
                acc
            })
        };
        Operator::new(m, self.in_dims.clone())
    }

    /// `outer o self`.
    pub fn then(&self, outer: &Channel<T>) -> Result<Channel<T>> {
        if self.out_dim() != outer.in_dim() {
            return Err(Error::DimensionMismatch(format!(
                "cannot compose: output {} into input {}",
                self.out_dim(),
                outer.in_dim()
            )));
        }
        let label = format!("{} o {}", outer.label, self.label);
        match (&self.kraus, &outer.kraus) {
            (Some(a), Some(b)) => {
                let kraus = b.iter().flat_map(|kb| a.iter().map(move |ka| kb * ka)).collect();
                Channel::from_kraus(label, self.in_dims.clone(), outer.out_dims.clone(), kraus)
            }
            _ => {
                let j = link_product(self.choi(), outer.choi(), self.in_dim(), self.out_dim(), outer.out_dim())?;
                Channel::from_choi(label, self.in_dims.clone(), outer.out_dims.clone(), j)
            }
        }
    }

    /// Parallel composition `self (x) other`.
    pub fn tensor(&self, other: &Channel<T>) -> Result<Channel<T>> {
        let mut in_dims = self.in_dims.clone();
        in_dims.extend_from_slice(&other.in_dims);
        let mut out_dims = self.out_dims.clone();
        out_dims.extend_from_slice(&other.out_dims);
        let label = format!("({}) (x) ({})", self.label, other.label);
        let (ka, kb) = (self.to_kraus()?, other.to_kraus()?);
        let kraus = ka.iter().flat_map(|a| kb.iter().map(move |b| a.kronecker(b))).collect();
        Channel::from_kraus(label, in_dims, out_dims, kraus)
    }

    pub fn tensor_power(&self, k: usize) -> Result<Channel<T>> {
        if k < 1 {
            return Err(Error::InvalidParameter("tensor power requires k >= 1".into()));
        }
        let mut out = self.clone();
        for _ in 1..k {
            out = out.tensor(self)?;
        }
        Ok(out.with_label(format!("({})^(x){k}", self.label)))
    }

    pub fn channel_matrix(&self) -> ChannelMatrix<T> {
        let (din, dout) = (self.in_dim(), self.out_dim());
        let entries = match &self.kraus {
            Some(kraus) => {
                let mut acc = DMatrix::zeros(dout * dout, din * din);
                for k in kraus {
                    acc += k.map(|z| z.conj()).kronecker(k);
                }
                acc
            }
            None => {
                let j = self.choi().matrix();
                DMatrix::from_fn(dout * dout, din * din, |r, col| {
                    let (b, a) = (r / dout, r % dout);
                    let (jj, i) = (col / din, col % din);
                    j[(i * dout + a, jj * dout + b)]
                })
            }
        };
        ChannelMatrix { entries }
    }

    /// Invertible as a linear map on operators: `rank(M_N) = in_dim^2`.
    pub fn is_invertible(&self, tol: f64) -> bool {
        if self.in_dim() != self.out_dim() {
            return false;
        }
        self.channel_matrix().rank(tol) == self.in_dim() * self.in_dim()
    }

    /// Choi PSD and trace preserving, both within `tol`.
    pub fn is_cptp(&self, tol: f64) -> bool {
        let j = self.choi();
        if !j.is_hermitian(tol) || j.min_eigenvalue().as_f64() < -tol {
            return false;
        }
        self.trace_preservation_error() <= tol
    }

    /// `max |tr_out J - I_in|` entrywise.
    pub fn trace_preservation_error(&self) -> f64 {
        let n_in = self.in_dims.len();
        let keep: Vec<usize> = (0..n_in).collect();
        let red = self.choi().partial_trace(&keep).expect("valid subsystems");
        red.max_abs_diff(&Operator::identity_with_dims(self.in_dims.clone())).as_f64()
    }

    pub fn to_json(&self) -> Result<ChannelJson> {
        let kraus = self
            .to_kraus()?
            .iter()
            .map(|k| {
                (0..k.nrows())
                    .map(|i| (0..k.ncols()).map(|j| [k[(i, j)].re.as_f64(), k[(i, j)].im.as_f64()]).collect())
                    .collect()
            })
            .collect();
        Ok(ChannelJson { label: self.label.clone(), in_dim: self.in_dim(), out_dim: self.out_dim(), kraus })
    }

    pub fn from_json(j: &ChannelJson) -> Result<Self> {
        let mut kraus = Vec::with_capacity(j.kraus.len());
        for k in &j.kraus {
            if k.len() != j.out_dim || k.iter().any(|r| r.len() != j.in_dim) {
                return Err(Error::Format(format!("Kraus operator shape does not match {}x{}", j.out_dim, j.in_dim)));
            }
            kraus.push(DMatrix::from_fn(j.out_dim, j.in_dim, |a, b| c(k[a][b][0], k[a][b][1])));
        }
        Self::from_kraus(j.label.clone(), vec![j.in_dim], vec![j.out_dim], kraus)
    }
}

impl<T: Real> ChannelMatrix<T> {
    /// Numerical rank with singular values `<= tol * s_max` treated as zero.
    pub fn rank(&self, tol: f64) -> usize {
        let sv = self.entries.clone().singular_values();
        let smax = sv.iter().fold(0.0f64, |m, s| m.max(s.as_f64()));
        if smax == 0.0 {
            return 0;
        }
        sv.iter().filter(|s| s.as_f64() > tol * smax).count()
    }

    pub fn apply_vec(&self, v: &DVector<C<T>>) -> DVector<C<T>> {
        &self.entries * v
    }
}

fn choi_from_kraus<T: Real>(kraus: &[DMatrix<C<T>>], in_dims: &[usize], out_dims: &[usize]) -> Operator<T> {
    let din: usize = in_dims.iter().product();
    let dout: usize = out_dims.iter().product();
    let n = din * dout;
    let mut j = DMatrix::zeros(n, n);
    for k in kraus {
        // |K>> = sum_i |i> (x) K|i>
        let v = DVector::from_fn(n, |idx, _| k[(idx % dout, idx / dout)]);
        j += &v * v.adjoint();
    }
    let mut dims = in_dims.to_vec();
    dims.extend_from_slice(out_dims);
    Operator::new(j, dims).expect("consistent dims")
}

/// Choi matrix of `C o N` from `J_N` (A -> B) and `J_C` (B -> C):
/// `tr_B[(J_N^{T_B} (x) I_C)(I_A (x) J_C)]`.
pub fn link_product<T: Real>(j_n: &Operator<T>, j_c: &Operator<T>, da: usize, db: usize, dc: usize) -> Result<Operator<T>> {
    if j_n.dim() != da * db || j_c.dim() != db * dc {
        return Err(Error::DimensionMismatch(format!(
            "link product of {}x{} and {}x{} Choi matrices with dims ({da}, {db}, {dc})",
            j_n.dim(),
            j_n.dim(),
            j_c.dim(),
            j_c.dim()
        )));
    }
    let (jn, jc) = (j_n.matrix(), j_c.matrix());
    let mut out = DMatrix::zeros(da * dc, da * dc);
    for a in 0..da {
        for ap in 0..da {
            // block N(|a><a'|)
            let blk = DMatrix::from_fn(db, db, |b, bp| jn[(a * db + b, ap * db + bp)]);
            for cc in 0..dc {
                for cp in 0..dc {
                    let mut acc = cr(T::zero());
                    for b in 0..db {
                        for bp in 0..db {
                            acc += blk[(b, bp)] * jc[(b * dc + cc, bp * dc + cp)];
                        }
                    }
                    out[(a * dc + cc, ap * dc + cp)] = acc;
                }
            }
        }
    }
    Operator::new(out, vec![da, dc])
}

/// Eigenvalues of the Choi matrix, ascending.
pub fn choi_spectrum<T: Real>(ch: &Channel<T>) -> Vec<T> {
    eigh(&ch.choi().hermitian_part().into_matrix()).values
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{basis_ket, pauli};
    use crate::random;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type Ch = Channel<f64>;
    type Op = Operator<f64>;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    /// Literal link product assembled from tensor, partial transpose and partial trace.
    fn literal_link(jn: &Op, jc: &Op, da: usize, db: usize, dc: usize) -> Op {
        let jn = jn.clone().with_dims(vec![da, db]).unwrap();
        let jc = jc.clone().with_dims(vec![db, dc]).unwrap();
        let lhs = jn.partial_transpose(&[1]).unwrap().tensor(&Op::identity(dc));
        let rhs = Op::identity(da).tensor(&jc);
        (&lhs * &rhs).partial_trace(&[0, 2]).unwrap()
    }

    fn random_channel(din: usize, dout: usize, nk: usize, r: &mut ChaCha8Rng) -> Ch {
        // Stinespring: isometry from a random unitary's first columns
        let g = random::random_hermitian::<f64>(dout * nk, r);
        let e = g.hermitian_eig(1e-12).unwrap();
        let v = e.vectors;
        let kraus = (0..nk).map(|k| DMatrix::from_fn(dout, din, |a, i| v[(k * dout + a, i)])).collect();
        Ch::from_kraus("random", vec![din], vec![dout], kraus).unwrap()
    }

    #[test]
    fn depolarizing_zero_is_identity() {
        let mut r = rng();
        let rho = random::random_density::<f64>(3, &mut r);
        let out = Ch::depolarizing(0.0, 3).unwrap().apply(&rho).unwrap();
        assert!(out.max_abs_diff(&rho) < 1e-14);
    }

    #[test]
    fn depolarizing_on_zero_state() {
        let rho = Op::projector(&basis_ket(2, 0));
        let out = Ch::depolarizing(0.1, 2).unwrap().apply(&rho).unwrap();
        assert!(out.max_abs_diff(&Op::diagonal(&[0.95, 0.05])) < 1e-14);
    }

    #[test]
    fn depolarizing_full_and_general_d() {
        let mut r = rng();
        for d in [2, 3, 4] {
            let rho = random::random_density::<f64>(d, &mut r);
            let eps = 0.37;
            let out = Ch::depolarizing(eps, d).unwrap().apply(&rho).unwrap();
            let expect = &rho.scale(1.0 - eps) + &Op::identity(d).scale(eps / d as f64);
            assert!(out.max_abs_diff(&expect) < 1e-13);
            let full = Ch::depolarizing(1.0, d).unwrap().apply(&rho).unwrap();
            assert!(full.max_abs_diff(&Op::identity(d).scale(1.0 / d as f64)) < 1e-13);
        }
    }

    #[test]
    fn noise_strength_is_validated() {
        assert!(matches!(Ch::depolarizing(1.2, 2), Err(Error::InvalidParameter(_))));
        assert!(matches!(Ch::amplitude_damping(-0.1), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn amplitude_damping_excited_state() {
        let rho = Op::projector(&basis_ket(2, 1));
        let out = Ch::amplitude_damping(0.2).unwrap().apply(&rho).unwrap();
        assert!(out.max_abs_diff(&Op::diagonal(&[0.2, 0.8])) < 1e-14);
    }

    #[test]
    fn amplitude_damping_general_state() {
        let mut r = rng();
        let rho = random::random_density::<f64>(2, &mut r);
        let eps = 0.3;
        let out = Ch::amplitude_damping(eps).unwrap().apply(&rho).unwrap();
        let s = (1.0 - eps).sqrt();
        let expect = Op::from_fn(vec![2], |i, j| match (i, j) {
            (0, 0) => rho.get(0, 0) + rho.get(1, 1) * eps,
            (1, 1) => rho.get(1, 1) * (1.0 - eps),
            _ => rho.get(i, j) * s,
        });
        assert!(out.max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn identity_choi_is_unnormalized_bell() {
        let j = Ch::identity(2).choi().clone();
        assert_eq!(j.trace().re, 2.0);
        assert_eq!(j.hermitian_eig(1e-12).unwrap().values.iter().filter(|l| l.abs() > 1e-12).count(), 1);
        for (i, jj) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
            assert_eq!(j.get(i, jj).re, 1.0);
        }
    }

    #[test]
    fn full_depolarizing_choi() {
        let j = Ch::depolarizing(1.0, 2).unwrap().choi().clone();
        assert!(j.max_abs_diff(&Op::identity(4).scale(0.5)) < 1e-15);
    }

    #[test]
    fn choi_definition_matches_action() {
        let mut r = rng();
        let ch = random_channel(2, 3, 3, &mut r);
        let j = ch.choi();
        let mut oracle = Op::zeros_with_dims(vec![2, 3]);
        for i in 0..2 {
            for jj in 0..2 {
                let out = ch.apply(&Op::matrix_unit(2, i, jj)).unwrap();
                oracle += &Op::matrix_unit(2, i, jj).tensor(&out);
            }
        }
        assert!(j.max_abs_diff(&oracle) < 1e-14);
    }

    #[test]
    fn choi_only_channel_matches_kraus_channel() {
        let mut r = rng();
        let ch = random_channel(2, 2, 2, &mut r);
        let choi_only = Ch::from_choi("c", vec![2], vec![2], ch.choi().clone()).unwrap();
        let rho = random::random_density::<f64>(2, &mut r);
        let obs = random::random_hermitian::<f64>(2, &mut r);
        assert!(ch.apply(&rho).unwrap().max_abs_diff(&choi_only.apply(&rho).unwrap()) < 1e-13);
        assert!(ch.adjoint_apply(&obs).unwrap().max_abs_diff(&choi_only.adjoint_apply(&obs).unwrap()) < 1e-13);
        let cm = ch.channel_matrix().entries - choi_only.channel_matrix().entries;
        assert!(cm.iter().all(|z| z.norm() < 1e-13));
        let back = Ch::from_kraus("k", vec![2], vec![2], choi_only.to_kraus().unwrap()).unwrap();
        assert!(back.choi().max_abs_diff(ch.choi()) < 1e-12);
    }

    #[test]
    fn adjoint_of_depolarizing() {
        let de = Ch::depolarizing(0.3, 2).unwrap();
        assert!(de.adjoint_apply(&Op::identity(2)).unwrap().max_abs_diff(&Op::identity(2)) < 1e-14);
        let z = pauli::z::<f64>();
        assert!(de.adjoint_apply(&z).unwrap().max_abs_diff(&z.scale(0.7)) < 1e-14);
    }

    #[test]
    fn duality_on_random_pairs() {
        let mut r = rng();
        let ch = random_channel(3, 2, 4, &mut r);
        for _ in 0..10 {
            let rho = random::random_density::<f64>(3, &mut r);
            let obs = random::random_hermitian::<f64>(2, &mut r);
            let lhs = obs.trace_product(&ch.apply(&rho).unwrap());
            let rhs = ch.adjoint_apply(&obs).unwrap().trace_product(&rho);
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn channel_matrix_acts_on_vectorization() {
        let mut r = rng();
        let ch = random_channel(2, 3, 2, &mut r);
        let x = random::random_hermitian::<f64>(2, &mut r);
        let lhs = ch.channel_matrix().apply_vec(&x.vectorize().entries);
        let rhs = ch.apply(&x).unwrap().vectorize().entries;
        assert!((lhs - rhs).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn invertibility() {
        assert!(Ch::identity(2).is_invertible(1e-9));
        assert_eq!(Ch::depolarizing(1.0, 2).unwrap().channel_matrix().rank(1e-9), 1);
        assert!(!Ch::depolarizing(1.0, 2).unwrap().is_invertible(1e-9));
        let half = Ch::depolarizing(0.5, 2).unwrap();
        assert!(half.is_invertible(1e-9));
        let ev = half.channel_matrix().entries.map(|z| z.re).symmetric_eigenvalues();
        let mut ev: Vec<f64> = ev.iter().cloned().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in ev.iter().zip([0.5, 0.5, 0.5, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(Ch::amplitude_damping(0.4).unwrap().is_invertible(1e-9));
        assert!(!Ch::amplitude_damping(1.0).unwrap().is_invertible(1e-9));
    }

    #[test]
    fn tensor_power_of_depolarizing_expands() {
        let mut r = rng();
        let rho = random::random_density::<f64>(2, &mut r);
        let eps = 0.2;
        let de2 = Ch::depolarizing(eps, 2).unwrap().tensor_power(2).unwrap();
        let out = de2.apply(&rho.tensor(&rho)).unwrap();
        let i2 = Op::identity(2).scale(0.5);
        let expect = &(&(&rho.tensor(&rho).scale((1.0 - eps) * (1.0 - eps))
            + &rho.tensor(&i2).scale(eps * (1.0 - eps)))
            + &i2.tensor(&rho).scale(eps * (1.0 - eps)))
            + &i2.tensor(&i2).scale(eps * eps);
        assert!(out.max_abs_diff(&expect) < 1e-14);
        assert_eq!(de2.choi().dims(), &[2, 2, 2, 2]);
    }

    #[test]
    fn tensor_power_stays_cptp_and_unital_in_heisenberg_picture() {
        let ad3 = Ch::amplitude_damping(0.3).unwrap().tensor_power(3).unwrap();
        assert!(ad3.is_cptp(CPTP_TOL));
        assert!(ad3.adjoint_apply(&Op::identity(8)).unwrap().max_abs_diff(&Op::identity(8)) < 1e-14);
        assert!(matches!(ad3.tensor_power(0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn builtins_are_cptp() {
        for ch in [
            Ch::identity(3),
            Ch::depolarizing(0.0, 2).unwrap(),
            Ch::depolarizing(0.6, 3).unwrap(),
            Ch::depolarizing(1.0, 4).unwrap(),
            Ch::amplitude_damping(0.0).unwrap(),
            Ch::amplitude_damping(0.7).unwrap(),
            Ch::amplitude_damping(1.0).unwrap(),
        ] {
            assert!(ch.is_cptp(CPTP_TOL), "{}", ch.label());
        }
    }

    #[test]
    fn link_product_matches_kraus_composition() {
        let mut r = rng();
        for _ in 0..5 {
            let n = random_channel(2, 3, 2, &mut r);
            let cch = random_channel(3, 2, 3, &mut r);
            let composed = n.then(&cch).unwrap();
            let linked = link_product(n.choi(), cch.choi(), 2, 3, 2).unwrap();
            assert!(linked.max_abs_diff(composed.choi()) < 1e-12);
            let literal = literal_link(n.choi(), cch.choi(), 2, 3, 2);
            assert!(literal.max_abs_diff(composed.choi()) < 1e-12);
        }
    }

    #[test]
    fn json_round_trip() {
        let ad = Ch::amplitude_damping(0.25).unwrap();
        let json = serde_json::to_string(&ad.to_json().unwrap()).unwrap();
        let back = Ch::from_json(&serde_json::from_str(&json).unwrap()).unwrap();
        assert!(back.choi().max_abs_diff(ad.choi()) < 1e-15);
        let bad = ChannelJson { label: "x".into(), in_dim: 2, out_dim: 2, kraus: vec![vec![vec![[1.0, 0.0]]]] };
        assert!(matches!(Ch::from_json(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn lazy_choi_under_concurrent_first_access() {
        let ch = Ch::depolarizing(0.2, 3).unwrap();
        let results: Vec<Op> = std::thread::scope(|s| {
            let hs: Vec<_> = (0..4).map(|_| s.spawn(|| ch.choi().clone())).collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for j in &results {
            assert_eq!(j, &results[0]);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn depolarizing_invertible_below_one(eps in 0.0f64..0.999, d in 2usize..4) {
                prop_assert!(Ch::depolarizing(eps, d).unwrap().is_invertible(1e-9));
            }

            #[test]
            fn random_channels_compose_via_link_product(seed in 0u64..1000) {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                let n = random_channel(2, 2, 2, &mut r);
                let cch = random_channel(2, 2, 2, &mut r);
                let linked = link_product(n.choi(), cch.choi(), 2, 2, 2).unwrap();
                prop_assert!(linked.max_abs_diff(n.then(&cch).unwrap().choi()) < 1e-12);
            }

            #[test]
            fn adjoint_is_unital(eps in 0.0f64..1.0, k in 1usize..4) {
                let de = Ch::amplitude_damping(eps).unwrap().tensor_power(k).unwrap();
                let d = 1 << k;
                prop_assert!(de.adjoint_apply(&Op::identity(d)).unwrap().max_abs_diff(&Op::identity(d)) < 1e-13);
            }
        }
    }
}
