//! Dense complex operators on tensor-product Hilbert spaces.
//!
//! An [`Operator`] is a square complex matrix together with the dimensions of
//! the subsystems it acts on. Subsystem 0 is the most significant factor of the
//! computational-basis index, so `|x_0 x_1 ... x_{n-1}>` has index
//! `x_0 * (d_1 ... d_{n-1}) + ... + x_{n-1}`.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{ComplexField, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::{c, cr, Real, C};

/// Default relative tolerance for numerical rank decisions.
pub const RANK_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Operator<T: Real> {
    mat: DMatrix<C<T>>,
    dims: Vec<usize>,
}

/// Eigen-decomposition of a Hermitian operator, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct HermitianEig<T: Real> {
    pub values: Vec<T>,
    /// Orthonormal eigenvectors stored as columns, in the order of `values`.
    pub vectors: DMatrix<C<T>>,
}

/// `|M> = sum_ij M_ij |j> (x) |i>`: component `j * dim + i` holds `M_ij`.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorizedOperator<T: Real> {
    pub entries: DVector<C<T>>,
}

pub(crate) fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

/// Offsets of every basis index of the sub-register `systems` inside the full
/// register, enumerated in the sub-register's own index order.
pub(crate) fn register_offsets(dims: &[usize], systems: &[usize]) -> Vec<usize> {
    let st = strides(dims);
    let mut offsets = vec![0usize];
    for &s in systems {
        let mut next = Vec::with_capacity(offsets.len() * dims[s]);
        for &o in &offsets {
            for x in 0..dims[s] {
                next.push(o + x * st[s]);
            }
        }
        offsets = next;
    }
    offsets
}

impl<T: Real> Operator<T> {
    pub fn new(mat: DMatrix<C<T>>, dims: Vec<usize>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "operator must be square, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::DimensionMismatch(format!("invalid subsystem dims {dims:?}")));
        }
        let prod: usize = dims.iter().product();
        if prod != mat.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "subsystem dims {dims:?} multiply to {prod}, matrix has dimension {}",
                mat.nrows()
            )));
        }
        Ok(Self { mat, dims })
    }

    /// Wraps a square matrix as a single-subsystem operator.
    pub fn from_matrix(mat: DMatrix<C<T>>) -> Result<Self> {
        let d = mat.nrows();
        Self::new(mat, vec![d])
    }

    pub fn from_fn(dims: Vec<usize>, f: impl FnMut(usize, usize) -> C<T>) -> Self {
        let d: usize = dims.iter().product();
        Self { mat: DMatrix::from_fn(d, d, f), dims }
    }

    pub fn identity(dim: usize) -> Self {
        Self::identity_with_dims(vec![dim])
    }

    pub fn identity_with_dims(dims: Vec<usize>) -> Self {
        let d: usize = dims.iter().product();
        Self { mat: DMatrix::identity(d, d), dims }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::zeros_with_dims(vec![dim])
    }

    pub fn zeros_with_dims(dims: Vec<usize>) -> Self {
        let d: usize = dims.iter().product();
        Self { mat: DMatrix::zeros(d, d), dims }
    }

    /// Builds an operator from row-major `(re, im)` pairs.
    pub fn from_rows(rows: &[Vec<(f64, f64)>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("rows must form a square matrix".into()));
        }
        Self::from_matrix(DMatrix::from_fn(n, n, |i, j| c(rows[i][j].0, rows[i][j].1)))
    }

    /// Builds a real operator from row-major entries.
    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("rows must form a square matrix".into()));
        }
        Self::from_matrix(DMatrix::from_fn(n, n, |i, j| c(rows[i][j], 0.0)))
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            mat: DMatrix::from_fn(n, n, |i, j| if i == j { c(diag[i], 0.0) } else { c(0.0, 0.0) }),
            dims: vec![n],
        }
    }

    /// `|ket><bra|`.
    pub fn ket_bra(ket: &DVector<C<T>>, bra: &DVector<C<T>>) -> Self {
        let n = ket.len();
        Self { mat: ket * bra.adjoint(), dims: vec![n] }
    }

    /// `|psi><psi|`.
    pub fn projector(psi: &DVector<C<T>>) -> Self {
        Self::ket_bra(psi, psi)
    }

    /// `|i><j|` on a `dim`-dimensional space.
    pub fn matrix_unit(dim: usize, i: usize, j: usize) -> Self {
        let mut m = Self::zeros(dim);
        m.mat[(i, j)] = c(1.0, 0.0);
        m
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_subsystems(&self) -> usize {
        self.dims.len()
    }

    pub fn matrix(&self) -> &DMatrix<C<T>> {
        &self.mat
    }

    pub fn matrix_mut(&mut self) -> &mut DMatrix<C<T>> {
        &mut self.mat
    }

    pub fn into_matrix(self) -> DMatrix<C<T>> {
        self.mat
    }

    /// Same matrix, relabelled subsystem structure.
    pub fn with_dims(self, dims: Vec<usize>) -> Result<Self> {
        Self::new(self.mat, dims)
    }

    pub fn get(&self, i: usize, j: usize) -> C<T> {
        self.mat[(i, j)]
    }

    pub fn adjoint(&self) -> Self {
        Self { mat: self.mat.adjoint(), dims: self.dims.clone() }
    }

    pub fn transpose(&self) -> Self {
        Self { mat: self.mat.transpose(), dims: self.dims.clone() }
    }

    pub fn conj(&self) -> Self {
        Self { mat: self.mat.map(|z| z.conj()), dims: self.dims.clone() }
    }

    pub fn trace(&self) -> C<T> {
        self.mat.trace()
    }

    pub fn scale(&self, s: T) -> Self {
        Self { mat: self.mat.map(|z| z * s), dims: self.dims.clone() }
    }

    pub fn scale_c(&self, s: C<T>) -> Self {
        Self { mat: &self.mat * s, dims: self.dims.clone() }
    }

    /// Matrix product with dimension checking.
    pub fn compose(&self, rhs: &Self) -> Result<Self> {
        if self.dim() != rhs.dim() {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.dim(),
                self.dim(),
                rhs.dim(),
                rhs.dim()
            )));
        }
        Ok(Self { mat: &self.mat * &rhs.mat, dims: self.dims.clone() })
    }

    /// `tr[self * rhs]`.
    pub fn trace_product(&self, rhs: &Self) -> C<T> {
        let n = self.dim();
        let mut acc = C::new(T::zero(), T::zero());
        for i in 0..n {
            for k in 0..n {
                acc += self.mat[(i, k)] * rhs.mat[(k, i)];
            }
        }
        acc
    }

    /// `Re tr[obs * self]`.
    pub fn expectation(&self, obs: &Self) -> T {
        obs.trace_product(self).re
    }

    /// Hilbert-Schmidt inner product `tr[self^dagger rhs]`.
    pub fn hs_inner(&self, rhs: &Self) -> C<T> {
        self.mat.iter().zip(rhs.mat.iter()).fold(C::new(T::zero(), T::zero()), |acc, (a, b)| acc + a.conj() * b)
    }

    /// Kronecker product; subsystem lists are concatenated.
    pub fn tensor(&self, rhs: &Self) -> Self {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&rhs.dims);
        Self { mat: self.mat.kronecker(&rhs.mat), dims }
    }

    pub fn tensor_power(&self, k: usize) -> Self {
        assert!(k >= 1, "tensor power requires k >= 1");
        let mut out = self.clone();
        for _ in 1..k {
            out = out.tensor(self);
        }
        out
    }

    pub fn tensor_all<'a>(ops: impl IntoIterator<Item = &'a Self>) -> Option<Self>
    where
        T: 'a,
    {
        ops.into_iter().fold(None, |acc: Option<Self>, op| Some(match acc {
            None => op.clone(),
            Some(a) => a.tensor(op),
        }))
    }

    fn check_systems(&self, systems: &[usize]) -> Result<()> {
        for &s in systems {
            if s >= self.dims.len() {
                return Err(Error::InvalidSubsystem { index: s, count: self.dims.len() });
            }
        }
        let mut sorted = systems.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != systems.len() {
            return Err(Error::InvalidParameter(format!("repeated subsystem in {systems:?}")));
        }
        Ok(())
    }

    /// Traces out every subsystem not listed in `keep`. The kept subsystems
    /// retain their original relative order. An empty `keep` returns the 1x1
    /// operator holding the trace.
    pub fn partial_trace(&self, keep: &[usize]) -> Result<Self> {
        self.check_systems(keep)?;
        let mut keep: Vec<usize> = keep.to_vec();
        keep.sort_unstable();
        let traced: Vec<usize> = (0..self.dims.len()).filter(|s| !keep.contains(s)).collect();
        let ko = register_offsets(&self.dims, &keep);
        let to = register_offsets(&self.dims, &traced);
        let dk = ko.len();
        let mut out = DMatrix::zeros(dk, dk);
        for a in 0..dk {
            for b in 0..dk {
                let mut acc = C::new(T::zero(), T::zero());
                for &t in &to {
                    acc += self.mat[(ko[a] + t, ko[b] + t)];
                }
                out[(a, b)] = acc;
            }
        }
        let dims = if keep.is_empty() { vec![1] } else { keep.iter().map(|&s| self.dims[s]).collect() };
        Ok(Self { mat: out, dims })
    }

    /// Traces out the listed subsystems.
    pub fn trace_out(&self, systems: &[usize]) -> Result<Self> {
        self.check_systems(systems)?;
        let keep: Vec<usize> = (0..self.dims.len()).filter(|s| !systems.contains(s)).collect();
        self.partial_trace(&keep)
    }

    /// Reorders subsystems: new subsystem `p` is old subsystem `perm[p]`.
    pub fn permute_subsystems(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "permutation of length {} for {} subsystems",
                perm.len(),
                self.dims.len()
            )));
        }
        self.check_systems(perm)?;
        let new_dims: Vec<usize> = perm.iter().map(|&p| self.dims[p]).collect();
        // old index of each new basis index
        let map = register_offsets(&self.dims, perm);
        let n = self.dim();
        let mat = DMatrix::from_fn(n, n, |i, j| self.mat[(map[i], map[j])]);
        Ok(Self { mat, dims: new_dims })
    }

    /// Transposes the listed subsystems.
    pub fn partial_transpose(&self, systems: &[usize]) -> Result<Self> {
        self.check_systems(systems)?;
        let rest: Vec<usize> = (0..self.dims.len()).filter(|s| !systems.contains(s)).collect();
        let so = register_offsets(&self.dims, systems);
        let ro = register_offsets(&self.dims, &rest);
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for &ai in &so {
            for &bi in &ro {
                for &aj in &so {
                    for &bj in &ro {
                        out[(aj + bi, ai + bj)] = self.mat[(ai + bi, aj + bj)];
                    }
                }
            }
        }
        Ok(Self { mat: out, dims: self.dims.clone() })
    }

    pub fn max_abs(&self) -> T {
        self.mat.iter().fold(T::zero(), |m, z| m.max(z.modulus()))
    }

    /// Entrywise max |self - rhs|.
    pub fn max_abs_diff(&self, rhs: &Self) -> T {
        assert_eq!(self.dim(), rhs.dim(), "dimension mismatch in max_abs_diff");
        self.mat.iter().zip(rhs.mat.iter()).fold(T::zero(), |m, (a, b)| m.max((*a - *b).modulus()))
    }

    /// max |A - A^dagger| entrywise.
    pub fn hermitian_deviation(&self) -> T {
        let n = self.dim();
        let mut dev = T::zero();
        for i in 0..n {
            for j in i..n {
                dev = dev.max((self.mat[(i, j)] - self.mat[(j, i)].conj()).modulus());
            }
        }
        dev
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_deviation().as_f64() <= tol
    }

    /// `(A + A^dagger) / 2`.
    pub fn hermitian_part(&self) -> Self {
        let half = T::of(0.5);
        Self { mat: (&self.mat + self.mat.adjoint()).map(|z| z * half), dims: self.dims.clone() }
    }

    pub fn hermitian_eig(&self, tol: f64) -> Result<HermitianEig<T>> {
        let dev = self.hermitian_deviation().as_f64();
        if dev > tol {
            return Err(Error::NotHermitian { deviation: dev });
        }
        Ok(eigh(&self.hermitian_part().mat))
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> T {
        let e = eigh(&self.hermitian_part().mat);
        e.values.first().copied().unwrap_or_else(T::zero)
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.is_hermitian(tol.max(1e3 * T::EPSILON_F64)) && self.min_eigenvalue().as_f64() >= -tol
    }

    /// Projection of the Hermitian part onto the PSD cone.
    pub fn project_psd(&self) -> Self {
        let e = eigh(&self.hermitian_part().mat);
        let mut scaled = e.vectors.clone();
        for (j, &l) in e.values.iter().enumerate() {
            let w = if l > T::zero() { l } else { T::zero() };
            scaled.column_mut(j).iter_mut().for_each(|z| *z *= w);
        }
        Self { mat: &scaled * e.vectors.adjoint(), dims: self.dims.clone() }
    }

    /// `f(A)` for Hermitian `A` through its spectral decomposition.
    pub fn spectral_map(&self, f: impl Fn(T) -> T) -> Self {
        let e = eigh(&self.hermitian_part().mat);
        let mut scaled = e.vectors.clone();
        for (j, &l) in e.values.iter().enumerate() {
            let w = f(l);
            scaled.column_mut(j).iter_mut().for_each(|z| *z *= w);
        }
        Self { mat: &scaled * e.vectors.adjoint(), dims: self.dims.clone() }
    }

    pub fn vectorize(&self) -> VectorizedOperator<T> {
        // column-index-major: entry j*dim + i is M_ij
        let n = self.dim();
        VectorizedOperator { entries: DVector::from_fn(n * n, |idx, _| self.mat[(idx % n, idx / n)]) }
    }

    /// Effective rank `rank(tr_B |O><O|)` where `A` is the given set of
    /// subsystems (both the row and column factor of each) and `B` the rest.
    pub fn effective_rank(&self, bipartition: &[usize], tol: f64) -> Result<usize> {
        self.check_systems(bipartition)?;
        let rest: Vec<usize> = (0..self.dims.len()).filter(|s| !bipartition.contains(s)).collect();
        // Schmidt coefficients of |O> across the cut are the singular values of
        // the realigned matrix R[(a, a'), (b, b')] = O[(a, b), (a', b')]; the
        // eigenvalues of tr_B |O><O| are their squares.
        let ao = register_offsets(&self.dims, bipartition);
        let bo = register_offsets(&self.dims, &rest);
        let (da, db) = (ao.len(), bo.len());
        let realigned = DMatrix::from_fn(da * da, db * db, |p, q| {
            let (a, ap) = (ao[p / da], ao[p % da]);
            let (b, bp) = (bo[q / db], bo[q % db]);
            self.mat[(a + b, ap + bp)]
        });
        let sv: Vec<f64> = realigned.singular_values().iter().map(|s| s.as_f64()).collect();
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        if smax == 0.0 {
            return Ok(0);
        }
        Ok(sv.iter().filter(|&&s| s > tol * smax).count())
    }

    pub fn cast<U: Real>(&self) -> Operator<U> {
        Operator {
            mat: self.mat.map(|z| C::new(U::of(z.re.as_f64()), U::of(z.im.as_f64()))),
            dims: self.dims.clone(),
        }
    }

    /// Row-major `[re, im]` pairs.
    pub fn to_rows(&self) -> Vec<Vec<[f64; 2]>> {
        let n = self.dim();
        (0..n)
            .map(|i| (0..n).map(|j| [self.mat[(i, j)].re.as_f64(), self.mat[(i, j)].im.as_f64()]).collect())
            .collect()
    }

    pub fn from_pair_rows(rows: &[Vec<[f64; 2]>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("rows must form a non-empty square matrix".into()));
        }
        Self::from_matrix(DMatrix::from_fn(n, n, |i, j| c(rows[i][j][0], rows[i][j][1])))
    }
}

impl<T: Real> VectorizedOperator<T> {
    pub fn dim2(&self) -> usize {
        self.entries.len()
    }

    pub fn devectorize(&self) -> Result<Operator<T>> {
        let len = self.entries.len();
        let n = (len as f64).sqrt().round() as usize;
        if n * n != len || n == 0 {
            return Err(Error::NotSquareLength(len));
        }
        Operator::from_matrix(DMatrix::from_fn(n, n, |i, j| self.entries[j * n + i]))
    }
}

/// Symmetric/Hermitian eigendecomposition with a tight deflation threshold.
///
/// nalgebra's default threshold can accept a sub-diagonal entry that is still
/// around 1e-6 on matrices with large null spaces, which leaves the
/// reconstruction visibly wrong. A much smaller threshold fixes that; the
/// default is kept as a fallback in case the tight run hits the iteration cap.
pub(crate) fn symmetric_eigen<F: ComplexField>(m: DMatrix<F>) -> SymmetricEigen<F, Dyn> {
    let n = m.nrows();
    let tight: F::RealField = nalgebra::convert(1e-30);
    match SymmetricEigen::try_new(m.clone(), tight, 200 * n + 1000) {
        Some(se) => se,
        None => SymmetricEigen::new(m),
    }
}

/// Hermitian eigensolver on an already-Hermitian matrix; ascending order.
pub(crate) fn eigh<T: Real>(m: &DMatrix<C<T>>) -> HermitianEig<T> {
    let n = m.nrows();
    if n == 0 {
        return HermitianEig { values: vec![], vectors: DMatrix::zeros(0, 0) };
    }
    let mut se = symmetric_eigen(m.clone());
    if se.eigenvalues.iter().any(|x| is_nan(*x)) {
        // The complex QR sweep can hit 0/0 rotations on very sparse inputs
        // (e.g. the Choi matrix of an identity channel). Conjugating by a dense
        // reflection H = H^dagger = H^-1 removes the exact zeros.
        let v = DVector::from_fn(n, |i, _| c::<T>(1.0, (i + 1) as f64 / n as f64));
        let norm2 = v.dotc(&v);
        let h = DMatrix::<C<T>>::identity(n, n) - (&v * v.adjoint()) * (cr(T::of(2.0)) / norm2);
        let inner = symmetric_eigen(&h * m * &h);
        se = SymmetricEigen { eigenvectors: &h * &inner.eigenvectors, eigenvalues: inner.eigenvalues };
    }
    let mut order: Vec<usize> = (0..n).collect();
    let ev = &se.eigenvalues;
    order.sort_by(|&a, &b| ev[a].partial_cmp(&ev[b]).unwrap_or_else(|| is_nan(ev[a]).cmp(&is_nan(ev[b]))));
    let values = order.iter().map(|&i| ev[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, k| se.eigenvectors[(r, order[k])]);
    HermitianEig { values, vectors }
}

#[allow(clippy::eq_op)]
fn is_nan<T: Real>(x: T) -> bool {
    x != x
}

impl<T: Real> HermitianEig<T> {
    /// `V diag(values) V^dagger`.
    pub fn reconstruct(&self) -> DMatrix<C<T>> {
        let mut scaled = self.vectors.clone();
        for (j, &l) in self.values.iter().enumerate() {
            scaled.column_mut(j).iter_mut().for_each(|z| *z *= l);
        }
        &scaled * self.vectors.adjoint()
    }
}

impl<'a, T: Real> Add<&'a Operator<T>> for &'a Operator<T> {
    type Output = Operator<T>;
    fn add(self, rhs: &'a Operator<T>) -> Operator<T> {
        Operator { mat: &self.mat + &rhs.mat, dims: self.dims.clone() }
    }
}

impl<T: Real> Add for Operator<T> {
    type Output = Operator<T>;
    fn add(self, rhs: Operator<T>) -> Operator<T> {
        Operator { mat: self.mat + rhs.mat, dims: self.dims }
    }
}

impl<'a, T: Real> AddAssign<&'a Operator<T>> for Operator<T> {
    fn add_assign(&mut self, rhs: &'a Operator<T>) {
        self.mat += &rhs.mat;
    }
}

impl<'a, T: Real> Sub<&'a Operator<T>> for &'a Operator<T> {
    type Output = Operator<T>;
    fn sub(self, rhs: &'a Operator<T>) -> Operator<T> {
        Operator { mat: &self.mat - &rhs.mat, dims: self.dims.clone() }
    }
}

impl<T: Real> Sub for Operator<T> {
    type Output = Operator<T>;
    fn sub(self, rhs: Operator<T>) -> Operator<T> {
        Operator { mat: self.mat - rhs.mat, dims: self.dims }
    }
}

impl<'a, T: Real> Mul<&'a Operator<T>> for &'a Operator<T> {
    type Output = Operator<T>;
    fn mul(self, rhs: &'a Operator<T>) -> Operator<T> {
        Operator { mat: &self.mat * &rhs.mat, dims: self.dims.clone() }
    }
}

impl<T: Real> Mul for Operator<T> {
    type Output = Operator<T>;
    fn mul(self, rhs: Operator<T>) -> Operator<T> {
        Operator { mat: self.mat * rhs.mat, dims: self.dims }
    }
}

impl<T: Real> Neg for &Operator<T> {
    type Output = Operator<T>;
    fn neg(self) -> Operator<T> {
        Operator { mat: -&self.mat, dims: self.dims.clone() }
    }
}

/// Single-qubit Pauli matrices and n-qubit Pauli strings.
pub mod pauli {
    use super::*;

    pub fn i2<T: Real>() -> Operator<T> {
        Operator::identity(2)
    }

    pub fn x<T: Real>() -> Operator<T> {
        Operator::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).expect("2x2")
    }

    pub fn y<T: Real>() -> Operator<T> {
        Operator::from_rows(&[vec![(0.0, 0.0), (0.0, -1.0)], vec![(0.0, 1.0), (0.0, 0.0)]]).expect("2x2")
    }

    pub fn z<T: Real>() -> Operator<T> {
        Operator::diagonal(&[1.0, -1.0])
    }

    /// Pauli by index: 0 = I, 1 = X, 2 = Y, 3 = Z.
    pub fn single<T: Real>(idx: usize) -> Operator<T> {
        match idx {
            0 => i2(),
            1 => x(),
            2 => y(),
            3 => z(),
            _ => panic!("Pauli index {idx} out of range"),
        }
    }

    /// Tensor product of single-qubit Paulis, one index per qubit.
    pub fn string<T: Real>(indices: &[usize]) -> Operator<T> {
        let ops: Vec<Operator<T>> = indices.iter().map(|&i| single(i)).collect();
        Operator::tensor_all(&ops).expect("non-empty Pauli string")
    }

    /// All `4^n` Pauli strings on `n` qubits, identity first.
    pub fn all_strings<T: Real>(n: usize) -> Vec<Operator<T>> {
        (0..4usize.pow(n as u32))
            .map(|mut code| {
                let mut idx = vec![0; n];
                for q in (0..n).rev() {
                    idx[q] = code % 4;
                    code /= 4;
                }
                string(&idx)
            })
            .collect()
    }
}

/// Computational-basis ket `|index>` of dimension `dim`.
pub fn basis_ket<T: Real>(dim: usize, index: usize) -> DVector<C<T>> {
    let mut v = DVector::from_element(dim, cr(T::zero()));
    v[index] = cr(T::one());
    v
}
