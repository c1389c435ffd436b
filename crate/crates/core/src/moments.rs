//! Cyclic permutation operators and moment observables.
//!
//! `S_k |x_1 x_2 ... x_k> = |x_2 ... x_k x_1>` satisfies
//! `tr[S_k rho^{(x)k}] = tr[rho^k]`, and so does its Hermitian part
//! `H = (S_k + S_k^dagger) / 2`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::operator::Operator;
use crate::scalar::{cr, phase, Real, C};

/// Largest dense dimension `d^k` built by this module.
pub const DEFAULT_DIM_CAP: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MomentKind {
    /// `(S_k + S_k^dagger) / 2`
    Symmetrized,
    /// `S_k` itself
    Raw,
}

#[derive(Clone, Debug)]
pub struct MomentObservable<T: Real> {
    pub k: usize,
    pub d: usize,
    pub kind: MomentKind,
    pub matrix: Operator<T>,
}

#[derive(Clone, Debug)]
pub struct Eigenstate<T: Real> {
    /// `S_k psi = omega^{-m} psi`.
    pub m: usize,
    /// Index into `necklaces`.
    pub necklace: usize,
    pub vector: DVector<C<T>>,
}

/// Spectral decomposition `S_k = sum_m omega_k^{-m} P_m`.
#[derive(Clone, Debug)]
pub struct PermutationSpectrum<T: Real> {
    pub k: usize,
    pub d: usize,
    pub necklaces: Vec<Vec<usize>>,
    pub eigenstates: Vec<Eigenstate<T>>,
    /// `projectors[m]` projects onto the eigenvalue `omega^{-m}` subspace.
    pub projectors: Vec<Operator<T>>,
}

fn check_size(k: usize, d: usize, cap: usize) -> Result<usize> {
    if k < 1 {
        return Err(Error::InvalidParameter("moment order must be at least 1".into()));
    }
    if d < 2 {
        return Err(Error::InvalidParameter(format!("local dimension {d} < 2")));
    }
    let dim = (d as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
    if dim > cap as u128 {
        return Err(Error::DimensionCap { dim: dim.min(usize::MAX as u128) as usize, cap });
    }
    Ok(dim as usize)
}

fn digits(mut idx: usize, k: usize, d: usize) -> Vec<usize> {
    let mut x = vec![0; k];
    for j in (0..k).rev() {
        x[j] = idx % d;
        idx /= d;
    }
    x
}

fn index_of(x: &[usize], d: usize) -> usize {
    x.iter().fold(0, |acc, &v| acc * d + v)
}

/// Left rotation by one: `x_1 x_2 ... x_k -> x_2 ... x_k x_1`.
fn rotate(x: &[usize]) -> Vec<usize> {
    let mut y = x[1..].to_vec();
    y.push(x[0]);
    y
}

/// Smallest `p >= 1` with `rotate^p(x) == x`.
fn period(x: &[usize]) -> usize {
    let k = x.len();
    (1..=k).find(|&p| k.is_multiple_of(p) && (0..k).all(|j| x[j] == x[(j + p) % k])).unwrap_or(k)
}

pub fn cyclic_permutation<T: Real>(k: usize, d: usize) -> Result<Operator<T>> {
    cyclic_permutation_with_cap(k, d, DEFAULT_DIM_CAP)
}

pub fn cyclic_permutation_with_cap<T: Real>(k: usize, d: usize, cap: usize) -> Result<Operator<T>> {
    let dim = check_size(k, d, cap)?;
    let mut m = DMatrix::zeros(dim, dim);
    for idx in 0..dim {
        let x = digits(idx, k, d);
        m[(index_of(&rotate(&x), d), idx)] = cr(T::one());
    }
    Operator::new(m, vec![d; k])
}

pub fn moment_observable<T: Real>(k: usize, d: usize) -> Result<MomentObservable<T>> {
    moment_observable_with_cap(k, d, DEFAULT_DIM_CAP)
}

pub fn moment_observable_with_cap<T: Real>(k: usize, d: usize, cap: usize) -> Result<MomentObservable<T>> {
    let s = cyclic_permutation_with_cap::<T>(k, d, cap)?;
    let matrix = s.hermitian_part();
    Ok(MomentObservable { k, d, kind: MomentKind::Symmetrized, matrix })
}

pub fn raw_moment_observable<T: Real>(k: usize, d: usize) -> Result<MomentObservable<T>> {
    let matrix = cyclic_permutation::<T>(k, d)?;
    Ok(MomentObservable { k, d, kind: MomentKind::Raw, matrix })
}

/// `tr[rho^k]` by repeated multiplication.
pub fn moment<T: Real>(rho: &Operator<T>, k: usize) -> T {
    assert!(k >= 1, "moment order must be at least 1");
    let mut p = rho.clone();
    for _ in 1..k {
        p = &p * rho;
    }
    p.trace().re
}

/// Lexicographically smallest rotation of every cyclic class of length-`k`
/// strings over `0..d`, in lexicographic order.
pub fn necklace_set(k: usize, d: usize) -> Result<Vec<Vec<usize>>> {
    let dim = check_size(k, d, DEFAULT_DIM_CAP)?;
    let mut out = Vec::new();
    for idx in 0..dim {
        let x = digits(idx, k, d);
        let mut y = x.clone();
        let mut minimal = true;
        for _ in 1..k {
            y = rotate(&y);
            if y < x {
                minimal = false;
                break;
            }
        }
        if minimal {
            out.push(x);
        }
    }
    Ok(out)
}

/// Eigenbasis of `S_k` built from necklaces.
///
/// A necklace of period `p` spans a `p`-dimensional invariant subspace and
/// contributes the states `(1/sqrt p) sum_{r<p} omega^{m r} S_k^r |x>` for
/// those `m` with `m p = 0 mod k`. Aperiodic necklaces (`p = k`) give one
/// state per `m`; constant strings give only `m = 0`.
pub fn permutation_eigenprojectors<T: Real>(k: usize, d: usize) -> Result<PermutationSpectrum<T>> {
    let dim = check_size(k, d, DEFAULT_DIM_CAP)?;
    let necklaces = necklace_set(k, d)?;
    let mut eigenstates = Vec::new();
    let mut projectors: Vec<DMatrix<C<T>>> = vec![DMatrix::zeros(dim, dim); k];
    for (ni, x) in necklaces.iter().enumerate() {
        let p = period(x);
        let mut orbit = Vec::with_capacity(p);
        let mut y = x.clone();
        for _ in 0..p {
            orbit.push(index_of(&y, d));
            y = rotate(&y);
        }
        let norm = T::of(1.0 / (p as f64).sqrt());
        for m in (0..k).filter(|m| (m * p).is_multiple_of(k)) {
            let mut v = DVector::zeros(dim);
            for (r, &idx) in orbit.iter().enumerate() {
                let w: C<T> = phase(2.0 * std::f64::consts::PI * ((m * r) % k) as f64 / k as f64);
                v[idx] = w * norm;
            }
            projectors[m] += &v * v.adjoint();
            eigenstates.push(Eigenstate { m, necklace: ni, vector: v });
        }
    }
    let projectors = projectors.into_iter().map(|p| Operator::new(p, vec![d; k]).expect("dims")).collect();
    Ok(PermutationSpectrum { k, d, necklaces, eigenstates, projectors })
}

impl<T: Real> PermutationSpectrum<T> {
    /// `sum_m omega^{-m} P_m`.
    pub fn reconstruct(&self) -> Operator<T> {
        let mut acc = Operator::zeros_with_dims(vec![self.d; self.k]);
        for (m, p) in self.projectors.iter().enumerate() {
            let w: C<T> = phase(-2.0 * std::f64::consts::PI * m as f64 / self.k as f64);
            acc += &p.scale_c(w);
        }
        acc
    }

    /// Projector onto the eigenvalue `omega^m` subspace of `S_k`.
    pub fn eigenspace(&self, m: usize) -> &Operator<T> {
        &self.projectors[(self.k - m % self.k) % self.k]
    }

    pub fn ranks(&self) -> Vec<usize> {
        (0..self.k).map(|m| self.eigenstates.iter().filter(|e| e.m == m).count()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{basis_ket, pauli, RANK_TOL};
    use crate::random;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type Op = Operator<f64>;

    /// Number of binary necklaces by Burnside's lemma.
    fn burnside(k: usize, d: usize) -> usize {
        fn gcd(a: usize, b: usize) -> usize {
            if b == 0 { a } else { gcd(b, a % b) }
        }
        (0..k).map(|r| d.pow(gcd(r, k) as u32)).sum::<usize>() / k
    }

    #[test]
    fn two_copy_permutation_is_swap() {
        let s = cyclic_permutation::<f64>(2, 2).unwrap();
        let swap = Op::from_real_rows(&[
            &[1.0, 0.0, 0.0, 0.0],
            &[0.0, 0.0, 1.0, 0.0],
            &[0.0, 1.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0, 1.0],
        ])
        .unwrap();
        assert_eq!(s.max_abs_diff(&swap), 0.0);
    }

    #[test]
    fn three_copy_rotation_on_basis_string() {
        let s = cyclic_permutation::<f64>(3, 2).unwrap();
        let ket = basis_ket::<f64>(8, 0b011);
        let out = s.matrix() * ket;
        assert_eq!(out[0b110].re, 1.0);
        assert_eq!(out.iter().map(|z| z.norm()).sum::<f64>(), 1.0);
    }

    #[test]
    fn adjoint_rotates_the_other_way() {
        let s = cyclic_permutation::<f64>(4, 2).unwrap();
        let ket = basis_ket::<f64>(16, 0b0111);
        let out = s.adjoint().matrix() * ket;
        assert_eq!(out[0b1011].re, 1.0);
        let id = &s * &s.adjoint();
        assert_eq!(id.max_abs_diff(&Op::identity(16)), 0.0);
    }

    #[test]
    fn dimension_cap() {
        assert!(matches!(cyclic_permutation::<f64>(13, 2), Err(Error::DimensionCap { dim: 8192, cap: 4096 })));
        assert!(cyclic_permutation_with_cap::<f64>(3, 2, 4).is_err());
        assert!(matches!(cyclic_permutation::<f64>(2, 1), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn two_copy_observable_in_pauli_form() {
        let h = moment_observable::<f64>(2, 2).unwrap().matrix;
        let mut expect = Op::zeros(4);
        for p in 0..4 {
            expect += &pauli::string::<f64>(&[p, p]);
        }
        assert!(h.max_abs_diff(&expect.scale(0.5)) < 1e-15);
    }

    #[test]
    fn maximally_mixed_purity_and_pure_moments() {
        let h = moment_observable::<f64>(2, 2).unwrap().matrix;
        let mixed = Op::identity(2).scale(0.5);
        assert_relative_eq!(mixed.tensor(&mixed).expectation(&h), 0.5, epsilon = 1e-15);
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let psi = Op::projector(&random::random_pure::<f64>(2, &mut r));
        let h5 = moment_observable::<f64>(5, 2).unwrap().matrix;
        assert_relative_eq!(psi.tensor_power(5).expectation(&h5), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn permutation_moments_on_random_states() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let ops: Vec<(Op, Op)> = (1..=5)
            .map(|k| {
                let s = cyclic_permutation::<f64>(k, 2).unwrap();
                (s.clone(), s.adjoint())
            })
            .collect();
        for _ in 0..100 {
            let rho = random::random_density::<f64>(2, &mut r);
            for (k, (s, sd)) in (1..=5).zip(&ops) {
                let rk = rho.tensor_power(k);
                let target = moment(&rho, k);
                assert!((rk.trace_product(s).re - target).abs() < 1e-10);
                assert!((rk.trace_product(sd).re - target).abs() < 1e-10);
                assert!(rk.trace_product(s).im.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn qutrit_moments() {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let rho = random::random_density::<f64>(3, &mut r);
        let h = moment_observable::<f64>(3, 3).unwrap().matrix;
        assert!((rho.tensor_power(3).expectation(&h) - moment(&rho, 3)).abs() < 1e-12);
    }

    #[test]
    fn observable_spectrum_is_cosines() {
        for k in 2..=6 {
            let h = moment_observable::<f64>(k, 2).unwrap().matrix;
            let allowed: Vec<f64> = (0..k).map(|m| (2.0 * std::f64::consts::PI * m as f64 / k as f64).cos()).collect();
            for l in h.hermitian_eig(1e-12).unwrap().values {
                assert!(allowed.iter().any(|a| (a - l).abs() < 1e-10), "k={k}: {l}");
                assert!(l.abs() <= 1.0 + 1e-12);
            }
        }
        let ev = moment_observable::<f64>(3, 2).unwrap().matrix.hermitian_eig(1e-12).unwrap().values;
        assert_relative_eq!(ev[0], -0.5, epsilon = 1e-12);
        assert_relative_eq!(ev[7], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn observable_has_full_effective_rank() {
        for k in 2..=4 {
            let h = moment_observable::<f64>(k, 2).unwrap().matrix;
            for sys in 0..k {
                assert_eq!(h.effective_rank(&[sys], RANK_TOL).unwrap(), 4, "k={k} sys={sys}");
            }
        }
    }

    #[test]
    fn necklaces_three_bits() {
        let n = necklace_set(3, 2).unwrap();
        assert_eq!(n, vec![vec![0, 0, 0], vec![0, 0, 1], vec![0, 1, 1], vec![1, 1, 1]]);
        // every 3-bit string is a rotation of some necklace
        for idx in 0..8 {
            let x = digits(idx, 3, 2);
            let mut y = x.clone();
            let mut hit = false;
            for _ in 0..3 {
                hit |= n.contains(&y);
                y = rotate(&y);
            }
            assert!(hit, "{x:?}");
        }
    }

    #[test]
    fn necklace_counts() {
        // closed form (d^k - d)/k + d for prime k
        for (k, d) in [(2, 2), (3, 2), (5, 2), (7, 2), (2, 3), (3, 3), (5, 3)] {
            assert_eq!(necklace_set(k, d).unwrap().len(), (d.pow(k as u32) - d) / k + d);
        }
        // general k: Burnside count
        for (k, d) in [(4, 2), (6, 2), (8, 2), (4, 3), (6, 3)] {
            assert_eq!(necklace_set(k, d).unwrap().len(), burnside(k, d));
        }
    }

    #[test]
    fn projector_ranks() {
        assert_eq!(permutation_eigenprojectors::<f64>(2, 2).unwrap().ranks(), vec![3, 1]);
        assert_eq!(permutation_eigenprojectors::<f64>(3, 2).unwrap().ranks(), vec![4, 2, 2]);
        for (k, d) in [(4, 2), (5, 2), (6, 2), (3, 3), (4, 3)] {
            let spec = permutation_eigenprojectors::<f64>(k, d).unwrap();
            assert_eq!(spec.ranks().iter().sum::<usize>(), d.pow(k as u32));
            // rank of eigenvalue omega^{-m}: number of fixed strings averaged over the group
            let s = cyclic_permutation::<f64>(k, d).unwrap();
            for (m, p) in spec.projectors.iter().enumerate() {
                assert_relative_eq!(p.trace().re, spec.ranks()[m] as f64, epsilon = 1e-10);
                let sp = &s * p;
                let w: C<f64> = phase(-2.0 * std::f64::consts::PI * m as f64 / k as f64);
                assert!(sp.max_abs_diff(&p.scale_c(w)) < 1e-12);
            }
        }
    }

    #[test]
    fn spectral_reconstruction() {
        for (k, d) in [(2, 2), (3, 2), (4, 2), (6, 2), (3, 3)] {
            let spec = permutation_eigenprojectors::<f64>(k, d).unwrap();
            let s = cyclic_permutation::<f64>(k, d).unwrap();
            assert!(spec.reconstruct().max_abs_diff(&s) < 1e-12, "k={k} d={d}");
        }
    }

    #[test]
    fn projectors_are_orthogonal_idempotents() {
        let spec = permutation_eigenprojectors::<f64>(4, 2).unwrap();
        for (m, p) in spec.projectors.iter().enumerate() {
            for (mp, q) in spec.projectors.iter().enumerate() {
                let pq = p * q;
                let expect = if m == mp { p.clone() } else { Op::zeros_with_dims(vec![2; 4]) };
                assert!(pq.max_abs_diff(&expect) < 1e-10);
            }
        }
    }

    #[test]
    fn eigenstates_are_orthonormal() {
        let spec = permutation_eigenprojectors::<f64>(4, 2).unwrap();
        let n = spec.eigenstates.len();
        assert_eq!(n, 16);
        for a in 0..n {
            for b in 0..n {
                let ip = spec.eigenstates[a].vector.dotc(&spec.eigenstates[b].vector);
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((ip.re - expect).abs() < 1e-12 && ip.im.abs() < 1e-12);
            }
        }
        // constant strings only give m = 0
        for e in &spec.eigenstates {
            let x = &spec.necklaces[e.necklace];
            if x.iter().all(|&v| v == x[0]) {
                assert_eq!(e.m, 0);
            }
        }
    }

    #[test]
    fn eigenspace_by_phase() {
        let spec = permutation_eigenprojectors::<f64>(3, 2).unwrap();
        let s = cyclic_permutation::<f64>(3, 2).unwrap();
        let p = spec.eigenspace(1);
        let w: C<f64> = phase(2.0 * std::f64::consts::PI / 3.0);
        assert!((&s * p).max_abs_diff(&p.scale_c(w)) < 1e-12);
    }

    #[test]
    fn single_precision_moment() {
        let h = moment_observable::<f32>(2, 2).unwrap().matrix;
        let rho = Operator::<f32>::diagonal(&[0.75, 0.25]);
        assert!((rho.tensor(&rho).expectation(&h) - 0.625).abs() < 1e-6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn observable_expectation_equals_moment(seed in 0u64..10_000, k in 1usize..5) {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                let rho = random::random_density::<f64>(2, &mut r);
                let h = moment_observable::<f64>(k, 2).unwrap().matrix;
                prop_assert!((rho.tensor_power(k).expectation(&h) - moment(&rho, k)).abs() < 1e-10);
                prop_assert!(h.is_hermitian(0.0));
            }
        }
    }
}
