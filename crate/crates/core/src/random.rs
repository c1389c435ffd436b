//! Random test states and observables.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::operator::Operator;
use crate::scalar::{Real, C};

/// Complex Gaussian entry with unit variance per component.
fn gaussian_c<T: Real>(rng: &mut (impl Rng + ?Sized)) -> C<T> {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C::new(T::of(re), T::of(im))
}

/// Haar-random pure state vector.
pub fn random_pure<T: Real>(dim: usize, rng: &mut (impl Rng + ?Sized)) -> DVector<C<T>> {
    let v = DVector::from_fn(dim, |_, _| gaussian_c::<T>(rng));
    let n = v.norm();
    v.map(|z| z / n)
}

/// Full-rank density matrix from the Ginibre ensemble.
pub fn random_density<T: Real>(dim: usize, rng: &mut (impl Rng + ?Sized)) -> Operator<T> {
    let g = DMatrix::from_fn(dim, dim, |_, _| gaussian_c::<T>(rng));
    let rho = &g * g.adjoint();
    let tr = rho.trace().re;
    Operator::from_matrix(rho.map(|z| z / tr)).expect("square")
}

/// [`random_density`] drawn from a ChaCha8 generator seeded with `seed`.
pub fn seeded_density(dim: usize, seed: u64) -> Operator<f64> {
    random_density(dim, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Hermitian matrix with independent entries of order one.
pub fn random_hermitian<T: Real>(dim: usize, rng: &mut (impl Rng + ?Sized)) -> Operator<T> {
    let g = DMatrix::from_fn(dim, dim, |_, _| gaussian_c::<T>(rng));
    Operator::from_matrix(&g + g.adjoint()).expect("square").scale(T::of(0.5))
}
