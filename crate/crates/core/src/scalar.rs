//! Scalar abstraction shared by the linear-algebra layer.
//!
//! Operators, channels and permutation machinery are written against [`Real`]
//! so they can be instantiated in single or double precision. The optimisation
//! and sampling layers are double precision only.

use nalgebra::{Complex, RealField};

/// Real floating-point scalar: `f32` or `f64`.
pub trait Real: RealField + Copy + Default {
    /// Machine epsilon of the type, as `f64`.
    const EPSILON_F64: f64;

    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f64 {
    const EPSILON_F64: f64 = f64::EPSILON;

    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    const EPSILON_F64: f64 = f32::EPSILON as f64;

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

/// Complex number over a [`Real`] scalar.
pub type C<T> = Complex<T>;

#[inline]
pub fn c<T: Real>(re: f64, im: f64) -> C<T> {
    Complex::new(T::of(re), T::of(im))
}

#[inline]
pub fn cr<T: Real>(re: T) -> C<T> {
    Complex::new(re, T::zero())
}

/// `exp(i theta)`.
#[inline]
pub fn phase<T: Real>(theta: f64) -> C<T> {
    c(theta.cos(), theta.sin())
}
