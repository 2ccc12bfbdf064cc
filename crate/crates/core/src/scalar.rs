//! Scalar abstraction shared by every numeric routine.

use nalgebra::{ComplexField, RealField};
use num_complex::Complex;
use num_traits::{FromPrimitive, ToPrimitive};
use serde::{de::DeserializeOwned, Serialize};

/// Real floating-point type the library can run on.
///
/// The bound deliberately avoids `num_traits::Float`: its methods have the
/// same names as the `RealField` ones and every call site would need
/// disambiguation.
pub trait Scalar:
    RealField
    + Copy
    + FromPrimitive
    + ToPrimitive
    + Default
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + std::fmt::Display
    + std::fmt::Debug
    + 'static
{
    /// Converts an `f64` literal; every supported type can represent it.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("scalar conversion from f64")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar conversion to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub fn polar<T: Scalar>(r: T, theta: T) -> Complex<T> {
    Complex::new(r * theta.cos(), r * theta.sin())
}

pub fn modulus<T: Scalar>(z: Complex<T>) -> T {
    ComplexField::modulus(z)
}

pub fn arg<T: Scalar>(z: Complex<T>) -> T {
    ComplexField::argument(z)
}

pub fn deg<T: Scalar>(rad: T) -> T {
    rad * T::lit(180.0) / T::pi()
}

pub fn rad<T: Scalar>(deg: T) -> T {
    deg * T::pi() / T::lit(180.0)
}

/// Wraps an angle in degrees to (-180, 180].
pub fn wrap_deg<T: Scalar>(a: T) -> T {
    let full = T::lit(360.0);
    let half = T::lit(180.0);
    let mut r = a % full;
    if r > half {
        r -= full;
    }
    if r <= -half {
        r += full;
    }
    r
}

/// Wraps an angle in radians to (-pi, pi].
pub fn wrap_rad<T: Scalar>(a: T) -> T {
    rad(wrap_deg(deg(a)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_deg(180.0_f64), 180.0);
        assert_eq!(wrap_deg(-180.0_f64), 180.0);
        assert_eq!(wrap_deg(270.0_f64), -90.0);
        assert_eq!(wrap_deg(-270.0_f64), 90.0);
        assert_eq!(wrap_deg(720.5_f64), 0.5);
    }

    #[test]
    fn polar_round_trip_f32() {
        let z = polar(2.0_f32, 0.3);
        assert!((modulus(z) - 2.0).abs() < 1e-6);
        assert!((arg(z) - 0.3).abs() < 1e-6);
    }
}
