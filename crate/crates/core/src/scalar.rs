//! Scalar abstraction shared by the numerical modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar the solvers are written against (`f32` or `f64`).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Relative slack used for power-budget equality/inequality checks.
    fn feasibility_tol() -> Self;

    /// Converts an `f64` literal. Panics only for values the type cannot hold at all.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal not representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f64 {
    fn feasibility_tol() -> Self {
        1e-9
    }
}

impl Real for f32 {
    fn feasibility_tol() -> Self {
        1e-5
    }
}

/// `10·log10(x)`; zero maps to `-inf`.
#[inline]
pub fn to_db<T: Real>(x: T) -> T {
    T::lit(10.0) * x.log10()
}

/// Inverse of [`to_db`].
#[inline]
pub fn from_db<T: Real>(db: T) -> T {
    T::lit(10.0).powf(db / T::lit(10.0))
}

/// dBm/Hz spectral density to mW in a bin of `bandwidth_hz`.
pub fn dbm_hz_to_mw(dbm_hz: f64, bandwidth_hz: f64) -> f64 {
    10f64.powf(dbm_hz / 10.0) * bandwidth_hz
}

/// mW in a bin of `bandwidth_hz` to dBm/Hz.
pub fn mw_to_dbm_hz(mw: f64, bandwidth_hz: f64) -> f64 {
    10.0 * (mw / bandwidth_hz).log10()
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn db_conversions() {
        assert_eq!(to_db(100.0f64), 20.0);
        assert_eq!(to_db(0.0f64), f64::NEG_INFINITY);
        assert!((from_db(-30.0f64) - 1e-3).abs() < 1e-18);
        assert!((dbm_hz_to_mw(-40.0, 4312.5) - 0.43125).abs() < 1e-12);
        assert!((mw_to_dbm_hz(0.43125, 4312.5) + 40.0).abs() < 1e-12);
        assert!((dbm_to_mw(20.0) - 100.0).abs() < 1e-12);
        assert!((mw_to_dbm(1.0)).abs() < 1e-15);
    }

    #[test]
    fn f32_literals() {
        assert_eq!(f32::lit(0.5), 0.5f32);
        assert!(f32::feasibility_tol() > f64::feasibility_tol() as f32);
    }
}
