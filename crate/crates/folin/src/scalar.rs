//! The numeric field abstraction shared by the expression evaluator.
//!
//! Expressions evaluate over any [`Scalar`]: plain `f64` for point values,
//! or truncated Taylor jets for Lie-derivative computations. Both fields
//! compute the order-0 component with the exact same floating-point
//! operations, so a real evaluation always equals the constant coefficient
//! of a jet evaluation, bitwise.

use thiserror::Error;

/// Domain failures raised by field operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum NumError {
    #[error("division by zero")]
    DivByZero,
    #[error("log of a non-positive value")]
    LogDomain,
    #[error("sqrt of a negative value")]
    SqrtDomain,
    #[error("sqrt at zero has a singular derivative")]
    SqrtDerivative,
    #[error("abs at zero is not differentiable")]
    AbsDomain,
}

/// A numeric field supporting the operations of the expression language.
///
/// Integer powers are taken by repeated multiplication so that they stay
/// valid for jets and for negative bases; `powi(0)` is the field's one.
pub trait Scalar: Clone {
    fn from_f64(v: f64) -> Self;
    fn add(&self, other: &Self) -> Self;
    fn sub(&self, other: &Self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    fn div(&self, other: &Self) -> Result<Self, NumError>;
    fn neg(&self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn exp(&self) -> Self;
    fn log(&self) -> Result<Self, NumError>;
    fn sqrt(&self) -> Result<Self, NumError>;
    fn abs(&self) -> Result<Self, NumError>;

    fn powi(&self, exp: u32) -> Self {
        let mut acc = Self::from_f64(1.0);
        for _ in 0..exp {
            acc = acc.mul(self);
        }
        acc
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }

    fn add(&self, other: &Self) -> Self {
        self + other
    }

    fn sub(&self, other: &Self) -> Self {
        self - other
    }

    fn mul(&self, other: &Self) -> Self {
        self * other
    }

    fn div(&self, other: &Self) -> Result<Self, NumError> {
        if *other == 0.0 {
            return Err(NumError::DivByZero);
        }
        Ok(self / other)
    }

    fn neg(&self) -> Self {
        -self
    }

    fn sin(&self) -> Self {
        f64::sin(*self)
    }

    fn cos(&self) -> Self {
        f64::cos(*self)
    }

    fn exp(&self) -> Self {
        f64::exp(*self)
    }

    fn log(&self) -> Result<Self, NumError> {
        if *self <= 0.0 {
            return Err(NumError::LogDomain);
        }
        Ok(f64::ln(*self))
    }

    fn sqrt(&self) -> Result<Self, NumError> {
        if *self < 0.0 {
            return Err(NumError::SqrtDomain);
        }
        Ok(f64::sqrt(*self))
    }

    fn abs(&self) -> Result<Self, NumError> {
        Ok(f64::abs(*self))
    }
}
