//! Field-generic expression evaluation.

use thiserror::Error;

use super::{BinOp, Expr, Func};
use crate::scalar::{NumError, Scalar};

/// Evaluation failure: a domain error in the active field, or an unbound
/// variable.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("unbound variable `{0}`")]
    Unbound(String),
}

/// An ordered binding of names to field values.
///
/// Names and values are borrowed slices of equal length; lookups scan
/// linearly, which is the right trade-off for the handful of states and
/// parameters a model carries.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a, T> {
    names: &'a [String],
    values: &'a [T],
}

impl<'a, T> EvalContext<'a, T> {
    /// Binds `names[i]` to `values[i]`. Names must be pairwise distinct;
    /// model constructors enforce that before evaluation ever happens.
    pub fn new(names: &'a [String], values: &'a [T]) -> Self {
        assert_eq!(names.len(), values.len(), "binding arity mismatch");
        debug_assert!(
            names
                .iter()
                .enumerate()
                .all(|(i, n)| !names[..i].contains(n)),
            "duplicate binding name"
        );
        EvalContext { names, values }
    }

    fn get(&self, name: &str) -> Option<&T> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.values[i])
    }
}

/// Evaluates `expr` over the field `T` with the given bindings.
pub fn eval<T: Scalar>(expr: &Expr, ctx: &EvalContext<'_, T>) -> Result<T, EvalError> {
    match expr {
        Expr::Const(c) => Ok(T::from_f64(*c)),
        Expr::Var(name) => ctx
            .get(name)
            .cloned()
            .ok_or_else(|| EvalError::Unbound(name.clone())),
        Expr::Neg(inner) => Ok(eval(inner, ctx)?.neg()),
        Expr::Bin(op, lhs, rhs) => {
            let a = eval(lhs, ctx)?;
            let b = eval(rhs, ctx)?;
            Ok(match op {
                BinOp::Add => a.add(&b),
                BinOp::Sub => a.sub(&b),
                BinOp::Mul => a.mul(&b),
                BinOp::Div => a.div(&b)?,
            })
        }
        Expr::Pow(base, exp) => Ok(eval(base, ctx)?.powi(*exp)),
        Expr::Call(func, arg) => {
            let v = eval(arg, ctx)?;
            Ok(match func {
                Func::Sin => v.sin(),
                Func::Cos => v.cos(),
                Func::Exp => v.exp(),
                Func::Log => v.log()?,
                Func::Sqrt => v.sqrt()?,
                Func::Abs => v.abs()?,
            })
        }
    }
}
