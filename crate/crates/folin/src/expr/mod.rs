//! Scalar math expressions: the system-description language.
//!
//! Expressions are parsed once into an immutable [`Expr`] tree and then
//! evaluated over any numeric field (reals or jets). The grammar, in EBNF:
//!
//! ```text
//! expr     = term { ("+" | "-") term } ;
//! term     = factor { ("*" | "/") factor } ;
//! factor   = "-" factor | power ;
//! power    = atom [ "^" exponent ] ;
//! exponent = uint [ "^" exponent ] ;          (right-associative, folded)
//! atom     = number | func "(" expr ")" | ident | "(" expr ")" ;
//! func     = "sin" | "cos" | "exp" | "log" | "sqrt" | "abs" ;
//! ```
//!
//! Power binds tighter than unary minus (`-x^2` is `-(x^2)`) and its
//! exponent must be a non-negative integer literal, evaluated by repeated
//! multiplication. General real powers are written `exp(b*log(a))`.
//! Number literals are binary64 decimals; scientific notation is accepted.

mod eval;
mod parse;

pub use eval::{eval, EvalContext, EvalError};
pub use parse::{parse, ParseError};

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

/// Built-in unary functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }
}

/// Binary arithmetic operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// An immutable expression tree.
///
/// Integer-power exponents are stored exactly as `u32`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
    Call(Func, Box<Expr>),
}

/// Raised by [`Expr::validate`] on the first variable outside the allowed set.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown variable `{name}`")]
pub struct UnknownVariable {
    pub name: String,
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn add(self, rhs: Expr) -> Expr {
        Expr::Bin(BinOp::Add, Box::new(self), Box::new(rhs))
    }

    pub fn sub(self, rhs: Expr) -> Expr {
        Expr::Bin(BinOp::Sub, Box::new(self), Box::new(rhs))
    }

    pub fn mul(self, rhs: Expr) -> Expr {
        Expr::Bin(BinOp::Mul, Box::new(self), Box::new(rhs))
    }

    /// The exact set of variable names appearing in the expression.
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(name) => {
                out.insert(name.clone());
            }
            Expr::Neg(inner) | Expr::Pow(inner, _) | Expr::Call(_, inner) => {
                inner.collect_vars(out)
            }
            Expr::Bin(_, lhs, rhs) => {
                lhs.collect_vars(out);
                rhs.collect_vars(out);
            }
        }
    }

    /// Checks every variable against `allowed`, reporting the first
    /// offender in depth-first, left-to-right order.
    pub fn validate(&self, allowed: &[String]) -> Result<(), UnknownVariable> {
        match self {
            Expr::Const(_) => Ok(()),
            Expr::Var(name) => {
                if allowed.iter().any(|a| a == name) {
                    Ok(())
                } else {
                    Err(UnknownVariable { name: name.clone() })
                }
            }
            Expr::Neg(inner) | Expr::Pow(inner, _) | Expr::Call(_, inner) => {
                inner.validate(allowed)
            }
            Expr::Bin(_, lhs, rhs) => {
                lhs.validate(allowed)?;
                rhs.validate(allowed)
            }
        }
    }

    /// Substitutes `replacement` for every occurrence of variable `name`.
    pub fn substitute(&self, name: &str, replacement: &Expr) -> Expr {
        match self {
            Expr::Const(_) => self.clone(),
            Expr::Var(n) => {
                if n == name {
                    replacement.clone()
                } else {
                    self.clone()
                }
            }
            Expr::Neg(inner) => Expr::Neg(Box::new(inner.substitute(name, replacement))),
            Expr::Pow(inner, k) => Expr::Pow(Box::new(inner.substitute(name, replacement)), *k),
            Expr::Call(f, inner) => Expr::Call(*f, Box::new(inner.substitute(name, replacement))),
            Expr::Bin(op, lhs, rhs) => Expr::Bin(
                *op,
                Box::new(lhs.substitute(name, replacement)),
                Box::new(rhs.substitute(name, replacement)),
            ),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(BinOp::Add | BinOp::Sub, _, _) => 1,
            Expr::Bin(BinOp::Mul | BinOp::Div, _, _) => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(_, _) => 4,
            Expr::Const(_) | Expr::Var(_) | Expr::Call(_, _) => 5,
        }
    }
}

// Precedence-aware printer; `parse(expr.to_string())` reproduces the tree
// for every tree the parser itself can produce.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn paren(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
            if e.precedence() < min {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Const(c) => {
                if c.is_sign_negative() || !c.is_finite() {
                    write!(f, "({c:?})")
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Var(name) => write!(f, "{name}"),
            Expr::Neg(inner) => {
                write!(f, "-")?;
                paren(f, inner, 3)
            }
            Expr::Bin(op, lhs, rhs) => {
                let (sym, level) = match op {
                    BinOp::Add => ("+", 1),
                    BinOp::Sub => ("-", 1),
                    BinOp::Mul => ("*", 2),
                    BinOp::Div => ("/", 2),
                };
                paren(f, lhs, level)?;
                write!(f, " {sym} ")?;
                // Sub and Div are left-associative: the right child needs
                // parens at equal precedence.
                paren(f, rhs, level + 1)
            }
            Expr::Pow(base, exp) => {
                paren(f, base, 5)?;
                write!(f, "^{exp}")
            }
            Expr::Call(func, arg) => write!(f, "{}({arg})", func.name()),
        }
    }
}
