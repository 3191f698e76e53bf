//! Truncated Taylor (jet) arithmetic and the Lie-derivative engine.
//!
//! A [`Jet`] carries the coefficients `c_0..c_K` of a truncated Taylor
//! series in a single time-like variable. Expanding the flow of
//! `dx/dt = F(x)` through a point and evaluating a function `f` over the
//! resulting jets yields the Taylor coefficients of `f(x(t))`; scaling by
//! `k!` turns coefficient `k` into the k-th Lie derivative of `f` along
//! `F` at that point.
//!
//! Every elementary operation computes coefficient `k` from coefficients
//! `0..=k` of its operands with a fixed summation order, so truncating at
//! a higher order never changes the lower coefficients — not even in the
//! last bit. The engine relies on that to share one flow expansion across
//! all functions evaluated at a point.

use thiserror::Error;

use crate::expr::{eval, EvalContext, EvalError, Expr};
use crate::scalar::{NumError, Scalar};

/// Highest supported expansion order.
pub const MAX_ORDER: usize = 32;

/// A truncated Taylor series with binary64 coefficients.
///
/// Order-0 jets act as constants and broadcast against jets of any order;
/// all other mixed-order combinations are programming errors.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    c: Vec<f64>,
}

impl Jet {
    /// A constant: `c_0 = v`, broadcastable against any order.
    pub fn constant(v: f64) -> Jet {
        Jet { c: vec![v] }
    }

    /// The seed `v + 1·t` at the given order (order 0 collapses to `v`).
    pub fn variable(order: usize, v: f64) -> Jet {
        let mut c = vec![0.0; order + 1];
        c[0] = v;
        if order >= 1 {
            c[1] = 1.0;
        }
        Jet { c }
    }

    pub fn from_coeffs(c: Vec<f64>) -> Jet {
        assert!(!c.is_empty(), "a jet needs at least the order-0 coefficient");
        Jet { c }
    }

    pub fn order(&self) -> usize {
        self.c.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.c
    }

    /// Coefficient `k`, reading absent high coefficients of constants as 0.
    pub fn coeff(&self, k: usize) -> f64 {
        self.c.get(k).copied().unwrap_or(0.0)
    }

    fn result_order(&self, other: &Jet) -> usize {
        let (ka, kb) = (self.order(), other.order());
        assert!(
            ka == kb || ka == 0 || kb == 0,
            "mixed jet orders {ka} and {kb}"
        );
        ka.max(kb)
    }
}

impl Scalar for Jet {
    fn from_f64(v: f64) -> Self {
        Jet::constant(v)
    }

    fn add(&self, other: &Self) -> Self {
        let n = self.result_order(other);
        let c = (0..=n).map(|k| self.coeff(k) + other.coeff(k)).collect();
        Jet { c }
    }

    fn sub(&self, other: &Self) -> Self {
        let n = self.result_order(other);
        let c = (0..=n).map(|k| self.coeff(k) - other.coeff(k)).collect();
        Jet { c }
    }

    fn mul(&self, other: &Self) -> Self {
        let n = self.result_order(other);
        let mut c = vec![0.0; n + 1];
        for (k, ck) in c.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in 0..=k {
                acc += self.coeff(i) * other.coeff(k - i);
            }
            *ck = acc;
        }
        Jet { c }
    }

    fn div(&self, other: &Self) -> Result<Self, NumError> {
        let b0 = other.coeff(0);
        if b0 == 0.0 {
            return Err(NumError::DivByZero);
        }
        let n = self.result_order(other);
        let mut q = vec![0.0; n + 1];
        for k in 0..=n {
            let mut acc = self.coeff(k);
            for i in 0..k {
                acc -= q[i] * other.coeff(k - i);
            }
            q[k] = acc / b0;
        }
        Ok(Jet { c: q })
    }

    fn neg(&self) -> Self {
        Jet {
            c: self.c.iter().map(|v| -v).collect(),
        }
    }

    fn sin(&self) -> Self {
        self.sin_cos().0
    }

    fn cos(&self) -> Self {
        self.sin_cos().1
    }

    fn exp(&self) -> Self {
        let n = self.order();
        let mut g = vec![0.0; n + 1];
        g[0] = self.coeff(0).exp();
        for k in 1..=n {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += (j as f64) * self.coeff(j) * g[k - j];
            }
            g[k] = acc / k as f64;
        }
        Jet { c: g }
    }

    fn log(&self) -> Result<Self, NumError> {
        let f0 = self.coeff(0);
        if f0 <= 0.0 {
            return Err(NumError::LogDomain);
        }
        let n = self.order();
        let mut g = vec![0.0; n + 1];
        g[0] = f0.ln();
        for k in 1..=n {
            let mut acc = (k as f64) * self.coeff(k);
            for j in 1..k {
                acc -= (j as f64) * g[j] * self.coeff(k - j);
            }
            g[k] = acc / (k as f64) / f0;
        }
        Ok(Jet { c: g })
    }

    fn sqrt(&self) -> Result<Self, NumError> {
        let f0 = self.coeff(0);
        if f0 < 0.0 {
            return Err(NumError::SqrtDomain);
        }
        let n = self.order();
        if f0 == 0.0 {
            if n == 0 {
                return Ok(Jet::constant(0.0));
            }
            // The derivative of sqrt is singular at 0.
            return Err(NumError::SqrtDerivative);
        }
        let mut g = vec![0.0; n + 1];
        g[0] = f0.sqrt();
        for k in 1..=n {
            let mut acc = self.coeff(k);
            for i in 1..k {
                acc -= g[i] * g[k - i];
            }
            g[k] = acc / (2.0 * g[0]);
        }
        Ok(Jet { c: g })
    }

    fn abs(&self) -> Result<Self, NumError> {
        let f0 = self.coeff(0);
        if f0 > 0.0 {
            Ok(self.clone())
        } else if f0 < 0.0 {
            Ok(Scalar::neg(self))
        } else if self.order() == 0 {
            Ok(Jet::constant(0.0))
        } else {
            Err(NumError::AbsDomain)
        }
    }
}

impl Jet {
    fn sin_cos(&self) -> (Jet, Jet) {
        let n = self.order();
        let mut s = vec![0.0; n + 1];
        let mut c = vec![0.0; n + 1];
        s[0] = self.coeff(0).sin();
        c[0] = self.coeff(0).cos();
        for k in 1..=n {
            let mut sa = 0.0;
            let mut ca = 0.0;
            for j in 1..=k {
                let jf = (j as f64) * self.coeff(j);
                sa += jf * c[k - j];
                ca += jf * s[k - j];
            }
            s[k] = sa / k as f64;
            c[k] = -ca / k as f64;
        }
        (Jet { c: s }, Jet { c })
    }
}

/// Box of per-state sampling ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl SampleBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<SampleBox, ModelError> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(ModelError::BoxShape);
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(lo, hi)| !(lo < hi) || !lo.is_finite() || !hi.is_finite())
        {
            return Err(ModelError::DegenerateBox);
        }
        Ok(SampleBox { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// The box translated by `-offset`, used when shifting to deviation
    /// coordinates.
    pub fn shifted(&self, offset: &[f64]) -> SampleBox {
        SampleBox {
            lower: self
                .lower
                .iter()
                .zip(offset)
                .map(|(lo, s)| lo - s)
                .collect(),
            upper: self
                .upper
                .iter()
                .zip(offset)
                .map(|(hi, s)| hi - s)
                .collect(),
        }
    }
}

/// Errors raised while building or rewriting a [`SystemModel`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("model needs at least one state")]
    NoStates,
    #[error("model needs at least one output")]
    NoOutputs,
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("{slot}: {source}")]
    BadExpression {
        slot: String,
        source: crate::expr::UnknownVariable,
    },
    #[error("dynamics count {got} does not match state count {want}")]
    DynamicsArity { got: usize, want: usize },
    #[error("box bounds must have one entry per state")]
    BoxShape,
    #[error("box must satisfy lower < upper componentwise")]
    DegenerateBox,
    #[error("steady state must have one entry per state")]
    SteadyStateShape,
    #[error("evaluating at the steady state: {0}")]
    SteadyStateEval(#[from] EvalError),
}

/// Symbolic description of the plant: dynamics `F`, outputs `H`, the
/// functional `q`, parameter bindings, and a sampling box.
#[derive(Debug, Clone)]
pub struct SystemModel {
    state_names: Vec<String>,
    param_names: Vec<String>,
    param_values: Vec<f64>,
    all_names: Vec<String>,
    dynamics: Vec<Expr>,
    outputs: Vec<Expr>,
    functional: Expr,
    sample_box: SampleBox,
}

impl SystemModel {
    pub fn new(
        state_names: Vec<String>,
        params: Vec<(String, f64)>,
        dynamics: Vec<Expr>,
        outputs: Vec<Expr>,
        functional: Expr,
        sample_box: SampleBox,
    ) -> Result<SystemModel, ModelError> {
        if state_names.is_empty() {
            return Err(ModelError::NoStates);
        }
        if outputs.is_empty() {
            return Err(ModelError::NoOutputs);
        }
        if dynamics.len() != state_names.len() {
            return Err(ModelError::DynamicsArity {
                got: dynamics.len(),
                want: state_names.len(),
            });
        }
        if sample_box.dim() != state_names.len() {
            return Err(ModelError::BoxShape);
        }
        let (param_names, param_values): (Vec<_>, Vec<_>) = params.into_iter().unzip();
        let mut all_names = state_names.clone();
        all_names.extend(param_names.iter().cloned());
        for (i, name) in all_names.iter().enumerate() {
            if all_names[..i].contains(name) {
                return Err(ModelError::DuplicateName(name.clone()));
            }
        }
        let check = |slot: String, e: &Expr| {
            e.validate(&all_names)
                .map_err(|source| ModelError::BadExpression { slot, source })
        };
        for (i, e) in dynamics.iter().enumerate() {
            check(format!("dynamics[{i}]"), e)?;
        }
        for (i, e) in outputs.iter().enumerate() {
            check(format!("outputs[{i}]"), e)?;
        }
        check("functional".into(), &functional)?;
        Ok(SystemModel {
            state_names,
            param_names,
            param_values,
            all_names,
            dynamics,
            outputs,
            functional,
            sample_box,
        })
    }

    pub fn n(&self) -> usize {
        self.state_names.len()
    }

    pub fn p(&self) -> usize {
        self.outputs.len()
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn dynamics(&self) -> &[Expr] {
        &self.dynamics
    }

    pub fn outputs(&self) -> &[Expr] {
        &self.outputs
    }

    pub fn functional(&self) -> &Expr {
        &self.functional
    }

    pub fn sample_box(&self) -> &SampleBox {
        &self.sample_box
    }

    /// Evaluates an expression of this model at a state point.
    pub fn eval_at(&self, expr: &Expr, x: &[f64]) -> Result<f64, EvalError> {
        assert_eq!(x.len(), self.n());
        let mut values = x.to_vec();
        values.extend_from_slice(&self.param_values);
        eval(expr, &EvalContext::new(&self.all_names, &values))
    }

    /// Output vector `H(x)`.
    pub fn output_at(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.outputs.iter().map(|h| self.eval_at(h, x)).collect()
    }

    /// Right-hand side `F(x)`.
    pub fn f_at(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.dynamics.iter().map(|f| self.eval_at(f, x)).collect()
    }

    fn jet_context_values(&self, state_jets: Vec<Jet>) -> Vec<Jet> {
        let mut values = state_jets;
        values.extend(self.param_values.iter().map(|&v| Jet::constant(v)));
        values
    }

    /// Evaluates an expression over prepared state jets (parameters are
    /// bound as constants).
    pub fn eval_jet(&self, expr: &Expr, state_jets: Vec<Jet>) -> Result<Jet, EvalError> {
        let values = self.jet_context_values(state_jets);
        eval(expr, &EvalContext::new(&self.all_names, &values))
    }

    /// Rewrites the model into deviation coordinates around `steady`:
    /// states become offsets from `steady`, outputs and the functional are
    /// re-zeroed at that point, and the box is translated.
    pub fn shift_to_deviation(&self, steady: &[f64]) -> Result<SystemModel, ModelError> {
        if steady.len() != self.n() {
            return Err(ModelError::SteadyStateShape);
        }
        let substitute_states = |e: &Expr| {
            let mut out = e.clone();
            for (name, s) in self.state_names.iter().zip(steady) {
                out = out.substitute(name, &Expr::var(name.clone()).add(Expr::constant(*s)));
            }
            out
        };
        let dynamics = self.dynamics.iter().map(&substitute_states).collect();
        let mut outputs = Vec::with_capacity(self.p());
        for h in &self.outputs {
            let h_s = self.eval_at(h, steady)?;
            outputs.push(substitute_states(h).sub(Expr::constant(h_s)));
        }
        let q_s = self.eval_at(&self.functional, steady)?;
        let functional = substitute_states(&self.functional).sub(Expr::constant(q_s));
        SystemModel::new(
            self.state_names.clone(),
            self.param_names
                .iter()
                .cloned()
                .zip(self.param_values.iter().copied())
                .collect(),
            dynamics,
            outputs,
            functional,
            self.sample_box.shifted(steady),
        )
    }
}

/// Errors from flow expansion and Lie-derivative evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LieError {
    #[error("expansion order {0} exceeds the supported maximum {MAX_ORDER}")]
    OrderTooLarge(usize),
    #[error("state dimension mismatch: got {got}, model has {want}")]
    Dimension { got: usize, want: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Taylor coefficients of the flow of `dx/dt = F(x)` through `x0`, one
/// coefficient array of length `order + 1` per state.
///
/// Coefficient `k+1` of each state is the k-th coefficient of `F(x(t))`
/// divided by `k + 1`; evaluating `F` over jets truncated at order `k`
/// supplies exactly that coefficient.
pub fn taylor_flow(
    sys: &SystemModel,
    x0: &[f64],
    order: usize,
) -> Result<Vec<Vec<f64>>, LieError> {
    if order > MAX_ORDER {
        return Err(LieError::OrderTooLarge(order));
    }
    if x0.len() != sys.n() {
        return Err(LieError::Dimension {
            got: x0.len(),
            want: sys.n(),
        });
    }
    let n = sys.n();
    let mut coeffs: Vec<Vec<f64>> = x0.iter().map(|&v| vec![v]).collect();
    for k in 0..order {
        let state_jets: Vec<Jet> = coeffs.iter().map(|c| Jet::from_coeffs(c.clone())).collect();
        let mut next = Vec::with_capacity(n);
        for f in sys.dynamics() {
            let fj = sys.eval_jet(f, state_jets.clone())?;
            next.push(fj.coeff(k) / (k + 1) as f64);
        }
        for (c, v) in coeffs.iter_mut().zip(next) {
            c.push(v);
        }
    }
    Ok(coeffs)
}

/// The flow expansion packaged as jets, ready for composing functions.
pub fn flow_jets(sys: &SystemModel, x0: &[f64], order: usize) -> Result<Vec<Jet>, LieError> {
    Ok(taylor_flow(sys, x0, order)?
        .into_iter()
        .map(Jet::from_coeffs)
        .collect())
}

/// Lie derivatives `L_F^k f(x0)` for `k = 0..=order`.
///
/// Component 0 equals `f(x0)` exactly: jet arithmetic computes order-0
/// coefficients with plain real operations.
pub fn lie_derivatives(
    sys: &SystemModel,
    f: &Expr,
    x0: &[f64],
    order: usize,
) -> Result<Vec<f64>, LieError> {
    let jets = flow_jets(sys, x0, order)?;
    let fj = sys.eval_jet(f, jets)?;
    Ok(scale_by_factorials(&fj, order))
}

fn scale_by_factorials(jet: &Jet, order: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(order + 1);
    let mut fact = 1.0;
    for k in 0..=order {
        if k > 0 {
            fact *= k as f64;
        }
        out.push(fact * jet.coeff(k));
    }
    out
}

/// Lie derivatives of every output and of the functional at one point,
/// sharing a single flow expansion.
#[derive(Debug, Clone)]
pub struct LieTable {
    /// `h[i][j] = L_F^i H_j(x0)`, `i = 0..=order`, `j = 0..p-1`.
    pub h: Vec<Vec<f64>>,
    /// `q[i] = L_F^i q(x0)`.
    pub q: Vec<f64>,
}

pub fn lie_table(sys: &SystemModel, x0: &[f64], order: usize) -> Result<LieTable, LieError> {
    let jets = flow_jets(sys, x0, order)?;
    let mut h = Vec::with_capacity(order + 1);
    let mut per_output = Vec::with_capacity(sys.p());
    for hj in sys.outputs() {
        let jet = sys.eval_jet(hj, jets.clone())?;
        per_output.push(scale_by_factorials(&jet, order));
    }
    for i in 0..=order {
        h.push(per_output.iter().map(|col| col[i]).collect());
    }
    let qj = sys.eval_jet(sys.functional(), jets)?;
    Ok(LieTable {
        h,
        q: scale_by_factorials(&qj, order),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn model(
        states: &[&str],
        dynamics: &[&str],
        outputs: &[&str],
        functional: &str,
    ) -> SystemModel {
        let n = states.len();
        SystemModel::new(
            states.iter().map(|s| (*s).to_owned()).collect(),
            vec![],
            dynamics.iter().map(|s| parse(s).unwrap()).collect(),
            outputs.iter().map(|s| parse(s).unwrap()).collect(),
            parse(functional).unwrap(),
            SampleBox::new(vec![-1.0; n], vec![1.0; n]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn jet_cube_of_linear_seed() {
        // (2 + t)^3 = 8 + 12 t + 6 t^2 (+ t^3 truncated at order 2)
        let x = Jet::variable(2, 2.0);
        let y = x.powi(3);
        assert_eq!(y.coeffs(), &[8.0, 12.0, 6.0]);
    }

    #[test]
    fn jet_div_and_exp_consistency() {
        let x = Jet::variable(4, 0.5);
        let inv = Jet::constant(1.0).div(&x).unwrap();
        let back = inv.mul(&x);
        assert!((back.coeff(0) - 1.0).abs() < 1e-15);
        for k in 1..=4 {
            assert!(back.coeff(k).abs() < 1e-14);
        }
        let e = Scalar::exp(&x);
        let l = Scalar::log(&e).unwrap();
        for k in 0..=4 {
            assert!((l.coeff(k) - x.coeff(k)).abs() < 1e-13);
        }
    }

    #[test]
    fn harmonic_oscillator_flow() {
        let sys = model(&["x1", "x2"], &["x2", "-x1"], &["x1"], "x1");
        let flow = taylor_flow(&sys, &[1.0, 0.0], 3).unwrap();
        assert_eq!(flow[0], vec![1.0, 0.0, -0.5, 0.0]); // cos t
        assert_eq!(flow[1], vec![0.0, -1.0, 0.0, 1.0 / 6.0]); // -sin t
    }

    #[test]
    fn exponential_flow() {
        let sys = model(&["x1"], &["x1"], &["x1"], "x1");
        let flow = taylor_flow(&sys, &[2.0], 2).unwrap();
        assert_eq!(flow[0], vec![2.0, 2.0, 1.0]); // 2 e^t
    }

    #[test]
    fn constant_flow() {
        let sys = model(&["x1"], &["1"], &["x1"], "x1");
        let flow = taylor_flow(&sys, &[3.0], 2).unwrap();
        assert_eq!(flow[0], vec![3.0, 1.0, 0.0]);
    }

    #[test]
    fn lie_sequence_harmonic() {
        let sys = model(&["x1", "x2"], &["x2", "-x1"], &["x1"], "x1");
        let l = lie_derivatives(&sys, &parse("x1").unwrap(), &[1.0, 0.0], 3).unwrap();
        assert_eq!(l, vec![1.0, 0.0, -1.0, 0.0]);
    }

    #[test]
    fn lie_sequence_translation() {
        // f(x) = x^2 along dx/dt = 1: f(3 + t) = 9 + 6t + t^2.
        let sys = model(&["x"], &["1"], &["x"], "x");
        let l = lie_derivatives(&sys, &parse("x^2").unwrap(), &[3.0], 3).unwrap();
        assert_eq!(l, vec![9.0, 6.0, 2.0, 0.0]);
    }

    #[test]
    fn lie_sequence_fixed_point_of_scaling() {
        let sys = model(&["x1"], &["x1"], &["x1"], "x1");
        let l = lie_derivatives(&sys, &parse("x1").unwrap(), &[2.0], 3).unwrap();
        assert_eq!(l, vec![2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn lie_table_linear_system() {
        // F = [[0,1],[0,0]], H = x1, q = x2 at (1,1).
        let sys = model(&["x1", "x2"], &["x2", "0"], &["x1"], "x2");
        let t = lie_table(&sys, &[1.0, 1.0], 1).unwrap();
        assert_eq!(t.h[0], vec![1.0]);
        assert_eq!(t.h[1], vec![1.0]);
        assert_eq!(t.q, vec![1.0, 0.0]);
    }

    #[test]
    fn lie_table_order_zero() {
        let sys = model(&["x1", "x2"], &["x2", "-x1"], &["x1 + x2"], "x1*x2");
        let t = lie_table(&sys, &[2.0, 3.0], 0).unwrap();
        assert_eq!(t.h[0], vec![5.0]);
        assert_eq!(t.q, vec![6.0]);
    }

    #[test]
    fn example_system_vanishing_first_orders() {
        let sys = model(
            &["x1", "x2", "x3"],
            &[
                "-x1 - x3^6",
                "sin(x1^2) - x3^2 - x2",
                "-x3 + x1*x2 - 1/(1 + x3^2)",
            ],
            &["x3^2"],
            "x1 + x3^4",
        );
        let t = lie_table(&sys, &[0.0, 0.0, 0.0], 2).unwrap();
        // H = x3^2 vanishes to first order at the origin; the second Lie
        // derivative picks up 2*(dx3/dt)^2 = 2.
        assert_eq!(t.h[0], vec![0.0]);
        assert_eq!(t.h[1], vec![0.0]);
        assert!((t.h[2][0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn table_rows_match_lower_order_calls_bitwise() {
        let sys = model(
            &["x1", "x2"],
            &["x2 - x1^3", "-x1 + exp(x2)/(2 + x2^2)"],
            &["x1 + x2^2"],
            "x1*x2 + x2^3",
        );
        let x0 = [0.3, -0.7];
        let v = 5;
        let table = lie_table(&sys, &x0, v).unwrap();
        for i in 0..=v {
            let h = lie_derivatives(&sys, &sys.outputs()[0].clone(), &x0, i).unwrap();
            let q = lie_derivatives(&sys, &sys.functional().clone(), &x0, i).unwrap();
            for k in 0..=i {
                assert_eq!(table.h[k][0], h[k], "H mismatch at order {k} of {i}");
                assert_eq!(table.q[k], q[k], "q mismatch at order {k} of {i}");
            }
        }
    }

    #[test]
    fn order_guard() {
        let sys = model(&["x1"], &["x1"], &["x1"], "x1");
        assert!(matches!(
            taylor_flow(&sys, &[1.0], MAX_ORDER + 1),
            Err(LieError::OrderTooLarge(_))
        ));
    }

    #[test]
    fn shift_to_deviation_rezeroes_outputs() {
        let sys = model(&["x1", "x2"], &["x2", "-x1 - x2"], &["x1^2"], "x1 + x2");
        let shifted = sys.shift_to_deviation(&[2.0, -1.0]).unwrap();
        // At the origin of deviation coordinates the outputs and the
        // functional read zero.
        assert_eq!(shifted.output_at(&[0.0, 0.0]).unwrap(), vec![0.0]);
        assert_eq!(shifted.eval_at(shifted.functional(), &[0.0, 0.0]).unwrap(), 0.0);
        // Dynamics evaluate at the translated point.
        let f = shifted.f_at(&[0.5, 0.5]).unwrap();
        assert_eq!(f, vec![-0.5, -2.0]); // F(2.5, -0.5) = (x2, -x1 - x2)
    }

    #[test]
    fn degenerate_box_is_rejected() {
        assert!(SampleBox::new(vec![0.0], vec![0.0]).is_err());
        assert!(SampleBox::new(vec![1.0], vec![-1.0]).is_err());
    }
}
