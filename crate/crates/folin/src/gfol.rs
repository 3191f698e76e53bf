//! Generalized functional-observer linearization: the observer dynamics
//! stay linear in the observer state but may be driven by nonlinear
//! functions of the measured outputs, and the estimate is recovered by
//! inverting a user-supplied output relation.
//!
//! The candidate functions are inputs — there is no search. The module
//! verifies the defining identity on samples, assembles the observer, and
//! inverts the output relation at runtime.

use nalgebra::{DMatrix, DVector, RowDVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::expr::{eval, EvalContext, EvalError, Expr};
use crate::jet::{flow_jets, Jet, LieError, SystemModel};
use crate::scalar::Scalar;
use crate::span::{CharPoly, SampleSet};
use crate::synth::{report_from_pairs, VerifyReport};

/// Convergence requirement for the output-relation inversion, relative to
/// `max(1, |ζ|)`.
pub const INVERT_TOL: f64 = 1e-12;
const INVERT_MAX_ITERS: usize = 100;
const MONOTONICITY_PROBES: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GfolError {
    #[error("order must be at least 1")]
    OrderZero,
    #[error("expected {expected} functions Z1..Zv, got {got}")]
    FunctionCount { expected: usize, got: usize },
    #[error("{slot}: {source}")]
    BadExpression {
        slot: String,
        source: crate::expr::UnknownVariable,
    },
    #[error("bracket must satisfy lo < hi and be finite")]
    BadBracket,
    #[error("output relation is not strictly monotonic in z over the bracket (dZ0/dz = {deriv:.3e} at z = {z}, flipping sign or vanishing)")]
    NotMonotonic { z: f64, deriv: f64 },
    #[error("no sign change over the bracket [{lo}, {hi}]: G-ζ is {f_lo:.3e} and {f_hi:.3e}")]
    NoSignChange { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
    #[error("inversion did not converge within {INVERT_MAX_ITERS} iterations")]
    NonConvergence,
    #[error("the supplied explicit inverse violates G(ẑ, y) = ζ by {mismatch:.3e}")]
    InverseInaccurate { mismatch: f64 },
    #[error("evaluation failed at sample {index}: {source}")]
    SampleEval { index: usize, source: LieError },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Lie(#[from] LieError),
}

/// User-supplied candidate functions for the generalized problem:
/// `Z0(z, y)` invertible in `z`, and `Z1..Zv` of the outputs alone.
///
/// Expressions use the reserved names `z`, `y1..yp`, and (for the optional
/// explicit inverse) `zeta`.
#[derive(Debug, Clone)]
pub struct GeneralSpec {
    alpha: CharPoly,
    z0: Expr,
    z_funcs: Vec<Expr>,
    inverse: Option<Expr>,
    bracket: (f64, f64),
    p: usize,
}

fn y_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("y{j}")).collect()
}

impl GeneralSpec {
    /// Validates names and the bracket, then spot-checks strict
    /// monotonicity of `Z0` in `z` at sampled `(z, y)` pairs drawn from the
    /// bracket and the system box. Monotonicity over the whole bracket is
    /// not provable numerically; the probe count trades confidence for
    /// construction cost.
    pub fn new(
        sys: &SystemModel,
        alpha: CharPoly,
        z0: Expr,
        z_funcs: Vec<Expr>,
        inverse: Option<Expr>,
        bracket: (f64, f64),
    ) -> Result<GeneralSpec, GfolError> {
        let v = alpha.order();
        if v == 0 {
            return Err(GfolError::OrderZero);
        }
        if z_funcs.len() != v {
            return Err(GfolError::FunctionCount {
                expected: v,
                got: z_funcs.len(),
            });
        }
        if !(bracket.0 < bracket.1) || !bracket.0.is_finite() || !bracket.1.is_finite() {
            return Err(GfolError::BadBracket);
        }
        let p = sys.p();
        let mut z0_names = vec!["z".to_owned()];
        z0_names.extend(y_names(p));
        z0.validate(&z0_names)
            .map_err(|source| GfolError::BadExpression {
                slot: "Z0".into(),
                source,
            })?;
        let yn = y_names(p);
        for (i, zf) in z_funcs.iter().enumerate() {
            zf.validate(&yn).map_err(|source| GfolError::BadExpression {
                slot: format!("Z{}", i + 1),
                source,
            })?;
        }
        if let Some(inv) = &inverse {
            let mut inv_names = vec!["zeta".to_owned()];
            inv_names.extend(yn.iter().cloned());
            inv.validate(&inv_names)
                .map_err(|source| GfolError::BadExpression {
                    slot: "inverse".into(),
                    source,
                })?;
        }
        let spec = GeneralSpec {
            alpha,
            z0,
            z_funcs,
            inverse,
            bracket,
            p,
        };
        spec.check_monotonicity(sys)?;
        Ok(spec)
    }

    fn check_monotonicity(&self, sys: &SystemModel) -> Result<(), GfolError> {
        let probes_per_axis = 8;
        debug_assert_eq!(probes_per_axis * probes_per_axis, MONOTONICITY_PROBES);
        let xs = crate::span::sample(sys.sample_box(), probes_per_axis, 0x5eed);
        let (lo, hi) = self.bracket;
        let mut sign = 0.0f64;
        for x in xs.points() {
            let y = sys.output_at(x)?;
            for i in 0..probes_per_axis {
                let z = lo + (hi - lo) * (i as f64 + 0.5) / probes_per_axis as f64;
                let deriv = self.dz0_dz(z, &y)?;
                if deriv == 0.0 || (sign != 0.0 && deriv.signum() != sign) {
                    return Err(GfolError::NotMonotonic { z, deriv });
                }
                sign = deriv.signum();
            }
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.alpha.order()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn alpha(&self) -> &CharPoly {
        &self.alpha
    }

    pub fn z0(&self) -> &Expr {
        &self.z0
    }

    pub fn z_funcs(&self) -> &[Expr] {
        &self.z_funcs
    }

    pub fn inverse(&self) -> Option<&Expr> {
        self.inverse.as_ref()
    }

    pub fn bracket(&self) -> (f64, f64) {
        self.bracket
    }

    /// `Z0(z, y)` over any scalar field.
    fn eval_z0<T: Scalar>(&self, z: T, y: Vec<T>) -> Result<T, EvalError> {
        let mut names = vec!["z".to_owned()];
        names.extend(y_names(self.p));
        let mut values = vec![z];
        values.extend(y);
        eval(&self.z0, &EvalContext::new(&names, &values))
    }

    fn eval_zi<T: Scalar>(&self, i: usize, y: Vec<T>) -> Result<T, EvalError> {
        let names = y_names(self.p);
        eval(&self.z_funcs[i], &EvalContext::new(&names, &y))
    }

    pub fn g_value(&self, z: f64, y: &[f64]) -> Result<f64, EvalError> {
        self.eval_z0(z, y.to_vec())
    }

    fn dz0_dz(&self, z: f64, y: &[f64]) -> Result<f64, EvalError> {
        let zj = Jet::variable(1, z);
        let yj: Vec<Jet> = y.iter().map(|&v| Jet::constant(v)).collect();
        Ok(self.eval_z0(zj, yj)?.coeff(1))
    }
}

/// The assembled generalized observer: companion `A`, `C = (0,…,0,1)`,
/// the drive functions, and the output relation with its inversion
/// bracket.
#[derive(Debug, Clone)]
pub struct GeneralObserver {
    a: DMatrix<f64>,
    c: RowDVector<f64>,
    spec: GeneralSpec,
}

impl GeneralObserver {
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn p(&self) -> usize {
        self.spec.p
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &RowDVector<f64> {
        &self.c
    }

    pub fn spec(&self) -> &GeneralSpec {
        &self.spec
    }

    /// `dξ̂/dt = A ξ̂ + 𝔅(y)` with `𝔅 = (Z_1, …, Z_v)ᵀ`.
    pub fn xi_dot(&self, xi: &DVector<f64>, y: &[f64]) -> Result<DVector<f64>, EvalError> {
        let mut drive = DVector::zeros(self.order());
        for i in 0..self.order() {
            drive[i] = self.spec.eval_zi(i, y.to_vec())?;
        }
        Ok(&self.a * xi + drive)
    }

    /// Solves `G(ẑ, y) = C ξ̂` for the estimate.
    pub fn zhat(&self, xi: &DVector<f64>, y: &[f64]) -> Result<f64, GfolError> {
        let zeta = (&self.c * xi)[0];
        invert_g(&self.spec, zeta, y)
    }
}

/// Assembles the observer from a spec. Callers gate on [`verify_71`]
/// first; synthesis itself is purely structural.
pub fn synthesize_general(spec: &GeneralSpec) -> GeneralObserver {
    let v = spec.order();
    let a = spec.alpha.companion();
    let mut c = RowDVector::zeros(v);
    c[v - 1] = 1.0;
    GeneralObserver {
        a,
        c,
        spec: spec.clone(),
    }
}

/// Checks the generalized identity
/// `(L_F^v + α_1 L_F^{v-1} + … + α_v I) Z0(q(x), H(x))
///   = Z1(H(x)) + L_F Z2(H(x)) + … + L_F^{v-1} Zv(H(x))`
/// at the samples, composing everything through the jet engine.
pub fn verify_71(
    sys: &SystemModel,
    spec: &GeneralSpec,
    samples: &SampleSet,
    tol: f64,
) -> Result<VerifyReport, GfolError> {
    let v = spec.order();
    let pairs: Vec<(usize, f64, f64)> = samples
        .points()
        .par_iter()
        .enumerate()
        .map(|(index, x)| -> Result<(usize, f64, f64), GfolError> {
            let jets = flow_jets(sys, x, v)
                .map_err(|source| GfolError::SampleEval { index, source })?;
            let q_jet = sys.eval_jet(sys.functional(), jets.clone())?;
            let h_jets: Vec<Jet> = sys
                .outputs()
                .iter()
                .map(|h| sys.eval_jet(h, jets.clone()))
                .collect::<Result<_, _>>()?;
            let z0c = spec.eval_z0(q_jet, h_jets.clone())?;
            let mut lhs = lie_coeff(&z0c, v);
            for (m, a) in spec.alpha.alpha().iter().enumerate() {
                lhs += a * lie_coeff(&z0c, v - 1 - m);
            }
            let mut rhs = 0.0;
            for i in 1..=v {
                let zi = spec.eval_zi(i - 1, h_jets.clone())?;
                rhs += lie_coeff(&zi, i - 1);
            }
            Ok((index, lhs, rhs))
        })
        .collect::<Result<_, _>>()?;
    Ok(report_from_pairs(&pairs, tol))
}

/// `k! ·` coefficient `k`: the k-th Lie derivative of the composed
/// quantity.
fn lie_coeff(jet: &Jet, k: usize) -> f64 {
    let mut fact = 1.0;
    for i in 2..=k {
        fact *= i as f64;
    }
    fact * jet.coeff(k)
}

/// Evaluates the generalized transform; the last component is
/// `Z0(q(x), H(x))`.
pub fn transform_general(
    sys: &SystemModel,
    spec: &GeneralSpec,
    x: &[f64],
) -> Result<DVector<f64>, GfolError> {
    let v = spec.order();
    let jets = flow_jets(sys, x, v.saturating_sub(1))?;
    let q_jet = sys.eval_jet(sys.functional(), jets.clone())?;
    let h_jets: Vec<Jet> = sys
        .outputs()
        .iter()
        .map(|h| sys.eval_jet(h, jets.clone()))
        .collect::<Result<_, _>>()?;
    let z0c = spec.eval_z0(q_jet, h_jets.clone())?;
    let mut t = DVector::zeros(v);
    for i in 1..=v {
        let mut acc = lie_coeff(&z0c, v - i);
        for (m, a) in spec.alpha.alpha().iter().enumerate().take(v - i) {
            acc += a * lie_coeff(&z0c, v - i - 1 - m);
        }
        for m in (i + 1)..=v {
            let zm = spec.eval_zi(m - 1, h_jets.clone())?;
            acc -= lie_coeff(&zm, m - i - 1);
        }
        t[i - 1] = acc;
    }
    Ok(t)
}

/// Solves `G(ẑ, y) = ζ` for `ẑ`: the explicit inverse when supplied
/// (checked against the relation), otherwise safeguarded Newton inside the
/// bracket with bisection fallback.
pub fn invert_g(spec: &GeneralSpec, zeta: f64, y: &[f64]) -> Result<f64, GfolError> {
    let target_tol = INVERT_TOL * zeta.abs().max(1.0);
    if let Some(inv) = spec.inverse() {
        let mut names = vec!["zeta".to_owned()];
        names.extend(y_names(spec.p));
        let mut values = vec![zeta];
        values.extend_from_slice(y);
        let z = eval(inv, &EvalContext::new(&names, &values))?;
        let mismatch = (spec.g_value(z, y)? - zeta).abs();
        if mismatch > target_tol {
            return Err(GfolError::InverseInaccurate { mismatch });
        }
        return Ok(z);
    }
    let (mut lo, mut hi) = spec.bracket;
    let mut f_lo = spec.g_value(lo, y)? - zeta;
    let f_hi = spec.g_value(hi, y)? - zeta;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(GfolError::NoSignChange {
            lo,
            hi,
            f_lo,
            f_hi,
        });
    }
    let mut z = 0.5 * (lo + hi);
    for _ in 0..INVERT_MAX_ITERS {
        let f = spec.g_value(z, y)? - zeta;
        if f.abs() <= target_tol {
            return Ok(z);
        }
        // Shrink the bracket around the root.
        if f.signum() == f_lo.signum() {
            lo = z;
            f_lo = f;
        } else {
            hi = z;
        }
        let d = spec.dz0_dz(z, y)?;
        let newton = if d != 0.0 { z - f / d } else { f64::NAN };
        z = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(GfolError::NonConvergence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::jet::SampleBox;
    use crate::span::sample;

    fn example_system() -> SystemModel {
        SystemModel::new(
            vec!["x1".into(), "x2".into(), "x3".into()],
            vec![],
            vec![
                parse("-x1 - x3^6").unwrap(),
                parse("sin(x1^2) - x3^2 - x2").unwrap(),
                parse("-x3 + x1*x2 - 1/(1 + x3^2)").unwrap(),
            ],
            vec![parse("x3^2").unwrap()],
            parse("x1 + x3^4").unwrap(),
            SampleBox::new(vec![-1.0; 3], vec![1.0; 3]).unwrap(),
        )
        .unwrap()
    }

    fn example_spec(sys: &SystemModel) -> GeneralSpec {
        GeneralSpec::new(
            sys,
            CharPoly::from_coeffs(vec![1.0]).unwrap(),
            parse("z - y1^2").unwrap(),
            vec![parse("-y1^3").unwrap()],
            None,
            (-5.0, 5.0),
        )
        .unwrap()
    }

    #[test]
    fn identity_holds_for_candidate_functions() {
        let sys = example_system();
        let spec = example_spec(&sys);
        let samples = sample(sys.sample_box(), 100, 21);
        let report = verify_71(&sys, &spec, &samples, 1e-10).unwrap();
        assert!(report.pass, "mismatch {}", report.max_rel_mismatch);
    }

    #[test]
    fn sign_flip_breaks_identity() {
        let sys = example_system();
        let spec = GeneralSpec::new(
            &sys,
            CharPoly::from_coeffs(vec![1.0]).unwrap(),
            parse("z - y1^2").unwrap(),
            vec![parse("y1^3").unwrap()],
            None,
            (-5.0, 5.0),
        )
        .unwrap();
        let samples = sample(sys.sample_box(), 100, 21);
        let report = verify_71(&sys, &spec, &samples, 1e-10).unwrap();
        assert!(!report.pass);
        assert!(report.max_rel_mismatch > 0.5);
    }

    #[test]
    fn synthesized_observer_structure() {
        let sys = example_system();
        let spec = example_spec(&sys);
        let obs = synthesize_general(&spec);
        assert_eq!(obs.a()[(0, 0)], -1.0);
        assert_eq!(obs.c()[0], 1.0);
        assert_eq!(obs.spec().z_funcs()[0], parse("-y1^3").unwrap());
        assert_eq!(*obs.spec().z0(), parse("z - y1^2").unwrap());
    }

    #[test]
    fn transform_collapses_to_first_state() {
        // Z0(q, H) = x1 + x3^4 - (x3^2)^2 = x1.
        let sys = example_system();
        let spec = example_spec(&sys);
        for x in sample(sys.sample_box(), 25, 4).points() {
            let t = transform_general(&sys, &spec, x).unwrap();
            assert!((t[0] - x[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn invert_affine_relation() {
        // G = z - y^2 at ζ = 5, y = 2 has the root ẑ = 9.
        let sys = example_system();
        let spec = GeneralSpec::new(
            &sys,
            CharPoly::from_coeffs(vec![1.0]).unwrap(),
            parse("z - y1^2").unwrap(),
            vec![parse("-y1^3").unwrap()],
            None,
            (-20.0, 20.0),
        )
        .unwrap();
        let z = invert_g(&spec, 5.0, &[2.0]).unwrap();
        assert!((z - 9.0).abs() < 1e-10);
    }

    #[test]
    fn invert_monotone_cubic() {
        // G = z^3 + z: ζ = 2 has the root z = 1.
        let sys = SystemModel::new(
            vec!["x1".into()],
            vec![],
            vec![parse("-x1").unwrap()],
            vec![parse("x1").unwrap()],
            parse("x1").unwrap(),
            SampleBox::new(vec![-1.0], vec![1.0]).unwrap(),
        )
        .unwrap();
        let spec = GeneralSpec::new(
            &sys,
            CharPoly::from_coeffs(vec![1.0]).unwrap(),
            parse("z^3 + z").unwrap(),
            vec![parse("0").unwrap()],
            None,
            (-3.0, 3.0),
        )
        .unwrap();
        let z = invert_g(&spec, 2.0, &[0.3]).unwrap();
        assert!((z - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invert_reports_bad_bracket() {
        let sys = SystemModel::new(
            vec!["x1".into()],
            vec![],
            vec![parse("-x1").unwrap()],
            vec![parse("x1").unwrap()],
            parse("x1").unwrap(),
            SampleBox::new(vec![-1.0], vec![1.0]).unwrap(),
        )
        .unwrap();
        let spec = GeneralSpec::new(
            &sys,
            CharPoly::from_coeffs(vec![1.0]).unwrap(),
            parse("z").unwrap(),
            vec![parse("0").unwrap()],
            None,
            (0.0, 1.0),
        )
        .unwrap();
        assert!(matches!(
            invert_g(&spec, 10.0, &[0.0]),
            Err(GfolError::NoSignChange { .. })
        ));
    }

    #[test]
    fn explicit_inverse_used_and_checked() {
        let sys = example_system();
        let good = GeneralSpec::new(
            &sys,
            CharPoly::from_coeffs(vec![1.0]).unwrap(),
            parse("z - y1^2").unwrap(),
            vec![parse("-y1^3").unwrap()],
            Some(parse("zeta + y1^2").unwrap()),
            (-5.0, 5.0),
        )
        .unwrap();
        let z = invert_g(&good, 5.0, &[2.0]).unwrap();
        assert_eq!(z, 9.0);
        let bad = GeneralSpec::new(
            &sys,
            CharPoly::from_coeffs(vec![1.0]).unwrap(),
            parse("z - y1^2").unwrap(),
            vec![parse("-y1^3").unwrap()],
            Some(parse("zeta - y1^2").unwrap()),
            (-5.0, 5.0),
        )
        .unwrap();
        assert!(matches!(
            invert_g(&bad, 5.0, &[2.0]),
            Err(GfolError::InverseInaccurate { .. })
        ));
    }

    #[test]
    fn inversion_roundtrip_over_bracket() {
        let sys = example_system();
        let spec = example_spec(&sys);
        let xs = sample(sys.sample_box(), 30, 17);
        for (i, x) in xs.points().iter().enumerate() {
            let y = sys.output_at(x).unwrap();
            let z = -4.0 + 8.0 * (i as f64 + 0.5) / 30.0;
            let zeta = spec.g_value(z, &y).unwrap();
            let back = invert_g(&spec, zeta, &y).unwrap();
            assert!((back - z).abs() < 1e-10, "z {z} came back as {back}");
        }
    }

    #[test]
    fn non_monotonic_relation_is_rejected() {
        let sys = example_system();
        let err = GeneralSpec::new(
            &sys,
            CharPoly::from_coeffs(vec![1.0]).unwrap(),
            parse("z^2").unwrap(),
            vec![parse("0").unwrap()],
            None,
            (-1.0, 1.0),
        );
        assert!(matches!(err, Err(GfolError::NotMonotonic { .. })));
    }

    #[test]
    fn affine_relations_reduce_to_the_linear_path() {
        // Z0 = z - β_0 y, Z1 affine in y: the generalized identity is the
        // linear span condition. Compare against the span/synth route on a
        // feasible system with a nontrivial identity (β_0 = 0, β_1 = -2).
        let sys = SystemModel::new(
            vec!["x1".into(), "x2".into()],
            vec![],
            vec![parse("-x1").unwrap(), parse("-3*x2 + x1^2").unwrap()],
            vec![parse("x2").unwrap()],
            parse("x1^2 + x2").unwrap(),
            SampleBox::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap(),
        )
        .unwrap();
        let samples = sample(sys.sample_box(), 60, 3);
        let alpha = CharPoly::from_coeffs(vec![1.0]).unwrap();
        let beta = crate::span::solve_beta(
            &sys,
            &samples,
            1,
            &alpha,
            1e-8,
            crate::span::EvalPolicy::Fail,
        )
        .unwrap();
        assert!(beta.is_feasible());
        let b0 = beta.rows()[(0, 0)];
        let b1 = beta.rows()[(1, 0)];
        assert!(b0.abs() < 1e-10);
        assert!((b1 + 2.0).abs() < 1e-10);
        // Z1(y) = (β_1 - α_1 β_0) y is the B row of the linear observer.
        let z1 = Expr::constant(b1 - 1.0 * b0).mul(Expr::var("y1"));
        let spec = GeneralSpec::new(
            &sys,
            alpha.clone(),
            Expr::var("z").sub(Expr::constant(b0).mul(Expr::var("y1"))),
            vec![z1],
            None,
            (-40.0, 40.0),
        )
        .unwrap();
        let report = verify_71(&sys, &spec, &samples, 1e-9).unwrap();
        assert!(report.pass, "mismatch {}", report.max_rel_mismatch);
        // Transforms agree.
        let obs_beta = beta.rows().clone();
        for x in samples.points().iter().take(10) {
            let t_lin = crate::synth::transform_eval(&sys, &alpha, &obs_beta, x).unwrap();
            let t_gen = transform_general(&sys, &spec, x).unwrap();
            assert!((t_lin[0] - t_gen[0]).abs() < 1e-9);
        }
    }
}
