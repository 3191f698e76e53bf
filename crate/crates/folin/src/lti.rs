//! Exact linear-time-invariant path: observability index, the row-space
//! feasibility condition, and the classical order `v_o − 1` design with
//! arbitrary eigenvalue assignment.

use nalgebra::{Complex, DMatrix, DVector, RowDVector};
use thiserror::Error;

use crate::expr::Expr;
use crate::jet::{ModelError, SampleBox, SystemModel};
use crate::span::{char_from_roots, BetaSet, CharPoly, SpanError, RESIDUAL_FLOOR};
use crate::synth::{ObserverLti, SynthError};

/// Default feasibility threshold on the relative residual of the row-space
/// fit.
pub const DEFAULT_LTI_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LtiError {
    #[error("inconsistent matrix dimensions")]
    Dimension,
    #[error("matrix entries must be finite")]
    NonFinite,
    #[error("(H, F) is unobservable: rank stalls at {rank} of {n}")]
    Unobservable { rank: usize, n: usize },
    #[error("observability index 1 leaves no dynamic order; a static gain would suffice and is not modeled")]
    DegenerateOrder,
    #[error("expected {expected} roots for order {expected}, got {got}")]
    RootCount { expected: usize, got: usize },
    #[error("the order v_o - 1 design came back infeasible (residual {residual:.3e}); this contradicts the observability rank and indicates numerical rank trouble")]
    CorollaryInconsistency { residual: f64 },
    #[error(transparent)]
    Span(#[from] SpanError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

/// A linear plant `dx/dt = Fx`, `y = Hx`, `z = qx`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    f: DMatrix<f64>,
    h: DMatrix<f64>,
    q: RowDVector<f64>,
}

impl LtiSystem {
    pub fn new(f: DMatrix<f64>, h: DMatrix<f64>, q: RowDVector<f64>) -> Result<LtiSystem, LtiError> {
        if !f.is_square() || h.ncols() != f.nrows() || q.ncols() != f.nrows() || h.nrows() == 0 {
            return Err(LtiError::Dimension);
        }
        if f.iter().chain(h.iter()).chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(LtiError::NonFinite);
        }
        Ok(LtiSystem { f, h, q })
    }

    pub fn n(&self) -> usize {
        self.f.nrows()
    }

    pub fn p(&self) -> usize {
        self.h.nrows()
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn q(&self) -> &RowDVector<f64> {
        &self.q
    }

    /// Expression-level twin of the matrix system, for driving the
    /// sampled nonlinear machinery on the same plant.
    pub fn to_system_model(&self, sample_box: SampleBox) -> Result<SystemModel, ModelError> {
        let n = self.n();
        let names: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        let row_expr = |row: &[f64]| -> Expr {
            let mut acc: Option<Expr> = None;
            for (j, &c) in row.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let term = Expr::constant(c).mul(Expr::var(names[j].clone()));
                acc = Some(match acc {
                    None => term,
                    Some(prev) => prev.add(term),
                });
            }
            acc.unwrap_or(Expr::constant(0.0))
        };
        let dynamics = (0..n)
            .map(|i| row_expr(&self.f.row(i).iter().copied().collect::<Vec<_>>()))
            .collect();
        let outputs = (0..self.p())
            .map(|i| row_expr(&self.h.row(i).iter().copied().collect::<Vec<_>>()))
            .collect();
        let functional = row_expr(&self.q.iter().copied().collect::<Vec<_>>());
        SystemModel::new(names, vec![], dynamics, outputs, functional, sample_box)
    }
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return 0;
    }
    let thresh = (m.nrows().max(m.ncols()) as f64) * smax * 1e-12;
    svd.singular_values.iter().filter(|&&s| s > thresh).count()
}

/// Smallest `k` with `rank [H; HF; …; HF^{k-1}] = n`.
pub fn obs_index(sys: &LtiSystem) -> Result<usize, LtiError> {
    let n = sys.n();
    let p = sys.p();
    let mut stacked = DMatrix::zeros(0, n);
    let mut block = sys.h.clone();
    let mut rank = 0;
    for k in 1..=n {
        stacked = DMatrix::from_fn(p * k, n, |i, j| {
            if i < p * (k - 1) {
                stacked[(i, j)]
            } else {
                block[(i - p * (k - 1), j)]
            }
        });
        rank = numerical_rank(&stacked);
        if rank == n {
            return Ok(k);
        }
        block = &block * &sys.f;
    }
    Err(LtiError::Unobservable { rank, n })
}

/// Outcome of the row-space feasibility test.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition61 {
    pub feasible: bool,
    pub beta: BetaSet,
    pub residual: f64,
}

/// Least-squares fit of `qF^v + α_1 qF^{v-1} + … + α_v q` against the rows
/// `{H_j F^i}`. Coefficients unpack in the span-module ordering (derivative
/// order descending, output index fastest) after the same
/// lowest-order-first basis reduction.
pub fn condition_61(
    sys: &LtiSystem,
    v: usize,
    alpha: &CharPoly,
    tol: f64,
) -> Result<Condition61, LtiError> {
    if v == 0 {
        return Err(LtiError::from(SpanError::OrderZero));
    }
    assert_eq!(alpha.order(), v, "characteristic polynomial order mismatch");
    let n = sys.n();
    let p = sys.p();
    // target = Σ_{i=0}^{v} α_i q F^{v-i}, α_0 = 1.
    let mut powers: Vec<RowDVector<f64>> = Vec::with_capacity(v + 1);
    let mut row = sys.q.clone();
    powers.push(row.clone());
    for _ in 0..v {
        row = &row * &sys.f;
        powers.push(row.clone());
    }
    let mut target = powers[v].clone();
    for (i, a) in alpha.alpha().iter().enumerate() {
        target += &powers[v - 1 - i] * *a;
    }
    // Basis rows H_j F^i arranged as columns of an n × (v+1)p matrix in
    // the β ordering.
    let mut h_powers: Vec<DMatrix<f64>> = Vec::with_capacity(v + 1);
    let mut hp = sys.h.clone();
    h_powers.push(hp.clone());
    for _ in 0..v {
        hp = &hp * &sys.f;
        h_powers.push(hp.clone());
    }
    let mut m = DMatrix::zeros(n, (v + 1) * p);
    for i in 0..=v {
        for j in 0..p {
            let col = h_powers[v - i].row(j).transpose();
            m.set_column(i * p + j, &col);
        }
    }
    let rhs: DVector<f64> = target.transpose();
    let solution = crate::span::reduced_least_squares(&m, &rhs, v, p)?;
    let residual = (&m * &solution - &rhs).norm() / rhs.norm().max(RESIDUAL_FLOOR);
    let rows = DMatrix::from_fn(v + 1, p, |i, j| solution[i * p + j]);
    let feasible = residual <= tol;
    Ok(Condition61 {
        feasible,
        beta: BetaSet::new(rows, residual, feasible),
        residual,
    })
}

/// The classical design at order `v = v_o − 1` with the given eigenvalues.
/// Returns the observer together with the transform matrix `T` realizing
/// it, for verification.
pub fn design_corollary(
    sys: &LtiSystem,
    roots: &[Complex<f64>],
) -> Result<(ObserverLti, DMatrix<f64>), LtiError> {
    let vo = obs_index(sys)?;
    if vo < 2 {
        return Err(LtiError::DegenerateOrder);
    }
    let v = vo - 1;
    if roots.len() != v {
        return Err(LtiError::RootCount {
            expected: v,
            got: roots.len(),
        });
    }
    let alpha = char_from_roots(roots)?;
    let c61 = condition_61(sys, v, &alpha, DEFAULT_LTI_TOL)?;
    if !c61.feasible {
        return Err(LtiError::CorollaryInconsistency {
            residual: c61.residual,
        });
    }
    let obs = ObserverLti::from_parts(alpha.alpha(), c61.beta.rows())?;
    let t = transform_matrix(sys, &alpha, c61.beta.rows());
    Ok((obs, t))
}

/// Assembles the `v × n` transform matrix from the same structure the
/// nonlinear path uses: row `i` is
/// `Σ_{m=0}^{v-i} (α_m q − β_m H) F^{v-i-m}` with `α_0 = 1`.
pub fn transform_matrix(sys: &LtiSystem, alpha: &CharPoly, beta: &DMatrix<f64>) -> DMatrix<f64> {
    let v = alpha.order();
    let n = sys.n();
    let mut t = DMatrix::zeros(v, n);
    for i in 1..=v {
        let mut row = RowDVector::zeros(n);
        for m in 0..=(v - i) {
            let am = if m == 0 { 1.0 } else { alpha.alpha()[m - 1] };
            let mut base = &sys.q * am - beta.row(m) * &sys.h;
            for _ in 0..(v - i - m) {
                base = &base * &sys.f;
            }
            row += base;
        }
        t.row_mut(i - 1).copy_from(&row);
    }
    t
}

/// Residuals of the classical observer conditions `TF = AT + BH` and
/// `q = CT + DH`, relative to the operand norms.
#[derive(Debug, Clone, PartialEq)]
pub struct LuenbergerReport {
    pub state_residual: f64,
    pub output_residual: f64,
    pub tol: f64,
    pub pass: bool,
}

pub fn verify_luenberger(
    sys: &LtiSystem,
    t: &DMatrix<f64>,
    obs: &ObserverLti,
    tol: f64,
) -> LuenbergerReport {
    let tf = t * &sys.f;
    let at = obs.a() * t;
    let bh = obs.b() * &sys.h;
    let state_scale = tf.norm().max(at.norm()).max(bh.norm()).max(RESIDUAL_FLOOR);
    let state_residual = (&tf - &at - &bh).norm() / state_scale;
    let ct = obs.c() * t;
    let dh = obs.d() * &sys.h;
    let out_scale = sys.q.norm().max(ct.norm()).max(dh.norm()).max(RESIDUAL_FLOOR);
    let output_residual = (&sys.q - &ct - &dh).norm() / out_scale;
    LuenbergerReport {
        state_residual,
        output_residual,
        tol,
        pass: state_residual <= tol && output_residual <= tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_integrator() -> LtiSystem {
        LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            RowDVector::from_row_slice(&[0.0, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn obs_index_chain() {
        assert_eq!(obs_index(&double_integrator()).unwrap(), 2);
    }

    #[test]
    fn obs_index_full_rank_output() {
        let sys = LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            DMatrix::identity(2, 2),
            RowDVector::from_row_slice(&[1.0, 0.0]),
        )
        .unwrap();
        assert_eq!(obs_index(&sys).unwrap(), 1);
    }

    #[test]
    fn obs_index_unobservable() {
        let sys = LtiSystem::new(
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            RowDVector::from_row_slice(&[0.0, 1.0]),
        )
        .unwrap();
        assert!(matches!(
            obs_index(&sys),
            Err(LtiError::Unobservable { rank: 1, n: 2 })
        ));
    }

    #[test]
    fn condition_61_double_integrator() {
        let sys = double_integrator();
        let alpha = CharPoly::from_coeffs(vec![3.0]).unwrap();
        let c = condition_61(&sys, 1, &alpha, DEFAULT_LTI_TOL).unwrap();
        assert!(c.feasible);
        assert!((c.beta.rows()[(0, 0)] - 3.0).abs() < 1e-12);
        assert!(c.beta.rows()[(1, 0)].abs() < 1e-12);
    }

    #[test]
    fn condition_61_feasible_for_any_alpha_when_rows_span() {
        let sys = double_integrator();
        for a in [-2.0, 0.5, 10.0] {
            let alpha = CharPoly::from_coeffs(vec![a]).unwrap();
            let c = condition_61(&sys, 1, &alpha, DEFAULT_LTI_TOL).unwrap();
            assert!(c.feasible, "alpha {a}");
        }
    }

    #[test]
    fn condition_61_structurally_infeasible() {
        // F = I, H = (1,0): every H F^i is proportional to (1,0) while the
        // target keeps a second component.
        let sys = LtiSystem::new(
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            RowDVector::from_row_slice(&[0.0, 1.0]),
        )
        .unwrap();
        let alpha = CharPoly::from_coeffs(vec![3.0]).unwrap();
        let c = condition_61(&sys, 1, &alpha, DEFAULT_LTI_TOL).unwrap();
        assert!(!c.feasible);
        assert!(c.residual > 0.5);
    }

    #[test]
    fn corollary_design_double_integrator() {
        let sys = double_integrator();
        let (obs, t) = design_corollary(&sys, &[Complex::new(-3.0, 0.0)]).unwrap();
        assert_eq!(obs.a()[(0, 0)], -3.0);
        assert_eq!(obs.b()[(0, 0)], -9.0);
        assert_eq!(obs.c()[0], 1.0);
        assert_eq!(obs.d()[0], 3.0);
        // T = q - β_0 H = (-3, 1).
        assert_eq!(t[(0, 0)], -3.0);
        assert_eq!(t[(0, 1)], 1.0);
        let report = verify_luenberger(&sys, &t, &obs, 1e-10);
        assert!(report.pass);
        assert_eq!(report.state_residual, 0.0);
        assert_eq!(report.output_residual, 0.0);
    }

    #[test]
    fn corollary_rejects_degenerate_order() {
        let sys = LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            DMatrix::identity(2, 2),
            RowDVector::from_row_slice(&[1.0, 0.0]),
        )
        .unwrap();
        assert!(matches!(
            design_corollary(&sys, &[]),
            Err(LtiError::DegenerateOrder)
        ));
    }

    #[test]
    fn perturbed_transform_fails_verification() {
        let sys = double_integrator();
        let (obs, mut t) = design_corollary(&sys, &[Complex::new(-3.0, 0.0)]).unwrap();
        t[(0, 0)] += 1e-6;
        let report = verify_luenberger(&sys, &t, &obs, 1e-10);
        assert!(!report.pass);
        assert!(report.state_residual > 1e-8);
    }

    #[test]
    fn obs_index_never_grows_with_more_outputs() {
        let mut rng_state = 88172645463325252u64;
        let mut next = move || {
            // xorshift64 is plenty for test data.
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for _ in 0..20 {
            let n = 4;
            let f = DMatrix::from_fn(n, n, |_, _| next());
            let h1 = DMatrix::from_fn(1, n, |_, _| next());
            let h2 = DMatrix::from_fn(2, n, |i, j| if i == 0 { h1[(0, j)] } else { next() });
            let q = RowDVector::from_fn(n, |_, j| h1[(0, j)] + j as f64);
            let s1 = LtiSystem::new(f.clone(), h1, q.clone()).unwrap();
            let s2 = LtiSystem::new(f, h2, q).unwrap();
            if let (Ok(v1), Ok(v2)) = (obs_index(&s1), obs_index(&s2)) {
                assert!(v2 <= v1);
            }
        }
    }
}
