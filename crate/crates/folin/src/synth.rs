//! Construction of the linear functional observer from `(α, β)`, the
//! transform map it realizes, and the algebraic verification of the
//! defining identities.

use nalgebra::{DMatrix, DVector, RowDVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::jet::{lie_table, LieError, SystemModel};
use crate::span::{BetaSet, CharPoly, SampleSet, RESIDUAL_FLOOR};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("observer order must be at least 1")]
    OrderZero,
    #[error("characteristic polynomial order {alpha} does not match beta row count {beta}")]
    DimensionMismatch { alpha: usize, beta: usize },
    #[error("beta set is not feasible (residual {residual:.3e}); refusing to synthesize")]
    NotFeasible { residual: f64 },
    #[error("characteristic polynomial is not Hurwitz; pass the unstable-allowed flag to synthesize anyway")]
    NotHurwitz,
    #[error(transparent)]
    Lie(#[from] LieError),
}

/// Companion-form functional observer realization.
///
/// `A` has sub-diagonal ones and last column `(-α_v, …, -α_1)ᵀ`;
/// `C = (0, …, 0, 1)`; `D = β_0`; `B` row `i` is `β_{v+1-i} − α_{v+1-i} β_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverLti {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: RowDVector<f64>,
    d: RowDVector<f64>,
    alpha: Vec<f64>,
    beta: DMatrix<f64>,
}

impl ObserverLti {
    /// Assembles the observer matrices from raw `(α, β)` without
    /// feasibility or stability gates. `beta` has `v + 1` rows of length
    /// `p`.
    pub fn from_parts(alpha: &[f64], beta: &DMatrix<f64>) -> Result<ObserverLti, SynthError> {
        let v = alpha.len();
        if v == 0 {
            return Err(SynthError::OrderZero);
        }
        if beta.nrows() != v + 1 {
            return Err(SynthError::DimensionMismatch {
                alpha: v,
                beta: beta.nrows().saturating_sub(1),
            });
        }
        let p = beta.ncols();
        let mut a = DMatrix::zeros(v, v);
        for i in 1..v {
            a[(i, i - 1)] = 1.0;
        }
        for i in 0..v {
            a[(i, v - 1)] = -alpha[v - 1 - i];
        }
        let mut b = DMatrix::zeros(v, p);
        for i in 0..v {
            // Row i+1 of the printed layout: β_{v-i} − α_{v-i} β_0.
            let idx = v - i;
            for j in 0..p {
                b[(i, j)] = beta[(idx, j)] - alpha[idx - 1] * beta[(0, j)];
            }
        }
        let mut c = RowDVector::zeros(v);
        c[v - 1] = 1.0;
        let d = beta.row(0).clone_owned();
        Ok(ObserverLti {
            a,
            b,
            c,
            d,
            alpha: alpha.to_vec(),
            beta: beta.clone(),
        })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn p(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &RowDVector<f64> {
        &self.c
    }

    pub fn d(&self) -> &RowDVector<f64> {
        &self.d
    }

    /// The `(α, β)` provenance the observer was built from.
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &DMatrix<f64> {
        &self.beta
    }

    /// `dξ̂/dt = A ξ̂ + B y`.
    pub fn xi_dot(&self, xi: &DVector<f64>, y: &[f64]) -> DVector<f64> {
        let yv = DVector::from_column_slice(y);
        &self.a * xi + &self.b * yv
    }

    /// `ẑ = C ξ̂ + D y`.
    pub fn zhat(&self, xi: &DVector<f64>, y: &[f64]) -> f64 {
        let yv = DVector::from_column_slice(y);
        (&self.c * xi)[0] + (&self.d * yv)[0]
    }
}

/// Builds the observer from a feasible span solution with a Hurwitz
/// characteristic polynomial; `allow_unstable` lifts the stability gate
/// for study runs.
pub fn synthesize(
    alpha: &CharPoly,
    beta: &BetaSet,
    allow_unstable: bool,
) -> Result<ObserverLti, SynthError> {
    if !beta.is_feasible() {
        return Err(SynthError::NotFeasible {
            residual: beta.residual(),
        });
    }
    if !alpha.is_hurwitz() && !allow_unstable {
        return Err(SynthError::NotHurwitz);
    }
    ObserverLti::from_parts(alpha.alpha(), beta.rows())
}

/// Recovers `β` from observer matrices by the defining recursion:
/// `β_0 = D`, `β_k = C A^{k-1} B + α_1 C A^{k-2} B + … + α_{k-1} C B + α_k D`.
pub fn beta_from_observer(obs: &ObserverLti, alpha: &CharPoly) -> DMatrix<f64> {
    let v = alpha.order();
    let p = obs.p();
    assert_eq!(obs.order(), v, "order mismatch");
    let mut rows = DMatrix::zeros(v + 1, p);
    rows.row_mut(0).copy_from(obs.d());
    // cab[m] = C A^m B, computed once up to m = v - 1.
    let mut cab: Vec<RowDVector<f64>> = Vec::with_capacity(v);
    let mut left = obs.c().clone_owned();
    for _ in 0..v {
        cab.push(&left * obs.b());
        left = &left * obs.a();
    }
    for k in 1..=v {
        let mut row = RowDVector::zeros(p);
        for j in 0..k {
            // α_j with α_0 = 1 multiplies C A^{k-1-j} B.
            let coeff = if j == 0 { 1.0 } else { alpha.alpha()[j - 1] };
            row += &cab[k - 1 - j] * coeff;
        }
        row += obs.d() * alpha.alpha()[k - 1];
        rows.row_mut(k).copy_from(&row);
    }
    rows
}

/// Evaluates the transform `𝒯(x) ∈ ℝ^v` whose components combine Lie
/// derivatives of `q` and of the `β_m`-weighted outputs; the last
/// component is `q(x) − β_0 H(x)`.
pub fn transform_eval(
    sys: &SystemModel,
    alpha: &CharPoly,
    beta: &DMatrix<f64>,
    x: &[f64],
) -> Result<DVector<f64>, SynthError> {
    let v = alpha.order();
    let table = lie_table(sys, x, v.saturating_sub(1))?;
    Ok(transform_from_table(alpha.alpha(), beta, &table.h, &table.q))
}

/// Shared kernel: component `i` (1-indexed) combines the α-weighted
/// functional derivatives with the unweighted β-output derivatives,
/// `Σ_{m=0}^{v-i} α_m L_F^{v-i-m} q − Σ_{m=0}^{v-i} β_m · L_F^{v-i-m} H`
/// with `α_0 = 1`.
fn transform_from_table(
    alpha: &[f64],
    beta: &DMatrix<f64>,
    h: &[Vec<f64>],
    q: &[f64],
) -> DVector<f64> {
    transform_rows(alpha, beta, h, q, 0)
}

/// One Lie order above [`transform_from_table`]: `L_F 𝒯` at the point.
fn transform_dot_from_table(
    alpha: &[f64],
    beta: &DMatrix<f64>,
    h: &[Vec<f64>],
    q: &[f64],
) -> DVector<f64> {
    transform_rows(alpha, beta, h, q, 1)
}

fn transform_rows(
    alpha: &[f64],
    beta: &DMatrix<f64>,
    h: &[Vec<f64>],
    q: &[f64],
    shift: usize,
) -> DVector<f64> {
    let v = alpha.len();
    let p = beta.ncols();
    DVector::from_fn(v, |row, _| {
        let i = row + 1;
        let mut acc = 0.0;
        for m in 0..=(v - i) {
            let am = if m == 0 { 1.0 } else { alpha[m - 1] };
            let k = v - i - m + shift;
            acc += am * q[k];
            for j in 0..p {
                acc -= beta[(m, j)] * h[k][j];
            }
        }
        acc
    })
}

/// Outcome of a sampled identity check. The mismatch is normalized by the
/// largest magnitude either side takes over the sample set, so the verdict
/// is scale-free without becoming meaningless near zeros of the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub samples: usize,
    pub max_abs_mismatch: f64,
    pub scale: f64,
    pub max_rel_mismatch: f64,
    pub worst_sample: usize,
    pub tol: f64,
    pub pass: bool,
}

pub(crate) fn report_from_pairs(pairs: &[(usize, f64, f64)], tol: f64) -> VerifyReport {
    let mut scale: f64 = 0.0;
    for (_, lhs, rhs) in pairs {
        scale = scale.max(lhs.abs()).max(rhs.abs());
    }
    let denom = scale.max(RESIDUAL_FLOOR);
    let mut max_abs: f64 = 0.0;
    let mut worst = 0;
    for (idx, lhs, rhs) in pairs {
        let d = (lhs - rhs).abs();
        if d > max_abs {
            max_abs = d;
            worst = *idx;
        }
    }
    let max_rel = max_abs / denom;
    VerifyReport {
        samples: pairs.iter().map(|(i, _, _)| *i).max().map_or(0, |m| m + 1),
        max_abs_mismatch: max_abs,
        scale,
        max_rel_mismatch: max_rel,
        worst_sample: worst,
        tol,
        pass: max_rel <= tol,
    }
}

/// Checks the invariance identity `L_F 𝒯 = A 𝒯 + B H` at the samples.
/// The left side extends the jet expansion by one order instead of using
/// finite differences.
pub fn verify_pde(
    sys: &SystemModel,
    obs: &ObserverLti,
    samples: &SampleSet,
    tol: f64,
) -> Result<VerifyReport, SynthError> {
    let v = obs.order();
    let rows: Vec<Vec<(f64, f64)>> = samples
        .points()
        .par_iter()
        .map(|x| -> Result<Vec<(f64, f64)>, SynthError> {
            let table = lie_table(sys, x, v)?;
            let t = transform_from_table(obs.alpha(), obs.beta(), &table.h, &table.q);
            let t_dot = transform_dot_from_table(obs.alpha(), obs.beta(), &table.h, &table.q);
            let y = DVector::from_vec(table.h[0].clone());
            let rhs = obs.a() * &t + obs.b() * y;
            Ok(t_dot.iter().zip(rhs.iter()).map(|(l, r)| (*l, *r)).collect())
        })
        .collect::<Result<_, _>>()?;
    let mut pairs = Vec::with_capacity(rows.len() * v);
    for (i, row) in rows.iter().enumerate() {
        for (l, r) in row {
            pairs.push((i, *l, *r));
        }
    }
    Ok(report_from_pairs(&pairs, tol))
}

/// Checks the output identity `q = C 𝒯 + D H` at the samples.
pub fn verify_output(
    sys: &SystemModel,
    obs: &ObserverLti,
    samples: &SampleSet,
    tol: f64,
) -> Result<VerifyReport, SynthError> {
    let v = obs.order();
    let pairs: Vec<(f64, f64)> = samples
        .points()
        .par_iter()
        .map(|x| -> Result<(f64, f64), SynthError> {
            let table = lie_table(sys, x, v.saturating_sub(1))?;
            let t = transform_from_table(obs.alpha(), obs.beta(), &table.h, &table.q);
            let y = DVector::from_vec(table.h[0].clone());
            let rhs = (obs.c() * &t)[0] + (obs.d() * y)[0];
            Ok((table.q[0], rhs))
        })
        .collect::<Result<_, _>>()?;
    let indexed: Vec<(usize, f64, f64)> = pairs
        .into_iter()
        .enumerate()
        .map(|(i, (l, r))| (i, l, r))
        .collect();
    Ok(report_from_pairs(&indexed, tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::jet::SampleBox;
    use crate::span::{char_from_roots, sample, solve_beta, EvalPolicy};
    use nalgebra::Complex;

    fn double_integrator() -> SystemModel {
        SystemModel::new(
            vec!["x1".into(), "x2".into()],
            vec![],
            vec![parse("x2").unwrap(), parse("0").unwrap()],
            vec![parse("x1").unwrap()],
            parse("x2").unwrap(),
            SampleBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn double_integrator_observer_matrices() {
        // v = 1, α = (3), β_0 = 3, β_1 = 0 → A = -3, B = -9, C = 1, D = 3.
        let beta = DMatrix::from_row_slice(2, 1, &[3.0, 0.0]);
        let obs = ObserverLti::from_parts(&[3.0], &beta).unwrap();
        assert_eq!(obs.a()[(0, 0)], -3.0);
        assert_eq!(obs.b()[(0, 0)], -9.0);
        assert_eq!(obs.c()[0], 1.0);
        assert_eq!(obs.d()[0], 3.0);
    }

    #[test]
    fn beta0_zero_collapses_corrections() {
        // v = 2, β_0 = 0: D = 0 and B rows are (β_2, β_1).
        let beta = DMatrix::from_row_slice(3, 1, &[0.0, 5.0, 7.0]);
        let obs = ObserverLti::from_parts(&[1.0, 4.0], &beta).unwrap();
        assert_eq!(obs.d()[0], 0.0);
        assert_eq!(obs.b()[(0, 0)], 7.0);
        assert_eq!(obs.b()[(1, 0)], 5.0);
    }

    #[test]
    fn companion_eigenvalues_match_roots() {
        let roots = [
            Complex::new(-1.0, 0.0),
            Complex::new(-2.0, 1.5),
            Complex::new(-2.0, -1.5),
        ];
        let alpha = char_from_roots(&roots).unwrap();
        let beta = DMatrix::zeros(4, 1);
        let obs = ObserverLti::from_parts(alpha.alpha(), &beta).unwrap();
        let mut eig: Vec<Complex<f64>> =
            obs.a().complex_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap()));
        for (e, r) in eig.iter().zip(alpha.roots()) {
            assert!((e - r).norm() < 1e-9);
        }
    }

    #[test]
    fn beta_recursion_scalar_case() {
        // v = 1: β_0 = D, β_1 = C B + α_1 D.
        let beta = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 4.0]);
        let alpha = CharPoly::from_coeffs(vec![2.5]).unwrap();
        let obs = ObserverLti::from_parts(alpha.alpha(), &beta).unwrap();
        let rec = beta_from_observer(&obs, &alpha);
        assert!((rec - beta).abs().max() < 1e-12);
    }

    #[test]
    fn beta_recursion_zero_observer() {
        let beta = DMatrix::zeros(3, 2);
        let alpha = CharPoly::from_coeffs(vec![1.0, 1.0]).unwrap();
        let obs = ObserverLti::from_parts(alpha.alpha(), &beta).unwrap();
        let rec = beta_from_observer(&obs, &alpha);
        assert_eq!(rec, beta);
    }

    #[test]
    fn transform_double_integrator() {
        // 𝒯(x) = q − β_0 H = x2 − 3 x1.
        let sys = double_integrator();
        let alpha = CharPoly::from_coeffs(vec![3.0]).unwrap();
        let beta = DMatrix::from_row_slice(2, 1, &[3.0, 0.0]);
        let t = transform_eval(&sys, &alpha, &beta, &[0.7, -0.4]).unwrap();
        assert!((t[0] - (-0.4 - 3.0 * 0.7)).abs() < 1e-15);
    }

    #[test]
    fn transform_vanishes_when_q_matches_output() {
        let sys = SystemModel::new(
            vec!["x1".into(), "x2".into()],
            vec![],
            vec![parse("x2").unwrap(), parse("-x1").unwrap()],
            vec![parse("x1 + x2^2").unwrap()],
            parse("2*(x1 + x2^2)").unwrap(),
            SampleBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(),
        )
        .unwrap();
        let alpha = CharPoly::from_coeffs(vec![1.0]).unwrap();
        let beta = DMatrix::from_row_slice(2, 1, &[2.0, 2.0]);
        for x in sample(sys.sample_box(), 20, 3).points() {
            let t = transform_eval(&sys, &alpha, &beta, x).unwrap();
            assert!(t[0].abs() < 1e-14);
        }
    }

    #[test]
    fn pde_identity_double_integrator() {
        let sys = double_integrator();
        let samples = sample(sys.sample_box(), 50, 9);
        let alpha = char_from_roots(&[Complex::new(-3.0, 0.0)]).unwrap();
        let beta = solve_beta(&sys, &samples, 1, &alpha, 1e-8, EvalPolicy::Fail).unwrap();
        let obs = synthesize(&alpha, &beta, false).unwrap();
        let report = verify_pde(&sys, &obs, &samples, 1e-10).unwrap();
        assert!(report.pass, "mismatch {}", report.max_rel_mismatch);
        let out = verify_output(&sys, &obs, &samples, 1e-12).unwrap();
        assert!(out.pass);
    }

    #[test]
    fn second_order_transform_and_identity() {
        // Triple integrator, q = x3, α = (3, 2): β = (2, 0, 0), and the
        // transform rows are (3 x3 - 2 x2, x3 - 2 x1) by hand.
        let sys = SystemModel::new(
            vec!["x1".into(), "x2".into(), "x3".into()],
            vec![],
            vec![
                parse("x2").unwrap(),
                parse("x3").unwrap(),
                parse("0").unwrap(),
            ],
            vec![parse("x1").unwrap()],
            parse("x3").unwrap(),
            SampleBox::new(vec![-1.0; 3], vec![1.0; 3]).unwrap(),
        )
        .unwrap();
        let alpha = CharPoly::from_coeffs(vec![3.0, 2.0]).unwrap();
        let samples = sample(sys.sample_box(), 60, 13);
        let beta = solve_beta(&sys, &samples, 2, &alpha, 1e-8, EvalPolicy::Fail).unwrap();
        assert!(beta.is_feasible());
        assert!((beta.rows()[(0, 0)] - 2.0).abs() < 1e-10);
        assert!(beta.rows()[(1, 0)].abs() < 1e-10);
        assert!(beta.rows()[(2, 0)].abs() < 1e-10);
        let x = [0.4, -0.9, 0.6];
        let t = transform_eval(&sys, &alpha, beta.rows(), &x).unwrap();
        assert!((t[0] - (3.0 * x[2] - 2.0 * x[1])).abs() < 1e-12);
        assert!((t[1] - (x[2] - 2.0 * x[0])).abs() < 1e-12);
        let obs = synthesize(&alpha, &beta, false).unwrap();
        let pde = verify_pde(&sys, &obs, &samples, 1e-10).unwrap();
        assert!(pde.pass, "mismatch {}", pde.max_rel_mismatch);
        let out = verify_output(&sys, &obs, &samples, 1e-12).unwrap();
        assert!(out.pass);
    }

    #[test]
    fn pde_detector_sensitivity() {
        let sys = double_integrator();
        let samples = sample(sys.sample_box(), 50, 9);
        let alpha = char_from_roots(&[Complex::new(-3.0, 0.0)]).unwrap();
        let beta = solve_beta(&sys, &samples, 1, &alpha, 1e-8, EvalPolicy::Fail).unwrap();
        let obs = synthesize(&alpha, &beta, false).unwrap();
        let mut perturbed = obs.clone();
        perturbed.b[(0, 0)] += 1e-3;
        let report = verify_pde(&sys, &perturbed, &samples, 1e-10).unwrap();
        assert!(!report.pass);
        assert!(report.max_rel_mismatch >= 1e-4);
    }

    #[test]
    fn output_identity_is_structural() {
        // Random (α, β) that solve nothing still satisfy q = C𝒯 + DH.
        let sys = double_integrator();
        let samples = sample(sys.sample_box(), 30, 2);
        let alpha = CharPoly::from_coeffs(vec![0.7]).unwrap();
        let beta = DMatrix::from_row_slice(2, 1, &[-1.3, 0.9]);
        let obs = ObserverLti::from_parts(alpha.alpha(), &beta).unwrap();
        let out = verify_output(&sys, &obs, &samples, 1e-12).unwrap();
        assert!(out.pass);
        let pde = verify_pde(&sys, &obs, &samples, 1e-10).unwrap();
        assert!(!pde.pass);
    }

    #[test]
    fn synthesis_gates() {
        let alpha = CharPoly::from_coeffs(vec![-1.0]).unwrap(); // root +1
        let rows = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let feasible = BetaSet::new(rows.clone(), 1e-12, true);
        assert!(matches!(
            synthesize(&alpha, &feasible, false),
            Err(SynthError::NotHurwitz)
        ));
        assert!(synthesize(&alpha, &feasible, true).is_ok());
        let infeasible = BetaSet::new(rows, 0.5, false);
        assert!(matches!(
            synthesize(&alpha, &infeasible, true),
            Err(SynthError::NotFeasible { .. })
        ));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let beta = DMatrix::zeros(2, 1);
        assert!(ObserverLti::from_parts(&[1.0, 2.0], &beta).is_err());
    }
}
