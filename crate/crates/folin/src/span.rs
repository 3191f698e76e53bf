//! The feasibility test: decide whether the prescribed combination of Lie
//! derivatives of the functional lies in the span of the output Lie
//! derivatives, and identify the coefficients.
//!
//! Membership is decided numerically: both sides are evaluated at sampled
//! points of the model's box and the coefficients come from a linear
//! least-squares fit. A fit this clean (relative residual at rounding
//! level) certifies the identity on the sampled region; a residual far
//! above tolerance is an infeasibility verdict.
//!
//! Basis functions can be exactly dependent — a linear output channel
//! makes its own Lie derivative a combination of the outputs themselves —
//! so the solver first reduces the basis: columns are admitted in order of
//! increasing derivative order and a column numerically inside the span of
//! the admitted ones is dropped (its coefficient is reported as zero).
//! This keeps the solution deterministic and matched to the lowest-order
//! representation of the identity.

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::jet::{lie_table, LieError, LieTable, SampleBox, SystemModel};

/// Absolute floor used when normalizing residuals.
pub const RESIDUAL_FLOOR: f64 = 1e-12;
/// Relative threshold for dropping a dependent basis column.
pub const DEPENDENCY_TOL: f64 = 1e-10;
/// Condition estimate beyond which a solve is reported ill-conditioned.
pub const CONDITION_LIMIT: f64 = 1e10;
/// Default feasibility tolerance on the relative residual.
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpanError {
    #[error("observer order must be at least 1")]
    OrderZero,
    #[error("need at least {need} samples for order {v} with {p} outputs, got {got}")]
    TooFewSamples {
        need: usize,
        got: usize,
        v: usize,
        p: usize,
    },
    #[error("design matrix is ill-conditioned (condition estimate {condition:.3e}); the span question is numerically undecidable here")]
    IllConditioned { condition: f64 },
    #[error("complex root {re}{im:+}i has no conjugate partner")]
    UnpairedRoot { re: f64, im: f64 },
    #[error("evaluation failed at sample {index}: {source}")]
    SampleEval { index: usize, source: LieError },
    #[error(transparent)]
    Lie(#[from] LieError),
}

/// Deterministic sample set drawn from a box.
#[derive(Debug, Clone)]
pub struct SampleSet {
    seed: u64,
    points: Vec<Vec<f64>>,
}

impl SampleSet {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }
}

/// Draws `count` points uniformly and independently per coordinate.
///
/// The stream cipher generator makes the set reproducible across
/// platforms for a fixed `(box, count, seed)`.
pub fn sample(sample_box: &SampleBox, count: usize, seed: u64) -> SampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = sample_box.dim();
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let mut x = Vec::with_capacity(dim);
        for d in 0..dim {
            let u: f64 = rng.random();
            let (lo, hi) = (sample_box.lower()[d], sample_box.upper()[d]);
            x.push(lo + u * (hi - lo));
        }
        points.push(x);
    }
    SampleSet { seed, points }
}

/// Coefficients of the error characteristic polynomial
/// `λ^v + α_1 λ^{v-1} + … + α_v`, with its roots and stability verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct CharPoly {
    alpha: Vec<f64>,
    roots: Vec<Complex<f64>>,
    hurwitz: bool,
}

impl CharPoly {
    /// Order `v` of the polynomial.
    pub fn order(&self) -> usize {
        self.alpha.len()
    }

    /// Coefficients `α_1..α_v`.
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn roots(&self) -> &[Complex<f64>] {
        &self.roots
    }

    pub fn is_hurwitz(&self) -> bool {
        self.hurwitz
    }

    /// The companion matrix with sub-diagonal ones and last column `-α`
    /// (reversed), whose eigenvalues are the polynomial roots.
    pub fn companion(&self) -> DMatrix<f64> {
        let v = self.order();
        let mut a = DMatrix::zeros(v, v);
        for i in 1..v {
            a[(i, i - 1)] = 1.0;
        }
        for i in 0..v {
            a[(i, v - 1)] = -self.alpha[v - 1 - i];
        }
        a
    }

    /// Builds the polynomial from coefficients, recovering the roots as
    /// companion-matrix eigenvalues.
    pub fn from_coeffs(alpha: Vec<f64>) -> Result<CharPoly, SpanError> {
        if alpha.is_empty() {
            return Err(SpanError::OrderZero);
        }
        let stub = CharPoly {
            alpha,
            roots: vec![],
            hurwitz: false,
        };
        let mut roots: Vec<Complex<f64>> =
            stub.companion().complex_eigenvalues().iter().copied().collect();
        roots.sort_by(|a, b| {
            a.re.partial_cmp(&b.re)
                .unwrap()
                .then(a.im.partial_cmp(&b.im).unwrap())
        });
        let hurwitz = roots.iter().all(|r| r.re < 0.0);
        Ok(CharPoly {
            alpha: stub.alpha,
            roots,
            hurwitz,
        })
    }
}

/// Expands `∏ (λ - r_i)` into real coefficients. Complex roots must come
/// in exact conjugate pairs; pairs are multiplied as real quadratics so no
/// imaginary residue can leak into the coefficients.
pub fn char_from_roots(roots: &[Complex<f64>]) -> Result<CharPoly, SpanError> {
    if roots.is_empty() {
        return Err(SpanError::OrderZero);
    }
    let mut remaining: Vec<Complex<f64>> = roots.to_vec();
    // poly holds (1, α_1, ..., α_k), leading coefficient first.
    let mut poly = vec![1.0f64];
    let mul = |poly: &[f64], factor: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; poly.len() + factor.len() - 1];
        for (i, a) in poly.iter().enumerate() {
            for (j, b) in factor.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        out
    };
    while let Some(r) = remaining.pop() {
        if r.im == 0.0 {
            poly = mul(&poly, &[1.0, -r.re]);
        } else {
            let partner = remaining
                .iter()
                .position(|s| s.re == r.re && s.im == -r.im)
                .ok_or(SpanError::UnpairedRoot { re: r.re, im: r.im })?;
            remaining.swap_remove(partner);
            // (λ - r)(λ - r̄) = λ² - 2 Re(r) λ + |r|²
            poly = mul(&poly, &[1.0, -2.0 * r.re, r.re * r.re + r.im * r.im]);
        }
    }
    let mut sorted = roots.to_vec();
    sorted.sort_by(|a, b| {
        a.re.partial_cmp(&b.re)
            .unwrap()
            .then(a.im.partial_cmp(&b.im).unwrap())
    });
    let hurwitz = sorted.iter().all(|r| r.re < 0.0);
    Ok(CharPoly {
        alpha: poly[1..].to_vec(),
        roots: sorted,
        hurwitz,
    })
}

/// The coefficient rows `β_0..β_v` identified by a span solve, with the
/// relative fit residual and the feasibility verdict at the solve
/// tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaSet {
    /// `(v+1) × p`; row `i` is `β_i`.
    rows: DMatrix<f64>,
    residual: f64,
    feasible: bool,
}

impl BetaSet {
    pub fn new(rows: DMatrix<f64>, residual: f64, feasible: bool) -> BetaSet {
        BetaSet {
            rows,
            residual,
            feasible,
        }
    }

    pub fn order(&self) -> usize {
        self.rows.nrows() - 1
    }

    pub fn p(&self) -> usize {
        self.rows.ncols()
    }

    /// Row `β_i` as a slice-backed vector.
    pub fn row(&self, i: usize) -> DVector<f64> {
        self.rows.row(i).transpose()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn is_feasible(&self) -> bool {
        self.feasible
    }
}

/// Design matrix and right-hand side of the sampled span problem.
///
/// Column `i*p + j` of `m` holds `L_F^{v-i} H_j` at the samples (derivative
/// order descending, output index fastest), matching the β ordering; the
/// right-hand side is `Σ_{i=0}^{v} α_i L_F^{v-i} q` with `α_0 = 1`.
#[derive(Debug, Clone)]
pub struct LsqSystem {
    pub m: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// Indices (into the original sample set) of rows that were skipped
    /// under [`EvalPolicy::SkipBadSamples`].
    pub skipped: Vec<usize>,
}

/// What to do when a sample point raises an evaluation domain error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalPolicy {
    /// Fail the whole run, reporting the offending sample.
    #[default]
    Fail,
    /// Drop the sample; the oversampling rule then applies to the
    /// surviving rows.
    SkipBadSamples,
}

fn lie_tables(
    sys: &SystemModel,
    samples: &SampleSet,
    order: usize,
    policy: EvalPolicy,
) -> Result<(Vec<LieTable>, Vec<usize>), SpanError> {
    let results: Vec<(usize, Result<LieTable, LieError>)> = samples
        .points()
        .par_iter()
        .enumerate()
        .map(|(i, x)| (i, lie_table(sys, x, order)))
        .collect();
    let mut tables = Vec::with_capacity(results.len());
    let mut skipped = Vec::new();
    for (index, res) in results {
        match res {
            Ok(t) => tables.push(t),
            Err(source) => match policy {
                EvalPolicy::Fail => return Err(SpanError::SampleEval { index, source }),
                EvalPolicy::SkipBadSamples => skipped.push(index),
            },
        }
    }
    Ok((tables, skipped))
}

/// Assembles the sampled least-squares system for a fixed `α`.
pub fn build_lsq(
    sys: &SystemModel,
    samples: &SampleSet,
    v: usize,
    alpha: &CharPoly,
    policy: EvalPolicy,
) -> Result<LsqSystem, SpanError> {
    if v == 0 {
        return Err(SpanError::OrderZero);
    }
    assert_eq!(alpha.order(), v, "characteristic polynomial order mismatch");
    let p = sys.p();
    let (tables, skipped) = lie_tables(sys, samples, v, policy)?;
    let rows = tables.len();
    let mut m = DMatrix::zeros(rows, (v + 1) * p);
    let mut rhs = DVector::zeros(rows);
    for (s, t) in tables.iter().enumerate() {
        for i in 0..=v {
            for j in 0..p {
                m[(s, i * p + j)] = t.h[v - i][j];
            }
        }
        let mut r = t.q[v];
        for (i, a) in alpha.alpha().iter().enumerate() {
            r += a * t.q[v - 1 - i];
        }
        rhs[s] = r;
    }
    Ok(LsqSystem { m, rhs, skipped })
}

/// Admits columns in the given priority order, dropping any column that is
/// numerically a combination of the columns already admitted; returns the
/// kept indices in ascending order. Projection uses twice-iterated
/// Gram-Schmidt for stability.
fn reduce_columns(m: &DMatrix<f64>, priority: &[usize]) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    for &col in priority {
        let c = m.column(col).clone_owned();
        let norm = c.norm();
        if norm == 0.0 {
            continue;
        }
        let mut r = c.clone();
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&r);
                r -= q * proj;
            }
        }
        if r.norm() > DEPENDENCY_TOL * norm {
            let rn = r.norm();
            basis.push(r / rn);
            kept.push(col);
        }
    }
    kept.sort_unstable();
    kept
}

/// Priority order for the H-derivative blocks: ascending derivative order
/// (the plain outputs first), output index ascending within a block.
fn h_block_priority(v: usize, p: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity((v + 1) * p);
    for i in (0..=v).rev() {
        for j in 0..p {
            order.push(i * p + j);
        }
    }
    order
}

/// Minimum-norm least squares on the kept columns via SVD; coefficients of
/// dropped columns are zero. The condition estimate is taken over the kept
/// columns only.
fn solve_reduced(
    m: &DMatrix<f64>,
    rhs: &DVector<f64>,
    kept: &[usize],
    total_cols: usize,
) -> Result<DVector<f64>, SpanError> {
    let mk = DMatrix::from_columns(
        &kept
            .iter()
            .map(|&c| m.column(c).clone_owned())
            .collect::<Vec<_>>(),
    );
    let svd = mk.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if condition > CONDITION_LIMIT {
        return Err(SpanError::IllConditioned { condition });
    }
    // Exactly-determined systems (the reduced basis spans the row space)
    // solve directly; LU keeps hand-derivable cases bit-exact where the
    // SVD's iterations would smear the last digit.
    let sol = if mk.is_square() {
        mk.clone()
            .lu()
            .solve(rhs)
            .unwrap_or_else(|| {
                let eps = smax * (mk.nrows() as f64) * f64::EPSILON;
                svd.solve(&rhs.clone(), eps)
                    .expect("svd solve with computed factors")
            })
    } else {
        let eps = smax * (mk.nrows().max(mk.ncols()) as f64) * f64::EPSILON;
        svd.solve(&rhs.clone(), eps)
            .expect("svd solve with computed factors")
    };
    let mut x = DVector::zeros(total_cols);
    for (slot, &c) in kept.iter().enumerate() {
        x[c] = sol[slot];
    }
    Ok(x)
}

/// Basis-reduced minimum-norm least squares in the β column layout;
/// shared with the exact-LTI path so both report the same canonical
/// coefficients.
pub(crate) fn reduced_least_squares(
    m: &DMatrix<f64>,
    rhs: &DVector<f64>,
    v: usize,
    p: usize,
) -> Result<DVector<f64>, SpanError> {
    let kept = reduce_columns(m, &h_block_priority(v, p));
    let sol = solve_reduced(m, rhs, &kept, (v + 1) * p)?;
    Ok(sol)
}

fn relative_residual(m: &DMatrix<f64>, x: &DVector<f64>, rhs: &DVector<f64>) -> f64 {
    (m * x - rhs).norm() / rhs.norm().max(RESIDUAL_FLOOR)
}

fn check_oversampling(got: usize, unknowns: usize, v: usize, p: usize) -> Result<(), SpanError> {
    let need = 3 * unknowns;
    if got < need {
        return Err(SpanError::TooFewSamples { need, got, v, p });
    }
    Ok(())
}

/// Solves for `β` at a fixed characteristic polynomial.
pub fn solve_beta(
    sys: &SystemModel,
    samples: &SampleSet,
    v: usize,
    alpha: &CharPoly,
    tol: f64,
    policy: EvalPolicy,
) -> Result<BetaSet, SpanError> {
    let p = sys.p();
    let lsq = build_lsq(sys, samples, v, alpha, policy)?;
    check_oversampling(lsq.m.nrows(), (v + 1) * p, v, p)?;
    let priority = h_block_priority(v, p);
    let kept = reduce_columns(&lsq.m, &priority);
    let sol = solve_reduced(&lsq.m, &lsq.rhs, &kept, (v + 1) * p)?;
    let residual = relative_residual(&lsq.m, &sol, &lsq.rhs);
    let rows = DMatrix::from_fn(v + 1, p, |i, j| sol[i * p + j]);
    Ok(BetaSet::new(rows, residual, residual <= tol))
}

/// Solves jointly for `(α, β)`: the characteristic coefficients enter the
/// defining identity linearly, so both sets of unknowns come from one
/// least-squares fit. Feasible only if the fit is tight *and* the
/// recovered polynomial is Hurwitz.
pub fn solve_joint(
    sys: &SystemModel,
    samples: &SampleSet,
    v: usize,
    tol: f64,
    policy: EvalPolicy,
) -> Result<(CharPoly, BetaSet), SpanError> {
    if v == 0 {
        return Err(SpanError::OrderZero);
    }
    let p = sys.p();
    let (tables, _skipped) = lie_tables(sys, samples, v, policy)?;
    let rows = tables.len();
    check_oversampling(rows, v + (v + 1) * p, v, p)?;
    let h_cols = (v + 1) * p;
    let mut m = DMatrix::zeros(rows, h_cols + v);
    let mut rhs = DVector::zeros(rows);
    for (s, t) in tables.iter().enumerate() {
        for i in 0..=v {
            for j in 0..p {
                m[(s, i * p + j)] = t.h[v - i][j];
            }
        }
        // α_t column: the identity moves α_t L_F^{v-t} q to the left side.
        for tcol in 1..=v {
            m[(s, h_cols + tcol - 1)] = -t.q[v - tcol];
        }
        rhs[s] = t.q[v];
    }
    // Reduce dependencies inside the H block only; the α columns always
    // stay.
    let mut kept_all = reduce_columns(&m, &h_block_priority(v, p));
    kept_all.extend(h_cols..h_cols + v);
    let sol = solve_reduced(&m, &rhs, &kept_all, h_cols + v)?;
    let residual = relative_residual(&m, &sol, &rhs);
    let alpha: Vec<f64> = (0..v).map(|t| sol[h_cols + t]).collect();
    let poly = CharPoly::from_coeffs(alpha)?;
    let beta_rows = DMatrix::from_fn(v + 1, p, |i, j| sol[i * p + j]);
    let feasible = residual <= tol && poly.is_hurwitz();
    Ok((poly, BetaSet::new(beta_rows, residual, feasible)))
}

/// Re-evaluates the relative residual of a given `β` on (typically fresh)
/// samples.
pub fn recheck_residual(
    sys: &SystemModel,
    samples: &SampleSet,
    v: usize,
    alpha: &CharPoly,
    beta: &BetaSet,
    policy: EvalPolicy,
) -> Result<f64, SpanError> {
    let lsq = build_lsq(sys, samples, v, alpha, policy)?;
    let p = sys.p();
    let x = DVector::from_fn((v + 1) * p, |c, _| beta.rows()[(c / p, c % p)]);
    Ok(relative_residual(&lsq.m, &x, &lsq.rhs))
}
