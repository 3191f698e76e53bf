//! Co-simulation of plant and observer with a co-integrated linear error
//! reference.
//!
//! A fixed-step fourth-order Runge–Kutta scheme integrates the coupled
//! system `(x, ξ̂, e)` where `ė = A e` starts from the actual
//! initialization error. Integrating the reference with the same scheme
//! makes the linearity check insensitive to integrator error on the
//! reference side: any deviation between the observed error and the
//! reference is either plant–observer coupling defect or rounding.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use thiserror::Error;

use crate::expr::EvalError;
use crate::gfol::{transform_general, GeneralObserver, GfolError};
use crate::jet::SystemModel;
use crate::synth::{transform_eval, ObserverLti, SynthError};
use crate::span::CharPoly;

/// Default tolerance for the error-linearity deviation, relative to the
/// initial error. Sized for RK4 at steps below a hundredth of the
/// dominant time constant.
pub const DEFAULT_DECAY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("evaluation failed at t = {t}: {source}")]
    EvalAt { t: f64, source: EvalError },
    #[error("output inversion failed at t = {t}: {source}")]
    InvertAt { t: f64, source: Box<GfolError> },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Gfol(#[from] GfolError),
    #[error("trajectory too short: need at least {need} recorded points, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("CSV export failed: {0}")]
    Io(String),
}

/// Either observer kind drives the same simulation loop.
#[derive(Debug, Clone, Copy)]
pub enum SimObserver<'a> {
    Lti(&'a ObserverLti),
    General(&'a GeneralObserver),
}

impl SimObserver<'_> {
    pub fn order(&self) -> usize {
        match self {
            SimObserver::Lti(o) => o.order(),
            SimObserver::General(o) => o.order(),
        }
    }

    pub fn p(&self) -> usize {
        match self {
            SimObserver::Lti(o) => o.p(),
            SimObserver::General(o) => o.p(),
        }
    }

    fn a_times(&self, e: &DVector<f64>) -> DVector<f64> {
        match self {
            SimObserver::Lti(o) => o.a() * e,
            SimObserver::General(o) => o.a() * e,
        }
    }

    fn c_times(&self, e: &DVector<f64>) -> f64 {
        match self {
            SimObserver::Lti(o) => (o.c() * e)[0],
            SimObserver::General(o) => (o.c() * e)[0],
        }
    }

    fn xi_dot(&self, xi: &DVector<f64>, y: &[f64]) -> Result<DVector<f64>, EvalError> {
        match self {
            SimObserver::Lti(o) => Ok(o.xi_dot(xi, y)),
            SimObserver::General(o) => o.xi_dot(xi, y),
        }
    }

    fn transform(&self, sys: &SystemModel, x: &[f64]) -> Result<DVector<f64>, SimError> {
        match self {
            SimObserver::Lti(o) => {
                let alpha = CharPoly::from_coeffs(o.alpha().to_vec())
                    .expect("observer carries a non-empty alpha");
                Ok(transform_eval(sys, &alpha, o.beta(), x)?)
            }
            SimObserver::General(o) => Ok(transform_general(sys, o.spec(), x)?),
        }
    }

    /// The estimate ẑ at a recorded point.
    fn zhat(&self, xi: &DVector<f64>, y: &[f64], t: f64) -> Result<f64, SimError> {
        match self {
            SimObserver::Lti(o) => Ok(o.zhat(xi, y)),
            SimObserver::General(o) => o.zhat(xi, y).map_err(|source| SimError::InvertAt {
                t,
                source: Box::new(source),
            }),
        }
    }

    /// The linearized error coordinate `G(ẑ, y) − G(z, y)`; for the LTI
    /// observer this is `ẑ − z` itself.
    fn linear_gap(
        &self,
        xi: &DVector<f64>,
        zhat: f64,
        z: f64,
        y: &[f64],
    ) -> Result<f64, EvalError> {
        match self {
            SimObserver::Lti(_) => {
                let _ = xi;
                Ok(zhat - z)
            }
            SimObserver::General(o) => {
                // G(ẑ, y) equals Cξ̂ up to inversion tolerance; use the
                // exact left side.
                let g_z = o.spec().g_value(z, y)?;
                Ok(self.c_times(xi) - g_z)
            }
        }
    }
}

/// How the observer state is initialized.
#[derive(Debug, Clone, PartialEq)]
pub enum XiInit {
    Explicit(Vec<f64>),
    /// ξ̂(0) = 𝒯(x(0)): start on the invariant manifold.
    Consistent,
    /// ξ̂(0) = 𝒯(x(0)) + offset: a controlled initialization error.
    ConsistentPlus(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub t_end: f64,
    pub dt: f64,
    pub x0: Vec<f64>,
    pub xi0: XiInit,
    pub stride: usize,
}

impl SimConfig {
    fn validate(&self, sys: &SystemModel, observer: &SimObserver) -> Result<(), SimError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SimError::Config("dt must be positive".into()));
        }
        if !(self.t_end >= self.dt) {
            return Err(SimError::Config("t_end must be at least dt".into()));
        }
        if self.x0.len() != sys.n() {
            return Err(SimError::Config(format!(
                "x0 has {} entries, model has {} states",
                self.x0.len(),
                sys.n()
            )));
        }
        if observer.p() != sys.p() {
            return Err(SimError::Config(format!(
                "observer expects {} outputs, model has {}",
                observer.p(),
                sys.p()
            )));
        }
        if self.stride == 0 {
            return Err(SimError::Config("stride must be at least 1".into()));
        }
        if let XiInit::Explicit(xi) | XiInit::ConsistentPlus(xi) = &self.xi0 {
            if xi.len() != observer.order() {
                return Err(SimError::Config(format!(
                    "xi0 has {} entries, observer order is {}",
                    xi.len(),
                    observer.order()
                )));
            }
        }
        Ok(())
    }
}

/// Recorded co-simulation time series. All series share the recording
/// grid; `e_out = ẑ − z`, `e_state = ξ̂ − 𝒯(x)`, `e_ref = C e` from the
/// co-integrated reference, and `e_lin` is the linearized error gap the
/// reference predicts.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub z: Vec<f64>,
    pub xi: Vec<Vec<f64>>,
    pub zhat: Vec<f64>,
    pub e_out: Vec<f64>,
    pub e_state: Vec<Vec<f64>>,
    pub e_ref: Vec<f64>,
    pub e_lin: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn rk4_step<F>(state: &DVector<f64>, dt: f64, mut f: F) -> Result<DVector<f64>, SimError>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>, SimError>,
{
    let k1 = f(state)?;
    let k2 = f(&(state + &k1 * (dt / 2.0)))?;
    let k3 = f(&(state + &k2 * (dt / 2.0)))?;
    let k4 = f(&(state + &k3 * dt))?;
    Ok(state + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// Runs the coupled plant–observer–reference integration.
pub fn simulate(
    sys: &SystemModel,
    observer: SimObserver,
    config: &SimConfig,
) -> Result<Trajectory, SimError> {
    config.validate(sys, &observer)?;
    let n = sys.n();
    let v = observer.order();
    let t_x0 = observer.transform(sys, &config.x0)?;
    let xi0 = match &config.xi0 {
        XiInit::Explicit(xi) => DVector::from_column_slice(xi),
        XiInit::Consistent => t_x0.clone(),
        XiInit::ConsistentPlus(offset) => &t_x0 + DVector::from_column_slice(offset),
    };
    let e0 = &xi0 - &t_x0;

    let steps = (config.t_end / config.dt).round() as usize;
    let steps = steps.max(1);
    let mut state = DVector::zeros(n + 2 * v);
    state.rows_mut(0, n).copy_from_slice(&config.x0);
    state.rows_mut(n, v).copy_from(&xi0);
    state.rows_mut(n + v, v).copy_from(&e0);

    let mut traj = Trajectory {
        times: vec![],
        x: vec![],
        y: vec![],
        z: vec![],
        xi: vec![],
        zhat: vec![],
        e_out: vec![],
        e_state: vec![],
        e_ref: vec![],
        e_lin: vec![],
    };

    for step in 0..=steps {
        let t = step as f64 * config.dt;
        if step % config.stride == 0 {
            let x: Vec<f64> = state.rows(0, n).iter().copied().collect();
            let xi = state.rows(n, v).clone_owned();
            let e = state.rows(n + v, v).clone_owned();
            let y = sys
                .output_at(&x)
                .map_err(|source| SimError::EvalAt { t, source })?;
            let z = sys
                .eval_at(sys.functional(), &x)
                .map_err(|source| SimError::EvalAt { t, source })?;
            let zhat = observer.zhat(&xi, &y, t)?;
            let t_x = observer.transform(sys, &x)?;
            let e_lin = observer
                .linear_gap(&xi, zhat, z, &y)
                .map_err(|source| SimError::EvalAt { t, source })?;
            traj.times.push(t);
            traj.x.push(x);
            traj.y.push(y);
            traj.z.push(z);
            traj.xi.push(xi.iter().copied().collect());
            traj.zhat.push(zhat);
            traj.e_out.push(zhat - z);
            traj.e_state
                .push((&xi - &t_x).iter().copied().collect());
            traj.e_ref.push(observer.c_times(&e));
            traj.e_lin.push(e_lin);
        }
        if step == steps {
            break;
        }
        let t_next_eval = t;
        state = rk4_step(&state, config.dt, |s| {
            let x: Vec<f64> = s.rows(0, n).iter().copied().collect();
            let xi = s.rows(n, v).clone_owned();
            let e = s.rows(n + v, v).clone_owned();
            let fx = sys
                .f_at(&x)
                .map_err(|source| SimError::EvalAt { t: t_next_eval, source })?;
            let y = sys
                .output_at(&x)
                .map_err(|source| SimError::EvalAt { t: t_next_eval, source })?;
            let xid = observer
                .xi_dot(&xi, &y)
                .map_err(|source| SimError::EvalAt { t: t_next_eval, source })?;
            let ed = observer.a_times(&e);
            let mut out = DVector::zeros(n + 2 * v);
            out.rows_mut(0, n).copy_from_slice(&fx);
            out.rows_mut(n, v).copy_from(&xid);
            out.rows_mut(n + v, v).copy_from(&ed);
            Ok(out)
        })?;
    }
    Ok(traj)
}

/// Verdict of the error-linearity check: the observed linearized error
/// against the co-integrated reference, normalized by the initial error.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub e0: f64,
    pub max_abs_deviation: f64,
    pub rel_deviation: f64,
    pub tol: f64,
    pub pass: bool,
}

pub fn error_decay_check(traj: &Trajectory, tol: f64) -> Result<DecayReport, SimError> {
    if traj.len() < 10 {
        return Err(SimError::TooShort {
            need: 10,
            got: traj.len(),
        });
    }
    let e0 = traj.e_ref[0];
    let max_abs_deviation = traj
        .e_lin
        .iter()
        .zip(&traj.e_ref)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let (rel_deviation, pass) = if e0.abs() > 0.0 {
        let rel = max_abs_deviation / e0.abs();
        (rel, rel <= tol)
    } else {
        // Zero initial error: both sides sit at rounding level and the
        // check is vacuous on the absolute deviation.
        (0.0, max_abs_deviation <= tol)
    };
    Ok(DecayReport {
        e0,
        max_abs_deviation,
        rel_deviation,
        tol,
        pass,
    })
}

/// Writes `t,x1..xn,y1..yp,z,zhat,err,err_ref` with shortest
/// round-trippable float formatting.
pub fn export_csv(traj: &Trajectory, path: &Path) -> Result<(), SimError> {
    let mut out = String::new();
    let n = traj.x.first().map_or(0, Vec::len);
    let p = traj.y.first().map_or(0, Vec::len);
    out.push('t');
    for i in 1..=n {
        let _ = write!(out, ",x{i}");
    }
    for j in 1..=p {
        let _ = write!(out, ",y{j}");
    }
    out.push_str(",z,zhat,err,err_ref\n");
    for k in 0..traj.len() {
        let _ = write!(out, "{:?}", traj.times[k]);
        for v in &traj.x[k] {
            let _ = write!(out, ",{v:?}");
        }
        for v in &traj.y[k] {
            let _ = write!(out, ",{v:?}");
        }
        let _ = writeln!(
            out,
            ",{:?},{:?},{:?},{:?}",
            traj.z[k], traj.zhat[k], traj.e_out[k], traj.e_ref[k]
        );
    }
    std::fs::write(path, out).map_err(|e| SimError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::jet::SampleBox;
    use crate::span::{char_from_roots, sample, solve_beta, EvalPolicy};
    use crate::synth::synthesize;
    use nalgebra::Complex;

    /// x1' = -x1, x2' = -3 x2 + x1^2, H = x2, q = x1^2 + x2: feasible for
    /// α_1 = 1 with β_0 = 0, β_1 = -2, and the transform x1^2 + x2 is
    /// genuinely nonlinear, so the discrete coupling defect shows the
    /// integrator's order.
    fn quadratic_model() -> SystemModel {
        SystemModel::new(
            vec!["x1".into(), "x2".into()],
            vec![],
            vec![parse("-x1").unwrap(), parse("-3*x2 + x1^2").unwrap()],
            vec![parse("x2").unwrap()],
            parse("x1^2 + x2").unwrap(),
            SampleBox::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap(),
        )
        .unwrap()
    }

    fn quadratic_observer(sys: &SystemModel) -> ObserverLti {
        let alpha = char_from_roots(&[Complex::new(-1.0, 0.0)]).unwrap();
        let samples = sample(sys.sample_box(), 60, 5);
        let beta = solve_beta(sys, &samples, 1, &alpha, 1e-8, EvalPolicy::Fail).unwrap();
        synthesize(&alpha, &beta, false).unwrap()
    }

    fn run(sys: &SystemModel, obs: &ObserverLti, dt: f64, t_end: f64, offset: f64) -> Trajectory {
        let config = SimConfig {
            t_end,
            dt,
            x0: vec![2.0, 1.0],
            xi0: XiInit::ConsistentPlus(vec![offset]),
            stride: 1,
        };
        simulate(sys, SimObserver::Lti(obs), &config).unwrap()
    }

    #[test]
    fn consistent_initialization_stays_on_manifold() {
        let sys = quadratic_model();
        let obs = quadratic_observer(&sys);
        let config = SimConfig {
            t_end: 6.0,
            dt: 0.01,
            x0: vec![2.0, 1.0],
            xi0: XiInit::Consistent,
            stride: 1,
        };
        let traj = simulate(&sys, SimObserver::Lti(&obs), &config).unwrap();
        for k in 0..traj.len() {
            let t_norm: f64 = traj.e_state[k].iter().map(|v| v * v).sum::<f64>().sqrt();
            let xi_t: f64 = traj.xi[k]
                .iter()
                .zip(&traj.e_state[k])
                .map(|(xi, e)| xi - e)
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            assert!(t_norm <= 1e-8 * (1.0 + xi_t), "drift at {}", traj.times[k]);
        }
        let report = error_decay_check(&traj, DEFAULT_DECAY_TOL).unwrap();
        assert!(report.pass);
        assert_eq!(report.e0, 0.0);
    }

    #[test]
    fn deviation_shrinks_sixteenfold_per_halving() {
        let sys = quadratic_model();
        let obs = quadratic_observer(&sys);
        let mut devs = Vec::new();
        for dt in [0.2, 0.1, 0.05] {
            let traj = run(&sys, &obs, dt, 6.0, 0.5);
            let report = error_decay_check(&traj, 1.0).unwrap();
            devs.push(report.max_abs_deviation);
        }
        for w in devs.windows(2) {
            let ratio = w[0] / w[1];
            assert!(
                (11.2..=20.8).contains(&ratio),
                "order-four ratio out of range: {ratio} ({devs:?})"
            );
        }
    }

    #[test]
    fn error_is_plant_independent() {
        let sys = quadratic_model();
        let obs = quadratic_observer(&sys);
        let mk = |x0: Vec<f64>| SimConfig {
            t_end: 6.0,
            dt: 0.01,
            x0,
            xi0: XiInit::ConsistentPlus(vec![0.5]),
            stride: 1,
        };
        let a = simulate(&sys, SimObserver::Lti(&obs), &mk(vec![2.0, 1.0])).unwrap();
        let b = simulate(&sys, SimObserver::Lti(&obs), &mk(vec![-1.0, 0.3])).unwrap();
        for k in 0..a.len() {
            assert!((a.e_out[k] - b.e_out[k]).abs() <= 1e-6 * 0.5);
        }
    }

    #[test]
    fn csv_format() {
        let sys = quadratic_model();
        let obs = quadratic_observer(&sys);
        let traj = run(&sys, &obs, 0.01, 0.1, 1.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        export_csv(&traj, &path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        let mut lines = body.lines();
        assert_eq!(lines.next().unwrap(), "t,x1,x2,y1,z,zhat,err,err_ref");
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[0], "0.0");
        // err at t = 0 is the initialization error through C.
        assert_eq!(first[6], "1.0");
        let second: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(second[0], "0.01");
        // Full round-trip precision.
        let z: f64 = first[4].parse().unwrap();
        assert_eq!(z, traj.z[0]);
    }

    #[test]
    fn short_trajectory_is_rejected_by_decay_check() {
        let sys = quadratic_model();
        let obs = quadratic_observer(&sys);
        let traj = run(&sys, &obs, 0.01, 0.05, 1.0);
        assert!(matches!(
            error_decay_check(&traj, 1e-6),
            Err(SimError::TooShort { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let sys = quadratic_model();
        let obs = quadratic_observer(&sys);
        let bad = SimConfig {
            t_end: 1.0,
            dt: 0.0,
            x0: vec![0.0, 0.0],
            xi0: XiInit::Consistent,
            stride: 1,
        };
        assert!(matches!(
            simulate(&sys, SimObserver::Lti(&obs), &bad),
            Err(SimError::Config(_))
        ));
        let bad_x0 = SimConfig {
            t_end: 1.0,
            dt: 0.01,
            x0: vec![0.0],
            xi0: XiInit::Consistent,
            stride: 1,
        };
        assert!(matches!(
            simulate(&sys, SimObserver::Lti(&obs), &bad_x0),
            Err(SimError::Config(_))
        ));
    }

    #[test]
    fn eval_failure_mid_run_reports_time() {
        // x grows linearly and the output sqrt(4 - x^2) leaves its domain
        // near t = 2.
        let sys = SystemModel::new(
            vec!["x1".into()],
            vec![],
            vec![parse("1").unwrap()],
            vec![parse("sqrt(4 - x1^2)").unwrap()],
            parse("x1").unwrap(),
            SampleBox::new(vec![-1.0], vec![1.0]).unwrap(),
        )
        .unwrap();
        let beta = nalgebra::DMatrix::zeros(2, 1);
        let obs = ObserverLti::from_parts(&[1.0], &beta).unwrap();
        let config = SimConfig {
            t_end: 5.0,
            dt: 0.01,
            x0: vec![0.0],
            xi0: XiInit::Consistent,
            stride: 1,
        };
        match simulate(&sys, SimObserver::Lti(&obs), &config) {
            Err(SimError::EvalAt { t, .. }) => assert!((1.9..2.1).contains(&t), "t = {t}"),
            other => panic!("expected a mid-run evaluation failure, got {other:?}"),
        }
    }
}
