//! File formats and the command front end.
//!
//! Structured inputs and outputs are JSON; trajectories are CSV. Reports
//! print deterministically: identical invocations (including the seed)
//! produce byte-identical output.
//!
//! Exit code contract: `0` feasible/pass, `1` input error, `2`
//! infeasible/verification failure, `3` ill-conditioned (numerically
//! undecidable), `4` evaluation failure mid-simulation.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Complex, DMatrix, RowDVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::parse;
use crate::gfol::{self, GeneralObserver, GeneralSpec, GfolError};
use crate::jet::{SampleBox, SystemModel};
use crate::lti::{self, LtiError, LtiSystem};
use crate::sim::{self, SimConfig, SimError, SimObserver, XiInit};
use crate::span::{self, CharPoly, EvalPolicy, SpanError};
use crate::synth::{self, ObserverLti};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_ILL_CONDITIONED: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    fn input(msg: impl Into<String>) -> CliError {
        CliError::Input(msg.into())
    }
}

// ---------------------------------------------------------------------
// File schemas
// ---------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct BoxDe {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// A system file: the nonlinear form carries expression strings, the
/// linear form row-major matrices.
#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum SystemFileDe {
    Nonlinear {
        states: Vec<String>,
        #[serde(default)]
        params: BTreeMap<String, f64>,
        dynamics: Vec<String>,
        outputs: Vec<String>,
        functional: String,
        #[serde(rename = "box")]
        sample_box: BoxDe,
        #[serde(default)]
        steady_state: Option<Vec<f64>>,
    },
    Linear {
        f: Vec<Vec<f64>>,
        h: Vec<Vec<f64>>,
        q: Vec<f64>,
        #[serde(rename = "box", default)]
        sample_box: Option<BoxDe>,
    },
}

/// A loaded system: always usable as a [`SystemModel`]; linear files also
/// expose the matrix form, and nonlinear files may carry the operating
/// point their deviation coordinates were shifted by.
pub struct LoadedSystem {
    pub model: SystemModel,
    pub lti: Option<LtiSystem>,
    pub steady_state: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ObserverFileDe {
    Lti {
        order: usize,
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        d: Vec<Vec<f64>>,
        alpha: Vec<f64>,
        beta: Vec<Vec<f64>>,
    },
    General {
        alpha: Vec<f64>,
        z0: String,
        z: Vec<String>,
        #[serde(default)]
        inverse: Option<String>,
        bracket: (f64, f64),
    },
}

pub enum LoadedObserver {
    Lti(ObserverLti),
    General(GeneralObserver),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum XiInitDe {
    Keyword(String),
    Explicit(Vec<f64>),
    Offset { offset: Vec<f64> },
}

/// Scenario file for `simulate`; command-line flags override fields.
/// `x0` (and explicit `xi0`) use the file's raw coordinates: the loader
/// applies the deviation shift when the system carries a steady state.
#[derive(Debug, Deserialize)]
struct ScenarioDe {
    x0: Vec<f64>,
    xi0: XiInitDe,
    t_end: f64,
    dt: f64,
    #[serde(default)]
    stride: Option<usize>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn parse_expr(slot: &str, text: &str) -> Result<crate::expr::Expr, CliError> {
    parse(text).map_err(|e| CliError::input(format!("{slot}: {e}")))
}

/// Loads a system file; nonlinear systems with a `steady_state` entry are
/// rewritten into deviation coordinates around it.
pub fn load_system(path: &Path) -> Result<LoadedSystem, CliError> {
    let de: SystemFileDe = read_json(path)?;
    match de {
        SystemFileDe::Nonlinear {
            states,
            params,
            dynamics,
            outputs,
            functional,
            sample_box,
            steady_state,
        } => {
            let dynamics = dynamics
                .iter()
                .enumerate()
                .map(|(i, s)| parse_expr(&format!("dynamics[{i}]"), s))
                .collect::<Result<Vec<_>, _>>()?;
            let outputs = outputs
                .iter()
                .enumerate()
                .map(|(i, s)| parse_expr(&format!("outputs[{i}]"), s))
                .collect::<Result<Vec<_>, _>>()?;
            let functional = parse_expr("functional", &functional)?;
            let sample_box = SampleBox::new(sample_box.lower, sample_box.upper)
                .map_err(|e| CliError::input(e.to_string()))?;
            let model = SystemModel::new(
                states,
                params.into_iter().collect(),
                dynamics,
                outputs,
                functional,
                sample_box,
            )
            .map_err(|e| CliError::input(e.to_string()))?;
            let model = match &steady_state {
                Some(xs) => model
                    .shift_to_deviation(xs)
                    .map_err(|e| CliError::input(e.to_string()))?,
                None => model,
            };
            Ok(LoadedSystem {
                model,
                lti: None,
                steady_state,
            })
        }
        SystemFileDe::Linear {
            f,
            h,
            q,
            sample_box,
        } => {
            let n = f.len();
            if n == 0 || f.iter().any(|row| row.len() != n) {
                return Err(CliError::input("F must be a non-empty square matrix"));
            }
            let fm = DMatrix::from_fn(n, n, |i, j| f[i][j]);
            let p = h.len();
            if p == 0 || h.iter().any(|row| row.len() != n) {
                return Err(CliError::input("H rows must have one entry per state"));
            }
            let hm = DMatrix::from_fn(p, n, |i, j| h[i][j]);
            if q.len() != n {
                return Err(CliError::input("q must have one entry per state"));
            }
            let qm = RowDVector::from_row_slice(&q);
            let lti = LtiSystem::new(fm, hm, qm).map_err(|e| CliError::input(e.to_string()))?;
            let sample_box = match sample_box {
                Some(b) => {
                    SampleBox::new(b.lower, b.upper).map_err(|e| CliError::input(e.to_string()))?
                }
                None => SampleBox::new(vec![-1.0; n], vec![1.0; n]).expect("unit box"),
            };
            let model = lti
                .to_system_model(sample_box)
                .map_err(|e| CliError::input(e.to_string()))?;
            Ok(LoadedSystem {
                model,
                lti: Some(lti),
                steady_state: None,
            })
        }
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Serializes an observer to its JSON document.
pub fn save_observer(obs: &ObserverLti, path: &Path) -> Result<(), CliError> {
    let de = ObserverFileDe::Lti {
        order: obs.order(),
        a: matrix_rows(obs.a()),
        b: matrix_rows(obs.b()),
        c: vec![obs.c().iter().copied().collect()],
        d: vec![obs.d().iter().copied().collect()],
        alpha: obs.alpha().to_vec(),
        beta: matrix_rows(obs.beta()),
    };
    let text = serde_json::to_string_pretty(&de).expect("observer serialization");
    std::fs::write(path, text + "\n").map_err(|e| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Loads an observer file. LTI observers are rebuilt from `(α, β)` and the
/// stored matrices are cross-checked against the rebuild, so a hand-edited
/// file cannot smuggle in an inconsistent realization. General observers
/// revalidate against the system (names, bracket, monotonicity).
pub fn load_observer(path: &Path, sys: &SystemModel) -> Result<LoadedObserver, CliError> {
    let de: ObserverFileDe = read_json(path)?;
    match de {
        ObserverFileDe::Lti {
            order,
            a,
            b,
            c,
            d,
            alpha,
            beta,
        } => {
            if alpha.len() != order {
                return Err(CliError::input("alpha length must equal order"));
            }
            let p = sys.p();
            if beta.len() != order + 1 || beta.iter().any(|row| row.len() != p) {
                return Err(CliError::input(format!(
                    "beta must be {} rows of {} entries",
                    order + 1,
                    p
                )));
            }
            let beta_m = DMatrix::from_fn(order + 1, p, |i, j| beta[i][j]);
            let obs = ObserverLti::from_parts(&alpha, &beta_m)
                .map_err(|e| CliError::input(e.to_string()))?;
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0);
            let check = |name: &str, stored: &[Vec<f64>], built: &DMatrix<f64>| {
                if stored.len() != built.nrows()
                    || stored
                        .iter()
                        .enumerate()
                        .any(|(i, row)| {
                            row.len() != built.ncols()
                                || row.iter().enumerate().any(|(j, v)| !close(*v, built[(i, j)]))
                        })
                {
                    return Err(CliError::input(format!(
                        "{name} does not match the companion realization of (alpha, beta)"
                    )));
                }
                Ok(())
            };
            check("A", &a, obs.a())?;
            check("B", &b, obs.b())?;
            check("C", &c, &DMatrix::from_fn(1, order, |_, j| obs.c()[j]))?;
            check("D", &d, &DMatrix::from_fn(1, p, |_, j| obs.d()[j]))?;
            Ok(LoadedObserver::Lti(obs))
        }
        ObserverFileDe::General {
            alpha,
            z0,
            z,
            inverse,
            bracket,
        } => {
            let spec = load_general_parts(sys, alpha, &z0, &z, inverse.as_deref(), bracket)?;
            Ok(LoadedObserver::General(gfol::synthesize_general(&spec)))
        }
    }
}

fn load_general_parts(
    sys: &SystemModel,
    alpha: Vec<f64>,
    z0: &str,
    z: &[String],
    inverse: Option<&str>,
    bracket: (f64, f64),
) -> Result<GeneralSpec, CliError> {
    let alpha = CharPoly::from_coeffs(alpha).map_err(|e| CliError::input(e.to_string()))?;
    let z0 = parse_expr("Z0", z0)?;
    let z = z
        .iter()
        .enumerate()
        .map(|(i, s)| parse_expr(&format!("Z{}", i + 1), s))
        .collect::<Result<Vec<_>, _>>()?;
    let inverse = inverse.map(|s| parse_expr("inverse", s)).transpose()?;
    GeneralSpec::new(sys, alpha, z0, z, inverse, bracket)
        .map_err(|e| CliError::input(e.to_string()))
}

/// Loads a general-observer spec file (same schema as the `general`
/// observer kind).
pub fn load_general_spec(path: &Path, sys: &SystemModel) -> Result<GeneralSpec, CliError> {
    let de: ObserverFileDe = read_json(path)?;
    match de {
        ObserverFileDe::General {
            alpha,
            z0,
            z,
            inverse,
            bracket,
        } => load_general_parts(sys, alpha, &z0, &z, inverse.as_deref(), bracket),
        ObserverFileDe::Lti { .. } => Err(CliError::input(
            "expected a general-observer spec, found kind \"lti\"",
        )),
    }
}

// ---------------------------------------------------------------------
// Flag parsing helpers
// ---------------------------------------------------------------------

/// Parses a comma-separated root list; complex roots are written `a+bi`
/// (conjugate partners must both appear).
pub fn parse_roots(text: &str) -> Result<Vec<Complex<f64>>, CliError> {
    text.split(',')
        .map(|tok| {
            let tok = tok.trim();
            if let Some(body) = tok.strip_suffix('i') {
                // Split into real and imaginary parts at the last +/- that
                // is not an exponent sign and not leading.
                let bytes = body.as_bytes();
                let mut split = None;
                for k in (1..bytes.len()).rev() {
                    let c = bytes[k];
                    if (c == b'+' || c == b'-')
                        && !matches!(bytes[k - 1], b'e' | b'E')
                    {
                        split = Some(k);
                        break;
                    }
                }
                let (re_s, im_s) = match split {
                    Some(k) => (&body[..k], &body[k..]),
                    None => ("0", body),
                };
                let re: f64 = re_s
                    .parse()
                    .map_err(|_| CliError::input(format!("bad root `{tok}`")))?;
                let im_s = match im_s {
                    "" | "+" => "1",
                    "-" => "-1",
                    other => other,
                };
                let im: f64 = im_s
                    .parse()
                    .map_err(|_| CliError::input(format!("bad root `{tok}`")))?;
                Ok(Complex::new(re, im))
            } else {
                let re: f64 = tok
                    .parse()
                    .map_err(|_| CliError::input(format!("bad root `{tok}`")))?;
                Ok(Complex::new(re, 0.0))
            }
        })
        .collect()
}

pub fn parse_float_list(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|tok| {
            tok.trim()
                .parse()
                .map_err(|_| CliError::input(format!("bad number `{tok}`")))
        })
        .collect()
}

// ---------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------

/// How the characteristic polynomial is chosen for `check`/`design`.
pub enum AlphaChoice {
    Roots(Vec<Complex<f64>>),
    Alpha(Vec<f64>),
    Joint,
}

pub struct CheckOptions {
    pub order: usize,
    pub choice: AlphaChoice,
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
    pub skip_bad_samples: bool,
}

impl CheckOptions {
    fn policy(&self) -> EvalPolicy {
        if self.skip_bad_samples {
            EvalPolicy::SkipBadSamples
        } else {
            EvalPolicy::Fail
        }
    }

    fn alpha(&self) -> Result<Option<CharPoly>, CliError> {
        match &self.choice {
            AlphaChoice::Roots(roots) => {
                if roots.len() != self.order {
                    return Err(CliError::input(format!(
                        "--roots must list exactly {} value(s) for --order {}",
                        self.order, self.order
                    )));
                }
                Ok(Some(
                    span::char_from_roots(roots).map_err(|e| CliError::input(e.to_string()))?,
                ))
            }
            AlphaChoice::Alpha(alpha) => {
                if alpha.len() != self.order {
                    return Err(CliError::input(format!(
                        "--alpha must list exactly {} coefficient(s) for --order {}",
                        self.order, self.order
                    )));
                }
                Ok(Some(
                    CharPoly::from_coeffs(alpha.clone())
                        .map_err(|e| CliError::input(e.to_string()))?,
                ))
            }
            AlphaChoice::Joint => Ok(None),
        }
    }
}

fn fmt_roots(poly: &CharPoly) -> String {
    let parts: Vec<String> = poly
        .roots()
        .iter()
        .map(|r| {
            if r.im == 0.0 {
                format!("{:?}", r.re)
            } else {
                format!("{:?}{:+?}i", r.re, r.im)
            }
        })
        .collect();
    format!("[{}]", parts.join(", "))
}

fn fmt_row(values: impl IntoIterator<Item = f64>) -> String {
    let parts: Vec<String> = values.into_iter().map(|v| format!("{v:?}")).collect();
    format!("[{}]", parts.join(", "))
}

fn span_exit(err: &SpanError) -> i32 {
    match err {
        SpanError::IllConditioned { .. } => EXIT_ILL_CONDITIONED,
        _ => EXIT_INPUT,
    }
}

fn solve_span(
    sys: &SystemModel,
    opts: &CheckOptions,
) -> Result<Result<(CharPoly, span::BetaSet), SpanError>, CliError> {
    let samples = span::sample(sys.sample_box(), opts.samples, opts.seed);
    let alpha = opts.alpha()?;
    Ok(match alpha {
        Some(poly) => {
            match span::solve_beta(sys, &samples, opts.order, &poly, opts.tol, opts.policy()) {
                Ok(beta) => Ok((poly, beta)),
                Err(e) => Err(e),
            }
        }
        None => span::solve_joint(sys, &samples, opts.order, opts.tol, opts.policy()),
    })
}

fn print_span_result(poly: &CharPoly, beta: &span::BetaSet, opts: &CheckOptions) {
    println!("order: {}", opts.order);
    println!("alpha: {}", fmt_row(poly.alpha().iter().copied()));
    println!("roots: {}", fmt_roots(poly));
    println!(
        "stability: {}",
        if poly.is_hurwitz() {
            "hurwitz"
        } else {
            "not hurwitz"
        }
    );
    println!("samples: {} (seed {})", opts.samples, opts.seed);
    println!("residual: {:?} (tol {:?})", beta.residual(), opts.tol);
    for i in 0..=beta.order() {
        println!("beta[{i}]: {}", fmt_row(beta.row(i).iter().copied()));
    }
    println!(
        "feasible: {}",
        if beta.is_feasible() { "yes" } else { "no" }
    );
}

/// `folin check`: decide feasibility, print the identified coefficients.
pub fn cmd_check(system_path: &Path, opts: &CheckOptions) -> Result<i32, CliError> {
    let loaded = load_system(system_path)?;
    match solve_span(&loaded.model, opts)? {
        Ok((poly, beta)) => {
            print_span_result(&poly, &beta, opts);
            Ok(if beta.is_feasible() {
                EXIT_OK
            } else {
                EXIT_INFEASIBLE
            })
        }
        Err(e) => {
            println!("{e}");
            Ok(span_exit(&e))
        }
    }
}

pub struct DesignOptions {
    pub check: CheckOptions,
    pub allow_unstable: bool,
    pub use_lti: bool,
}

/// `folin design`: feasibility, synthesis, fresh-sample verification, and
/// the observer file.
pub fn cmd_design(
    system_path: &Path,
    opts: &DesignOptions,
    out: &Path,
) -> Result<i32, CliError> {
    let loaded = load_system(system_path)?;
    let obs = if opts.use_lti {
        let lti_sys = loaded
            .lti
            .as_ref()
            .ok_or_else(|| CliError::input("--lti requires a linear system file"))?;
        let roots = match &opts.check.choice {
            AlphaChoice::Roots(r) => r.clone(),
            _ => {
                return Err(CliError::input(
                    "--lti designs with --roots (the classical order v_o - 1 path)",
                ))
            }
        };
        let (obs, t) = match lti::design_corollary(lti_sys, &roots) {
            Ok(pair) => pair,
            Err(LtiError::CorollaryInconsistency { residual }) => {
                println!("design infeasible: residual {residual:?}");
                return Ok(EXIT_INFEASIBLE);
            }
            Err(e) => return Err(CliError::input(e.to_string())),
        };
        let report = lti::verify_luenberger(lti_sys, &t, &obs, lti::DEFAULT_LTI_TOL);
        println!(
            "observer conditions: state residual {:?}, output residual {:?} -> {}",
            report.state_residual,
            report.output_residual,
            if report.pass { "pass" } else { "FAIL" }
        );
        obs
    } else {
        let (poly, beta) = match solve_span(&loaded.model, &opts.check)? {
            Ok(pair) => pair,
            Err(e) => {
                println!("{e}");
                return Ok(span_exit(&e));
            }
        };
        print_span_result(&poly, &beta, &opts.check);
        if !beta.is_feasible() {
            println!("design aborted: condition not satisfied at tolerance");
            return Ok(EXIT_INFEASIBLE);
        }
        let obs = synth::synthesize(&poly, &beta, opts.allow_unstable)
            .map_err(|e| CliError::input(e.to_string()))?;
        // Verify on fresh samples so the verdict is not an artifact of the
        // fitting set.
        let fresh = span::sample(
            loaded.model.sample_box(),
            opts.check.samples,
            opts.check.seed.wrapping_add(1),
        );
        let verify_tol = 10.0 * opts.check.tol;
        let pde = synth::verify_pde(&loaded.model, &obs, &fresh, verify_tol)
            .map_err(|e| CliError::input(e.to_string()))?;
        println!(
            "invariance identity (fresh seed {}): max relative mismatch {:?} -> {}",
            opts.check.seed.wrapping_add(1),
            pde.max_rel_mismatch,
            if pde.pass { "pass" } else { "FAIL" }
        );
        let out_rep = synth::verify_output(&loaded.model, &obs, &fresh, verify_tol)
            .map_err(|e| CliError::input(e.to_string()))?;
        println!(
            "output identity: max relative mismatch {:?} -> {}",
            out_rep.max_rel_mismatch,
            if out_rep.pass { "pass" } else { "FAIL" }
        );
        if !pde.pass || !out_rep.pass {
            return Ok(EXIT_INFEASIBLE);
        }
        obs
    };
    print_observer(&obs);
    save_observer(&obs, out)?;
    println!("wrote observer to {}", out.display());
    Ok(EXIT_OK)
}

fn print_observer(obs: &ObserverLti) {
    for i in 0..obs.order() {
        println!("A[{i}]: {}", fmt_row(obs.a().row(i).iter().copied()));
    }
    for i in 0..obs.order() {
        println!("B[{i}]: {}", fmt_row(obs.b().row(i).iter().copied()));
    }
    println!("C: {}", fmt_row(obs.c().iter().copied()));
    println!("D: {}", fmt_row(obs.d().iter().copied()));
}

pub struct SimulateOptions {
    pub scenario: Option<ScenarioOverride>,
    pub x0: Option<Vec<f64>>,
    pub xi0: Option<XiInit>,
    pub t_end: Option<f64>,
    pub dt: Option<f64>,
    pub stride: Option<usize>,
    pub decay_tol: f64,
}

pub struct ScenarioOverride {
    x0: Vec<f64>,
    xi0: XiInit,
    t_end: f64,
    dt: f64,
    stride: usize,
}

pub fn load_scenario(path: &Path) -> Result<ScenarioOverride, CliError> {
    let de: ScenarioDe = read_json(path)?;
    let xi0 = match de.xi0 {
        XiInitDe::Keyword(word) if word == "consistent" => XiInit::Consistent,
        XiInitDe::Keyword(word) => {
            return Err(CliError::input(format!(
                "xi0 keyword must be \"consistent\", got `{word}`"
            )))
        }
        XiInitDe::Explicit(values) => XiInit::Explicit(values),
        XiInitDe::Offset { offset } => XiInit::ConsistentPlus(offset),
    };
    Ok(ScenarioOverride {
        x0: de.x0,
        xi0,
        t_end: de.t_end,
        dt: de.dt,
        stride: de.stride.unwrap_or(1),
    })
}

/// `folin simulate`: co-simulate, export CSV, and run the error-linearity
/// check.
pub fn cmd_simulate(
    system_path: &Path,
    observer_path: &Path,
    opts: &SimulateOptions,
    out: &Path,
) -> Result<i32, CliError> {
    let loaded = load_system(system_path)?;
    let observer = load_observer(observer_path, &loaded.model)?;
    let scenario = &opts.scenario;
    let mut x0 = opts
        .x0
        .clone()
        .or_else(|| scenario.as_ref().map(|s| s.x0.clone()))
        .ok_or_else(|| CliError::input("--x0 or a scenario file is required"))?;
    let xi0 = opts
        .xi0
        .clone()
        .or_else(|| scenario.as_ref().map(|s| s.xi0.clone()))
        .ok_or_else(|| CliError::input("--xi0/--consistent/--xi0-offset or a scenario file is required"))?;
    let t_end = opts
        .t_end
        .or_else(|| scenario.as_ref().map(|s| s.t_end))
        .ok_or_else(|| CliError::input("--t-end or a scenario file is required"))?;
    let dt = opts
        .dt
        .or_else(|| scenario.as_ref().map(|s| s.dt))
        .ok_or_else(|| CliError::input("--dt or a scenario file is required"))?;
    let stride = opts
        .stride
        .or_else(|| scenario.as_ref().map(|s| s.stride))
        .unwrap_or(1);
    // Scenario coordinates are raw; the model runs in deviations.
    if let Some(xs) = &loaded.steady_state {
        if x0.len() != xs.len() {
            return Err(CliError::input("x0 length does not match the state count"));
        }
        for (v, s) in x0.iter_mut().zip(xs) {
            *v -= s;
        }
    }
    let config = SimConfig {
        t_end,
        dt,
        x0,
        xi0,
        stride,
    };
    let sim_obs = match &observer {
        LoadedObserver::Lti(o) => SimObserver::Lti(o),
        LoadedObserver::General(o) => SimObserver::General(o),
    };
    let traj = match sim::simulate(&loaded.model, sim_obs, &config) {
        Ok(t) => t,
        Err(e @ (SimError::EvalAt { .. } | SimError::InvertAt { .. })) => {
            println!("{e}");
            return Ok(EXIT_RUNTIME);
        }
        Err(e) => return Err(CliError::input(e.to_string())),
    };
    sim::export_csv(&traj, out).map_err(|e| CliError::input(e.to_string()))?;
    let steps = (t_end / dt).round() as usize;
    println!("steps: {steps} (dt {dt:?}, t_end {t_end:?})");
    println!("recorded: {} points", traj.len());
    println!("wrote trajectory to {}", out.display());
    let report = sim::error_decay_check(&traj, opts.decay_tol)
        .map_err(|e| CliError::input(e.to_string()))?;
    println!("e(0): {:?}", report.e0);
    println!(
        "max |e_out - e_ref|: {:?} (relative {:?}) -> {} (tol {:?})",
        report.max_abs_deviation,
        report.rel_deviation,
        if report.pass { "pass" } else { "FAIL" },
        report.tol
    );
    Ok(if report.pass { EXIT_OK } else { EXIT_INFEASIBLE })
}

pub struct LtiOptions {
    pub order: Option<usize>,
    pub alpha: Option<Vec<f64>>,
    pub roots: Option<Vec<Complex<f64>>>,
    pub out: Option<std::path::PathBuf>,
}

/// `folin lti`: observability analysis, the row-space condition at a given
/// order, and the classical design.
pub fn cmd_lti(system_path: &Path, opts: &LtiOptions) -> Result<i32, CliError> {
    let loaded = load_system(system_path)?;
    let sys = loaded
        .lti
        .as_ref()
        .ok_or_else(|| CliError::input("`lti` requires a linear system file"))?;
    println!("states: {}, outputs: {}", sys.n(), sys.p());
    let vo = match lti::obs_index(sys) {
        Ok(vo) => {
            println!("observability index: {vo}");
            vo
        }
        Err(e) => {
            println!("{e}");
            return Ok(EXIT_INFEASIBLE);
        }
    };
    if let Some(order) = opts.order {
        // Condition check at a prescribed order.
        let poly = match (&opts.alpha, &opts.roots) {
            (Some(a), None) => {
                CharPoly::from_coeffs(a.clone()).map_err(|e| CliError::input(e.to_string()))?
            }
            (None, Some(r)) => {
                span::char_from_roots(r).map_err(|e| CliError::input(e.to_string()))?
            }
            _ => {
                return Err(CliError::input(
                    "--order requires exactly one of --alpha or --roots",
                ))
            }
        };
        if poly.order() != order {
            return Err(CliError::input("polynomial order must match --order"));
        }
        let c = lti::condition_61(sys, order, &poly, lti::DEFAULT_LTI_TOL)
            .map_err(|e| CliError::input(e.to_string()))?;
        println!("alpha: {}", fmt_row(poly.alpha().iter().copied()));
        println!("residual: {:?}", c.residual);
        for i in 0..=order {
            println!("beta[{i}]: {}", fmt_row(c.beta.row(i).iter().copied()));
        }
        println!("feasible: {}", if c.feasible { "yes" } else { "no" });
        return Ok(if c.feasible { EXIT_OK } else { EXIT_INFEASIBLE });
    }
    if let Some(roots) = &opts.roots {
        // Classical design at order v_o - 1.
        let (obs, t) = match lti::design_corollary(sys, roots) {
            Ok(pair) => pair,
            Err(LtiError::CorollaryInconsistency { residual }) => {
                println!("design infeasible: residual {residual:?}");
                return Ok(EXIT_ILL_CONDITIONED);
            }
            Err(e) => return Err(CliError::input(e.to_string())),
        };
        println!("design order: {}", vo - 1);
        print_observer(&obs);
        let report = lti::verify_luenberger(sys, &t, &obs, lti::DEFAULT_LTI_TOL);
        println!(
            "observer conditions: state residual {:?}, output residual {:?} -> {}",
            report.state_residual,
            report.output_residual,
            if report.pass { "pass" } else { "FAIL" }
        );
        if let Some(out) = &opts.out {
            save_observer(&obs, out)?;
            println!("wrote observer to {}", out.display());
        }
        return Ok(if report.pass { EXIT_OK } else { EXIT_INFEASIBLE });
    }
    Ok(EXIT_OK)
}

pub struct VerifyGeneralOptions {
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
}

/// `folin verify-general`: check the generalized identity for
/// user-supplied candidate functions.
pub fn cmd_verify_general(
    system_path: &Path,
    spec_path: &Path,
    opts: &VerifyGeneralOptions,
) -> Result<i32, CliError> {
    let loaded = load_system(system_path)?;
    let spec = load_general_spec(spec_path, &loaded.model)?;
    let samples = span::sample(loaded.model.sample_box(), opts.samples, opts.seed);
    let report = match gfol::verify_71(&loaded.model, &spec, &samples, opts.tol) {
        Ok(r) => r,
        Err(e @ GfolError::SampleEval { .. }) => {
            println!("{e}");
            return Ok(EXIT_RUNTIME);
        }
        Err(e) => return Err(CliError::input(e.to_string())),
    };
    println!("order: {}", spec.order());
    println!("alpha: {}", fmt_row(spec.alpha().alpha().iter().copied()));
    println!("samples: {} (seed {})", opts.samples, opts.seed);
    println!(
        "max relative mismatch: {:?} (tol {:?})",
        report.max_rel_mismatch, report.tol
    );
    println!("verdict: {}", if report.pass { "pass" } else { "FAIL" });
    Ok(if report.pass { EXIT_OK } else { EXIT_INFEASIBLE })
}
