use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use folin::cli::{
    self, AlphaChoice, CheckOptions, DesignOptions, LtiOptions, SimulateOptions,
    VerifyGeneralOptions,
};
use folin::sim::XiInit;

/// Lower-order functional observers with linear error dynamics: check
/// feasibility, design, and co-simulate.
#[derive(Parser)]
#[command(name = "folin", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CheckArgs {
    /// System description file (JSON).
    system: PathBuf,
    /// Observer order v (at least 1).
    #[arg(long)]
    order: usize,
    /// Desired error eigenvalues, comma-separated (`-1,-2` or `-1+2i,-1-2i`).
    #[arg(long, conflicts_with_all = ["alpha", "joint"])]
    roots: Option<String>,
    /// Characteristic coefficients α_1..α_v, comma-separated.
    #[arg(long, conflicts_with = "joint")]
    alpha: Option<String>,
    /// Solve for α and β jointly instead of prescribing the polynomial.
    #[arg(long)]
    joint: bool,
    /// Sample count for the least-squares fit.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// Sampling seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Feasibility tolerance on the relative residual.
    #[arg(long, default_value_t = folin::span::DEFAULT_TOL)]
    tol: f64,
    /// Drop samples that raise evaluation domain errors instead of failing.
    #[arg(long)]
    skip_bad_samples: bool,
}

impl CheckArgs {
    fn to_options(&self) -> Result<CheckOptions, cli::CliError> {
        let choice = if self.joint {
            AlphaChoice::Joint
        } else if let Some(roots) = &self.roots {
            AlphaChoice::Roots(cli::parse_roots(roots)?)
        } else if let Some(alpha) = &self.alpha {
            AlphaChoice::Alpha(cli::parse_float_list(alpha)?)
        } else {
            return Err(cli::CliError::Input(
                "one of --roots, --alpha, or --joint is required".into(),
            ));
        };
        Ok(CheckOptions {
            order: self.order,
            choice,
            samples: self.samples,
            seed: self.seed,
            tol: self.tol,
            skip_bad_samples: self.skip_bad_samples,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Decide whether the prescribed-eigenvalue observer exists.
    Check(CheckArgs),
    /// Check feasibility, then emit the observer file.
    Design {
        #[command(flatten)]
        check: CheckArgs,
        /// Output path for the observer JSON.
        #[arg(long)]
        out: PathBuf,
        /// Use the exact linear path (classical order v_o - 1 design).
        #[arg(long)]
        lti: bool,
        /// Permit non-Hurwitz polynomials (study mode).
        #[arg(long)]
        allow_unstable: bool,
    },
    /// Co-simulate plant and observer; export CSV and check error decay.
    Simulate {
        system: PathBuf,
        observer: PathBuf,
        /// Scenario file supplying x0/xi0/t_end/dt (flags override).
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Plant initial state, comma-separated (raw coordinates).
        #[arg(long)]
        x0: Option<String>,
        /// Observer initial state, comma-separated.
        #[arg(long, conflicts_with_all = ["consistent", "xi0_offset"])]
        xi0: Option<String>,
        /// Initialize on the invariant manifold: ξ̂(0) = 𝒯(x(0)).
        #[arg(long, conflicts_with = "xi0_offset")]
        consistent: bool,
        /// Initialize at 𝒯(x(0)) plus this offset, comma-separated.
        #[arg(long)]
        xi0_offset: Option<String>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        /// Record every k-th step.
        #[arg(long)]
        stride: Option<usize>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Tolerance for the error-linearity deviation, relative to e(0).
        #[arg(long, default_value_t = folin::sim::DEFAULT_DECAY_TOL)]
        decay_tol: f64,
    },
    /// Linear-system analysis: observability index, the order-v condition,
    /// and the classical design.
    Lti {
        system: PathBuf,
        /// Run the feasibility condition at this order (with --alpha or --roots).
        #[arg(long)]
        order: Option<usize>,
        /// Characteristic coefficients for the condition check.
        #[arg(long)]
        alpha: Option<String>,
        /// Eigenvalues: length v for --order, length v_o - 1 for the design.
        #[arg(long)]
        roots: Option<String>,
        /// Write the designed observer here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify the generalized identity for user-supplied candidate functions.
    VerifyGeneral {
        system: PathBuf,
        spec: PathBuf,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
}

fn run() -> Result<i32, cli::CliError> {
    let parsed = Cli::parse();
    match parsed.command {
        Command::Check(args) => {
            let opts = args.to_options()?;
            cli::cmd_check(&args.system, &opts)
        }
        Command::Design {
            check,
            out,
            lti,
            allow_unstable,
        } => {
            let opts = DesignOptions {
                check: check.to_options()?,
                allow_unstable,
                use_lti: lti,
            };
            cli::cmd_design(&check.system, &opts, &out)
        }
        Command::Simulate {
            system,
            observer,
            scenario,
            x0,
            xi0,
            consistent,
            xi0_offset,
            t_end,
            dt,
            stride,
            out,
            decay_tol,
        } => {
            let scenario = scenario
                .as_deref()
                .map(cli::load_scenario)
                .transpose()?;
            let xi0 = if consistent {
                Some(XiInit::Consistent)
            } else if let Some(values) = &xi0 {
                Some(XiInit::Explicit(cli::parse_float_list(values)?))
            } else if let Some(offset) = &xi0_offset {
                Some(XiInit::ConsistentPlus(cli::parse_float_list(offset)?))
            } else {
                None
            };
            let opts = SimulateOptions {
                scenario,
                x0: x0.as_deref().map(cli::parse_float_list).transpose()?,
                xi0,
                t_end,
                dt,
                stride,
                decay_tol,
            };
            cli::cmd_simulate(&system, &observer, &opts, &out)
        }
        Command::Lti {
            system,
            order,
            alpha,
            roots,
            out,
        } => {
            let opts = LtiOptions {
                order,
                alpha: alpha.as_deref().map(cli::parse_float_list).transpose()?,
                roots: roots.as_deref().map(cli::parse_roots).transpose()?,
                out,
            };
            cli::cmd_lti(&system, &opts)
        }
        Command::VerifyGeneral {
            system,
            spec,
            samples,
            seed,
            tol,
        } => {
            let opts = VerifyGeneralOptions { samples, seed, tol };
            cli::cmd_verify_general(&system, &spec, &opts)
        }
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("FOLIN_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
    match run() {
        Ok(code) => ExitCode::from(code.clamp(0, 255) as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::EXIT_INPUT as u8)
        }
    }
}
