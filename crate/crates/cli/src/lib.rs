//! Batch driver: `certify`, `sweep`, `simulate` and `repro-example`.

// `!(x > 0.0)` also rejects NaN, which is the point.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
mod output;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DVector;
use rtnmpc::auxsim::domination_check;
use rtnmpc::certify::{
    certify_lq, eigen_sweep, lyapunov_curve, write_eigen_csv, write_lyapunov_csv, LqCertification, TimeGrid,
};
use rtnmpc::coupled::{fmt_f64, CoupledState, Trajectory};
use rtnmpc::nlp::KktPoint;
use rtnmpc::Execution;
use thiserror::Error;

pub use config::ProblemConfig;
pub use output::write_atomic;

pub const ENV_OUT: &str = "RTNMPC_OUT";
pub const DEFAULT_OUT: &str = "rtnmpc-out";

pub const CERTIFICATE_FILE: &str = "certificate.txt";
pub const LYAPUNOV_FILE: &str = "lyap_vs_T.csv";
pub const EIGEN_FILE: &str = "eigs_vs_T.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const DOMINATION_FILE: &str = "domination.csv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] rtnmpc::Error),
    #[error("rollout diverged at step {step}")]
    Divergence { step: usize },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CliError>,
    },
}

impl CliError {
    /// 0 success, 1 input error, 2 certification failure, 3 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Core(e) if e.is_certification_failure() => 2,
            CliError::Core(rtnmpc::Error::BlowUp { .. }) => 3,
            CliError::Core(_) => 1,
            CliError::Divergence { .. } => 3,
            CliError::Stage { source, .. } => source.exit_code(),
        }
    }
}

fn stage<T>(name: &'static str, r: Result<T, CliError>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Stage {
        stage: name,
        source: Box::new(e),
    })
}

#[derive(Debug, Parser)]
#[command(name = "rtnmpc", version, about = "Stability certificates for real-time NMPC")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Problem description (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory [default: $RTNMPC_OUT, then config, then ./rtnmpc-out].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Sampling time for simulations.
    #[arg(long = "T", global = true)]
    pub t: Option<f64>,
    /// Fixed-Hessian weight of the gradient iteration.
    #[arg(long, global = true)]
    pub rho: Option<f64>,
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Disable data-parallel sweeps.
    #[arg(long, global = true)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Estimate all constants and write the certificate with both curves.
    Certify,
    /// Write the eigenvalue and Lyapunov-decrease curves over the sweep range.
    Sweep,
    /// Roll out the coupled system and check domination by the auxiliary system.
    Simulate,
    /// Full double-integrator reproduction with built-in data.
    ReproExample,
}

struct Context {
    out: PathBuf,
    quiet: bool,
    exec: Execution,
}

impl Context {
    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn write<F>(&self, name: &str, f: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        Ok(write_atomic(&self.out, name, f)?)
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let config = match (cli.command, &cli.config) {
        (Command::ReproExample, _) => ProblemConfig::double_integrator(),
        (_, Some(path)) => ProblemConfig::load(path)?,
        (_, None) => return Err(CliError::Config("--config is required".into())),
    };
    let ctx = Context {
        out: output_dir(cli.out.as_deref(), &config),
        quiet: cli.quiet,
        exec: if cli.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        },
    };
    if let Some(t) = cli.t {
        if !(t > 0.0) || !t.is_finite() {
            return Err(CliError::Config(format!("--T must be positive, got {t}")));
        }
    }
    let setup = config.setup(cli.seed, cli.rho, ctx.exec)?;
    match cli.command {
        Command::Certify => {
            let cert = certify_lq(&setup)?;
            write_certificate(&ctx, &cert)?;
            let (lo, hi, n) = config.sweep_range();
            write_curves(&ctx, &cert, cert.grid.points(), TimeGrid::log_inclusive(lo, hi, n)?.points())?;
            report(&ctx, &cert);
            Ok(())
        }
        Command::Sweep => {
            let cert = certify_lq(&setup)?;
            let (lo, hi, n) = config.sweep_range();
            let grid = TimeGrid::log_inclusive(lo, hi, n)?;
            write_curves(&ctx, &cert, grid.points(), grid.points())?;
            ctx.say(format!("sweep: {} points in [{}, {}]", grid.len(), fmt_f64(grid.min()), fmt_f64(grid.max())));
            Ok(())
        }
        Command::Simulate => {
            let cert = certify_lq(&setup)?;
            simulate(&ctx, &config, &cert, cli.t.or(config.simulation.t), true)
        }
        Command::ReproExample => {
            let cert = stage("certify", certify_lq(&setup).map_err(CliError::from))?;
            stage("certificate", write_certificate(&ctx, &cert))?;
            let (lo, hi, n) = config.sweep_range();
            let sweep = stage("sweep", TimeGrid::log_inclusive(lo, hi, n).map_err(CliError::from))?;
            stage("curves", write_curves(&ctx, &cert, cert.grid.points(), sweep.points()))?;
            report(&ctx, &cert);
            stage("simulate", simulate(&ctx, &config, &cert, cli.t, false))
        }
    }
}

/// `--out`, then `$RTNMPC_OUT`, then `[output] dir`, then `./rtnmpc-out`.
fn output_dir(flag: Option<&Path>, config: &ProblemConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(ENV_OUT).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    config
        .output
        .dir
        .as_ref()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn write_certificate(ctx: &Context, cert: &LqCertification) -> Result<(), CliError> {
    ctx.write(CERTIFICATE_FILE, |w| cert.write_certificate(w))?;
    Ok(())
}

fn write_curves(ctx: &Context, cert: &LqCertification, lyap_times: &[f64], eigen_times: &[f64]) -> Result<(), CliError> {
    let lyap = lyapunov_curve(&cert.setup.model, &cert.lq.value, &cert.gain, lyap_times, ctx.exec)?;
    ctx.write(LYAPUNOV_FILE, |w| write_lyapunov_csv(&lyap, w))?;
    let eig = eigen_sweep(cert.chain(), eigen_times, ctx.exec)?;
    ctx.write(EIGEN_FILE, |w| write_eigen_csv(&eig, w))?;
    Ok(())
}

fn report(ctx: &Context, cert: &LqCertification) {
    let c = &cert.constants;
    ctx.say(format!(
        "certified: kappa_hat = {}, a3 = {}, T2 = {}, T_star = {}{}",
        fmt_f64(c.chain.primaries.kappa_hat),
        fmt_f64(c.chain.primaries.a3),
        fmt_f64(c.bounds.t2),
        fmt_f64(c.stable.t_star),
        if c.stable.unbounded { " (unbounded within bracket)" } else { "" }
    ));
}

fn initial_state(config: &ProblemConfig, cert: &LqCertification) -> Result<CoupledState, CliError> {
    let x0 = match &config.simulation.x0 {
        Some(v) => DVector::from_vec(v.clone()),
        None => cert.setup.region.reference_state.clone(),
    };
    let z = if let Some(z0) = &config.simulation.z0 {
        KktPoint::from_vector(cert.lq.problem.num_primal(), &DVector::from_vec(z0.clone()))
    } else if let Some(u0) = &config.simulation.u0 {
        cert.lq.complete(&DVector::from_vec(u0.clone()), &x0)?
    } else {
        return Ok(cert.cold_start(&x0)?);
    };
    Ok(CoupledState { x: x0, z })
}

fn simulate(
    ctx: &Context,
    config: &ProblemConfig,
    cert: &LqCertification,
    t: Option<f64>,
    write_domination: bool,
) -> Result<(), CliError> {
    let t = t.unwrap_or_else(|| cert.constants.certified_t());
    let steps = config.simulation.steps.unwrap_or(config::DEFAULT_STEPS);
    let initial = initial_state(config, cert)?;
    let traj = cert.system.rollout(&initial, t, steps)?;
    ctx.write(TRAJECTORY_FILE, |w| traj.write_csv(w))?;
    if let Some(step) = traj.diverged_at {
        return Err(CliError::Divergence { step });
    }
    let domination = if t * cert.chain().a_bar < 1.0 {
        let report = domination_check(&traj, cert.chain())?;
        if write_domination {
            ctx.write(DOMINATION_FILE, |w| report.write_csv(w))?;
        }
        match report.first_violation {
            None => "pass".to_string(),
            Some(k) => format!("fail (first violation at k = {k})"),
        }
    } else {
        "skipped (T a_bar >= 1)".to_string()
    };
    ctx.say(summary(&traj, t, &domination));
    Ok(())
}

fn summary(traj: &Trajectory, t: f64, domination: &str) -> String {
    let last = traj.last().expect("rollout has at least one sample");
    format!(
        "simulate: T = {}, steps = {}, final sqrtV = {}, final E = {}, domination = {}",
        fmt_f64(t),
        last.k,
        fmt_f64(last.sqrt_value()),
        fmt_f64(last.error),
        domination
    )
}
