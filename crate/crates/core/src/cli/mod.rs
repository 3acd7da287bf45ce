//! Command-line plumbing: setup files, engine dispatch and CSV output.

pub mod setup_file;
pub mod table;

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::diffusion::{evolve_field, marginal, stable_step, CommutingSolution, EvolveOptions};
use crate::error::{Error, Result};
use crate::fcs::{cumulants, default_chi_grid, output_distribution_fcs};
use crate::model::{validate_setup, MeasurementSetup};
use crate::numerics::{operator_norm, ComplexMatrix, Distribution, GridSpec};
use crate::separation::separate;
use crate::stochastic::{run_ensemble, AuxKind, EnsembleConfig};

pub use setup_file::{bundled, load_setup, parse_setup, setup_to_json, LoadedSetup, BUNDLED};
pub use table::{compare, format_distribution, parse_distribution, read_distribution, Comparison};

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_THRESHOLD: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_GUARD: i32 = 3;

/// Smallest grid accepted on any axis.
pub const MIN_GRID_POINTS: usize = 16;

#[derive(Debug, Parser)]
#[command(name = "cwlm", version, about = "Output statistics of continuous weak linear measurements")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a setup against the physical inequalities.
    Validate(EngineArgs),
    /// Output distribution from the counting-field generating function.
    Fcs(EngineArgs),
    /// Output distribution from the drift-diffusion equation.
    Diffusion(EngineArgs),
    /// Histogram of stochastic trajectories.
    Trajectories(EngineArgs),
    /// Closed-form solution for commuting measured operators.
    Analytic(EngineArgs),
    /// L1 distance, KS statistic and moments of two distribution files.
    Compare(CompareArgs),
}

#[derive(Clone, Debug, Args)]
pub struct EngineArgs {
    /// Setup JSON file, or the name of a bundled fixture.
    #[arg(long)]
    pub config: String,
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    /// Time step; chosen automatically when absent.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub chi_max: Option<f64>,
    #[arg(long, default_value_t = 128)]
    pub chi_points: usize,
    /// Half-width of the output grid; chosen from the cumulants when absent.
    #[arg(long)]
    pub s_max: Option<f64>,
    #[arg(long, default_value_t = 201)]
    pub s_points: usize,
    /// Number of trajectories.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value = "oscillator")]
    pub aux: AuxKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-trajectory final outputs (trajectories only).
    #[arg(long)]
    pub samples: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct CompareArgs {
    pub first: PathBuf,
    pub second: PathBuf,
    /// Exit with status 1 when the L1 distance exceeds this value.
    #[arg(long)]
    pub max_l1: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Engine {
    Validate,
    Fcs,
    Diffusion,
    Trajectories,
    Analytic,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Validate => "validate",
            Engine::Fcs => "fcs",
            Engine::Diffusion => "diffusion",
            Engine::Trajectories => "trajectories",
            Engine::Analytic => "analytic",
        }
    }
}

/// A checked engine invocation.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub engine: Engine,
    pub args: EngineArgs,
}

impl RunConfig {
    pub fn new(engine: Engine, args: EngineArgs) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(args.t > 0.0) || !args.t.is_finite() {
            return bad(format!("--t must be positive, got {}", args.t));
        }
        if let Some(dt) = args.dt {
            if !(dt > 0.0) || !dt.is_finite() {
                return bad(format!("--dt must be positive, got {dt}"));
            }
        }
        for (name, v) in [("--chi-max", args.chi_max), ("--s-max", args.s_max)] {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return bad(format!("{name} must be positive, got {v}"));
                }
            }
        }
        if args.chi_points < MIN_GRID_POINTS || args.s_points < MIN_GRID_POINTS {
            return bad(format!("grids need at least {MIN_GRID_POINTS} points"));
        }
        if args.n < 1 {
            return bad("--n must be at least 1".into());
        }
        Ok(Self { engine, args })
    }
}

/// What a command produced: exit status plus the text for stdout and stderr.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical_guard() {
        EXIT_GUARD
    } else {
        EXIT_VALIDATION
    }
}

/// Runs a parsed command line; errors become exit codes and a message on stderr.
pub fn execute(cli: Cli) -> Outcome {
    let result = match cli.command {
        Command::Compare(args) => run_compare(&args),
        Command::Validate(a) => RunConfig::new(Engine::Validate, a).and_then(|c| run(&c)),
        Command::Fcs(a) => RunConfig::new(Engine::Fcs, a).and_then(|c| run(&c)),
        Command::Diffusion(a) => RunConfig::new(Engine::Diffusion, a).and_then(|c| run(&c)),
        Command::Trajectories(a) => RunConfig::new(Engine::Trajectories, a).and_then(|c| run(&c)),
        Command::Analytic(a) => RunConfig::new(Engine::Analytic, a).and_then(|c| run(&c)),
    };
    result.unwrap_or_else(|e| Outcome {
        code: exit_code(&e),
        stdout: String::new(),
        stderr: format!("error: {e}\n"),
    })
}

fn run_compare(args: &CompareArgs) -> Result<Outcome> {
    let a = read_distribution(&args.first)?;
    let b = read_distribution(&args.second)?;
    let c = compare(&a, &b)?;
    let mut out = Outcome {
        stdout: c.render(),
        ..Outcome::default()
    };
    if let Some(max) = args.max_l1 {
        if !(c.l1 <= max) {
            out.code = EXIT_THRESHOLD;
            out.stderr = format!("L1 {:.6e} exceeds {max:.6e}\n", c.l1);
        }
    }
    Ok(out)
}

/// Output grid covering the mean ± 8 standard deviations on every axis.
fn default_s_grid(setup: &MeasurementSetup, rho0: &ComplexMatrix, t: f64, points: usize) -> Result<GridSpec> {
    let c = cumulants(setup, rho0, t)?;
    let half = (0..c.mean.len())
        .map(|i| c.mean[i].abs() + 8.0 * c.covariance[i][i].max(0.0).sqrt())
        .fold(0.0, f64::max);
    Ok(GridSpec::new(half, points))
}

/// Largest step with `√(S dt)·‖B‖ ≤ 0.09`, capped at 0.01.
fn default_trajectory_step(setup: &MeasurementSetup) -> Result<f64> {
    let sep = separate(setup)?;
    let b_max = sep.b_ops.iter().map(operator_norm).fold(0.0, f64::max);
    let limit = if b_max > 0.0 { (0.09 / b_max).powi(2) / sep.noise_scale } else { f64::INFINITY };
    Ok(limit.min(0.01))
}

fn fmt_f(x: f64) -> String {
    format!("{x}")
}

/// Dispatches one engine run.
pub fn run(config: &RunConfig) -> Result<Outcome> {
    let args = &config.args;
    let mut out = Outcome::default();
    if config.engine == Engine::Validate {
        let (text, context) = setup_file::read_setup_text(&args.config)?;
        let (setup, _) = parse_setup(&text, &context)?;
        let report = validate_setup(&setup);
        out.stdout = report.render();
        out.code = if report.overall { EXIT_OK } else { EXIT_VALIDATION };
        return Ok(out);
    }

    let loaded = load_setup(&args.config)?;
    for w in loaded.report.warnings() {
        let _ = writeln!(out.stderr, "warning: {} is saturated (margin {:.3e})", w.name, w.margin);
    }
    let setup = &loaded.setup;
    let rho0 = &loaded.initial_state;
    let t = args.t;
    let s_spec = match args.s_max {
        Some(h) => GridSpec::new(h, args.s_points),
        None => default_s_grid(setup, rho0, t, args.s_points)?,
    };
    let mut meta = vec![("engine", config.engine.name().to_string()), ("t", fmt_f(t)), ("seed", args.seed.to_string())];

    let dist: Distribution = match config.engine {
        Engine::Validate => unreachable!("handled above"),
        Engine::Fcs => {
            let chi = match args.chi_max {
                Some(c) => GridSpec::new(c, args.chi_points),
                None => GridSpec::new(default_chi_grid(setup, t)?.half_width, args.chi_points),
            };
            let result = output_distribution_fcs(setup, rho0, t, chi, s_spec)?;
            let _ = writeln!(out.stderr, "max imaginary residue {:.3e}", result.max_residue);
            result.distribution
        }
        Engine::Diffusion => {
            let dt = match args.dt {
                Some(dt) => dt,
                None => stable_step(setup, s_spec, t)?,
            };
            meta.push(("dt", fmt_f(dt)));
            let evolved = evolve_field(setup, rho0, t, dt, s_spec, EvolveOptions::default())?;
            let _ = writeln!(out.stderr, "mass leaked through the boundary {:.3e}", evolved.leaked_mass);
            marginal(&evolved.field)
        }
        Engine::Analytic => {
            let solution = CommutingSolution::new(setup, rho0)?;
            let grid = s_spec.grid(setup.n_detectors())?;
            let field = solution.field(t, &grid)?;
            marginal(&field)
        }
        Engine::Trajectories => {
            let dt = match args.dt {
                Some(dt) => dt,
                None => default_trajectory_step(setup)?,
            };
            meta.push(("dt", fmt_f(dt)));
            meta.push(("n", args.n.to_string()));
            meta.push(("aux", format!("{:?}", args.aux).to_lowercase()));
            let sep = separate(setup)?;
            let mut cfg = EnsembleConfig::new(t, dt, args.n, args.aux, args.seed);
            cfg.histogram = Some(s_spec);
            cfg.keep_outputs = args.samples.is_some();
            let result = run_ensemble(&sep, rho0, &cfg)?;
            let hist = result.histogram.as_ref().expect("histogram requested");
            let _ = writeln!(
                out.stderr,
                "{} trajectories, {} failed, {} outside the grid",
                result.n_traj, result.failed, hist.overflow
            );
            if let Some(path) = &args.samples {
                let mut text = String::new();
                let cols: Vec<String> = (1..=setup.n_detectors()).map(|i| format!("s_{i}")).collect();
                let _ = writeln!(text, "# engine=trajectories, t={}, seed={}", fmt_f(t), args.seed);
                let _ = writeln!(text, "{}", cols.join(","));
                for s in &result.outputs {
                    let row: Vec<String> = s.iter().map(|x| format!("{x:.16e}")).collect();
                    let _ = writeln!(text, "{}", row.join(","));
                }
                std::fs::write(path, text)?;
            }
            hist.to_distribution()
        }
    };

    let csv = format_distribution(&dist, &meta);
    match &args.out {
        Some(path) => {
            std::fs::write(path, csv)?;
            let _ = writeln!(out.stdout, "wrote {}", path.display());
        }
        None => out.stdout = csv,
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("cwlm").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn validate_bundled() {
        let out = execute(parse(&["validate", "--config", "qubit_sz"]));
        assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
        assert!(out.stdout.contains("overall: valid"));
    }

    #[test]
    fn cfl_violation_is_a_guard() {
        let out = execute(parse(&["diffusion", "--config", "qubit_sz", "--dt", "0.5", "--s-max", "6", "--s-points", "61"]));
        assert_eq!(out.code, EXIT_GUARD);
        assert!(out.stderr.contains("CFL"), "{}", out.stderr);
    }

    #[test]
    fn small_grids_rejected() {
        let out = execute(parse(&["fcs", "--config", "qubit_sz", "--s-points", "8"]));
        assert_eq!(out.code, EXIT_VALIDATION);
    }

    #[test]
    fn unknown_aux_rejected_by_parser() {
        assert!(Cli::try_parse_from(["cwlm", "trajectories", "--config", "qubit_sz", "--aux", "qutrit"]).is_err());
    }

    #[test]
    fn fcs_output_is_deterministic_csv() {
        let a = execute(parse(&["fcs", "--config", "qubit_sz", "--t", "1", "--s-points", "41"]));
        let b = execute(parse(&["fcs", "--config", "qubit_sz", "--t", "1", "--s-points", "41"]));
        assert_eq!(a.code, EXIT_OK, "{}", a.stderr);
        assert_eq!(a.stdout, b.stdout);
        assert!(a.stdout.starts_with("# engine=fcs, t=1, seed=0\ns_1,P\n"));
        let dist = parse_distribution(&a.stdout, "stdout").unwrap();
        assert!((dist.total_mass() - 1.0).abs() < 1e-3);
    }
}
