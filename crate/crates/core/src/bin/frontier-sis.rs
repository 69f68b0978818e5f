use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use frontier_sis::config::{load_config, RunConfig};
use frontier_sis::dynamics;
use frontier_sis::eigen;
use frontier_sis::error::{Error, Result};
use frontier_sis::io::{atomic_write, to_json, write_run};
use frontier_sis::par::{self, Exec};
use frontier_sis::sweep;
use frontier_sis::verify::{self, Level, VerifyOptions};

#[derive(Parser)]
#[command(name = "frontier-sis", version, about = "Nonlocal SIS epidemic with free boundaries")]
struct Cli {
    /// TOML run configuration (defaults apply when omitted)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output file for single-file results (default: stdout)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Output directory for `simulate`
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Worker threads (1 disables data parallelism)
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Assert that no random numbers are used. Always true; kept as a guard.
    #[arg(long, global = true)]
    seedless: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Principal eigenvalue on the [eigen] interval, or a CSV table along one axis
    Eigen {
        #[arg(long)]
        d: Option<f64>,
        #[arg(long = "L1", allow_hyphen_values = true)]
        l1: Option<f64>,
        #[arg(long = "L2", allow_hyphen_values = true)]
        l2: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        /// d, interval-halfwidth, media-scale or bed-scale
        #[arg(long, requires = "values")]
        axis: Option<String>,
        /// Ascending axis values, comma separated
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, requires = "axis")]
        values: Vec<f64>,
    },
    /// Time-step one configuration and classify the outcome
    Simulate,
    /// Run the [sweep] grid and write a CSV phase table
    Sweep {
        /// Plan file (same format as --config)
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Bracket the critical expansion capability k by bisection
    #[command(name = "threshold-k")]
    ThresholdK {
        #[arg(long)]
        k_lo: Option<f64>,
        #[arg(long)]
        k_hi: Option<f64>,
        #[arg(long)]
        refinements: Option<usize>,
    },
    /// Critical halfwidth L* where λ_p((-L, L)) changes sign
    #[command(name = "threshold-L")]
    ThresholdL,
    /// Critical diffusion d* where λ_p((-h0, h0)) changes sign
    #[command(name = "threshold-d")]
    ThresholdD,
    /// Run the built-in property suite
    Verify {
        #[arg(long, value_enum, default_value = "fast")]
        level: Level,
        #[arg(long, hide = true, default_value_t = 1.0)]
        unnormalized_kernel: f64,
    },
}

#[derive(Serialize)]
struct EigenReport<'a> {
    lambda_p: f64,
    residual: f64,
    iterations: usize,
    flat_profile: bool,
    d: f64,
    l1: f64,
    l2: f64,
    n_nodes: usize,
    x: Vec<f64>,
    phi: &'a [f64],
    config_hash: String,
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => {
            atomic_write(p, bytes)?;
            log::info!("wrote {}", p.display());
            Ok(())
        }
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

/// `value, lambda_p, residual, iterations`.
fn eigen_table(sweep: &eigen::EigenSweep) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(["value", "lambda_p", "residual", "iterations"]).map_err(err)?;
    for (v, r) in &sweep.rows {
        w.write_record([v.to_string(), r.lambda_p.to_string(), r.residual.to_string(), r.iterations.to_string()])
            .map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn load(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => load_config(p),
        None => {
            log::info!("no --config given, using defaults");
            frontier_sis::parse_config("")
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let exec = if cli.jobs == Some(1) { Exec::Sequential } else { Exec::Parallel };
    if cli.seedless {
        log::debug!("seedless: no random number generator is used anywhere");
    }
    let config_path = match &cli.command {
        Command::Sweep { plan: Some(p) } => Some(p.as_path()),
        _ => cli.config.as_deref(),
    };
    let mut cfg = load(config_path)?;
    let out = cli.out.clone().or(cfg.output.file.clone());

    match cli.command {
        Command::Eigen { d, l1, l2, n, tol, axis, values } => {
            let e = &mut cfg.eigen;
            e.d = d.or(e.d);
            e.l1 = l1.or(e.l1);
            e.l2 = l2.or(e.l2);
            e.n_nodes = n.or(e.n_nodes);
            e.tol = tol.unwrap_or(e.tol);
            let problems = cfg.violations();
            if !problems.is_empty() {
                return Err(Error::Config(problems));
            }
            let problem = cfg.eigen_problem()?;
            if let Some(name) = axis {
                let axis = eigen::SweepAxis::parse(&name).ok_or_else(|| {
                    Error::Config(vec![format!(
                        "unknown axis `{name}` (expected d, interval-halfwidth, media-scale or bed-scale)"
                    )])
                })?;
                let (l1, l2) = cfg.eigen_interval();
                let setup = eigen::EigenSetup {
                    kernel: problem.kernel().clone(),
                    model: cfg.coeffs.clone(),
                    d: problem.diffusion(),
                    l1,
                    l2,
                    n_nodes: problem.grid().len(),
                };
                let sweep = eigen::eigen_sweep(&setup, axis, &values, &cfg.eigen_options(exec))?;
                emit(out.as_deref(), &eigen_table(&sweep)?)?;
                if !sweep.trend_holds() {
                    eprintln!("λ_p moves against the expected trend along {name} by {:.3e}", sweep.max_violation);
                    return Ok(ExitCode::from(1));
                }
                return Ok(ExitCode::SUCCESS);
            }
            let r = eigen::principal_eigenvalue(&problem, &cfg.eigen_options(exec))?;
            let (l1, l2) = cfg.eigen_interval();
            let report = EigenReport {
                lambda_p: r.lambda_p,
                residual: r.residual,
                iterations: r.iterations,
                flat_profile: r.flat_profile,
                d: problem.diffusion(),
                l1,
                l2,
                n_nodes: problem.grid().len(),
                x: problem.grid().nodes(),
                phi: &r.phi,
                config_hash: cfg.hash(),
            };
            eprintln!("lambda_p = {:.12} ({} iterations)", r.lambda_p, r.iterations);
            emit(out.as_deref(), &to_json(&report))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate => {
            let sim = cfg.sim_config(exec)?;
            sim.validate().map_err(|e| match e {
                Error::InvalidArgument(m) => Error::Config(m.split("; ").map(String::from).collect()),
                e => e,
            })?;
            let dt = sim.resolve_dt()?;
            let run = dynamics::simulate(&sim)?;
            let audit = dynamics::verify_vanishing_spectral(&run.outcome, &sim);
            let dir = cli.out_dir.or(cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
            let written = write_run(&dir, &run, &audit, dt, &cfg.hash())?;
            for p in &written {
                log::info!("wrote {}", p.display());
            }
            let o = &run.outcome;
            eprintln!(
                "{} at t = {}: interval length {:.6}, max I {:.3e}",
                o.class, o.horizon, o.final_interval_length, o.final_max_i
            );
            println!("{}", serde_json::to_string(o).expect("outcome serializes"));
            if audit.violation {
                eprintln!("spectral audit failed: λ_p on the final interval is {:?}", audit.lambda_p);
                return Ok(ExitCode::from(1));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { .. } => {
            let plan = cfg.sweep_plan(cli.jobs, exec)?;
            eprintln!("sweep: {} runs on {} workers", plan.points().len(), plan.jobs);
            let table = sweep::run_sweep(&plan)?;
            emit(out.as_deref(), &sweep::table_csv(&table)?)?;
            let failed = table.rows.iter().filter(|r| r.status != "ok").count();
            if failed > 0 {
                eprintln!("{failed} runs failed; see the status column");
                return Ok(ExitCode::from(1));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ThresholdK { k_lo, k_hi, refinements } => {
            let sim = cfg.sim_config(exec)?;
            let t = &cfg.threshold;
            let bracket = sweep::bracket_k_threshold(
                &sim,
                k_lo.unwrap_or(t.k_lo),
                k_hi.unwrap_or(t.k_hi),
                refinements.unwrap_or(t.refinements),
            )?;
            eprintln!("k bracket [{}, {}]", bracket.k_lower_bound, bracket.k_upper_bound);
            emit(out.as_deref(), &to_json(&bracket))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::ThresholdL => {
            let kernel = cfg.kernel_spec()?;
            let r = eigen::critical_length(&cfg.coeffs, &kernel, cfg.sim.d, &cfg.threshold_options(exec))?;
            eprintln!("L* = {}", r.l_star);
            emit(out.as_deref(), &to_json(&r))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::ThresholdD => {
            let kernel = cfg.kernel_spec()?;
            let r = eigen::critical_diffusion(&cfg.coeffs, &kernel, cfg.sim.h0, &cfg.threshold_options(exec))?;
            eprintln!("d* = {}", r.d_star);
            emit(out.as_deref(), &to_json(&r))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { level, unnormalized_kernel } => {
            let report = verify::run(&VerifyOptions { level, kernel_scale: unnormalized_kernel, exec });
            emit(out.as_deref(), report.render().as_bytes())?;
            Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FRONTIER_SIS_LOG", "warn")).init();
    let cli = Cli::parse();
    let jobs = cli.jobs;
    let result = match jobs {
        Some(n) if n > 1 => par::with_jobs(n, || run(cli)),
        _ => run(cli),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
