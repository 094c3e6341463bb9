//! `plap`: command-line driver for solving, checking and reporting.
//!
//! Exit status: 0 success, 1 usage or input error, 2 non-convergence,
//! 3 a check failed.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use plap_core::config::{ExperimentConfig, GridSection, ModelKind};
use plap_core::geometry::{check_parallelism, compute_geometry, fit_omega, verify_identity_sz, GeometryOptions};
use plap_core::grid::ScalarField;
use plap_core::io::{load_field, save_field, save_field_csv};
use plap_core::pipeline::{fmt_num, geometry_summary_csv, growth_files, mask_field, poincare_csv, run_pipeline, ExitKind};
use plap_core::poincare::{energy_growth, phi_suite, verify_poincare, BoundKind, PoincareOptions};
use plap_core::solver::solve;
use plap_core::stability::{min_rayleigh_with_tolerance, StabilityReport};
use plap_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "plap", version, about = "Numerical laboratory for p-Laplacian-type energies")]
struct Cli {
    /// seed of the random test functions (overrides the config)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Minimize the energy; writes a field dump and its CSV next to it
    Solve(SolveArgs),
    /// Smallest eigenvalue of the second variation at a field
    Stability(FieldArgs),
    /// Geometric quantities S, T, U and K^2 of a field
    Geometry(FieldArgs),
    /// Check the Poincaré inequality on a family of test functions
    VerifyPoincare(PoincareArgs),
    /// Energy in balls of growing radius and the fitted exponent
    EnergyGrowth(GrowthArgs),
    /// Write the exact field a config describes (example or counterexample)
    MakeExample(SolveArgs),
    /// Run every stage and write a report directory
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[arg(long)]
    config: PathBuf,
    /// output field dump
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FieldArgs {
    /// input field dump
    #[arg(long = "in")]
    input: PathBuf,
    /// model and tolerances; the grid is taken from the dump
    /// (default: alpha = 1, p = 2, Allen-Cahn nonlinearity)
    #[arg(long)]
    config: Option<PathBuf>,
    /// output CSV file (stability) or directory (geometry); stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PoincareArgs {
    #[command(flatten)]
    field: FieldArgs,
    /// comma-separated test functions: random:N, cutoff:R, ball:R:N
    #[arg(long)]
    phis: Option<String>,
}

#[derive(Debug, Args)]
struct GrowthArgs {
    #[command(flatten)]
    field: FieldArgs,
    /// comma-separated radii
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<f64>>,
    /// r2, n-1 or n-sigma:<s>
    #[arg(long)]
    bound: Option<String>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    /// report directory (default: `dir` of the [output] section)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(ExitKind::Usage.code() as u8) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot start {threads} threads: {e}");
            return ExitCode::from(ExitKind::Usage.code() as u8);
        }
    }
    match run(&cli) {
        Ok(kind) => ExitCode::from(kind.code() as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(ExitKind::Usage.code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitKind> {
    match &cli.command {
        Command::Solve(a) => cmd_solve(cli, a),
        Command::Stability(a) => cmd_stability(cli, a),
        Command::Geometry(a) => cmd_geometry(cli, a),
        Command::VerifyPoincare(a) => cmd_poincare(cli, a),
        Command::EnergyGrowth(a) => cmd_growth(cli, a),
        Command::MakeExample(a) => cmd_make_example(cli, a),
        Command::Pipeline(a) => cmd_pipeline(cli, a),
    }
}

fn load_config(cli: &Cli, path: Option<&Path>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
            Error::Io(io) => Error::InvalidArgument(format!("{}: {io}", p.display())),
            other => other,
        })?,
        // a field from a dump has no closed form; keep the default
        // coefficients and nonlinearity only
        None => {
            let mut cfg = ExperimentConfig::default();
            cfg.model.kind = ModelKind::Custom;
            cfg
        }
    };
    if let Some(seed) = cli.seed {
        cfg.poincare.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Field from a dump together with the config rebuilt on the dump's grid.
fn load_input(cli: &Cli, a: &FieldArgs) -> Result<(ScalarField, ExperimentConfig)> {
    let u = load_field(&a.input).map_err(|e| match e {
        Error::Io(io) => Error::InvalidArgument(format!("{}: {io}", a.input.display())),
        other => other,
    })?;
    let mut cfg = load_config(cli, a.config.as_deref())?;
    let g = u.grid();
    if g.m() == 0 {
        return Err(Error::InvalidArgument("the field needs at least one x-direction".into()));
    }
    cfg.grid = GridSection { m: g.m(), n_minus_m: g.n_minus_m(), sizes: g.sizes().to_vec(), extents: g.extents() };
    Ok((u, cfg))
}

/// Writes `text` to `out`, or prints it when no path is given.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => Ok(fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn verdict(ok: bool) -> ExitKind {
    if ok {
        ExitKind::Ok
    } else {
        ExitKind::AcceptanceFailure
    }
}

fn cmd_solve(cli: &Cli, a: &SolveArgs) -> Result<ExitKind> {
    let cfg = load_config(cli, Some(&a.config))?;
    let ex = cfg.build()?;
    let (u, report) = solve(&ex.model, &ex.boundary, None, &cfg.solver)?;
    save_field(&u, &a.out)?;
    save_field_csv(&u, &a.out.with_extension("csv"))?;
    println!("converged,iterations,final_residual_norm");
    println!("{},{},{}", report.converged, report.iterations, fmt_num(report.final_residual_norm));
    Ok(if report.converged { ExitKind::Ok } else { ExitKind::NonConvergence })
}

fn stability_of(u: &ScalarField, cfg: &ExperimentConfig) -> Result<StabilityReport> {
    let ex = cfg.build()?;
    min_rayleigh_with_tolerance(u, &ex.model, cfg.tolerance.eig_tol, cfg.tolerance.tol_stability)
}

fn cmd_stability(cli: &Cli, a: &FieldArgs) -> Result<ExitKind> {
    let (u, cfg) = load_input(cli, a)?;
    let r = stability_of(&u, &cfg)?;
    let text = format!(
        "lambda_min,iterations,residual,converged,tol_stability,stable,monotone_axis\n{},{},{},{},{},{},{}\n",
        fmt_num(r.min_rayleigh),
        r.eigen_iterations,
        fmt_num(r.residual_of_eigenpair),
        r.converged,
        fmt_num(r.tol_stability),
        r.is_stable(),
        r.monotone_direction_found.map(|k| (k + 1).to_string()).unwrap_or_else(|| "-".into())
    );
    emit(a.out.as_deref(), &text)?;
    if !r.converged {
        return Ok(ExitKind::NonConvergence);
    }
    Ok(verdict(r.is_stable()))
}

fn geometry_options(cfg: &ExperimentConfig) -> GeometryOptions {
    GeometryOptions { theta_rel: cfg.tolerance.theta_grad, ..GeometryOptions::default() }
}

fn cmd_geometry(cli: &Cli, a: &FieldArgs) -> Result<ExitKind> {
    let (u, cfg) = load_input(cli, a)?;
    let opts = geometry_options(&cfg);
    let geo = compute_geometry(&u, &opts)?;
    let identity = verify_identity_sz(&geo);
    let par = check_parallelism(&u, &opts)?;
    let fit = fit_omega(&u, &opts)?;
    let checks = format!(
        "quantity,value\nidentity_defect,{}\nparallelism,{}\nparallel_defect,{}\nomega_constancy_score,{}\n",
        fmt_num(identity.max_relative),
        par.verdict,
        fmt_num(par.max_defect),
        fmt_num(fit.constancy_score)
    );
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("geometry.csv"), geometry_summary_csv(&geo))?;
            fs::write(dir.join("geometry_checks.csv"), &checks)?;
            save_field(&geo.s, &dir.join("S.dump"))?;
            save_field(&geo.t, &dir.join("T.dump"))?;
            save_field(&geo.u, &dir.join("U.dump"))?;
            save_field(&geo.ksq, &dir.join("Ksq.dump"))?;
            save_field(&mask_field(&geo.region_mask), &dir.join("mask.dump"))?;
        }
        None => print!("{}{checks}", geometry_summary_csv(&geo)),
    }
    Ok(ExitKind::Ok)
}

fn cmd_poincare(cli: &Cli, a: &PoincareArgs) -> Result<ExitKind> {
    let (u, mut cfg) = load_input(cli, &a.field)?;
    if let Some(phis) = &a.phis {
        cfg.poincare.phis = phis.clone();
    }
    let ex = cfg.build()?;
    let stab = stability_of(&u, &cfg)?;
    let phis = phi_suite(u.grid(), &cfg.poincare.phis, cfg.poincare.seed)?;
    let opts = PoincareOptions { geometry: geometry_options(&cfg), tol_poincare: cfg.tolerance.tol_poincare, tol_poincare_h: 0.0 };
    let reports = verify_poincare(&u, &ex.model, &phis, &stab, &opts)?;
    emit(a.field.out.as_deref(), &poincare_csv(&reports))?;
    if reports.iter().any(|r| !r.hypothesis_ok) {
        log::warn!("the field is not stable to tolerance; the inequality is reported but not asserted");
    }
    Ok(verdict(reports.iter().all(|r| !r.hypothesis_ok || r.holds)))
}

fn parse_bound(s: &str) -> Result<BoundKind> {
    let wrapped = format!("[growth]\nbound = {s}\n");
    Ok(ExperimentConfig::parse(&wrapped)?.growth.bound)
}

fn cmd_growth(cli: &Cli, a: &GrowthArgs) -> Result<ExitKind> {
    let (u, mut cfg) = load_input(cli, &a.field)?;
    if let Some(radii) = &a.radii {
        cfg.growth.radii = radii.clone();
    }
    if let Some(b) = &a.bound {
        cfg.growth.bound = parse_bound(b)?;
    }
    let ex = cfg.build()?;
    let g = energy_growth(&u, &ex.model, &cfg.growth.radii, cfg.growth.bound)?;
    let (csv, dat) = growth_files(&g.radii, &g.energies);
    match &a.field.out {
        Some(p) => {
            fs::write(p, &csv)?;
            fs::write(p.with_extension("dat"), &dat)?;
        }
        None => print!("{csv}"),
    }
    let slope = g.fitted_slope.map(fmt_num).unwrap_or_else(|| "undefined".into());
    eprintln!("fitted slope {slope}, bound exponent {}", fmt_num(g.bound_exponent));
    Ok(verdict(g.within_bound.unwrap_or(true)))
}

fn cmd_make_example(cli: &Cli, a: &SolveArgs) -> Result<ExitKind> {
    let cfg = load_config(cli, Some(&a.config))?;
    if cfg.model.kind == ModelKind::Custom {
        return Err(Error::InvalidArgument("a custom model has no closed-form field; use `solve`".into()));
    }
    let field = cfg.build()?.exact.expect("examples carry their exact field");
    save_field(&field, &a.out)?;
    save_field_csv(&field, &a.out.with_extension("csv"))?;
    Ok(ExitKind::Ok)
}

fn cmd_pipeline(cli: &Cli, a: &PipelineArgs) -> Result<ExitKind> {
    let cfg = load_config(cli, Some(&a.config))?;
    let dir = a.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let outcome = run_pipeline(&cfg, &dir)?;
    for row in &outcome.rows {
        println!(
            "{:<16} {:<5} value {} threshold {}{}",
            row.check.name(),
            if row.pass { "PASS" } else { "FAIL" },
            row.value,
            row.threshold,
            if row.gating { "" } else { " (informational)" }
        );
    }
    Ok(outcome.exit)
}
