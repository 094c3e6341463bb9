//! One-shot experiment: model, solve, stability, geometry, Poincaré
//! verification and energy growth, each writing CSV files into an output
//! directory, followed by acceptance rows and a manifest of checksums.
//!
//! All CSV output is deterministic; only the manifest carries a timestamp.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::{Check, ExperimentConfig, ModelKind};
use crate::error::{Error, Result};
use crate::geometry::{check_parallelism, compute_geometry, fit_omega, verify_identity_sz, GeometryFields, GeometryOptions};
use crate::grid::{Region, ScalarField};
use crate::io::{save_field, save_field_csv};
use crate::operator::energy;
use crate::poincare::{energy_growth, phi_suite, verify_poincare, PoincareOptions};
use crate::solver::solve;
use crate::stability::min_rayleigh_with_tolerance;

/// Process exit status of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Ok = 0,
    Usage = 1,
    NonConvergence = 2,
    AcceptanceFailure = 3,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceRow {
    pub check: Check,
    pub value: String,
    pub threshold: String,
    pub pass: bool,
    /// failure of a gating row fails the run
    pub gating: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub exit: ExitKind,
    pub rows: Vec<AcceptanceRow>,
    /// files written, relative to the output directory, in creation order
    pub files: Vec<String>,
}

/// `{:.12e}`, the number format of every CSV file.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.12e}")
}

struct Writer {
    dir: PathBuf,
    files: Vec<String>,
}

impl Writer {
    fn text(&mut self, name: &str, content: &str) -> Result<()> {
        fs::write(self.dir.join(name), content)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn field(&mut self, name: &str, field: &ScalarField) -> Result<()> {
        save_field(field, &self.dir.join(name))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn field_csv(&mut self, name: &str, field: &ScalarField) -> Result<()> {
        save_field_csv(field, &self.dir.join(name))?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage { stage: name, source: Box::new(e) })
}

fn masked_range(field: &ScalarField, region: &Region) -> (f64, f64) {
    region.indices().map(|i| field.get(i)).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Geometry summary CSV: range of each field over the core of the region.
pub fn geometry_summary_csv(geo: &GeometryFields) -> String {
    let mut s = String::from("quantity,min,max\n");
    for (name, f) in [("S", &geo.s), ("T", &geo.t), ("U", &geo.u), ("Ksq", &geo.ksq), ("tangential_grad_sq", &geo.tangential_grad_sq)] {
        let (lo, hi) = masked_range(f, &geo.core_mask);
        let _ = writeln!(s, "{name},{},{}", fmt_num(lo), fmt_num(hi));
    }
    s
}

/// Region indicator as a 0/1 field.
pub fn mask_field(region: &Region) -> ScalarField {
    ScalarField::from_values(region.grid(), region.mask().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).expect("finite indicator")
}

pub fn run_pipeline(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PipelineOutcome> {
    fs::create_dir_all(out_dir)?;
    let mut w = Writer { dir: out_dir.to_path_buf(), files: Vec::new() };
    w.text("config.cfg", &cfg.emit())?;
    let outcome = run_stages(cfg, &mut w);
    write_manifest(cfg, &w)?;
    outcome.map(|(exit, rows)| PipelineOutcome { exit, rows, files: w.files.clone() })
}

fn run_stages(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(ExitKind, Vec<AcceptanceRow>)> {
    let ex = stage("model", cfg.build())?;
    let grid = ex.grid.clone();
    let h = grid.spacings().iter().cloned().fold(0.0, f64::max);
    let gating = |c: Check| cfg.acceptance.contains(&c);
    let mut rows = Vec::new();

    // solve
    let u = if cfg.model.kind == ModelKind::Counterexample {
        rows.push(AcceptanceRow { check: Check::Solve, value: "skipped".into(), threshold: "-".into(), pass: true, gating: gating(Check::Solve) });
        ex.exact.clone().expect("constructed field")
    } else {
        let (u, report) = stage("solve", solve(&ex.model, &ex.boundary, None, &cfg.solver))?;
        let energy = stage("solve", energy(&u, &ex.model, &Region::domain(&grid)))?.total;
        let err = match &ex.exact {
            Some(e) => fmt_num(stage("solve", u.max_abs_diff(e))?),
            None => "-".into(),
        };
        let mut s = String::from("converged,iterations,final_residual_norm,energy,max_error_vs_exact\n");
        let _ = writeln!(s, "{},{},{},{},{err}", report.converged, report.iterations, fmt_num(report.final_residual_norm), fmt_num(energy));
        w.text("solve.csv", &s)?;
        let mut trace = String::from("step,energy\n");
        for (k, e) in report.energy_trace.iter().enumerate() {
            let _ = writeln!(trace, "{k},{}", fmt_num(*e));
        }
        w.text("solve_trace.csv", &trace)?;
        w.field_csv("solution.csv", &u)?;
        if cfg.output.dumps {
            w.field("solution.dump", &u)?;
        }
        rows.push(AcceptanceRow {
            check: Check::Solve,
            value: fmt_num(report.final_residual_norm),
            threshold: fmt_num(cfg.solver.tol_residual),
            pass: report.converged,
            gating: gating(Check::Solve),
        });
        if !report.converged {
            write_acceptance(w, &rows)?;
            return Ok((ExitKind::NonConvergence, rows));
        }
        u
    };

    // stability
    let stab = stage("stability", min_rayleigh_with_tolerance(&u, &ex.model, cfg.tolerance.eig_tol, cfg.tolerance.tol_stability))?;
    let mut s = String::from("lambda_min,iterations,residual,converged,tol_stability,stable,monotone_axis\n");
    let _ = writeln!(
        s,
        "{},{},{},{},{},{},{}",
        fmt_num(stab.min_rayleigh),
        stab.eigen_iterations,
        fmt_num(stab.residual_of_eigenpair),
        stab.converged,
        fmt_num(stab.tol_stability),
        stab.is_stable(),
        stab.monotone_direction_found.map(|a| (a + 1).to_string()).unwrap_or_else(|| "-".into())
    );
    w.text("stability.csv", &s)?;
    rows.push(AcceptanceRow {
        check: Check::Stability,
        value: fmt_num(stab.min_rayleigh),
        threshold: fmt_num(-stab.tol_stability),
        pass: stab.is_stable() && stab.converged,
        gating: gating(Check::Stability),
    });

    // geometry
    let gopts = GeometryOptions { theta_rel: cfg.tolerance.theta_grad, ..GeometryOptions::default() };
    let geo = stage("geometry", compute_geometry(&u, &gopts))?;
    w.text("geometry.csv", &geometry_summary_csv(&geo))?;
    if cfg.output.dumps {
        w.field("S.dump", &geo.s)?;
        w.field("T.dump", &geo.t)?;
        w.field("U.dump", &geo.u)?;
        w.field("Ksq.dump", &geo.ksq)?;
        w.field("mask.dump", &mask_field(&geo.region_mask))?;
    }
    let identity = verify_identity_sz(&geo);
    let par = stage("geometry", check_parallelism(&u, &gopts))?;
    let fit = stage("geometry", fit_omega(&u, &gopts))?;
    let mut s = String::from("quantity,value\n");
    let _ = writeln!(s, "region_points,{}", geo.region_mask.count());
    let _ = writeln!(s, "core_points,{}", geo.core_mask.count());
    let _ = writeln!(s, "theta_grad,{}", fmt_num(geo.theta_grad));
    let _ = writeln!(s, "smoothing_bias,{}", fmt_num(geo.smoothing_bias));
    let _ = writeln!(s, "eigen_failures,{}", geo.eigen_failures);
    let _ = writeln!(s, "identity_defect,{}", fmt_num(identity.max_relative));
    let _ = writeln!(s, "parallelism,{}", par.verdict);
    let _ = writeln!(s, "parallel_defect,{}", fmt_num(par.max_defect));
    let _ = writeln!(s, "omega_constancy_score,{}", fmt_num(fit.constancy_score));
    let _ = writeln!(s, "symmetry_defect,{}", fmt_num(fit.symmetry_defect));
    w.text("geometry_checks.csv", &s)?;
    let (s_min, _) = masked_range(&geo.s, &geo.core_mask);
    let (t_min, _) = masked_range(&geo.t, &geo.core_mask);
    let st_min = s_min.min(t_min);
    let geo_threshold = -cfg.tolerance.tol_geom * h;
    rows.push(AcceptanceRow {
        check: Check::Geometry,
        value: fmt_num(st_min),
        threshold: fmt_num(geo_threshold),
        pass: geo.core_mask.is_empty() || st_min >= geo_threshold,
        gating: gating(Check::Geometry),
    });
    rows.push(AcceptanceRow {
        check: Check::Identity,
        value: fmt_num(identity.max_relative),
        threshold: fmt_num(cfg.tolerance.tol_identity),
        pass: identity.max_relative <= cfg.tolerance.tol_identity,
        gating: gating(Check::Identity),
    });
    rows.push(AcceptanceRow {
        check: Check::Parallelism,
        value: par.verdict.to_string(),
        threshold: "true".into(),
        pass: par.verdict,
        gating: gating(Check::Parallelism),
    });
    rows.push(AcceptanceRow {
        check: Check::OmegaConstancy,
        value: fmt_num(fit.constancy_score),
        threshold: fmt_num(1e-3),
        pass: fit.constancy_score <= 1e-3,
        gating: gating(Check::OmegaConstancy),
    });

    // Poincaré inequality
    let phis = stage("verify-poincare", phi_suite(&grid, &cfg.poincare.phis, cfg.poincare.seed))?;
    let popts = PoincareOptions { geometry: gopts.clone(), tol_poincare: cfg.tolerance.tol_poincare, tol_poincare_h: 0.0 };
    let reports = stage("verify-poincare", verify_poincare(&u, &ex.model, &phis, &stab, &popts))?;
    w.text("poincare.csv", &poincare_csv(&reports))?;
    let considered: Vec<_> = reports.iter().filter(|r| r.hypothesis_ok).collect();
    let worst = considered.iter().map(|r| r.slack / (r.lhs.abs() + r.rhs.abs() + 1.0)).fold(f64::INFINITY, f64::min);
    rows.push(AcceptanceRow {
        check: Check::Poincare,
        value: if considered.is_empty() { "hypothesis-failed".into() } else { fmt_num(worst) },
        threshold: fmt_num(-cfg.tolerance.tol_poincare),
        pass: considered.iter().all(|r| r.holds),
        gating: gating(Check::Poincare),
    });

    // energy growth
    let growth = stage("energy-growth", energy_growth(&u, &ex.model, &cfg.growth.radii, cfg.growth.bound))?;
    let (csv, dat) = growth_files(&growth.radii, &growth.energies);
    w.text("growth.csv", &csv)?;
    w.text("growth.dat", &dat)?;
    rows.push(AcceptanceRow {
        check: Check::Growth,
        value: growth.fitted_slope.map(fmt_num).unwrap_or_else(|| "undefined".into()),
        threshold: fmt_num(growth.bound_exponent + 0.1),
        pass: growth.within_bound.unwrap_or(true),
        gating: gating(Check::Growth),
    });

    write_acceptance(w, &rows)?;
    let failed = rows.iter().any(|r| r.gating && !r.pass);
    Ok((if failed { ExitKind::AcceptanceFailure } else { ExitKind::Ok }, rows))
}

pub fn poincare_csv(reports: &[crate::poincare::PoincareReport]) -> String {
    let mut s = String::from("phi,lhs,rhs,slack,s_term,k_term,tangential_term,t_term,hypothesis_ok,tolerance,holds\n");
    for r in reports {
        let b = &r.breakdown;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.phi_descriptor,
            fmt_num(r.lhs),
            fmt_num(r.rhs),
            fmt_num(r.slack),
            fmt_num(b.s_term),
            fmt_num(b.k_term),
            fmt_num(b.tangential_term),
            fmt_num(b.t_term),
            r.hypothesis_ok,
            fmt_num(r.tolerance),
            r.holds
        );
    }
    s
}

/// CSV of `(R, E(R))` and the same pairs as whitespace-separated columns.
pub fn growth_files(radii: &[f64], energies: &[f64]) -> (String, String) {
    let mut csv = String::from("radius,energy\n");
    let mut dat = String::from("# radius energy\n");
    for (r, e) in radii.iter().zip(energies) {
        let _ = writeln!(csv, "{},{}", fmt_num(*r), fmt_num(*e));
        let _ = writeln!(dat, "{} {}", fmt_num(*r), fmt_num(*e));
    }
    (csv, dat)
}

fn write_acceptance(w: &mut Writer, rows: &[AcceptanceRow]) -> Result<()> {
    let mut s = String::from("check,value,threshold,pass,gating\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.check.name(), r.value, r.threshold, r.pass, r.gating);
    }
    w.text("acceptance.csv", &s)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_manifest(cfg: &ExperimentConfig, w: &Writer) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "tool = plap {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "config_sha256 = {}", sha256_hex(cfg.emit().as_bytes()));
    let stamp = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let _ = writeln!(s, "generated_unix = {stamp}");
    for name in &w.files {
        let bytes = fs::read(w.dir.join(name))?;
        let _ = writeln!(s, "sha256 {} = {}", name, sha256_hex(&bytes));
    }
    fs::write(w.dir.join("manifest.txt"), s)?;
    Ok(())
}
