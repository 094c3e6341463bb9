//! Dirichlet solver: minimizes the discrete energy by damped Newton steps
//! with multigrid-preconditioned CG inner solves, falling back to shifted
//! Newton and scaled gradient steps when the Hessian is indefinite.

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::linalg::{dot, CgStatus, StencilMatrix};
use crate::model::{Coefficients, ModelBundle, Nonlinearity};
use crate::multigrid::{mg_pcg, Multigrid};
use crate::operator::EnergyFunctional;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// regularization of `|grad u|` at the final continuation level
    pub eps_reg: f64,
    /// stopping threshold on the max-norm of the interior residual
    pub tol_residual: f64,
    /// Newton steps over all continuation levels
    pub max_iters: usize,
    /// first trial step length in the line search, in (0, 1]
    pub damping: f64,
    /// number of geometric reductions from `1e3 * eps_reg` down to `eps_reg`
    pub continuation_steps: usize,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub max_backtracks: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            eps_reg: 1e-8,
            tol_residual: 1e-8,
            max_iters: 100,
            damping: 1.0,
            continuation_steps: 3,
            cg_tol: 1e-10,
            cg_max_iters: 500,
            max_backtracks: 40,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("solver option {what}")));
        if !(self.eps_reg > 0.0 && self.eps_reg.is_finite()) {
            return bad("eps_reg must be positive");
        }
        if !(self.tol_residual >= 1e-14 && self.tol_residual.is_finite()) {
            return bad("tol_residual must be at least 1e-14");
        }
        if self.max_iters == 0 || self.cg_max_iters == 0 || self.max_backtracks == 0 {
            return bad("iteration limits must be positive");
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad("damping must lie in (0, 1]");
        }
        if !(self.cg_tol > 0.0 && self.cg_tol < 1.0) {
            return bad("cg_tol must lie in (0, 1)");
        }
        Ok(())
    }

    fn eps_schedule(&self, all_quadratic: bool) -> Vec<f64> {
        if all_quadratic || self.continuation_steps == 0 {
            return vec![self.eps_reg];
        }
        let k = self.continuation_steps as f64;
        (0..=self.continuation_steps).map(|j| self.eps_reg * 1e3f64.powf((k - j as f64) / k)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_residual_norm: f64,
    pub energy_trace: Vec<f64>,
    pub converged: bool,
}

fn interior_max_scaled(grid: &Grid, grad: &[f64], mass: &[f64]) -> f64 {
    (0..grid.len()).filter(|&i| !grid.is_boundary(i)).map(|i| (grad[i] / mass[i]).abs()).fold(0.0, f64::max)
}

/// Solves `(H + mu M) d = rhs`, raising `mu` while CG meets negative curvature.
/// Returns `None` when no shift gives a usable direction.
fn shifted_newton_direction(h: &StencilMatrix, mass: &[f64], mu_max: f64, rhs: &[f64], cg_tol: f64, options: &SolverOptions) -> Option<Vec<f64>> {
    let mut shifts = vec![0.0];
    if mu_max > 0.0 {
        shifts.extend([0.1 * mu_max, mu_max, 10.0 * mu_max]);
    }
    for mu in shifts {
        let mut a = h.clone();
        if mu > 0.0 {
            a.add_diagonal(mu, mass);
        }
        let mg = Multigrid::new(&a);
        let mut d = vec![0.0; rhs.len()];
        let out = mg_pcg(&a, &mg, rhs, &mut d, cg_tol, options.cg_max_iters);
        log::debug!("newton cg: shift {mu:.3e}, {:?} after {} iterations, rel. residual {:.2e}", out.status, out.iterations, out.relative_residual);
        match out.status {
            CgStatus::Converged | CgStatus::MaxIterations => return Some(d),
            CgStatus::NegativeCurvature => continue,
        }
    }
    None
}

/// Minimizes the energy with the boundary values of `boundary_data`.
///
/// `initial_guess` must agree with `boundary_data` on the boundary; without
/// one the harmonic extension of the boundary data is used. The returned
/// field equals `boundary_data` on the boundary exactly.
pub fn solve(
    model: &ModelBundle,
    boundary_data: &ScalarField,
    initial_guess: Option<&ScalarField>,
    options: &SolverOptions,
) -> Result<(ScalarField, SolveReport)> {
    options.validate()?;
    let grid = model.grid.clone();
    grid.same_as(boundary_data.grid())?;
    boundary_data.check_finite()?;
    let mut u = match initial_guess {
        Some(guess) => {
            grid.same_as(guess.grid())?;
            guess.check_finite()?;
            for i in 0..grid.len() {
                if grid.is_boundary(i) && guess.get(i) != boundary_data.get(i) {
                    return Err(Error::InvalidArgument(format!("initial guess differs from the boundary data at point {i}")));
                }
            }
            guess.clone()
        }
        None => harmonic_extension(boundary_data, options)?,
    };

    let (_, p_values) = model.pointwise_coefficients();
    let all_quadratic = p_values.iter().all(|&p| p == 2.0);
    let schedule = options.eps_schedule(all_quadratic);
    let slices = model.slice_coordinates();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut residual_norm = f64::INFINITY;
    // inexact Newton: the inner tolerance follows the outer convergence rate
    let mut forcing = 0.1;
    let mut previous_norm = f64::NAN;

    for (level, &eps) in schedule.iter().enumerate() {
        let last = level + 1 == schedule.len();
        let tol = if last { options.tol_residual } else { (options.tol_residual * 1e3).max(1e-6) };
        let functional = EnergyFunctional::new(model, eps)?;
        let mass = functional.mass().to_vec();
        let mut energy = functional.total_energy(&u)?;
        trace.push(energy);
        loop {
            let grad = functional.energy_gradient(&u)?;
            residual_norm = interior_max_scaled(&grid, &grad, &mass);
            log::debug!("eps {eps:.1e}, step {iterations}: energy {energy:.12e}, residual {residual_norm:.3e}");
            if residual_norm <= tol {
                break;
            }
            if iterations >= options.max_iters {
                return Ok((u, SolveReport { iterations, final_residual_norm: residual_norm, energy_trace: trace, converged: false }));
            }
            iterations += 1;

            let rhs: Vec<f64> = grad.iter().enumerate().map(|(i, g)| if grid.is_boundary(i) { 0.0 } else { -g }).collect();
            let h = functional.hessian(&u)?;
            let mu_max = 1.01
                * (0..grid.len())
                    .filter(|&i| !grid.is_boundary(i))
                    .map(|i| model.nonlinearity.f_u(&slices[grid.x_slice_of(i)], u.get(i)))
                    .fold(0.0, f64::max);
            let grad_norm = dot(&rhs, &rhs).sqrt();
            if previous_norm.is_finite() {
                forcing = (0.9 * (grad_norm / previous_norm).powi(2)).min(0.1);
            }
            previous_norm = grad_norm;
            let cg_tol = forcing.max(options.cg_tol);
            let mut direction = shifted_newton_direction(&h, &mass, mu_max, &rhs, cg_tol, options);
            let mut slope = direction.as_ref().map_or(0.0, |d| dot(&grad, d));
            if !(slope < 0.0) {
                // mass-scaled steepest descent
                let d: Vec<f64> = rhs.iter().zip(&mass).map(|(r, m)| r / m).collect();
                slope = dot(&grad, &d);
                direction = Some(d);
            }
            let d = direction.expect("a direction is always set");
            if slope == 0.0 {
                break;
            }

            let mut step = options.damping;
            let mut accepted = None;
            for _ in 0..options.max_backtracks {
                let trial = u.lin_comb(1.0, &ScalarField::from_values_unchecked(&grid, d.clone()), step)?;
                if trial.is_finite() {
                    if let Ok(delta) = functional.energy_difference(&u, &trial) {
                        if delta <= 1e-4 * step * slope {
                            accepted = Some((trial, delta));
                            break;
                        }
                    }
                }
                step *= 0.5;
            }
            if accepted.is_none() {
                // near the solution the energy decrease drowns in roundoff;
                // accept the full step if it reduces the residual and does not
                // raise the energy beyond that roundoff
                let trial = u.lin_comb(1.0, &ScalarField::from_values_unchecked(&grid, d.clone()), options.damping)?;
                if trial.is_finite() {
                    let delta = functional.energy_difference(&u, &trial)?;
                    let new_res = interior_max_scaled(&grid, &functional.energy_gradient(&trial)?, &mass);
                    if delta <= 1e-12 * energy.abs().max(1.0) && new_res < residual_norm {
                        accepted = Some((trial, delta));
                    }
                }
            }
            match accepted {
                Some((trial, _)) => {
                    u = trial;
                    energy = functional.total_energy(&u)?;
                    trace.push(energy);
                }
                None => {
                    log::warn!("line search failed after {} backtracks", options.max_backtracks);
                    return Ok((u, SolveReport { iterations, final_residual_norm: residual_norm, energy_trace: trace, converged: false }));
                }
            }
        }
    }
    Ok((u, SolveReport { iterations, final_residual_norm: residual_norm, energy_trace: trace, converged: true }))
}

/// Discrete harmonic function with the boundary values of `boundary_data`.
pub fn harmonic_extension(boundary_data: &ScalarField, options: &SolverOptions) -> Result<ScalarField> {
    let grid = boundary_data.grid().clone();
    let lift = boundary_data.map(|v| v);
    let lift = {
        let mut vals = lift.into_values();
        for (i, v) in vals.iter_mut().enumerate() {
            if !grid.is_boundary(i) {
                *v = 0.0;
            }
        }
        ScalarField::from_values(&grid, vals)?
    };
    let laplace = ModelBundle::new(Coefficients::constant(1.0, 2.0)?, Nonlinearity::zero(), &grid)?;
    let functional = EnergyFunctional::new(&laplace, options.eps_reg)?;
    let grad = functional.energy_gradient(&lift)?;
    let rhs: Vec<f64> = grad.iter().enumerate().map(|(i, g)| if grid.is_boundary(i) { 0.0 } else { -g }).collect();
    let a = functional.hessian(&lift)?;
    let mg = Multigrid::new(&a);
    let mut x = vec![0.0; grid.len()];
    let out = mg_pcg(&a, &mg, &rhs, &mut x, 1e-8, options.cg_max_iters.max(200));
    if out.status != CgStatus::Converged {
        log::warn!("harmonic extension: CG stopped with {:?}, rel. residual {:.2e}", out.status, out.relative_residual);
    }
    let vals: Vec<f64> = lift.values().iter().zip(&x).map(|(l, v)| l + v).collect();
    ScalarField::from_values(&grid, vals)
}

/// Solves the one-dimensional fiber problem on `model.grid` (which must have
/// a single axis) with end values `ends`.
pub fn solve_1d_profile(model: &ModelBundle, ends: (f64, f64), options: &SolverOptions) -> Result<(ScalarField, SolveReport)> {
    let grid = &model.grid;
    if grid.n() != 1 {
        return Err(Error::InvalidArgument(format!("profile problems are one-dimensional, grid has n = {}", grid.n())));
    }
    let last = grid.len() - 1;
    let boundary = ScalarField::from_values(
        grid,
        (0..grid.len())
            .map(|i| {
                if i == 0 {
                    ends.0
                } else if i == last {
                    ends.1
                } else {
                    0.0
                }
            })
            .collect(),
    )?;
    solve(model, &boundary, None, options)
}

/// Restriction of `model` to the fiber through `x` along y-axis `axis`
/// (index among the y-axes), sampled like the grid of `model`.
pub fn fiber_model(model: &ModelBundle, x: &[f64], axis: usize) -> Result<ModelBundle> {
    let grid = &model.grid;
    if axis >= grid.n_minus_m() {
        return Err(Error::InvalidArgument(format!("fiber axis {axis} out of range")));
    }
    let k = grid.m() + axis;
    let fiber = Grid::fiber(grid.lo(k), grid.hi(k), grid.size(k))?;
    ModelBundle::new(model.coefficients.frozen_at(x), model.nonlinearity.frozen_at(x), &fiber)
}

/// Extends a one-dimensional profile along y-axis `axis` to the whole grid,
/// then imposes `boundary_data` on the boundary. Grids must agree along the
/// profile axis; this is the layer seed used for initial guesses.
pub fn extend_profile(profile: &ScalarField, grid: &Grid, axis: usize, boundary_data: &ScalarField) -> Result<ScalarField> {
    let k = grid.m() + axis;
    let pg = profile.grid();
    if pg.n() != 1 || pg.size(0) != grid.size(k) || pg.lo(0) != grid.lo(k) || pg.hi(0) != grid.hi(k) {
        return Err(Error::InvalidArgument("profile grid does not match the layer axis".into()));
    }
    grid.same_as(boundary_data.grid())?;
    let vals = (0..grid.len()).map(|i| if grid.is_boundary(i) { boundary_data.get(i) } else { profile.get(grid.axis_index(i, k)) }).collect();
    ScalarField::from_values(grid, vals)
}
