//! The stability form `Q(xi) = int <B grad xi, grad xi> - f_u xi^2`, its
//! smallest mass-weighted Rayleigh quotient, and the check that
//! monotonicity in one fiber direction implies stability.

use crate::error::{Error, Result};
use crate::grid::{gradient, ScalarField};
use crate::linalg::{dot, weighted_dot, CgStatus, StencilMatrix};
use crate::model::ModelBundle;
use crate::multigrid::{mg_pcg, Multigrid};
use crate::operator::{default_eps_reg, EnergyFunctional};
use crate::sampling::random_test_function;

/// The assembled second variation at `u` together with the quadrature mass.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    pub matrix: StencilMatrix,
    pub mass: Vec<f64>,
}

impl QuadraticForm {
    /// `<A xi, xi>`.
    pub fn eval(&self, xi: &ScalarField) -> Result<f64> {
        self.matrix.grid().same_as(xi.grid())?;
        xi.check_vanishes_on_boundary()?;
        Ok(self.matrix.quadratic_form(xi.values()))
    }

    /// `int xi^2`.
    pub fn mass_norm2(&self, xi: &[f64]) -> f64 {
        weighted_dot(&self.mass, xi, xi)
    }

    pub fn rayleigh(&self, xi: &[f64]) -> f64 {
        self.matrix.quadratic_form(xi) / self.mass_norm2(xi)
    }
}

/// Symmetric operator `A` with `<A xi, xi> = second_variation(u, xi)` for
/// every boundary-vanishing `xi`.
pub fn quadratic_form(u: &ScalarField, model: &ModelBundle) -> Result<QuadraticForm> {
    quadratic_form_with_eps(u, model, default_eps_reg(u))
}

pub fn quadratic_form_with_eps(u: &ScalarField, model: &ModelBundle, eps: f64) -> Result<QuadraticForm> {
    let functional = EnergyFunctional::new(model, eps)?;
    let matrix = functional.hessian(u)?;
    Ok(QuadraticForm { matrix, mass: functional.mass().to_vec() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    /// smallest `Q(xi) / int xi^2` over boundary-vanishing `xi`
    pub min_rayleigh: f64,
    pub eigen_iterations: usize,
    /// y-axis (index among the y-axes) along which `u` is strictly increasing
    pub monotone_direction_found: Option<usize>,
    /// `|A xi - lambda M xi| / |M xi|` for the returned eigenpair
    pub residual_of_eigenpair: f64,
    pub converged: bool,
    /// tolerance below zero still counted as stable
    pub tol_stability: f64,
}

impl StabilityReport {
    pub fn is_stable(&self) -> bool {
        self.min_rayleigh >= -self.tol_stability
    }
}

/// Smallest eigenpair of `A x = lambda M x` with its residual.
#[derive(Debug, Clone)]
pub struct Eigenpair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn eigen_residual(form: &QuadraticForm, x: &[f64], lambda: f64) -> f64 {
    let mut ax = vec![0.0; x.len()];
    form.matrix.apply(x, &mut ax);
    let interior = form.matrix.interior();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..x.len() {
        if interior[i] {
            let mx = form.mass[i] * x[i];
            num += (ax[i] - lambda * mx).powi(2);
            den += mx * mx;
        }
    }
    (num / den).sqrt()
}

/// Shift-and-invert iteration for the smallest generalized eigenvalue.
///
/// The shift starts at a Gershgorin lower bound and moves towards the
/// current Rayleigh quotient while staying below it; a CG breakdown on a
/// negative direction means the shift passed the bottom of the spectrum and
/// is pulled back.
pub fn smallest_eigenpair(form: &QuadraticForm, eig_tol: f64, max_iters: usize) -> Result<Eigenpair> {
    let grid = form.matrix.grid().clone();
    let interior = form.matrix.interior().to_vec();
    if !interior.iter().any(|&b| b) {
        return Err(Error::InvalidArgument("grid has no interior points".into()));
    }
    // normalized constant-plus-checkerboard start
    let mut x: Vec<f64> = (0..grid.len())
        .map(|i| {
            if !interior[i] {
                return 0.0;
            }
            let parity: usize = grid.multi_index(i).iter().sum();
            1.0 + if parity.is_multiple_of(2) { 0.5 } else { -0.5 }
        })
        .collect();
    let norm = form.mass_norm2(&x).sqrt();
    x.iter_mut().for_each(|v| *v /= norm);

    let lower = form.matrix.gershgorin_lower(&form.mass);
    let mut rho = form.rayleigh(&x);
    let mut sigma = lower.min(rho) - 1e-3 * (rho - lower).abs().max(1.0);
    let mut residual = eigen_residual(form, &x, rho);
    let mut best = (rho, x.clone(), residual);
    let mut last_safe = sigma;
    for it in 1..=max_iters {
        let mut a = form.matrix.clone();
        a.add_diagonal(-sigma, &form.mass);
        let rhs: Vec<f64> = x.iter().zip(&form.mass).map(|(v, m)| v * m).collect();
        let mg = Multigrid::new(&a);
        let mut y = x.clone();
        let out = mg_pcg(&a, &mg, &rhs, &mut y, 1e-12, 2000);
        if out.status == CgStatus::NegativeCurvature {
            // sigma is above the smallest eigenvalue
            sigma = last_safe - (rho - last_safe).abs().max(1e-12);
            last_safe = sigma;
            continue;
        }
        last_safe = sigma;
        let ny = form.mass_norm2(&y).sqrt();
        if !(ny > 0.0 && ny.is_finite()) {
            break;
        }
        // keep the sign of the start vector for reproducible output
        let sgn = if dot(&y, &form.mass) < 0.0 { -1.0 } else { 1.0 };
        x = y.iter().map(|v| sgn * v / ny).collect();
        rho = form.rayleigh(&x);
        residual = eigen_residual(form, &x, rho);
        if residual < best.2 {
            best = (rho, x.clone(), residual);
        }
        log::debug!("shift-invert {it}: sigma {sigma:.10e}, rho {rho:.12e}, residual {residual:.3e}");
        if residual <= eig_tol * rho.abs().max(1.0) {
            return Ok(Eigenpair { value: rho, vector: x, residual, iterations: it, converged: true });
        }
        sigma = rho - (0.5 * (rho - sigma)).max(residual);
    }
    Ok(Eigenpair { value: best.0, vector: best.1, residual: best.2, iterations: max_iters, converged: false })
}

/// Scale of the potential part of the form, `max(1, sup f_u(x, u))`.
fn form_scale(u: &ScalarField, model: &ModelBundle) -> f64 {
    let g = u.grid();
    let slices = model.slice_coordinates();
    (0..g.len()).map(|i| model.nonlinearity.f_u(&slices[g.x_slice_of(i)], u.get(i)).abs()).fold(1.0, f64::max)
}

/// Axis (among the y-axes) along which the central difference of `u` is
/// positive at every interior point.
pub fn monotone_direction(u: &ScalarField) -> Option<usize> {
    let g = u.grid();
    let grad = gradient(u);
    (0..g.n_minus_m()).find(|&j| {
        let comp = grad.component(g.m() + j);
        (0..g.len()).filter(|&i| !g.is_boundary(i)).all(|i| comp.get(i) > 0.0)
    })
}

/// Relative default of the stability tolerance, scaled by `max(1, sup |f_u|)`.
pub const DEFAULT_TOL_STABILITY: f64 = 1e-8;

pub fn min_rayleigh(u: &ScalarField, model: &ModelBundle, eig_tol: f64) -> Result<StabilityReport> {
    min_rayleigh_with_tolerance(u, model, eig_tol, DEFAULT_TOL_STABILITY)
}

/// As [`min_rayleigh`] with the stability tolerance `tol_rel * max(1, sup |f_u|)`.
pub fn min_rayleigh_with_tolerance(u: &ScalarField, model: &ModelBundle, eig_tol: f64, tol_rel: f64) -> Result<StabilityReport> {
    let form = quadratic_form(u, model)?;
    let pair = smallest_eigenpair(&form, eig_tol, 200)?;
    Ok(StabilityReport {
        min_rayleigh: pair.value,
        eigen_iterations: pair.iterations,
        monotone_direction_found: monotone_direction(u),
        residual_of_eigenpair: pair.residual,
        converged: pair.converged,
        tol_stability: tol_rel * form_scale(u, model),
    })
}

/// One instance of `int f_u xi^2 <= int <B grad xi, grad xi>`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainCheck {
    pub potential: f64,
    pub gradient: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Lemma79Verdict {
    /// `u` is not strictly increasing along the requested axis
    NotApplicable {
        min_derivative: f64,
    },
    Checked {
        stable: bool,
        report: StabilityReport,
        chain: Vec<ChainCheck>,
    },
}

impl Lemma79Verdict {
    pub fn holds(&self) -> bool {
        match self {
            Lemma79Verdict::NotApplicable { .. } => false,
            Lemma79Verdict::Checked { stable, chain, .. } => *stable && chain.iter().all(|c| c.holds),
        }
    }
}

/// Checks that `u`, strictly increasing along y-axis `axis`, is stable, and
/// evaluates `int f_u xi^2 <= int <B grad xi, grad xi>` on 10 seeded random `xi`.
pub fn verify_lemma79(u: &ScalarField, model: &ModelBundle, axis: usize, eig_tol: f64) -> Result<Lemma79Verdict> {
    let g = u.grid().clone();
    if axis >= g.n_minus_m() {
        return Err(Error::InvalidArgument(format!("y-axis {axis} out of range")));
    }
    let comp = gradient(u).component(g.m() + axis).clone();
    let min_derivative = (0..g.len()).filter(|&i| !g.is_boundary(i)).map(|i| comp.get(i)).fold(f64::INFINITY, f64::min);
    if !(min_derivative > 0.0) {
        return Ok(Lemma79Verdict::NotApplicable { min_derivative });
    }
    let report = min_rayleigh(u, model, eig_tol)?;
    let form = quadratic_form(u, model)?;
    let slices = model.slice_coordinates();
    let chain = (0..10u64)
        .map(|seed| {
            let xi = random_test_function(&g, 0x5eed_0000 + seed);
            let q = form.matrix.quadratic_form(xi.values());
            let potential: f64 =
                (0..g.len()).map(|i| form.mass[i] * model.nonlinearity.f_u(&slices[g.x_slice_of(i)], u.get(i)) * xi.get(i).powi(2)).sum();
            let gradient = q + potential;
            let holds = potential <= gradient + 1e-10 * (potential.abs() + gradient.abs());
            ChainCheck { potential, gradient, holds }
        })
        .collect();
    Ok(Lemma79Verdict::Checked { stable: report.is_stable(), report, chain })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::model::{exact_example, Coefficients, ExampleSpec, Nonlinearity};
    use crate::operator::second_variation;
    use nalgebra::{DMatrix, SymmetricEigen};

    fn interval(size: usize) -> Grid {
        Grid::fiber(0.0, std::f64::consts::PI, size).unwrap()
    }

    fn model(grid: &Grid, alpha: f64, p: f64, f: Nonlinearity) -> ModelBundle {
        ModelBundle::new(Coefficients::constant(alpha, p).unwrap(), f, grid).unwrap()
    }

    /// Smallest eigenvalue of `M^{-1/2} A M^{-1/2}` by a dense symmetric solver.
    fn dense_min(form: &QuadraticForm) -> f64 {
        let (map, dense) = form.matrix.to_dense();
        let k = map.len();
        let m = DMatrix::from_fn(k, k, |i, j| dense[i][j] / (form.mass[map[i]] * form.mass[map[j]]).sqrt());
        SymmetricEigen::new(m).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn dirichlet_interval_benchmark() {
        let g = interval(65);
        let m = model(&g, 1.0, 2.0, Nonlinearity::zero());
        let u = ScalarField::zeros(&g);
        let rep = min_rayleigh(&u, &m, 1e-10).unwrap();
        assert!(rep.converged);
        let oracle = dense_min(&quadratic_form(&u, &m).unwrap());
        assert!((rep.min_rayleigh - oracle).abs() <= 1e-9 * oracle.abs());
        let h = std::f64::consts::PI / 64.0;
        let exact_discrete = 4.0 / (h * h) * (h / 2.0).sin().powi(2);
        assert!((rep.min_rayleigh - exact_discrete).abs() < 1e-10);

        let fine = interval(513);
        let m = model(&fine, 1.0, 2.0, Nonlinearity::zero());
        let rep = min_rayleigh(&ScalarField::zeros(&fine), &m, 1e-10).unwrap();
        assert!((rep.min_rayleigh - 1.0).abs() < 1e-3);
        // f_u = 1 shifts the bottom of the spectrum to 0
        let shifted = model(&fine, 1.0, 2.0, Nonlinearity::polynomial(vec![0.0, 1.0], 0.0));
        let rep = min_rayleigh(&ScalarField::zeros(&fine), &shifted, 1e-10).unwrap();
        assert!(rep.min_rayleigh.abs() < 1e-3);
    }

    #[test]
    fn unstable_linear_problem_is_detected() {
        let g = interval(129);
        let m = model(&g, 1.0, 2.0, Nonlinearity::polynomial(vec![0.0, 3.0], 0.0));
        let rep = min_rayleigh(&ScalarField::zeros(&g), &m, 1e-10).unwrap();
        assert!((rep.min_rayleigh + 2.0).abs() < 1e-3);
        assert!(!rep.is_stable());
        // u = 0 is not monotone, so the monotonicity criterion does not apply
        let v = verify_lemma79(&ScalarField::zeros(&g), &m, 0, 1e-10).unwrap();
        assert!(matches!(v, Lemma79Verdict::NotApplicable { .. }));
    }

    #[test]
    fn quadratic_form_matches_second_variation() {
        let g = Grid::new(1, 1, &[9, 11], &[(-1.0, 1.0), (-1.0, 1.0)]).unwrap();
        let m = model(&g, 1.0, 3.0, Nonlinearity::allen_cahn(0.0));
        let u = ScalarField::from_fn(&g, |x| (x[1] + 0.3 * x[0]).sin() + 0.2 * x[0] * x[0]);
        let form = quadratic_form(&u, &m).unwrap();
        assert_eq!(form.matrix.symmetry_defect(), 0.0);
        for seed in 0..20 {
            let xi = random_test_function(&g, seed);
            let a = form.eval(&xi).unwrap();
            let b = second_variation(&u, &xi, &m).unwrap();
            assert!((a - b).abs() <= 1e-12 * b.abs());
        }
        // f_u = c shifts by -c int xi^2
        let base = model(&g, 1.0, 2.0, Nonlinearity::zero());
        let shifted = model(&g, 1.0, 2.0, Nonlinearity::polynomial(vec![0.0, 2.5], 0.0));
        let xi = random_test_function(&g, 99);
        let f0 = quadratic_form(&u, &base).unwrap();
        let f1 = quadratic_form(&u, &shifted).unwrap();
        let expect = f0.eval(&xi).unwrap() - 2.5 * f0.mass_norm2(xi.values());
        assert!((f1.eval(&xi).unwrap() - expect).abs() < 1e-12 * expect.abs().max(1.0));
    }

    #[test]
    fn iterative_matches_dense_on_layer_problem() {
        let g = Grid::new(1, 1, &[13, 41], &[(-2.0, 2.0), (-6.0, 6.0)]).unwrap();
        let (u, m) = exact_example(&ExampleSpec::tanh_layer(vec![1.0]), &g).unwrap();
        let form = quadratic_form(&u, &m).unwrap();
        let pair = smallest_eigenpair(&form, 1e-10, 200).unwrap();
        let oracle = dense_min(&form);
        assert!(pair.converged);
        assert!((pair.value - oracle).abs() <= 1e-9 * oracle.abs(), "{} vs {oracle}", pair.value);
    }

    #[test]
    fn scaling_alpha_scales_spectrum() {
        let g = Grid::new(1, 1, &[9, 17], &[(0.0, 1.0), (0.0, 2.0)]).unwrap();
        let u = ScalarField::from_fn(&g, |x| x[0] + 2.0 * x[1]);
        let a = min_rayleigh(&u, &model(&g, 1.0, 3.0, Nonlinearity::zero()), 1e-11).unwrap();
        let b = min_rayleigh(&u, &model(&g, 2.5, 3.0, Nonlinearity::zero()), 1e-11).unwrap();
        assert!((b.min_rayleigh - 2.5 * a.min_rayleigh).abs() < 1e-8 * b.min_rayleigh);
    }

    #[test]
    fn monotone_layer_is_stable() {
        let g = Grid::with_spacing(1, 1, &[(-4.0, 4.0), (-8.0, 8.0)], 0.25).unwrap();
        let (u, m) = exact_example(&ExampleSpec::tanh_layer(vec![1.0]), &g).unwrap();
        let v = verify_lemma79(&u, &m, 0, 1e-10).unwrap();
        assert!(v.holds(), "{v:?}");
        if let Lemma79Verdict::Checked { report, .. } = v {
            assert!(report.min_rayleigh >= -1e-8);
            assert_eq!(report.monotone_direction_found, Some(0));
        }
    }
}
