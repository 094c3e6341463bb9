//! Both sides of the curvature-weighted Poincaré inequality
//!
//! `int_R alpha |grad u|^(p-2) (S + K^2 |grad_y u|^2 + |grad_L |grad_y u||^2
//!     + (p-2) T / |grad u|^2) phi^2  <=  int |grad_y u|^2 <B(x, grad u) grad phi, grad phi>`,
//!
//! the logarithmic cutoff family, the annulus bound and energy growth on balls.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{compute_geometry, GeometryFields, GeometryOptions};
use crate::grid::{gradient, Grid, ScalarField};
use crate::model::ModelBundle;
use crate::operator::assemble_b;
use crate::sampling::{random_ball_function, random_test_function};
use crate::stability::StabilityReport;

#[derive(Debug, Clone, PartialEq)]
pub struct PoincareOptions {
    pub geometry: GeometryOptions,
    /// relative tolerance on the slack, scaled by `|lhs| + |rhs| + 1`
    pub tol_poincare: f64,
    /// additional tolerance per unit of the largest grid spacing
    pub tol_poincare_h: f64,
}

impl Default for PoincareOptions {
    fn default() -> Self {
        PoincareOptions { geometry: GeometryOptions::default(), tol_poincare: 1e-6, tol_poincare_h: 0.0 }
    }
}

/// Integrals of the four left-hand terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Breakdown {
    pub s_term: f64,
    pub k_term: f64,
    pub tangential_term: f64,
    pub t_term: f64,
}

impl Breakdown {
    pub fn total(&self) -> f64 {
        self.s_term + self.k_term + self.tangential_term + self.t_term
    }

    pub fn min_term(&self) -> f64 {
        self.s_term.min(self.k_term).min(self.tangential_term).min(self.t_term)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoincareReport {
    pub phi_descriptor: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`
    pub slack: f64,
    pub breakdown: Breakdown,
    /// the stability hypothesis held for `u`; reports without it say nothing
    /// about the inequality
    pub hypothesis_ok: bool,
    pub tolerance: f64,
    /// `slack >= -tolerance`
    pub holds: bool,
}

fn check_phi(u: &ScalarField, phi: &ScalarField) -> Result<()> {
    u.grid().same_as(phi.grid())?;
    phi.check_finite()?;
    phi.check_vanishes_on_boundary()
}

/// Left side over the region of `geo`, split into its four terms; `lhs` is
/// their sum.
pub fn poincare_lhs(u: &ScalarField, model: &ModelBundle, geo: &GeometryFields, phi: &ScalarField) -> Result<(f64, Breakdown)> {
    check_phi(u, phi)?;
    u.grid().same_as(geo.grid())?;
    u.grid().same_as(&model.grid)?;
    let g = u.grid();
    let grad = gradient(u);
    let (alpha, p) = model.pointwise_coefficients();
    let max_grad = (0..g.len()).map(|i| grad.components().iter().map(|c| c.get(i).powi(2)).sum::<f64>()).fold(0.0, f64::max).sqrt();
    let eps = 1e-8 * max_grad.max(1.0);
    let mut b = Breakdown::default();
    for i in geo.region_mask.indices() {
        let phi2 = phi.get(i).powi(2);
        if phi2 == 0.0 {
            continue;
        }
        let gu2: f64 = grad.components().iter().map(|c| c.get(i).powi(2)).sum();
        let w = g.trapezoid_weight(i) * alpha[i] * weight_power(gu2, p[i]) * phi2;
        let gy = geo.grad_y_norm.get(i);
        b.s_term += w * geo.s.get(i);
        b.k_term += w * geo.ksq.get(i) * gy * gy;
        b.tangential_term += w * geo.tangential_grad_sq.get(i);
        if p[i] != 2.0 {
            b.t_term += w * (p[i] - 2.0) * geo.t.get(i) / (gu2 + eps * eps);
        }
    }
    Ok((b.total(), b))
}

/// `|eta|^(p-2)` from `|eta|^2`, with `0^0 = 1`.
fn weight_power(norm2: f64, p: f64) -> f64 {
    if p == 2.0 {
        1.0
    } else {
        norm2.powf(0.5 * (p - 2.0))
    }
}

/// Right side over the whole box.
pub fn poincare_rhs(u: &ScalarField, model: &ModelBundle, phi: &ScalarField) -> Result<f64> {
    check_phi(u, phi)?;
    u.grid().same_as(&model.grid)?;
    let g = u.grid();
    let (n, m) = (g.n(), g.m());
    let grad = gradient(u);
    let grad_phi = gradient(phi);
    let slices = model.slice_coordinates();
    let mut total = 0.0;
    let mut eta = vec![0.0; n];
    let mut dphi = vec![0.0; n];
    for i in 0..g.len() {
        for k in 0..n {
            eta[k] = grad.at(i, k);
            dphi[k] = grad_phi.at(i, k);
        }
        if dphi.iter().all(|v| *v == 0.0) {
            continue;
        }
        let gy2: f64 = eta[m..].iter().map(|v| v * v).sum();
        let bm = assemble_b(&slices[g.x_slice_of(i)], &eta, &model.coefficients);
        let mut q = 0.0;
        for r in 0..n {
            for c in 0..n {
                q += bm[r * n + c] * dphi[r] * dphi[c];
            }
        }
        total += g.trapezoid_weight(i) * gy2 * q;
    }
    Ok(total)
}

/// Evaluates the inequality for every test function, marking the reports
/// hypothesis-failed when `stability` says `u` is not stable.
pub fn verify_poincare(
    u: &ScalarField,
    model: &ModelBundle,
    phis: &[(String, ScalarField)],
    stability: &StabilityReport,
    opts: &PoincareOptions,
) -> Result<Vec<PoincareReport>> {
    let geo = compute_geometry(u, &opts.geometry)?;
    let h = u.grid().spacings().iter().cloned().fold(0.0, f64::max);
    let hypothesis_ok = stability.is_stable();
    phis.iter()
        .map(|(name, phi)| {
            let (lhs, breakdown) = poincare_lhs(u, model, &geo, phi)?;
            let rhs = poincare_rhs(u, model, phi)?;
            let slack = rhs - lhs;
            let tolerance = opts.tol_poincare * (lhs.abs() + rhs.abs() + 1.0) + opts.tol_poincare_h * h;
            Ok(PoincareReport { phi_descriptor: name.clone(), lhs, rhs, slack, breakdown, hypothesis_ok, tolerance, holds: slack >= -tolerance })
        })
        .collect()
}

/// Test functions from a comma-separated description:
/// `random:N` (N seeded random functions), `cutoff:R` (the logarithmic
/// cutoff) and `ball:R:N` (N seeded random functions supported in `B_R`).
pub fn phi_suite(grid: &Grid, spec: &str, seed: u64) -> Result<Vec<(String, ScalarField)>> {
    let bad = |item: &str| Error::InvalidArgument(format!("bad test-function item '{item}'"));
    let mut out = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let parts: Vec<&str> = item.split(':').collect();
        match parts.as_slice() {
            ["random", count] => {
                let count: u64 = count.parse().map_err(|_| bad(item))?;
                for k in 0..count {
                    let s = seed.wrapping_add(k);
                    out.push((format!("random seed={s}"), random_test_function(grid, s)));
                }
            }
            ["cutoff", r] => {
                let r: f64 = r.parse().map_err(|_| bad(item))?;
                out.push((format!("cutoff R={r}"), cutoff_phi(grid, r)?.phi));
            }
            ["ball", r, count] => {
                let r: f64 = r.parse().map_err(|_| bad(item))?;
                let count: u64 = count.parse().map_err(|_| bad(item))?;
                if !(r > 0.0 && r <= grid.inscribed_radius()) {
                    return Err(Error::InvalidArgument(format!("ball radius {r} does not fit in the box")));
                }
                for k in 0..count {
                    let s = seed.wrapping_add(k);
                    out.push((format!("ball R={r} seed={s}"), random_ball_function(grid, r, s)));
                }
            }
            _ => return Err(bad(item)),
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("empty test-function suite".into()));
    }
    Ok(out)
}

/// The logarithmic cutoff and the measured constant of its gradient bound.
#[derive(Debug, Clone)]
pub struct CutoffPhi {
    pub phi: ScalarField,
    /// `max |grad phi_R| |X|` over the annulus `sqrt(R) <= |X| <= R`
    pub c2: f64,
}

/// `log R` on `|X| <= sqrt(R)`, `2 log(R / |X|)` up to `|X| = R`, zero beyond.
pub fn cutoff_value(radius: f64, r: f64) -> f64 {
    if radius <= r.sqrt() {
        r.ln()
    } else if radius < r {
        2.0 * (r / radius).ln()
    } else {
        0.0
    }
}

pub fn cutoff_phi(grid: &Grid, r: f64) -> Result<CutoffPhi> {
    if !(r > 1.0) {
        return Err(Error::InvalidArgument(format!("cutoff radius must exceed 1, got {r}")));
    }
    if r > grid.inscribed_radius() {
        return Err(Error::InvalidArgument(format!("cutoff radius {r} exceeds the inscribed radius {} of the box", grid.inscribed_radius())));
    }
    let phi = ScalarField::from_values(grid, (0..grid.len()).map(|i| cutoff_value(grid.radius(i), r)).collect())?;
    let grad = gradient(&phi);
    let rs = r.sqrt();
    let c2 = (0..grid.len())
        .filter(|&i| (rs..=r).contains(&grid.radius(i)))
        .map(|i| grad.components().iter().map(|c| c.get(i).powi(2)).sum::<f64>().sqrt() * grid.radius(i))
        .fold(0.0, f64::max);
    Ok(CutoffPhi { phi, c2 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnulusCheck {
    /// `int_{sqrt(R) <= |X| <= R} h / |X|^2`
    pub lhs: f64,
    /// `int_sqrt(R)^R t^-3 eta(t) dt + eta(R) / R^2`, `eta(rho) = 2 int_{B_rho} h`
    pub rhs: f64,
    pub ok: bool,
}

/// Both sides of the annulus bound by trapezoid quadrature. With the
/// quadrature, `eta` is a step function of the radius, so the `t`-integral
/// is evaluated exactly: a point at radius `r <= R` contributes
/// `w h (1 / max(r, sqrt R)^2 - 1 / R^2)` to it.
pub fn annulus_bound_check(h: &ScalarField, r: f64) -> Result<AnnulusCheck> {
    let g = h.grid();
    h.check_finite()?;
    if let Some(i) = h.values().iter().position(|v| *v < 0.0) {
        return Err(Error::InvalidArgument(format!("h must be nonnegative, h[{i}] = {}", h.get(i))));
    }
    if !(r > 1.0) || r > g.inscribed_radius() {
        return Err(Error::InvalidArgument(format!("radius {r} must exceed 1 and fit in the box (inscribed radius {})", g.inscribed_radius())));
    }
    let rs = r.sqrt();
    let (mut lhs, mut t_integral, mut eta_r) = (0.0, 0.0, 0.0);
    for i in 0..g.len() {
        let rad = g.radius(i);
        if rad > r {
            continue;
        }
        let wh = g.trapezoid_weight(i) * h.get(i);
        if rad >= rs {
            lhs += wh / (rad * rad);
        }
        t_integral += wh * (1.0 / rad.max(rs).powi(2) - 1.0 / (r * r));
        eta_r += 2.0 * wh;
    }
    let rhs = t_integral + eta_r / (r * r);
    Ok(AnnulusCheck { lhs, rhs, ok: lhs <= rhs * (1.0 + 1e-12) })
}

/// Growth rate a field is compared against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundKind {
    /// `R^2`
    Quadratic,
    /// `R^(n-1)`
    NMinusOne,
    /// `R^(n-sigma)`
    NMinusSigma(f64),
}

impl BoundKind {
    pub fn exponent(&self, n: usize) -> f64 {
        match self {
            BoundKind::Quadratic => 2.0,
            BoundKind::NMinusOne => n as f64 - 1.0,
            BoundKind::NMinusSigma(s) => n as f64 - s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthReport {
    pub radii: Vec<f64>,
    /// `int_{B_R} alpha |grad u|^p`
    pub energies: Vec<f64>,
    /// least-squares slope of `log E` against `log R`; `None` when some energy vanishes
    pub fitted_slope: Option<f64>,
    pub bound_kind: BoundKind,
    pub bound_exponent: f64,
    /// slope within `0.1` of or below the bound exponent
    pub within_bound: Option<bool>,
}

pub fn energy_growth(u: &ScalarField, model: &ModelBundle, radii: &[f64], bound_kind: BoundKind) -> Result<GrowthReport> {
    u.grid().same_as(&model.grid)?;
    let g = u.grid();
    if radii.len() < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 radii, got {}", radii.len())));
    }
    if radii.windows(2).any(|w| !(w[1] > w[0])) || !(radii[0] > 0.0) {
        return Err(Error::InvalidArgument("radii must be positive and strictly increasing".into()));
    }
    if radii[radii.len() - 1] > g.inscribed_radius() {
        return Err(Error::InvalidArgument(format!(
            "radius {} exceeds the inscribed radius {} of the box",
            radii[radii.len() - 1],
            g.inscribed_radius()
        )));
    }
    let grad = gradient(u);
    let (alpha, p) = model.pointwise_coefficients();
    let density: Vec<f64> = (0..g.len())
        .map(|i| {
            let n2: f64 = grad.components().iter().map(|c| c.get(i).powi(2)).sum();
            g.trapezoid_weight(i) * alpha[i] * n2.powf(0.5 * p[i])
        })
        .collect();
    let energies: Vec<f64> = radii.iter().map(|&r| (0..g.len()).filter(|&i| g.radius(i) <= r).map(|i| density[i]).sum()).collect();
    let fitted_slope = if energies.iter().all(|e| *e > 0.0) {
        let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
        let ys: Vec<f64> = energies.iter().map(|e| e.ln()).collect();
        Some(least_squares_slope(&xs, &ys))
    } else {
        None
    };
    let bound_exponent = bound_kind.exponent(g.n());
    Ok(GrowthReport {
        radii: radii.to_vec(),
        energies,
        fitted_slope,
        bound_kind,
        bound_exponent,
        within_bound: fitted_slope.map(|s| s <= bound_exponent + 0.1),
    })
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorNormCheck {
    pub samples: usize,
    /// largest `<B w, w> / (alpha (p-1) |eta|^(p-2) |w|^2)`
    pub max_ratio: f64,
    pub ok: bool,
}

/// Samples random grid points, gradients `eta` and directions `w` and
/// compares `<B(x, eta) w, w>` with `alpha (p-1) |eta|^(p-2) |w|^2`.
pub fn operator_norm_check(model: &ModelBundle, samples: usize, seed: u64) -> OperatorNormCheck {
    let g = &model.grid;
    let n = g.n();
    let slices = model.slice_coordinates();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_ratio: f64 = 0.0;
    for _ in 0..samples {
        let i = rng.random_range(0..g.len());
        let x = &slices[g.x_slice_of(i)];
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let eta: Vec<f64> = (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = assemble_b(x, &eta, &model.coefficients);
        let mut q = 0.0;
        for r in 0..n {
            for c in 0..n {
                q += b[r * n + c] * w[r] * w[c];
            }
        }
        let p = model.coefficients.p(x);
        let eta2: f64 = eta.iter().map(|v| v * v).sum();
        let w2: f64 = w.iter().map(|v| v * v).sum();
        let bound = model.coefficients.alpha(x) * (p - 1.0) * weight_power(eta2, p) * w2;
        if bound > 0.0 {
            max_ratio = max_ratio.max(q / bound);
        }
    }
    OperatorNormCheck { samples, max_ratio, ok: max_ratio <= 1.0 + 1e-12 }
}
