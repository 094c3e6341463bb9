//! Level-set geometry along the y-fibers: the region where `grad_y u` does
//! not vanish, the tangential gradient, principal curvatures, the quantities
//! S, T, U, the parallelism criterion and a fit of the layer direction.
//!
//! First and second derivatives of `u` come from [`gradient`] and
//! [`hessian`]. `|grad_y u|` is smoothed to `sqrt(|grad_y u|^2 + eps^2)` and
//! then differentiated by finite differences, so the algebraic identities
//! between the quantities hold only up to discretization error, which is what
//! the identity check measures. Values at points outside the region are NaN.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{gradient, hessian, Grid, MatrixField, Region, ScalarField, VectorField};

/// Relative default for the gradient threshold: `theta = 1e-4 max |grad_y u|`.
pub const DEFAULT_THETA_REL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryOptions {
    /// absolute threshold on `|grad_y u|`; `None` uses `theta_rel * max |grad_y u|`
    pub theta_grad: Option<f64>,
    pub theta_rel: f64,
    /// smoothing of `|grad_y u|` relative to the threshold
    pub eps_rel: f64,
    /// relative tolerance of the parallelism test
    pub tol_par: f64,
}

impl Default for GeometryOptions {
    fn default() -> Self {
        GeometryOptions { theta_grad: None, theta_rel: DEFAULT_THETA_REL, eps_rel: 1e-2, tol_par: 1e-6 }
    }
}

/// Pointwise geometric quantities of one field.
#[derive(Debug, Clone)]
pub struct GeometryFields {
    /// interior points with `|grad_y u| > theta_grad`
    pub region_mask: Region,
    /// points of the region whose axis neighbours are all in the region; the
    /// remaining region points are near its edge, where the differenced
    /// `|grad_y u|` sees the threshold band
    pub core_mask: Region,
    pub s: ScalarField,
    pub t: ScalarField,
    pub u: ScalarField,
    /// `K^2`, the sum of squared principal curvatures
    pub ksq: ScalarField,
    /// principal curvatures in ascending order, `n - m - 1` fields
    pub kappa: Vec<ScalarField>,
    /// `|grad_L |grad_y u||^2`
    pub tangential_grad_sq: ScalarField,
    /// unit normal `grad_y u / |grad_y u|`, one field per y-axis
    pub normal: VectorField,
    /// `|grad_y u|` at every point
    pub grad_y_norm: ScalarField,
    /// gradient of the smoothed `|grad_y u|`, all `n` components
    pub grad_of_grad_y_norm: VectorField,
    /// `sum_j |grad u_{y_j}|^2`, the natural size of S, U and `K^2 |grad_y u|^2`
    pub hessian_y_sq: ScalarField,
    pub theta_grad: f64,
    pub eps_smooth: f64,
    /// largest relative bias `eps^2 / (2 |grad_y u|^2)` of the smoothing on the region
    pub smoothing_bias: f64,
    /// points where the curvature eigen-solver did not converge
    pub eigen_failures: usize,
}

impl GeometryFields {
    pub fn grid(&self) -> &Grid {
        self.region_mask.grid()
    }
}

fn nan_field(grid: &Grid) -> Vec<f64> {
    vec![f64::NAN; grid.len()]
}

fn y_gradient_norm(grad: &VectorField) -> ScalarField {
    let g = grad.grid();
    grad.norm_over(g.m()..g.n())
}

/// Interior points with `|grad_y u| > theta_grad`.
pub fn region(u: &ScalarField, theta_grad: f64) -> Result<Region> {
    if !(theta_grad > 0.0) {
        return Err(Error::InvalidArgument(format!("theta_grad must be positive, got {theta_grad}")));
    }
    let g = u.grid();
    let norm = y_gradient_norm(&gradient(u));
    let mask = (0..g.len()).map(|i| !g.is_boundary(i) && norm.get(i) > theta_grad).collect();
    Region::custom(g, mask, format!("|grad_y u| > {theta_grad:e}"))
}

fn region_core(region: &Region) -> Result<Region> {
    let g = region.grid();
    let mask = (0..g.len())
        .map(|i| {
            region.contains(i)
                && (0..g.n()).all(|k| {
                    let s = g.stride(k);
                    region.contains(i - s) && region.contains(i + s)
                })
        })
        .collect();
    Region::custom(g, mask, "region core")
}

/// `grad_L G = grad_y G - (grad_y G . nu) nu` on the region of `u`
/// (y-components; NaN elsewhere).
pub fn tangential_gradient(u: &ScalarField, field: &ScalarField, theta_grad: f64) -> Result<VectorField> {
    u.grid().same_as(field.grid())?;
    let g = u.grid();
    let mask = region(u, theta_grad)?;
    let grad_u = gradient(u);
    let grad_f = gradient(field);
    let (m, d) = (g.m(), g.n_minus_m());
    let mut comps = vec![nan_field(g); d];
    for i in mask.indices() {
        let a: Vec<f64> = (0..d).map(|j| grad_u.at(i, m + j)).collect();
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nu: Vec<f64> = a.iter().map(|v| v / norm).collect();
        let gy: Vec<f64> = (0..d).map(|j| grad_f.at(i, m + j)).collect();
        let proj = project(&gy, &nu);
        for j in 0..d {
            comps[j][i] = proj[j];
        }
    }
    VectorField::new(comps.into_iter().map(|c| ScalarField::from_values_unchecked(g, c)).collect())
}

/// `v - (v . nu) nu`.
fn project(v: &[f64], nu: &[f64]) -> Vec<f64> {
    let dot: f64 = v.iter().zip(nu).map(|(a, b)| a * b).sum();
    v.iter().zip(nu).map(|(a, b)| a - dot * b).collect()
}

/// Eigenvalues of the shape operator `P Y P / |a|` restricted to the tangent
/// space, ascending; `None` if the eigen-solver fails.
fn principal_curvatures(yy: &[f64], nu: &[f64], norm: f64) -> Option<Vec<f64>> {
    let d = nu.len();
    match d {
        1 => Some(Vec::new()),
        2 => {
            let t = [-nu[1], nu[0]];
            let k = (t[0] * (yy[0] * t[0] + yy[1] * t[1]) + t[1] * (yy[2] * t[0] + yy[3] * t[1])) / norm;
            Some(vec![k])
        }
        _ => {
            let p = DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { 0.0 } - nu[i] * nu[j]);
            let y = DMatrix::from_row_slice(d, d, yy);
            let shape = &p * y * &p / norm;
            let eig = SymmetricEigen::try_new(shape, 1e-14, 200)?;
            // drop the eigenvalue belonging to the normal direction
            let normal_col = (0..d)
                .max_by(|&a, &b| {
                    let da: f64 = (0..d).map(|r| eig.eigenvectors[(r, a)] * nu[r]).sum::<f64>().abs();
                    let db: f64 = (0..d).map(|r| eig.eigenvectors[(r, b)] * nu[r]).sum::<f64>().abs();
                    da.total_cmp(&db)
                })
                .expect("d >= 3");
            let mut k: Vec<f64> = (0..d).filter(|&c| c != normal_col).map(|c| eig.eigenvalues[c]).collect();
            k.sort_by(f64::total_cmp);
            Some(k)
        }
    }
}

struct PointGeometry {
    s: f64,
    t: f64,
    u: f64,
    ksq: f64,
    tang: f64,
    hy: f64,
    nu: Vec<f64>,
    kappa: Option<Vec<f64>>,
}

fn point_geometry(i: usize, grid: &Grid, grad: &VectorField, hess: &MatrixField, grad_g: &VectorField) -> PointGeometry {
    let (n, m, d) = (grid.n(), grid.m(), grid.n_minus_m());
    let a: Vec<f64> = (0..d).map(|j| grad.at(i, m + j)).collect();
    let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nu: Vec<f64> = a.iter().map(|v| v / norm).collect();
    let h = hess.at(i);
    let dg: Vec<f64> = (0..n).map(|k| grad_g.at(i, k)).collect();
    let du: Vec<f64> = (0..n).map(|k| grad.at(i, k)).collect();

    // S = sum_ij u_{x_i y_j}^2 - |grad_x |grad_y u||^2
    let mut s = 0.0;
    for xi in 0..m {
        for j in 0..d {
            s += h[xi * n + m + j].powi(2);
        }
        s -= dg[xi] * dg[xi];
    }
    // zeta_j = grad u . grad u_{y_j}; T = |zeta|^2 - (grad u . grad |grad_y u|)^2
    let zeta: Vec<f64> = (0..d).map(|j| (0..n).map(|k| du[k] * h[k * n + m + j]).sum()).collect();
    let du_dg: f64 = du.iter().zip(&dg).map(|(a, b)| a * b).sum();
    let t = zeta.iter().map(|z| z * z).sum::<f64>() - du_dg * du_dg;
    // U = |grad |grad_y u||^2 - sum_j |grad u_{y_j}|^2
    let hy: f64 = (0..n).map(|k| (0..d).map(|j| h[k * n + m + j].powi(2)).sum::<f64>()).sum();
    let u = dg.iter().map(|v| v * v).sum::<f64>() - hy;
    // K^2 = |P Y P|_F^2 / |a|^2 with Y the y-block of the Hessian
    let yy: Vec<f64> = (0..d * d).map(|q| h[(m + q / d) * n + m + q % d]).collect();
    let ksq = if d == 1 {
        0.0
    } else {
        let ynu: Vec<f64> = (0..d).map(|r| (0..d).map(|c| yy[r * d + c] * nu[c]).sum()).collect();
        let nyn: f64 = ynu.iter().zip(&nu).map(|(a, b)| a * b).sum();
        let mut f2 = 0.0;
        for r in 0..d {
            for c in 0..d {
                let pyp = yy[r * d + c] - nu[r] * ynu[c] - ynu[r] * nu[c] + nu[r] * nu[c] * nyn;
                f2 += pyp * pyp;
            }
        }
        f2 / (norm * norm)
    };
    let tang_vec = project(&dg[m..], &nu);
    let tang = if d == 1 { 0.0 } else { tang_vec.iter().map(|v| v * v).sum() };
    let kappa = principal_curvatures(&yy, &nu, norm);
    PointGeometry { s, t, u, ksq, tang, hy, nu, kappa }
}

/// All geometric fields of `u`.
pub fn compute_geometry(u: &ScalarField, opts: &GeometryOptions) -> Result<GeometryFields> {
    u.check_finite()?;
    let g = u.grid().clone();
    let (n, m, d) = (g.n(), g.m(), g.n_minus_m());
    if m == 0 {
        return Err(Error::InvalidArgument("geometry needs at least one x-axis".into()));
    }
    for k in 0..n {
        if g.size(k) < 5 {
            return Err(Error::InvalidGrid(format!("geometry needs at least 5 points per axis, axis {k} has {}", g.size(k))));
        }
    }
    let grad = gradient(u);
    let norm = y_gradient_norm(&grad);
    let max_norm = norm.values().iter().cloned().fold(0.0, f64::max);
    let theta = match opts.theta_grad {
        Some(t) => t,
        None => opts.theta_rel * max_norm,
    };
    if !(theta > 0.0) {
        // grad_y u vanishes identically; the region is empty
        log::warn!("grad_y u vanishes identically; empty geometry region");
    }
    let mask: Vec<bool> = (0..g.len()).map(|i| !g.is_boundary(i) && norm.get(i) > theta && theta > 0.0).collect();
    let region_mask = Region::custom(&g, mask, "grad_y u != 0")?;
    let core_mask = region_core(&region_mask)?;

    let eps = opts.eps_rel * theta;
    let smoothed = norm.map(|v| (v * v + eps * eps).sqrt());
    let grad_g = gradient(&smoothed);
    let hess = hessian(u);

    let idx: Vec<usize> = region_mask.indices().collect();
    let points: Vec<PointGeometry> = idx.par_iter().map(|&i| point_geometry(i, &g, &grad, &hess, &grad_g)).collect();

    let mut s = nan_field(&g);
    let mut t = nan_field(&g);
    let mut uu = nan_field(&g);
    let mut ksq = nan_field(&g);
    let mut tang = nan_field(&g);
    let mut hy = nan_field(&g);
    let mut nu = vec![nan_field(&g); d];
    let mut kappa = vec![nan_field(&g); d - 1];
    let mut eigen_failures = 0;
    let mut smoothing_bias: f64 = 0.0;
    for (&i, p) in idx.iter().zip(&points) {
        s[i] = p.s;
        t[i] = p.t;
        uu[i] = p.u;
        ksq[i] = p.ksq;
        tang[i] = p.tang;
        hy[i] = p.hy;
        for j in 0..d {
            nu[j][i] = p.nu[j];
        }
        match &p.kappa {
            Some(k) => {
                for (j, v) in k.iter().enumerate() {
                    kappa[j][i] = *v;
                }
            }
            None => eigen_failures += 1,
        }
        smoothing_bias = smoothing_bias.max(eps * eps / (2.0 * norm.get(i).powi(2)));
    }
    let field = |v: Vec<f64>| ScalarField::from_values_unchecked(&g, v);
    Ok(GeometryFields {
        region_mask,
        core_mask,
        s: field(s),
        t: field(t),
        u: field(uu),
        ksq: field(ksq),
        kappa: kappa.into_iter().map(field).collect(),
        tangential_grad_sq: field(tang),
        normal: VectorField::new(nu.into_iter().map(field).collect())?,
        grad_y_norm: norm,
        grad_of_grad_y_norm: grad_g,
        hessian_y_sq: field(hy),
        theta_grad: theta,
        eps_smooth: eps,
        smoothing_bias,
        eigen_failures,
    })
}

pub fn compute_s(u: &ScalarField) -> Result<ScalarField> {
    Ok(compute_geometry(u, &GeometryOptions::default())?.s)
}

pub fn compute_t(u: &ScalarField) -> Result<ScalarField> {
    Ok(compute_geometry(u, &GeometryOptions::default())?.t)
}

pub fn compute_u(u: &ScalarField) -> Result<ScalarField> {
    Ok(compute_geometry(u, &GeometryOptions::default())?.u)
}

/// `K^2` and the principal curvatures.
pub fn curvatures(u: &ScalarField) -> Result<(ScalarField, Vec<ScalarField>)> {
    let geo = compute_geometry(u, &GeometryOptions::default())?;
    Ok((geo.ksq, geo.kappa))
}

/// Defect of `U + S = -(K^2 |grad_y u|^2 + |grad_L |grad_y u||^2)`.
#[derive(Debug, Clone)]
pub struct IdentityDefect {
    /// pointwise `|U + S + K^2 |grad_y u|^2 + |grad_L|grad_y u||^2|` divided by
    /// the local scale `sum_j |grad u_{y_j}|^2 + |grad |grad_y u||^2`, floored
    /// at one percent of its maximum over the region; NaN off the region
    pub relative: ScalarField,
    /// maximum of `relative` over the core of the region
    pub max_relative: f64,
    pub max_absolute: f64,
}

pub fn verify_identity_sz(geo: &GeometryFields) -> IdentityDefect {
    let g = geo.grid().clone();
    let scale: Vec<f64> = (0..g.len())
        .map(|i| {
            if !geo.region_mask.contains(i) {
                return f64::NAN;
            }
            let dg: f64 = geo.grad_of_grad_y_norm.components().iter().map(|c| c.get(i).powi(2)).sum();
            geo.hessian_y_sq.get(i) + dg
        })
        .collect();
    let floor = 1e-2 * geo.region_mask.indices().map(|i| scale[i]).fold(0.0, f64::max);
    let mut rel = nan_field(&g);
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for i in geo.region_mask.indices() {
        let a = geo.grad_y_norm.get(i);
        let defect = (geo.u.get(i) + geo.s.get(i) + geo.ksq.get(i) * a * a + geo.tangential_grad_sq.get(i)).abs();
        let r = if scale[i] + floor > 0.0 { defect / (scale[i] + floor) } else { 0.0 };
        rel[i] = r;
        if geo.core_mask.contains(i) {
            max_rel = max_rel.max(r);
            max_abs = max_abs.max(defect);
        }
    }
    IdentityDefect { relative: ScalarField::from_values_unchecked(&g, rel), max_relative: max_rel, max_absolute: max_abs }
}

#[derive(Debug, Clone)]
pub struct ParallelismReport {
    /// per region point: every `grad_y u_{x_i}` is parallel to `grad_y u`
    pub parallel: Vec<bool>,
    pub verdict: bool,
    /// largest `|(I - nu nu) grad_y u_{x_i}| / |grad_y u_{x_i}|` over the region
    pub max_defect: f64,
    /// largest `S` (relative to the local scale) at points judged parallel;
    /// S vanishes exactly when the vectors are parallel
    pub max_s_at_parallel: f64,
}

pub fn check_parallelism(u: &ScalarField, opts: &GeometryOptions) -> Result<ParallelismReport> {
    let geo = compute_geometry(u, opts)?;
    let g = u.grid();
    let (n, m, d) = (g.n(), g.m(), g.n_minus_m());
    let hess = hessian(u);
    let mut parallel = vec![false; g.len()];
    let mut max_defect: f64 = 0.0;
    let mut max_s: f64 = 0.0;
    for i in geo.region_mask.indices() {
        let nu: Vec<f64> = (0..d).map(|j| geo.normal.at(i, j)).collect();
        let h = hess.at(i);
        let mut ok = true;
        for xi in 0..m {
            let v: Vec<f64> = (0..d).map(|j| h[xi * n + m + j]).collect();
            let vn = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            let perp = project(&v, &nu).iter().map(|a| a * a).sum::<f64>().sqrt();
            if vn > 0.0 {
                max_defect = max_defect.max(perp / vn);
            }
            if perp > opts.tol_par * vn {
                ok = false;
            }
        }
        parallel[i] = ok;
        if ok && geo.core_mask.contains(i) {
            let scale = geo.hessian_y_sq.get(i);
            if scale > 0.0 {
                max_s = max_s.max(geo.s.get(i) / scale);
            }
        }
    }
    let verdict = geo.region_mask.indices().all(|i| parallel[i]);
    Ok(ParallelismReport { parallel, verdict, max_defect, max_s_at_parallel: max_s })
}

/// Per-slice direction fit of `u` as a function of `omega . y`.
#[derive(Debug, Clone)]
pub struct OmegaFit {
    /// unit direction per x-slice; `None` for slices with an empty region
    pub omega: Vec<Option<Vec<f64>>>,
    /// largest angle between fitted directions of any two slices (radians)
    pub constancy_score: f64,
    /// per slice, the profile table `(s, u_o(s))` from bin centroids
    pub profiles: Vec<Vec<(f64, f64)>>,
    /// `max |u(x, y) - u_o(x, omega(x) . y)|` over the region
    pub symmetry_defect: f64,
    pub skipped_slices: usize,
}

/// Fits, on each x-slice, the dominant direction of the normalized
/// `grad_y u` (principal eigenvector of their second-moment matrix, signed so
/// its first nonzero component is positive) and reconstructs `u_o` by
/// binning `u` against `omega . y` and interpolating linearly between bin
/// centroids.
pub fn fit_omega(u: &ScalarField, opts: &GeometryOptions) -> Result<OmegaFit> {
    let geo = compute_geometry(u, opts)?;
    let g = u.grid();
    let (m, d) = (g.m(), g.n_minus_m());
    let fl = g.fiber_len();
    let bins = 2 * (m..g.n()).map(|k| g.size(k)).max().unwrap_or(1);
    let mut omega = Vec::with_capacity(g.x_slice_count());
    let mut profiles = Vec::with_capacity(g.x_slice_count());
    let mut defect: f64 = 0.0;
    let mut skipped = 0;
    for slice in 0..g.x_slice_count() {
        let pts: Vec<usize> = (slice * fl..(slice + 1) * fl).filter(|&i| geo.region_mask.contains(i)).collect();
        if pts.is_empty() {
            skipped += 1;
            omega.push(None);
            profiles.push(Vec::new());
            continue;
        }
        let mut moment = DMatrix::<f64>::zeros(d, d);
        for &i in &pts {
            for r in 0..d {
                for c in 0..d {
                    moment[(r, c)] += geo.normal.at(i, r) * geo.normal.at(i, c);
                }
            }
        }
        let eig = SymmetricEigen::new(moment);
        let top = (0..d).max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b])).expect("d >= 1");
        let mut w: Vec<f64> = (0..d).map(|r| eig.eigenvectors[(r, top)]).collect();
        if let Some(first) = w.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                w.iter_mut().for_each(|v| *v = -*v);
            }
        }
        let s_of = |i: usize| -> f64 { (0..d).map(|j| w[j] * g.coord(i, m + j)).sum() };
        let s_vals: Vec<f64> = pts.iter().map(|&i| s_of(i)).collect();
        let lo = s_vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = s_vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo).max(f64::MIN_POSITIVE) / bins as f64;
        let mut acc = vec![(0.0, 0.0, 0usize); bins];
        for (&i, &s) in pts.iter().zip(&s_vals) {
            let b = (((s - lo) / width) as usize).min(bins - 1);
            acc[b].0 += s;
            acc[b].1 += u.get(i);
            acc[b].2 += 1;
        }
        let table: Vec<(f64, f64)> = acc.iter().filter(|a| a.2 > 0).map(|a| (a.0 / a.2 as f64, a.1 / a.2 as f64)).collect();
        for (&i, &s) in pts.iter().zip(&s_vals) {
            defect = defect.max((u.get(i) - interpolate(&table, s)).abs());
        }
        omega.push(Some(w));
        profiles.push(table);
    }
    let fitted: Vec<&Vec<f64>> = omega.iter().flatten().collect();
    let mut score: f64 = 0.0;
    for a in 0..fitted.len() {
        for b in a + 1..fitted.len() {
            let c: f64 = fitted[a].iter().zip(fitted[b]).map(|(p, q)| p * q).sum();
            score = score.max(c.abs().min(1.0).acos());
        }
    }
    Ok(OmegaFit { omega, constancy_score: score, profiles, symmetry_defect: defect, skipped_slices: skipped })
}

/// Piecewise-linear interpolation through a table sorted by abscissa,
/// constant beyond its ends.
fn interpolate(table: &[(f64, f64)], s: f64) -> f64 {
    if table.len() == 1 || s <= table[0].0 {
        return table[0].1;
    }
    let last = table[table.len() - 1];
    if s >= last.0 {
        return last.1;
    }
    let k = table.partition_point(|p| p.0 <= s);
    let (a, b) = (table[k - 1], table[k]);
    if b.0 == a.0 {
        return a.1;
    }
    a.1 + (b.1 - a.1) * (s - a.0) / (b.0 - a.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_grid(m: usize, d: usize, half: f64, h: f64) -> Grid {
        let mut ext = vec![(-half, half); m + d];
        ext[0] = (-0.5, 0.5);
        Grid::with_spacing(m, d, &ext, h).unwrap()
    }

    #[test]
    fn region_examples() {
        let g = box_grid(1, 1, 2.0, 0.125);
        let flat = ScalarField::from_fn(&g, |x| x[0]);
        assert!(region(&flat, 1e-3).unwrap().is_empty());
        let lin = ScalarField::from_fn(&g, |x| x[1]);
        assert_eq!(region(&lin, 0.9).unwrap().count(), Region::interior(&g).count());
        assert!(region(&lin, 0.0).is_err());

        // tanh layer: slab where the differenced tanh' exceeds the threshold
        let h = 1.0 / 32.0;
        let g = Grid::with_spacing(1, 1, &[(-0.25, 0.25), (-8.0, 8.0)], h).unwrap();
        let u = ScalarField::from_fn(&g, |x| x[1].tanh());
        let r = region(&u, 1e-3).unwrap();
        let edge = (1.0 / 1e-3f64).sqrt().acosh(); // sech^2 y = 1e-3
        for i in 1..g.size(1) - 1 {
            let y = g.axis_coord(1, i);
            let inside = r.contains(g.linear_index(&[3, i]));
            if (y.abs() - edge).abs() > h {
                assert_eq!(inside, y.abs() < edge, "y = {y}");
            }
        }
    }

    #[test]
    fn tangential_gradient_examples() {
        let g = box_grid(1, 2, 1.0, 1.0 / 32.0);
        // radial u = |y|, G = y_1
        let u = ScalarField::from_fn(&g, |x| x[1].hypot(x[2]));
        let gy1 = ScalarField::from_fn(&g, |x| x[1]);
        let tg = tangential_gradient(&u, &gy1, 0.5).unwrap();
        let grad = gradient(&u);
        for i in 0..g.len() {
            let (y1, y2) = (g.coord(i, 1), g.coord(i, 2));
            let r = y1.hypot(y2);
            if tg.at(i, 0).is_nan() || r < 0.3 {
                continue;
            }
            // projection of e_1 against the differenced normal
            let a = [grad.at(i, 1), grad.at(i, 2)];
            let na = a[0].hypot(a[1]);
            let nu = [a[0] / na, a[1] / na];
            assert!((tg.at(i, 0) - (1.0 - nu[0] * nu[0])).abs() < 1e-12);
            assert!((tg.at(i, 1) + nu[0] * nu[1]).abs() < 1e-12);
            // and the hand formula with the exact normal, to discretization accuracy
            assert!((tg.at(i, 0) - (1.0 - y1 * y1 / (r * r))).abs() < 1e-2);
            // orthogonal to the normal
            assert!((tg.at(i, 0) * nu[0] + tg.at(i, 1) * nu[1]).abs() < 1e-12);
        }
        // grad_L u = 0
        let self_tg = tangential_gradient(&u, &u, 0.5).unwrap();
        for i in 0..g.len() {
            if !self_tg.at(i, 0).is_nan() {
                assert!(self_tg.at(i, 0).abs() < 1e-12 && self_tg.at(i, 1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projector_is_idempotent() {
        let nu = [0.6, 0.0, 0.8];
        let v = [1.3, -0.2, 0.7];
        let once = project(&v, &nu);
        let twice = project(&once, &nu);
        for k in 0..3 {
            assert!((once[k] - twice[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn curvature_of_circles_and_spheres() {
        let h = 1.0 / 128.0;
        let g = Grid::new(1, 2, &[5, 257, 257], &[(-2.0 * h, 2.0 * h), (-1.0, 1.0), (-1.0, 1.0)]).unwrap();
        let u = ScalarField::from_fn(&g, |x| x[1].hypot(x[2]));
        let geo = compute_geometry(&u, &GeometryOptions::default()).unwrap();
        let mut checked = 0;
        for i in geo.core_mask.indices() {
            let r = g.coord(i, 1).hypot(g.coord(i, 2));
            if r < 0.25 {
                continue;
            }
            assert!((geo.ksq.get(i) * r * r - 1.0).abs() < 0.02, "r = {r}");
            assert!((geo.kappa[0].get(i) * r - 1.0).abs() < 0.02);
            checked += 1;
        }
        assert!(checked > 1000);

        let g = Grid::new(1, 3, &[5, 33, 33, 33], &[(-0.125, 0.125), (-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)]).unwrap();
        let u = ScalarField::from_fn(&g, |x| (x[1] * x[1] + x[2] * x[2] + x[3] * x[3]).sqrt());
        let geo = compute_geometry(&u, &GeometryOptions::default()).unwrap();
        assert_eq!(geo.eigen_failures, 0);
        for i in geo.core_mask.indices() {
            let r = (g.coord(i, 1).powi(2) + g.coord(i, 2).powi(2) + g.coord(i, 3).powi(2)).sqrt();
            if r < 0.5 {
                continue;
            }
            assert!((geo.ksq.get(i) * r * r - 2.0).abs() < 0.1, "r = {r}: {}", geo.ksq.get(i) * r * r);
            assert!((geo.kappa[0].get(i) * r - 1.0).abs() < 0.05 && (geo.kappa[1].get(i) * r - 1.0).abs() < 0.05);
        }

        // flat level sets
        let g = box_grid(1, 2, 1.0, 1.0 / 16.0);
        let u = ScalarField::from_fn(&g, |x| 0.6 * x[1] + 0.8 * x[2]);
        let geo = compute_geometry(&u, &GeometryOptions::default()).unwrap();
        assert!(geo.region_mask.indices().all(|i| geo.ksq.get(i).abs() < 1e-20));
    }

    #[test]
    fn s_and_t_examples() {
        let h = 1.0 / 128.0;
        let g = Grid::with_spacing(1, 2, &[(-0.5, 0.5), (-0.25, 0.25), (-0.25, 0.25)], h).unwrap();
        let u = ScalarField::from_fn(&g, |x| x[0] * x[1] + x[2]);
        let geo = compute_geometry(&u, &GeometryOptions::default()).unwrap();
        for i in geo.core_mask.indices() {
            let (x, y1) = (g.coord(i, 0), g.coord(i, 1));
            let s_exact = 1.0 / (x * x + 1.0);
            assert!((geo.s.get(i) - s_exact).abs() < 0.02 * s_exact);
            let t_exact = y1 * y1 / (x * x + 1.0);
            assert!((geo.t.get(i) - t_exact).abs() < 1e-3);
        }
        let centre = g.linear_index(&[64, 32, 32]);
        assert!((geo.s.get(centre) - 1.0).abs() < 0.02);

        // one fiber variable with u_y > 0: S = T = 0
        let g = box_grid(1, 1, 4.0, 1.0 / 16.0);
        let u = ScalarField::from_fn(&g, |x| (1.0 + 0.2 * x[0]) * x[1].tanh());
        let geo = compute_geometry(&u, &GeometryOptions::default()).unwrap();
        for i in geo.core_mask.indices() {
            let scale = geo.hessian_y_sq.get(i) + 1e-3;
            assert!(geo.s.get(i).abs() < 1e-2 * scale && geo.t.get(i).abs() < 1e-2 * scale);
        }

        // radial in y: S = 0
        let g = box_grid(1, 2, 1.0, 1.0 / 16.0);
        let u = ScalarField::from_fn(&g, |x| x[1].hypot(x[2]));
        let geo = compute_geometry(&u, &GeometryOptions::default()).unwrap();
        assert!(geo.region_mask.indices().all(|i| geo.s.get(i).abs() < 1e-12));
    }

    #[test]
    fn cauchy_schwarz_chain() {
        let g = box_grid(1, 2, 1.0, 1.0 / 32.0);
        let u = ScalarField::from_fn(&g, |x| (x[0] * x[1]).sin() + x[2] * (1.0 + x[0] * x[0]) + 0.3 * x[1] * x[2]);
        let geo = compute_geometry(&u, &GeometryOptions::default()).unwrap();
        let hess = hessian(&u);
        for i in geo.core_mask.indices() {
            let lhs = geo.grad_of_grad_y_norm.at(i, 0).abs();
            let rhs = (hess.entry(i, 0, 1).powi(2) + hess.entry(i, 0, 2).powi(2)).sqrt();
            assert!(lhs <= rhs + 1e-3, "{lhs} > {rhs}");
        }
    }

    fn thin_grid(h: f64, half: f64) -> Grid {
        let k = (2.0 * half / h).round() as usize + 1;
        Grid::new(1, 2, &[5, k, k], &[(-2.0 * h, 2.0 * h), (-half, half), (-half, half)]).unwrap()
    }

    #[test]
    fn identity_defect_decreases_under_refinement() {
        // a rotated one-dimensional layer satisfies the identity to rounding
        let w = std::f64::consts::FRAC_1_SQRT_2;
        let g = thin_grid(1.0 / 32.0, 2.0);
        let u = ScalarField::from_fn(&g, |x| (w * x[1] + w * x[2]).tanh());
        assert!(verify_identity_sz(&compute_geometry(&u, &GeometryOptions::default()).unwrap()).max_relative < 1e-8);

        let radial = |h: f64| {
            let g = thin_grid(h, 1.0);
            let u = ScalarField::from_fn(&g, |x| x[1].hypot(x[2]));
            let geo = compute_geometry(&u, &GeometryOptions::default()).unwrap();
            let d = verify_identity_sz(&geo);
            geo.core_mask.indices().filter(|&i| g.coord(i, 1).hypot(g.coord(i, 2)) >= 0.25).map(|i| d.relative.get(i)).fold(0.0, f64::max)
        };
        let (coarse, fine) = (radial(1.0 / 16.0), radial(1.0 / 32.0));
        assert!(fine < coarse && fine < 5e-2, "{coarse} {fine}");

        let smooth = |k: usize| {
            let g = Grid::new(1, 2, &[k, k, k], &[(-1.0, 1.0); 3]).unwrap();
            let u = ScalarField::from_fn(&g, |x| (x[1] + 0.5 * x[0] * x[2]).sin() + 2.0 * x[2] + 0.3 * x[1] * x[1]);
            verify_identity_sz(&compute_geometry(&u, &GeometryOptions::default()).unwrap()).max_relative
        };
        let (coarse, fine) = (smooth(33), smooth(65));
        assert!((coarse / fine).log2() >= 0.8, "{coarse} {fine}");
    }

    #[test]
    fn parallelism_examples() {
        let g = box_grid(1, 2, 2.0, 1.0 / 16.0);
        let layer = ScalarField::from_fn(&g, |x| (1.0 + 0.3 * x[0]) * (0.6 * x[1] + 0.8 * x[2]).tanh());
        assert!(check_parallelism(&layer, &GeometryOptions::default()).unwrap().verdict);
        let twisted = ScalarField::from_fn(&g, |x| x[0] * x[1] + x[2]);
        let rep = check_parallelism(&twisted, &GeometryOptions::default()).unwrap();
        assert!(!rep.verdict);
    }

    #[test]
    fn omega_fit_examples() {
        let g = box_grid(1, 2, 4.0, 1.0 / 32.0);
        let u = ScalarField::from_fn(&g, |x| (0.6 * x[1] + 0.8 * x[2]).tanh());
        let fit = fit_omega(&u, &GeometryOptions::default()).unwrap();
        for w in fit.omega.iter().flatten() {
            assert!((w[0] - 0.6).abs() < 1e-3 && (w[1] - 0.8).abs() < 1e-3, "{w:?}");
        }
        assert!(fit.constancy_score <= 1e-3);
        assert!(fit.symmetry_defect <= 1e-3, "{}", fit.symmetry_defect);

        let g = box_grid(1, 2, 0.5, 1.0 / 32.0);
        let radial = ScalarField::from_fn(&g, |x| x[1].hypot(x[2]));
        assert!(fit_omega(&radial, &GeometryOptions::default()).unwrap().symmetry_defect > 0.1);
    }

    #[test]
    fn rotating_direction_is_parallel_but_not_constant() {
        let g = Grid::new(1, 2, &[33, 65, 65], &[(-2.0, 2.0), (-4.0, 4.0), (-4.0, 4.0)]).unwrap();
        let field = crate::model::counterexample_appendix_a(&g).unwrap();
        let opts = GeometryOptions::default();
        let par = check_parallelism(&field.u, &opts).unwrap();
        assert!(par.verdict, "max defect {}", par.max_defect);
        let fit = fit_omega(&field.u, &opts).unwrap();
        assert!(fit.constancy_score >= 1.5, "{}", fit.constancy_score);
        assert!(fit.skipped_slices > 0);
    }

    #[test]
    fn interpolation_table() {
        let t = [(0.0, 1.0), (1.0, 3.0), (3.0, 4.0)];
        assert_eq!(interpolate(&t, -1.0), 1.0);
        assert_eq!(interpolate(&t, 0.5), 2.0);
        assert_eq!(interpolate(&t, 2.0), 3.5);
        assert_eq!(interpolate(&t, 9.0), 4.0);
    }
}
