//! Coefficients `alpha(x)`, `p(x)`, the fibered nonlinearity `f(x, u)` and
//! the factories for exact solutions.

mod profile;

use std::fmt;
use std::sync::Arc;

pub use profile::{Profile, XFunction};

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};

/// Weight `alpha(x)` and exponent `p(x)` of the operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    alpha: XFunction,
    p_exp: XFunction,
}

impl Coefficients {
    /// Validates `inf alpha > 0` and `p >= 2` over the x-slices of `grid`.
    pub fn new(alpha: XFunction, p_exp: XFunction, grid: &Grid) -> Result<Self> {
        let c = Coefficients { alpha, p_exp };
        for (name, f) in [("alpha", &c.alpha), ("p", &c.p_exp)] {
            if !f.is_const() && f.axis >= grid.m() {
                return Err(Error::InvalidModel(format!("{name} depends on x{} but the grid has m = {}", f.axis + 1, grid.m())));
            }
        }
        for slice in 0..grid.x_slice_count() {
            c.check_at(&grid.slice_x(slice))?;
        }
        Ok(c)
    }

    pub fn constant(alpha: f64, p: f64) -> Result<Self> {
        let c = Coefficients { alpha: XFunction::constant(alpha), p_exp: XFunction::constant(p) };
        c.check_at(&[])?;
        Ok(c)
    }

    fn check_at(&self, x: &[f64]) -> Result<()> {
        let a = self.alpha(x);
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidModel(format!("alpha must be positive, alpha({x:?}) = {a}")));
        }
        let p = self.p(x);
        if !(p >= 2.0 && p.is_finite()) {
            return Err(Error::InvalidModel(format!("exponent must satisfy p >= 2, p({x:?}) = {p}")));
        }
        Ok(())
    }

    pub fn alpha(&self, x: &[f64]) -> f64 {
        self.alpha.eval(x)
    }

    pub fn p(&self, x: &[f64]) -> f64 {
        self.p_exp.eval(x)
    }

    pub fn alpha_fn(&self) -> &XFunction {
        &self.alpha
    }

    pub fn p_fn(&self) -> &XFunction {
        &self.p_exp
    }

    /// Coefficients frozen at one x (used for fiber problems).
    pub fn frozen_at(&self, x: &[f64]) -> Coefficients {
        Coefficients { alpha: XFunction::constant(self.alpha(x)), p_exp: XFunction::constant(self.p(x)) }
    }
}

type PointFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Repr {
    /// x-independent polynomial in u, coefficients in ascending order.
    Polynomial(Vec<f64>),
    General {
        f: PointFn,
        f_u: PointFn,
        antiderivative: Option<PointFn>,
    },
}

/// Right-hand side `f(x, u)` with its u-derivative and the antiderivative
/// `F(x, t) = int_{t0}^t f(x, s) ds`.
#[derive(Clone)]
pub struct Nonlinearity {
    repr: Repr,
    t0: f64,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.repr {
            Repr::Polynomial(c) => write!(f, "Nonlinearity::Polynomial({c:?}, t0 = {})", self.t0),
            Repr::General { .. } => write!(f, "Nonlinearity::General(t0 = {})", self.t0),
        }
    }
}

const GL_NODES: [f64; 4] = [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
const GL_WEIGHTS: [f64; 4] = [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];

fn poly_eval(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ck| acc * t + ck)
}

impl Nonlinearity {
    pub fn zero() -> Self {
        Nonlinearity { repr: Repr::Polynomial(vec![0.0]), t0: 0.0 }
    }

    /// `f(u) = c0 + c1 u + c2 u^2 + ...`, independent of x.
    pub fn polynomial(coefficients: Vec<f64>, t0: f64) -> Self {
        let coefficients = if coefficients.is_empty() { vec![0.0] } else { coefficients };
        Nonlinearity { repr: Repr::Polynomial(coefficients), t0 }
    }

    /// `f(u) = 2u - 2u^3`, the nonlinearity whose layer solution is `tanh`.
    pub fn allen_cahn(t0: f64) -> Self {
        Self::polynomial(vec![0.0, 2.0, 0.0, -2.0], t0)
    }

    /// General nonlinearity from closures. `f_u` is checked against a
    /// centred difference of `f` at the sample x's (and `u` in [-2, 2]);
    /// without an explicit antiderivative `F` is obtained by Gauss-Legendre
    /// quadrature.
    pub fn general<F, Fu>(f: F, f_u: Fu, antiderivative: Option<PointFn>, t0: f64, sample_x: &[Vec<f64>]) -> Result<Self>
    where
        F: Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        Fu: Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    {
        let nl = Nonlinearity { repr: Repr::General { f: Arc::new(f), f_u: Arc::new(f_u), antiderivative }, t0 };
        nl.self_check(sample_x)?;
        Ok(nl)
    }

    fn self_check(&self, sample_x: &[Vec<f64>]) -> Result<()> {
        let empty = [Vec::new()];
        let xs = if sample_x.is_empty() { &empty[..] } else { sample_x };
        for x in xs {
            for k in 0..=16 {
                let r = -2.0 + 0.25 * k as f64;
                let h = 1e-5 * r.abs().max(1.0);
                let fd = (self.f(x, r + h) - self.f(x, r - h)) / (2.0 * h);
                let fu = self.f_u(x, r);
                if !((fu - fd).abs() <= 1e-6 * fu.abs().max(1.0)) {
                    return Err(Error::InvalidModel(format!("f_u({x:?}, {r}) = {fu} disagrees with the difference quotient {fd}")));
                }
            }
            let base = self.antiderivative(x, self.t0);
            if base.abs() > 1e-12 {
                return Err(Error::InvalidModel(format!("F({x:?}, t0) = {base}, expected 0")));
            }
        }
        Ok(())
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn polynomial_coefficients(&self) -> Option<&[f64]> {
        match &self.repr {
            Repr::Polynomial(c) => Some(c),
            Repr::General { .. } => None,
        }
    }

    #[inline]
    pub fn f(&self, x: &[f64], u: f64) -> f64 {
        match &self.repr {
            Repr::Polynomial(c) => poly_eval(c, u),
            Repr::General { f, .. } => f(x, u),
        }
    }

    #[inline]
    pub fn f_u(&self, x: &[f64], u: f64) -> f64 {
        match &self.repr {
            Repr::Polynomial(c) => c.iter().enumerate().skip(1).rev().fold(0.0, |acc, (k, &ck)| acc * u + k as f64 * ck),
            Repr::General { f_u, .. } => f_u(x, u),
        }
    }

    /// `F(x, t) = int_{t0}^t f(x, s) ds`.
    pub fn antiderivative(&self, x: &[f64], t: f64) -> f64 {
        match &self.repr {
            Repr::Polynomial(c) => {
                let prim = |s: f64| c.iter().enumerate().rev().fold(0.0, |acc, (k, &ck)| acc * s + ck / (k + 1) as f64) * s;
                prim(t) - prim(self.t0)
            }
            Repr::General { f, antiderivative: Some(big_f), .. } => {
                let _ = f;
                big_f(x, t)
            }
            Repr::General { f, antiderivative: None, .. } => {
                let len = t - self.t0;
                if len == 0.0 {
                    return 0.0;
                }
                let panels = (len.abs() / 0.25).ceil().max(1.0) as usize;
                let width = len / panels as f64;
                let mut sum = 0.0;
                for k in 0..panels {
                    let mid = self.t0 + (k as f64 + 0.5) * width;
                    for (node, weight) in GL_NODES.iter().zip(GL_WEIGHTS) {
                        let off = 0.5 * width * node;
                        sum += weight * (f(x, mid - off) + f(x, mid + off));
                    }
                }
                0.5 * width * sum
            }
        }
    }

    /// Same nonlinearity with x frozen, for fiber problems.
    pub fn frozen_at(&self, x: &[f64]) -> Nonlinearity {
        match &self.repr {
            Repr::Polynomial(_) => self.clone(),
            Repr::General { f, f_u, antiderivative } => {
                let x0 = x.to_vec();
                let (f, f_u) = (f.clone(), f_u.clone());
                let (xa, xb) = (x0.clone(), x0.clone());
                let anti = antiderivative.clone().map(|a| {
                    let xc = x0.clone();
                    Arc::new(move |_: &[f64], t: f64| a(&xc, t)) as PointFn
                });
                Nonlinearity {
                    repr: Repr::General { f: Arc::new(move |_, u| f(&xa, u)), f_u: Arc::new(move |_, u| f_u(&xb, u)), antiderivative: anti },
                    t0: self.t0,
                }
            }
        }
    }
}

/// The data of one boundary-value problem: coefficients, nonlinearity, grid.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub coefficients: Coefficients,
    pub nonlinearity: Nonlinearity,
    pub grid: Grid,
}

impl ModelBundle {
    pub fn new(coefficients: Coefficients, nonlinearity: Nonlinearity, grid: &Grid) -> Result<Self> {
        for f in [coefficients.alpha_fn(), coefficients.p_fn()] {
            if !f.is_const() && f.axis >= grid.m() {
                return Err(Error::InvalidModel(format!("coefficient reads x{} but the grid has m = {}", f.axis + 1, grid.m())));
            }
        }
        Ok(ModelBundle { coefficients, nonlinearity, grid: grid.clone() })
    }

    /// `alpha` and `p` sampled at every grid point.
    pub fn pointwise_coefficients(&self) -> (Vec<f64>, Vec<f64>) {
        let g = &self.grid;
        let fiber = g.fiber_len();
        let mut alpha = Vec::with_capacity(g.len());
        let mut p = Vec::with_capacity(g.len());
        for slice in 0..g.x_slice_count() {
            let x = g.slice_x(slice);
            let (a, e) = (self.coefficients.alpha(&x), self.coefficients.p(&x));
            alpha.extend(std::iter::repeat_n(a, fiber));
            p.extend(std::iter::repeat_n(e, fiber));
        }
        (alpha, p)
    }

    /// x-coordinates of every point's slice, in the order of `x_slice_of`.
    pub fn slice_coordinates(&self) -> Vec<Vec<f64>> {
        (0..self.grid.x_slice_count()).map(|s| self.grid.slice_x(s)).collect()
    }

    pub fn with_grid(&self, grid: &Grid) -> Result<ModelBundle> {
        ModelBundle::new(self.coefficients.clone(), self.nonlinearity.clone(), grid)
    }
}

/// Data of the explicit solution family `u(x, y) = beta(x) gamma(omega . y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleSpec {
    pub beta: XFunction,
    pub gamma: Profile,
    pub omega: Vec<f64>,
    pub coefficients: Coefficients,
    pub t0: f64,
}

impl ExampleSpec {
    /// `u = tanh(omega . y)` with `alpha = 1`, `p = 2`, `beta = 1`.
    pub fn tanh_layer(omega: Vec<f64>) -> Self {
        ExampleSpec {
            beta: XFunction::constant(1.0),
            gamma: Profile::Tanh { amp: 1.0, scale: 1.0, shift: 0.0 },
            omega,
            coefficients: Coefficients::constant(1.0, 2.0).expect("valid constants"),
            t0: 0.0,
        }
    }

    pub fn eval(&self, point: &[f64], m: usize) -> f64 {
        let s: f64 = self.omega.iter().zip(&point[m..]).map(|(w, y)| w * y).sum();
        self.beta.eval(&point[..m]) * self.gamma.eval(s)
    }

    /// `g = -div(alpha |grad u|^(p-2) grad u)` at x, given gamma and its first
    /// two derivatives at `s = omega . y`.
    fn forcing(&self, x: &[f64], g0: f64, g1: f64, g2: f64) -> f64 {
        let m = x.len();
        let b = self.beta.derivs(x);
        let (beta, b1, b2) = (b[0], b[1], b[2]);
        let mut grad_beta = vec![0.0; m];
        let mut lap_beta = 0.0;
        if m > 0 && !self.beta.is_const() {
            grad_beta[self.beta.axis] = b1;
            lap_beta = b2;
        }
        let a = self.coefficients.alpha_fn().derivs(x);
        let pe = self.coefficients.p_fn().derivs(x);
        let (alpha, p) = (a[0], pe[0]);
        let mut grad_alpha = vec![0.0; m];
        let mut grad_p = vec![0.0; m];
        if m > 0 && !self.coefficients.alpha_fn().is_const() {
            grad_alpha[self.coefficients.alpha_fn().axis] = a[1];
        }
        if m > 0 && !self.coefficients.p_fn().is_const() {
            grad_p[self.coefficients.p_fn().axis] = pe[1];
        }

        let gb2: f64 = grad_beta.iter().map(|v| v * v).sum();
        let q = gb2 * g0 * g0 + beta * beta * g1 * g1;
        let lap_u = lap_beta * g0 + beta * g2;
        if q == 0.0 {
            let coef = if p == 2.0 { alpha } else { 0.0 };
            return -coef * lap_u;
        }
        let k = 0.5 * (p - 2.0);
        let coef = alpha * q.powf(k);
        // d q / d x_i; beta depends on one axis only so its Hessian is diagonal there
        let dq_dx: Vec<f64> = (0..m)
            .map(|i| {
                let hess_ii = if !self.beta.is_const() && i == self.beta.axis { b2 } else { 0.0 };
                2.0 * g0 * g0 * grad_beta[i] * hess_ii + 2.0 * beta * grad_beta[i] * g1 * g1
            })
            .collect();
        let dq_ds = 2.0 * gb2 * g0 * g1 + 2.0 * beta * beta * g1 * g2;
        let mut grad_coef_dot_grad_u = 0.0;
        for i in 0..m {
            let dci = coef * (grad_alpha[i] / alpha + 0.5 * grad_p[i] * q.ln() + k * dq_dx[i] / q);
            grad_coef_dot_grad_u += dci * grad_beta[i] * g0;
        }
        grad_coef_dot_grad_u += coef * k * dq_ds / q * beta * g1;
        -(grad_coef_dot_grad_u + coef * lap_u)
    }

    fn validate(&self, grid: &Grid) -> Result<(f64, f64)> {
        if self.omega.len() != grid.n_minus_m() {
            return Err(Error::InvalidModel(format!("omega has {} components, the fiber has dimension {}", self.omega.len(), grid.n_minus_m())));
        }
        let norm = self.omega.iter().map(|w| w * w).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidModel(format!("omega must be a unit vector, |omega| = {norm}")));
        }
        if !self.beta.is_const() && self.beta.axis >= grid.m() {
            return Err(Error::InvalidModel("beta reads an x-axis the grid does not have".into()));
        }
        for slice in 0..grid.x_slice_count() {
            let b = self.beta.eval(&grid.slice_x(slice));
            if !(b > 0.0) {
                return Err(Error::InvalidModel(format!("beta must be positive, got {b}")));
            }
        }
        // range of omega . y over the box
        let m = grid.m();
        let (mut s_lo, mut s_hi) = (0.0, 0.0);
        for (j, w) in self.omega.iter().enumerate() {
            let (a, b) = (w * grid.lo(m + j), w * grid.hi(m + j));
            s_lo += a.min(b);
            s_hi += a.max(b);
        }
        const SAMPLES: usize = 2000;
        let ts: Vec<f64> = (0..=SAMPLES).map(|k| s_lo + (s_hi - s_lo) * k as f64 / SAMPLES as f64).collect();
        let slopes: Vec<f64> = ts.iter().map(|&t| self.gamma.derivs(t)[1]).collect();
        let max_slope = slopes.iter().cloned().fold(0.0, f64::max);
        for w in ts.windows(2) {
            if !(self.gamma.eval(w[1]) > self.gamma.eval(w[0])) {
                return Err(Error::InvalidModel(format!("gamma is not strictly increasing on [{}, {}]", w[0], w[1])));
            }
        }
        // the inverse is only well conditioned where gamma' is not negligible
        for (&t, &slope) in ts.iter().zip(&slopes) {
            if slope < 1e-4 * max_slope {
                continue;
            }
            let back = self.gamma.inverse(self.gamma.eval(t));
            match back {
                Some(b) if (b - t).abs() <= 1e-10 * t.abs().max(1.0) => {}
                _ => return Err(Error::InvalidModel(format!("inverse of gamma fails at t = {t}: got {back:?}"))),
            }
        }
        Ok((s_lo, s_hi))
    }
}

/// Builds `u = beta(x) gamma(omega . y)` on `grid` and the nonlinearity
/// `f(x, r) = g(x, Gamma(r / beta(x)))` that makes it an exact solution,
/// with `g` evaluated in closed form.
pub fn exact_example(spec: &ExampleSpec, grid: &Grid) -> Result<(ScalarField, ModelBundle)> {
    let (s_lo, s_hi) = spec.validate(grid)?;
    let coefficients = Coefficients::new(spec.coefficients.alpha_fn().clone(), spec.coefficients.p_fn().clone(), grid)?;
    let m = grid.m();
    let u = ScalarField::from_fn(grid, |p| spec.eval(p, m));

    let c = &spec.coefficients;
    let simple = c.alpha_fn().is_const() && c.p_fn().is_const() && c.p(&[]) == 2.0 && spec.beta.is_const();
    let nonlinearity = match (&spec.gamma, simple) {
        (Profile::Tanh { amp, scale, .. }, true) => {
            // f(r) = -alpha beta gamma''(r / beta) with gamma'' polynomial in the value
            let (alpha, beta) = (c.alpha(&[]), spec.beta.eval(&[]));
            let s2 = scale * scale;
            Nonlinearity::polynomial(vec![0.0, 2.0 * alpha * s2, 0.0, -2.0 * alpha * s2 / (amp * amp * beta * beta)], spec.t0)
        }
        (Profile::Poly(pc), true) if pc.len() <= 2 => Nonlinearity::polynomial(vec![0.0], spec.t0),
        _ => {
            let spec_f = spec.clone();
            let (g_lo, g_hi) = (spec.gamma.eval(s_lo), spec.gamma.eval(s_hi));
            let f = move |x: &[f64], r: f64| {
                let v = r / spec_f.beta.eval(x);
                let (g1, g2) = match spec_f.gamma.derivs_from_value(v) {
                    Some(d) => d,
                    None => {
                        // outside the sampled range the forcing is frozen at the end values
                        let s = spec_f.gamma.inverse(v.clamp(g_lo, g_hi)).unwrap_or(if v < g_lo { s_lo } else { s_hi });
                        let d = spec_f.gamma.derivs(s);
                        (d[1], d[2])
                    }
                };
                spec_f.forcing(x, v, g1, g2)
            };
            let f = Arc::new(f);
            let f_for_u = f.clone();
            let f_u = move |x: &[f64], r: f64| {
                let h = 1e-3 * r.abs().max(1.0);
                (8.0 * (f_for_u(x, r + h) - f_for_u(x, r - h)) - (f_for_u(x, r + 2.0 * h) - f_for_u(x, r - 2.0 * h))) / (12.0 * h)
            };
            let samples: Vec<Vec<f64>> = (0..grid.x_slice_count()).step_by((grid.x_slice_count() / 8).max(1)).map(|s| grid.slice_x(s)).collect();
            let f_clone = f.clone();
            Nonlinearity::general(move |x, r| f_clone(x, r), f_u, None, spec.t0, &samples)?
        }
    };
    let model = ModelBundle::new(coefficients, nonlinearity, grid)?;
    Ok((u, model))
}

fn smooth_flat(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp()
    } else {
        0.0
    }
}

/// Field of the form `tau(x) tanh(omega(x) . y)` in R x R^2 where `tau`
/// vanishes exactly on [-1, 1] and `omega` turns from (1, 0) to (0, 1)
/// inside [-1/2, 1/2]. `grad_y u` is always parallel to `grad_y u_x`, yet
/// `omega` is not constant.
#[derive(Debug, Clone)]
pub struct RotatingLayer {
    pub u: ScalarField,
}

impl RotatingLayer {
    pub fn tau(x: f64) -> f64 {
        smooth_flat(x.abs() - 1.0)
    }

    /// Unit direction used at `x`.
    pub fn omega(x: f64) -> [f64; 2] {
        let t = x + 0.5;
        let step = smooth_flat(t) / (smooth_flat(t) + smooth_flat(1.0 - t));
        let theta = std::f64::consts::FRAC_PI_2 * step;
        [theta.cos(), theta.sin()]
    }

    pub fn eval(point: &[f64]) -> f64 {
        let w = Self::omega(point[0]);
        Self::tau(point[0]) * (w[0] * point[1] + w[1] * point[2]).tanh()
    }
}

/// Samples the rotating-direction field on a grid with m = 1, n - m = 2.
pub fn counterexample_appendix_a(grid: &Grid) -> Result<RotatingLayer> {
    if grid.m() != 1 || grid.n_minus_m() != 2 {
        return Err(Error::InvalidArgument(format!(
            "the rotating-direction field lives in R x R^2, grid has m = {}, n - m = {}",
            grid.m(),
            grid.n_minus_m()
        )));
    }
    Ok(RotatingLayer { u: ScalarField::from_fn(grid, RotatingLayer::eval) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slab(n_pts: usize) -> Grid {
        Grid::new(1, 1, &[5, n_pts], &[(-1.0, 1.0), (-8.0, 8.0)]).unwrap()
    }

    #[test]
    fn coefficient_invariants() {
        let g = slab(9);
        assert!(Coefficients::new(XFunction::constant(1.0), XFunction::constant(2.0), &g).is_ok());
        assert!(Coefficients::new(XFunction::constant(0.0), XFunction::constant(2.0), &g).is_err());
        // p dips below 2 at x = -1
        let p = XFunction::parse("poly(2.5, 1)").unwrap();
        assert!(Coefficients::new(XFunction::constant(1.0), p, &g).is_err());
        let p = XFunction::parse("poly(3.5, 1)").unwrap();
        assert!(Coefficients::new(XFunction::constant(1.0), p, &g).is_ok());
    }

    #[test]
    fn polynomial_nonlinearity_calculus() {
        let f = Nonlinearity::allen_cahn(-1.0);
        assert_eq!(f.f(&[], 0.5), 2.0 * 0.5 - 2.0 * 0.125);
        assert!((f.f_u(&[], 0.5) - (2.0 - 6.0 * 0.25)).abs() < 1e-15);
        assert_eq!(f.antiderivative(&[], -1.0), 0.0);
        for &t in &[-1.5, -0.3, 0.0, 0.8, 1.0] {
            let closed = -0.5 * (1.0 - t * t) * (1.0 - t * t);
            assert!((f.antiderivative(&[], t) - closed).abs() < 1e-14);
        }
    }

    #[test]
    fn general_nonlinearity_self_check() {
        let ok = Nonlinearity::general(|x, u| x[0] * u.sin(), |x, u| x[0] * u.cos(), None, 0.3, &[vec![2.0]]).unwrap();
        let exact = 2.0 * (0.3f64.cos() - 1.1f64.cos());
        assert!((ok.antiderivative(&[2.0], 1.1) - exact).abs() < 1e-12);
        let bad = Nonlinearity::general(|_, u| u * u, |_, u| u, None, 0.0, &[vec![0.0]]);
        assert!(bad.is_err());
    }

    #[test]
    fn tanh_example_gives_allen_cahn() {
        let g = slab(33);
        let (u, model) = exact_example(&ExampleSpec::tanh_layer(vec![1.0]), &g).unwrap();
        for i in 0..g.len() {
            assert!((u.get(i) - g.coord(i, 1).tanh()).abs() < 1e-15);
        }
        for &r in &[-1.3, -1.0, -0.4, 0.0, 0.7, 1.0, 1.2] {
            let f = model.nonlinearity.f(&[0.0], r);
            assert!((f - 2.0 * (r - r * r * r)).abs() < 1e-14, "f({r}) = {f}");
        }
        assert_eq!(model.nonlinearity.f(&[0.0], 0.0), 0.0);
        assert_eq!(model.nonlinearity.f(&[0.0], 1.0), 0.0);
        assert_eq!(model.nonlinearity.f(&[0.0], -1.0), 0.0);
    }

    #[test]
    fn linear_profile_is_harmonic() {
        let g = Grid::new(1, 1, &[5, 9], &[(0.0, 1.0), (-1.0, 1.0)]).unwrap();
        let mut spec = ExampleSpec::tanh_layer(vec![1.0]);
        spec.gamma = Profile::Poly(vec![0.0, 1.0]);
        let (_, model) = exact_example(&spec, &g).unwrap();
        for &r in &[-2.0, 0.0, 3.0] {
            assert_eq!(model.nonlinearity.f(&[0.5], r), 0.0);
        }
    }

    #[test]
    fn rejects_non_monotone_profile_and_bad_omega() {
        let g = slab(9);
        let mut spec = ExampleSpec::tanh_layer(vec![1.0]);
        spec.gamma = Profile::Poly(vec![0.0, 0.0, 1.0]);
        assert!(exact_example(&spec, &g).is_err());
        let spec = ExampleSpec::tanh_layer(vec![0.9]);
        assert!(exact_example(&spec, &g).is_err());
    }

    /// Centred second differences of the flux on a fine auxiliary lattice,
    /// evaluated directly from the closed-form u (independent of `forcing`).
    fn divergence_oracle(spec: &ExampleSpec, x: f64, y: [f64; 2]) -> f64 {
        let u = |p: [f64; 3]| spec.eval(&p, 1);
        let h = 1e-3;
        let flux = |p: [f64; 3], k: usize| {
            let mut g = [0.0; 3];
            for (j, gj) in g.iter_mut().enumerate() {
                let mut a = p;
                let mut b = p;
                a[j] += h;
                b[j] -= h;
                *gj = (u(a) - u(b)) / (2.0 * h);
            }
            let norm2: f64 = g.iter().map(|v| v * v).sum();
            let px = [p[0]];
            spec.coefficients.alpha(&px) * norm2.powf(0.5 * (spec.coefficients.p(&px) - 2.0)) * g[k]
        };
        let p = [x, y[0], y[1]];
        let mut div = 0.0;
        for k in 0..3 {
            let mut a = p;
            let mut b = p;
            a[k] += h;
            b[k] -= h;
            div += (flux(a, k) - flux(b, k)) / (2.0 * h);
        }
        -div
    }

    #[test]
    fn general_forcing_matches_divergence_oracle() {
        let g = Grid::new(1, 2, &[5, 9, 9], &[(-1.0, 1.0), (-2.0, 2.0), (-2.0, 2.0)]).unwrap();
        let spec = ExampleSpec {
            beta: XFunction::parse("const(1.5) + bump(0.3, 0, 1)").unwrap(),
            gamma: Profile::Atan { amp: 1.0, scale: 1.2, shift: 0.1 },
            omega: vec![0.6, 0.8],
            coefficients: Coefficients::new(
                XFunction::parse("const(1) + bump(0.5, 0.2, 0.8)").unwrap(),
                XFunction::parse("poly(3, 0.4)").unwrap(),
                &g,
            )
            .unwrap(),
            t0: 0.0,
        };
        let (_, model) = exact_example(&spec, &g).unwrap();
        for &(x, y1, y2) in &[(0.3, 0.5, -0.2), (-0.7, -1.0, 0.4), (0.1, 0.2, 0.9)] {
            let s = 0.6 * y1 + 0.8 * y2;
            let r = spec.beta.eval(&[x]) * spec.gamma.eval(s);
            let f = model.nonlinearity.f(&[x], r);
            let oracle = divergence_oracle(&spec, x, [y1, y2]);
            assert!((f - oracle).abs() < 1e-5 * oracle.abs().max(1.0), "f = {f}, oracle = {oracle}");
        }
    }

    #[test]
    fn rotating_layer_properties() {
        let g = Grid::new(1, 2, &[41, 9, 9], &[(-2.0, 2.0), (-1.0, 1.0), (-1.0, 1.0)]).unwrap();
        let layer = counterexample_appendix_a(&g).unwrap();
        for i in 0..g.len() {
            if g.coord(i, 0).abs() <= 1.0 {
                assert_eq!(layer.u.get(i), 0.0);
            }
        }
        assert_eq!(RotatingLayer::omega(-1.0), [1.0, 0.0]);
        let w = RotatingLayer::omega(1.0);
        assert!(w[0].abs() < 1e-16 && (w[1] - 1.0).abs() < 1e-16);
        assert!(RotatingLayer::tau(1.5) > 0.0 && RotatingLayer::tau(-1.5) > 0.0);

        // grad_y u = gamma'(omega . y) tau(x) omega(x)
        let h = 1e-6;
        for &(x, y1, y2) in &[(1.5, 0.2, -0.3), (-1.7, 0.4, 0.1)] {
            let w = RotatingLayer::omega(x);
            let s = w[0] * y1 + w[1] * y2;
            let expect = (1.0 - s.tanh().powi(2)) * RotatingLayer::tau(x);
            let d1 = (RotatingLayer::eval(&[x, y1 + h, y2]) - RotatingLayer::eval(&[x, y1 - h, y2])) / (2.0 * h);
            let d2 = (RotatingLayer::eval(&[x, y1, y2 + h]) - RotatingLayer::eval(&[x, y1, y2 - h])) / (2.0 * h);
            assert!((d1 - expect * w[0]).abs() < 1e-8);
            assert!((d2 - expect * w[1]).abs() < 1e-8);
        }
        assert!(counterexample_appendix_a(&Grid::new(1, 1, &[3, 3], &[(0.0, 1.0), (0.0, 1.0)]).unwrap()).is_err());
    }

    #[test]
    fn boundedness_of_examples() {
        let g = slab(65);
        let spec = ExampleSpec::tanh_layer(vec![1.0]);
        let (u, _) = exact_example(&spec, &g).unwrap();
        assert!(u.max_abs() <= 1.0);
    }
}
