//! Experiment configuration: sectioned `key = value` text with
//! comma-separated lists.
//!
//! ```text
//! [grid]
//! m = 1
//! n_minus_m = 1
//! sizes = 65, 129
//! extents = -4:4, -8:8
//!
//! [model]
//! kind = example          ; example | custom | counterexample
//! alpha = const(1)
//! p = const(2)
//! gamma = tanh(1, 1, 0)
//! omega = 1
//! ```
//!
//! Missing keys take their defaults; unknown sections or keys are errors.

use std::fmt::Write as _;
use std::path::Path;

use ini::Ini;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::model::{counterexample_appendix_a, exact_example, Coefficients, ExampleSpec, ModelBundle, Nonlinearity, Profile, XFunction};
use crate::poincare::BoundKind;
use crate::solver::SolverOptions;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSection {
    pub m: usize,
    pub n_minus_m: usize,
    pub sizes: Vec<usize>,
    pub extents: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// exact solution `beta(x) gamma(omega . y)` with its matching nonlinearity
    Example,
    /// given coefficients and nonlinearity with Dirichlet data from `boundary`
    Custom,
    /// the rotating-direction field in R x R^2 (no solve)
    Counterexample,
}

impl ModelKind {
    fn name(&self) -> &'static str {
        match self {
            ModelKind::Example => "example",
            ModelKind::Custom => "custom",
            ModelKind::Counterexample => "counterexample",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub alpha: XFunction,
    pub p: XFunction,
    /// `zero`, `allen_cahn` or `poly(c0, c1, ...)` in `u`
    pub f: String,
    pub t0: f64,
    pub beta: XFunction,
    pub gamma: Profile,
    pub omega: Vec<f64>,
    /// Dirichlet data of custom models, a profile of the first y-coordinate
    pub boundary: Profile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToleranceSection {
    /// threshold on `|grad_y u|` relative to its maximum
    pub theta_grad: f64,
    pub tol_stability: f64,
    pub tol_poincare: f64,
    /// `C` in the geometric bound `S, T >= -C h`
    pub tol_geom: f64,
    pub eig_tol: f64,
    /// largest accepted relative defect of the U + S identity
    pub tol_identity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoincareSection {
    pub phis: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthSection {
    pub radii: Vec<f64>,
    pub bound: BoundKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Check {
    Solve,
    Stability,
    Geometry,
    Identity,
    Poincare,
    Growth,
    Parallelism,
    OmegaConstancy,
}

impl Check {
    pub const ALL: [Check; 8] =
        [Check::Solve, Check::Stability, Check::Geometry, Check::Identity, Check::Poincare, Check::Growth, Check::Parallelism, Check::OmegaConstancy];

    pub fn name(&self) -> &'static str {
        match self {
            Check::Solve => "solve",
            Check::Stability => "stability",
            Check::Geometry => "geometry",
            Check::Identity => "identity",
            Check::Poincare => "poincare",
            Check::Growth => "growth",
            Check::Parallelism => "parallelism",
            Check::OmegaConstancy => "omega_constancy",
        }
    }

    fn parse(s: &str) -> Result<Check> {
        Check::ALL.iter().find(|c| c.name() == s).copied().ok_or_else(|| Error::Config(format!("unknown acceptance check `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub dir: String,
    /// also write binary field dumps next to the CSV files
    pub dumps: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub grid: GridSection,
    pub model: ModelSection,
    pub solver: SolverOptions,
    pub tolerance: ToleranceSection,
    pub poincare: PoincareSection,
    pub growth: GrowthSection,
    /// checks whose failure makes the pipeline fail
    pub acceptance: Vec<Check>,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            grid: GridSection { m: 1, n_minus_m: 1, sizes: vec![65, 129], extents: vec![(-4.0, 4.0), (-8.0, 8.0)] },
            model: ModelSection {
                kind: ModelKind::Example,
                alpha: XFunction::constant(1.0),
                p: XFunction::constant(2.0),
                f: "allen_cahn".into(),
                t0: 0.0,
                beta: XFunction::constant(1.0),
                gamma: Profile::Tanh { amp: 1.0, scale: 1.0, shift: 0.0 },
                omega: vec![1.0],
                boundary: Profile::Tanh { amp: 1.0, scale: 1.0, shift: 0.0 },
            },
            solver: SolverOptions::default(),
            tolerance: ToleranceSection {
                theta_grad: 1e-4,
                tol_stability: 1e-8,
                tol_poincare: 1e-6,
                tol_geom: 1.0,
                eig_tol: 1e-10,
                tol_identity: 5e-2,
            },
            poincare: PoincareSection { phis: "random:20".into(), seed: 1 },
            growth: GrowthSection { radii: vec![1.0, 2.0, 4.0], bound: BoundKind::Quadratic },
            acceptance: Check::ALL[..6].to_vec(),
            output: OutputSection { dir: "out".into(), dumps: true },
        }
    }
}

fn list<T>(value: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(parse).collect()
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bound(s: &str) -> Result<BoundKind> {
    match s.trim() {
        "r2" => Ok(BoundKind::Quadratic),
        "n-1" => Ok(BoundKind::NMinusOne),
        other => match other.strip_prefix("n-sigma:") {
            Some(sig) => Ok(BoundKind::NMinusSigma(num("bound", sig)?)),
            None => Err(Error::Config(format!("unknown growth bound `{other}` (r2, n-1, n-sigma:<s>)"))),
        },
    }
}

fn bound_name(b: &BoundKind) -> String {
    match b {
        BoundKind::Quadratic => "r2".into(),
        BoundKind::NMinusOne => "n-1".into(),
        BoundKind::NMinusSigma(s) => format!("n-sigma:{s}"),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

/// Nonlinearity named by a config string.
pub fn parse_nonlinearity(text: &str, t0: f64) -> Result<Nonlinearity> {
    match text.trim() {
        "zero" => Ok(Nonlinearity::zero()),
        "allen_cahn" => Ok(Nonlinearity::allen_cahn(t0)),
        other => match Profile::parse(other)? {
            Profile::Poly(c) => Ok(Nonlinearity::polynomial(c, t0)),
            _ => Err(Error::Config(format!("nonlinearity must be zero, allen_cahn or poly(...), got `{other}`"))),
        },
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = ExperimentConfig::default();
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("");
            for (key, value) in props.iter() {
                cfg.set(section, key, value)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let unknown = || Err(Error::Config(format!("unknown key `{key}` in section [{section}]")));
        match section {
            "grid" => match key {
                "m" => self.grid.m = num(key, value)?,
                "n_minus_m" => self.grid.n_minus_m = num(key, value)?,
                "sizes" => self.grid.sizes = list(value, |s| num(key, s))?,
                "extents" => {
                    self.grid.extents = list(value, |s| {
                        let (lo, hi) = s.split_once(':').ok_or_else(|| Error::Config(format!("extent `{s}` needs lo:hi")))?;
                        Ok((num(key, lo)?, num(key, hi)?))
                    })?
                }
                _ => return unknown(),
            },
            "model" => match key {
                "kind" => {
                    self.model.kind = match value.trim() {
                        "example" => ModelKind::Example,
                        "custom" => ModelKind::Custom,
                        "counterexample" => ModelKind::Counterexample,
                        other => return Err(Error::Config(format!("unknown model kind `{other}`"))),
                    }
                }
                "alpha" => self.model.alpha = XFunction::parse(value)?,
                "p" => self.model.p = XFunction::parse(value)?,
                "f" => {
                    parse_nonlinearity(value, 0.0)?;
                    self.model.f = value.trim().to_string()
                }
                "t0" => self.model.t0 = num(key, value)?,
                "beta" => self.model.beta = XFunction::parse(value)?,
                "gamma" => self.model.gamma = Profile::parse(value)?,
                "omega" => self.model.omega = list(value, |s| num(key, s))?,
                "boundary" => self.model.boundary = Profile::parse(value)?,
                _ => return unknown(),
            },
            "solver" => {
                let s = &mut self.solver;
                match key {
                    "eps_reg" => s.eps_reg = num(key, value)?,
                    "tol_residual" => s.tol_residual = num(key, value)?,
                    "max_iters" => s.max_iters = num(key, value)?,
                    "damping" => s.damping = num(key, value)?,
                    "continuation_steps" => s.continuation_steps = num(key, value)?,
                    "cg_tol" => s.cg_tol = num(key, value)?,
                    "cg_max_iters" => s.cg_max_iters = num(key, value)?,
                    "max_backtracks" => s.max_backtracks = num(key, value)?,
                    _ => return unknown(),
                }
            }
            "tolerance" => {
                let t = &mut self.tolerance;
                match key {
                    "theta_grad" => t.theta_grad = num(key, value)?,
                    "tol_stability" => t.tol_stability = num(key, value)?,
                    "tol_poincare" => t.tol_poincare = num(key, value)?,
                    "tol_geom" => t.tol_geom = num(key, value)?,
                    "eig_tol" => t.eig_tol = num(key, value)?,
                    "tol_identity" => t.tol_identity = num(key, value)?,
                    _ => return unknown(),
                }
            }
            "poincare" => match key {
                "phis" => self.poincare.phis = value.trim().to_string(),
                "seed" => self.poincare.seed = num(key, value)?,
                _ => return unknown(),
            },
            "growth" => match key {
                "radii" => self.growth.radii = list(value, |s| num(key, s))?,
                "bound" => self.growth.bound = parse_bound(value)?,
                _ => return unknown(),
            },
            "acceptance" => match key {
                "checks" => self.acceptance = list(value, Check::parse)?,
                _ => return unknown(),
            },
            "output" => match key {
                "dir" => self.output.dir = value.trim().to_string(),
                "dumps" => self.output.dumps = num(key, value)?,
                _ => return unknown(),
            },
            "" => return Err(Error::Config(format!("key `{key}` outside of any section"))),
            other => return Err(Error::Config(format!("unknown section [{other}]"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.m + self.grid.n_minus_m;
        if self.grid.sizes.len() != n || self.grid.extents.len() != n {
            return Err(Error::Config(format!("grid needs {n} sizes and extents")));
        }
        self.solver.validate()?;
        let t = &self.tolerance;
        for (name, v) in [
            ("theta_grad", t.theta_grad),
            ("tol_stability", t.tol_stability),
            ("tol_poincare", t.tol_poincare),
            ("eig_tol", t.eig_tol),
            ("tol_identity", t.tol_identity),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(t.tol_geom >= 0.0) {
            return Err(Error::Config("tol_geom must be nonnegative".into()));
        }
        Ok(())
    }

    /// Canonical text form; `parse(emit())` reproduces the config.
    pub fn emit(&self) -> String {
        let mut s = String::new();
        let g = &self.grid;
        let ext: Vec<String> = g.extents.iter().map(|(a, b)| format!("{a}:{b}")).collect();
        let _ = writeln!(s, "[grid]\nm = {}\nn_minus_m = {}\nsizes = {}\nextents = {}\n", g.m, g.n_minus_m, join(&g.sizes), ext.join(", "));
        let md = &self.model;
        let _ = writeln!(
            s,
            "[model]\nkind = {}\nalpha = {}\np = {}\nf = {}\nt0 = {}\nbeta = {}\ngamma = {}\nomega = {}\nboundary = {}\n",
            md.kind.name(),
            md.alpha,
            md.p,
            md.f,
            md.t0,
            md.beta,
            md.gamma,
            join(&md.omega),
            md.boundary
        );
        let so = &self.solver;
        let _ = writeln!(
            s,
            "[solver]\neps_reg = {:e}\ntol_residual = {:e}\nmax_iters = {}\ndamping = {}\ncontinuation_steps = {}\ncg_tol = {:e}\ncg_max_iters = {}\nmax_backtracks = {}\n",
            so.eps_reg, so.tol_residual, so.max_iters, so.damping, so.continuation_steps, so.cg_tol, so.cg_max_iters, so.max_backtracks
        );
        let t = &self.tolerance;
        let _ = writeln!(
            s,
            "[tolerance]\ntheta_grad = {:e}\ntol_stability = {:e}\ntol_poincare = {:e}\ntol_geom = {}\neig_tol = {:e}\ntol_identity = {:e}\n",
            t.theta_grad, t.tol_stability, t.tol_poincare, t.tol_geom, t.eig_tol, t.tol_identity
        );
        let _ = writeln!(s, "[poincare]\nphis = {}\nseed = {}\n", self.poincare.phis, self.poincare.seed);
        let _ = writeln!(s, "[growth]\nradii = {}\nbound = {}\n", join(&self.growth.radii), bound_name(&self.growth.bound));
        let checks: Vec<&str> = self.acceptance.iter().map(|c| c.name()).collect();
        let _ = writeln!(s, "[acceptance]\nchecks = {}\n", checks.join(", "));
        let _ = write!(s, "[output]\ndir = {}\ndumps = {}\n", self.output.dir, self.output.dumps);
        s
    }

    pub fn build_grid(&self) -> Result<Grid> {
        Grid::new(self.grid.m, self.grid.n_minus_m, &self.grid.sizes, &self.grid.extents)
    }

    /// Grid, model, Dirichlet data and, when known, the exact field.
    pub fn build(&self) -> Result<Experiment> {
        let grid = self.build_grid()?;
        let md = &self.model;
        match md.kind {
            ModelKind::Example => {
                let spec = ExampleSpec {
                    beta: md.beta.clone(),
                    gamma: md.gamma.clone(),
                    omega: md.omega.clone(),
                    coefficients: Coefficients::new(md.alpha.clone(), md.p.clone(), &grid)?,
                    t0: md.t0,
                };
                let (exact, model) = exact_example(&spec, &grid)?;
                Ok(Experiment { grid, model, boundary: exact.clone(), exact: Some(exact) })
            }
            ModelKind::Custom => {
                let coefficients = Coefficients::new(md.alpha.clone(), md.p.clone(), &grid)?;
                let model = ModelBundle::new(coefficients, parse_nonlinearity(&md.f, md.t0)?, &grid)?;
                let m = grid.m();
                let data = ScalarField::from_fn(&grid, |x| md.boundary.eval(x[m]));
                Ok(Experiment { grid, model, boundary: data, exact: None })
            }
            ModelKind::Counterexample => {
                let field = counterexample_appendix_a(&grid)?.u;
                let coefficients = Coefficients::new(md.alpha.clone(), md.p.clone(), &grid)?;
                let model = ModelBundle::new(coefficients, parse_nonlinearity(&md.f, md.t0)?, &grid)?;
                Ok(Experiment { grid, model, boundary: field.clone(), exact: Some(field) })
            }
        }
    }
}

/// Everything a config describes, ready to run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub grid: Grid,
    pub model: ModelBundle,
    /// Dirichlet data (values off the boundary are ignored by the solver)
    pub boundary: ScalarField,
    pub exact: Option<ScalarField>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_round_trips() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&cfg.emit()).unwrap(), cfg);
    }

    #[test]
    fn partial_config_uses_defaults() {
        let cfg = ExperimentConfig::parse("[grid]\nsizes = 9, 17\n\n[solver]\nmax_iters = 7\n").unwrap();
        assert_eq!(cfg.grid.sizes, vec![9, 17]);
        assert_eq!(cfg.solver.max_iters, 7);
        assert_eq!(cfg.model, ExperimentConfig::default().model);
    }

    #[test]
    fn rejections() {
        assert!(ExperimentConfig::parse("[grid]\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::parse("[nope]\na = 1\n").is_err());
        assert!(ExperimentConfig::parse("[model]\nalpha = sqrt(2)\n").is_err());
        assert!(ExperimentConfig::parse("[model]\nf = tanh(1, 1, 0)\n").is_err());
        assert!(ExperimentConfig::parse("[grid]\nsizes = 9\n").is_err());
        assert!(ExperimentConfig::parse("[tolerance]\ntol_poincare = -1\n").is_err());
        assert!(ExperimentConfig::parse("[acceptance]\nchecks = solve, magic\n").is_err());
        // p dips below 2: rejected when the model is built
        let cfg = ExperimentConfig::parse("[model]\nkind = custom\np = poly(2, 0.5)\n").unwrap();
        assert!(matches!(cfg.build(), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn builds_each_kind() {
        let mut cfg = ExperimentConfig::default();
        cfg.grid.sizes = vec![9, 17];
        let ex = cfg.build().unwrap();
        assert!(ex.exact.is_some());
        cfg.model.kind = ModelKind::Custom;
        assert!(cfg.build().unwrap().exact.is_none());
        cfg.model.kind = ModelKind::Counterexample;
        assert!(cfg.build().is_err());
        cfg.grid = GridSection { m: 1, n_minus_m: 2, sizes: vec![9, 9, 9], extents: vec![(-2.0, 2.0); 3] };
        cfg.model.omega = vec![1.0, 0.0];
        assert!(cfg.build().is_ok());
    }

    proptest! {
        #[test]
        fn round_trip(
            sizes in proptest::collection::vec(3usize..200, 2..4),
            lo in -100.0f64..-0.1,
            tol in 1e-12f64..1e-3,
            radii in proptest::collection::vec(0.1f64..50.0, 3..6),
            seed in any::<u64>(),
            sigma in 0.0f64..1.0,
            dumps in any::<bool>(),
        ) {
            let n = sizes.len();
            let mut cfg = ExperimentConfig {
                grid: GridSection { m: 1, n_minus_m: n - 1, sizes, extents: vec![(lo, -lo * 0.7); n] },
                ..ExperimentConfig::default()
            };
            cfg.model.omega = vec![1.0 / ((n - 1) as f64).sqrt(); n - 1];
            cfg.model.gamma = Profile::Sum(vec![Profile::Tanh { amp: lo, scale: tol, shift: 0.3 }, Profile::Poly(vec![1.0, lo])]);
            cfg.model.alpha = XFunction::along(Profile::Bump { amp: 1.5, center: lo, width: 2.0 }, 0);
            cfg.tolerance.tol_poincare = tol;
            cfg.solver.tol_residual = tol;
            cfg.growth.radii = radii;
            cfg.growth.bound = BoundKind::NMinusSigma(sigma);
            cfg.poincare.seed = seed;
            cfg.output.dumps = dumps;
            cfg.acceptance = vec![Check::Parallelism, Check::Solve];
            let back = ExperimentConfig::parse(&cfg.emit()).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
