//! Geometric multigrid V-cycle used as a CG preconditioner for the stencil
//! matrices of this crate.
//!
//! Coarse grids take every other point along the axes that can be halved
//! (odd point count >= 5, spacing not already much coarser than the finest
//! axis); coarse operators are Galerkin products `P^T A P` with multilinear
//! interpolation `P`. Smoothing is damped Jacobi with the same number of
//! sweeps before and after the coarse correction, and the coarsest level is
//! solved densely, so one V-cycle is a fixed symmetric linear operator.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::grid::Grid;
use crate::linalg::{pcg_with, CgOutcome, Stencil, StencilMatrix};

const SWEEPS: usize = 2;
const DENSE_LIMIT: usize = 300;
const COARSEST_JACOBI_SWEEPS: usize = 30;

struct Level {
    a: StencilMatrix,
    inv_diag: Vec<f64>,
    omega: f64,
    /// axes halved when going to the next level
    coarsened: Vec<bool>,
}

enum CoarseSolve {
    Dense { map: Vec<usize>, lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn> },
    Smooth,
}

/// Multigrid hierarchy for a fixed symmetric matrix.
pub struct Multigrid {
    levels: Vec<Level>,
    coarse: CoarseSolve,
}

fn coarsen_axes(grid: &Grid) -> Option<Vec<bool>> {
    let hmin = grid.spacings().iter().cloned().fold(f64::INFINITY, f64::min);
    let axes: Vec<bool> = (0..grid.n())
        .map(|k| {
            let s = grid.size(k);
            s % 2 == 1 && s >= 5 && grid.spacing(k) < 2.0 * hmin * (1.0 + 1e-12)
        })
        .collect();
    axes.iter().any(|&c| c).then_some(axes)
}

fn coarse_grid(grid: &Grid, axes: &[bool]) -> Grid {
    let sizes: Vec<usize> = (0..grid.n()).map(|k| if axes[k] { (grid.size(k) - 1) / 2 + 1 } else { grid.size(k) }).collect();
    grid.resized(&sizes).expect("coarse grid of a valid grid is valid")
}

/// Parents of a fine index along one axis: (coarse index, weight).
#[inline]
fn parents(i: usize, halved: bool) -> [(usize, f64); 2] {
    if !halved {
        [(i, 1.0), (usize::MAX, 0.0)]
    } else if i.is_multiple_of(2) {
        [(i / 2, 1.0), (usize::MAX, 0.0)]
    } else {
        [((i - 1) / 2, 0.5), (i.div_ceil(2), 0.5)]
    }
}

fn jacobi_setup(a: &StencilMatrix) -> (Vec<f64>, f64) {
    let c = a.stencil().centre();
    let interior = a.interior();
    let mut worst = 0.0f64;
    let inv: Vec<f64> = (0..a.dim())
        .map(|i| {
            if !interior[i] {
                return 0.0;
            }
            let d = a.entry(i, c);
            if d > 0.0 {
                let row: f64 = a.row(i).iter().map(|v| v.abs()).sum();
                worst = worst.max(row / d);
                1.0 / d
            } else {
                0.0
            }
        })
        .collect();
    // damping 4/3 over a Gershgorin bound of rho(D^-1 A)
    let omega = if worst > 0.0 { 4.0 / (3.0 * worst) } else { 0.0 };
    (inv, omega)
}

impl Multigrid {
    pub fn new(a: &StencilMatrix) -> Self {
        let mut levels = Vec::new();
        let mut current = a.clone();
        loop {
            let interior_count = current.interior().iter().filter(|&&b| b).count();
            let axes = if interior_count > DENSE_LIMIT { coarsen_axes(current.grid()) } else { None };
            let (inv_diag, omega) = jacobi_setup(&current);
            match axes {
                Some(axes) => {
                    let next = galerkin(&current, &axes);
                    levels.push(Level { a: current, inv_diag, omega, coarsened: axes });
                    current = next;
                }
                None => {
                    let coarse = if interior_count <= 2 * DENSE_LIMIT { dense_solver(&current) } else { None };
                    let n = current.grid().n();
                    levels.push(Level { a: current, inv_diag, omega, coarsened: vec![false; n] });
                    let coarse = coarse.unwrap_or(CoarseSolve::Smooth);
                    return Multigrid { levels, coarse };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// One V-cycle: `z ~ A^{-1} r`.
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let out = self.cycle(0, r);
        z.copy_from_slice(&out);
    }

    /// Damped Jacobi sweeps; `from_zero` skips the product with the zero initial iterate.
    fn smooth(level: &Level, b: &[f64], x: &mut [f64], sweeps: usize, from_zero: bool) {
        let mut ax = vec![0.0; x.len()];
        let mut remaining = sweeps;
        if from_zero && remaining > 0 {
            x.par_iter_mut().enumerate().for_each(|(i, xi)| *xi = level.omega * level.inv_diag[i] * b[i]);
            remaining -= 1;
        }
        for _ in 0..remaining {
            level.a.apply(x, &mut ax);
            x.par_iter_mut().enumerate().for_each(|(i, xi)| *xi += level.omega * level.inv_diag[i] * (b[i] - ax[i]));
        }
    }

    fn cycle(&self, l: usize, b: &[f64]) -> Vec<f64> {
        let level = &self.levels[l];
        let mut x = vec![0.0; b.len()];
        if l + 1 == self.levels.len() {
            match &self.coarse {
                CoarseSolve::Dense { map, lu } => {
                    let rhs = DVector::from_iterator(map.len(), map.iter().map(|&i| b[i]));
                    if let Some(sol) = lu.solve(&rhs) {
                        for (k, &i) in map.iter().enumerate() {
                            x[i] = sol[k];
                        }
                    }
                }
                CoarseSolve::Smooth => Self::smooth(level, b, &mut x, COARSEST_JACOBI_SWEEPS, true),
            }
            return x;
        }
        Self::smooth(level, b, &mut x, SWEEPS, true);
        let mut ax = vec![0.0; x.len()];
        level.a.apply(&x, &mut ax);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let coarse_grid = self.levels[l + 1].a.grid();
        let rc = restrict(level.a.grid(), coarse_grid, &level.coarsened, &r, self.levels[l + 1].a.interior());
        let xc = self.cycle(l + 1, &rc);
        prolong_add(level.a.grid(), &level.coarsened, &xc, coarse_grid, &mut x, level.a.interior());
        Self::smooth(level, b, &mut x, SWEEPS, false);
        x
    }
}

fn dense_solver(a: &StencilMatrix) -> Option<CoarseSolve> {
    let (map, dense) = a.to_dense();
    if map.is_empty() {
        return None;
    }
    let k = map.len();
    let m = DMatrix::from_fn(k, k, |i, j| dense[i][j]);
    Some(CoarseSolve::Dense { map, lu: m.lu() })
}

const MAXD: usize = 8;

#[inline]
fn multi_into(grid: &Grid, index: usize, out: &mut [usize; MAXD]) {
    let mut rest = index;
    for k in (0..grid.n()).rev() {
        out[k] = rest % grid.size(k);
        rest /= grid.size(k);
    }
}

/// Fine neighbours of a coarse point (children) with their interpolation
/// weights; calls `visit(fine_index, weight)`.
#[inline]
fn for_each_child(fine: &Grid, coarse: &Grid, axes: &[bool], ci: usize, mut visit: impl FnMut(usize, f64)) {
    let n = fine.n();
    let mut cidx = [0usize; MAXD];
    multi_into(coarse, ci, &mut cidx);
    let combos = 3usize.pow(n as u32);
    'combo: for code in 0..combos {
        let mut c = code;
        let mut lin = 0usize;
        let mut w = 1.0;
        for k in (0..n).rev() {
            let d = (c % 3) as isize - 1;
            c /= 3;
            let f = if !axes[k] {
                if d != 0 {
                    continue 'combo;
                }
                cidx[k] as isize
            } else {
                if d != 0 {
                    w *= 0.5;
                }
                2 * cidx[k] as isize + d
            };
            if f < 0 || f >= fine.size(k) as isize {
                continue 'combo;
            }
            lin += f as usize * fine.stride(k);
        }
        visit(lin, w);
    }
}

/// Coarse parents of a fine point with their weights; calls `visit(coarse_index, weight)`.
#[inline]
fn for_each_parent(fine: &Grid, coarse: &Grid, axes: &[bool], fidx: &[usize; MAXD], mut visit: impl FnMut(usize, &[usize; MAXD], f64)) {
    let n = fine.n();
    let mut par = [[(0usize, 0.0f64); 2]; MAXD];
    for k in 0..n {
        par[k] = parents(fidx[k], axes[k]);
    }
    for code in 0..1usize << n {
        let mut w = 1.0;
        let mut lin = 0usize;
        let mut cidx = [0usize; MAXD];
        let mut ok = true;
        for k in 0..n {
            let (ci, wk) = par[k][code >> k & 1];
            if wk == 0.0 {
                ok = false;
                break;
            }
            cidx[k] = ci;
            lin += ci * coarse.stride(k);
            w *= wk;
        }
        if ok {
            visit(lin, &cidx, w);
        }
    }
}

fn restrict(fine: &Grid, coarse: &Grid, axes: &[bool], r: &[f64], coarse_interior: &[bool]) -> Vec<f64> {
    (0..coarse.len())
        .into_par_iter()
        .map(|ci| {
            if !coarse_interior[ci] {
                return 0.0;
            }
            let mut sum = 0.0;
            for_each_child(fine, coarse, axes, ci, |fi, w| sum += w * r[fi]);
            sum
        })
        .collect()
}

fn prolong_add(fine: &Grid, axes: &[bool], xc: &[f64], coarse: &Grid, x: &mut [f64], fine_interior: &[bool]) {
    x.par_iter_mut().enumerate().for_each(|(fi, xi)| {
        if !fine_interior[fi] {
            return;
        }
        let mut fidx = [0usize; MAXD];
        multi_into(fine, fi, &mut fidx);
        let mut sum = 0.0;
        for_each_parent(fine, coarse, axes, &fidx, |ci, _, w| sum += w * xc[ci]);
        *xi += sum;
    });
}

/// `P^T A P` on the coarse grid, with a full `3^n` stencil.
fn galerkin(a: &StencilMatrix, axes: &[bool]) -> StencilMatrix {
    let fine = a.grid().clone();
    let coarse = coarse_grid(&fine, axes);
    let n = fine.n();
    let stencil = Stencil::full(&coarse);
    let fst = a.stencil().clone();
    let fine_interior = a.interior().to_vec();
    let coarse_stencil = stencil.clone();
    // base-3 code of a coarse offset -> slot
    let code_of = |cidx: &[usize; MAXD], cj: &[usize; MAXD]| -> Option<usize> {
        let mut off = [0i8; MAXD];
        for k in 0..n {
            off[k] = (cj[k] as isize - cidx[k] as isize) as i8;
        }
        coarse_stencil.slot(&off[..n])
    };
    StencilMatrix::from_rows_with(&coarse, stencil, |ci, out| {
        let mut cidx = [0usize; MAXD];
        multi_into(&coarse, ci, &mut cidx);
        for_each_child(&fine, &coarse, axes, ci, |i, wi| {
            if !fine_interior[i] {
                return;
            }
            let mut fidx = [0usize; MAXD];
            multi_into(&fine, i, &mut fidx);
            for s in 0..fst.len() {
                let v = a.entry(i, s);
                if v == 0.0 {
                    continue;
                }
                let j = (i as isize + fst.linear_offset(s)) as usize;
                if !fine_interior[j] {
                    continue;
                }
                let mut jidx = [0usize; MAXD];
                for (k, &o) in fst.offset(s).iter().enumerate() {
                    jidx[k] = (fidx[k] as isize + o as isize) as usize;
                }
                for_each_parent(&fine, &coarse, axes, &jidx, |_, cj, wj| {
                    let slot = code_of(&cidx, cj).expect("Galerkin coupling stays within the 3^n stencil");
                    out[slot] += wi * v * wj;
                });
            }
        });
    })
}

/// CG on `A x = b` preconditioned by a multigrid V-cycle built for `A`.
pub fn mg_pcg(a: &StencilMatrix, mg: &Multigrid, b: &[f64], x: &mut [f64], rel_tol: f64, max_iter: usize) -> CgOutcome {
    pcg_with(|v, y| a.apply(v, y), |r, z| mg.apply(r, z), a.interior(), b, x, rel_tol, max_iter)
}
