//! Sparse symmetric stencil matrices over the interior of a grid and a
//! preconditioned conjugate-gradient solver with reproducible reductions.

use rayon::prelude::*;

use crate::grid::Grid;

/// Block length for parallel reductions. Partial sums are formed per block and
/// then added in block order, so results do not depend on the thread count.
const REDUCE_BLOCK: usize = 4096;

/// `sum_i a_i b_i` with a fixed summation order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let partial: Vec<f64> =
        a.par_chunks(REDUCE_BLOCK).zip(b.par_chunks(REDUCE_BLOCK)).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>()).collect();
    partial.iter().sum()
}

/// `sum_i w_i a_i b_i` with a fixed summation order.
pub fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let partial: Vec<f64> = w
        .par_chunks(REDUCE_BLOCK)
        .zip(a.par_chunks(REDUCE_BLOCK))
        .zip(b.par_chunks(REDUCE_BLOCK))
        .map(|((w, x), y)| w.iter().zip(x).zip(y).map(|((w, p), q)| w * p * q).sum::<f64>())
        .collect();
    partial.iter().sum()
}

/// `sum_i v_i` with a fixed summation order.
pub fn ordered_sum(v: &[f64]) -> f64 {
    let partial: Vec<f64> = v.par_chunks(REDUCE_BLOCK).map(|c| c.iter().sum::<f64>()).collect();
    partial.iter().sum()
}

/// Offsets in `{-1, 0, 1}^n` with at most two nonzero entries: the coupling
/// pattern of corner-based finite-difference energies.
#[derive(Debug, Clone)]
pub struct Stencil {
    offsets: Vec<Vec<i8>>,
    linear: Vec<isize>,
    /// base-3 code of an offset -> slot, or `usize::MAX`
    lookup: Vec<usize>,
    centre: usize,
}

impl Stencil {
    pub fn new(grid: &Grid) -> Self {
        Self::with_max_nonzeros(grid, 2)
    }

    /// All of `{-1, 0, 1}^n`.
    pub fn full(grid: &Grid) -> Self {
        Self::with_max_nonzeros(grid, grid.n())
    }

    fn with_max_nonzeros(grid: &Grid, max_nonzeros: usize) -> Self {
        let n = grid.n();
        let total = 3usize.pow(n as u32);
        let mut offsets = Vec::new();
        let mut lookup = vec![usize::MAX; total];
        for code in 0..total {
            let mut c = code;
            let mut off = vec![0i8; n];
            for k in (0..n).rev() {
                off[k] = (c % 3) as i8 - 1;
                c /= 3;
            }
            if off.iter().filter(|&&o| o != 0).count() <= max_nonzeros {
                lookup[code] = offsets.len();
                offsets.push(off);
            }
        }
        let linear = offsets.iter().map(|o| o.iter().enumerate().map(|(k, &d)| d as isize * grid.stride(k) as isize).sum()).collect();
        let centre = lookup[(total - 1) / 2];
        Stencil { offsets, linear, lookup, centre }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn centre(&self) -> usize {
        self.centre
    }

    pub fn offset(&self, slot: usize) -> &[i8] {
        &self.offsets[slot]
    }

    pub fn linear_offset(&self, slot: usize) -> isize {
        self.linear[slot]
    }

    /// Slot of the offset `d`, where `d` has entries in `{-1, 0, 1}`.
    pub fn slot(&self, d: &[i8]) -> Option<usize> {
        let code = d.iter().fold(0usize, |acc, &v| acc * 3 + (v + 1) as usize);
        self.lookup.get(code).copied().filter(|&s| s != usize::MAX)
    }

    /// Slot of the negated offset.
    pub fn mirror(&self, slot: usize) -> usize {
        let neg: Vec<i8> = self.offsets[slot].iter().map(|&v| -v).collect();
        self.slot(&neg).expect("stencil is symmetric")
    }
}

/// Symmetric matrix acting on interior grid values. Vectors are full-length
/// with the convention that boundary entries are zero; rows of boundary
/// points are identically zero.
#[derive(Debug, Clone)]
pub struct StencilMatrix {
    grid: Grid,
    stencil: Stencil,
    /// `len * stencil.len()` entries, row-major by grid point
    values: Vec<f64>,
    interior: Vec<bool>,
}

impl StencilMatrix {
    /// Builds the matrix row by row; `row(point, out)` fills the entries of
    /// an interior point's row (slots indexed as in `Stencil`). The result is
    /// then made exactly symmetric by mirroring the upper triangle.
    pub fn from_rows<F>(grid: &Grid, row: F) -> Self
    where
        F: Fn(usize, &mut [f64]) + Sync,
    {
        Self::from_rows_with(grid, Stencil::new(grid), row)
    }

    pub fn from_rows_with<F>(grid: &Grid, stencil: Stencil, row: F) -> Self
    where
        F: Fn(usize, &mut [f64]) + Sync,
    {
        let width = stencil.len();
        let interior: Vec<bool> = (0..grid.len()).map(|i| !grid.is_boundary(i)).collect();
        let mut values = vec![0.0; grid.len() * width];
        values.par_chunks_mut(width).enumerate().for_each(|(i, out)| {
            if interior[i] {
                row(i, out);
            }
        });
        let mut mat = StencilMatrix { grid: grid.clone(), stencil, values, interior };
        mat.symmetrize();
        mat
    }

    fn symmetrize(&mut self) {
        let width = self.stencil.len();
        let mirror: Vec<usize> = (0..width).map(|s| self.stencil.mirror(s)).collect();
        let source = self.values.clone();
        let stencil = &self.stencil;
        let interior = &self.interior;
        self.values.par_chunks_mut(width).enumerate().for_each(|(a, out)| {
            if !interior[a] {
                return;
            }
            for s in 0..width {
                let off = stencil.linear_offset(s);
                if off < 0 {
                    let b = (a as isize + off) as usize;
                    if interior[b] {
                        out[s] = source[b * width + mirror[s]];
                    }
                }
            }
        });
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn stencil(&self) -> &Stencil {
        &self.stencil
    }

    pub fn interior(&self) -> &[bool] {
        &self.interior
    }

    pub fn dim(&self) -> usize {
        self.grid.len()
    }

    pub fn entry(&self, row: usize, slot: usize) -> f64 {
        self.values[row * self.stencil.len() + slot]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let w = self.stencil.len();
        &self.values[row * w..(row + 1) * w]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let c = self.stencil.centre();
        (0..self.dim()).map(|i| self.entry(i, c)).collect()
    }

    /// Adds `shift * d_i` to each interior diagonal entry.
    pub fn add_diagonal(&mut self, shift: f64, d: &[f64]) {
        let w = self.stencil.len();
        let c = self.stencil.centre();
        for (i, &di) in d.iter().enumerate() {
            if self.interior[i] {
                self.values[i * w + c] += shift * di;
            }
        }
    }

    /// `y = (A + shift * diag(d)) x` on interior rows; boundary rows of `y` are zero.
    pub fn apply_shifted(&self, x: &[f64], shift: f64, d: Option<&[f64]>, y: &mut [f64]) {
        let w = self.stencil.len();
        let linear: Vec<isize> = (0..w).map(|s| self.stencil.linear_offset(s)).collect();
        y.par_iter_mut().enumerate().for_each(|(a, ya)| {
            if !self.interior[a] {
                *ya = 0.0;
                return;
            }
            let row = &self.values[a * w..(a + 1) * w];
            let mut acc = 0.0;
            for (s, &v) in row.iter().enumerate() {
                acc += v * x[(a as isize + linear[s]) as usize];
            }
            if let Some(d) = d {
                acc += shift * d[a] * x[a];
            }
            *ya = acc;
        });
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.apply_shifted(x, 0.0, None, y);
    }

    /// `x^T A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut y = vec![0.0; x.len()];
        self.apply(x, &mut y);
        dot(x, &y)
    }

    /// Maximum over interior rows of `|A_ab - A_ba|`.
    pub fn symmetry_defect(&self) -> f64 {
        let w = self.stencil.len();
        let mut worst = 0.0f64;
        for a in 0..self.dim() {
            if !self.interior[a] {
                continue;
            }
            for s in 0..w {
                let b = (a as isize + self.stencil.linear_offset(s)) as usize;
                if self.interior[b] {
                    let m = self.stencil.mirror(s);
                    worst = worst.max((self.entry(a, s) - self.entry(b, m)).abs());
                }
            }
        }
        worst
    }

    /// Lower bound on the smallest eigenvalue of `M^{-1} A` from Gershgorin
    /// discs of the symmetrically scaled matrix `M^{-1/2} A M^{-1/2}`.
    pub fn gershgorin_lower(&self, mass: &[f64]) -> f64 {
        let w = self.stencil.len();
        let c = self.stencil.centre();
        let mut lower = f64::INFINITY;
        for a in 0..self.dim() {
            if !self.interior[a] {
                continue;
            }
            let mut radius = 0.0;
            for s in 0..w {
                if s == c {
                    continue;
                }
                let b = (a as isize + self.stencil.linear_offset(s)) as usize;
                if self.interior[b] {
                    radius += self.entry(a, s).abs() / (mass[a] * mass[b]).sqrt();
                }
            }
            lower = lower.min(self.entry(a, c) / mass[a] - radius);
        }
        lower
    }

    /// Dense copy restricted to interior points, with the interior index map.
    pub fn to_dense(&self) -> (Vec<usize>, Vec<Vec<f64>>) {
        let map: Vec<usize> = (0..self.dim()).filter(|&i| self.interior[i]).collect();
        let mut pos = vec![usize::MAX; self.dim()];
        for (k, &i) in map.iter().enumerate() {
            pos[i] = k;
        }
        let mut dense = vec![vec![0.0; map.len()]; map.len()];
        for (k, &a) in map.iter().enumerate() {
            for s in 0..self.stencil.len() {
                let b = (a as isize + self.stencil.linear_offset(s)) as usize;
                if pos[b] != usize::MAX {
                    dense[k][pos[b]] += self.entry(a, s);
                }
            }
        }
        (map, dense)
    }
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgStatus {
    Converged,
    MaxIterations,
    /// A search direction with `p^T A p <= 0` was met; the iterate is the last
    /// one before that direction.
    NegativeCurvature,
}

#[derive(Debug, Clone, Copy)]
pub struct CgOutcome {
    pub status: CgStatus,
    pub iterations: usize,
    /// final preconditioned-free residual norm relative to `|b|`
    pub relative_residual: f64,
}

/// Preconditioned conjugate gradients for a symmetric operator on the
/// interior. `apply` and `precond` must leave boundary entries zero; `x`
/// holds the initial guess on entry.
pub fn pcg_with<A, P>(apply: A, precond: P, interior: &[bool], b: &[f64], x: &mut [f64], rel_tol: f64, max_iter: usize) -> CgOutcome
where
    A: Fn(&[f64], &mut [f64]),
    P: Fn(&[f64], &mut [f64]),
{
    let n = interior.len();
    for i in 0..n {
        if !interior[i] {
            x[i] = 0.0;
        }
    }
    let masked_b: Vec<f64> = b.iter().zip(interior).map(|(&v, &m)| if m { v } else { 0.0 }).collect();
    let b_norm = dot(&masked_b, &masked_b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return CgOutcome { status: CgStatus::Converged, iterations: 0, relative_residual: 0.0 };
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    r.par_iter_mut().zip(masked_b.par_iter()).for_each(|(ri, &bi)| *ri = bi - *ri);
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut res = dot(&r, &r).sqrt() / b_norm;
    for it in 0..max_iter {
        if res <= rel_tol {
            return CgOutcome { status: CgStatus::Converged, iterations: it, relative_residual: res };
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return CgOutcome { status: CgStatus::NegativeCurvature, iterations: it, relative_residual: res };
        }
        let step = rz / pap;
        x.par_iter_mut().zip(p.par_iter()).for_each(|(xi, pi)| *xi += step * pi);
        r.par_iter_mut().zip(ap.par_iter()).for_each(|(ri, api)| *ri -= step * api);
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        if !(rz_new > 0.0) {
            // preconditioner lost definiteness on this residual; report what we have
            res = dot(&r, &r).sqrt() / b_norm;
            let status = if res <= rel_tol { CgStatus::Converged } else { CgStatus::NegativeCurvature };
            return CgOutcome { status, iterations: it + 1, relative_residual: res };
        }
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(z.par_iter()).for_each(|(pi, zi)| *pi = zi + beta * *pi);
        res = dot(&r, &r).sqrt() / b_norm;
    }
    let status = if res <= rel_tol { CgStatus::Converged } else { CgStatus::MaxIterations };
    CgOutcome { status, iterations: max_iter, relative_residual: res }
}

/// Solves `(A + shift diag(d)) x = b` by Jacobi-preconditioned CG on the interior.
pub fn pcg(a: &StencilMatrix, shift: f64, d: Option<&[f64]>, b: &[f64], x: &mut [f64], rel_tol: f64, max_iter: usize) -> CgOutcome {
    let interior = a.interior();
    let diag = a.diagonal();
    let inv_diag: Vec<f64> = (0..a.dim())
        .map(|i| {
            if !interior[i] {
                return 0.0;
            }
            let v = diag[i] + d.map_or(0.0, |d| shift * d[i]);
            if v > 0.0 {
                1.0 / v
            } else {
                1.0
            }
        })
        .collect();
    pcg_with(
        |x, y| a.apply_shifted(x, shift, d, y),
        |r, z| z.iter_mut().zip(r).zip(&inv_diag).for_each(|((zi, ri), di)| *zi = ri * di),
        interior,
        b,
        x,
        rel_tol,
        max_iter,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian(grid: &Grid) -> StencilMatrix {
        let st = Stencil::new(grid);
        let n = grid.n();
        StencilMatrix::from_rows(grid, |_, out| {
            let mut diag = 0.0;
            for k in 0..n {
                let h2 = grid.spacing(k).powi(2);
                for sgn in [-1i8, 1] {
                    let mut off = vec![0i8; n];
                    off[k] = sgn;
                    out[st.slot(&off).unwrap()] = -1.0 / h2;
                }
                diag += 2.0 / h2;
            }
            out[st.centre()] = diag;
        })
    }

    #[test]
    fn stencil_shape() {
        let g = Grid::new(1, 2, &[3, 3, 3], &[(0.0, 1.0); 3]).unwrap();
        let st = Stencil::new(&g);
        assert_eq!(st.len(), 19);
        assert_eq!(st.offset(st.centre()), &[0, 0, 0]);
        for s in 0..st.len() {
            assert_eq!(st.mirror(st.mirror(s)), s);
        }
    }

    #[test]
    fn cg_solves_poisson_exactly_for_quadratic() {
        // -u'' = 2 with zero data on [0, 1] has u = x(1 - x); the 3-point
        // Laplacian reproduces quadratics exactly.
        let g = Grid::new(1, 1, &[3, 33], &[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let a = laplacian(&g);
        assert_eq!(a.symmetry_defect(), 0.0);
        let mut b = vec![0.0; g.len()];
        let exact: Vec<f64> = (0..g.len())
            .map(|i| {
                let (x, y) = (g.coord(i, 0), g.coord(i, 1));
                x * (1.0 - x) + y * (1.0 - y)
            })
            .collect();
        for i in 0..g.len() {
            if !g.is_boundary(i) {
                b[i] = 4.0;
            }
        }
        // boundary data enters the right-hand side through the couplings
        let mut ext = exact.clone();
        for i in 0..g.len() {
            if !g.is_boundary(i) {
                ext[i] = 0.0;
            }
        }
        let mut lift = vec![0.0; g.len()];
        let st = a.stencil().clone();
        for i in 0..g.len() {
            if g.is_boundary(i) {
                continue;
            }
            let mut acc = 0.0;
            for s in 0..st.len() {
                let j = (i as isize + st.linear_offset(s)) as usize;
                acc += a.entry(i, s) * ext[j];
            }
            lift[i] = acc;
        }
        for i in 0..g.len() {
            b[i] -= lift[i];
        }
        let mut x = vec![0.0; g.len()];
        let out = pcg(&a, 0.0, None, &b, &mut x, 1e-14, 500);
        assert_eq!(out.status, CgStatus::Converged);
        for i in 0..g.len() {
            if !g.is_boundary(i) {
                assert!((x[i] - exact[i]).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn negative_curvature_is_reported() {
        let g = Grid::new(1, 1, &[5, 5], &[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let a = laplacian(&g);
        let ones = vec![1.0; g.len()];
        let mut b = vec![0.0; g.len()];
        for (i, bi) in b.iter_mut().enumerate() {
            if !g.is_boundary(i) {
                *bi = 1.0;
            }
        }
        let mut x = vec![0.0; g.len()];
        let out = pcg(&a, -1e4, Some(&ones), &b, &mut x, 1e-12, 100);
        assert_eq!(out.status, CgStatus::NegativeCurvature);
    }

    #[test]
    fn reductions_are_order_stable() {
        let v: Vec<f64> = (0..100_000).map(|i| ((i * 7919) % 1000) as f64 * 1e-3 - 0.5).collect();
        let first = dot(&v, &v);
        for _ in 0..5 {
            assert_eq!(dot(&v, &v).to_bits(), first.to_bits());
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        assert_eq!(pool.install(|| dot(&v, &v)).to_bits(), first.to_bits());
    }

    #[test]
    fn gershgorin_bounds_spectrum() {
        let g = Grid::new(1, 1, &[6, 7], &[(0.0, 1.0), (0.0, 2.0)]).unwrap();
        let a = laplacian(&g);
        let mass: Vec<f64> = g.trapezoid_weights();
        let low = a.gershgorin_lower(&mass);
        let (map, dense) = a.to_dense();
        let k = map.len();
        let mut m = nalgebra::DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                m[(i, j)] = dense[i][j] / (mass[map[i]] * mass[map[j]]).sqrt();
            }
        }
        let eig = nalgebra::SymmetricEigen::new(m);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(low <= min + 1e-9);
    }
}
