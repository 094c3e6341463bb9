//! Tensor-product grids over boxes in R^m x R^(n-m) and the finite-difference
//! calculus used by every other module.
//!
//! Axis order is `x_1..x_m, y_1..y_(n-m)`; storage is row-major with the last
//! axis varying fastest, so the fiber (`y`) axes are contiguous in memory.

use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, PartialEq)]
struct GridData {
    m: usize,
    sizes: Vec<usize>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
}

/// Structured lattice over a box. Cloning is cheap (shared storage).
#[derive(Debug, Clone)]
pub struct Grid(Arc<GridData>);

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0 == other.0
    }
}

impl Grid {
    /// Builds a grid with `m` leading x-axes and `n_minus_m` trailing y-axes.
    pub fn new(m: usize, n_minus_m: usize, sizes: &[usize], extents: &[(f64, f64)]) -> Result<Self> {
        if m == 0 || n_minus_m == 0 {
            return Err(Error::InvalidGrid(format!("need at least one x-axis and one y-axis (m = {m}, n - m = {n_minus_m})")));
        }
        Self::build(m, n_minus_m, sizes, extents)
    }

    /// One-dimensional fiber grid (no x-axes), used for profile problems along
    /// a single y-direction.
    pub fn fiber(lo: f64, hi: f64, size: usize) -> Result<Self> {
        Self::build(0, 1, &[size], &[(lo, hi)])
    }

    /// Grid with the given per-axis spacing target; the point count on each
    /// axis is `round((hi - lo) / h) + 1`.
    pub fn with_spacing(m: usize, n_minus_m: usize, extents: &[(f64, f64)], h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {h}")));
        }
        let sizes: Vec<usize> = extents.iter().map(|&(lo, hi)| ((hi - lo) / h).round() as usize + 1).collect();
        Self::new(m, n_minus_m, &sizes, extents)
    }

    /// Same axes and extents with different point counts.
    pub(crate) fn resized(&self, sizes: &[usize]) -> Result<Grid> {
        Self::build(self.m(), self.n_minus_m(), sizes, &self.extents())
    }

    fn build(m: usize, n_minus_m: usize, sizes: &[usize], extents: &[(f64, f64)]) -> Result<Self> {
        let n = m + n_minus_m;
        if sizes.len() != n || extents.len() != n {
            return Err(Error::InvalidGrid(format!("expected {n} sizes and extents, got {} and {}", sizes.len(), extents.len())));
        }
        let mut spacing = Vec::with_capacity(n);
        for (k, (&size, &(lo, hi))) in sizes.iter().zip(extents).enumerate() {
            if size < 3 {
                return Err(Error::InvalidGrid(format!("axis {k} has {size} points, need at least 3")));
            }
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::InvalidGrid(format!("axis {k} has empty extent [{lo}, {hi}]")));
            }
            spacing.push((hi - lo) / (size - 1) as f64);
        }
        let mut strides = vec![1usize; n];
        for k in (0..n.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * sizes[k + 1];
        }
        let len = sizes.iter().product();
        Ok(Grid(Arc::new(GridData {
            m,
            sizes: sizes.to_vec(),
            lo: extents.iter().map(|e| e.0).collect(),
            hi: extents.iter().map(|e| e.1).collect(),
            spacing,
            strides,
            len,
        })))
    }

    pub fn n(&self) -> usize {
        self.0.sizes.len()
    }

    pub fn m(&self) -> usize {
        self.0.m
    }

    pub fn n_minus_m(&self) -> usize {
        self.n() - self.0.m
    }

    pub fn sizes(&self) -> &[usize] {
        &self.0.sizes
    }

    pub fn size(&self, axis: usize) -> usize {
        self.0.sizes[axis]
    }

    pub fn lo(&self, axis: usize) -> f64 {
        self.0.lo[axis]
    }

    pub fn hi(&self, axis: usize) -> f64 {
        self.0.hi[axis]
    }

    pub fn extents(&self) -> Vec<(f64, f64)> {
        self.0.lo.iter().copied().zip(self.0.hi.iter().copied()).collect()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.0.spacing[axis]
    }

    pub fn spacings(&self) -> &[f64] {
        &self.0.spacing
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.0.strides[axis]
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.0.len
    }

    pub fn is_empty(&self) -> bool {
        self.0.len == 0
    }

    /// Volume of one lattice cell.
    pub fn cell_volume(&self) -> f64 {
        self.0.spacing.iter().product()
    }

    #[inline]
    pub fn axis_index(&self, index: usize, axis: usize) -> usize {
        (index / self.0.strides[axis]) % self.0.sizes[axis]
    }

    pub fn multi_index(&self, index: usize) -> Vec<usize> {
        (0..self.n()).map(|k| self.axis_index(index, k)).collect()
    }

    pub fn linear_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.0.strides).map(|(i, s)| i * s).sum()
    }

    #[inline]
    pub fn coord(&self, index: usize, axis: usize) -> f64 {
        self.0.lo[axis] + self.axis_index(index, axis) as f64 * self.0.spacing[axis]
    }

    /// Coordinate of lattice line `i` on `axis`.
    #[inline]
    pub fn axis_coord(&self, axis: usize, i: usize) -> f64 {
        self.0.lo[axis] + i as f64 * self.0.spacing[axis]
    }

    /// Writes the coordinates of point `index` into `out` (length n).
    #[inline]
    pub fn point_into(&self, index: usize, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.coord(index, k);
        }
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.n()];
        self.point_into(index, &mut p);
        p
    }

    /// Euclidean norm of the point coordinates, |X|.
    pub fn radius(&self, index: usize) -> f64 {
        (0..self.n()).map(|k| self.coord(index, k).powi(2)).sum::<f64>().sqrt()
    }

    pub fn is_boundary(&self, index: usize) -> bool {
        (0..self.n()).any(|k| {
            let i = self.axis_index(index, k);
            i == 0 || i + 1 == self.0.sizes[k]
        })
    }

    /// Indices of all points not on the box boundary, in storage order.
    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_boundary(i)).collect()
    }

    /// Tensor-product trapezoid weight of a point over the full box.
    pub fn trapezoid_weight(&self, index: usize) -> f64 {
        (0..self.n())
            .map(|k| {
                let i = self.axis_index(index, k);
                if i == 0 || i + 1 == self.0.sizes[k] {
                    0.5 * self.0.spacing[k]
                } else {
                    self.0.spacing[k]
                }
            })
            .product()
    }

    pub fn trapezoid_weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.trapezoid_weight(i)).collect()
    }

    /// Distance from the origin to the nearest box face; balls of smaller
    /// radius centred at the origin lie inside the box.
    pub fn inscribed_radius(&self) -> f64 {
        (0..self.n()).map(|k| if self.lo(k) < 0.0 && self.hi(k) > 0.0 { (-self.lo(k)).min(self.hi(k)) } else { 0.0 }).fold(f64::INFINITY, f64::min)
    }

    /// Number of distinct x-slices (product of x-axis sizes; 1 for fiber grids).
    pub fn x_slice_count(&self) -> usize {
        self.0.sizes[..self.m()].iter().product()
    }

    /// Number of points in one x-slice.
    pub fn fiber_len(&self) -> usize {
        self.0.sizes[self.m()..].iter().product()
    }

    /// Slice number of a point (the x-part of its multi-index, flattened).
    pub fn x_slice_of(&self, index: usize) -> usize {
        index / self.fiber_len()
    }

    /// x-coordinates of slice `slice`.
    pub fn slice_x(&self, slice: usize) -> Vec<f64> {
        self.point(slice * self.fiber_len())[..self.m()].to_vec()
    }

    pub fn same_as(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// A real value per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        ScalarField { grid: grid.clone(), values: vec![c; grid.len()] }
    }

    /// Wraps raw values; rejects wrong length and non-finite entries.
    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!("expected {} values, got {}", grid.len(), values.len())));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(ScalarField { grid: grid.clone(), values })
    }

    pub(crate) fn from_values_unchecked(grid: &Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        ScalarField { grid: grid.clone(), values }
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: &Grid, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let mut p = vec![0.0; grid.n()];
        let values = (0..grid.len())
            .map(|i| {
                grid.point_into(i, &mut p);
                f(&p)
            })
            .collect();
        ScalarField { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, index: usize) -> f64 {
        self.values[index]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &ScalarField, b: f64) -> Result<Self> {
        self.grid.same_as(&other.grid)?;
        let values = self.values.iter().zip(&other.values).map(|(u, v)| a * u + b * v).collect();
        Ok(ScalarField { grid: self.grid.clone(), values })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Max-norm of `self - other`.
    pub fn max_abs_diff(&self, other: &ScalarField) -> Result<f64> {
        self.grid.same_as(&other.grid)?;
        Ok(self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Checks that the field is exactly zero on the box boundary.
    pub fn check_vanishes_on_boundary(&self) -> Result<()> {
        for (index, &value) in self.values.iter().enumerate() {
            if value != 0.0 && self.grid.is_boundary(index) {
                return Err(Error::BoundaryNonzero { index, value });
            }
        }
        Ok(())
    }

    /// Copy with boundary values set to zero.
    pub fn with_zero_boundary(&self) -> Self {
        let mut out = self.clone();
        for i in 0..out.values.len() {
            if out.grid.is_boundary(i) {
                out.values[i] = 0.0;
            }
        }
        out
    }
}

/// n scalar components on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    components: Vec<ScalarField>,
}

impl VectorField {
    pub fn new(components: Vec<ScalarField>) -> Result<Self> {
        let first = components.first().ok_or_else(|| Error::InvalidArgument("no components".into()))?;
        for c in &components[1..] {
            first.grid.same_as(&c.grid)?;
        }
        Ok(VectorField { components })
    }

    pub fn grid(&self) -> &Grid {
        self.components[0].grid()
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn component(&self, k: usize) -> &ScalarField {
        &self.components[k]
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    #[inline]
    pub fn at(&self, index: usize, k: usize) -> f64 {
        self.components[k].values[index]
    }

    /// Pointwise Euclidean norm over the selected components.
    pub fn norm_over(&self, axes: std::ops::Range<usize>) -> ScalarField {
        let grid = self.grid().clone();
        let values = (0..grid.len()).map(|i| axes.clone().map(|k| self.at(i, k).powi(2)).sum::<f64>().sqrt()).collect();
        ScalarField::from_values_unchecked(&grid, values)
    }

    pub fn norm(&self) -> ScalarField {
        self.norm_over(0..self.dim())
    }
}

/// Symmetric n x n matrix per grid point, stored row-major per point.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField {
    grid: Grid,
    dim: usize,
    data: Vec<f64>,
}

impl MatrixField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn at(&self, index: usize) -> &[f64] {
        let d2 = self.dim * self.dim;
        &self.data[index * d2..(index + 1) * d2]
    }

    #[inline]
    pub fn entry(&self, index: usize, i: usize, j: usize) -> f64 {
        self.data[index * self.dim * self.dim + i * self.dim + j]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.grid.len()).all(|p| (0..self.dim).all(|i| (0..i).all(|j| self.entry(p, i, j) == self.entry(p, j, i))))
    }
}

fn derivative_along(values: &[f64], grid: &Grid, axis: usize) -> Vec<f64> {
    let stride = grid.stride(axis);
    let size = grid.size(axis);
    let inv2h = 0.5 / grid.spacing(axis);
    (0..values.len())
        .map(|i| {
            let a = grid.axis_index(i, axis);
            if a == 0 {
                (-3.0 * values[i] + 4.0 * values[i + stride] - values[i + 2 * stride]) * inv2h
            } else if a + 1 == size {
                (3.0 * values[i] - 4.0 * values[i - stride] + values[i - 2 * stride]) * inv2h
            } else {
                (values[i + stride] - values[i - stride]) * inv2h
            }
        })
        .collect()
}

/// Second-order finite-difference gradient: central in the interior,
/// three-point one-sided on the box boundary.
pub fn gradient(field: &ScalarField) -> VectorField {
    let grid = field.grid();
    let components = (0..grid.n()).map(|k| ScalarField::from_values_unchecked(grid, derivative_along(&field.values, grid, k))).collect();
    VectorField { components }
}

/// Hessian by nested differences, `H_kl = D_k D_l u`, symmetrized.
pub fn hessian(field: &ScalarField) -> MatrixField {
    let grid = field.grid();
    let n = grid.n();
    let first: Vec<Vec<f64>> = (0..n).map(|l| derivative_along(&field.values, grid, l)).collect();
    let mut nested = vec![vec![Vec::new(); n]; n];
    for k in 0..n {
        for l in 0..n {
            nested[k][l] = derivative_along(&first[l], grid, k);
        }
    }
    let mut data = vec![0.0; grid.len() * n * n];
    for p in 0..grid.len() {
        let block = &mut data[p * n * n..(p + 1) * n * n];
        for k in 0..n {
            block[k * n + k] = nested[k][k][p];
            for l in 0..k {
                let v = 0.5 * (nested[k][l][p] + nested[l][k][p]);
                block[k * n + l] = v;
                block[l * n + k] = v;
            }
        }
    }
    MatrixField { grid: grid.clone(), dim: n, data }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegionKind {
    /// Every grid point (the closed box).
    Domain,
    /// Points off the box boundary.
    Interior,
    Ball {
        radius: f64,
    },
    Annulus {
        inner: f64,
        outer: f64,
    },
    Custom(String),
}

/// Boolean mask over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    grid: Grid,
    mask: Vec<bool>,
    kind: RegionKind,
}

impl Region {
    pub fn domain(grid: &Grid) -> Self {
        Region { grid: grid.clone(), mask: vec![true; grid.len()], kind: RegionKind::Domain }
    }

    pub fn interior(grid: &Grid) -> Self {
        let mask = (0..grid.len()).map(|i| !grid.is_boundary(i)).collect();
        Region { grid: grid.clone(), mask, kind: RegionKind::Interior }
    }

    /// Closed ball |X| <= radius centred at the origin.
    pub fn ball(grid: &Grid, radius: f64) -> Self {
        let mask = (0..grid.len()).map(|i| grid.radius(i) <= radius).collect();
        Region { grid: grid.clone(), mask, kind: RegionKind::Ball { radius } }
    }

    /// Points with |X| in [inner, outer].
    pub fn annulus(grid: &Grid, inner: f64, outer: f64) -> Result<Self> {
        if !(inner <= outer) {
            return Err(Error::InvalidRegion(format!("annulus needs inner <= outer, got [{inner}, {outer}]")));
        }
        let mask = (0..grid.len())
            .map(|i| {
                let r = grid.radius(i);
                r >= inner && r <= outer
            })
            .collect();
        Ok(Region { grid: grid.clone(), mask, kind: RegionKind::Annulus { inner, outer } })
    }

    pub fn custom(grid: &Grid, mask: Vec<bool>, label: impl Into<String>) -> Result<Self> {
        if mask.len() != grid.len() {
            return Err(Error::InvalidRegion(format!("mask has {} entries, grid has {}", mask.len(), grid.len())));
        }
        Ok(Region { grid: grid.clone(), mask, kind: RegionKind::Custom(label.into()) })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kind(&self) -> &RegionKind {
        &self.kind
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn contains(&self, index: usize) -> bool {
        self.mask[index]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn intersect(&self, other: &Region) -> Result<Region> {
        self.grid.same_as(&other.grid)?;
        let mask = self.mask.iter().zip(&other.mask).map(|(a, b)| *a && *b).collect();
        Ok(Region { grid: self.grid.clone(), mask, kind: RegionKind::Custom("intersection".into()) })
    }

    pub fn complement(&self) -> Region {
        let mask = self.mask.iter().map(|b| !b).collect();
        Region { grid: self.grid.clone(), mask, kind: RegionKind::Custom("complement".into()) }
    }
}

/// Trapezoid quadrature of `field` restricted to `region`: each masked point
/// carries its full-box tensor trapezoid weight, so integrals over a disjoint
/// partition of masks add up to the full integral. Curved masks are staircased
/// and therefore only first-order accurate. An empty mask integrates to 0 and
/// logs a warning.
pub fn integrate(field: &ScalarField, region: &Region) -> Result<f64> {
    field.grid().same_as(region.grid())?;
    if region.is_empty() {
        log::warn!("integration over an empty region ({:?})", region.kind());
        return Ok(0.0);
    }
    let grid = field.grid();
    Ok(region.indices().map(|i| grid.trapezoid_weight(i) * field.values[i]).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(n_pts: usize, lo: f64, hi: f64) -> Grid {
        Grid::new(1, 1, &[n_pts, n_pts], &[(lo, hi), (lo, hi)]).unwrap()
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid::new(0, 2, &[3, 3], &[(0.0, 1.0), (0.0, 1.0)]).is_err());
        assert!(Grid::new(1, 1, &[2, 3], &[(0.0, 1.0), (0.0, 1.0)]).is_err());
        assert!(Grid::new(1, 1, &[3, 3], &[(1.0, 1.0), (0.0, 1.0)]).is_err());
        assert!(Grid::new(1, 1, &[3], &[(0.0, 1.0)]).is_err());
    }

    #[test]
    fn y_axes_vary_fastest() {
        let g = Grid::new(1, 2, &[3, 4, 5], &[(0.0, 1.0), (0.0, 1.0), (0.0, 1.0)]).unwrap();
        assert_eq!(g.stride(2), 1);
        assert_eq!(g.stride(1), 5);
        assert_eq!(g.stride(0), 20);
        assert_eq!(g.multi_index(g.linear_index(&[2, 1, 3])), vec![2, 1, 3]);
        assert_eq!(g.fiber_len(), 20);
        assert_eq!(g.x_slice_count(), 3);
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let g = square(9, 0.0, 1.0);
        let u = ScalarField::constant(&g, 7.0);
        let du = gradient(&u);
        assert_eq!(du.component(0).max_abs(), 0.0);
        assert_eq!(du.component(1).max_abs(), 0.0);
    }

    #[test]
    fn gradient_exact_on_affine() {
        let g = Grid::new(1, 2, &[5, 6, 7], &[(-1.0, 2.0), (0.0, 1.0), (-3.0, 3.0)]).unwrap();
        let a = [0.3, -1.7, 2.5];
        let u = ScalarField::from_fn(&g, |p| 1.0 + a[0] * p[0] + a[1] * p[1] + a[2] * p[2]);
        let du = gradient(&u);
        for k in 0..3 {
            for &v in du.component(k).values() {
                assert!((v - a[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_of_half_square_norm_is_identity_map() {
        let g = Grid::new(1, 1, &[3, 3], &[(-1.0, 1.0), (-1.0, 1.0)]).unwrap();
        let u = ScalarField::from_fn(&g, |p| 0.5 * (p[0] * p[0] + p[1] * p[1]));
        let du = gradient(&u);
        // 3-point-per-axis grid: the only interior point is the origin,
        // but quadratics are reproduced exactly at every point.
        for i in 0..g.len() {
            let p = g.point(i);
            assert!((du.at(i, 0) - p[0]).abs() < 1e-14);
            assert!((du.at(i, 1) - p[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn hessian_examples() {
        let g = square(7, -1.0, 1.0);
        let affine = ScalarField::from_fn(&g, |p| 2.0 * p[0] - p[1] + 4.0);
        let h = hessian(&affine);
        assert!(h.data.iter().all(|v| v.abs() < 1e-12));

        let xy = ScalarField::from_fn(&g, |p| p[0] * p[1]);
        let h = hessian(&xy);
        for i in g.interior_indices() {
            assert!(h.entry(i, 0, 0).abs() < 1e-12);
            assert!(h.entry(i, 1, 1).abs() < 1e-12);
            assert!((h.entry(i, 0, 1) - 1.0).abs() < 1e-12);
        }

        let q = ScalarField::from_fn(&g, |p| 0.5 * (p[0] * p[0] + p[1] * p[1]));
        let h = hessian(&q);
        for i in g.interior_indices() {
            assert!((h.entry(i, 0, 0) - 1.0).abs() < 1e-12);
            assert!((h.entry(i, 1, 1) - 1.0).abs() < 1e-12);
            assert!(h.entry(i, 0, 1).abs() < 1e-12);
        }
        assert!(h.is_symmetric());
    }

    #[test]
    fn integrate_constants_and_affine() {
        let g = square(11, 0.0, 1.0);
        let one = ScalarField::constant(&g, 1.0);
        assert!((integrate(&one, &Region::domain(&g)).unwrap() - 1.0).abs() < 1e-12);
        let x1 = ScalarField::from_fn(&g, |p| p[0]);
        assert!((integrate(&x1, &Region::domain(&g)).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn integrate_empty_region_is_zero() {
        let g = square(5, 0.0, 1.0);
        let r = Region::custom(&g, vec![false; g.len()], "empty").unwrap();
        assert_eq!(integrate(&ScalarField::constant(&g, 3.0), &r).unwrap(), 0.0);
    }

    #[test]
    fn annulus_area_converges() {
        let exact = std::f64::consts::PI * (1.0 - 0.25);
        let mut errs = Vec::new();
        for n_pts in [101, 201, 401] {
            let g = square(n_pts, -1.0, 1.0);
            let r = Region::annulus(&g, 0.5, 1.0).unwrap();
            let area = integrate(&ScalarField::constant(&g, 1.0), &r).unwrap();
            errs.push((area - exact).abs());
        }
        let h = 2.0 / 400.0;
        assert!(errs[2] < 4.0 * h, "{errs:?}");
        assert!(Region::annulus(&square(5, -1.0, 1.0), 1.0, 0.5).is_err());
    }

    #[test]
    fn annulus_marks_exact_shell() {
        let g = square(21, -1.0, 1.0);
        let r = Region::annulus(&g, 0.3, 0.7).unwrap();
        for i in 0..g.len() {
            let rad = g.radius(i);
            assert_eq!(r.contains(i), (0.3..=0.7).contains(&rad));
        }
    }

    #[test]
    fn gradient_converges_at_second_order() {
        let mut errs = Vec::new();
        for n_pts in [17, 33, 65] {
            let g = square(n_pts, 0.0, 2.0);
            let u = ScalarField::from_fn(&g, |p| p[0].sin() * p[1].sin());
            let du = gradient(&u);
            let mut err: f64 = 0.0;
            for i in 0..g.len() {
                let p = g.point(i);
                err = err.max((du.at(i, 0) - p[0].cos() * p[1].sin()).abs());
                err = err.max((du.at(i, 1) - p[0].sin() * p[1].cos()).abs());
            }
            errs.push(err);
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 1.9, "observed order {order} from {errs:?}");
        }
    }

    #[test]
    fn boundary_vanishing_check() {
        let g = square(5, 0.0, 1.0);
        let f = ScalarField::constant(&g, 1.0);
        assert!(f.check_vanishes_on_boundary().is_err());
        assert!(f.with_zero_boundary().check_vanishes_on_boundary().is_ok());
    }
}
