//! Rectilinear grids, node-valued scalar fields, multilinear interpolation and
//! central-difference gradients.
//!
//! Nodes are stored row-major with dimension 0 varying slowest. A periodic
//! dimension with `n` nodes covers `[lower, upper)`; the node at `upper` is
//! identified with the node at `lower`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest node count per dimension accepted by [`Grid::new`]. The ENO3
/// stencil reaches three nodes to either side.
pub const MIN_NODES: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    counts: Vec<usize>,
    periodic: Vec<bool>,
    #[serde(skip)]
    spacing: Vec<f64>,
    #[serde(skip)]
    strides: Vec<usize>,
}

impl Grid {
    pub fn new(
        lower: Vec<f64>,
        upper: Vec<f64>,
        counts: Vec<usize>,
        periodic: Vec<bool>,
    ) -> Result<Self> {
        let dims = lower.len();
        if dims == 0 || upper.len() != dims || counts.len() != dims || periodic.len() != dims {
            return Err(Error::DimensionMismatch(format!(
                "lower={}, upper={}, counts={}, periodic={}",
                lower.len(),
                upper.len(),
                counts.len(),
                periodic.len()
            )));
        }
        for i in 0..dims {
            if !(lower[i].is_finite() && upper[i].is_finite() && lower[i] < upper[i]) {
                return Err(Error::InvalidGrid(format!(
                    "dimension {i}: bounds [{}, {}] are not ordered",
                    lower[i], upper[i]
                )));
            }
            if counts[i] < MIN_NODES {
                return Err(Error::InvalidGrid(format!(
                    "dimension {i}: {} nodes, at least {MIN_NODES} required",
                    counts[i]
                )));
            }
        }
        let mut grid = Self {
            lower,
            upper,
            counts,
            periodic,
            spacing: Vec::new(),
            strides: Vec::new(),
        };
        grid.derive();
        Ok(grid)
    }

    fn derive(&mut self) {
        let dims = self.lower.len();
        self.spacing = (0..dims)
            .map(|i| {
                let cells = if self.periodic[i] {
                    self.counts[i]
                } else {
                    self.counts[i] - 1
                };
                (self.upper[i] - self.lower[i]) / cells as f64
            })
            .collect();
        self.strides = vec![1; dims];
        for i in (0..dims.saturating_sub(1)).rev() {
            self.strides[i] = self.strides[i + 1] * self.counts[i + 1];
        }
    }

    /// Re-validates a deserialized grid and restores derived quantities.
    pub fn validated(self) -> Result<Self> {
        Self::new(self.lower, self.upper, self.counts, self.periodic)
    }

    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coordinate(&self, dim: usize, index: usize) -> f64 {
        self.lower[dim] + index as f64 * self.spacing[dim]
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, mut flat: usize, out: &mut [usize]) {
        for (o, s) in out.iter_mut().zip(&self.strides) {
            *o = flat / s;
            flat %= s;
        }
    }

    /// Coordinates of the node at `flat`.
    pub fn node(&self, flat: usize) -> Vec<f64> {
        let mut idx = vec![0; self.dims()];
        self.multi_index(flat, &mut idx);
        idx.iter()
            .enumerate()
            .map(|(d, &i)| self.coordinate(d, i))
            .collect()
    }

    /// Largest absolute node coordinate along `dim`.
    pub fn max_abs_coordinate(&self, dim: usize) -> f64 {
        let last = self.coordinate(dim, self.counts[dim] - 1);
        self.lower[dim].abs().max(last.abs())
    }

    /// Wraps periodic coordinates into `[lower, upper)`; leaves others alone.
    pub fn wrap(&self, point: &mut [f64]) {
        for (d, x) in point.iter_mut().enumerate() {
            if self.periodic[d] {
                let period = self.upper[d] - self.lower[d];
                let mut y = (*x - self.lower[d]).rem_euclid(period);
                if y >= period {
                    y = 0.0;
                }
                *x = self.lower[d] + y;
            }
        }
    }

    /// True if every non-periodic coordinate lies within the grid bounds.
    pub fn contains(&self, point: &[f64]) -> bool {
        point.iter().enumerate().all(|(d, &x)| {
            self.periodic[d] || (x >= self.lower[d] && x <= self.upper[d])
        })
    }

    /// Per-dimension cell index and fractional offset of `point`.
    fn locate(&self, point: &[f64], clamp: bool, cells: &mut [(usize, f64)]) -> Result<()> {
        for d in 0..self.dims() {
            let n = self.counts[d];
            let mut x = point[d];
            if !x.is_finite() {
                return Err(Error::NonFinite(format!("query coordinate {d}")));
            }
            if self.periodic[d] {
                let period = self.upper[d] - self.lower[d];
                let s = (x - self.lower[d]).rem_euclid(period) / self.spacing[d];
                let i = (s.floor() as usize).min(n - 1);
                cells[d] = (i, (s - i as f64).clamp(0.0, 1.0));
                continue;
            }
            if x < self.lower[d] || x > self.upper[d] {
                if !clamp {
                    return Err(Error::OutOfDomain {
                        dim: d,
                        value: x,
                        lower: self.lower[d],
                        upper: self.upper[d],
                    });
                }
                x = x.clamp(self.lower[d], self.upper[d]);
            }
            let s = (x - self.lower[d]) / self.spacing[d];
            let i = (s.floor() as usize).min(n - 2);
            cells[d] = (i, (s - i as f64).clamp(0.0, 1.0));
        }
        Ok(())
    }
}

/// Node values over a [`Grid`], row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("field value at node {i}")));
        }
        Ok(Self { values })
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(&grid.node(i))).collect();
        Self::new(grid, values)
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Self {
            values: vec![c; grid.len()],
        }
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self { values }
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

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Spatial gradient of a value function at one point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Costate {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

impl Costate {
    pub fn new(p1: f64, p2: f64, p3: f64) -> Self {
        Self { p1, p2, p3 }
    }

    pub fn scaled(self, k: f64) -> Self {
        Self::new(self.p1 * k, self.p2 * k, self.p3 * k)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.p1, self.p2, self.p3]
    }
}

impl From<[f64; 3]> for Costate {
    fn from(p: [f64; 3]) -> Self {
        Self::new(p[0], p[1], p[2])
    }
}

/// Multilinear interpolation of `field` at `point`.
///
/// Points outside a non-periodic dimension are an error.
pub fn interpolate(grid: &Grid, field: &ScalarField, point: &[f64]) -> Result<f64> {
    interpolate_with(grid, field, point, false)
}

/// As [`interpolate`], optionally clamping non-periodic coordinates onto the
/// boundary instead of failing.
pub fn interpolate_with(grid: &Grid, field: &ScalarField, point: &[f64], clamp: bool) -> Result<f64> {
    if point.len() != grid.dims() {
        return Err(Error::DimensionMismatch(format!(
            "point has {} coordinates, grid has {} dimensions",
            point.len(),
            grid.dims()
        )));
    }
    let mut cells = vec![(0usize, 0.0f64); grid.dims()];
    grid.locate(point, clamp, &mut cells)?;
    Ok(blend(grid, &cells, |flat| field.values[flat]))
}

/// Interpolation weights for one query point, reusable across several fields
/// on the same grid.
#[derive(Clone, Debug)]
pub struct Stencil {
    corners: Vec<(usize, f64)>,
}

impl Stencil {
    pub fn new(grid: &Grid, point: &[f64], clamp: bool) -> Result<Self> {
        if point.len() != grid.dims() {
            return Err(Error::DimensionMismatch(format!(
                "point has {} coordinates, grid has {} dimensions",
                point.len(),
                grid.dims()
            )));
        }
        let dims = grid.dims();
        let mut cells = vec![(0usize, 0.0f64); dims];
        grid.locate(point, clamp, &mut cells)?;
        let mut corners = Vec::with_capacity(1 << dims);
        for mask in 0..(1usize << dims) {
            let mut flat = 0;
            let mut w = 1.0;
            for (d, &(i, frac)) in cells.iter().enumerate() {
                let upper = mask >> (dims - 1 - d) & 1 == 1;
                let mut j = i + upper as usize;
                if j == grid.counts[d] {
                    j = 0;
                }
                flat += j * grid.strides[d];
                w *= if upper { frac } else { 1.0 - frac };
            }
            corners.push((flat, w));
        }
        Ok(Self { corners })
    }

    pub fn apply(&self, values: &[f64]) -> f64 {
        self.corners.iter().map(|&(i, w)| w * values[i]).sum()
    }
}

fn blend(grid: &Grid, cells: &[(usize, f64)], value: impl Fn(usize) -> f64) -> f64 {
    let dims = grid.dims();
    let mut acc = 0.0;
    for mask in 0..(1usize << dims) {
        let mut flat = 0;
        let mut w = 1.0;
        for (d, &(i, frac)) in cells.iter().enumerate() {
            let upper = mask >> (dims - 1 - d) & 1 == 1;
            let mut j = i + upper as usize;
            if j == grid.counts[d] {
                j = 0;
            }
            flat += j * grid.strides[d];
            w *= if upper { frac } else { 1.0 - frac };
        }
        if w != 0.0 {
            acc += w * value(flat);
        }
    }
    acc
}

/// Central-difference gradient of `field`, one field per dimension.
///
/// Non-periodic boundaries fall back to first-order one-sided differences;
/// periodic dimensions wrap.
pub fn gradient_field(grid: &Grid, field: &ScalarField) -> Result<Vec<ScalarField>> {
    if field.len() != grid.len() {
        return Err(Error::DimensionMismatch("field/grid size".into()));
    }
    if field.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient input".into()));
    }
    let dims = grid.dims();
    let mut idx = vec![0; dims];
    let mut out = Vec::with_capacity(dims);
    for d in 0..dims {
        let n = grid.counts[d];
        let stride = grid.strides[d];
        let h = grid.spacing[d];
        let v = &field.values;
        let mut g = vec![0.0; grid.len()];
        for (flat, gi) in g.iter_mut().enumerate() {
            grid.multi_index(flat, &mut idx);
            let i = idx[d];
            let base = flat - i * stride;
            *gi = if grid.periodic[d] {
                let ip = (i + 1) % n;
                let im = (i + n - 1) % n;
                (v[base + ip * stride] - v[base + im * stride]) / (2.0 * h)
            } else if i == 0 {
                (v[flat + stride] - v[flat]) / h
            } else if i == n - 1 {
                (v[flat] - v[flat - stride]) / h
            } else {
                (v[flat + stride] - v[flat - stride]) / (2.0 * h)
            };
        }
        out.push(ScalarField::from_raw(g));
    }
    Ok(out)
}
