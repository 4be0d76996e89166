//! Grid geometry, replicated field stacks and per-field summary statistics.
//!
//! Values are stored row-major: cell `(row, col)` lives at `row * nx + col`,
//! where `col` indexes x and `row` indexes y. Missing values are NaN and are
//! rejected by every numerical routine in this crate.

mod io;

pub use io::{load_grid_stack, read_grid_stack, save_grid_stack, write_grid_stack, StackFormat};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("expected {expected} values, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("field contains missing (NaN) values")]
    MissingValues,
    #[error("field is empty")]
    Empty,
    #[error("grids differ: {0}")]
    GridMismatch(String),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("non-finite value {value} at position {index}")]
    NonFinite { index: usize, value: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Regular rectangular grid with cell-center coordinates
/// `(x0 + (col + 1/2) dx, y0 + (row + 1/2) dy)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, x0: f64, y0: f64, dx: f64, dy: f64) -> Result<Self, FieldError> {
        let grid = Grid { nx, ny, x0, y0, dx, dy };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid covering the unit square `[0,1]^2` with `nx` by `ny` cells.
    pub fn unit_square(nx: usize, ny: usize) -> Result<Self, FieldError> {
        if nx == 0 || ny == 0 {
            return Err(FieldError::InvalidGrid(format!("{nx}x{ny} has no cells")));
        }
        Self::new(nx, ny, 0.0, 0.0, 1.0 / nx as f64, 1.0 / ny as f64)
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if self.nx == 0 || self.ny == 0 {
            return Err(FieldError::InvalidGrid(format!("{}x{} has no cells", self.nx, self.ny)));
        }
        if !(self.dx > 0.0 && self.dy > 0.0) || !self.dx.is_finite() || !self.dy.is_finite() {
            return Err(FieldError::InvalidGrid(format!(
                "cell sizes must be positive, got dx={}, dy={}",
                self.dx, self.dy
            )));
        }
        if !self.x0.is_finite() || !self.y0.is_finite() {
            return Err(FieldError::InvalidGrid("origin must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.nx + col
    }

    /// `(row, col)` of a row-major cell index.
    #[inline]
    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.nx, index % self.nx)
    }

    pub fn center(&self, index: usize) -> (f64, f64) {
        let (row, col) = self.row_col(index);
        (
            self.x0 + (col as f64 + 0.5) * self.dx,
            self.y0 + (row as f64 + 0.5) * self.dy,
        )
    }

    /// Cell-center position normalized to `[0,1]^2` over the grid extent.
    pub fn normalized_center(&self, index: usize) -> (f64, f64) {
        let (row, col) = self.row_col(index);
        (
            (col as f64 + 0.5) / self.nx as f64,
            (row as f64 + 0.5) / self.ny as f64,
        )
    }

    /// Same shape and geometry, compared bit-for-bit.
    pub fn same_as(&self, other: &Grid) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && self.x0.to_bits() == other.x0.to_bits()
            && self.y0.to_bits() == other.y0.to_bits()
            && self.dx.to_bits() == other.dx.to_bits()
            && self.dy.to_bits() == other.dy.to_bits()
    }
}

/// A single realization on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, FieldError> {
        grid.validate()?;
        check_values(&values, grid.len())?;
        Ok(Field { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Field { grid, values: vec![value; grid.len()] }
    }

    pub fn has_missing(&self) -> bool {
        self.values.iter().any(|v| v.is_nan())
    }
}

/// `m` replicated fields sharing one grid, stored replicate-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridStack {
    grid: Grid,
    m: usize,
    values: Vec<f64>,
}

impl GridStack {
    pub fn new(grid: Grid, m: usize, values: Vec<f64>) -> Result<Self, FieldError> {
        grid.validate()?;
        if m == 0 {
            return Err(FieldError::Empty);
        }
        check_values(&values, grid.len() * m)?;
        Ok(GridStack { grid, m, values })
    }

    pub fn from_fields(fields: &[Field]) -> Result<Self, FieldError> {
        let first = fields.first().ok_or(FieldError::Empty)?;
        let grid = first.grid;
        let mut values = Vec::with_capacity(grid.len() * fields.len());
        for (j, f) in fields.iter().enumerate() {
            if !f.grid.same_as(&grid) {
                return Err(FieldError::GridMismatch(format!("replicate {j} has a different grid")));
            }
            values.extend_from_slice(&f.values);
        }
        Self::new(grid, fields.len(), values)
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Replicate count.
    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn replicate(&self, j: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[j * n..(j + 1) * n]
    }

    pub fn field(&self, j: usize) -> Field {
        Field { grid: self.grid, values: self.replicate(j).to_vec() }
    }

    pub fn replicates(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.grid.len())
    }

    /// Time series of a single cell across replicates.
    pub fn cell_series(&self, cell: usize) -> Vec<f64> {
        self.replicates().map(|r| r[cell]).collect()
    }

    /// New stack holding the listed replicates in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<GridStack, FieldError> {
        if indices.is_empty() {
            return Err(FieldError::Empty);
        }
        let mut values = Vec::with_capacity(indices.len() * self.grid.len());
        for &j in indices {
            if j >= self.m {
                return Err(FieldError::Malformed(format!("replicate {j} out of range (m={})", self.m)));
            }
            values.extend_from_slice(self.replicate(j));
        }
        Ok(GridStack { grid: self.grid, m: indices.len(), values })
    }

    pub fn has_missing(&self) -> bool {
        self.values.iter().any(|v| v.is_nan())
    }
}

fn check_values(values: &[f64], expected: usize) -> Result<(), FieldError> {
    if values.len() != expected {
        return Err(FieldError::LengthMismatch { expected, found: values.len() });
    }
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| v.is_infinite()) {
        return Err(FieldError::NonFinite { index, value });
    }
    Ok(())
}

/// Linear-interpolation sample quantile (Hyndman–Fan type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summary statistics of one field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    pub iqr: f64,
    pub range: f64,
}

impl FieldSummary {
    pub const NAMES: [&'static str; 6] = ["min", "max", "mean", "median", "iqr", "range"];

    pub fn as_array(&self) -> [f64; 6] {
        [self.min, self.max, self.mean, self.median, self.iqr, self.range]
    }
}

/// Six summary statistics over all cells. Median and IQR use type-7 quantiles.
pub fn summarize(values: &[f64]) -> Result<FieldSummary, FieldError> {
    if values.is_empty() {
        return Err(FieldError::Empty);
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(FieldError::MissingValues);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let median = quantile_sorted(&sorted, 0.5);
    let iqr = (quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25)).max(0.0);
    Ok(FieldSummary { min, max, mean, median, iqr, range: max - min })
}

pub fn summarize_field(field: &Field) -> Result<FieldSummary, FieldError> {
    summarize(&field.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_field_summary() {
        let s = summarize(&[2.5; 9]).unwrap();
        assert_eq!(s, FieldSummary { min: 2.5, max: 2.5, mean: 2.5, median: 2.5, iqr: 0.0, range: 0.0 });
    }

    #[test]
    fn small_summary() {
        let s = summarize(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.min, s.max, s.mean, s.range), (1.0, 4.0, 2.5, 3.0));
        assert_eq!(s.median, 2.5);
    }

    #[test]
    fn iqr_matches_brute_force_quantile() {
        // Type 7: position (n-1)p on the 0-based sorted array.
        // For 1..=100: Q(0.25) = 1 + 24.75 = 25.75, Q(0.75) = 1 + 74.25 = 75.25.
        let values: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        let s = summarize(&values).unwrap();
        assert!((s.iqr - 49.5).abs() < 1e-12);
        assert!((s.median - 50.5).abs() < 1e-12);
    }

    #[test]
    fn empty_and_missing_rejected() {
        assert!(matches!(summarize(&[]), Err(FieldError::Empty)));
        assert!(matches!(summarize(&[1.0, f64::NAN]), Err(FieldError::MissingValues)));
    }

    #[test]
    fn stack_rejects_wrong_length_and_infinities() {
        let g = Grid::unit_square(2, 2).unwrap();
        assert!(GridStack::new(g, 1, vec![0.0; 3]).is_err());
        assert!(GridStack::new(g, 1, vec![0.0, 1.0, f64::INFINITY, 2.0]).is_err());
        assert!(GridStack::new(g, 1, vec![0.0, 1.0, f64::NAN, 2.0]).unwrap().has_missing());
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(0, 3, 0.0, 0.0, 1.0, 1.0).is_err());
        assert!(Grid::new(3, 3, 0.0, 0.0, 0.0, 1.0).is_err());
        let g = Grid::unit_square(4, 2).unwrap();
        assert_eq!(g.row_col(g.index(1, 3)), (1, 3));
        assert_eq!(g.center(0), (0.125, 0.25));
    }

    proptest! {
        #[test]
        fn summary_is_permutation_invariant(mut v in prop::collection::vec(-1e3f64..1e3, 1..60), seed in any::<u64>()) {
            let a = summarize(&v).unwrap();
            // deterministic shuffle
            let n = v.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                v.swap(i, (s >> 33) as usize % (i + 1));
            }
            let b = summarize(&v).unwrap();
            prop_assert_eq!(a.min, b.min);
            prop_assert_eq!(a.max, b.max);
            prop_assert_eq!(a.median, b.median);
            prop_assert_eq!(a.iqr, b.iqr);
            prop_assert!((a.mean - b.mean).abs() <= 1e-9 * (1.0 + a.mean.abs()));
        }

        #[test]
        fn summary_is_affine_equivariant(v in prop::collection::vec(-1e3f64..1e3, 1..60), a in 0.01f64..100.0, b in -100f64..100.0) {
            let s = summarize(&v).unwrap();
            let w: Vec<f64> = v.iter().map(|x| a * x + b).collect();
            let t = summarize(&w).unwrap();
            let tol = 1e-9 * (1.0 + a * 1e3 + b.abs());
            prop_assert!((t.mean - (a * s.mean + b)).abs() < tol);
            prop_assert!((t.range - a * s.range).abs() < tol);
            prop_assert!((t.median - (a * s.median + b)).abs() < tol);
            prop_assert!((t.iqr - a * s.iqr).abs() < tol);
        }
    }
}
