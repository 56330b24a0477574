//! Uniform partitions of an interval (and products of two of them).
//!
//! Geometry is done in *cell units*: a point `x` maps to `(x - lo) / h`, so
//! cell `i` is `[i, i + 1)`. Coordinates within [`SNAP_TOL`] of an integer are
//! snapped onto the grid, which keeps aligned (Markov) partitions exact in
//! floating point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map_model::Interval;

/// Coordinates closer than this (in cell units) to a grid line are snapped.
/// Overlaps shorter than this are treated as empty.
pub const SNAP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub domain: Interval,
    pub n: usize,
}

impl Partition {
    pub fn new(domain: Interval, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "a partition needs at least 2 cells, got {n}"
            )));
        }
        Ok(Self { domain, n })
    }

    pub fn unit(n: usize) -> Result<Self> {
        Self::new(Interval::new(0.0, 1.0)?, n)
    }

    /// Cell width.
    pub fn h(&self) -> f64 {
        self.domain.len() / self.n as f64
    }

    pub fn cell_bounds(&self, i: usize) -> (f64, f64) {
        let h = self.h();
        let lo = self.domain.lo + i as f64 * h;
        let hi = if i + 1 == self.n {
            self.domain.hi
        } else {
            self.domain.lo + (i + 1) as f64 * h
        };
        (lo, hi)
    }

    pub fn cell_center(&self, i: usize) -> f64 {
        let (a, b) = self.cell_bounds(i);
        0.5 * (a + b)
    }

    /// Cell containing `x`; the last cell is closed. `None` outside the domain.
    pub fn cell_of(&self, x: f64) -> Option<usize> {
        if !(x >= self.domain.lo && x <= self.domain.hi) {
            return None;
        }
        let i = ((x - self.domain.lo) / self.h()).floor() as usize;
        Some(i.min(self.n - 1))
    }

    /// Maps a phase-space coordinate to cell units, snapping onto grid lines.
    pub fn to_cell_units(&self, x: f64) -> f64 {
        snap((x - self.domain.lo) / self.h())
    }

    /// Converts a length to cell units, snapped.
    pub fn len_to_cell_units(&self, len: f64) -> f64 {
        snap(len / self.h())
    }

    pub fn from_cell_units(&self, u: f64) -> f64 {
        self.domain.lo + u * self.h()
    }

    /// Cells whose overlap with the open interval `(a, b)` (cell units) is
    /// longer than [`SNAP_TOL`], clipped to `0..n`.
    pub fn cells_overlapping(&self, a: f64, b: f64) -> std::ops::Range<usize> {
        overlapping_range(a, b, self.n)
    }

    /// Cells touched by the phase-space interval `[lo, hi]`, clipped.
    pub fn cells_in(&self, lo: f64, hi: f64) -> Vec<usize> {
        self.cells_overlapping(self.to_cell_units(lo), self.to_cell_units(hi))
            .collect()
    }

    /// Same domain, twice as many cells.
    pub fn refined(&self) -> Self {
        Self {
            domain: self.domain,
            n: self.n * 2,
        }
    }

    pub fn same_as(&self, other: &Partition) -> bool {
        self.n == other.n
            && (self.domain.lo - other.domain.lo).abs() <= 1e-12 * self.domain.len()
            && (self.domain.hi - other.domain.hi).abs() <= 1e-12 * self.domain.len()
    }
}

pub(crate) fn snap(u: f64) -> f64 {
    let r = u.round();
    if (u - r).abs() < SNAP_TOL {
        r
    } else {
        u
    }
}

/// Integer cells `k` with `|[k, k+1) ∩ (a, b)| > SNAP_TOL`, clipped to `0..n`.
pub(crate) fn overlapping_range(a: f64, b: f64, n: usize) -> std::ops::Range<usize> {
    if b - a <= SNAP_TOL {
        return 0..0;
    }
    // k + 1 > a + tol  and  k < b - tol
    let first = (a + SNAP_TOL).floor();
    let last_excl = (b - SNAP_TOL).ceil();
    let first = first.max(0.0).min(n as f64) as usize;
    let last_excl = last_excl.max(0.0).min(n as f64) as usize;
    first..last_excl.max(first)
}

/// Compresses a sorted cell list into half-open runs `[start, end)`.
pub fn cell_runs(cells: &[usize]) -> Vec<[usize; 2]> {
    let mut runs: Vec<[usize; 2]> = Vec::new();
    for &c in cells {
        match runs.last_mut() {
            Some(last) if last[1] == c => last[1] = c + 1,
            _ => runs.push([c, c + 1]),
        }
    }
    runs
}

/// Inverse of [`cell_runs`].
pub fn expand_runs(runs: &[[usize; 2]]) -> Vec<usize> {
    runs.iter().flat_map(|r| r[0]..r[1]).collect()
}

/// Product partition for the skew family: `x` cells outer, `y` cells inner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Partition2d {
    pub x: Partition,
    pub y: Partition,
}

impl Partition2d {
    pub fn unit_square(nx: usize, ny: usize) -> Result<Self> {
        Ok(Self {
            x: Partition::unit(nx)?,
            y: Partition::unit(ny)?,
        })
    }

    pub fn len(&self) -> usize {
        self.x.n * self.y.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        ix * self.y.n + iy
    }

    pub fn split(&self, cell: usize) -> (usize, usize) {
        (cell / self.y.n, cell % self.y.n)
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        Some(self.index(self.x.cell_of(x)?, self.y.cell_of(y)?))
    }
}
