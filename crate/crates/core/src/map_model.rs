//! Piecewise-affine expanding maps of an interval (optionally a circle) and
//! the skew family `(x, y) ↦ (T(x) + ω·y, 2y mod 1)` built on top of them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{Partition, SNAP_TOL};

/// Relative tolerance for endpoint comparisons in phase space.
const REL_TOL: f64 = 1e-12;

/// A bounded interval `[lo, hi)` (closed at `hi` when it is the last cell of
/// a partition or the end of a map domain).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

impl TryFrom<[f64; 2]> for Interval {
    type Error = Error;

    fn try_from(v: [f64; 2]) -> Result<Self> {
        Interval::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

/// `x ↦ slope·x + intercept` on `domain`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineBranch {
    #[serde(rename = "dom")]
    pub domain: Interval,
    pub slope: f64,
    pub intercept: f64,
    /// Allows `|slope| >= 1` instead of strict expansion.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub transient_ok: bool,
}

impl AffineBranch {
    pub fn new(lo: f64, hi: f64, slope: f64, intercept: f64) -> Result<Self> {
        Ok(Self {
            domain: Interval::new(lo, hi)?,
            slope,
            intercept,
            transient_ok: false,
        })
    }

    pub fn transient(mut self) -> Self {
        self.transient_ok = true;
        self
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    /// Image of `[a, b]` as an ordered pair `(min, max)`.
    pub fn image(&self, a: f64, b: f64) -> (f64, f64) {
        let (ya, yb) = (self.apply(a), self.apply(b));
        if ya <= yb {
            (ya, yb)
        } else {
            (yb, ya)
        }
    }
}

/// One preimage of a point: the point and the index of its branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preimage {
    pub x: f64,
    pub branch: usize,
}

/// Image of part of a partition cell under one branch, in cell units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellImage {
    /// Fraction of the source cell carried by this piece.
    pub mass: f64,
    /// Image interval in cell units, `lo < hi`, reduced into `[0, n]` for
    /// circle maps.
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MapConfig", into = "MapConfig")]
pub struct PiecewiseMap {
    domain: Interval,
    branches: Vec<AffineBranch>,
    wrap: bool,
}

/// On-disk map description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapConfig {
    pub domain: Interval,
    #[serde(default)]
    pub wrap: bool,
    pub branches: Vec<AffineBranch>,
}

impl TryFrom<MapConfig> for PiecewiseMap {
    type Error = Error;

    fn try_from(c: MapConfig) -> Result<Self> {
        PiecewiseMap::new(c.domain, c.branches, c.wrap)
    }
}

impl From<PiecewiseMap> for MapConfig {
    fn from(m: PiecewiseMap) -> Self {
        MapConfig {
            domain: m.domain,
            wrap: m.wrap,
            branches: m.branches,
        }
    }
}

impl PiecewiseMap {
    /// Validates tiling, non-singularity, expansion and (for interval maps)
    /// that every branch image stays inside the domain.
    pub fn new(domain: Interval, branches: Vec<AffineBranch>, wrap: bool) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::InvalidMap("no branches".into()));
        }
        let tol = REL_TOL * domain.len().max(1.0);
        if (branches[0].domain.lo - domain.lo).abs() > tol {
            return Err(Error::InvalidMap(format!(
                "first branch starts at {} but the domain starts at {}",
                branches[0].domain.lo, domain.lo
            )));
        }
        let last = branches.last().unwrap();
        if (last.domain.hi - domain.hi).abs() > tol {
            return Err(Error::InvalidMap(format!(
                "last branch ends at {} but the domain ends at {}",
                last.domain.hi, domain.hi
            )));
        }
        for (k, pair) in branches.windows(2).enumerate() {
            if (pair[0].domain.hi - pair[1].domain.lo).abs() > tol {
                return Err(Error::InvalidMap(format!(
                    "branches {k} and {} do not tile: gap or overlap at [{}, {}]",
                    k + 1,
                    pair[0].domain.hi,
                    pair[1].domain.lo
                )));
            }
        }
        for (k, b) in branches.iter().enumerate() {
            let s = b.slope.abs();
            if !b.slope.is_finite() || !b.intercept.is_finite() || s == 0.0 {
                return Err(Error::InvalidMap(format!("branch {k} is singular")));
            }
            if b.transient_ok {
                if s < 1.0 {
                    return Err(Error::InvalidMap(format!(
                        "branch {k} contracts (|slope| = {s})"
                    )));
                }
            } else if s <= 1.0 {
                return Err(Error::InvalidMap(format!(
                    "branch {k} is not expanding (|slope| = {s})"
                )));
            }
            if !wrap {
                let (ya, yb) = b.image(b.domain.lo, b.domain.hi);
                if ya < domain.lo - tol || yb > domain.hi + tol {
                    return Err(Error::InvalidMap(format!(
                        "branch {k} maps into [{ya}, {yb}], outside the domain [{}, {}]",
                        domain.lo, domain.hi
                    )));
                }
            }
        }
        Ok(Self {
            domain,
            branches,
            wrap,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("map serializes")
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    pub fn branches(&self) -> &[AffineBranch] {
        &self.branches
    }

    pub fn wrap(&self) -> bool {
        self.wrap
    }

    fn tol(&self) -> f64 {
        REL_TOL * self.domain.len().max(1.0)
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        if self.domain.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain {
                x,
                lo: self.domain.lo,
                hi: self.domain.hi,
            })
        }
    }

    /// Reduces a point onto the circle `[lo, hi)`; identity for interval maps.
    pub fn reduce(&self, y: f64) -> f64 {
        if !self.wrap {
            return y;
        }
        let l = self.domain.len();
        let r = self.domain.lo + (y - self.domain.lo).rem_euclid(l);
        if r >= self.domain.hi {
            self.domain.lo
        } else {
            r
        }
    }

    /// Index of the branch whose half-open domain contains `x`.
    pub fn branch_index(&self, x: f64) -> Result<usize> {
        self.check_domain(x)?;
        let k = self.branches.partition_point(|b| b.domain.lo <= x);
        Ok(k.saturating_sub(1))
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let k = self.branch_index(x)?;
        Ok(self.reduce(self.branches[k].apply(x)))
    }

    /// `|T'(x)|`; fails at interior branch endpoints.
    pub fn derivative_abs(&self, x: f64) -> Result<f64> {
        let k = self.branch_index(x)?;
        if self.branches[1..].iter().any(|b| b.domain.lo == x) {
            return Err(Error::Discontinuity { x });
        }
        Ok(self.branches[k].slope.abs())
    }

    /// All `x` with `T(x) = y`, one per branch whose image contains `y`.
    pub fn preimages(&self, y: f64) -> Result<Vec<Preimage>> {
        self.check_domain(y)?;
        let tol = self.tol();
        let last = self.branches.len() - 1;
        let mut out = Vec::new();
        for (k, b) in self.branches.iter().enumerate() {
            let targets: Vec<f64> = if self.wrap {
                // Lifts of y that can lie in the branch image.
                let (ya, yb) = b.image(b.domain.lo, b.domain.hi);
                let l = self.domain.len();
                let m0 = ((ya - y) / l).floor() as i64;
                let m1 = ((yb - y) / l).ceil() as i64;
                (m0..=m1).map(|m| y + m as f64 * l).collect()
            } else {
                vec![y]
            };
            for t in targets {
                let x = (t - b.intercept) / b.slope;
                let inside_right = if k == last {
                    x <= b.domain.hi + tol
                } else {
                    x < b.domain.hi - tol
                };
                if x >= b.domain.lo - tol && inside_right {
                    out.push(Preimage {
                        x: x.clamp(b.domain.lo, b.domain.hi),
                        branch: k,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Image of `[a, b]` (within the domain) as a list of intervals, one per
    /// branch piece; circle images are reduced and split at the seam.
    pub fn image_of(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for br in &self.branches {
            let lo = a.max(br.domain.lo);
            let hi = b.min(br.domain.hi);
            if hi < lo {
                continue;
            }
            let (ya, yb) = br.image(lo, hi);
            if self.wrap {
                let l = self.domain.len();
                let k = ((ya - self.domain.lo) / l).floor();
                let (mut ya, mut yb) = (ya - k * l, yb - k * l);
                while yb > self.domain.hi {
                    out.push((ya, self.domain.hi));
                    ya = self.domain.lo;
                    yb -= l;
                }
                out.push((ya, yb));
            } else {
                out.push((ya, yb));
            }
        }
        out
    }

    /// Images of cell `i` under each branch, in cell units, with the mass
    /// fraction each piece carries. Breakpoints and image endpoints within
    /// [`SNAP_TOL`] of a grid line are snapped onto it, so masses of a cell
    /// sum to one and Markov partitions yield exact cell unions.
    pub fn cell_images(&self, partition: &Partition, i: usize) -> Vec<CellImage> {
        let n = partition.n as f64;
        let (c0, c1) = (i as f64, (i + 1) as f64);
        let mut out = Vec::with_capacity(2);
        for br in &self.branches {
            let b0 = partition.to_cell_units(br.domain.lo);
            let b1 = partition.to_cell_units(br.domain.hi);
            let u0 = c0.max(b0);
            let u1 = c1.min(b1);
            if u1 - u0 <= SNAP_TOL {
                continue;
            }
            let ya = partition.to_cell_units(br.apply(partition.from_cell_units(u0)));
            let yb = partition.to_cell_units(br.apply(partition.from_cell_units(u1)));
            let (lo, hi) = if ya <= yb { (ya, yb) } else { (yb, ya) };
            let mass = u1 - u0;
            if self.wrap {
                let k = (lo / n).floor();
                let (mut lo, mut hi) = (lo - k * n, hi - k * n);
                let total = hi - lo;
                while hi > n + SNAP_TOL {
                    out.push(CellImage {
                        mass: mass * (n - lo) / total,
                        lo,
                        hi: n,
                    });
                    lo = 0.0;
                    hi -= n;
                }
                out.push(CellImage {
                    mass: mass * (hi - lo) / total,
                    lo,
                    hi,
                });
            } else {
                out.push(CellImage { mass, lo, hi });
            }
        }
        out
    }

    /// True iff every cell's image is exactly a union of cells. A partition
    /// whose grid misses a branch endpoint is not Markov and yields `false`.
    pub fn markov_check(&self, partition: &Partition) -> Result<bool> {
        let tol = self.tol();
        if (partition.domain.lo - self.domain.lo).abs() > tol
            || (partition.domain.hi - self.domain.hi).abs() > tol
        {
            return Err(Error::Structural(format!(
                "partition domain [{}, {}] differs from map domain [{}, {}]",
                partition.domain.lo, partition.domain.hi, self.domain.lo, self.domain.hi
            )));
        }
        let on_grid = |x: f64| {
            let u = (x - partition.domain.lo) / partition.h();
            (u - u.round()).abs() * partition.h() <= 1e-12
        };
        if !self.branches.iter().all(|b| on_grid(b.domain.lo)) {
            return Ok(false);
        }
        for i in 0..partition.n {
            let (a, b) = partition.cell_bounds(i);
            for (ya, yb) in self.image_of(a, b) {
                if yb - ya <= tol {
                    continue;
                }
                if !on_grid(ya) || !on_grid(yb) {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// `2x mod 1` on the circle.
    pub fn doubling() -> Self {
        let branches = vec![
            AffineBranch::new(0.0, 0.5, 2.0, 0.0).unwrap(),
            AffineBranch::new(0.5, 1.0, 2.0, -1.0).unwrap(),
        ];
        Self::new(Interval::new(0.0, 1.0).unwrap(), branches, true).unwrap()
    }

    /// Markov map of `[0, 10]` with three ergodic components `[1, 4]`,
    /// `[5.5, 7.5]` and `[7.5, 9.5]`; the last two touch at 7.5.
    pub fn example1() -> Self {
        let raw: [(f64, f64, f64, f64); 11] = [
            (0.0, 1.0, 3.0, 1.0),  // -> [1, 4)
            (1.0, 2.0, 3.0, -2.0), // full branches over [1, 4]
            (2.0, 3.0, -3.0, 10.0),
            (3.0, 4.0, 3.0, -8.0),
            (4.0, 5.0, -3.0, 16.0), // -> (1, 4]
            (5.0, 5.5, 4.0, -14.0), // -> [6, 8)
            (5.5, 6.5, 2.0, -5.5),  // tent over [5.5, 7.5]
            (6.5, 7.5, -2.0, 20.5),
            (7.5, 8.5, 2.0, -7.5), // tent over [7.5, 9.5]
            (8.5, 9.5, -2.0, 26.5),
            (9.5, 10.0, -4.0, 46.5), // -> [6.5, 8.5]
        ];
        let branches = raw
            .iter()
            .map(|&(a, b, s, c)| AffineBranch::new(a, b, s, c).unwrap())
            .collect();
        Self::new(Interval::new(0.0, 10.0).unwrap(), branches, false).unwrap()
    }

    /// Base map of the skew example with parameter `a ∈ (0, 1/8]`: two
    /// components inside `[a, 1/2 - a]` and `[1/2 + a, 1 - a]`.
    pub fn example2(a: f64) -> Result<Self> {
        if !(a > 0.0 && a <= 0.125) {
            return Err(Error::InvalidArgument(format!(
                "example2 needs 0 < a <= 1/8, got {a}"
            )));
        }
        let outer = 1.0 / (2.0 * a);
        let branches = vec![
            AffineBranch::new(0.0, a, outer - 3.0, a)?.transient(),
            AffineBranch::new(a, 0.25, -2.0, a + 0.5)?,
            AffineBranch::new(0.25, 0.5 + a, 2.0, a - 0.5)?,
            AffineBranch::new(0.5 + a, 0.75, -2.0, 2.0 + a)?,
            AffineBranch::new(0.75, 1.0 - a, 2.0, a - 1.0)?,
            AffineBranch::new(1.0 - a, 1.0, 3.0 - outer, -2.5 + outer + 2.0 * a)?.transient(),
        ];
        Self::new(Interval::new(0.0, 1.0)?, branches, false)
    }
}

/// `Φ_ω(x, y) = (T(x) + ω·y, 2y mod 1)` on `[0, 1] × S`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewFamily {
    base: PiecewiseMap,
    margin: f64,
}

impl SkewFamily {
    /// `margin` bounds the admissible noise amplitude: images stay in
    /// `[0, 1]` for `|ω| < margin`.
    pub fn new(base: PiecewiseMap, margin: f64) -> Result<Self> {
        let d = base.domain();
        if base.wrap() || d.lo != 0.0 || d.hi != 1.0 {
            return Err(Error::InvalidMap(
                "the skew base must be an interval map of [0, 1]".into(),
            ));
        }
        if !(margin > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "margin must be positive, got {margin}"
            )));
        }
        // Noise of size < margin must not push any image out of [0, 1].
        let (lo, hi) = base
            .branches()
            .iter()
            .map(|b| b.image(b.domain.lo, b.domain.hi))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), (a, b)| {
                (l.min(a), h.max(b))
            });
        if lo < margin - 1e-12 || hi > 1.0 - margin + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "base image [{lo}, {hi}] is not at distance {margin} from the boundary"
            )));
        }
        Ok(Self { base, margin })
    }

    pub fn example2(a: f64) -> Result<Self> {
        Self::new(PiecewiseMap::example2(a)?, a)
    }

    pub fn base(&self) -> &PiecewiseMap {
        &self.base
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn eval_skew(&self, omega: f64, x: f64, y: f64) -> Result<(f64, f64)> {
        if omega.abs() >= self.margin {
            return Err(Error::MarginViolation(format!(
                "|omega| = {} is not below the margin {}",
                omega.abs(),
                self.margin
            )));
        }
        let y = y.rem_euclid(1.0);
        let x1 = self.base.eval(x)? + omega * y;
        if !(0.0..=1.0).contains(&x1) {
            return Err(Error::MarginViolation(format!("x' = {x1} left [0, 1]")));
        }
        Ok((x1, (2.0 * y).rem_euclid(1.0)))
    }
}
