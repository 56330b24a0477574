//! Ulam discretizations of the transfer operator of `T` and of its noisy
//! counterpart, as sparse row-stochastic matrices acting on densities from
//! the left: `(f P)_j` is the mass in cell `j` after one step.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map_model::{PiecewiseMap, SkewFamily};
use crate::noise::{BoundaryMode, NoiseKernel};
use crate::partition::{overlapping_range, snap, Partition, Partition2d, SNAP_TOL};
use crate::sparse::CsrMatrix;

/// Geometry a transfer matrix lives on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dim")]
pub enum Layout {
    #[serde(rename = "1d")]
    OneD { partition: Partition },
    #[serde(rename = "2d")]
    TwoD { grid: Partition2d },
}

impl Layout {
    pub fn len(&self) -> usize {
        match self {
            Layout::OneD { partition } => partition.n,
            Layout::TwoD { grid } => grid.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn partition(&self) -> Option<&Partition> {
        match self {
            Layout::OneD { partition } => Some(partition),
            Layout::TwoD { .. } => None,
        }
    }

    pub fn same_as(&self, other: &Layout) -> bool {
        match (self, other) {
            (Layout::OneD { partition: a }, Layout::OneD { partition: b }) => a.same_as(b),
            (Layout::TwoD { grid: a }, Layout::TwoD { grid: b }) => {
                a.x.same_as(&b.x) && a.y.same_as(&b.y)
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatrixKind {
    Unperturbed,
    Perturbed {
        eps: f64,
    },
    MonteCarlo {
        eps: f64,
        samples_per_cell: usize,
        seed: u64,
    },
}

impl MatrixKind {
    pub fn eps(&self) -> Option<f64> {
        match *self {
            MatrixKind::Unperturbed => None,
            MatrixKind::Perturbed { eps } | MatrixKind::MonteCarlo { eps, .. } => Some(eps),
        }
    }

    pub fn is_perturbed(&self) -> bool {
        self.eps().is_some_and(|e| e > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    pub layout: Layout,
    pub kind: MatrixKind,
    pub matrix: CsrMatrix,
}

/// JSON sidecar written next to a coordinate-list CSV export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub layout: Layout,
    #[serde(flatten)]
    pub kind: MatrixKind,
    pub n: usize,
    pub nnz: usize,
}

impl TransferMatrix {
    pub fn n(&self) -> usize {
        self.matrix.n_rows()
    }

    pub fn partition(&self) -> Result<&Partition> {
        self.layout
            .partition()
            .ok_or_else(|| Error::PartitionMismatch("expected a 1-D partition".into()))
    }

    pub fn max_row_sum_deviation(&self) -> f64 {
        self.matrix.max_row_sum_deviation()
    }

    pub fn header(&self) -> MatrixHeader {
        MatrixHeader {
            layout: self.layout,
            kind: self.kind,
            n: self.n(),
            nnz: self.matrix.nnz(),
        }
    }

    /// Path of the JSON header that accompanies `csv`.
    pub fn header_path(csv: &Path) -> PathBuf {
        let mut s = csv.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Writes `row,col,value` lines plus a `<csv>.json` header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "row,col,value")?;
        let mut line = String::new();
        for (i, j, v) in self.matrix.iter() {
            line.clear();
            writeln!(line, "{i},{j},{v}").unwrap();
            w.write_all(line.as_bytes())?;
        }
        w.flush()?;
        let header = serde_json::to_string_pretty(&self.header())?;
        std::fs::write(Self::header_path(path), header + "\n")?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let header: MatrixHeader =
            serde_json::from_str(&std::fs::read_to_string(Self::header_path(path))?)?;
        if header.layout.len() != header.n {
            return Err(Error::Config(format!(
                "header declares n = {} but its layout has {} cells",
                header.n,
                header.layout.len()
            )));
        }
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); header.n];
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if lineno == 0 {
                if line.trim() != "row,col,value" {
                    return Err(Error::Config(format!("unexpected CSV header {line:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Config(format!("malformed matrix line {}: {line:?}", lineno + 1));
            let mut parts = line.split(',');
            let i: usize = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(bad)?;
            let j: usize = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(bad)?;
            let v: f64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(bad)?;
            if i >= header.n || j >= header.n || parts.next().is_some() {
                return Err(bad());
            }
            rows[i].push((j, v));
        }
        Ok(Self {
            layout: header.layout,
            kind: header.kind,
            matrix: CsrMatrix::from_rows(header.n, rows),
        })
    }
}

fn check_same_domain(map: &PiecewiseMap, partition: &Partition) -> Result<()> {
    let d = map.domain();
    let tol = 1e-12 * d.len();
    if (d.lo - partition.domain.lo).abs() > tol || (d.hi - partition.domain.hi).abs() > tol {
        return Err(Error::PartitionMismatch(format!(
            "partition [{}, {}] does not cover the map domain [{}, {}]",
            partition.domain.lo, partition.domain.hi, d.lo, d.hi
        )));
    }
    Ok(())
}

/// Unperturbed Ulam matrix `P[i][j] = m(I_i ∩ T⁻¹ I_j) / m(I_i)`, exact for
/// affine branches.
pub fn build_ulam(map: &PiecewiseMap, partition: &Partition) -> Result<TransferMatrix> {
    check_same_domain(map, partition)?;
    let n = partition.n;
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Vec<(usize, f64)>> {
            let mut row = Vec::new();
            for img in map.cell_images(partition, i) {
                if img.lo < -SNAP_TOL || img.hi > n as f64 + SNAP_TOL {
                    return Err(Error::Structural(format!(
                        "image of cell {i} leaves the domain ({} .. {} in cell units)",
                        img.lo, img.hi
                    )));
                }
                let density = img.mass / (img.hi - img.lo);
                for k in overlapping_range(img.lo, img.hi, n) {
                    let overlap = img.hi.min((k + 1) as f64) - img.lo.max(k as f64);
                    row.push((k, overlap * density));
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(TransferMatrix {
        layout: Layout::OneD {
            partition: *partition,
        },
        kind: MatrixKind::Unperturbed,
        matrix: CsrMatrix::from_rows(n, rows),
    })
}

/// Noise radius in cell units, snapped onto integers.
pub fn eps_in_cells(partition: &Partition, eps: f64) -> f64 {
    snap(eps / partition.h())
}

/// Noise-smoothing matrix `K[j][k] = (1/m(I_j)) ∫_{I_j} ∫_{I_k} h_ε(u - v) dv du`.
/// Under strict boundary handling, rows whose ε-neighbourhood leaves the
/// domain are substochastic; [`build_perturbed`] never lets mass reach them.
pub fn smoothing_matrix(partition: &Partition, kernel: &NoiseKernel) -> CsrMatrix {
    let n = partition.n;
    let r = eps_in_cells(partition, kernel.eps());
    let reach = r.ceil() as i64 + 1;
    let weights: Vec<(i64, f64)> = (-reach..=reach)
        .map(|d| (d, kernel.cell_transfer(d as f64, r)))
        .filter(|(_, w)| *w > 0.0)
        .collect();
    let wrap = kernel.boundary() == BoundaryMode::TorusWrap;
    let rows = (0..n)
        .into_par_iter()
        .map(|j| {
            weights
                .iter()
                .filter_map(|&(d, w)| {
                    let k = j as i64 + d;
                    if wrap {
                        Some((k.rem_euclid(n as i64) as usize, w))
                    } else if (0..n as i64).contains(&k) {
                        Some((k as usize, w))
                    } else {
                        None
                    }
                })
                .collect()
        })
        .collect();
    CsrMatrix::from_rows(n, rows)
}

/// Perturbed matrix `P_ε = P·K`: map first, then smear by the noise.
pub fn build_perturbed(
    map: &PiecewiseMap,
    partition: &Partition,
    kernel: &NoiseKernel,
) -> Result<TransferMatrix> {
    let p = build_ulam(map, partition)?;
    if kernel.boundary() == BoundaryMode::Strict {
        let n = partition.n as f64;
        let r = eps_in_cells(partition, kernel.eps());
        let mut hit = vec![false; partition.n];
        for (_, j, _) in p.matrix.iter() {
            hit[j] = true;
        }
        if let Some(j) = hit.iter().enumerate().find_map(|(j, &h)| {
            let j = j as f64;
            (h && (j - r < -SNAP_TOL || j + 1.0 + r > n + SNAP_TOL)).then_some(j)
        }) {
            let (a, b) = partition.cell_bounds(j as usize);
            return Err(Error::Boundary(format!(
                "the image of T reaches [{a}, {b}) whose {}-neighbourhood leaves the domain",
                kernel.eps()
            )));
        }
    }
    let k = smoothing_matrix(partition, kernel);
    Ok(TransferMatrix {
        layout: p.layout,
        kind: MatrixKind::Perturbed { eps: kernel.eps() },
        matrix: p.matrix.matmul(&k),
    })
}

/// Additive recurrence constants of the plastic number (R2 sequence).
const R2_ALPHA: (f64, f64) = (0.754_877_666_246_692_7, 0.569_840_290_998_053_3);

/// Monte Carlo Ulam matrix of the skew family on a product grid of the unit
/// square. Each cell gets `samples_per_cell` points from a randomly shifted
/// R2 low-discrepancy sequence and one noise draw per point. `kernel = None`
/// runs the noiseless map `Φ₀`. Rows use independent ChaCha streams derived
/// from `(seed, cell)`, so the result does not depend on scheduling.
pub fn build_ulam_2d(
    family: &SkewFamily,
    grid: &Partition2d,
    kernel: Option<&NoiseKernel>,
    samples_per_cell: usize,
    seed: u64,
) -> Result<TransferMatrix> {
    if samples_per_cell < 64 {
        return Err(Error::InvalidArgument(format!(
            "need at least 64 samples per cell, got {samples_per_cell}"
        )));
    }
    let unit = |p: &Partition| p.domain.lo == 0.0 && p.domain.hi == 1.0;
    if !unit(&grid.x) || !unit(&grid.y) {
        return Err(Error::PartitionMismatch(
            "the skew grid must cover [0,1]²".into(),
        ));
    }
    if let Some(k) = kernel {
        if k.eps() >= family.margin() {
            return Err(Error::MarginViolation(format!(
                "eps = {} is not below the margin {}",
                k.eps(),
                family.margin()
            )));
        }
    }
    let total = grid.len();
    let rows: Vec<Vec<(usize, f64)>> = (0..total)
        .into_par_iter()
        .map(|cell| -> Result<Vec<(usize, f64)>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(cell as u64);
            let (ix, iy) = grid.split(cell);
            let (x0, x1) = grid.x.cell_bounds(ix);
            let (y0, y1) = grid.y.cell_bounds(iy);
            let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
            let mut row = Vec::with_capacity(samples_per_cell);
            let weight = 1.0 / samples_per_cell as f64;
            for _ in 0..samples_per_cell {
                u = (u + R2_ALPHA.0).fract();
                v = (v + R2_ALPHA.1).fract();
                let x = x0 + u * (x1 - x0);
                let y = y0 + v * (y1 - y0);
                let omega = kernel.map_or(0.0, |k| k.sample(&mut rng));
                let (xn, yn) = family.eval_skew(omega, x, y)?;
                let dest = grid
                    .cell_of(xn, yn)
                    .expect("eval_skew keeps images inside the unit square");
                row.push((dest, weight));
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(TransferMatrix {
        layout: Layout::TwoD { grid: *grid },
        kind: MatrixKind::MonteCarlo {
            eps: kernel.map_or(0.0, NoiseKernel::eps),
            samples_per_cell,
            seed,
        },
        matrix: CsrMatrix::from_rows(total, rows),
    })
}

/// Row-wise proxy for the operator distance: `max_i ‖P[i,·] - P_ε[i,·]‖₁`,
/// i.e. the largest L¹ displacement of a normalized cell indicator. This is
/// not a certified bound on the BV-to-L¹ operator norm.
pub fn operator_distance(p: &TransferMatrix, p_eps: &TransferMatrix) -> Result<f64> {
    if !p.layout.same_as(&p_eps.layout) {
        return Err(Error::PartitionMismatch(
            "operator distance needs matrices on the same partition".into(),
        ));
    }
    let dist = (0..p.n())
        .into_par_iter()
        .map(|i| {
            let (ca, va) = p.matrix.row(i);
            let (cb, vb) = p_eps.matrix.row(i);
            let (mut a, mut b, mut s) = (0, 0, 0.0);
            while a < ca.len() || b < cb.len() {
                match (ca.get(a), cb.get(b)) {
                    (Some(&x), Some(&y)) if x == y => {
                        s += (va[a] - vb[b]).abs();
                        a += 1;
                        b += 1;
                    }
                    (Some(&x), Some(&y)) if x < y => {
                        s += va[a];
                        a += 1;
                    }
                    (Some(_), None) => {
                        s += va[a];
                        a += 1;
                    }
                    _ => {
                        s += vb[b];
                        b += 1;
                    }
                }
            }
            s
        })
        .reduce(|| 0.0, f64::max);
    Ok(dist)
}
