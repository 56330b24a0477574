//! Monte Carlo realizations of the perturbed chain.
//!
//! Every chain draws from its own ChaCha8 stream: the generator is seeded with
//! the base seed and the stream is set to the chain (or trial) index, so
//! results do not depend on how rayon schedules the work.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map_model::{PiecewiseMap, SkewFamily};
use crate::noise::{BoundaryMode, NoiseKernel};
use crate::partition::{Partition, Partition2d};

/// Generator for chain `stream` under `seed`.
pub fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Histogram of post-burn-in states over a partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub partition: Partition,
    pub counts: Vec<u64>,
    pub total: u64,
    pub burn_in: usize,
    pub seed: u64,
}

impl EmpiricalMeasure {
    pub fn new(partition: Partition, burn_in: usize, seed: u64) -> Self {
        Self {
            partition,
            counts: vec![0; partition.n],
            total: 0,
            burn_in,
            seed,
        }
    }

    fn record(&mut self, x: f64) {
        if let Some(c) = self.partition.cell_of(x) {
            self.counts[c] += 1;
            self.total += 1;
        }
    }

    /// Cell masses `counts / total` (all zero when nothing was recorded).
    pub fn normalized(&self) -> Vec<f64> {
        let t = self.total.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    /// Adds the tallies of `other`, which must share the partition.
    pub fn merge(&mut self, other: &EmpiricalMeasure) -> Result<()> {
        if !self.partition.same_as(&other.partition) {
            return Err(Error::PartitionMismatch(
                "cannot merge histograms on different partitions".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }

    /// Fraction of samples in cells where `mask` is set.
    pub fn mass_on(&self, mask: &[bool]) -> f64 {
        let hit: u64 = self
            .counts
            .iter()
            .zip(mask)
            .filter(|(_, m)| **m)
            .map(|(c, _)| c)
            .sum();
        hit as f64 / self.total.max(1) as f64
    }
}

/// `Σ_j |counts_j / total - density_j|`, with `density` given as cell masses.
pub fn l1_distance(em: &EmpiricalMeasure, density: &[f64]) -> Result<f64> {
    if density.len() != em.counts.len() {
        return Err(Error::PartitionMismatch(format!(
            "histogram has {} cells, density has {}",
            em.counts.len(),
            density.len()
        )));
    }
    Ok(em
        .normalized()
        .iter()
        .zip(density)
        .map(|(a, b)| (a - b).abs())
        .sum())
}

/// Sums cell masses on `fine` into the cells of `coarse`. The partitions must
/// share a domain and `coarse.n` must divide `fine.n`.
pub fn coarsen_masses(masses: &[f64], fine: &Partition, coarse: &Partition) -> Result<Vec<f64>> {
    if fine.domain != coarse.domain || !fine.n.is_multiple_of(coarse.n) || masses.len() != fine.n {
        return Err(Error::PartitionMismatch(format!(
            "cannot coarsen {} cells on {:?} into {} cells on {:?}",
            fine.n, fine.domain, coarse.n, coarse.domain
        )));
    }
    let k = fine.n / coarse.n;
    Ok(masses.chunks(k).map(|c| c.iter().sum()).collect())
}

/// Which post-burn-in points to keep for scatter output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thinning {
    pub every: usize,
    pub max_points: usize,
}

impl Default for Thinning {
    fn default() -> Self {
        Self {
            every: 10,
            max_points: 100_000,
        }
    }
}

impl Thinning {
    pub fn none() -> Self {
        Self {
            every: 1,
            max_points: 0,
        }
    }

    fn keep(&self, step: usize, kept: usize) -> bool {
        kept < self.max_points && step.is_multiple_of(self.every.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitPoint {
    pub chain: usize,
    pub step: usize,
    pub x: f64,
    pub y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainRun {
    pub measure: EmpiricalMeasure,
    pub points: Vec<OrbitPoint>,
}

fn check_chain_args(n: usize, burn_in: usize) -> Result<()> {
    if n <= burn_in {
        return Err(Error::InvalidArgument(format!(
            "chain length {n} must exceed the burn-in {burn_in}"
        )));
    }
    Ok(())
}

/// One step `x ↦ T(x) + ω` with the kernel's boundary handling. `Err(y)`
/// carries the offending point when a strict chain leaves the domain.
fn step<R: Rng + ?Sized>(
    map: &PiecewiseMap,
    kernel: &NoiseKernel,
    x: f64,
    rng: &mut R,
) -> Result<std::result::Result<f64, f64>> {
    let y = map.eval(x)? + kernel.sample(rng);
    let d = map.domain();
    Ok(match kernel.boundary() {
        BoundaryMode::TorusWrap => {
            let r = d.lo + (y - d.lo).rem_euclid(d.len());
            Ok(if r >= d.hi { d.lo } else { r })
        }
        BoundaryMode::Strict if d.contains(y) => Ok(y),
        BoundaryMode::Strict => Err(y),
    })
}

/// Runs `x_0 = x0, x_{t+1} = T(x_t) + ω_t` for `n` states and tallies
/// `x_burn_in, ..., x_{n-1}` on `partition`.
pub fn run_chain(
    map: &PiecewiseMap,
    kernel: &NoiseKernel,
    x0: f64,
    n: usize,
    burn_in: usize,
    seed: u64,
    partition: &Partition,
) -> Result<EmpiricalMeasure> {
    Ok(run_chain_with(
        map,
        kernel,
        x0,
        n,
        burn_in,
        seed,
        0,
        partition,
        Thinning::none(),
    )?
    .measure)
}

/// [`run_chain`] on stream `chain`, also keeping thinned orbit points.
#[allow(clippy::too_many_arguments)]
pub fn run_chain_with(
    map: &PiecewiseMap,
    kernel: &NoiseKernel,
    x0: f64,
    n: usize,
    burn_in: usize,
    seed: u64,
    chain: usize,
    partition: &Partition,
    thinning: Thinning,
) -> Result<ChainRun> {
    check_chain_args(n, burn_in)?;
    if !partition.same_as(&Partition::new(map.domain(), partition.n)?) {
        return Err(Error::PartitionMismatch(
            "histogram partition must cover the map domain".into(),
        ));
    }
    if !map.domain().contains(x0) {
        let d = map.domain();
        return Err(Error::Domain {
            x: x0,
            lo: d.lo,
            hi: d.hi,
        });
    }
    let mut rng = chain_rng(seed, chain as u64);
    let mut measure = EmpiricalMeasure::new(*partition, burn_in, seed);
    let mut points = Vec::new();
    let mut x = x0;
    for t in 0..n {
        if t >= burn_in {
            measure.record(x);
            if thinning.keep(t - burn_in, points.len()) {
                points.push(OrbitPoint {
                    chain,
                    step: t,
                    x,
                    y: None,
                });
            }
        }
        if t + 1 < n {
            x = step(map, kernel, x, &mut rng)?
                .map_err(|y| Error::ChainExit { step: t + 1, x: y })?;
        }
    }
    Ok(ChainRun { measure, points })
}

/// Independent chains from `starts`, chain `i` on stream `i`.
#[allow(clippy::too_many_arguments)]
pub fn run_chains(
    map: &PiecewiseMap,
    kernel: &NoiseKernel,
    starts: &[f64],
    n: usize,
    burn_in: usize,
    seed: u64,
    partition: &Partition,
    thinning: Thinning,
) -> Result<Vec<ChainRun>> {
    starts
        .par_iter()
        .enumerate()
        .map(|(i, &x0)| run_chain_with(map, kernel, x0, n, burn_in, seed, i, partition, thinning))
        .collect()
}

/// Sum of the histograms of several runs.
pub fn pooled(runs: &[ChainRun]) -> Result<Option<EmpiricalMeasure>> {
    let mut it = runs.iter();
    let Some(first) = it.next() else {
        return Ok(None);
    };
    let mut acc = first.measure.clone();
    for r in it {
        acc.merge(&r.measure)?;
    }
    Ok(Some(acc))
}

/// Two-dimensional histogram over `[0,1] × S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure2d {
    pub grid: Partition2d,
    pub counts: Vec<u64>,
    pub total: u64,
    pub burn_in: usize,
    pub seed: u64,
}

impl EmpiricalMeasure2d {
    pub fn new(grid: Partition2d, burn_in: usize, seed: u64) -> Self {
        Self {
            grid,
            counts: vec![0; grid.len()],
            total: 0,
            burn_in,
            seed,
        }
    }

    pub fn merge(&mut self, other: &EmpiricalMeasure2d) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::PartitionMismatch(
                "cannot merge histograms on different grids".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }

    /// Counts summed over the fiber.
    pub fn x_marginal(&self) -> Vec<u64> {
        self.counts
            .chunks(self.grid.y.n)
            .map(|c| c.iter().sum())
            .collect()
    }

    /// Fraction of samples whose x-cell lies entirely in `{x > threshold}`.
    pub fn occupancy_right_of(&self, threshold: f64) -> f64 {
        let marg = self.x_marginal();
        let hit: u64 = marg
            .iter()
            .enumerate()
            .filter(|(i, _)| self.grid.x.cell_bounds(*i).0 >= threshold)
            .map(|(_, c)| c)
            .sum();
        hit as f64 / self.total.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkewRun {
    pub measure: EmpiricalMeasure2d,
    pub points: Vec<OrbitPoint>,
    /// Post-burn-in states with `x > 0.55`, counted exactly rather than by cell.
    pub right_count: u64,
}

impl SkewRun {
    pub fn right_occupancy(&self) -> f64 {
        self.right_count as f64 / self.measure.total.max(1) as f64
    }
}

/// Threshold used by [`SkewRun::right_occupancy`].
pub const RIGHT_THRESHOLD: f64 = 0.55;

const TWO_POW_M64: f64 = 1.0 / 18_446_744_073_709_551_616.0;

/// Runs the skew chain `(x, y) ↦ (T(x) + ω y, 2y mod 1)` with `ω` drawn from
/// `kernel` (`None` means `ω = 0`).
///
/// The fiber is carried as 64 binary digits so that doubling is exact. A
/// given `y0` is truncated to 64 digits and then shifts in zeros, which keeps
/// orbits such as `y0 = 0` exact. Without `y0` the fiber starts Lebesgue-random
/// and shifts in fresh random digits, which is the doubling map seen through
/// a finite window.
#[allow(clippy::too_many_arguments)]
pub fn run_skew_chain(
    family: &SkewFamily,
    kernel: Option<&NoiseKernel>,
    x0: f64,
    y0: Option<f64>,
    n: usize,
    burn_in: usize,
    seed: u64,
    chain: usize,
    grid: &Partition2d,
    thinning: Thinning,
) -> Result<SkewRun> {
    check_chain_args(n, burn_in)?;
    if let Some(k) = kernel {
        if k.eps() >= family.margin() {
            return Err(Error::MarginViolation(format!(
                "eps = {} must be below the margin {}",
                k.eps(),
                family.margin()
            )));
        }
    }
    if !(0.0..=1.0).contains(&x0) {
        return Err(Error::Domain {
            x: x0,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let mut rng = chain_rng(seed, chain as u64);
    let refill = y0.is_none();
    let mut bits: u64 = match y0 {
        Some(y) => (y.rem_euclid(1.0) / TWO_POW_M64) as u64,
        None => rng.random(),
    };
    let mut measure = EmpiricalMeasure2d::new(*grid, burn_in, seed);
    let mut points = Vec::new();
    let mut right_count = 0u64;
    let mut x = x0;
    for t in 0..n {
        let y = bits as f64 * TWO_POW_M64;
        if t >= burn_in {
            if let Some(c) = grid.cell_of(x, y.min(1.0)) {
                measure.counts[c] += 1;
                measure.total += 1;
            }
            if x > RIGHT_THRESHOLD {
                right_count += 1;
            }
            if thinning.keep(t - burn_in, points.len()) {
                points.push(OrbitPoint {
                    chain,
                    step: t,
                    x,
                    y: Some(y),
                });
            }
        }
        if t + 1 < n {
            let omega = kernel.map_or(0.0, |k| k.sample(&mut rng));
            // The fiber update is done on the bits; eval_skew's y' is discarded.
            x = family.eval_skew(omega, x, y)?.0;
            bits = (bits << 1) | u64::from(refill && rng.random::<bool>());
        }
    }
    Ok(SkewRun {
        measure,
        points,
        right_count,
    })
}

/// Skew chains from `starts`, chain `i` on stream `i`.
#[allow(clippy::too_many_arguments)]
pub fn run_skew_chains(
    family: &SkewFamily,
    kernel: Option<&NoiseKernel>,
    starts: &[(f64, Option<f64>)],
    n: usize,
    burn_in: usize,
    seed: u64,
    grid: &Partition2d,
    thinning: Thinning,
) -> Result<Vec<SkewRun>> {
    starts
        .par_iter()
        .enumerate()
        .map(|(i, &(x0, y0))| {
            run_skew_chain(family, kernel, x0, y0, n, burn_in, seed, i, grid, thinning)
        })
        .collect()
}

/// `count` starts with `x` uniform on `[0, 1]` and a random fiber.
pub fn random_skew_starts(count: usize, seed: u64) -> Vec<(f64, Option<f64>)> {
    let mut rng = chain_rng(seed, u64::MAX);
    (0..count).map(|_| (rng.random::<f64>(), None)).collect()
}

/// Hitting-time statistics; censored trials are excluded from mean and median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeStats {
    pub trials: usize,
    pub max_steps: usize,
    pub censored: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    /// `(lower, count)`: hitting times in `[lower, 2 lower)`, with `lower` a
    /// power of two (the first bin is `[1, 2)`).
    pub histogram: Vec<(u64, u64)>,
}

/// Per trial, starts uniformly in a random cell of `start_cells` and steps
/// until the state lies in `absorb_cells` or `max_steps` steps have been
/// taken. Strict chains that leave the domain count as censored.
#[allow(clippy::too_many_arguments)]
pub fn escape_time(
    map: &PiecewiseMap,
    kernel: &NoiseKernel,
    start_cells: &[usize],
    absorb_cells: &[usize],
    partition: &Partition,
    max_steps: usize,
    trials: usize,
    seed: u64,
) -> Result<EscapeStats> {
    if start_cells.is_empty() {
        return Err(Error::InvalidArgument("no start cells".into()));
    }
    let mut absorb = vec![false; partition.n];
    for &c in absorb_cells {
        if c >= partition.n {
            return Err(Error::InvalidArgument(format!("cell {c} out of range")));
        }
        absorb[c] = true;
    }
    if let Some(&c) = start_cells.iter().find(|&&c| c >= partition.n || absorb[c]) {
        return Err(Error::InvalidArgument(format!(
            "start cell {c} is out of range or also absorbing"
        )));
    }
    let times: Vec<Option<usize>> = (0..trials)
        .into_par_iter()
        .map(|i| -> Result<Option<usize>> {
            let mut rng = chain_rng(seed, i as u64);
            let c = start_cells[rng.random_range(0..start_cells.len())];
            let (a, b) = partition.cell_bounds(c);
            let mut x = a + (b - a) * rng.random::<f64>();
            for t in 1..=max_steps {
                x = match step(map, kernel, x, &mut rng)? {
                    Ok(y) => y,
                    Err(_) => return Ok(None),
                };
                if partition.cell_of(x).is_some_and(|c| absorb[c]) {
                    return Ok(Some(t));
                }
            }
            Ok(None)
        })
        .collect::<Result<_>>()?;

    let mut hits: Vec<usize> = times.iter().flatten().copied().collect();
    hits.sort_unstable();
    let censored = trials - hits.len();
    let mean = (!hits.is_empty()).then(|| hits.iter().sum::<usize>() as f64 / hits.len() as f64);
    let median = (!hits.is_empty()).then(|| {
        let m = hits.len() / 2;
        if hits.len() % 2 == 1 {
            hits[m] as f64
        } else {
            0.5 * (hits[m - 1] + hits[m]) as f64
        }
    });
    let mut histogram: Vec<(u64, u64)> = Vec::new();
    for &t in &hits {
        let lower = 1u64 << (usize::BITS - 1 - t.leading_zeros());
        match histogram.last_mut() {
            Some((l, c)) if *l == lower => *c += 1,
            _ => histogram.push((lower, 1)),
        }
    }
    Ok(EscapeStats {
        trials,
        max_steps,
        censored,
        mean,
        median,
        histogram,
    })
}
