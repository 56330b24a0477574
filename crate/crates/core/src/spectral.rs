//! Stationary densities, ergodic decomposition and leading spectrum of
//! transfer matrices.
//!
//! Eigenvalues are those of `P` (equivalently of `Pᵀ`); eigenvectors are left
//! eigenvectors, i.e. signed measures `v` with `v P = λ v`, which is how the
//! transfer operator acts on densities.

use nalgebra::linalg::Hessenberg;
use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::closed_classes;
use crate::partition::{cell_runs, Partition};
use crate::sparse::CsrMatrix;
use crate::ulam::TransferMatrix;

/// Discrete ergodic component: a closed class with its stationary vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicComponent {
    /// Sorted cell indices.
    pub support: Vec<usize>,
    /// Cell masses over the whole partition; zero off the support, sums to 1.
    pub density: Vec<f64>,
    /// `‖f P - f‖₁` at the returned vector.
    pub residual: f64,
}

impl ErgodicComponent {
    /// Density with respect to Lebesgue measure (mass divided by cell width).
    pub fn lebesgue_density(&self, partition: &Partition) -> Vec<f64> {
        let h = partition.h();
        self.density.iter().map(|m| m / h).collect()
    }

    pub fn runs(&self) -> Vec<[usize; 2]> {
        cell_runs(&self.support)
    }

    /// Mass of the density on `cells` (given as a membership mask).
    pub fn mass_on(&self, mask: &[bool]) -> f64 {
        self.support
            .iter()
            .filter(|&&c| mask[c])
            .map(|&c| self.density[c])
            .sum()
    }
}

/// Closed communicating classes of the support digraph, ordered by their
/// smallest cell.
pub fn recurrent_classes(p: &CsrMatrix) -> Vec<Vec<usize>> {
    closed_classes(&p.support_graph())
}

/// One stationary vector per recurrent class, by power iteration from the
/// uniform vector on the class. Periodic classes are iterated with the lazy
/// chain `(I + P)/2`, which has the same stationary vector.
pub fn stationary_densities(
    p: &CsrMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<ErgodicComponent>> {
    let n = p.n_rows();
    recurrent_classes(p)
        .into_par_iter()
        .map(|class| {
            let sub = p.restrict(&class);
            let lazy = class_period(&sub) > 1;
            let f = power_iteration(&sub, lazy, tol, max_iter)?;
            let residual = l1_residual(&sub, &f);
            let mut density = vec![0.0; n];
            for (&c, &v) in class.iter().zip(&f) {
                density[c] = v;
            }
            Ok(ErgodicComponent {
                support: class,
                density,
                residual,
            })
        })
        .collect()
}

fn l1_residual(p: &CsrMatrix, f: &[f64]) -> f64 {
    p.left_mul(f)
        .iter()
        .zip(f)
        .map(|(a, b)| (a - b).abs())
        .sum()
}

/// Period of an irreducible chain: the gcd of `level(u) + 1 - level(v)` over
/// all edges `u -> v`, with BFS levels from node 0.
fn class_period(p: &CsrMatrix) -> usize {
    let m = p.n_rows();
    let adj = p.support_graph();
    let mut level = vec![usize::MAX; m];
    let mut queue = std::collections::VecDeque::from([0usize]);
    level[0] = 0;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let gcd = |mut a: usize, mut b: usize| {
        while b != 0 {
            (a, b) = (b, a % b);
        }
        a
    };
    let mut d = 0;
    for (u, out) in adj.iter().enumerate() {
        for &v in out {
            d = gcd(d, (level[u] + 1).abs_diff(level[v]));
        }
    }
    d.max(1)
}

fn power_iteration(p: &CsrMatrix, lazy: bool, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let m = p.n_rows();
    let mut f = vec![1.0 / m as f64; m];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let g = p.left_mul(&f);
        residual = g.iter().zip(&f).map(|(a, b)| (a - b).abs()).sum();
        if residual <= tol {
            return Ok(f);
        }
        let mut next: Vec<f64> = if lazy {
            g.iter().zip(&f).map(|(a, b)| 0.5 * (a + b)).collect()
        } else {
            g
        };
        let s: f64 = next.iter().sum();
        if !(s > 0.0) {
            return Err(Error::Numerical("stationary iterate lost all mass".into()));
        }
        next.iter_mut().for_each(|x| *x /= s);
        f = next;
    }
    Err(Error::Convergence {
        iterations: max_iter,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    Dense,
    SubspaceIteration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralOptions {
    /// Number of eigenvalues to report (at most 12).
    pub k: usize,
    /// Eigenvalues closer than this are merged into one cluster.
    pub merge_tol: f64,
    /// Residual `‖v P - λ v‖₂ / ‖v‖₂` below which a Ritz pair counts as converged.
    pub residual_tol: f64,
    /// Block iterations of the sparse solver.
    pub max_iter: usize,
    /// Matrices with fewer rows are solved densely.
    pub dense_below: usize,
    pub seed: u64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            k: 8,
            merge_tol: 1e-8,
            residual_tol: 1e-10,
            max_iter: 400,
            dense_below: 320,
            seed: 0,
        }
    }
}

/// Largest matrix the spectral routines accept.
pub const DENSE_LIMIT: usize = 16384;

/// The dense solver stands in for a failed sparse solve only below this size.
pub const DENSE_FALLBACK_BELOW: usize = 2048;

/// Eigenvalue tolerances for counting multiplicity at 1.
pub const UNIT_TOL_UNPERTURBED: f64 = 1e-8;
pub const UNIT_TOL_PERTURBED: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenCluster {
    pub value: [f64; 2],
    pub multiplicity: usize,
}

/// Sign structure of the second eigenvector relative to a split point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlmostInvariantSplit {
    pub positive: Vec<[usize; 2]>,
    pub negative: Vec<[usize; 2]>,
    /// Split point in domain coordinates used for the purity figures.
    pub split_at: f64,
    /// Whether the positive part sits mostly on the left of `split_at`.
    pub positive_is_left: bool,
    /// Fraction of `|v|`-mass of the positive part on its majority side.
    pub positive_purity: f64,
    pub negative_purity: f64,
}

impl AlmostInvariantSplit {
    /// Purity of the worse side when the two parts lie on opposite sides,
    /// zero when both parts favour the same side.
    pub fn purity(&self) -> f64 {
        self.positive_purity.min(self.negative_purity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Top eigenvalues as `[re, im]`, by decreasing modulus, conjugates adjacent.
    pub eigenvalues: Vec<[f64; 2]>,
    pub residuals: Vec<f64>,
    pub converged: Vec<bool>,
    pub clusters: Vec<EigenCluster>,
    pub unit_multiplicity: usize,
    pub unit_tol: f64,
    pub xi_eps: Option<f64>,
    pub gap_radius: f64,
    pub isolation_delta: f64,
    pub method: SolverMethod,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub almost_invariant: Option<AlmostInvariantSplit>,
    /// Real left eigenvector for `ξ_ε`, largest entry positive, unit L¹ norm.
    #[serde(skip)]
    pub second_eigvec: Option<Vec<f64>>,
}

impl SpectrumReport {
    pub fn moduli(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|z| z[0].hypot(z[1])).collect()
    }

    /// Every reported eigenvalue lies within `δ` of 1 or inside `|z| ≤ r`.
    pub fn contained_in_region(&self) -> bool {
        self.eigenvalues.iter().all(|z| {
            (z[0] - 1.0).hypot(z[1]) <= self.isolation_delta || z[0].hypot(z[1]) <= self.gap_radius
        })
    }
}

struct RitzPair {
    value: Complex<f64>,
    vector: Vec<Complex<f64>>,
    residual: f64,
}

/// Leading eigenvalues of `P` by modulus.
///
/// Small matrices are solved densely. Larger ones use block subspace
/// iteration on `Pᵀ` with Rayleigh-Ritz extraction; a block of
/// `max(2k, k + 10)` vectors resolves repeated eigenvalues such as a unit
/// eigenvalue of multiplicity three. Ritz pairs whose residual stays above
/// `residual_tol` are still reported, flagged as not converged.
pub fn top_eigenvalues(p: &TransferMatrix, opts: &SpectralOptions) -> Result<SpectrumReport> {
    let unit_tol = if p.kind.is_perturbed() {
        UNIT_TOL_PERTURBED
    } else {
        UNIT_TOL_UNPERTURBED
    };
    let (pairs, method, iterations) = leading_pairs(&p.matrix, opts)?;
    Ok(assemble_report(&pairs, method, iterations, unit_tol, opts))
}

fn leading_pairs(
    p: &CsrMatrix,
    opts: &SpectralOptions,
) -> Result<(Vec<RitzPair>, SolverMethod, usize)> {
    let n = p.n_rows();
    if opts.k == 0 || opts.k > 12 {
        return Err(Error::InvalidArgument(format!(
            "k must be in 1..=12, got {}",
            opts.k
        )));
    }
    if n > DENSE_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "n = {n} exceeds the supported size {DENSE_LIMIT}"
        )));
    }
    let k = opts.k.min(n);
    if n < opts.dense_below {
        return Ok((dense_pairs(p, k)?, SolverMethod::Dense, 0));
    }
    match subspace_pairs(p, k, opts) {
        Ok((pairs, it)) => Ok((pairs, SolverMethod::SubspaceIteration, it)),
        Err(e) if n < DENSE_FALLBACK_BELOW => dense_pairs(p, k)
            .map(|pairs| (pairs, SolverMethod::Dense, 0))
            .map_err(|d| Error::Numerical(format!("subspace iteration: {e}; dense: {d}"))),
        Err(e) => Err(e),
    }
}

fn sort_by_modulus(values: &mut [Complex<f64>]) {
    values.sort_by(|a, b| {
        b.norm()
            .partial_cmp(&a.norm())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(b.im.partial_cmp(&a.im).unwrap_or(std::cmp::Ordering::Equal))
    });
}

/// Eigenvalues of a small real matrix: Hessenberg reduction followed by the
/// Francis double-shift QR iteration with exceptional shifts (the EISPACK
/// `hqr` scheme). The exceptional shifts matter here: Ritz matrices of Ulam
/// operators routinely carry near-scalar blocks on which plain Wilkinson
/// shifts cycle without deflating.
#[allow(clippy::needless_range_loop)]
fn eigenvalues_of(h: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    let n = h.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let hess = Hessenberg::new(h.clone()).unpack_h();
    // 1-based working copy keeps the index arithmetic of the classic scheme.
    let mut a = vec![vec![0.0f64; n + 1]; n + 1];
    for i in 0..n {
        for j in 0..n {
            a[i + 1][j + 1] = if i > j + 1 { 0.0 } else { hess[(i, j)] };
        }
    }
    let mut wr = vec![0.0; n + 1];
    let mut wi = vec![0.0; n + 1];
    let mut anorm = 0.0;
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += a[i][j].abs();
        }
    }
    let mut nn = n;
    let mut t = 0.0;
    let (mut p, mut q, mut r): (f64, f64, f64);
    let (mut x, mut y, mut z, mut w);
    while nn >= 1 {
        let mut its = 0;
        loop {
            let mut l = nn;
            while l >= 2 {
                let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[l][l - 1].abs() + s == s {
                    a[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            x = a[nn][nn];
            if l == nn {
                wr[nn] = x + t;
                wi[nn] = 0.0;
                nn -= 1;
            } else {
                y = a[nn - 1][nn - 1];
                w = a[nn][nn - 1] * a[nn - 1][nn];
                if l == nn - 1 {
                    p = 0.5 * (y - x);
                    q = p * p + w;
                    z = q.abs().sqrt();
                    x += t;
                    if q >= 0.0 {
                        z = p + z.copysign(p);
                        wr[nn - 1] = x + z;
                        wr[nn] = if z != 0.0 { x - w / z } else { x + z };
                        wi[nn - 1] = 0.0;
                        wi[nn] = 0.0;
                    } else {
                        wr[nn - 1] = x + p;
                        wr[nn] = x + p;
                        wi[nn - 1] = -z;
                        wi[nn] = z;
                    }
                    nn -= 2;
                } else {
                    if its == 60 {
                        return Err(Error::Numerical(format!(
                            "QR iteration did not converge on a {n}x{n} matrix"
                        )));
                    }
                    if its % 10 == 0 && its > 0 {
                        // exceptional shift
                        t += x;
                        for i in 1..=nn {
                            a[i][i] -= x;
                        }
                        let s = a[nn][nn - 1].abs() + a[nn - 1][nn - 2].abs();
                        x = 0.75 * s;
                        y = x;
                        w = -0.4375 * s * s;
                    }
                    its += 1;
                    let mut m = nn - 2;
                    loop {
                        z = a[m][m];
                        r = x - z;
                        let s0 = y - z;
                        p = (r * s0 - w) / a[m + 1][m] + a[m][m + 1];
                        q = a[m + 1][m + 1] - z - r - s0;
                        r = a[m + 2][m + 1];
                        let s = p.abs() + q.abs() + r.abs();
                        p /= s;
                        q /= s;
                        r /= s;
                        if m == l {
                            break;
                        }
                        let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                        let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                        if u + v == v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in m + 2..=nn {
                        a[i][i - 2] = 0.0;
                        if i != m + 2 {
                            a[i][i - 3] = 0.0;
                        }
                    }
                    for k in m..nn {
                        if k != m {
                            p = a[k][k - 1];
                            q = a[k + 1][k - 1];
                            r = if k != nn - 1 { a[k + 2][k - 1] } else { 0.0 };
                            x = p.abs() + q.abs() + r.abs();
                            if x != 0.0 {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        let s = (p * p + q * q + r * r).sqrt().copysign(p);
                        if s != 0.0 {
                            if k == m {
                                if l != m {
                                    a[k][k - 1] = -a[k][k - 1];
                                }
                            } else {
                                a[k][k - 1] = -s * x;
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            z = r / s;
                            q /= p;
                            r /= p;
                            for j in k..=nn {
                                let mut pp = a[k][j] + q * a[k + 1][j];
                                if k != nn - 1 {
                                    pp += r * a[k + 2][j];
                                    a[k + 2][j] -= pp * z;
                                }
                                a[k + 1][j] -= pp * y;
                                a[k][j] -= pp * x;
                            }
                            let mmin = if nn < k + 3 { nn } else { k + 3 };
                            for i in l..=mmin {
                                let mut pp = x * a[i][k] + y * a[i][k + 1];
                                if k != nn - 1 {
                                    pp += z * a[i][k + 2];
                                    a[i][k + 2] -= pp * r;
                                }
                                a[i][k + 1] -= pp * q;
                                a[i][k] -= pp;
                            }
                        }
                    }
                }
            }
            if nn < 2 || l + 1 >= nn {
                break;
            }
        }
    }
    Ok((1..=n).map(|i| Complex::new(wr[i], wi[i])).collect())
}

fn check_finite(h: &DMatrix<f64>) -> Result<()> {
    if h.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(
            "non-finite entries in projected matrix".into(),
        ))
    }
}

/// Coefficients of an eigenvector of `h` for eigenvalue `theta` by a few
/// steps of shifted inverse iteration.
fn small_eigvec(h: &DMatrix<Complex<f64>>, theta: Complex<f64>) -> Result<DVector<Complex<f64>>> {
    let m = h.nrows();
    let scale = 1.0 + theta.norm();
    for nudge in [1e-10, 1e-8, 1e-6] {
        let shift = theta + Complex::new(nudge * scale, nudge * scale);
        let a = h - DMatrix::identity(m, m) * shift;
        let lu = a.lu();
        let mut v = DVector::from_fn(m, |i, _| Complex::new(1.0 + i as f64 / m as f64, 0.0));
        let mut ok = true;
        for _ in 0..3 {
            match lu.solve(&v) {
                Some(w) if w.iter().all(|z| z.re.is_finite() && z.im.is_finite()) => {
                    let norm = w.norm();
                    if norm == 0.0 {
                        ok = false;
                        break;
                    }
                    v = w / Complex::new(norm, 0.0);
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(v);
        }
    }
    Err(Error::Numerical(format!(
        "inverse iteration failed at {theta}"
    )))
}

fn dense_pairs(p: &CsrMatrix, k: usize) -> Result<Vec<RitzPair>> {
    let ht = p.to_dense().transpose();
    check_finite(&ht)?;
    let mut values = eigenvalues_of(&ht)?;
    sort_by_modulus(&mut values);
    let hc = ht.map(|x| Complex::new(x, 0.0));
    values
        .into_iter()
        .take(k)
        .map(|theta| {
            let z = small_eigvec(&hc, theta)?;
            let r = (&hc * &z - &z * theta).norm();
            Ok(RitzPair {
                value: theta,
                vector: z.iter().copied().collect(),
                residual: r / z.norm().max(f64::MIN_POSITIVE),
            })
        })
        .collect()
}

/// Orthonormalizes the columns in place (classical Gram-Schmidt, applied
/// twice). Columns that collapse are replaced by fresh random directions so
/// the block keeps full rank even for nilpotent parts of `P`.
fn orthonormalize(cols: &mut [Vec<f64>], rng: &mut ChaCha8Rng) {
    let n = cols[0].len();
    for j in 0..cols.len() {
        let mut attempts = 0;
        loop {
            let before = norm2(&cols[j]);
            for _ in 0..2 {
                for i in 0..j {
                    let d = dot(&cols[i], &cols[j]);
                    let (head, tail) = cols.split_at_mut(j);
                    axpy(-d, &head[i], &mut tail[0]);
                }
            }
            let after = norm2(&cols[j]);
            if after > 1e-10 * before.max(f64::MIN_POSITIVE) && after > 1e-300 {
                cols[j].iter_mut().for_each(|x| *x /= after);
                break;
            }
            attempts += 1;
            assert!(
                attempts < 100,
                "cannot extend an orthonormal block of size {j} in dimension {n}"
            );
            cols[j] = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

fn subspace_pairs(
    p: &CsrMatrix,
    k: usize,
    opts: &SpectralOptions,
) -> Result<(Vec<RitzPair>, usize)> {
    let n = p.n_rows();
    let b = (2 * k).max(k + 10).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<Vec<f64>> = (0..b)
        .map(|j| {
            if j == 0 {
                vec![1.0; n]
            } else {
                (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
            }
        })
        .collect();
    orthonormalize(&mut x, &mut rng);
    let check_every = 10;
    let mut it = 0;
    loop {
        // y_j = x_j P, i.e. columns of Pᵀ X
        let y: Vec<Vec<f64>> = x.par_iter().map(|c| p.left_mul(c)).collect();
        it += 1;
        if it % check_every == 0 || it >= opts.max_iter {
            let pairs = rayleigh_ritz(&x, &y, k)?;
            if it >= opts.max_iter || pairs.iter().all(|r| r.residual <= opts.residual_tol) {
                return Ok((pairs, it));
            }
        }
        x = y;
        orthonormalize(&mut x, &mut rng);
    }
}

fn rayleigh_ritz(x: &[Vec<f64>], y: &[Vec<f64>], k: usize) -> Result<Vec<RitzPair>> {
    let b = x.len();
    let h = DMatrix::from_fn(b, b, |i, j| dot(&x[i], &y[j]));
    check_finite(&h)?;
    let mut values = eigenvalues_of(&h)?;
    sort_by_modulus(&mut values);
    let hc = h.map(|v| Complex::new(v, 0.0));
    let n = x[0].len();
    values
        .into_iter()
        .take(k)
        .map(|theta| {
            let z = small_eigvec(&hc, theta)?;
            let mut v = vec![Complex::new(0.0, 0.0); n];
            let mut w = vec![Complex::new(0.0, 0.0); n];
            for (j, zj) in z.iter().enumerate() {
                for ((vi, wi), (xi, yi)) in
                    v.iter_mut().zip(w.iter_mut()).zip(x[j].iter().zip(&y[j]))
                {
                    *vi += zj * xi;
                    *wi += zj * yi;
                }
            }
            let vn: f64 = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            let r: f64 = w
                .iter()
                .zip(&v)
                .map(|(wi, vi)| (wi - theta * vi).norm_sqr())
                .sum::<f64>()
                .sqrt();
            Ok(RitzPair {
                value: theta,
                vector: v,
                residual: r / vn.max(f64::MIN_POSITIVE),
            })
        })
        .collect()
}

fn assemble_report(
    pairs: &[RitzPair],
    method: SolverMethod,
    iterations: usize,
    unit_tol: f64,
    opts: &SpectralOptions,
) -> SpectrumReport {
    let merge_tol = opts.merge_tol;
    let mut clusters: Vec<(Complex<f64>, usize)> = Vec::new();
    for pair in pairs {
        match clusters
            .iter_mut()
            .find(|(c, _)| (c - pair.value).norm() < merge_tol)
        {
            Some(c) => c.1 += 1,
            None => clusters.push((pair.value, 1)),
        }
    }
    let defaults = MetastabilityOptions::default();
    SpectrumReport {
        eigenvalues: pairs.iter().map(|p| [p.value.re, p.value.im]).collect(),
        residuals: pairs.iter().map(|p| p.residual).collect(),
        converged: pairs
            .iter()
            .map(|p| p.residual <= opts.residual_tol)
            .collect(),
        clusters: clusters
            .into_iter()
            .map(|(c, m)| EigenCluster {
                value: [c.re, c.im],
                multiplicity: m,
            })
            .collect(),
        unit_multiplicity: pairs
            .iter()
            .filter(|p| (p.value - 1.0).norm() < unit_tol)
            .count(),
        unit_tol,
        xi_eps: None,
        gap_radius: defaults.gap_radius,
        isolation_delta: defaults.isolation_delta,
        method,
        iterations,
        almost_invariant: None,
        second_eigvec: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetastabilityOptions {
    /// `r`: eigenvalues of modulus at most this are considered spectral bulk.
    pub gap_radius: f64,
    /// `δ`: radius of the disk around 1 that the isolated eigenvalues live in.
    pub isolation_delta: f64,
    /// Domain coordinate separating the two expected almost-invariant sets.
    pub split_at: Option<f64>,
    pub spectral: SpectralOptions,
}

impl Default for MetastabilityOptions {
    fn default() -> Self {
        Self {
            gap_radius: 0.8,
            isolation_delta: 0.1,
            split_at: None,
            spectral: SpectralOptions::default(),
        }
    }
}

/// Checks that 1 is a simple eigenvalue of the perturbed matrix and extracts
/// the real second eigenvalue `ξ_ε` with its eigenvector and the
/// almost-invariant sets given by the eigenvector's sign.
///
/// When the second eigenvalue lies inside `|z| ≤ r` there is no metastable
/// pair and `xi_eps` is `None`.
pub fn metastability_report(
    p_eps: &TransferMatrix,
    opts: &MetastabilityOptions,
) -> Result<SpectrumReport> {
    if !p_eps.kind.is_perturbed() {
        return Err(Error::InvalidArgument(
            "metastability analysis needs a perturbed matrix".into(),
        ));
    }
    let spectral = SpectralOptions {
        k: opts.spectral.k.max(3),
        ..opts.spectral
    };
    let (pairs, method, iterations) = leading_pairs(&p_eps.matrix, &spectral)?;
    let mut report = assemble_report(&pairs, method, iterations, UNIT_TOL_PERTURBED, &spectral);
    report.gap_radius = opts.gap_radius;
    report.isolation_delta = opts.isolation_delta;
    if report.unit_multiplicity != 1 {
        return Err(Error::MetastabilityStructure(format!(
            "eigenvalue 1 has multiplicity {} (expected a simple eigenvalue)",
            report.unit_multiplicity
        )));
    }
    if pairs.len() < 2 {
        return Ok(report);
    }
    let second = &pairs[1];
    if second.value.norm() <= opts.gap_radius {
        return Ok(report);
    }
    let mod_tol = 1e-9;
    if second.value.im.abs() > mod_tol {
        return Err(Error::MetastabilityStructure(format!(
            "second eigenvalue {} is not real",
            second.value
        )));
    }
    if second.value.re <= 0.0 || second.value.re >= 1.0 {
        return Err(Error::MetastabilityStructure(format!(
            "second eigenvalue {} is not in (0, 1)",
            second.value.re
        )));
    }
    if let Some(third) = pairs.get(2) {
        if third.value.norm() >= second.value.norm() - mod_tol {
            return Err(Error::MetastabilityStructure(format!(
                "second eigenvalue {} is not isolated from {}",
                second.value, third.value
            )));
        }
    }
    report.xi_eps = Some(second.value.re);
    let v = real_signed_vector(&second.vector);
    if let (Some(split), Some(partition)) = (opts.split_at, p_eps.layout.partition()) {
        report.almost_invariant = Some(sign_split(&v, partition, split));
    }
    report.second_eigvec = Some(v);
    Ok(report)
}

/// Rotates a complex eigenvector to be real, scales it to unit L¹ norm and
/// fixes the sign so the largest-magnitude entry is positive.
fn real_signed_vector(v: &[Complex<f64>]) -> Vec<f64> {
    let pivot = v
        .iter()
        .copied()
        .max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap())
        .unwrap_or(Complex::new(1.0, 0.0));
    let phase = if pivot.norm() > 0.0 {
        pivot.conj() / pivot.norm()
    } else {
        Complex::new(1.0, 0.0)
    };
    let mut out: Vec<f64> = v.iter().map(|z| (z * phase).re).collect();
    let l1: f64 = out.iter().map(|x| x.abs()).sum();
    if l1 > 0.0 {
        out.iter_mut().for_each(|x| *x /= l1);
    }
    out
}

/// Splits a signed cell vector by sign and measures how cleanly each part
/// sits on one side of `split_at`.
pub fn sign_split(v: &[f64], partition: &Partition, split_at: f64) -> AlmostInvariantSplit {
    let (mut pos_left, mut pos_total, mut neg_left, mut neg_total) = (0.0, 0.0, 0.0, 0.0);
    let mut positive = Vec::new();
    let mut negative = Vec::new();
    for (i, &x) in v.iter().enumerate() {
        let left = partition.cell_center(i) < split_at;
        if x > 0.0 {
            positive.push(i);
            pos_total += x;
            if left {
                pos_left += x;
            }
        } else if x < 0.0 {
            negative.push(i);
            neg_total -= x;
            if left {
                neg_left -= x;
            }
        }
    }
    let frac = |a: f64, t: f64| if t > 0.0 { a / t } else { 0.5 };
    let pl = frac(pos_left, pos_total);
    let nl = frac(neg_left, neg_total);
    let positive_is_left = pl >= 0.5;
    let opposite = positive_is_left != (nl >= 0.5);
    let (pp, np) = if positive_is_left {
        (pl, 1.0 - nl)
    } else {
        (1.0 - pl, nl)
    };
    AlmostInvariantSplit {
        positive: cell_runs(&positive),
        negative: cell_runs(&negative),
        split_at,
        positive_is_left,
        positive_purity: pp,
        negative_purity: if opposite { np } else { 0.0 },
    }
}

/// `Σ |a_i - b_i|`.
pub fn vector_l1_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map_model::PiecewiseMap;
    use crate::ulam::{build_ulam, Layout, MatrixKind};

    fn wrap(m: CsrMatrix) -> TransferMatrix {
        let n = m.n_rows();
        TransferMatrix {
            layout: Layout::OneD {
                partition: Partition::unit(n).unwrap(),
            },
            kind: MatrixKind::Unperturbed,
            matrix: m,
        }
    }

    #[test]
    fn identity_has_singleton_classes() {
        let p = CsrMatrix::identity(4);
        assert_eq!(
            recurrent_classes(&p),
            vec![vec![0], vec![1], vec![2], vec![3]]
        );
        let comps = stationary_densities(&p, 1e-12, 10).unwrap();
        assert_eq!(comps.len(), 4);
        assert_eq!(comps[2].density, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn identity_unit_multiplicity() {
        let opts = SpectralOptions {
            k: 4,
            ..Default::default()
        };
        let r = top_eigenvalues(&wrap(CsrMatrix::identity(4)), &opts).unwrap();
        assert_eq!(r.unit_multiplicity, 4);
        assert_eq!(r.clusters.len(), 1);
        assert_eq!(r.clusters[0].multiplicity, 4);
    }

    #[test]
    fn periodic_class_uses_lazy_chain() {
        // 0 <-> 1 swap: plain power iteration oscillates only if the start
        // is not uniform; the uniform start is already stationary.
        let p = CsrMatrix::from_dense(&[
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.5, 0.0, 0.5],
        ]);
        let comps = stationary_densities(&p, 1e-12, 100).unwrap();
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].support, vec![0, 1]);
        assert!((comps[0].density[0] - 0.5).abs() < 1e-12);
        // period three with unequal weights needs the lazy chain
        let q = CsrMatrix::from_dense(&[
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.5, 0.5],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
        ]);
        assert_eq!(class_period(&q), 3);
        assert_eq!(class_period(&p.restrict(&[0, 1])), 2);
        assert_eq!(
            class_period(&CsrMatrix::from_dense(&[vec![0.5, 0.5], vec![1.0, 0.0]])),
            1
        );
        let comps = stationary_densities(&q, 1e-12, 400).unwrap();
        let f = &comps[0].density;
        assert!((f[0] - 1.0 / 3.0).abs() < 1e-10 && (f[2] - 1.0 / 6.0).abs() < 1e-10);
    }

    #[test]
    fn convergence_error_reports_residual() {
        let q = CsrMatrix::from_dense(&[vec![0.0, 1.0], vec![0.9, 0.1]]);
        match stationary_densities(&q, 1e-14, 2) {
            Err(Error::Convergence {
                iterations,
                residual,
            }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn two_state_chain_spectrum() {
        // eigenvalues 1 and 1 - a - b
        let (a, b) = (0.2, 0.3);
        let p = CsrMatrix::from_dense(&[vec![1.0 - a, a], vec![b, 1.0 - b]]);
        let opts = SpectralOptions {
            k: 2,
            ..Default::default()
        };
        let r = top_eigenvalues(&wrap(p), &opts).unwrap();
        assert!((r.eigenvalues[0][0] - 1.0).abs() < 1e-14);
        assert!((r.eigenvalues[1][0] - 0.5).abs() < 1e-14);
        assert!(r.residuals.iter().all(|&x| x < 1e-12));
    }

    #[test]
    fn rotation_gives_conjugate_pairs() {
        // cyclic permutation of 3 states: cube roots of unity
        let p = CsrMatrix::from_dense(&[
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
        ]);
        let opts = SpectralOptions {
            k: 3,
            ..Default::default()
        };
        let r = top_eigenvalues(&wrap(p), &opts).unwrap();
        assert_eq!(r.unit_multiplicity, 1);
        assert!((r.eigenvalues[1][1] + r.eigenvalues[2][1]).abs() < 1e-12);
        assert!(r.eigenvalues[1][1] > 0.0);
        assert!((r.eigenvalues[1][0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn subspace_matches_dense_on_random_stochastic() {
        let n = 60;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let r: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(8)).collect();
                let s: f64 = r.iter().sum();
                r.into_iter().map(|x| x / s).collect()
            })
            .collect();
        let p = wrap(CsrMatrix::from_dense(&rows));
        let k = 4;
        let dense = top_eigenvalues(
            &p,
            &SpectralOptions {
                k,
                dense_below: 1000,
                ..Default::default()
            },
        )
        .unwrap();
        let sub = top_eigenvalues(
            &p,
            &SpectralOptions {
                k,
                dense_below: 0,
                max_iter: 2000,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(dense.method, SolverMethod::Dense);
        assert_eq!(sub.method, SolverMethod::SubspaceIteration);
        // the leading Ritz value must match; deeper ones within solver accuracy
        let dm = dense.moduli();
        let sm = sub.moduli();
        assert!((dm[0] - sm[0]).abs() < 1e-12);
        for i in 1..k {
            assert!((dm[i] - sm[i]).abs() < 1e-6, "{dm:?} vs {sm:?}");
        }
    }

    #[test]
    fn doubling_spectrum_small() {
        let p = build_ulam(&PiecewiseMap::doubling(), &Partition::unit(256).unwrap()).unwrap();
        let r = top_eigenvalues(&p, &SpectralOptions::default()).unwrap();
        assert_eq!(r.method, SolverMethod::Dense);
        assert_eq!(r.unit_multiplicity, 1);
        assert!(r.moduli()[1] <= 0.5 + 1e-6);
    }

    #[test]
    fn metastability_requires_perturbed_matrix() {
        let p = build_ulam(&PiecewiseMap::doubling(), &Partition::unit(64).unwrap()).unwrap();
        assert!(matches!(
            metastability_report(&p, &MetastabilityOptions::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn metastable_two_block_chain() {
        // two well-mixed blocks with a weak one-way leak from the left block
        let n = 8;
        let leak = 0.01;
        let mut rows = vec![vec![0.0; n]; n];
        for (i, row) in rows.iter_mut().enumerate() {
            if i < 4 {
                for v in row.iter_mut().take(4) {
                    *v = (1.0 - leak) / 4.0;
                }
                row[4] = leak;
            } else {
                for v in row.iter_mut().skip(4) {
                    *v = 0.25;
                }
            }
        }
        let mut p = wrap(CsrMatrix::from_dense(&rows));
        p.kind = MatrixKind::Perturbed { eps: 0.1 };
        let opts = MetastabilityOptions {
            split_at: Some(0.5),
            spectral: SpectralOptions {
                k: 3,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = metastability_report(&p, &opts).unwrap();
        assert!((r.xi_eps.unwrap() - (1.0 - leak)).abs() < 1e-12);
        let split = r.almost_invariant.unwrap();
        assert_eq!(split.purity(), 1.0);
        let v = r.second_eigvec.unwrap();
        assert!((v.iter().map(|x| x.abs()).sum::<f64>() - 1.0).abs() < 1e-12);
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        assert!(pivot > 0.0);
    }

    fn similar_to(blocks: &DMatrix<f64>, seed: u64) -> DMatrix<f64> {
        let n = blocks.nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        let q = g.qr().q();
        &q * blocks * q.transpose()
    }

    fn assert_same_spectrum(mut got: Vec<Complex<f64>>, mut want: Vec<Complex<f64>>, tol: f64) {
        sort_by_modulus(&mut got);
        sort_by_modulus(&mut want);
        for w in &want {
            let best = got
                .iter()
                .map(|g| (g - w).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(best < tol, "{w} missing from {got:?}");
        }
    }

    #[test]
    fn small_eigensolver_on_known_spectra() {
        // triple unit eigenvalue, a rotation pair and a nilpotent Jordan block
        let n = 18;
        let mut d = DMatrix::zeros(n, n);
        for i in 0..3 {
            d[(i, i)] = 1.0;
        }
        let (c, s) = (0.6 * 0.8f64.cos(), 0.6 * 0.8f64.sin());
        d[(3, 3)] = c;
        d[(3, 4)] = -s;
        d[(4, 3)] = s;
        d[(4, 4)] = c;
        d[(5, 5)] = -0.3;
        for i in 6..n - 1 {
            d[(i, i + 1)] = 1e-3;
        }
        let h = similar_to(&d, 5);
        let mut want = vec![Complex::new(1.0, 0.0); 3];
        want.push(Complex::new(c, s));
        want.push(Complex::new(c, -s));
        want.push(Complex::new(-0.3, 0.0));
        let got = eigenvalues_of(&h).unwrap();
        assert_eq!(got.len(), n);
        assert_same_spectrum(got.clone(), want, 1e-10);
        // the nilpotent block contributes eigenvalues of size about (1e-3^11 * 1e-16)^(1/12)
        let tiny = got.iter().filter(|z| z.norm() < 0.05).count();
        assert_eq!(tiny, 12);
    }

    #[test]
    fn small_eigensolver_on_scalar_block_with_noise() {
        let n = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = DMatrix::from_fn(n, n, |i, j| {
            let base = if i == j { 1.0 } else { 0.0 };
            base + 1e-15 * (rng.random::<f64>() - 0.5)
        });
        let got = eigenvalues_of(&h).unwrap();
        assert!(got.iter().all(|z| (z - 1.0).norm() < 1e-7));
    }

    #[test]
    fn small_eigensolver_matches_companion_roots() {
        // x^4 - 10x^3 + 35x^2 - 50x + 24 = (x-1)(x-2)(x-3)(x-4)
        let h = DMatrix::from_row_slice(
            4,
            4,
            &[
                10.0, -35.0, 50.0, -24.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0,
                0.0,
            ],
        );
        let want = (1..=4).map(|k| Complex::new(k as f64, 0.0)).collect();
        assert_same_spectrum(eigenvalues_of(&h).unwrap(), want, 1e-9);
        assert!(eigenvalues_of(&DMatrix::zeros(0, 0)).unwrap().is_empty());
        assert_eq!(
            eigenvalues_of(&DMatrix::from_element(1, 1, 0.5)).unwrap(),
            vec![Complex::new(0.5, 0.0)]
        );
    }

    #[test]
    fn sign_split_detects_mixing() {
        let partition = Partition::unit(4).unwrap();
        let s = sign_split(&[0.25, -0.25, 0.25, -0.25], &partition, 0.5);
        assert_eq!(s.positive_purity, 0.5);
        assert_eq!(s.purity(), 0.0);
        let s = sign_split(&[0.25, 0.25, -0.25, -0.25], &partition, 0.5);
        assert!(s.positive_is_left);
        assert_eq!(s.purity(), 1.0);
        assert_eq!(s.positive, vec![[0, 2]]);
    }
}
