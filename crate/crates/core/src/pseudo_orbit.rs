//! ε-pseudo-orbit reachability on a partition: the cell graph, the pre-order
//! between ergodic components, least elements and their forward-invariant
//! hulls, and an end-to-end check that perturbed stationary densities sit
//! exactly on the least elements.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{reachable, reachable_after_one_step};
use crate::map_model::PiecewiseMap;
use crate::noise::NoiseKernel;
use crate::partition::{cell_runs, Partition, SNAP_TOL};
use crate::spectral::{stationary_densities, ErgodicComponent};
use crate::ulam::{build_perturbed, build_ulam, eps_in_cells};

/// Stationary-vector tolerance used by the verification pipeline.
pub const STATIONARY_TOL: f64 = 1e-12;
pub const STATIONARY_MAX_ITER: usize = 200_000;

/// `i → k` iff cell `k` meets the open ε-neighbourhood of `T(I_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGraph {
    pub partition: Partition,
    pub eps: f64,
    pub adj: Vec<Vec<usize>>,
}

pub fn build_cell_graph(map: &PiecewiseMap, partition: &Partition, eps: f64) -> Result<CellGraph> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let n = partition.n;
    let r = eps_in_cells(partition, eps);
    let wrap = map.wrap();
    let adj = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut out: Vec<usize> = Vec::new();
            for img in map.cell_images(partition, i) {
                let (a, b) = (img.lo - r, img.hi + r);
                let first = (a + SNAP_TOL).floor();
                let last = (b - SNAP_TOL).ceil();
                if wrap {
                    if last - first >= n as f64 {
                        out.extend(0..n);
                    } else {
                        let (first, last) = (first as i64, last as i64);
                        out.extend((first..last).map(|k| k.rem_euclid(n as i64) as usize));
                    }
                } else {
                    let lo = first.max(0.0) as usize;
                    let hi = (last.min(n as f64) as usize).max(lo);
                    out.extend(lo..hi);
                }
            }
            out.sort_unstable();
            out.dedup();
            out
        })
        .collect();
    Ok(CellGraph {
        partition: *partition,
        eps,
        adj,
    })
}

impl CellGraph {
    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum()
    }

    /// One-step image of a cell set, sorted.
    pub fn image(&self, cells: &[usize]) -> Vec<usize> {
        let mut mark = vec![false; self.n()];
        for &c in cells {
            for &k in &self.adj[c] {
                mark[k] = true;
            }
        }
        mask_to_cells(&mark)
    }

    /// Union of all forward images `U_ε = ∪_{m ≥ 1} B_ε(T U_{m-1})` of the seed.
    /// The result is closed under one step of the graph.
    pub fn hull(&self, seed: &[usize]) -> Vec<usize> {
        mask_to_cells(&reachable_after_one_step(&self.adj, seed))
    }

    /// Cells reachable from `seed` in zero or more steps.
    pub fn reach(&self, seed: &[usize]) -> Vec<bool> {
        reachable(&self.adj, seed)
    }
}

fn mask_to_cells(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| i)
        .collect()
}

fn cells_to_mask(cells: &[usize], n: usize) -> Vec<bool> {
    let mut m = vec![false; n];
    for &c in cells {
        m[c] = true;
    }
    m
}

/// Forward-invariant hull of `seed` under ε-pseudo-orbits.
pub fn forward_invariant_hull(
    map: &PiecewiseMap,
    seed: &[usize],
    eps: f64,
    partition: &Partition,
) -> Result<Vec<usize>> {
    if seed.is_empty() {
        return Err(Error::InvalidArgument("hull seed is empty".into()));
    }
    Ok(build_cell_graph(map, partition, eps)?.hull(seed))
}

/// Components with the reachability pre-order, its equivalence classes and
/// the least (sink) classes.
#[derive(Debug, Clone)]
pub struct ComponentDAG {
    pub components: Vec<ErgodicComponent>,
    /// `relation[i][j]`: some pseudo-orbit leads from component `i` to `j`.
    pub relation: Vec<Vec<bool>>,
    /// Component indices per class, classes ordered by first component.
    pub classes: Vec<Vec<usize>>,
    pub class_of: Vec<usize>,
    /// Edges between distinct classes (transitively closed).
    pub class_edges: Vec<(usize, usize)>,
    pub least: Vec<usize>,
}

pub fn component_relation(
    graph: &CellGraph,
    components: Vec<ErgodicComponent>,
) -> Result<ComponentDAG> {
    if components.is_empty() {
        return Err(Error::InvalidArgument("no components to relate".into()));
    }
    let m = components.len();
    let relation: Vec<Vec<bool>> = components
        .par_iter()
        .map(|ci| {
            let reach = graph.reach(&ci.support);
            components
                .iter()
                .map(|cj| cj.support.iter().any(|&c| reach[c]))
                .collect()
        })
        .collect();
    let mut class_of = vec![usize::MAX; m];
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for i in 0..m {
        if class_of[i] != usize::MAX {
            continue;
        }
        let members: Vec<usize> = (i..m)
            .filter(|&j| relation[i][j] && relation[j][i])
            .collect();
        for &j in &members {
            class_of[j] = classes.len();
        }
        classes.push(members);
    }
    let mut class_edges = Vec::new();
    for a in 0..classes.len() {
        for b in 0..classes.len() {
            if a != b
                && classes[a]
                    .iter()
                    .any(|&i| classes[b].iter().any(|&j| relation[i][j]))
            {
                class_edges.push((a, b));
            }
        }
    }
    let least = (0..classes.len())
        .filter(|&a| class_edges.iter().all(|&(from, _)| from != a))
        .collect();
    Ok(ComponentDAG {
        components,
        relation,
        classes,
        class_of,
        class_edges,
        least,
    })
}

impl ComponentDAG {
    pub fn is_least(&self, class: usize) -> bool {
        self.least.contains(&class)
    }

    /// Union of the supports of a class's components.
    pub fn class_cells(&self, class: usize) -> Vec<usize> {
        let mut cells: Vec<usize> = self.classes[class]
            .iter()
            .flat_map(|&i| self.components[i].support.iter().copied())
            .collect();
        cells.sort_unstable();
        cells.dedup();
        cells
    }

    pub fn summary(&self, partition: &Partition) -> DagSummary {
        DagSummary {
            components: self
                .components
                .iter()
                .enumerate()
                .map(|(i, c)| ComponentSummary {
                    index: i,
                    class: self.class_of[i],
                    cells: c.runs(),
                    interval: cells_interval(partition, &c.support),
                })
                .collect(),
            classes: self
                .classes
                .iter()
                .enumerate()
                .map(|(a, members)| ClassSummary {
                    index: a,
                    components: members.clone(),
                    least: self.is_least(a),
                })
                .collect(),
            class_edges: self.class_edges.iter().map(|&(a, b)| [a, b]).collect(),
            least: self.least.clone(),
        }
    }
}

/// Serializable view of a [`ComponentDAG`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagSummary {
    pub components: Vec<ComponentSummary>,
    pub classes: Vec<ClassSummary>,
    pub class_edges: Vec<[usize; 2]>,
    pub least: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub index: usize,
    pub class: usize,
    pub cells: Vec<[usize; 2]>,
    /// Hull `[min, max]` of the support in domain coordinates.
    pub interval: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub index: usize,
    pub components: Vec<usize>,
    pub least: bool,
}

/// `[left edge of first cell, right edge of last cell]`.
pub fn cells_interval(partition: &Partition, cells: &[usize]) -> [f64; 2] {
    match (cells.first(), cells.last()) {
        (Some(&a), Some(&b)) => [partition.cell_bounds(a).0, partition.cell_bounds(b).1],
        _ => [f64::NAN, f64::NAN],
    }
}

/// Unperturbed ergodic components with their pseudo-orbit relation at `eps`.
pub fn least_elements(
    map: &PiecewiseMap,
    partition: &Partition,
    eps: f64,
) -> Result<(CellGraph, ComponentDAG)> {
    let p = build_ulam(map, partition)?;
    let comps = stationary_densities(&p.matrix, STATIONARY_TOL, STATIONARY_MAX_ITER)?;
    let graph = build_cell_graph(map, partition, eps)?;
    let dag = component_relation(&graph, comps)?;
    Ok((graph, dag))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeastElementCheck {
    pub class: usize,
    pub components: Vec<usize>,
    pub hull: Vec<[usize; 2]>,
    pub hull_interval: [f64; 2],
    /// Perturbed densities with at least `1 - mass_tol` of their mass in the hull.
    pub densities_inside: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonLeastCheck {
    pub class: usize,
    pub components: Vec<usize>,
    /// Largest mass any perturbed stationary density puts on the class's cells.
    pub mass: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedDensitySummary {
    pub cells: Vec<[usize; 2]>,
    pub interval: [f64; 2],
    /// Mass inside the hull of each least class, in `least` order.
    pub hull_masses: Vec<f64>,
    /// Least classes whose cells all lie in this density's support.
    pub least_contained: Vec<usize>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySupportReport {
    pub eps: f64,
    pub n: usize,
    pub mass_tol: f64,
    pub dag: DagSummary,
    pub unperturbed_count: usize,
    pub perturbed_count: usize,
    pub least: Vec<LeastElementCheck>,
    pub non_least: Vec<NonLeastCheck>,
    pub perturbed: Vec<PerturbedDensitySummary>,
    /// Largest mass any perturbed density puts outside all least hulls.
    pub mass_outside_hulls: f64,
    /// The number of perturbed densities does not exceed the number of acims.
    pub count_bound: bool,
    /// Each perturbed density contains exactly one least element.
    pub one_least_per_density: bool,
    /// The least-element structure is unchanged on the refined partition.
    pub resolution_stable: bool,
    pub pass: bool,
}

/// Relative tolerance for "all of the mass" and "none of the mass".
pub const MASS_TOL: f64 = 1e-9;

/// Builds the unperturbed decomposition and the pseudo-orbit relation, grows
/// the hull of every least element, and checks that each hull carries
/// exactly one perturbed stationary density while non-least classes carry
/// none. Distinct least elements with overlapping hulls mean `eps` is too
/// large to separate them and are reported as an error.
pub fn verify_density_support(
    map: &PiecewiseMap,
    partition: &Partition,
    kernel: &NoiseKernel,
) -> Result<DensitySupportReport> {
    let eps = kernel.eps();
    let n = partition.n;
    let (graph, dag) = least_elements(map, partition, eps)?;
    let hulls: Vec<Vec<usize>> = dag
        .least
        .iter()
        .map(|&a| graph.hull(&dag.class_cells(a)))
        .collect();
    let masks: Vec<Vec<bool>> = hulls.iter().map(|h| cells_to_mask(h, n)).collect();
    check_disjoint_hulls(&dag.least, &masks, eps)?;

    let pe = build_perturbed(map, partition, kernel)?;
    let perturbed = stationary_densities(&pe.matrix, STATIONARY_TOL, STATIONARY_MAX_ITER)?;

    let least: Vec<LeastElementCheck> = dag
        .least
        .iter()
        .zip(&hulls)
        .zip(&masks)
        .map(|((&a, hull), mask)| {
            let inside = perturbed
                .iter()
                .filter(|f| f.mass_on(mask) >= 1.0 - MASS_TOL)
                .count();
            LeastElementCheck {
                class: a,
                components: dag.classes[a].clone(),
                hull: cell_runs(hull),
                hull_interval: cells_interval(partition, hull),
                densities_inside: inside,
                pass: inside == 1,
            }
        })
        .collect();

    let non_least: Vec<NonLeastCheck> = (0..dag.classes.len())
        .filter(|a| !dag.is_least(*a))
        .map(|a| {
            let mask = cells_to_mask(&dag.class_cells(a), n);
            let mass = perturbed
                .iter()
                .map(|f| f.mass_on(&mask))
                .fold(0.0, f64::max);
            NonLeastCheck {
                class: a,
                components: dag.classes[a].clone(),
                mass,
                pass: mass < MASS_TOL,
            }
        })
        .collect();

    let any_hull: Vec<bool> = (0..n).map(|c| masks.iter().any(|m| m[c])).collect();
    let least_cells: Vec<Vec<usize>> = dag.least.iter().map(|&a| dag.class_cells(a)).collect();
    let summaries: Vec<PerturbedDensitySummary> = perturbed
        .iter()
        .map(|f| {
            let support = cells_to_mask(&f.support, n);
            PerturbedDensitySummary {
                cells: f.runs(),
                interval: cells_interval(partition, &f.support),
                hull_masses: masks.iter().map(|m| f.mass_on(m)).collect(),
                least_contained: dag
                    .least
                    .iter()
                    .zip(&least_cells)
                    .filter(|(_, cells)| cells.iter().all(|&c| support[c]))
                    .map(|(&a, _)| a)
                    .collect(),
                residual: f.residual,
            }
        })
        .collect();
    let mass_outside_hulls = perturbed
        .iter()
        .map(|f| 1.0 - f.mass_on(&any_hull))
        .fold(0.0, f64::max);

    let resolution_stable = match least_elements(map, &partition.refined(), eps) {
        Ok((_, fine)) => same_structure(&dag, partition, &fine, &partition.refined()),
        Err(_) => false,
    };

    let count_bound = perturbed.len() <= dag.components.len();
    let one_least_per_density = summaries.iter().all(|s| s.least_contained.len() == 1);
    let pass = least.iter().all(|c| c.pass)
        && non_least.iter().all(|c| c.pass)
        && perturbed.len() == least.len()
        && mass_outside_hulls < MASS_TOL
        && count_bound
        && one_least_per_density
        && resolution_stable;
    Ok(DensitySupportReport {
        eps,
        n,
        mass_tol: MASS_TOL,
        dag: dag.summary(partition),
        unperturbed_count: dag.components.len(),
        perturbed_count: perturbed.len(),
        least,
        non_least,
        perturbed: summaries,
        mass_outside_hulls,
        count_bound,
        one_least_per_density,
        resolution_stable,
        pass,
    })
}

fn check_disjoint_hulls(least: &[usize], masks: &[Vec<bool>], eps: f64) -> Result<()> {
    for a in 0..masks.len() {
        for b in a + 1..masks.len() {
            if masks[a].iter().zip(&masks[b]).any(|(x, y)| *x && *y) {
                return Err(Error::EpsTooLarge {
                    eps,
                    first: least[a],
                    second: least[b],
                });
            }
        }
    }
    Ok(())
}

/// Compares two decompositions on nested partitions: same number of
/// components, components matched by their support intervals (to within two
/// coarse cells), and the same classes and least flags under that matching.
fn same_structure(a: &ComponentDAG, pa: &Partition, b: &ComponentDAG, pb: &Partition) -> bool {
    if a.components.len() != b.components.len() || a.classes.len() != b.classes.len() {
        return false;
    }
    let tol = 2.0 * pa.h();
    let ia: Vec<[f64; 2]> = a
        .components
        .iter()
        .map(|c| cells_interval(pa, &c.support))
        .collect();
    let ib: Vec<[f64; 2]> = b
        .components
        .iter()
        .map(|c| cells_interval(pb, &c.support))
        .collect();
    let matching: Option<Vec<usize>> = ia
        .iter()
        .map(|x| {
            ib.iter()
                .position(|y| (x[0] - y[0]).abs() <= tol && (x[1] - y[1]).abs() <= tol)
        })
        .collect();
    let Some(matching) = matching else {
        return false;
    };
    (0..a.components.len()).all(|i| {
        (0..a.components.len()).all(|j| a.relation[i][j] == b.relation[matching[i]][matching[j]])
    }) && (0..a.components.len())
        .all(|i| a.is_least(a.class_of[i]) == b.is_least(b.class_of[matching[i]]))
}
