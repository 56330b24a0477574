//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Reference values are computed here independently of the library where
//! possible: a dense Schur decomposition for the doubling spectrum, interval
//! hulls written down from the map definitions, and a brute-force cell image
//! for positivity propagation.

use std::time::{Duration, Instant};

use pseudorbit::pseudo_orbit::{least_elements, verify_density_support};
use pseudorbit::simulate::{
    coarsen_masses, escape_time, l1_distance, random_skew_starts, run_chain, run_skew_chains,
    Thinning,
};
use pseudorbit::spectral::{
    metastability_report, stationary_densities, top_eigenvalues, MetastabilityOptions,
    SolverMethod, SpectralOptions,
};
use pseudorbit::{
    build_perturbed, build_ulam, operator_distance, BoundaryMode, NoiseKernel, Partition,
    Partition2d, PiecewiseMap, SkewFamily, TransferMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

/// Name, map, Ulam cells, histogram bins, kernel, start, interval holding
/// the start's density.
type AgreementCase = (
    &'static str,
    PiecewiseMap,
    usize,
    usize,
    NoiseKernel,
    f64,
    [f64; 2],
);

const ROW_TOL: f64 = 1e-10;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: pseudorbit::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn stochastic(m: &TransferMatrix, what: &str) -> Result<(), String> {
    let d = m.max_row_sum_deviation();
    ensure(d < ROW_TOL, || format!("{what}: row-sum deviation {d:e}"))
}

fn within_time(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("took {t:.1?}, limit {limit:?}"))
}

fn ex2() -> PiecewiseMap {
    PiecewiseMap::example2(0.1).unwrap()
}

fn strict(eps: f64) -> NoiseKernel {
    NoiseKernel::uniform(eps, BoundaryMode::Strict).unwrap()
}

fn torus(eps: f64) -> NoiseKernel {
    NoiseKernel::uniform(eps, BoundaryMode::TorusWrap).unwrap()
}

/// Mass a cell-mass vector puts on cells contained in `[lo, hi]`.
fn mass_in(p: &Partition, masses: &[f64], lo: f64, hi: f64) -> f64 {
    let tol = 1e-9 * p.h();
    masses
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            let (a, b) = p.cell_bounds(*i);
            a >= lo - tol && b <= hi + tol
        })
        .map(|(_, m)| m)
        .sum()
}

fn interval_close(a: [f64; 2], b: [f64; 2], tol: f64) -> bool {
    (a[0] - b[0]).abs() <= tol && (a[1] - b[1]).abs() <= tol
}

fn criterion1() -> Outcome {
    let start = Instant::now();
    // Every matrix family the suite relies on.
    let mut built = 0;
    let cases: Vec<(PiecewiseMap, usize, Vec<NoiseKernel>)> = vec![
        (
            PiecewiseMap::doubling(),
            1024,
            vec![torus(0.01), torus(0.02), torus(0.005), torus(0.00125)],
        ),
        (PiecewiseMap::example1(), 4000, vec![strict(0.05)]),
        (
            ex2(),
            4000,
            [
                1.0 / 40.0,
                1.0 / 80.0,
                1.0 / 120.0,
                1.0 / 160.0,
                0.02,
                0.005,
                0.00125,
            ]
            .map(strict)
            .to_vec(),
        ),
    ];
    for (map, n, kernels) in &cases {
        let p = Partition::new(map.domain(), *n).unwrap();
        stochastic(&lib(build_ulam(map, &p))?, "unperturbed")?;
        built += 1;
        for k in kernels {
            stochastic(
                &lib(build_perturbed(map, &p, k))?,
                &format!("eps {}", k.eps()),
            )?;
            built += 1;
        }
    }

    let md = PiecewiseMap::doubling();
    let p = Partition::unit(1024).unwrap();
    let m = lib(build_ulam(&md, &p))?;
    let comps = lib(stationary_densities(&m.matrix, 1e-13, 10_000))?;
    ensure(comps.len() == 1, || {
        format!("{} stationary densities", comps.len())
    })?;
    let dev = comps[0]
        .lebesgue_density(&p)
        .iter()
        .map(|f| (f - 1.0).abs())
        .fold(0.0, f64::max);
    ensure(dev <= 1e-8, || {
        format!("density deviates from 1 by {dev:e}")
    })?;
    let rep = lib(top_eigenvalues(&m, &SpectralOptions::default()))?;
    let lam2 = rep.moduli()[1];
    ensure(rep.unit_multiplicity == 1, || {
        format!("unit multiplicity {}", rep.unit_multiplicity)
    })?;
    ensure(lam2 <= 0.5 + 1e-6, || format!("|λ2| = {lam2}"))?;

    // Dense oracle at n = 256 through nalgebra's Schur form.
    let p256 = Partition::unit(256).unwrap();
    let m256 = lib(build_ulam(&md, &p256))?;
    let schur = nalgebra::linalg::Schur::try_new(m256.matrix.to_dense(), 1e-14, 10_000)
        .ok_or("dense Schur oracle did not converge")?;
    let mut moduli: Vec<f64> = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    ensure((moduli[0] - 1.0).abs() < 1e-10, || {
        format!("oracle λ1 = {}", moduli[0])
    })?;
    ensure(moduli[1] <= 0.5 + 1e-6, || {
        format!("oracle |λ2| = {}", moduli[1])
    })?;
    let lib256 = lib(top_eigenvalues(&m256, &SpectralOptions::default()))?;
    ensure(lib256.method == SolverMethod::Dense, || {
        "n=256 not solved densely".into()
    })?;
    let l256 = lib256.moduli()[1];
    ensure(l256 <= 0.5 + 1e-6, || {
        format!("library dense |λ2| = {l256}")
    })?;
    within_time(start, Duration::from_secs(10))?;
    Ok(format!(
        "{built} matrices stochastic; density dev {dev:.1e}; |λ2| {lam2:.3} (n=1024), oracle {:.3} (n=256); {:.1?}",
        moduli[1],
        start.elapsed()
    ))
}

fn criterion2() -> Outcome {
    let start = Instant::now();
    let map = PiecewiseMap::example1();
    let p = Partition::new(map.domain(), 4000).unwrap();
    let (_, dag) = lib(least_elements(&map, &p, 0.05))?;
    let expected = [[1.0, 4.0], [5.5, 7.5], [7.5, 9.5]];
    let summary = dag.summary(&p);
    ensure(summary.components.len() == 3, || {
        format!("{} components", summary.components.len())
    })?;
    let mut idx = [usize::MAX; 3];
    for (k, want) in expected.iter().enumerate() {
        idx[k] = summary
            .components
            .iter()
            .position(|c| interval_close(c.interval, *want, 2.0 * p.h()))
            .ok_or_else(|| format!("no component near {want:?}"))?;
    }
    let class = |k: usize| dag.class_of[idx[k]];
    ensure(dag.classes.len() == 2, || {
        format!("classes {:?}", dag.classes)
    })?;
    ensure(class(1) == class(2) && class(0) != class(1), || {
        format!("classes {:?}", dag.classes)
    })?;
    ensure(dag.is_least(class(0)) && dag.is_least(class(1)), || {
        format!("least {:?}", dag.least)
    })?;
    let m = lib(build_ulam(&map, &p))?;
    let spec = lib(top_eigenvalues(&m, &SpectralOptions::default()))?;
    ensure(spec.unit_multiplicity == 3, || {
        format!("eigenvalue 1 has multiplicity {}", spec.unit_multiplicity)
    })?;
    within_time(start, Duration::from_secs(60))?;
    Ok(format!(
        "components {:?}; classes {{Λ1}}, {{Λ2,Λ3}} both least; {:.1?}",
        summary
            .components
            .iter()
            .map(|c| c.interval)
            .collect::<Vec<_>>(),
        start.elapsed()
    ))
}

fn criterion3() -> Outcome {
    let eps = 0.05;
    let map = PiecewiseMap::example1();
    let p = Partition::new(map.domain(), 4000).unwrap();
    let k = strict(eps);
    let rep = lib(verify_density_support(&map, &p, &k))?;
    ensure(rep.perturbed_count == 2, || {
        format!("{} perturbed densities", rep.perturbed_count)
    })?;
    ensure(rep.least.iter().all(|l| l.pass), || {
        format!("{:?}", rep.least)
    })?;
    ensure(rep.non_least.iter().all(|l| l.pass), || {
        format!("{:?}", rep.non_least)
    })?;
    ensure(rep.mass_outside_hulls < 1e-9, || {
        format!("mass outside hulls {:e}", rep.mass_outside_hulls)
    })?;
    ensure(rep.count_bound && rep.unperturbed_count == 3, || {
        format!("{} <= {}", rep.perturbed_count, rep.unperturbed_count)
    })?;
    ensure(rep.one_least_per_density, || {
        "a density holds several least elements".into()
    })?;
    ensure(rep.pass, || "report verdict is fail".into())?;

    // Hulls written down from the map: Λ1 = [1, 4] and Λ2 ∪ Λ3 = [5.5, 9.5],
    // each fattened by eps.
    let pe = lib(build_perturbed(&map, &p, &k))?;
    let dens = lib(stationary_densities(&pe.matrix, 1e-12, 20_000))?;
    let hulls = [[1.0 - eps, 4.0 + eps], [5.5 - eps, 9.5 + eps]];
    let mut worst: f64 = 0.0;
    for h in hulls {
        let best = dens
            .iter()
            .map(|f| mass_in(&p, &f.density, h[0], h[1]))
            .fold(0.0, f64::max);
        worst = worst.max(1.0 - best);
    }
    ensure(worst <= 1e-9, || {
        format!("oracle hull mass deficit {worst:e}")
    })?;
    Ok(format!(
        "2 densities; hull deficit {worst:.1e}; outside mass {:.1e}; count 2 <= 3",
        rep.mass_outside_hulls
    ))
}

fn criterion4() -> Outcome {
    let start = Instant::now();
    let eps = 1.0 / 120.0;
    let map = ex2();
    let p = Partition::unit(4000).unwrap();
    let (_, dag) = lib(least_elements(&map, &p, eps))?;
    let summary = dag.summary(&p);
    ensure(summary.components.len() == 2, || {
        format!("{} components", summary.components.len())
    })?;
    let tol = 2.0 * p.h();
    let inside = |c: [f64; 2], lo: f64, hi: f64| c[0] >= lo - tol && c[1] <= hi + tol;
    let left = summary
        .components
        .iter()
        .position(|c| inside(c.interval, 0.1, 0.4))
        .ok_or("no component in [0.1, 0.4]")?;
    let right = summary
        .components
        .iter()
        .position(|c| inside(c.interval, 0.6, 0.9))
        .ok_or("no component in [0.6, 0.9]")?;
    ensure(left != right, || "components coincide".into())?;
    ensure(dag.least == vec![dag.class_of[right]], || {
        format!("least classes {:?}", dag.least)
    })?;

    let rep = lib(verify_density_support(&map, &p, &strict(eps)))?;
    ensure(rep.pass, || "density support verdict is fail".into())?;
    let pe = lib(build_perturbed(&map, &p, &strict(eps)))?;
    let dens = lib(stationary_densities(&pe.matrix, 1e-12, 20_000))?;
    ensure(dens.len() == 1, || {
        format!("{} perturbed densities", dens.len())
    })?;
    let right_mass = mass_in(&p, &dens[0].density, 0.6 - eps, 0.9 + eps);
    ensure(right_mass >= 0.999, || {
        format!("right hull mass {right_mass}")
    })?;

    let fam = lib(SkewFamily::example2(0.1))?;
    let grid = Partition2d::unit_square(200, 100).unwrap();
    let starts = random_skew_starts(100, 7);
    let runs = lib(run_skew_chains(
        &fam,
        Some(&strict(eps)),
        &starts,
        100_000,
        10_000,
        7,
        &grid,
        Thinning::none(),
    ))?;
    let occ = runs.iter().map(|r| r.right_occupancy()).fold(1.0, f64::min);
    ensure(occ >= 0.99, || format!("minimum occupancy {occ}"))?;
    within_time(start, Duration::from_secs(300))?;
    Ok(format!(
        "components {:?}, {:?}; least = right; right hull mass {right_mass:.6}; min skew occupancy {occ:.4}; {:.1?}",
        summary.components[left].interval,
        summary.components[right].interval,
        start.elapsed()
    ))
}

fn criterion5() -> Outcome {
    let map = ex2();
    let p = Partition::unit(4000).unwrap();
    let opts = MetastabilityOptions {
        split_at: Some(0.5),
        ..Default::default()
    };
    let mut xis = Vec::new();
    let mut purities = Vec::new();
    for eps in [1.0 / 40.0, 1.0 / 80.0, 1.0 / 160.0] {
        let pe = lib(build_perturbed(&map, &p, &strict(eps)))?;
        let rep = lib(metastability_report(&pe, &opts))?;
        ensure(rep.unit_multiplicity == 1, || {
            format!("eps {eps}: multiplicity {}", rep.unit_multiplicity)
        })?;
        let xi = rep.xi_eps.ok_or_else(|| format!("eps {eps}: no ξ"))?;
        let z = rep.eigenvalues[1];
        ensure(z[1].abs() < 1e-9 && (z[0] - xi).abs() < 1e-12, || {
            format!("eps {eps}: λ2 = {z:?}")
        })?;
        let moduli = rep.moduli();
        ensure(moduli[2] < xi, || {
            format!("eps {eps}: |λ3| = {} ≥ ξ", moduli[2])
        })?;
        ensure(xi > 0.9, || format!("eps {eps}: ξ = {xi}"))?;
        let split = rep.almost_invariant.as_ref().ok_or("no sign split")?;
        let purity = split.purity();
        ensure(purity >= 0.95, || format!("eps {eps}: purity {purity}"))?;
        xis.push(xi);
        purities.push(purity);
    }
    ensure(xis.windows(2).all(|w| w[0] < w[1]), || {
        format!("ξ not increasing: {xis:?}")
    })?;
    Ok(format!(
        "ξ = {:.5} < {:.5} < {:.5}; min purity {:.4}",
        xis[0],
        xis[1],
        xis[2],
        purities.iter().cloned().fold(1.0, f64::min)
    ))
}

fn criterion6() -> Outcome {
    let sweep = [0.02, 0.005, 0.00125];
    let mut lines = Vec::new();
    for (name, map, n, kernel) in [
        (
            "doubling",
            PiecewiseMap::doubling(),
            4096,
            torus as fn(f64) -> NoiseKernel,
        ),
        ("example2", ex2(), 4000, strict),
    ] {
        let p = Partition::new(map.domain(), n).unwrap();
        let unp = lib(build_ulam(&map, &p))?;
        let d: Vec<f64> = sweep
            .iter()
            .map(|&e| {
                lib(build_perturbed(&map, &p, &kernel(e)))
                    .and_then(|m| lib(operator_distance(&unp, &m)))
            })
            .collect::<Result<_, _>>()?;
        ensure(d.windows(2).all(|w| w[1] < w[0]), || {
            format!("{name}: {d:?}")
        })?;
        lines.push(format!("{name} {:.4} > {:.4} > {:.4}", d[0], d[1], d[2]));
    }
    Ok(lines.join("; "))
}

fn criterion7() -> Outcome {
    let n_samples = 1_000_000;
    let burn = 10_000;
    let mut lines = Vec::new();
    let cases: [AgreementCase; 3] = [
        (
            "doubling",
            PiecewiseMap::doubling(),
            1024,
            512,
            torus(0.01),
            0.3,
            [0.0, 1.0],
        ),
        (
            "example1",
            PiecewiseMap::example1(),
            4000,
            500,
            strict(0.05),
            2.0,
            [0.95, 4.05],
        ),
        (
            "example2",
            ex2(),
            4000,
            200,
            strict(1.0 / 120.0),
            0.7,
            [0.59, 0.91],
        ),
    ];
    for (name, map, fine_n, bins, kernel, x0, around) in cases {
        let fine = Partition::new(map.domain(), fine_n).unwrap();
        let coarse = Partition::new(map.domain(), bins).unwrap();
        let pe = lib(build_perturbed(&map, &fine, &kernel))?;
        let dens = lib(stationary_densities(&pe.matrix, 1e-12, 20_000))?;
        // The density whose mass sits where the chain starts.
        let f = dens
            .iter()
            .find(|f| mass_in(&fine, &f.density, around[0], around[1]) > 0.5)
            .ok_or_else(|| format!("{name}: no density near {around:?}"))?;
        let em = lib(run_chain(&map, &kernel, x0, n_samples, burn, 7, &coarse))?;
        let target = lib(coarsen_masses(&f.density, &fine, &coarse))?;
        let d = lib(l1_distance(&em, &target))?;
        ensure(d <= 0.05, || format!("{name}: L1 {d}"))?;
        lines.push(format!("{name} L1 {d:.4}"));
    }

    let map = ex2();
    let p = Partition::unit(4000).unwrap();
    let left = p.cells_in(0.0, 0.5);
    let right = p.cells_in(0.5, 1.0);
    let mut means = Vec::new();
    for eps in [1.0 / 40.0, 1.0 / 80.0, 1.0 / 160.0] {
        let s = lib(escape_time(
            &map,
            &strict(eps),
            &left,
            &right,
            &p,
            1_000_000,
            400,
            7,
        ))?;
        ensure(s.censored == 0, || {
            format!("eps {eps}: {} censored", s.censored)
        })?;
        means.push(s.mean.unwrap());
    }
    ensure(means.windows(2).all(|w| w[0] < w[1]), || {
        format!("escape means {means:?}")
    })?;
    lines.push(format!(
        "escape means {:.1} < {:.1} < {:.1}",
        means[0], means[1], means[2]
    ));
    Ok(lines.join("; "))
}

/// Cells receiving mass from `cells` under one noisy step, computed directly
/// from the branches: each piece of a cell's image is widened to the open
/// interval `(lo - eps, hi + eps)`.
fn brute_force_image(map: &PiecewiseMap, p: &Partition, eps: f64, cells: &[usize]) -> Vec<usize> {
    let n = p.n as i64;
    let h = p.h();
    let lo0 = p.domain.lo;
    let units = |x: f64| {
        let u = (x - lo0) / h;
        if (u - u.round()).abs() < 1e-7 {
            u.round()
        } else {
            u
        }
    };
    let mut hit = vec![false; p.n];
    for &c in cells {
        let (a, b) = p.cell_bounds(c);
        for br in map.branches() {
            let (s, t) = (a.max(br.domain.lo), b.min(br.domain.hi));
            if units(t) - units(s) <= 0.0 {
                continue;
            }
            let (y0, y1) = (br.apply(s), br.apply(t));
            let (u0, u1) = (units(y0.min(y1) - eps), units(y0.max(y1) + eps));
            // Cell k meets the open interval (u0, u1) iff k < u1 and k + 1 > u0.
            let first = (u0.floor()) as i64;
            let last = (u1.ceil()) as i64 - 1;
            for k in first..=last {
                if (k as f64) < u1 && (k as f64 + 1.0) > u0 {
                    if map.wrap() {
                        hit[k.rem_euclid(n) as usize] = true;
                    } else if (0..n).contains(&k) {
                        hit[k as usize] = true;
                    }
                }
            }
        }
    }
    (0..p.n).filter(|&k| hit[k]).collect()
}

fn criterion8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cases = [
        ("doubling", PiecewiseMap::doubling(), 1024, torus(0.01)),
        ("example1", PiecewiseMap::example1(), 4000, strict(0.05)),
        ("example2", ex2(), 4000, strict(1.0 / 120.0)),
    ];
    let mut checked = 0;
    for (name, map, n, kernel) in cases {
        let p = Partition::new(map.domain(), n).unwrap();
        let pe = lib(build_perturbed(&map, &p, &kernel))?;
        for trial in 0..100 {
            // Alternate between scattered cells and a single run of cells.
            let cells: Vec<usize> = if trial % 2 == 0 {
                let count = rng.random_range(1..=20);
                let mut v: Vec<usize> = (0..count).map(|_| rng.random_range(0..n)).collect();
                v.sort_unstable();
                v.dedup();
                v
            } else {
                let a = rng.random_range(0..n);
                let len = rng.random_range(1..=n / 10);
                (a..(a + len).min(n)).collect()
            };
            let mut f = vec![0.0; n];
            for &c in &cells {
                f[c] = 1.0;
            }
            let g = pe.matrix.left_mul(&f);
            let support: Vec<usize> = (0..n).filter(|&k| g[k] > 0.0).collect();
            let expected = brute_force_image(&map, &p, kernel.eps(), &cells);
            ensure(support == expected, || {
                format!(
                    "{name}, trial {trial}: support has {} cells, image {}",
                    support.len(),
                    expected.len()
                )
            })?;
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} indicator seeds match the one-step image"
    ))
}

fn main() {
    #[allow(clippy::type_complexity)]
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("stochasticity and doubling spectrum", criterion1),
        ("example 1 structure", criterion2),
        (
            "least elements carry the perturbed densities (example 1)",
            criterion3,
        ),
        ("example 2 least element and skew occupancy", criterion4),
        ("metastable second eigenvalue", criterion5),
        ("perturbation distance decreases", criterion6),
        ("monte carlo agrees with ulam", criterion7),
        ("positivity propagation", criterion8),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = run();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name} ({secs:.1}s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} ({secs:.1}s): {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
