use proptest::prelude::*;
use pseudorbit::pseudo_orbit::{build_cell_graph, least_elements};
use pseudorbit::simulate::escape_time;
use pseudorbit::spectral::{
    metastability_report, stationary_densities, vector_l1_distance, MetastabilityOptions,
};
use pseudorbit::{build_perturbed, build_ulam, BoundaryMode, NoiseKernel, Partition, PiecewiseMap};

fn ex2() -> PiecewiseMap {
    PiecewiseMap::example2(0.1).unwrap()
}

fn strict(eps: f64) -> NoiseKernel {
    NoiseKernel::uniform(eps, BoundaryMode::Strict).unwrap()
}

#[test]
fn perturbed_density_converges_to_least_component() {
    let map = ex2();
    let p = Partition::unit(4000).unwrap();
    let unperturbed =
        stationary_densities(&build_ulam(&map, &p).unwrap().matrix, 1e-12, 20_000).unwrap();
    let right = unperturbed
        .iter()
        .find(|c| p.cell_bounds(c.support[0]).0 >= 0.5)
        .unwrap();
    let mut dist = Vec::new();
    for eps in [1.0 / 40.0, 1.0 / 80.0, 1.0 / 160.0] {
        let pe = build_perturbed(&map, &p, &strict(eps)).unwrap();
        let d = stationary_densities(&pe.matrix, 1e-12, 20_000).unwrap();
        assert_eq!(d.len(), 1);
        dist.push(vector_l1_distance(&d[0].density, &right.density));
    }
    assert!(dist.windows(2).all(|w| w[1] < w[0]), "{dist:?}");
    assert!(dist[2] < 0.1, "{dist:?}");
}

#[test]
fn metastable_spectra_stay_in_the_admissible_region() {
    let map = ex2();
    let p = Partition::unit(4000).unwrap();
    let opts = MetastabilityOptions {
        split_at: Some(0.5),
        ..Default::default()
    };
    for eps in [1.0 / 40.0, 1.0 / 80.0, 1.0 / 160.0] {
        let rep =
            metastability_report(&build_perturbed(&map, &p, &strict(eps)).unwrap(), &opts).unwrap();
        assert!(
            rep.contained_in_region(),
            "eps {eps}: {:?}",
            rep.eigenvalues
        );
        let v = rep.second_eigvec.as_ref().unwrap();
        assert!((v.iter().map(|x| x.abs()).sum::<f64>() - 1.0).abs() < 1e-12);
        let split = rep.almost_invariant.unwrap();
        // The density lives on the right; the slowly decaying mode is the
        // left half emptying into it.
        assert!(!split.positive_is_left);
    }
}

#[test]
fn least_element_cannot_be_left_at_small_noise() {
    let map = ex2();
    let p = Partition::unit(4000).unwrap();
    let right = p.cells_in(0.6, 0.9);
    let left = p.cells_in(0.0, 0.5);
    let s = escape_time(&map, &strict(1.0 / 120.0), &right, &left, &p, 20_000, 50, 3).unwrap();
    assert_eq!(s.censored, 50);
    assert!(s.mean.is_none());
}

#[test]
fn structure_is_stable_under_refinement() {
    let map = PiecewiseMap::example1();
    let coarse = Partition::new(map.domain(), 2000).unwrap();
    let (_, a) = least_elements(&map, &coarse, 0.05).unwrap();
    let (_, b) = least_elements(&map, &coarse.refined(), 0.05).unwrap();
    assert_eq!(a.classes, b.classes);
    assert_eq!(a.least, b.least);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn noisy_rows_are_stochastic_and_supports_match_the_cell_graph(
        eps in 0.002f64..0.09,
        lo in 0usize..500,
        len in 1usize..60,
    ) {
        let map = ex2();
        let p = Partition::unit(500).unwrap();
        let pe = build_perturbed(&map, &p, &strict(eps)).unwrap();
        prop_assert!(pe.max_row_sum_deviation() < 1e-10);
        let graph = build_cell_graph(&map, &p, eps).unwrap();
        let cells: Vec<usize> = (lo..(lo + len).min(500)).collect();
        let mut f = vec![0.0; 500];
        for &c in &cells {
            f[c] = 1.0;
        }
        let g = pe.matrix.left_mul(&f);
        let support: Vec<usize> = (0..500).filter(|&k| g[k] > 0.0).collect();
        prop_assert_eq!(support, graph.image(&cells));
    }

    #[test]
    fn doubling_mass_is_preserved(eps in 0.001f64..0.4, seed in 0usize..1024) {
        let map = PiecewiseMap::doubling();
        let p = Partition::unit(1024).unwrap();
        let k = NoiseKernel::uniform(eps, BoundaryMode::TorusWrap).unwrap();
        let pe = build_perturbed(&map, &p, &k).unwrap();
        let mut f = vec![0.0; 1024];
        f[seed] = 1.0;
        let g = pe.matrix.left_mul(&f);
        prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(g.iter().all(|x| *x >= 0.0));
    }
}
