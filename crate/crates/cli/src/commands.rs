use std::path::{Path, PathBuf};

use pseudorbit::pseudo_orbit::{
    least_elements, verify_density_support, CellGraph, ComponentDAG, STATIONARY_MAX_ITER,
    STATIONARY_TOL,
};
use pseudorbit::simulate::{
    chain_rng, pooled, random_skew_starts, run_chain_with, run_chains, run_skew_chains, Thinning,
};
use pseudorbit::spectral::{
    metastability_report, stationary_densities, top_eigenvalues, ErgodicComponent,
    MetastabilityOptions, SpectralOptions, SpectrumReport,
};
use pseudorbit::{
    build_perturbed, build_ulam, BoundaryMode, Error, KernelShape, NoiseKernel, Partition,
    Partition2d, PiecewiseMap, Result, SkewFamily, TransferMatrix,
};
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;
use crate::output::*;

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

pub fn execute(cmd: &Command, out: &OutDir) -> Result<Verdict> {
    match cmd {
        Command::Ulam(a) => ulam(a, out),
        Command::Spectrum(a) => spectrum(a, out),
        Command::Components(a) => components(a, out),
        Command::LeastElements(a) => least(a, out),
        Command::Verify(a) => verify(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Example1(a) => example1(a, out),
        Command::Example2(a) => example2(a, out),
    }
}

fn load_map(path: &Path) -> Result<PiecewiseMap> {
    PiecewiseMap::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn partition(map: &PiecewiseMap, bins: usize) -> Result<Partition> {
    Partition::new(map.domain(), bins)
}

fn kernel(map: &PiecewiseMap, eps: f64, k: &KernelArgs) -> Result<NoiseKernel> {
    let shape = match k.kernel {
        Shape::Uniform => KernelShape::Uniform,
        Shape::Triangular => KernelShape::Triangular,
    };
    let boundary = match k.boundary {
        Some(Boundary::Torus) => BoundaryMode::TorusWrap,
        Some(Boundary::Strict) => BoundaryMode::Strict,
        None if map.wrap() => BoundaryMode::TorusWrap,
        None => BoundaryMode::Strict,
    };
    NoiseKernel::new(eps, shape, boundary)
}

fn model_config(map: &PiecewiseMap, bins: usize, k: Option<&NoiseKernel>) -> Value {
    json!({ "map": map, "bins": bins, "kernel": k })
}

fn matrix(map: &PiecewiseMap, p: &Partition, k: Option<&NoiseKernel>) -> Result<TransferMatrix> {
    match k {
        Some(k) => build_perturbed(map, p, k),
        None => build_ulam(map, p),
    }
}

fn say(line: impl AsRef<str>) {
    println!("{}", line.as_ref());
}

fn ulam(a: &UlamArgs, out: &OutDir) -> Result<Verdict> {
    let map = load_map(&a.model.map)?;
    let p = partition(&map, a.model.bins)?;
    let k = a.eps.map(|e| kernel(&map, e, &a.kernel)).transpose()?;
    let m = matrix(&map, &p, k.as_ref())?;
    let path = out.path(&a.out);
    m.write_csv(&path)?;
    say(format!(
        "wrote {} (n = {}, nnz = {}, max row-sum deviation {:e})",
        path.display(),
        m.n(),
        m.matrix.nnz(),
        m.max_row_sum_deviation()
    ));
    Ok(Verdict::Pass)
}

fn spectrum(a: &SpectrumArgs, out: &OutDir) -> Result<Verdict> {
    let map = load_map(&a.model.map)?;
    let p = partition(&map, a.model.bins)?;
    let k = a.eps.map(|e| kernel(&map, e, &a.kernel)).transpose()?;
    let m = matrix(&map, &p, k.as_ref())?;
    let spectral = SpectralOptions {
        k: a.k,
        seed: a.seed,
        ..Default::default()
    };
    let rep = if a.metastability {
        if k.is_none() {
            return Err(Error::Config("--metastability needs --eps".into()));
        }
        metastability_report(
            &m,
            &MetastabilityOptions {
                gap_radius: a.gap_radius,
                isolation_delta: a.isolation_delta,
                split_at: a.split_at,
                spectral,
            },
        )?
    } else {
        top_eigenvalues(&m, &spectral)?
    };
    let mut config = model_config(&map, a.model.bins, k.as_ref());
    config["k"] = json!(a.k);
    config["metastability"] = json!(a.metastability);
    config["split_at"] = json!(a.split_at);
    config["gap_radius"] = json!(a.gap_radius);
    config["isolation_delta"] = json!(a.isolation_delta);
    config["seed"] = json!(a.seed);
    out.write_report(
        Path::new("spectrum.json"),
        &json!({ "config": config, "spectrum": rep }),
    )?;
    out.write_text(Path::new("eigenvalues.csv"), &eigenvalues_csv(&rep))?;
    if let Some(v) = &rep.second_eigvec {
        out.write_text(Path::new("second_eigvec.csv"), &vector_csv(v, &p))?;
    }
    say(format!(
        "unit multiplicity {}, |λ2| = {:.6}{}",
        rep.unit_multiplicity,
        rep.moduli().get(1).copied().unwrap_or(0.0),
        rep.xi_eps
            .map(|x| format!(", ξ = {x:.6}"))
            .unwrap_or_default()
    ));
    Ok(Verdict::Pass)
}

#[derive(Serialize)]
struct ComponentEntry {
    index: usize,
    cells: Vec<[usize; 2]>,
    interval: [f64; 2],
    residual: f64,
}

fn component_entries(comps: &[ErgodicComponent], p: &Partition) -> Vec<ComponentEntry> {
    comps
        .iter()
        .enumerate()
        .map(|(index, c)| ComponentEntry {
            index,
            cells: c.runs(),
            interval: pseudorbit::pseudo_orbit::cells_interval(p, &c.support),
            residual: c.residual,
        })
        .collect()
}

fn components(a: &ModelArgs, out: &OutDir) -> Result<Verdict> {
    let map = load_map(&a.map)?;
    let p = partition(&map, a.bins)?;
    let m = build_ulam(&map, &p)?;
    let comps = stationary_densities(&m.matrix, STATIONARY_TOL, STATIONARY_MAX_ITER)?;
    let entries = component_entries(&comps, &p);
    out.write_report(
        Path::new("components.json"),
        &json!({ "config": model_config(&map, a.bins, None), "components": entries }),
    )?;
    out.write_text(
        Path::new("densities.csv"),
        &densities_csv(&[("unperturbed", &comps)], &p),
    )?;
    for e in &entries {
        say(format!("component {}: {:?}", e.index, e.interval));
    }
    Ok(Verdict::Pass)
}

fn least_hulls(graph: &CellGraph, dag: &ComponentDAG, p: &Partition) -> Vec<Value> {
    dag.least
        .iter()
        .map(|&c| {
            let hull = graph.hull(&dag.class_cells(c));
            json!({
                "class": c,
                "hull": pseudorbit::partition::cell_runs(&hull),
                "hull_interval": pseudorbit::pseudo_orbit::cells_interval(p, &hull),
            })
        })
        .collect()
}

fn least(a: &NoisyArgs, out: &OutDir) -> Result<Verdict> {
    let map = load_map(&a.model.map)?;
    let p = partition(&map, a.model.bins)?;
    let k = kernel(&map, a.eps, &a.kernel)?;
    let (graph, dag) = least_elements(&map, &p, a.eps)?;
    let summary = dag.summary(&p);
    let name = a
        .report
        .clone()
        .unwrap_or_else(|| PathBuf::from("least_elements.json"));
    out.write_report(
        &name,
        &json!({
            "config": model_config(&map, a.model.bins, Some(&k)),
            "dag": summary,
            "least": least_hulls(&graph, &dag, &p),
        }),
    )?;
    say(format!(
        "{} components in {} classes; least classes {:?}",
        dag.components.len(),
        dag.classes.len(),
        dag.least
    ));
    Ok(Verdict::Pass)
}

fn verify(a: &NoisyArgs, out: &OutDir) -> Result<Verdict> {
    let map = load_map(&a.model.map)?;
    let p = partition(&map, a.model.bins)?;
    let k = kernel(&map, a.eps, &a.kernel)?;
    let rep = verify_density_support(&map, &p, &k)?;
    let name = a
        .report
        .clone()
        .unwrap_or_else(|| PathBuf::from("verify.json"));
    out.write_report(
        &name,
        &json!({ "config": model_config(&map, a.model.bins, Some(&k)), "verification": rep }),
    )?;
    say(format!(
        "{} least elements, {} perturbed densities: {}",
        rep.least.len(),
        rep.perturbed_count,
        if rep.pass { "PASS" } else { "FAIL" }
    ));
    Ok(Verdict::from_bool(rep.pass))
}

fn skew_family(map: Option<&Path>, a: f64) -> Result<SkewFamily> {
    match map {
        Some(path) => SkewFamily::new(load_map(path)?, a),
        None => SkewFamily::example2(a),
    }
}

fn check_margin(eps: f64, a: f64) -> Result<()> {
    if !(eps > 0.0 && eps < a) {
        return Err(Error::MarginViolation(format!(
            "eps = {eps} must lie in (0, a) with a = {a}"
        )));
    }
    Ok(())
}

fn thinning(per_chain_cap: usize, every: usize) -> Thinning {
    Thinning {
        every: every.max(1),
        max_points: per_chain_cap,
    }
}

fn simulate(a: &SimulateArgs, out: &OutDir) -> Result<Verdict> {
    if a.starts == 0 {
        return Err(Error::Config("--starts must be positive".into()));
    }
    let per_chain = a.max_points / a.starts;
    let thin = thinning(per_chain, a.thin);
    let (summary, config, orbit_text, hist_text) = if a.skew {
        let margin =
            a.a.ok_or_else(|| Error::Config("--skew needs --a".into()))?;
        check_margin(a.eps, margin)?;
        let fam = skew_family(a.map.as_deref(), margin)?;
        let k = kernel(fam.base(), a.eps, &a.kernel)?;
        let grid = Partition2d::unit_square(a.bins, a.fiber_bins)?;
        let starts = random_skew_starts(a.starts, a.seed);
        let runs = run_skew_chains(
            &fam,
            Some(&k),
            &starts,
            a.steps,
            a.burn,
            a.seed,
            &grid,
            thin,
        )?;
        let occ: Vec<f64> = runs.iter().map(|r| r.right_occupancy()).collect();
        let mut hist = runs[0].measure.clone();
        for r in &runs[1..] {
            hist.merge(&r.measure)?;
        }
        let summary = json!({
            "chains": runs.len(),
            "samples": hist.total,
            "right_threshold": pseudorbit::simulate::RIGHT_THRESHOLD,
            "right_occupancy_min": occ.iter().cloned().fold(1.0, f64::min),
            "right_occupancy_mean": occ.iter().sum::<f64>() / occ.len() as f64,
        });
        let mut config = json!({ "map": fam.base(), "a": margin, "kernel": k, "skew": true });
        config["fiber_bins"] = json!(a.fiber_bins);
        (
            summary,
            config,
            orbits_csv(runs.iter().flat_map(|r| &r.points)),
            hist2d_csv(&grid, &hist.counts),
        )
    } else {
        let path = a
            .map
            .as_deref()
            .ok_or_else(|| Error::Config("simulate needs --map (or --skew)".into()))?;
        let map = load_map(path)?;
        let k = kernel(&map, a.eps, &a.kernel)?;
        let p = partition(&map, a.bins)?;
        let d = map.domain();
        let mut rng = chain_rng(a.seed, u64::MAX);
        let starts: Vec<f64> = (0..a.starts)
            .map(|_| d.lo + d.len() * rng.random::<f64>())
            .collect();
        let runs = run_chains(&map, &k, &starts, a.steps, a.burn, a.seed, &p, thin)?;
        let hist = pooled(&runs)?.expect("at least one chain");
        let summary = json!({ "chains": runs.len(), "samples": hist.total });
        (
            summary,
            json!({ "map": map, "kernel": k, "skew": false }),
            orbits_csv(runs.iter().flat_map(|r| &r.points)),
            hist1d_csv(&hist.counts),
        )
    };
    let mut config = config;
    for (key, v) in [
        ("starts", json!(a.starts)),
        ("steps", json!(a.steps)),
        ("burn", json!(a.burn)),
        ("seed", json!(a.seed)),
        ("bins", json!(a.bins)),
        ("thin", json!(a.thin)),
        ("max_points", json!(a.max_points)),
        ("out", json!(a.out)),
        ("hist", json!(a.hist)),
    ] {
        config[key] = v;
    }
    out.write_text(&a.out, &orbit_text)?;
    out.write_text(&a.hist, &hist_text)?;
    out.write_report(
        Path::new("simulate.json"),
        &json!({ "config": config, "summary": summary }),
    )?;
    say(summary.to_string());
    Ok(Verdict::Pass)
}

fn spectrum_summary(rep: &SpectrumReport) -> Value {
    json!({
        "eigenvalues": rep.eigenvalues,
        "unit_multiplicity": rep.unit_multiplicity,
        "xi_eps": rep.xi_eps,
        "almost_invariant": rep.almost_invariant,
        "method": rep.method,
    })
}

fn example1(a: &Example1Args, out: &OutDir) -> Result<Verdict> {
    let map = PiecewiseMap::example1();
    let p = partition(&map, a.bins)?;
    let k = NoiseKernel::uniform(a.eps, BoundaryMode::Strict)?;

    let (graph, dag) = least_elements(&map, &p, a.eps)?;
    let spec = top_eigenvalues(&build_ulam(&map, &p)?, &SpectralOptions::default())?;
    let support = verify_density_support(&map, &p, &k)?;
    let pe = build_perturbed(&map, &p, &k)?;
    let perturbed = stationary_densities(&pe.matrix, STATIONARY_TOL, STATIONARY_MAX_ITER)?;

    // One chain per least element, started in the middle of its first
    // component, must stay in that element's hull.
    let mut sims = Vec::new();
    for (i, &c) in dag.least.iter().enumerate() {
        let hull = graph.hull(&dag.class_cells(c));
        let mut mask = vec![false; p.n];
        hull.iter().for_each(|&h| mask[h] = true);
        let comp = &dag.components[dag.classes[c][0]];
        let x0 = p.cell_center(comp.support[comp.support.len() / 2]);
        let run = run_chain_with(
            &map,
            &k,
            x0,
            a.steps,
            10_000.min(a.steps - 1),
            a.seed,
            i,
            &p,
            Thinning::none(),
        )?;
        let occupancy = run.measure.mass_on(&mask);
        sims.push(json!({ "class": c, "x0": x0, "hull_occupancy": occupancy, "pass": occupancy >= 0.9999 }));
    }
    let sims_pass = sims.iter().all(|s| s["pass"] == json!(true));

    let verdicts = json!({
        "density_support": support.pass,
        "two_least_elements": dag.least.len() == 2,
        "unit_multiplicity_matches_components": spec.unit_multiplicity == dag.components.len(),
        "simulation_in_hulls": sims_pass,
    });
    let pass = verdicts
        .as_object()
        .unwrap()
        .values()
        .all(|v| v == &json!(true));
    let report = json!({
        "config": {
            "example": "example1",
            "map": map,
            "bins": a.bins,
            "kernel": k,
            "seed": a.seed,
            "steps": a.steps,
        },
        "components": dag.summary(&p),
        "least_elements": least_hulls(&graph, &dag, &p),
        "unperturbed_spectrum": spectrum_summary(&spec),
        "perturbed_density_count": perturbed.len(),
        "density_support": support,
        "simulation": sims,
        "verdicts": verdicts,
        "pass": pass,
    });
    out.write_report(Path::new("report.json"), &report)?;
    out.write_text(
        Path::new("densities.csv"),
        &densities_csv(
            &[("unperturbed", &dag.components), ("perturbed", &perturbed)],
            &p,
        ),
    )?;
    out.write_text(Path::new("eigenvalues.csv"), &eigenvalues_csv(&spec))?;
    say(format!(
        "example1: {} components, {} least elements, {} perturbed densities: {}",
        dag.components.len(),
        dag.least.len(),
        perturbed.len(),
        if pass { "PASS" } else { "FAIL" }
    ));
    Ok(Verdict::from_bool(pass))
}

fn example2(a: &Example2Args, out: &OutDir) -> Result<Verdict> {
    check_margin(a.eps, a.a)?;
    if a.starts == 0 {
        return Err(Error::Config("--starts must be positive".into()));
    }
    let map = PiecewiseMap::example2(a.a)?;
    let p = partition(&map, a.bins)?;
    let k = NoiseKernel::uniform(a.eps, BoundaryMode::Strict)?;

    let (graph, dag) = least_elements(&map, &p, a.eps)?;
    let support = verify_density_support(&map, &p, &k)?;
    let pe = build_perturbed(&map, &p, &k)?;
    let perturbed = stationary_densities(&pe.matrix, STATIONARY_TOL, STATIONARY_MAX_ITER)?;
    let summary = dag.summary(&p);
    let least_right = dag.least.len() == 1
        && summary
            .components
            .iter()
            .filter(|c| c.class == dag.least[0])
            .all(|c| c.interval[0] >= 0.5);
    let density_right = perturbed.len() == 1
        && perturbed[0]
            .support
            .iter()
            .all(|&c| p.cell_bounds(c).0 >= 0.5 - a.eps);

    let meta = metastability_report(
        &pe,
        &MetastabilityOptions {
            split_at: Some(0.5),
            ..Default::default()
        },
    );
    let (meta_json, meta_ok) = match &meta {
        Ok(rep) => {
            let purity = rep.almost_invariant.as_ref().map_or(0.0, |s| s.purity());
            let ok = rep.xi_eps.is_some_and(|x| x > 0.9) && purity >= 0.95;
            (spectrum_summary(rep), ok)
        }
        Err(e) => (json!({ "error": e.to_string() }), false),
    };

    let fam = SkewFamily::new(map.clone(), a.a)?;
    let grid = Partition2d::unit_square(200, 100)?;
    let starts = random_skew_starts(a.starts, a.seed);
    let thin = thinning(100_000 / a.starts, 10);
    let runs = run_skew_chains(
        &fam,
        Some(&k),
        &starts,
        a.steps,
        a.burn,
        a.seed,
        &grid,
        thin,
    )?;
    let occ: Vec<f64> = runs.iter().map(|r| r.right_occupancy()).collect();
    let occ_min = occ.iter().cloned().fold(1.0, f64::min);
    let mut hist = runs[0].measure.clone();
    for r in &runs[1..] {
        hist.merge(&r.measure)?;
    }

    let verdicts = json!({
        "density_support": support.pass,
        "unique_least_element_on_right": least_right,
        "one_density_on_right": density_right,
        "metastable_pair": meta_ok,
        "skew_orbits_accumulate_right": occ_min >= 0.99,
    });
    let pass = verdicts
        .as_object()
        .unwrap()
        .values()
        .all(|v| v == &json!(true));
    let report = json!({
        "config": {
            "example": "example2",
            "a": a.a,
            "map": map,
            "bins": a.bins,
            "kernel": k,
            "seed": a.seed,
            "starts": a.starts,
            "steps": a.steps,
            "burn": a.burn,
            "grid": grid,
        },
        "components": summary,
        "least_elements": least_hulls(&graph, &dag, &p),
        "perturbed_density_count": perturbed.len(),
        "density_support": support,
        "metastability": meta_json,
        "skew_simulation": {
            "chains": runs.len(),
            "right_threshold": pseudorbit::simulate::RIGHT_THRESHOLD,
            "right_occupancy_min": occ_min,
            "right_occupancy_mean": occ.iter().sum::<f64>() / occ.len() as f64,
        },
        "verdicts": verdicts,
        "pass": pass,
    });
    out.write_report(Path::new("report.json"), &report)?;
    out.write_text(
        Path::new("densities.csv"),
        &densities_csv(
            &[("unperturbed", &dag.components), ("perturbed", &perturbed)],
            &p,
        ),
    )?;
    if let Ok(rep) = &meta {
        out.write_text(Path::new("eigenvalues.csv"), &eigenvalues_csv(rep))?;
        if let Some(v) = &rep.second_eigvec {
            out.write_text(Path::new("second_eigvec.csv"), &vector_csv(v, &p))?;
        }
    }
    out.write_text(
        Path::new("orbits.csv"),
        &orbits_csv(runs.iter().flat_map(|r| &r.points)),
    )?;
    out.write_text(Path::new("hist.csv"), &hist2d_csv(&grid, &hist.counts))?;
    say(format!(
        "example2: {} components, least {:?}, {} perturbed densities, min right occupancy {:.4}: {}",
        dag.components.len(),
        dag.least,
        perturbed.len(),
        occ_min,
        if pass { "PASS" } else { "FAIL" }
    ));
    Ok(Verdict::from_bool(pass))
}
