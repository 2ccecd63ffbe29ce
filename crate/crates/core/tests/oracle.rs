use lhfi::validation::frozen_instances;

#[test]
fn sampler_matches_quadrature_on_frozen_instances() {
    for inst in frozen_instances().unwrap() {
        let r = inst.check(200_000, 5_000, 7).unwrap();
        println!("{} ({} nodes, edge mass {:.1e})", r.name, r.grid_points, r.edge_mass);
        for row in &r.rows {
            println!(
                "  {:<10} oracle {:>9.5} ± {:.4}  mcmc {:>9.5} (se {:.5})  z {:>6.2}",
                row.name, row.oracle_mean, row.oracle_sd, row.mcmc_mean, row.mcmc_se, row.z
            );
        }
        assert!(r.edge_mass < 1e-6, "{}: grid truncates the posterior", r.name);
        assert!(r.passes(3.0), "{}: max |z| {:.2}", r.name, r.max_abs_z());
    }
}

use lhfi::model::{ModelConfig, Variant};
use lhfi::sampler::{run_chain, Fixed, McmcConfig};
use lhfi::validation::{generate_synthetic, Axis, FreeParam, GridSpec, SyntheticSpec, TrueParams, TruthSource};

#[test]
fn phi_stationary_distribution_matches_grid_posterior() {
    let mut inst = frozen_instances().unwrap().remove(1);
    inst.fixed = Fixed {
        h_field: true,
        h_anchor: true,
        a: true,
        sigma_y: true,
        sigma2_h: true,
        beta: true,
        phi: false,
        xi: true,
        gamma: true,
    };
    inst.search = GridSpec {
        axes: vec![Axis::log(FreeParam::Phi, 0.01, 200.0, 4001)],
    };
    let grid = lhfi::validation::grid_oracle(&inst.dataset, &inst.config, &inst.base, &inst.search).unwrap();
    let draws = inst.sample(200_000, 2_000, 11).unwrap().remove(0);

    // 40 equal bins in log φ over the central 99.9% of the grid posterior
    let (lo, hi) = quantile_range(&grid.grids[0], &grid.masses[0], 0.0005);
    let nb = 40;
    let bin = |v: f64| (((v.ln() - lo.ln()) / (hi.ln() - lo.ln()) * nb as f64).floor() as isize).clamp(-1, nb as isize);
    let mut p = vec![0.0; nb + 2];
    let mut q = vec![0.0; nb + 2];
    for (v, m) in grid.grids[0].iter().zip(&grid.masses[0]) {
        p[(bin(*v) + 1) as usize] += m;
    }
    for v in &draws {
        q[(bin(*v) + 1) as usize] += 1.0 / draws.len() as f64;
    }
    let tv: f64 = 0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>();
    println!("phi TV = {tv:.4}");
    assert!(tv < 0.05, "TV {tv}");
}

fn quantile_range(x: &[f64], m: &[f64], tail: f64) -> (f64, f64) {
    let mut c = 0.0;
    let mut lo = x[0];
    let mut hi = x[x.len() - 1];
    let mut lo_set = false;
    for (v, w) in x.iter().zip(m) {
        c += w;
        if !lo_set && c >= tail {
            lo = *v;
            lo_set = true;
        }
        if c >= 1.0 - tail {
            hi = *v;
            break;
        }
    }
    (lo, hi)
}

#[test]
fn cut_gamma_posterior_matches_logistic_quadrature() {
    let config = ModelConfig {
        variant: Variant::B,
        ..Default::default()
    };
    let mut truth = TrueParams::recovery(2, 1);
    truth.gamma = vec![0.8];
    let data = generate_synthetic(&SyntheticSpec {
        n: 50,
        p: 2,
        k: 1,
        model: config.clone(),
        truth: TruthSource::Fixed(truth),
        patch: Default::default(),
        seed: 17,
        standardize_y: false,
    })
    .unwrap();
    let ds = &data.dataset;

    // independent 1-D quadrature of Bernoulli-logit likelihood × N(0, λ)
    let lam = config.priors.gamma_var;
    let x: Vec<f64> = ds.x.column(0).iter().copied().collect();
    let t: Vec<f64> = ds.t.iter().map(|&v| v as f64).collect();
    let logpost = |g: f64| {
        x.iter()
            .zip(&t)
            .map(|(&xi, &ti)| {
                let e = g * xi;
                ti * e - (1.0 + e.exp()).ln()
            })
            .sum::<f64>()
            - 0.5 * g * g / lam
    };
    let (a, b, n) = (-10.0, 10.0, 20_001);
    let gs: Vec<f64> = (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect();
    let lp: Vec<f64> = gs.iter().map(|&g| logpost(g)).collect();
    let mx = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lp.iter().map(|l| (l - mx).exp()).collect();
    let z: f64 = w.iter().sum();
    let mean: f64 = gs.iter().zip(&w).map(|(g, w)| g * w).sum::<f64>() / z;
    let sd = (gs.iter().zip(&w).map(|(g, w)| (g - mean).powi(2) * w).sum::<f64>() / z).sqrt();

    let mcmc = McmcConfig {
        iterations: 12_000,
        burn_in: 2_000,
        seed: 5,
        ..Default::default()
    };
    let samples = run_chain(ds, &config, &mcmc, 0).unwrap();
    let draws = samples.pooled("gamma1").unwrap();
    let m = draws.iter().sum::<f64>() / draws.len() as f64;
    println!("gamma: quadrature {mean:.4} ± {sd:.4}, mcmc {m:.4}");
    assert!((m - mean).abs() < 2.0 * sd);
}
