//! One test per acceptance criterion. Each prints a single
//! `criterion N (...): PASS|FAIL` line with its measured values.

mod common;

use std::fs;
use std::sync::Mutex;
use std::time::Instant;

use common::*;
use lhfi::model::{ModelConfig, Variant};
use lhfi::posterior::{ess, quantile_sorted};
use lhfi::sampler::{run_chain, run_chains, McmcConfig, PosteriorSamples, RunOptions, Typo};
use lhfi::validation::geweke::DEFAULT_THRESHOLD;
use lhfi::validation::{
    conjugate_suite, frozen_instances, generate_synthetic, geweke_test, kernel_checks, CoordinatePatch, GewekeConfig,
    SyntheticSpec, TrueParams, TruthSource,
};
use rayon::prelude::*;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, what: &str, pass: bool, detail: &str) {
    println!("criterion {n} ({what}): {} | {detail}", if pass { "PASS" } else { "FAIL" });
}

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

#[test]
fn criterion_1_geweke() {
    let _g = serial();
    let t = Instant::now();
    let single = pool(1);
    let mut detail = Vec::new();
    let mut pass = true;
    for v in [Variant::A, Variant::B] {
        let r = single.install(|| geweke_test(&GewekeConfig::desk(v))).unwrap();
        let ok = r.diverged.is_none() && r.passes(DEFAULT_THRESHOLD);
        pass &= ok;
        detail.push(format!("{v:?} max|z| {:.2}", r.max_abs_z));
    }
    for typo in Typo::ALL {
        let mut cfg = GewekeConfig::desk(Variant::A);
        cfg.typo = Some(typo);
        let r = single.install(|| geweke_test(&cfg)).unwrap();
        pass &= r.max_abs_z > 10.0;
        detail.push(format!("{} max|z| {:.1}", typo.name(), r.max_abs_z));
    }
    let secs = t.elapsed().as_secs_f64();
    pass &= secs < 1800.0;
    detail.push(format!("{secs:.0}s single-core"));
    verdict(1, "Geweke", pass, &detail.join(", "));
    assert!(pass);
}

#[test]
fn criterion_2_grid_oracle() {
    let _g = serial();
    let mut pass = true;
    let mut detail = Vec::new();
    for inst in frozen_instances().unwrap() {
        let r = inst.check(200_000, 5_000, 7).unwrap();
        pass &= r.edge_mass < 1e-6 && r.passes(3.0);
        detail.push(format!("{} max|z| {:.2}", r.name, r.max_abs_z()));
    }
    verdict(2, "grid oracle", pass, &detail.join(", "));
    assert!(pass);
}

#[test]
fn criterion_3_conjugate_steps() {
    let _g = serial();
    let r = conjugate_suite(100_000, 2024, None).unwrap();
    let pass = r.passes(3.0);
    verdict(3, "conjugate steps", pass, &format!("{} checks, max|z| {:.2}", r.checks.len(), r.max_abs_z()));
    assert!(pass);
}

fn interval(mut v: Vec<f64>) -> (f64, f64) {
    v.sort_by(f64::total_cmp);
    (quantile_sorted(&v, 0.025), quantile_sorted(&v, 0.975))
}

#[test]
fn criterion_4_synthetic_recovery() {
    let _g = serial();
    const SEEDS: u64 = 20;
    // 2.5% quantile of Bin(20, 0.95)
    const MIN_COVERED: usize = 17;
    let cfg = ModelConfig {
        variant: Variant::B,
        ..Default::default()
    };
    let (beta1, log_phi) = (0.5, 1.5f64.ln());
    let rows: Vec<(bool, bool, usize)> = (1000..1000 + SEEDS)
        .into_par_iter()
        .map(|seed| {
            let data = generate_synthetic(&SyntheticSpec {
                n: 60,
                p: 6,
                k: 3,
                model: cfg.clone(),
                truth: TruthSource::Fixed(TrueParams::recovery(6, 3)),
                patch: CoordinatePatch::default(),
                seed,
                standardize_y: false,
            })
            .unwrap();
            let mcmc = McmcConfig {
                iterations: 20_000,
                burn_in: 5_000,
                seed,
                checkpoint_every: 0,
                ..Default::default()
            };
            let s = run_chain(&data.dataset, &cfg, &mcmc, 0).unwrap();
            let (b0, b1) = interval(s.pooled("beta[T]").unwrap());
            let (p0, p1) = interval(s.pooled("phi").unwrap().into_iter().map(f64::ln).collect());
            let h = data
                .dataset
                .countries
                .iter()
                .enumerate()
                .filter(|(i, c)| {
                    let (l, u) = interval(s.pooled(&format!("H[{}]", c.id)).unwrap());
                    (l..=u).contains(&data.truth.h[*i])
                })
                .count();
            ((b0..=b1).contains(&beta1), (p0..=p1).contains(&log_phi), h)
        })
        .collect();
    let nb = rows.iter().filter(|r| r.0).count();
    let np = rows.iter().filter(|r| r.1).count();
    let nh: usize = rows.iter().map(|r| r.2).sum();
    let total_h = 60 * SEEDS as usize;
    let h_rate = nh as f64 / total_h as f64;
    let pass = nb >= MIN_COVERED && np >= MIN_COVERED && h_rate >= 0.90;
    verdict(
        4,
        "synthetic recovery",
        pass,
        &format!("beta1 {nb}/{SEEDS}, log phi {np}/{SEEDS}, H {nh}/{total_h} = {:.2}%", 100.0 * h_rate),
    );
    assert!(pass);
}

#[test]
fn criterion_5_cut_feedback() {
    let _g = serial();
    let data = synthetic(Variant::B, 30, 3, 2, 77);
    let cfg = ModelConfig {
        variant: Variant::B,
        ..Default::default()
    };
    let mcmc = McmcConfig {
        iterations: 3_000,
        burn_in: 500,
        seed: 5,
        checkpoint_every: 0,
        ..Default::default()
    };
    let gammas = |s: &PosteriorSamples| s.block_draws("gamma").unwrap();
    let base = run_chain(&data.dataset, &cfg, &mcmc, 0).unwrap();
    let mut perturbed = data.dataset.clone();
    for v in perturbed.y.iter_mut() {
        *v = 3.0 * *v + 1.0;
    }
    let other = run_chain(&perturbed, &cfg, &mcmc, 0).unwrap();
    let (g0, g1) = (gammas(&base), gammas(&other));
    let bits = |g: &[Vec<f64>]| g.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
    let identical = bits(&g0) == bits(&g1);
    let h_differs = base.pooled_index(0) != other.pooled_index(0);
    let pass = identical && h_differs && !g0.is_empty();
    verdict(5, "cut feedback", pass, &format!("{} gamma draws compared bitwise", g0.iter().map(Vec::len).sum::<usize>()));
    assert!(pass);
}

#[test]
fn criterion_6_determinism() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic(Variant::B, 15, 3, 2, 9);
    let ds = write_dataset(dir.path(), &data);
    let cfg = write_config(dir.path(), "b.json", Variant::B, 1_500, 300, 2);
    let fit = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["fit", "--dataset", s(&ds), "--config", s(&cfg), "--out", s(&out)];
        args.extend_from_slice(extra);
        let o = lhfi(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = fit("a", &[]);
    let b = fit("b", &["--threads", "1"]);
    let same_run = tree(&a.join("samples")) == tree(&b.join("samples"));
    fit("c", &["--max-sweeps", "700"]);
    let c = fit("c", &["--resume"]);
    let resumed = tree(&a.join("samples")) == tree(&c.join("samples"));
    let pass = same_run && resumed;
    verdict(6, "determinism", pass, &format!("repeat identical {same_run}, resume identical {resumed}"));
    assert!(pass);
}

#[test]
fn criterion_7_analytic_kernels() {
    let _g = serial();
    let checks = kernel_checks();
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let pass = failed.is_empty();
    verdict(7, "analytic kernels", pass, &format!("{} checks, failed {failed:?}", checks.len()));
    assert!(pass);
}

#[test]
fn criterion_8_report_shape() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic(Variant::B, 20, 3, 2, 31);
    let ds = write_dataset(dir.path(), &data);
    let cfg = write_config(dir.path(), "b.json", Variant::B, 2_000, 500, 2);
    let run = dir.path().join("run");
    assert_eq!(code(&lhfi(&["fit", "--dataset", s(&ds), "--config", s(&cfg), "--out", s(&run)])), 0);
    let o = lhfi(&["report", "--samples", s(&run), "all"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let schema: serde_json::Value =
        serde_json::from_str(include_str!("../schema/report.schema.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("report/report.json")).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&report).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    let thresholds: Vec<f64> = report["correlation_curve"][0]["p_above"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p[0].as_f64().unwrap())
        .collect();
    let ranked = report["ranking"].as_array().unwrap().len();
    let pass = errors.is_empty() && thresholds == [0.1, 0.2] && ranked == 20 && stdout(&o).contains("P(>0)");
    verdict(8, "report shape", pass, &format!("schema errors {errors:?}, thresholds {thresholds:?}, ranked {ranked}"));
    assert!(pass);
}

#[test]
fn criterion_9_performance() {
    let _g = serial();
    let data = synthetic(Variant::B, 125, 15, 4, 125);
    let cfg = ModelConfig {
        variant: Variant::B,
        ..Default::default()
    };
    let mcmc = McmcConfig {
        iterations: 20_000,
        burn_in: 5_000,
        chains: 4,
        seed: 125,
        checkpoint_every: 0,
        ..Default::default()
    };
    let t = Instant::now();
    let s = pool(4)
        .install(|| run_chains(&data.dataset, &cfg, &mcmc, &RunOptions::default()))
        .unwrap()
        .unwrap();
    let secs = t.elapsed().as_secs_f64();
    let total_ess: f64 = s.per_chain("beta[T]").unwrap().iter().map(|c| ess(c)).sum();
    let pass = secs < 1800.0 && total_ess > 500.0;
    verdict(9, "performance", pass, &format!("{secs:.0}s on 4 threads, ESS(beta1) {total_ess:.0} over 4 chains"));
    assert!(pass);
}
