#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lhfi::model::{ModelConfig, Variant};
use lhfi::sampler::McmcConfig;
use lhfi::validation::{generate_synthetic, CoordinatePatch, SyntheticData, SyntheticSpec, TrueParams, TruthSource};
use lhfi_cli::config::FitConfig;

pub fn synthetic(variant: Variant, n: usize, p: usize, k: usize, seed: u64) -> SyntheticData {
    let model = ModelConfig {
        variant,
        ..Default::default()
    };
    let mut truth = TrueParams::recovery(p, k);
    if variant == Variant::A {
        truth.beta = std::iter::once(0.0).chain(std::iter::once(0.5)).chain((0..k).map(|j| 0.2 - 0.1 * j as f64)).collect();
    }
    generate_synthetic(&SyntheticSpec {
        n,
        p,
        k,
        model,
        truth: TruthSource::Fixed(truth),
        patch: CoordinatePatch::default(),
        seed,
        standardize_y: false,
    })
    .unwrap()
}

pub fn write_dataset(dir: &Path, data: &SyntheticData) -> PathBuf {
    let p = dir.join("data.json");
    std::fs::write(&p, data.dataset.to_json().unwrap()).unwrap();
    p
}

pub fn write_config(dir: &Path, name: &str, variant: Variant, iterations: usize, burn_in: usize, chains: usize) -> PathBuf {
    let cfg = FitConfig {
        model: ModelConfig {
            variant,
            ..Default::default()
        },
        mcmc: McmcConfig {
            iterations,
            burn_in,
            chains,
            seed: 11,
            checkpoint_every: 100,
            ..Default::default()
        },
    };
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p
}

pub fn lhfi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lhfi"))
        .args(args)
        .env_remove("LHFI_THREADS")
        .output()
        .expect("spawn lhfi")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every regular file under `dir` with its bytes, sorted by relative path.
pub fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = std::fs::read(&p).unwrap();
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), bytes));
            }
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}
