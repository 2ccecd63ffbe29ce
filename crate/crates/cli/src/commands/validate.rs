use std::path::PathBuf;
use std::time::Instant;

use lhfi::model::Variant;
use lhfi::sampler::Typo;
use lhfi::validation::{conjugate_suite, frozen_instances, geweke_test, kernel_checks, ConjugateReport, GewekeConfig, GewekeReport, InstanceReport, KernelCheck};
use serde::{Deserialize, Serialize};

use super::write_json;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const GEWEKE_THRESHOLD: f64 = 4.0;
/// Monte Carlo standard errors allowed by the oracle and conjugate checks.
pub const SE_THRESHOLD: f64 = 3.0;
/// Oracle posterior mass allowed in the outermost grid cells.
pub const EDGE_MASS_LIMIT: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// Joint-distribution test, variants A and B at N = 4, P = 2, K = 1.
    Geweke,
    /// Sampler against grid quadrature on the frozen tiny instances.
    Oracle,
    /// Analytic kernels and conjugate-step moment checks.
    Units,
}

impl Suite {
    /// Replicas, sweeps, or draws.
    pub fn default_budget(self) -> usize {
        match self {
            Suite::Geweke => 100_000,
            Suite::Oracle => 200_000,
            Suite::Units => 100_000,
        }
    }

    pub fn default_seed(self) -> u64 {
        match self {
            Suite::Geweke => GewekeConfig::desk(Variant::A).seed,
            Suite::Oracle => 7,
            Suite::Units => 2024,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidateOptions {
    pub suite: Suite,
    /// A mutant step name, e.g. `step_a`.
    pub inject_typo: Option<String>,
    pub budget: Option<usize>,
    pub seed: Option<u64>,
    /// Defaults to `validation-<suite>`.
    pub out: Option<PathBuf>,
}

impl ValidateOptions {
    pub fn new(suite: Suite) -> Self {
        Self {
            suite,
            inject_typo: None,
            budget: None,
            seed: None,
            out: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub schema_version: u32,
    pub suite: Suite,
    pub typo: Option<Typo>,
    pub budget: usize,
    pub seed: u64,
    pub passed: bool,
    pub failures: Vec<String>,
    pub geweke: Vec<GewekeReport>,
    pub oracle: Vec<InstanceReport>,
    pub kernels: Vec<KernelCheck>,
    pub conjugate: Option<ConjugateReport>,
    pub elapsed_secs: f64,
}

pub const REPORT_FILE: &str = "validation.json";

/// Run one suite. A suite that runs but fails is returned with
/// `passed = false`, not as an error.
pub fn cmd_validate(opts: &ValidateOptions) -> CliResult<ValidationReport> {
    let typo = match &opts.inject_typo {
        None => None,
        Some(name) => Some(Typo::parse(name).ok_or_else(|| {
            let known: Vec<&str> = Typo::ALL.iter().map(|t| t.name()).collect();
            CliError::Usage(format!("unknown typo {name}; expected one of {}", known.join(", ")))
        })?),
    };
    if typo.is_some() && opts.suite == Suite::Oracle {
        return Err(CliError::Usage("--inject-typo applies to the geweke and units suites".into()));
    }
    let budget = opts.budget.unwrap_or_else(|| opts.suite.default_budget());
    let seed = opts.seed.unwrap_or_else(|| opts.suite.default_seed());
    let out = opts.out.clone().unwrap_or_else(|| PathBuf::from(format!("validation-{:?}", opts.suite).to_lowercase()));
    let mut manifest = RunManifest::new("validate", opts, &out)?;
    manifest.seed = Some(seed);
    manifest.write()?;
    let result = run(opts.suite, typo, budget, seed);
    if let Ok(report) = &result {
        let path = out.join(REPORT_FILE);
        write_json(&path, report)?;
        manifest.add_output(&path);
    }
    manifest.conclude(&result)?;
    result
}

fn run(suite: Suite, typo: Option<Typo>, budget: usize, seed: u64) -> CliResult<ValidationReport> {
    let started = Instant::now();
    let mut report = ValidationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        suite,
        typo,
        budget,
        seed,
        passed: false,
        failures: Vec::new(),
        geweke: Vec::new(),
        oracle: Vec::new(),
        kernels: Vec::new(),
        conjugate: None,
        elapsed_secs: 0.0,
    };
    match suite {
        Suite::Geweke => {
            for variant in [Variant::A, Variant::B] {
                let cfg = GewekeConfig {
                    replicas: budget,
                    seed,
                    typo,
                    ..GewekeConfig::desk(variant)
                };
                let r = geweke_test(&cfg)?;
                let status = if r.passes(GEWEKE_THRESHOLD) { "PASS" } else { "FAIL" };
                match &r.diverged {
                    Some(why) => println!("geweke {variant:?}: {status} (chain diverged: {why})"),
                    None => println!("geweke {variant:?}: {status} max |z| = {:.2} over {} functions", r.max_abs_z, r.stats.len()),
                }
                if !r.passes(GEWEKE_THRESHOLD) {
                    report.failures.push(format!("geweke {variant:?}: max |z| {:.2}", r.max_abs_z));
                }
                report.geweke.push(r);
            }
        }
        Suite::Oracle => {
            for inst in frozen_instances()? {
                let r = inst.check(budget, budget / 40, seed)?;
                let ok = r.passes(SE_THRESHOLD) && r.edge_mass < EDGE_MASS_LIMIT;
                println!(
                    "oracle {}: {} max |z| = {:.2}, edge mass {:.1e}",
                    r.name,
                    if ok { "PASS" } else { "FAIL" },
                    r.max_abs_z(),
                    r.edge_mass
                );
                if !ok {
                    report.failures.push(format!("oracle {}: max |z| {:.2}, edge mass {:.1e}", r.name, r.max_abs_z(), r.edge_mass));
                }
                report.oracle.push(r);
            }
        }
        Suite::Units => {
            for k in kernel_checks() {
                println!("kernel {}: {} ({} vs {})", k.name, if k.passed { "PASS" } else { "FAIL" }, k.value, k.expected);
                if !k.passed {
                    report.failures.push(format!("kernel {}", k.name));
                }
                report.kernels.push(k);
            }
            let c = conjugate_suite(budget, seed, typo)?;
            let ok = c.passes(SE_THRESHOLD);
            println!("conjugate steps: {} max |z| = {:.2} over {} checks", if ok { "PASS" } else { "FAIL" }, c.max_abs_z(), c.checks.len());
            if !ok {
                report.failures.push(format!("conjugate steps: max |z| {:.2}", c.max_abs_z()));
            }
            report.conjugate = Some(c);
        }
    }
    report.passed = report.failures.is_empty();
    report.elapsed_secs = started.elapsed().as_secs_f64();
    Ok(report)
}
