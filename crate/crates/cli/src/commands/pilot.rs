use std::path::PathBuf;

use lhfi::model::{Covariance, ModelConfig, Variant};
use lhfi::posterior::{rank_report, split_rhat, RankRow};
use lhfi::sampler::{run_chains, McmcConfig, RunOptions};
use serde::{Deserialize, Serialize};

use super::write_json;
use crate::config::{load_dataset, FitConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

pub const PILOT_FILE: &str = "pilot.json";
/// Above this split R̂ the pilot warns that chains disagree.
pub const RHAT_WARNING: f64 = 1.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotOptions {
    pub dataset: PathBuf,
    /// Only `model.priors` and `mcmc.{thin, proposal sds}` are used.
    pub config: Option<PathBuf>,
    pub iterations: usize,
    /// Defaults to a fifth of `iterations`.
    pub burn_in: Option<usize>,
    pub chains: usize,
    pub seed: u64,
    pub candidates: usize,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotCandidate {
    pub id: String,
    pub name: String,
    pub median: f64,
    pub q025: f64,
    pub q975: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotReport {
    pub iterations: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub seed: u64,
    /// Whether H was negated so that it correlates positively with the
    /// first metric.
    pub sign_flipped: bool,
    pub max_split_rhat: f64,
    pub converged: bool,
    pub caveat: String,
    /// Lowest posterior median first.
    pub candidates: Vec<PilotCandidate>,
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Anchor-free base-model fit; lists the countries with the lowest
/// posterior median H as anchor candidates.
pub fn cmd_pilot(opts: &PilotOptions) -> CliResult<PilotReport> {
    let cfg = FitConfig::load(opts.config.as_deref())?;
    if cfg.model.variant == Variant::B {
        return Err(CliError::Usage("pilot runs the base model only; variant B options are not accepted".into()));
    }
    let dataset = load_dataset(&opts.dataset)?;
    let model = ModelConfig {
        variant: Variant::A,
        covariance: Covariance::Iid,
        anchored: false,
        anchor_id: None,
        priors: cfg.model.priors.clone(),
        ..ModelConfig::default()
    };
    let mcmc = McmcConfig {
        iterations: opts.iterations,
        burn_in: opts.burn_in.unwrap_or(opts.iterations / 5),
        chains: opts.chains,
        seed: opts.seed,
        checkpoint_every: 0,
        ..cfg.mcmc.clone()
    };
    mcmc.validate()?;
    let mut manifest = RunManifest::new("pilot", opts, &opts.out)?;
    manifest.add_input(&opts.dataset)?;
    if let Some(c) = &opts.config {
        manifest.add_input(c)?;
    }
    manifest.seed = Some(opts.seed);
    manifest.config_hash = Some(lhfi::sampler::config_hash(&model, &mcmc)?);
    manifest.dataset_hash = Some(dataset.content_hash()?);
    manifest.write()?;
    let result = run(opts, &dataset, &model, &mcmc, &mut manifest);
    manifest.conclude(&result)?;
    result
}

fn run(opts: &PilotOptions, dataset: &lhfi::Dataset, model: &ModelConfig, mcmc: &McmcConfig, manifest: &mut RunManifest) -> CliResult<PilotReport> {
    let samples = run_chains(dataset, model, mcmc, &RunOptions::default())?.expect("no stop requested");
    let ranking = rank_report(&samples, dataset)?;
    let medians: Vec<f64> = dataset
        .countries
        .iter()
        .map(|c| ranking.iter().find(|r| r.id == c.id).map(|r| r.median).unwrap_or(f64::NAN))
        .collect();
    let first: Vec<f64> = dataset.y.column(0).iter().copied().collect();
    let sign_flipped = correlation(&medians, &first) < 0.0;
    let oriented = |r: &RankRow| -> PilotCandidate {
        let (median, q025, q975) = if sign_flipped {
            (-r.median, -r.q975, -r.q025)
        } else {
            (r.median, r.q025, r.q975)
        };
        PilotCandidate {
            id: r.id.clone(),
            name: r.name.clone(),
            median,
            q025,
            q975,
        }
    };
    let mut all: Vec<PilotCandidate> = ranking.iter().map(oriented).collect();
    all.sort_by(|a, b| a.median.total_cmp(&b.median).then_with(|| a.id.cmp(&b.id)));
    all.truncate(opts.candidates);

    let h = samples.block("H").expect("H block").clone();
    let max_split_rhat = (h.start..h.start + h.len)
        .map(|j| split_rhat(&samples.per_chain_index(j)))
        .filter(|r| r.is_finite())
        .fold(1.0, f64::max);
    let converged = max_split_rhat <= RHAT_WARNING;
    if !converged {
        log::warn!("pilot chains disagree: max split R-hat {max_split_rhat:.2} exceeds {RHAT_WARNING}");
    }
    let report = PilotReport {
        iterations: mcmc.iterations,
        burn_in: mcmc.burn_in,
        chains: mcmc.chains,
        seed: mcmc.seed,
        sign_flipped,
        max_split_rhat,
        converged,
        caveat: "no anchor: the location, scale and sign of H are not identified; the sign was fixed after the run by correlating H with the first metric".into(),
        candidates: all,
    };
    let path = opts.out.join(PILOT_FILE);
    write_json(&path, &report)?;
    manifest.add_output(&path);
    println!("anchor candidates (lowest posterior median H first):");
    for (k, c) in report.candidates.iter().enumerate() {
        println!("{:>3}  {:<8} {:<28} {:>8.3}  ({:.3}, {:.3})", k + 1, c.id, c.name, c.median, c.q025, c.q975);
    }
    println!("note: {}", report.caveat);
    Ok(report)
}
