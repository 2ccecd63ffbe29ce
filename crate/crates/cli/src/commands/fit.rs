use std::fs;
use std::path::{Path, PathBuf};

use lhfi::sampler::{clear_checkpoints, run_chains, PosteriorSamples, RunOptions};
use serde::{Deserialize, Serialize};

use super::{write_json, DATASET_FILE};
use crate::config::{load_dataset, FitConfig};
use crate::error::{io_error, CliError, CliResult};
use crate::manifest::{RunManifest, RunStatus};

pub const SAMPLES_DIR: &str = "samples";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FIT_CONFIG_FILE: &str = "fit_config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub dataset: PathBuf,
    pub config: Option<PathBuf>,
    /// Overrides `mcmc.seed`.
    pub seed: Option<u64>,
    /// Overrides `mcmc.chains`.
    pub chains: Option<usize>,
    pub out: PathBuf,
    /// Continue from `<out>/checkpoints`.
    pub resume: bool,
    /// Stop every chain after this many sweeps, leaving checkpoints.
    pub max_sweeps: Option<usize>,
}

#[derive(Clone, Debug)]
pub enum FitOutcome {
    Completed(Box<PosteriorSamples>),
    Interrupted { sweeps: usize },
}

impl FitOptions {
    pub fn resolve(&self) -> CliResult<FitConfig> {
        let mut cfg = FitConfig::load(self.config.as_deref())?;
        if let Some(s) = self.seed {
            cfg.mcmc.seed = s;
        }
        if let Some(c) = self.chains {
            cfg.mcmc.chains = c;
        }
        cfg.mcmc.validate()?;
        Ok(cfg)
    }
}

/// Run the configured chains and write `<out>/samples`, the resolved
/// config, a copy of the dataset, and the run manifest.
pub fn cmd_fit(opts: &FitOptions) -> CliResult<FitOutcome> {
    let cfg = opts.resolve()?;
    let dataset = load_dataset(&opts.dataset)?;
    let config_path = opts.out.join(FIT_CONFIG_FILE);
    if opts.resume {
        let stored = FitConfig::load(Some(&config_path))
            .map_err(|_| CliError::Usage(format!("nothing to resume in {}", opts.out.display())))?;
        if stored != cfg {
            return Err(CliError::Usage("resume needs the configuration of the interrupted run".into()));
        }
    }
    let mut manifest = RunManifest::new("fit", opts, &opts.out)?;
    manifest.add_input(&opts.dataset)?;
    if let Some(c) = &opts.config {
        manifest.add_input(c)?;
    }
    manifest.seed = Some(cfg.mcmc.seed);
    manifest.config_hash = Some(cfg.hash()?);
    manifest.dataset_hash = Some(dataset.content_hash()?);
    manifest.write()?;
    let result = run(opts, &cfg, &dataset, &config_path, &mut manifest);
    match &result {
        Ok(FitOutcome::Interrupted { .. }) => manifest.finish(RunStatus::Interrupted, None)?,
        other => manifest.conclude(other)?,
    }
    result
}

fn run(opts: &FitOptions, cfg: &FitConfig, dataset: &lhfi::Dataset, config_path: &Path, manifest: &mut RunManifest) -> CliResult<FitOutcome> {
    write_json(config_path, cfg)?;
    manifest.add_output(config_path);
    let ds_path = opts.out.join(DATASET_FILE);
    write_json(&ds_path, dataset)?;
    manifest.add_output(&ds_path);

    let ckpt_dir = opts.out.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ckpt_dir).map_err(|e| io_error(&ckpt_dir, e))?;
    if !opts.resume {
        clear_checkpoints(&ckpt_dir, cfg.mcmc.chains)?;
    }
    let run_opts = RunOptions {
        checkpoint_dir: Some(ckpt_dir.clone()),
        resume: opts.resume,
        stop_after: opts.max_sweeps,
        dump_dir: Some(opts.out.clone()),
    };
    let Some(samples) = run_chains(dataset, &cfg.model, &cfg.mcmc, &run_opts)? else {
        let sweeps = opts.max_sweeps.unwrap_or(0);
        println!("stopped after {sweeps} sweeps; continue with --resume");
        return Ok(FitOutcome::Interrupted { sweeps });
    };
    let dir = opts.out.join(SAMPLES_DIR);
    samples.write_dir(&dir)?;
    manifest.add_output(&dir);
    clear_checkpoints(&ckpt_dir, cfg.mcmc.chains)?;
    for c in &samples.chains {
        let mut line = format!("chain {}: {} draws", c.chain_id, samples.draws_per_chain());
        if let (Some(r), Some(sd)) = (c.acceptance.phi, c.acceptance.phi_proposal_sd) {
            line.push_str(&format!(", phi acceptance {r:.3} (proposal sd {sd:.3})"));
        }
        if let (Some(r), Some(sd)) = (c.acceptance.gamma, c.acceptance.gamma_proposal_sd) {
            line.push_str(&format!(", gamma acceptance {r:.3} (proposal sd {sd:.3})"));
        }
        println!("{line}");
    }
    println!("samples written to {}", dir.display());
    Ok(FitOutcome::Completed(Box::new(samples)))
}
