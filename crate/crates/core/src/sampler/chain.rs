use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{ChainState, Model, ModelConfig};
use crate::sampler::samples::{flatten_state, AcceptanceRates, ChainDraws, PosteriorSamples, SamplesMeta};
use crate::sampler::{Checkpoint, McmcConfig, Sampler};
use crate::stochastics::RngStream;

/// Side effects of a run.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Directory for `chain<id>.ckpt`; checkpoints are off when unset.
    pub checkpoint_dir: Option<PathBuf>,
    /// Continue from existing checkpoints in `checkpoint_dir`.
    pub resume: bool,
    /// Stop (after checkpointing) once this many sweeps are complete.
    pub stop_after: Option<usize>,
    /// Where to write the state when the log density turns non-finite.
    pub dump_dir: Option<PathBuf>,
}

impl RunOptions {
    fn checkpoint_path(&self, chain_id: u64) -> Option<PathBuf> {
        self.checkpoint_dir.as_ref().map(|d| d.join(format!("chain{chain_id}.ckpt")))
    }
}

/// Result of driving one chain to completion.
#[derive(Clone, Debug)]
pub struct ChainOutput {
    pub draws: ChainDraws,
    pub final_state: ChainState,
}

/// One chain: state, RNG stream, kernel, and the draws kept so far.
pub struct ChainRunner<'m> {
    model: &'m Model,
    meta: &'m SamplesMeta,
    mcmc: McmcConfig,
    pub chain_id: u64,
    pub state: ChainState,
    rng: RngStream,
    pub sampler: Sampler,
    /// Sweeps completed.
    pub sweep: usize,
    draws: Vec<f64>,
}

impl<'m> ChainRunner<'m> {
    pub fn new(model: &'m Model, meta: &'m SamplesMeta, mcmc: &McmcConfig, chain_id: u64) -> Result<Self> {
        mcmc.validate()?;
        let mut rng = RngStream::new(mcmc.seed, chain_id);
        let state = ChainState::initial(model, &mut rng);
        let sampler = Sampler::new(model, &state, mcmc)?;
        Ok(Self {
            model,
            meta,
            mcmc: mcmc.clone(),
            chain_id,
            state,
            rng,
            sampler,
            sweep: 0,
            draws: Vec::new(),
        })
    }

    pub fn from_checkpoint(model: &'m Model, meta: &'m SamplesMeta, mcmc: &McmcConfig, cp: Checkpoint) -> Result<Self> {
        if cp.config_hash != meta.config_hash {
            return Err(Error::Checkpoint("checkpoint was written under a different configuration".into()));
        }
        let mut runner = Self::new(model, meta, mcmc, cp.chain_id)?;
        if cp.rng.seed != mcmc.seed || cp.rng.stream_id != cp.chain_id {
            return Err(Error::Checkpoint("checkpoint RNG does not match seed and chain".into()));
        }
        runner.rng = RngStream::restore(cp.rng);
        runner.sampler = Sampler::new(model, &cp.state, mcmc)?;
        runner.sampler.phi = cp.phi;
        runner.sampler.gamma = cp.gamma;
        runner.sampler.scale = cp.scale;
        runner.state = cp.state;
        runner.sweep = cp.sweep;
        runner.draws = cp.draws;
        Ok(runner)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_hash: self.meta.config_hash.clone(),
            chain_id: self.chain_id,
            sweep: self.sweep,
            rng: self.rng.position(),
            state: self.state.clone(),
            phi: self.sampler.phi,
            gamma: self.sampler.gamma,
            scale: self.sampler.scale,
            draws: self.draws.clone(),
        }
    }

    pub fn is_done(&self) -> bool {
        self.sweep >= self.mcmc.iterations
    }

    fn fail(&self, sweep: usize, opts: &RunOptions) -> Error {
        let dump = opts.dump_dir.as_ref().and_then(|dir| {
            let path = dir.join(format!("nonfinite_chain{}_sweep{}.json", self.chain_id, sweep));
            let text = serde_json::to_string_pretty(&self.state).ok()?;
            fs::create_dir_all(dir).ok()?;
            fs::write(&path, text).ok()?;
            Some(path)
        });
        Error::NonFinite { sweep, dump }
    }

    fn check_log_joint(&self, opts: &RunOptions) -> Result<()> {
        let lj = self.model.log_joint(&self.state);
        match lj {
            Ok(lj) if lj.total().is_finite() => Ok(()),
            Ok(_) | Err(Error::NotPositiveDefinite) => Err(self.fail(self.sweep, opts)),
            Err(e) => Err(e),
        }
    }

    /// Advance until done or `opts.stop_after`. Returns whether the chain
    /// finished.
    pub fn run(&mut self, opts: &RunOptions) -> Result<bool> {
        let ckpt = opts.checkpoint_path(self.chain_id);
        let limit = opts.stop_after.unwrap_or(usize::MAX).min(self.mcmc.iterations);
        while self.sweep < limit {
            let s = self.sweep;
            let tuning = s < self.mcmc.burn_in;
            self.sampler.sweep(self.model, &mut self.state, &mut self.rng, s, tuning)?;
            if !self.state.is_finite() {
                return Err(self.fail(s, opts));
            }
            if self.mcmc.keeps(s) {
                flatten_state(&self.state, self.meta, &mut self.draws);
            }
            self.sweep += 1;
            if self.mcmc.checkpoint_every > 0 && self.sweep % self.mcmc.checkpoint_every == 0 {
                self.check_log_joint(opts)?;
                if let Some(p) = &ckpt {
                    self.checkpoint().save(p)?;
                }
            }
        }
        if !self.is_done() {
            if let Some(p) = &ckpt {
                self.checkpoint().save(p)?;
            }
            return Ok(false);
        }
        self.check_log_joint(opts)?;
        Ok(true)
    }

    pub fn acceptance(&self) -> AcceptanceRates {
        let spatial = self.model.is_spatial();
        let b = self.model.variant() == crate::model::Variant::B;
        AcceptanceRates {
            phi: if spatial { self.sampler.phi.rate() } else { None },
            gamma: if b { self.sampler.gamma.rate() } else { None },
            phi_proposal_sd: spatial.then(|| self.sampler.phi.sd()),
            gamma_proposal_sd: b.then(|| self.sampler.gamma.sd()),
            scale: if self.sampler.scale_move { self.sampler.scale.rate() } else { None },
            scale_proposal_sd: self.sampler.scale_move.then(|| self.sampler.scale.sd()),
        }
    }

    pub fn finish(self) -> ChainOutput {
        let acceptance = self.acceptance();
        ChainOutput {
            draws: ChainDraws {
                chain_id: self.chain_id,
                values: self.draws,
                acceptance,
            },
            final_state: self.state,
        }
    }
}

fn drive(model: &Model, meta: &SamplesMeta, mcmc: &McmcConfig, chain_id: u64, opts: &RunOptions) -> Result<Option<ChainOutput>> {
    let path = opts.checkpoint_path(chain_id);
    let mut runner = match path.as_deref().filter(|p| opts.resume && p.exists()) {
        Some(p) => {
            let cp = Checkpoint::load(p)?;
            log::info!("chain {chain_id}: resuming at sweep {}", cp.sweep);
            ChainRunner::from_checkpoint(model, meta, mcmc, cp)?
        }
        None => ChainRunner::new(model, meta, mcmc, chain_id)?,
    };
    if runner.run(opts)? {
        Ok(Some(runner.finish()))
    } else {
        Ok(None)
    }
}

/// Run a single chain with no side effects.
pub fn run_chain(dataset: &Dataset, model_config: &ModelConfig, mcmc: &McmcConfig, chain_id: u64) -> Result<PosteriorSamples> {
    let model = Model::new(dataset, model_config)?;
    let meta = SamplesMeta::new(dataset, model_config, mcmc)?;
    let out = drive(&model, &meta, mcmc, chain_id, &RunOptions::default())?.expect("no stop requested");
    PosteriorSamples::new(meta, vec![out.draws])
}

/// Run `mcmc.chains` chains (ids `0..chains`) on the current rayon pool.
/// Returns `None` when `opts.stop_after` interrupted the run.
pub fn run_chains(dataset: &Dataset, model_config: &ModelConfig, mcmc: &McmcConfig, opts: &RunOptions) -> Result<Option<PosteriorSamples>> {
    mcmc.validate()?;
    let model = Model::new(dataset, model_config)?;
    let meta = SamplesMeta::new(dataset, model_config, mcmc)?;
    let outs: Vec<Option<ChainOutput>> = (0..mcmc.chains as u64)
        .into_par_iter()
        .map(|id| drive(&model, &meta, mcmc, id, opts))
        .collect::<Result<_>>()?;
    if outs.iter().any(Option::is_none) {
        return Ok(None);
    }
    let draws = outs.into_iter().map(|o| o.unwrap().draws).collect();
    PosteriorSamples::new(meta, draws).map(Some)
}

/// Remove checkpoint files for `chains` chains, if present.
pub fn clear_checkpoints(dir: &Path, chains: usize) -> Result<()> {
    for id in 0..chains {
        let p = dir.join(format!("chain{id}.ckpt"));
        if p.exists() {
            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(())
}
