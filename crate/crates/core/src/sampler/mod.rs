//! Metropolis-within-Gibbs engine.
//!
//! One sweep updates, in order: H, a, Σ_Y, σ²_H, β, φ (spatial only), then
//! ξ and γ (variant B), then a joint rescaling of (H, a, β, ξ, σ²_H).
//! Proposal scales for the Metropolis steps adapt by Robbins-Monro during
//! burn-in and are frozen afterwards.

mod chain;
mod checkpoint;
mod samples;
pub mod steps;

pub use chain::{clear_checkpoints, run_chain, run_chains, ChainOutput, ChainRunner, RunOptions};
pub use checkpoint::Checkpoint;
pub use samples::{config_hash, AcceptanceRates, BlockSpec, ChainDraws, PosteriorSamples, SamplesMeta, MANIFEST_FILE};
pub use steps::{FieldCache, Typo};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChainState, Model, Variant};
use crate::stochastics::RngStream;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HUpdate {
    #[default]
    SingleSite,
    Block,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    /// Total sweeps including burn-in.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    pub phi_proposal_sd: f64,
    pub gamma_proposal_sd: f64,
    /// Proposal sd of `log c` in the rescaling step.
    pub scale_proposal_sd: f64,
    pub scale_move: bool,
    pub adapt: bool,
    /// Sweeps between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    pub h_update: HUpdate,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 250_000,
            burn_in: 50_000,
            thin: 1,
            chains: 1,
            seed: 1,
            phi_proposal_sd: 0.5,
            gamma_proposal_sd: 0.1,
            scale_proposal_sd: 0.05,
            scale_move: true,
            adapt: true,
            checkpoint_every: 10_000,
            h_update: HUpdate::SingleSite,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(Error::Config(format!(
                "iterations ({}) must exceed burn_in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.thin == 0 || self.chains == 0 {
            return Err(Error::Config("thin and chains must be at least 1".into()));
        }
        if !(self.phi_proposal_sd > 0.0 && self.gamma_proposal_sd > 0.0 && self.scale_proposal_sd > 0.0) {
            return Err(Error::Config("proposal sds must be positive".into()));
        }
        Ok(())
    }

    /// Number of kept draws per chain.
    pub fn kept_draws(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }

    pub fn keeps(&self, sweep: usize) -> bool {
        sweep >= self.burn_in && (sweep - self.burn_in) % self.thin == 0
    }
}

pub const PHI_TARGET: f64 = 0.44;
pub const GAMMA_TARGET: f64 = 0.234;
pub const SCALE_TARGET: f64 = 0.44;

/// Robbins-Monro state for one proposal scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adaptive {
    pub log_sd: f64,
    pub target: f64,
    pub proposed: u64,
    pub accepted: u64,
}

impl Adaptive {
    pub fn new(sd: f64, target: f64) -> Self {
        Self {
            log_sd: sd.ln(),
            target,
            proposed: 0,
            accepted: 0,
        }
    }

    pub fn sd(&self) -> f64 {
        self.log_sd.exp()
    }

    fn adapt(&mut self, accept_prob: f64, sweep: usize) {
        let step = (sweep as f64 + 1.0).powf(-0.6);
        self.log_sd = (self.log_sd + step * (accept_prob - self.target)).clamp(-12.0, 5.0);
    }

    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    pub fn rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }
}

/// Blocks held at their current values (all free by default). Used to run
/// the sampler on sub-models small enough for exhaustive quadrature.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Fixed {
    pub h_field: bool,
    pub h_anchor: bool,
    pub a: bool,
    pub sigma_y: bool,
    pub sigma2_h: bool,
    pub beta: bool,
    pub phi: bool,
    pub xi: bool,
    pub gamma: bool,
}

/// The transition kernel: one full sweep plus the proposal state it owns.
#[derive(Clone, Debug)]
pub struct Sampler {
    pub field: FieldCache,
    pub phi: Adaptive,
    pub gamma: Adaptive,
    pub scale: Adaptive,
    pub scale_move: bool,
    pub h_update: HUpdate,
    pub adapt: bool,
    pub typo: Option<Typo>,
    pub fixed: Fixed,
}

impl Sampler {
    pub fn new(model: &Model, state: &ChainState, mcmc: &McmcConfig) -> Result<Self> {
        Ok(Self {
            field: FieldCache::new(model, state.phi)?,
            phi: Adaptive::new(mcmc.phi_proposal_sd, PHI_TARGET),
            gamma: Adaptive::new(mcmc.gamma_proposal_sd, GAMMA_TARGET),
            scale: Adaptive::new(mcmc.scale_proposal_sd, SCALE_TARGET),
            scale_move: mcmc.scale_move,
            h_update: mcmc.h_update,
            adapt: mcmc.adapt,
            typo: None,
            fixed: Fixed::default(),
        })
    }

    /// One sweep. `tuning` enables adaptation; acceptance counters only
    /// accumulate outside tuning.
    pub fn sweep(&mut self, model: &Model, state: &mut ChainState, rng: &mut RngStream, sweep: usize, tuning: bool) -> Result<()> {
        self.field.sync(model, state.phi)?;
        let fx = self.fixed;
        match (self.h_update, fx.h_field, fx.h_anchor) {
            (_, true, true) => {}
            (HUpdate::SingleSite, _, _) | (HUpdate::Block, true, false) | (HUpdate::Block, false, true) => {
                steps::step_h_sites(model, state, &self.field, self.typo, !fx.h_field, !fx.h_anchor, rng)?
            }
            (HUpdate::Block, false, false) => steps::step_h_block(model, state, &self.field, self.typo, rng)?,
        }
        if !fx.a {
            steps::step_a(model, state, self.typo, rng)?;
        }
        if !fx.sigma_y {
            steps::step_sigma_y(model, state, rng)?;
        }
        if !fx.sigma2_h {
            steps::step_sigma2_h(model, state, &self.field, self.typo, rng)?;
        }
        if !fx.beta {
            steps::step_beta(model, state, &self.field, self.typo, rng)?;
        }
        if model.is_spatial() && !fx.phi {
            let (prob, acc) = steps::step_phi(model, state, &mut self.field, self.phi.sd(), self.typo, rng)?;
            if tuning && self.adapt {
                self.phi.adapt(prob, sweep);
            } else if !tuning {
                self.phi.record(acc);
            }
        }
        if model.variant() == Variant::B {
            if !fx.xi {
                steps::step_xi(model, state, &self.field, rng)?;
            }
            if !fx.gamma {
                let (prob, acc) = steps::step_gamma(model, state, &self.field, self.gamma.sd(), rng)?;
                if tuning && self.adapt {
                    self.gamma.adapt(prob, sweep);
                } else if !tuning {
                    self.gamma.record(acc);
                }
            }
        }
        let scaled_free = !(fx.h_field || fx.h_anchor || fx.a || fx.sigma2_h || fx.beta || fx.xi);
        if self.scale_move && scaled_free {
            let (prob, acc) = steps::step_scale(model, state, self.scale.sd(), rng)?;
            if tuning && self.adapt {
                self.scale.adapt(prob, sweep);
            } else if !tuning {
                self.scale.record(acc);
            }
        }
        Ok(())
    }
}
