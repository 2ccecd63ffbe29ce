//! Joint-distribution test of the sampler.
//!
//! The marginal-conditional simulator draws parameters from the prior.
//! The successive-conditional simulator alternates one sampler sweep with
//! a fresh draw of the data given the parameters. When every update
//! leaves the joint distribution invariant, both produce the same moments
//! of any test function of the parameters.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Country, Dataset};
use crate::error::{Error, Result};
use crate::ingest::great_circle_matrix;
use crate::model::{ChainState, Covariance, GammaUpdate, Model, ModelConfig, PriorConfig, Variant};
use crate::sampler::{Fixed, HUpdate, McmcConfig, Sampler, Typo};
use crate::stochastics::{log1p_exp, RngStream};
use crate::validation::batch_means_se;
use crate::validation::synthetic::{sample_h, sample_prior_params, sample_treatment, sample_y, CoordinatePatch};

pub const DEFAULT_THRESHOLD: f64 = 4.0;

const MC_BLOCK: usize = 10_000;
const MC_STREAM_BASE: u64 = 0x100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GewekeConfig {
    pub model: ModelConfig,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    /// Draws from each simulator.
    pub replicas: usize,
    pub seed: u64,
    pub typo: Option<Typo>,
    pub h_update: HUpdate,
    pub phi_proposal_sd: f64,
    pub gamma_proposal_sd: f64,
}

/// Priors with finite fourth moments for every test function: unit
/// variances, Σ_Y with mean 0.25·I, σ²_H with mean 0.2, and a tight
/// lognormal on φ.
pub fn geweke_priors(p: usize) -> PriorConfig {
    let dof = p as f64 + 8.0;
    PriorConfig {
        loading_var: 1.0,
        beta_var: 1.0,
        xi_var: 1.0,
        gamma_var: 1.0,
        sigma_y_dof: Some(dof),
        sigma_y_scale: 0.25 * (dof - p as f64 - 1.0),
        sigma_h_shape: 6.0,
        sigma_h_scale: 1.0,
        phi_log_mu: 0.4,
        phi_log_sigma: 0.5,
        anchor_mean: -2.0,
        anchor_var: 0.1,
    }
}

impl GewekeConfig {
    /// N = 4, P = 2, K = 1, 10⁵ replicas. Variant B updates γ from its
    /// full conditional here; see [`GammaUpdate`].
    pub fn desk(variant: Variant) -> Self {
        Self {
            model: ModelConfig {
                variant,
                covariance: Covariance::Spatial,
                priors: geweke_priors(2),
                gamma_update: match variant {
                    Variant::A => GammaUpdate::Cut,
                    Variant::B => GammaUpdate::Joint,
                },
                ..Default::default()
            },
            n: 4,
            p: 2,
            k: 1,
            replicas: 100_000,
            seed: 20_240_601,
            typo: None,
            h_update: HUpdate::SingleSite,
            phi_proposal_sd: 0.6,
            gamma_proposal_sd: 0.8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas < 10_000 {
            return Err(Error::Config("Geweke test needs at least 10000 replicas".into()));
        }
        if self.n < 3 || self.p < 1 || self.k < 1 {
            return Err(Error::Config("Geweke test needs N ≥ 3, P ≥ 1, K ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GewekeStat {
    pub name: String,
    pub mc_mean: f64,
    pub mc_se: f64,
    pub sc_mean: f64,
    pub sc_se: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GewekeReport {
    pub variant: Variant,
    pub gamma_update: GammaUpdate,
    pub typo: Option<Typo>,
    pub replicas: usize,
    pub stats: Vec<GewekeStat>,
    /// Infinite when the successive-conditional chain diverged.
    pub max_abs_z: f64,
    /// Set when a sweep failed or a test function went non-finite.
    pub diverged: Option<String>,
    pub elapsed_secs: f64,
}

impl GewekeReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.max_abs_z < threshold
    }
}

/// Fixed design shared by both simulators: coordinates in a 20° patch,
/// standard normal covariates, and (variant A) a balanced treatment.
pub fn desk_dataset(n: usize, p: usize, k: usize, seed: u64) -> Result<Dataset> {
    let mut rng = RngStream::new(seed, 0x4745_5745);
    let patch = CoordinatePatch {
        lat_min: 0.0,
        lat_max: 20.0,
        lon_min: 0.0,
        lon_max: 20.0,
    };
    let coords: Vec<(f64, f64)> = (0..n).map(|_| patch.sample(&mut rng)).collect();
    Ok(Dataset {
        countries: (0..n)
            .map(|i| Country {
                id: format!("G{i}"),
                name: format!("G{i}"),
                income_group: String::new(),
                capital_lat_deg: coords[i].0,
                capital_lon_deg: coords[i].1,
            })
            .collect(),
        year: 0,
        y: DMatrix::zeros(n, p),
        x: DMatrix::from_fn(n, k, |_, _| rng.std_normal()),
        t: (0..n).map(|i| (i % 2) as u8).collect(),
        d: great_circle_matrix(&coords)?,
        metric_names: (1..=p).map(|j| format!("m{j}")).collect(),
        covariate_names: (1..=k).map(|j| format!("x{j}")).collect(),
        anchor_index: 0,
    })
}

type TestFn = (String, Box<dyn Fn(&Model, &ChainState) -> f64>);

/// Field quadratic form dᵀR(φ)⁻¹d/σ²_H, with d the field minus its mean.
/// Exactly χ² with one degree of freedom per field site under the joint.
fn field_quad(model: &Model, s: &ChainState) -> f64 {
    let (Ok(mu), Ok(r)) = (model.h_level_mean(s), model.field_correlation(s.phi)) else {
        return f64::NAN;
    };
    let d = model.field_vec(&s.h) - model.field_vec(&mu);
    r.inv_quad_form(&d) / s.sigma2_h
}

fn test_functions(model: &Model) -> Vec<TestFn> {
    let h1 = model.field[0];
    let h2 = model.field[1];
    let mut base: Vec<TestFn> = vec![
        ("a1".into(), Box::new(|_: &Model, s: &ChainState| s.a[0])),
        ("beta0".into(), Box::new(|_: &Model, s: &ChainState| s.beta[0])),
        ("beta1".into(), Box::new(|_: &Model, s: &ChainState| s.beta[1])),
        ("sigma2_H".into(), Box::new(|_: &Model, s: &ChainState| s.sigma2_h)),
        ("H1".into(), Box::new(move |_: &Model, s: &ChainState| s.h[h1])),
        ("Sigma_Y11".into(), Box::new(|_: &Model, s: &ChainState| s.sigma_y.matrix()[(0, 0)])),
        ("field_quad".into(), Box::new(field_quad)),
    ];
    if let Some(anc) = model.anchor {
        base.push(("H_anchor".into(), Box::new(move |_: &Model, s: &ChainState| s.h[anc])));
    }
    if model.is_spatial() {
        base.push(("log_phi".into(), Box::new(|_: &Model, s: &ChainState| s.phi.ln())));
    }
    if model.variant() == Variant::B {
        base.push(("xi1".into(), Box::new(|_: &Model, s: &ChainState| s.xi[0])));
        base.push(("gamma1".into(), Box::new(|_: &Model, s: &ChainState| s.gamma[0])));
    }
    let mut out: Vec<TestFn> = Vec::new();
    for (name, f) in base {
        let sq = format!("{name}^2");
        let f = std::rc::Rc::new(f);
        let g = f.clone();
        out.push((name, Box::new(move |m: &Model, s: &ChainState| f(m, s))));
        out.push((sq, Box::new(move |m: &Model, s: &ChainState| g(m, s).powi(2))));
    }
    out.push(("a1*H1".into(), Box::new(move |_: &Model, s: &ChainState| s.a[0] * s.h[h1])));
    out.push(("H1*H2".into(), Box::new(move |_: &Model, s: &ChainState| s.h[h1] * s.h[h2])));
    if model.is_spatial() {
        out.push((
            "log_phi*field_quad".into(),
            Box::new(|m: &Model, s: &ChainState| s.phi.ln() * field_quad(m, s)),
        ));
    }
    out
}

/// Joint draw of (parameters, T, Y) for variant B, or (parameters, Y).
fn draw_joint(model: &mut Model, rng: &mut RngStream) -> Result<ChainState> {
    let mut s = sample_prior_params(model, rng)?;
    if model.variant() == Variant::B {
        let t = sample_treatment(&model.x, &s.gamma, rng);
        model.set_data(model.y.clone(), t)?;
    }
    sample_h(model, &mut s, rng)?;
    let y = sample_y(&s, rng)?;
    let t = model.t.clone();
    model.set_data(y, t)?;
    Ok(s)
}

fn field_loglik(model: &Model, state: &ChainState, sampler: &Sampler) -> Result<f64> {
    let mu = model.h_level_mean(state)?;
    let d = model.field_vec(&state.h) - model.field_vec(&mu);
    Ok(-0.5 * sampler.field.corr.inv_quad_form(&d) / state.sigma2_h)
}

/// Single-site Gibbs on T given γ and the field (variant B).
fn redraw_treatment(model: &mut Model, state: &ChainState, sampler: &Sampler, rng: &mut RngStream) -> Result<()> {
    let eta = &model.x * &state.gamma;
    for i in 0..model.n() {
        let mut lp = [0.0; 2];
        for (v, slot) in lp.iter_mut().enumerate() {
            let mut t = model.t.clone();
            t[i] = v as f64;
            model.set_data(model.y.clone(), t)?;
            *slot = v as f64 * eta[i] - log1p_exp(eta[i]);
            if Some(i) != model.anchor {
                *slot += field_loglik(model, state, sampler)?;
            }
        }
        let p1 = 1.0 / (1.0 + (lp[0] - lp[1]).exp());
        let mut t = model.t.clone();
        t[i] = (rng.uniform() < p1) as u8 as f64;
        model.set_data(model.y.clone(), t)?;
    }
    Ok(())
}

fn mean_se_iid(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn sc_step(model: &mut Model, state: &mut ChainState, sampler: &mut Sampler, rng: &mut RngStream, r: usize) -> Result<()> {
    sampler.sweep(model, state, rng, r, false)?;
    if model.variant() == Variant::B {
        redraw_treatment(model, state, sampler, rng)?;
    }
    let y = sample_y(state, rng)?;
    let t = model.t.clone();
    model.set_data(y, t)
}

pub fn geweke_test(cfg: &GewekeConfig) -> Result<GewekeReport> {
    cfg.validate()?;
    let started = Instant::now();
    let ds = desk_dataset(cfg.n, cfg.p, cfg.k, cfg.seed)?;
    let mut model = Model::new(&ds, &cfg.model)?;
    let funcs = test_functions(&model);
    // marginal-conditional draws in blocks of independent streams
    let blocks: Vec<(u64, usize)> = (0..cfg.replicas.div_ceil(MC_BLOCK))
        .map(|b| (b as u64, MC_BLOCK.min(cfg.replicas - b * MC_BLOCK)))
        .collect();
    let parts: Vec<Vec<Vec<f64>>> = blocks
        .par_iter()
        .map(|&(b, len)| {
            let mut model = model.clone();
            let funcs = test_functions(&model);
            let mut rng = RngStream::new(cfg.seed, MC_STREAM_BASE + b);
            let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(len); funcs.len()];
            for _ in 0..len {
                let s = draw_joint(&mut model, &mut rng)?;
                for (k, (_, f)) in funcs.iter().enumerate() {
                    cols[k].push(f(&model, &s));
                }
            }
            Ok(cols)
        })
        .collect::<Result<_>>()?;
    let mut mc: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.replicas); funcs.len()];
    for part in parts {
        for (k, col) in part.into_iter().enumerate() {
            mc[k].extend(col);
        }
    }

    let mut rng = RngStream::new(cfg.seed, 2);
    let mut state = draw_joint(&mut model, &mut rng)?;
    let mcmc = McmcConfig {
        phi_proposal_sd: cfg.phi_proposal_sd,
        gamma_proposal_sd: cfg.gamma_proposal_sd,
        adapt: false,
        h_update: cfg.h_update,
        ..Default::default()
    };
    let mut sampler = Sampler::new(&model, &state, &mcmc)?;
    sampler.typo = cfg.typo;
    sampler.fixed = Fixed::default();
    let mut sc: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.replicas); funcs.len()];
    let mut diverged = None;
    for r in 0..cfg.replicas {
        if let Err(e) = sc_step(&mut model, &mut state, &mut sampler, &mut rng, r) {
            diverged = Some(format!("sweep {r}: {e}"));
            break;
        }
        let vals: Vec<f64> = funcs.iter().map(|(_, f)| f(&model, &state)).collect();
        if let Some(k) = vals.iter().position(|v| !v.is_finite()) {
            diverged = Some(format!("sweep {r}: {} is not finite", funcs[k].0));
            break;
        }
        for (k, v) in vals.into_iter().enumerate() {
            sc[k].push(v);
        }
    }
    if let Some(reason) = diverged {
        log::warn!("successive-conditional chain diverged at {reason}");
        return Ok(GewekeReport {
            variant: cfg.model.variant,
            gamma_update: cfg.model.gamma_update,
            typo: cfg.typo,
            replicas: cfg.replicas,
            stats: Vec::new(),
            max_abs_z: f64::INFINITY,
            diverged: Some(reason),
            elapsed_secs: started.elapsed().as_secs_f64(),
        });
    }

    let stats: Vec<GewekeStat> = funcs
        .iter()
        .enumerate()
        .map(|(k, (name, _))| {
            let (mc_mean, mc_se) = mean_se_iid(&mc[k]);
            let sc_mean = sc[k].iter().sum::<f64>() / sc[k].len() as f64;
            let sc_se = batch_means_se(&sc[k]);
            let se = (mc_se * mc_se + sc_se * sc_se).sqrt();
            GewekeStat {
                name: name.clone(),
                mc_mean,
                mc_se,
                sc_mean,
                sc_se,
                z: if se > 0.0 { (mc_mean - sc_mean) / se } else { 0.0 },
            }
        })
        .collect();
    let max_abs_z = stats.iter().map(|s| s.z.abs()).fold(0.0, f64::max);
    Ok(GewekeReport {
        variant: cfg.model.variant,
        gamma_update: cfg.model.gamma_update,
        typo: cfg.typo,
        replicas: cfg.replicas,
        stats,
        max_abs_z,
        diverged: None,
        elapsed_secs: started.elapsed().as_secs_f64(),
    })
}
