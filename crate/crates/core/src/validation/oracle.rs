//! Exhaustive quadrature of the joint posterior on tiny sub-models.
//!
//! A few parameters are left free on a tensor grid; everything else is
//! held at the values in a base state. The unnormalized log joint is
//! evaluated at every node with trapezoid weights and normalized, giving
//! marginal masses and moments that do not depend on the sampler.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{ChainState, Covariance, GammaUpdate, Model, ModelConfig, Variant};
use crate::sampler::{Fixed, McmcConfig, Sampler};
use crate::stochastics::RngStream;
use crate::validation::batch_means_se;
use crate::validation::geweke::geweke_priors;
use crate::validation::synthetic::{generate_synthetic, CoordinatePatch, SyntheticSpec, TrueParams, TruthSource};

pub const MAX_GRID_POINTS: u64 = 10_000_000;

/// A scalar coordinate of the chain state. Indices are 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FreeParam {
    H(usize),
    A(usize),
    Beta(usize),
    Sigma2H,
    Phi,
    Xi(usize),
}

impl FreeParam {
    pub fn get(&self, s: &ChainState) -> f64 {
        match *self {
            FreeParam::H(i) => s.h[i],
            FreeParam::A(j) => s.a[j],
            FreeParam::Beta(j) => s.beta[j],
            FreeParam::Sigma2H => s.sigma2_h,
            FreeParam::Phi => s.phi,
            FreeParam::Xi(j) => s.xi[j],
        }
    }

    pub fn set(&self, s: &mut ChainState, v: f64) {
        match *self {
            FreeParam::H(i) => s.h[i] = v,
            FreeParam::A(j) => s.a[j] = v,
            FreeParam::Beta(j) => s.beta[j] = v,
            FreeParam::Sigma2H => s.sigma2_h = v,
            FreeParam::Phi => s.phi = v,
            FreeParam::Xi(j) => s.xi[j] = v,
        }
    }

    pub fn label(&self, ds: &Dataset) -> String {
        match *self {
            FreeParam::H(i) => format!("H[{}]", ds.countries[i].id),
            FreeParam::A(j) => format!("a[{}]", ds.metric_names[j]),
            FreeParam::Beta(j) => format!("beta[{j}]"),
            FreeParam::Sigma2H => "sigma2_H".into(),
            FreeParam::Phi => "phi".into(),
            FreeParam::Xi(j) => format!("xi[{}]", j + 1),
        }
    }

    fn check(&self, model: &Model, base: &ChainState) -> Result<()> {
        let ok = match *self {
            FreeParam::H(i) => i < model.n(),
            FreeParam::A(j) => j < model.p(),
            FreeParam::Beta(j) => j < base.beta.len(),
            FreeParam::Sigma2H => true,
            FreeParam::Phi => model.is_spatial(),
            FreeParam::Xi(j) => model.variant() == Variant::B && j < 2,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("{self:?} is not a parameter of this model")))
        }
    }

    fn positive(&self) -> bool {
        matches!(self, FreeParam::Sigma2H | FreeParam::Phi)
    }
}

/// Uniform nodes on `[lo, hi]`, or on `[ln lo, ln hi]` when `log_scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub param: FreeParam,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub log_scale: bool,
}

impl Axis {
    pub fn linear(param: FreeParam, lo: f64, hi: f64, points: usize) -> Self {
        Self {
            param,
            lo,
            hi,
            points,
            log_scale: false,
        }
    }

    pub fn log(param: FreeParam, lo: f64, hi: f64, points: usize) -> Self {
        Self {
            param,
            lo,
            hi,
            points,
            log_scale: true,
        }
    }

    /// Parameter values at the nodes.
    pub fn values(&self) -> Vec<f64> {
        let (a, b) = if self.log_scale { (self.lo.ln(), self.hi.ln()) } else { (self.lo, self.hi) };
        (0..self.points)
            .map(|k| {
                let u = a + (b - a) * k as f64 / (self.points - 1) as f64;
                if self.log_scale {
                    u.exp()
                } else {
                    u
                }
            })
            .collect()
    }

    /// Trapezoid log weights, including the Jacobian on log axes.
    fn log_weights(&self) -> Vec<f64> {
        let vals = self.values();
        (0..self.points)
            .map(|k| {
                let end = if k == 0 || k + 1 == self.points { 0.5f64.ln() } else { 0.0 };
                end + if self.log_scale { vals[k].ln() } else { 0.0 }
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let ok = self.points >= 3
            && self.lo < self.hi
            && self.lo.is_finite()
            && self.hi.is_finite()
            && (!self.log_scale || self.lo > 0.0)
            && (!self.param.positive() || self.lo > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid grid axis {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<Axis>,
}

impl GridSpec {
    pub fn total_points(&self) -> u64 {
        self.axes.iter().map(|a| a.points as u64).product()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub names: Vec<String>,
    pub params: Vec<FreeParam>,
    /// Node values per axis, on the parameter's own scale.
    pub grids: Vec<Vec<f64>>,
    /// Normalized marginal quadrature masses per axis.
    pub masses: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Mass on nodes touching the grid boundary.
    pub edge_mass: f64,
    pub total_mass: f64,
}

impl OracleResult {
    pub fn index_of(&self, p: FreeParam) -> Option<usize> {
        self.params.iter().position(|&q| q == p)
    }
}

fn decode(mut idx: u64, dims: &[usize], out: &mut [usize]) {
    for (d, &n) in dims.iter().enumerate().rev() {
        out[d] = (idx % n as u64) as usize;
        idx /= n as u64;
    }
}

/// Quadrature of the posterior of the axes' parameters, all others fixed
/// at `base`. Variant B γ must stay fixed: its cut update does not target
/// the joint density.
pub fn grid_oracle(dataset: &Dataset, config: &ModelConfig, base: &ChainState, grid: &GridSpec) -> Result<OracleResult> {
    let model = Model::new(dataset, config)?;
    let total = grid.total_points();
    if total > MAX_GRID_POINTS {
        return Err(Error::GridTooLarge(total));
    }
    if grid.axes.is_empty() {
        return Err(Error::Config("grid has no axes".into()));
    }
    for ax in &grid.axes {
        ax.validate()?;
        ax.param.check(&model, base)?;
    }
    let dims: Vec<usize> = grid.axes.iter().map(|a| a.points).collect();
    let values: Vec<Vec<f64>> = grid.axes.iter().map(Axis::values).collect();
    let logw: Vec<Vec<f64>> = grid.axes.iter().map(Axis::log_weights).collect();
    let d = dims.len();

    let logp: Vec<f64> = (0..total)
        .into_par_iter()
        .map_init(
            || (base.clone(), vec![0usize; d]),
            |(s, coord), idx| {
                decode(idx, &dims, coord);
                let mut lw = 0.0;
                for (k, ax) in grid.axes.iter().enumerate() {
                    ax.param.set(s, values[k][coord[k]]);
                    lw += logw[k][coord[k]];
                }
                model.log_joint(s).map(|lj| lj.total() + lw)
            },
        )
        .collect::<Result<Vec<f64>>>()?;

    let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite { sweep: 0, dump: None });
    }
    let w: Vec<f64> = logp.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    let mut masses: Vec<Vec<f64>> = dims.iter().map(|&n| vec![0.0; n]).collect();
    let mut edge = 0.0;
    let mut coord = vec![0usize; d];
    for (idx, &wi) in w.iter().enumerate() {
        decode(idx as u64, &dims, &mut coord);
        let m = wi / z;
        let mut on_edge = false;
        for k in 0..d {
            masses[k][coord[k]] += m;
            on_edge |= coord[k] == 0 || coord[k] + 1 == dims[k];
        }
        if on_edge {
            edge += m;
        }
    }
    let mut means = Vec::with_capacity(d);
    let mut sds = Vec::with_capacity(d);
    for k in 0..d {
        let m: f64 = masses[k].iter().zip(&values[k]).map(|(p, v)| p * v).sum();
        let v: f64 = masses[k].iter().zip(&values[k]).map(|(p, x)| p * (x - m).powi(2)).sum();
        means.push(m);
        sds.push(v.sqrt());
    }
    let total_mass = masses[0].iter().sum();
    Ok(OracleResult {
        names: grid.axes.iter().map(|a| a.param.label(dataset)).collect(),
        params: grid.axes.iter().map(|a| a.param).collect(),
        grids: values,
        masses,
        means,
        sds,
        edge_mass: edge,
        total_mass,
    })
}

/// A tiny sub-model with its free parameters and a coarse search box.
#[derive(Clone, Debug)]
pub struct FrozenInstance {
    pub name: String,
    pub dataset: Dataset,
    pub config: ModelConfig,
    pub base: ChainState,
    /// Blocks the sampler must hold at `base`.
    pub fixed: Fixed,
    /// Wide box used to locate the posterior before the fine grid.
    pub search: GridSpec,
    pub fine_points: usize,
}

impl FrozenInstance {
    /// Two-pass quadrature: a coarse pass over `search`, then a fine grid
    /// spanning ±8 marginal sds (clipped to the search box).
    pub fn oracle(&self) -> Result<OracleResult> {
        let coarse = grid_oracle(&self.dataset, &self.config, &self.base, &self.search)?;
        let axes = self
            .search
            .axes
            .iter()
            .enumerate()
            .map(|(k, ax)| {
                let (m, s) = if ax.log_scale {
                    let lm: f64 = coarse.masses[k].iter().zip(&coarse.grids[k]).map(|(p, v)| p * v.ln()).sum();
                    let lv: f64 = coarse.masses[k]
                        .iter()
                        .zip(&coarse.grids[k])
                        .map(|(p, v)| p * (v.ln() - lm).powi(2))
                        .sum();
                    (lm, lv.sqrt())
                } else {
                    (coarse.means[k], coarse.sds[k])
                };
                let (slo, shi) = if ax.log_scale { (ax.lo.ln(), ax.hi.ln()) } else { (ax.lo, ax.hi) };
                let lo = (m - 8.0 * s).max(slo);
                let hi = (m + 8.0 * s).min(shi);
                let (lo, hi) = if ax.log_scale { (lo.exp(), hi.exp()) } else { (lo, hi) };
                Axis {
                    lo,
                    hi,
                    points: self.fine_points,
                    ..ax.clone()
                }
            })
            .collect();
        grid_oracle(&self.dataset, &self.config, &self.base, &GridSpec { axes })
    }

    pub fn params(&self) -> Vec<FreeParam> {
        self.search.axes.iter().map(|a| a.param).collect()
    }

    /// Sampler run with the non-free blocks held fixed. Returns the draws
    /// of each free parameter after burn-in.
    pub fn sample(&self, sweeps: usize, burn_in: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let model = Model::new(&self.dataset, &self.config)?;
        let mut rng = RngStream::new(seed, 0);
        let mut state = self.base.clone();
        let mcmc = McmcConfig {
            iterations: sweeps.max(burn_in + 1),
            burn_in,
            seed,
            phi_proposal_sd: 0.5,
            ..Default::default()
        };
        let mut sampler = Sampler::new(&model, &state, &mcmc)?;
        sampler.fixed = self.fixed;
        let params = self.params();
        let mut out = vec![Vec::with_capacity(sweeps); params.len()];
        for s in 0..burn_in + sweeps {
            sampler.sweep(&model, &mut state, &mut rng, s, s < burn_in)?;
            if s >= burn_in {
                for (k, p) in params.iter().enumerate() {
                    out[k].push(p.get(&state));
                }
            }
        }
        Ok(out)
    }

    pub fn check(&self, sweeps: usize, burn_in: usize, seed: u64) -> Result<InstanceReport> {
        let oracle = self.oracle()?;
        let draws = self.sample(sweeps, burn_in, seed)?;
        let rows = oracle
            .names
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let mcmc_mean = draws[k].iter().sum::<f64>() / draws[k].len() as f64;
                let mcmc_se = batch_means_se(&draws[k]);
                ParamComparison {
                    name: name.clone(),
                    oracle_mean: oracle.means[k],
                    oracle_sd: oracle.sds[k],
                    mcmc_mean,
                    mcmc_se,
                    z: (mcmc_mean - oracle.means[k]) / mcmc_se,
                }
            })
            .collect();
        Ok(InstanceReport {
            name: self.name.clone(),
            grid_points: oracle.grids.iter().map(|g| g.len() as u64).product(),
            edge_mass: oracle.edge_mass,
            sweeps,
            rows,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamComparison {
    pub name: String,
    pub oracle_mean: f64,
    pub oracle_sd: f64,
    pub mcmc_mean: f64,
    pub mcmc_se: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub name: String,
    pub grid_points: u64,
    pub edge_mass: f64,
    pub sweeps: usize,
    pub rows: Vec<ParamComparison>,
}

impl InstanceReport {
    pub fn max_abs_z(&self) -> f64 {
        self.rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max)
    }

    pub fn passes(&self, threshold: f64) -> bool {
        self.rows.iter().all(|r| r.z.abs() < threshold)
    }
}

fn tiny_data(variant: Variant, n: usize, truth: TrueParams, seed: u64) -> Result<(Dataset, ModelConfig, ChainState)> {
    let config = ModelConfig {
        variant,
        covariance: Covariance::Spatial,
        priors: geweke_priors(1),
        gamma_update: GammaUpdate::Cut,
        ..Default::default()
    };
    let data = generate_synthetic(&SyntheticSpec {
        n,
        p: 1,
        k: 1,
        model: config.clone(),
        truth: TruthSource::Fixed(truth),
        patch: CoordinatePatch {
            lat_min: 0.0,
            lat_max: 20.0,
            lon_min: 0.0,
            lon_max: 20.0,
        },
        seed,
        standardize_y: false,
    })?;
    Ok((data.dataset, config, data.truth))
}

fn all_fixed() -> Fixed {
    Fixed {
        h_field: true,
        h_anchor: true,
        a: true,
        sigma_y: true,
        sigma2_h: true,
        beta: true,
        phi: true,
        xi: true,
        gamma: true,
    }
}

/// The three regression instances, each with four free dimensions and at
/// most three free non-anchor H values.
///
/// 1. variant A, N = 4: the three field H values and the scalar loading.
/// 2. variant A, N = 3: the two field H values, σ²_H and φ.
/// 3. variant B, N = 3: the two field H values and both ξ.
pub fn frozen_instances() -> Result<Vec<FrozenInstance>> {
    let mut out = Vec::new();

    let truth = TrueParams {
        a: vec![1.0],
        sigma_y: vec![0.3],
        beta: vec![0.0, 0.5, 0.3],
        sigma2_h: 0.2,
        phi: 1.5,
        gamma: vec![0.8],
        xi: vec![],
    };
    let (ds, cfg, base) = tiny_data(Variant::A, 4, truth, 101)?;
    let field: Vec<usize> = (1..4).collect();
    let mut axes: Vec<Axis> = field.iter().map(|&i| Axis::linear(FreeParam::H(i), -6.0, 6.0, 25)).collect();
    axes.push(Axis::linear(FreeParam::A(0), -4.0, 4.0, 25));
    out.push(FrozenInstance {
        name: "field-and-loading".into(),
        dataset: ds,
        config: cfg,
        base,
        fixed: Fixed {
            h_field: false,
            a: false,
            ..all_fixed()
        },
        search: GridSpec { axes },
        fine_points: 40,
    });

    let truth = TrueParams {
        a: vec![1.0],
        sigma_y: vec![0.3],
        beta: vec![0.0, 0.5, 0.3],
        sigma2_h: 0.2,
        phi: 1.5,
        gamma: vec![0.8],
        xi: vec![],
    };
    let (ds, cfg, base) = tiny_data(Variant::A, 3, truth, 202)?;
    out.push(FrozenInstance {
        name: "field-scale-range".into(),
        dataset: ds,
        config: cfg,
        base,
        fixed: Fixed {
            h_field: false,
            sigma2_h: false,
            phi: false,
            ..all_fixed()
        },
        search: GridSpec {
            axes: vec![
                Axis::linear(FreeParam::H(1), -6.0, 6.0, 25),
                Axis::linear(FreeParam::H(2), -6.0, 6.0, 25),
                Axis::log(FreeParam::Sigma2H, 0.01, 5.0, 25),
                Axis::log(FreeParam::Phi, 0.05, 60.0, 25),
            ],
        },
        fine_points: 40,
    });

    let truth = TrueParams {
        a: vec![1.0],
        sigma_y: vec![0.3],
        beta: vec![0.0, 0.5],
        sigma2_h: 0.2,
        phi: 1.5,
        gamma: vec![0.8],
        xi: vec![0.3, 0.7],
    };
    let (ds, cfg, base) = tiny_data(Variant::B, 3, truth, 313)?;
    out.push(FrozenInstance {
        name: "field-and-subclass".into(),
        dataset: ds,
        config: cfg,
        base,
        fixed: Fixed {
            h_field: false,
            xi: false,
            ..all_fixed()
        },
        search: GridSpec {
            axes: vec![
                Axis::linear(FreeParam::H(1), -6.0, 6.0, 25),
                Axis::linear(FreeParam::H(2), -6.0, 6.0, 25),
                Axis::linear(FreeParam::Xi(0), -5.0, 5.0, 25),
                Axis::linear(FreeParam::Xi(1), -5.0, 5.0, 25),
            ],
        },
        fine_points: 40,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loading_only(inst: &FrozenInstance, points: usize) -> Result<OracleResult> {
        let grid = GridSpec {
            axes: vec![Axis::linear(FreeParam::A(0), -4.0, 4.0, points)],
        };
        grid_oracle(&inst.dataset, &inst.config, &inst.base, &grid)
    }

    #[test]
    fn masses_sum_to_one() {
        let inst = &frozen_instances().unwrap()[1];
        let r = grid_oracle(&inst.dataset, &inst.config, &inst.base, &inst.search).unwrap();
        for m in &r.masses {
            assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        }
        assert!((r.total_mass - 1.0).abs() < 1e-8);
    }

    #[test]
    fn oversized_grid_is_rejected() {
        let inst = &frozen_instances().unwrap()[0];
        let mut g = inst.search.clone();
        for a in &mut g.axes {
            a.points = 100;
        }
        assert!(matches!(
            grid_oracle(&inst.dataset, &inst.config, &inst.base, &g),
            Err(Error::GridTooLarge(100_000_000))
        ));
    }

    #[test]
    fn loading_marginal_matches_gaussian_closed_form() {
        let inst = &frozen_instances().unwrap()[0];
        let r = loading_only(inst, 801).unwrap();
        // a | H, Σ_Y, Y ~ N(v Σ H_i y_i / s, v), v = 1 / (Σ H_i² / s + 1 / λ)
        let s = inst.base.sigma_y.matrix()[(0, 0)];
        let lam = inst.config.priors.loading_var;
        let h = &inst.base.h;
        let y = inst.dataset.y.column(0);
        let v = 1.0 / (h.iter().map(|x| x * x).sum::<f64>() / s + 1.0 / lam);
        let m = v * h.iter().zip(y.iter()).map(|(a, b)| a * b).sum::<f64>() / s;
        assert!((r.means[0] - m).abs() < 1e-8, "{} vs {m}", r.means[0]);
        assert!((r.sds[0] - v.sqrt()).abs() < 1e-8, "{} vs {}", r.sds[0], v.sqrt());
        assert!(r.edge_mass < 1e-12);
    }

    #[test]
    fn positive_parameters_need_positive_axes() {
        let bad = Axis::log(FreeParam::Phi, -1.0, 2.0, 5);
        assert!(bad.validate().is_err());
        let bad = Axis::linear(FreeParam::Sigma2H, 0.0, 2.0, 5);
        assert!(bad.validate().is_err());
    }
}
