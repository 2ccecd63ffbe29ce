//! Monte Carlo checks of the Gibbs updates at frozen conditioning values.
//!
//! Each update is applied repeatedly to the same state; the sample mean and
//! variance of every coordinate are compared to closed-form moments built
//! from dense explicit inverses.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChainState, Covariance, Model, ModelConfig, Variant};
use crate::sampler::steps::{self, FieldCache};
use crate::sampler::Typo;
use crate::stochastics::RngStream;
use crate::validation::synthetic::{generate_synthetic, CoordinatePatch, SyntheticSpec, TrueParams, TruthSource};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub step: String,
    pub coord: String,
    pub exact_mean: f64,
    pub mc_mean: f64,
    pub mean_z: f64,
    pub exact_var: f64,
    pub mc_var: f64,
    pub var_z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjugateReport {
    pub draws: usize,
    pub typo: Option<Typo>,
    pub checks: Vec<MomentCheck>,
}

impl ConjugateReport {
    pub fn max_abs_z(&self) -> f64 {
        self.checks
            .iter()
            .flat_map(|c| [c.mean_z.abs(), c.var_z.abs()])
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, threshold: f64) -> bool {
        self.checks.iter().all(|c| c.mean_z.abs() < threshold && c.var_z.abs() < threshold)
    }
}

/// Exact moments of one scalar coordinate.
struct Target {
    coord: String,
    mean: f64,
    var: f64,
}

fn moment_check(step: &str, target: &Target, x: &[f64]) -> MomentCheck {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    let s2 = m2 * n / (n - 1.0);
    let mean_z = (m - target.mean) / (target.var / n).sqrt();
    let var_se = ((m4 - m2 * m2) / n).sqrt();
    MomentCheck {
        step: step.to_string(),
        coord: target.coord.clone(),
        exact_mean: target.mean,
        mc_mean: m,
        mean_z,
        exact_var: target.var,
        mc_var: s2,
        var_z: (s2 - target.var) / var_se,
    }
}

fn inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone().try_inverse().ok_or(Error::NotPositiveDefinite)
}

/// Field covariance σ²(R + νI) over the field sites, inverted densely.
fn field_precision(model: &Model, s: &ChainState) -> Result<DMatrix<f64>> {
    let d = &model.field_distances;
    let m = d.nrows();
    let cov = match model.config.covariance {
        Covariance::Spatial => DMatrix::from_fn(m, m, |i, j| {
            s.sigma2_h * ((-d[(i, j)] / s.phi).exp() + if i == j { model.config.nugget } else { 0.0 })
        }),
        Covariance::Iid => DMatrix::identity(m, m) * s.sigma2_h,
    };
    inverse(&cov)
}

fn field_rows(model: &Model, m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(model.field.len(), m.ncols(), |r, c| m[(model.field[r], c)])
}

fn field_entries(model: &Model, v: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(model.field.len(), |r, _| v[model.field[r]])
}

/// Gaussian regression conditional: precision WᵀQW + I/λ, mean from WᵀQr.
fn gaussian_targets(prefix: &str, w: &DMatrix<f64>, q: &DMatrix<f64>, r: &DVector<f64>, prior_var: f64) -> Result<Vec<Target>> {
    let k = w.ncols();
    let prec = w.transpose() * q * w + DMatrix::identity(k, k) / prior_var;
    let cov = inverse(&prec)?;
    let mean = &cov * (w.transpose() * q * r);
    Ok((0..k)
        .map(|j| Target {
            coord: format!("{prefix}[{j}]"),
            mean: mean[j],
            var: cov[(j, j)],
        })
        .collect())
}

fn h_targets(model: &Model, s: &ChainState, site: usize) -> Result<Target> {
    let sy_inv = inverse(s.sigma_y.matrix())?;
    let a = &s.a;
    let y = model.y.row(site).transpose();
    let like_prec = (a.transpose() * &sy_inv * a)[(0, 0)];
    let like_lin = (a.transpose() * &sy_inv * y)[(0, 0)];
    if Some(site) == model.anchor {
        let pr = model.priors();
        let prec = like_prec + 1.0 / pr.anchor_var;
        return Ok(Target {
            coord: format!("H[{site}]"),
            mean: (like_lin + pr.anchor_mean / pr.anchor_var) / prec,
            var: 1.0 / prec,
        });
    }
    let q = field_precision(model, s)?;
    let mu = field_entries(model, &model.h_level_mean(s)?);
    let h = field_entries(model, &s.h);
    let r = model.field.iter().position(|&i| i == site).expect("field site");
    let mut cross = 0.0;
    for j in 0..h.len() {
        if j != r {
            cross += q[(r, j)] * (h[j] - mu[j]);
        }
    }
    let prec = like_prec + q[(r, r)];
    Ok(Target {
        coord: format!("H[{site}]"),
        mean: (like_lin + q[(r, r)] * mu[r] - cross) / prec,
        var: 1.0 / prec,
    })
}

fn sigma_y_targets(model: &Model, s: &ChainState) -> Result<Vec<Target>> {
    let p = model.p();
    let pr = model.priors();
    let e = &model.y - &s.h * s.a.transpose();
    let scale = DMatrix::identity(p, p) * pr.sigma_y_scale + e.transpose() * &e;
    let nu = pr.sigma_y_dof(p) + model.n() as f64;
    let pf = p as f64;
    let mut out = Vec::new();
    for i in 0..p {
        for j in 0..=i {
            let mean = scale[(i, j)] / (nu - pf - 1.0);
            let var = ((nu - pf + 1.0) * scale[(i, j)].powi(2) + (nu - pf - 1.0) * scale[(i, i)] * scale[(j, j)])
                / ((nu - pf) * (nu - pf - 1.0).powi(2) * (nu - pf - 3.0));
            out.push(Target {
                coord: format!("Sigma_Y[{i},{j}]"),
                mean,
                var,
            });
        }
    }
    Ok(out)
}

fn sigma2_h_target(model: &Model, s: &ChainState) -> Result<Target> {
    let pr = model.priors();
    let mut unit = s.clone();
    unit.sigma2_h = 1.0;
    let rinv = field_precision(model, &unit)?;
    let d = field_entries(model, &s.h) - field_entries(model, &model.h_level_mean(s)?);
    let shape = model.field.len() as f64 / 2.0 + pr.sigma_h_shape;
    let rate = 0.5 * (d.transpose() * rinv * &d)[(0, 0)] + pr.sigma_h_scale;
    Ok(Target {
        coord: "sigma2_H".into(),
        mean: rate / (shape - 1.0),
        var: rate * rate / ((shape - 1.0).powi(2) * (shape - 2.0)),
    })
}

fn beta_targets(model: &Model, s: &ChainState) -> Result<Vec<Target>> {
    let q = field_precision(model, s)?;
    let w = field_rows(model, &model.design);
    let mut r = field_entries(model, &s.h);
    if let Some(sub) = model.subclasses(s) {
        r -= field_entries(model, &(&sub.g * &s.xi));
    }
    gaussian_targets("beta", &w, &q, &r, model.priors().beta_var)
}

fn xi_targets(model: &Model, s: &ChainState) -> Result<Vec<Target>> {
    let q = field_precision(model, s)?;
    let sub = model.subclasses(s).ok_or_else(|| Error::Config("xi needs variant B".into()))?;
    let g = field_rows(model, &sub.g);
    let r = field_entries(model, &s.h) - field_entries(model, &(&model.design * &s.beta));
    gaussian_targets("xi", &g, &q, &r, model.priors().xi_var)
}

fn fixture(variant: Variant, seed: u64) -> Result<(Model, ChainState)> {
    let config = ModelConfig {
        variant,
        ..Default::default()
    };
    let mut truth = TrueParams::recovery(2, 1);
    if variant == Variant::A {
        truth.beta = vec![0.0, 0.5, 0.3];
    }
    let data = generate_synthetic(&SyntheticSpec {
        n: 6,
        p: 2,
        k: 1,
        model: config.clone(),
        truth: TruthSource::Fixed(truth),
        patch: CoordinatePatch::default(),
        seed,
        standardize_y: false,
    })?;
    Ok((Model::new(&data.dataset, &config)?, data.truth))
}

type Extract = fn(&ChainState) -> Vec<f64>;

fn run_step<F>(step: &str, targets: &[Target], draws: usize, mut update: F, extract: Extract) -> Result<Vec<MomentCheck>>
where
    F: FnMut() -> Result<ChainState>,
{
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(draws); targets.len()];
    for _ in 0..draws {
        let s = update()?;
        for (k, v) in extract(&s).into_iter().enumerate() {
            cols[k].push(v);
        }
    }
    Ok(targets.iter().zip(&cols).map(|(t, x)| moment_check(step, t, x)).collect())
}

fn lower_triangle(s: &ChainState) -> Vec<f64> {
    let m = s.sigma_y.matrix();
    let p = m.nrows();
    (0..p).flat_map(|i| (0..=i).map(move |j| m[(i, j)])).collect()
}

/// Runs every conjugate update `draws` times from frozen states of both
/// variants. `typo` injects a documented mutant into the steps that take one.
pub fn conjugate_suite(draws: usize, seed: u64, typo: Option<Typo>) -> Result<ConjugateReport> {
    if draws < 1000 {
        return Err(Error::Config("conjugate checks need at least 1000 draws".into()));
    }
    let mut checks = Vec::new();
    let mut rng = RngStream::new(seed, 0x434f_4e4a);

    let (model, base) = fixture(Variant::A, seed)?;
    let field = FieldCache::new(&model, base.phi)?;
    let site = model.field[0];
    let anchor = model.anchor.expect("anchored fixture");
    for i in [site, anchor] {
        let t = h_targets(&model, &base, i)?;
        let mut s = base.clone();
        let mut out = Vec::with_capacity(draws);
        for _ in 0..draws {
            // the first field site is drawn before any other site moves
            steps::step_h_sites(&model, &mut s, &field, typo, i != anchor, i == anchor, &mut rng)?;
            let hi = s.h[i];
            s.h.copy_from(&base.h);
            out.push(hi);
        }
        checks.push(moment_check("step_h", &t, &out));
    }

    let mut s = base.clone();
    checks.extend(run_step(
        "step_a",
        &{
            let sy_inv = inverse(base.sigma_y.matrix())?;
            let hh: f64 = base.h.iter().map(|v| v * v).sum();
            let prec = &sy_inv * hh + DMatrix::identity(model.p(), model.p()) / model.priors().loading_var;
            let cov = inverse(&prec)?;
            let mean = &cov * (&sy_inv * model.y.transpose() * &base.h);
            (0..model.p())
                .map(|j| Target {
                    coord: format!("a[{j}]"),
                    mean: mean[j],
                    var: cov[(j, j)],
                })
                .collect::<Vec<_>>()
        },
        draws,
        || {
            steps::step_a(&model, &mut s, typo, &mut rng)?;
            Ok(s.clone())
        },
        |s| s.a.iter().copied().collect(),
    )?);

    let mut s = base.clone();
    checks.extend(run_step(
        "step_sigma_y",
        &sigma_y_targets(&model, &base)?,
        draws,
        || {
            steps::step_sigma_y(&model, &mut s, &mut rng)?;
            Ok(s.clone())
        },
        lower_triangle,
    )?);

    let mut s = base.clone();
    checks.extend(run_step(
        "step_sigma2_h",
        &[sigma2_h_target(&model, &base)?],
        draws,
        || {
            steps::step_sigma2_h(&model, &mut s, &field, typo, &mut rng)?;
            Ok(s.clone())
        },
        |s| vec![s.sigma2_h],
    )?);

    let mut s = base.clone();
    checks.extend(run_step(
        "step_beta (A)",
        &beta_targets(&model, &base)?,
        draws,
        || {
            steps::step_beta(&model, &mut s, &field, typo, &mut rng)?;
            Ok(s.clone())
        },
        |s| s.beta.iter().copied().collect(),
    )?);

    let (model, base) = fixture(Variant::B, seed)?;
    let field = FieldCache::new(&model, base.phi)?;
    let mut s = base.clone();
    checks.extend(run_step(
        "step_beta (B)",
        &beta_targets(&model, &base)?,
        draws,
        || {
            steps::step_beta(&model, &mut s, &field, typo, &mut rng)?;
            Ok(s.clone())
        },
        |s| s.beta.iter().copied().collect(),
    )?);

    let mut s = base.clone();
    checks.extend(run_step(
        "step_xi",
        &xi_targets(&model, &base)?,
        draws,
        || {
            steps::step_xi(&model, &mut s, &field, &mut rng)?;
            Ok(s.clone())
        },
        |s| s.xi.iter().copied().collect(),
    )?);

    Ok(ConjugateReport { draws, typo, checks })
}
