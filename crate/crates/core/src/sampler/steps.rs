//! Full-conditional updates, one function per block of the sweep.
//!
//! Conjugate blocks are drawn in precision form: for a normal conditional
//! with precision `V` and linear term `b`, the draw has mean `V⁻¹ b`.
//! `field` is the set of non-anchor countries; `R` below is the field
//! correlation matrix including the nugget, so `Σ_H = σ²_H R`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{inv_gamma_logpdf, propensity_scores, subclass_assignment, tertile_knots, ChainState, GammaUpdate, Model, Variant};
use crate::stochastics::{
    inv_gamma_sample, inv_wishart_sample, lognormal_logpdf, mvn_sample_precision, normal_logpdf, RngStream,
    SpdMatrix,
};

/// Deliberate faults reproducing formulas as they would read with the
/// inverses or joint densities dropped. Only the validation harness sets
/// these; each must make the joint-distribution test fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Typo {
    /// H mean uses `aᵀ Σ_Y y_i` in place of `aᵀ Σ_Y⁻¹ y_i`.
    StepH,
    /// Loading mean drops `Σ_Y⁻¹`: `V⁻¹ Yᵀ H`.
    StepA,
    /// σ²_H update uses `N/2` and `Σ D_i²/2` over all countries.
    StepSigma2H,
    /// β update uses `Σ_H` in place of `Σ_H⁻¹`.
    StepBeta,
    /// φ target is a product of independent marginals of H.
    StepPhi,
}

impl Typo {
    pub const ALL: [Typo; 5] = [Typo::StepH, Typo::StepA, Typo::StepSigma2H, Typo::StepBeta, Typo::StepPhi];

    pub fn name(self) -> &'static str {
        match self {
            Typo::StepH => "step_h",
            Typo::StepA => "step_a",
            Typo::StepSigma2H => "step_sigma2_h",
            Typo::StepBeta => "step_beta",
            Typo::StepPhi => "step_phi",
        }
    }

    pub fn parse(s: &str) -> Option<Typo> {
        Typo::ALL.into_iter().find(|t| t.name() == s)
    }
}

/// Field correlation factor and precision for one value of φ.
#[derive(Clone, Debug)]
pub struct FieldCache {
    pub phi: f64,
    pub corr: SpdMatrix,
    /// `R⁻¹`
    pub corr_precision: DMatrix<f64>,
}

impl FieldCache {
    pub fn new(model: &Model, phi: f64) -> Result<Self> {
        let corr = model.field_correlation(phi)?;
        let corr_precision = corr.precision();
        Ok(Self {
            phi,
            corr,
            corr_precision,
        })
    }

    /// Rebuild if the state's φ moved away from the cached value.
    pub fn sync(&mut self, model: &Model, phi: f64) -> Result<()> {
        if model.is_spatial() && self.phi != phi {
            *self = Self::new(model, phi)?;
        }
        Ok(())
    }
}

/// `Σ_Y⁻¹ a` and `aᵀ Σ_Y⁻¹ a`, shared by every H update in a sweep.
fn loading_terms(state: &ChainState, typo: Option<Typo>) -> (DVector<f64>, f64, DVector<f64>) {
    let w = state.sigma_y.solve(&state.a);
    let quad = state.a.dot(&w);
    let linear_weights = if typo == Some(Typo::StepH) {
        state.sigma_y.matrix() * &state.a
    } else {
        w.clone()
    };
    (w, quad, linear_weights)
}

fn offset_mean(model: &Model, state: &ChainState) -> Result<DVector<f64>> {
    model.h_level_mean(state)
}

/// Single-site Gibbs update of every H in index order.
pub fn step_h(model: &Model, state: &mut ChainState, field: &FieldCache, typo: Option<Typo>, rng: &mut RngStream) -> Result<()> {
    step_h_sites(model, state, field, typo, true, true, rng)
}

fn anchor_draw(model: &Model, quad: f64, like_lin: f64, rng: &mut RngStream) -> f64 {
    let pr = model.priors();
    let prec = quad + 1.0 / pr.anchor_var;
    let lin = like_lin + pr.anchor_mean / pr.anchor_var;
    lin / prec + rng.std_normal() / prec.sqrt()
}

/// Single-site sweep over the field sites and/or the anchor.
pub fn step_h_sites(
    model: &Model,
    state: &mut ChainState,
    field: &FieldCache,
    typo: Option<Typo>,
    update_field: bool,
    update_anchor: bool,
    rng: &mut RngStream,
) -> Result<()> {
    let (_, quad, lw) = loading_terms(state, typo);
    let mu = offset_mean(model, state)?;
    let q = &field.corr_precision;
    let inv_s2 = 1.0 / state.sigma2_h;
    let mut resid: DVector<f64> = DVector::from_iterator(model.field.len(), model.field.iter().map(|&i| state.h[i] - mu[i]));
    let mut pos = 0usize;
    for i in 0..model.n() {
        let like_lin = lw.dot(&model.y.row(i).transpose());
        if Some(i) == model.anchor {
            if update_anchor {
                state.h[i] = anchor_draw(model, quad, like_lin, rng);
            }
            continue;
        }
        let u = pos;
        pos += 1;
        if !update_field {
            continue;
        }
        let quu = q[(u, u)] * inv_s2;
        let cross: f64 = q.row(u).iter().zip(resid.iter()).map(|(a, b)| a * b).sum::<f64>() - q[(u, u)] * resid[u];
        // conditional prior mean μ_u − (1/Q_uu) Σ_{v≠u} Q_uv r_v, with Q = R⁻¹/σ²
        let m = mu[i] - cross / q[(u, u)];
        let prec = quad + quu;
        let lin = like_lin + quu * m;
        let h = lin / prec + rng.std_normal() / prec.sqrt();
        state.h[i] = h;
        resid[u] = h - mu[i];
    }
    Ok(())
}

/// Gibbs update of the single country `i` (field site or anchor).
pub fn step_h_site(model: &Model, state: &mut ChainState, field: &FieldCache, i: usize, rng: &mut RngStream) -> Result<()> {
    let (_, quad, lw) = loading_terms(state, None);
    let like_lin = lw.dot(&model.y.row(i).transpose());
    if Some(i) == model.anchor {
        state.h[i] = anchor_draw(model, quad, like_lin, rng);
        return Ok(());
    }
    let u = model
        .field
        .iter()
        .position(|&j| j == i)
        .ok_or_else(|| Error::Dimension(format!("country index {i} out of range")))?;
    let mu = offset_mean(model, state)?;
    let q = &field.corr_precision;
    let cross: f64 = model
        .field
        .iter()
        .enumerate()
        .filter(|&(v, _)| v != u)
        .map(|(v, &j)| q[(u, v)] * (state.h[j] - mu[j]))
        .sum();
    let m = mu[i] - cross / q[(u, u)];
    let quu = q[(u, u)] / state.sigma2_h;
    let prec = quad + quu;
    state.h[i] = (like_lin + quu * m) / prec + rng.std_normal() / prec.sqrt();
    Ok(())
}

/// Joint draw of the field H from its multivariate conditional, then the
/// anchor. Same stationary law as [`step_h`].
pub fn step_h_block(model: &Model, state: &mut ChainState, field: &FieldCache, typo: Option<Typo>, rng: &mut RngStream) -> Result<()> {
    let (_, quad, lw) = loading_terms(state, typo);
    let mu = offset_mean(model, state)?;
    let m = model.field.len();
    let q = &field.corr_precision / state.sigma2_h;
    let mut prec = q.clone();
    for u in 0..m {
        prec[(u, u)] += quad;
    }
    let mu_f = model.field_vec(&mu);
    let like = DVector::from_iterator(m, model.field.iter().map(|&i| lw.dot(&model.y.row(i).transpose())));
    let lin = like + &q * mu_f;
    let draw = mvn_sample_precision(&lin, &SpdMatrix::new(prec)?, rng)?;
    for (u, &i) in model.field.iter().enumerate() {
        state.h[i] = draw[u];
    }
    if let Some(i) = model.anchor {
        let like_lin = lw.dot(&model.y.row(i).transpose());
        state.h[i] = anchor_draw(model, quad, like_lin, rng);
    }
    Ok(())
}

/// Loadings: precision `(Σ H_i²) Σ_Y⁻¹ + I/loading_var`, linear `Σ_Y⁻¹ Yᵀ H`.
pub fn step_a(model: &Model, state: &mut ChainState, typo: Option<Typo>, rng: &mut RngStream) -> Result<()> {
    let p = model.p();
    let sy_inv = state.sigma_y.precision();
    let hh = state.h.norm_squared();
    let mut prec = &sy_inv * hh;
    for j in 0..p {
        prec[(j, j)] += 1.0 / model.priors().loading_var;
    }
    let yth = model.y.transpose() * &state.h;
    let lin = if typo == Some(Typo::StepA) { yth } else { &sy_inv * yth };
    state.a = mvn_sample_precision(&lin, &SpdMatrix::new(prec)?, rng)?;
    Ok(())
}

/// `Σ_Y ~ IW(ν₀ + N, S₀ + (Y − H aᵀ)ᵀ (Y − H aᵀ))`.
pub fn step_sigma_y(model: &Model, state: &mut ChainState, rng: &mut RngStream) -> Result<()> {
    let p = model.p();
    let pr = model.priors();
    let resid = &model.y - &state.h * state.a.transpose();
    let mut scale = resid.transpose() * &resid;
    for j in 0..p {
        scale[(j, j)] += pr.sigma_y_scale;
    }
    let dof = pr.sigma_y_dof(p) + model.n() as f64;
    state.sigma_y = inv_wishart_sample(dof, &SpdMatrix::new(scale)?, rng)?;
    Ok(())
}

/// `σ²_H ~ Inv-Gamma(M/2 + α, Dᵀ R⁻¹ D / 2 + β)` with `D = H_F − μ_F`.
pub fn step_sigma2_h(model: &Model, state: &mut ChainState, field: &FieldCache, typo: Option<Typo>, rng: &mut RngStream) -> Result<()> {
    let pr = model.priors();
    let mu = offset_mean(model, state)?;
    let (count, quad) = if typo == Some(Typo::StepSigma2H) {
        (model.n(), (&state.h - &mu).norm_squared())
    } else {
        let d = model.field_vec(&state.h) - model.field_vec(&mu);
        (model.field.len(), field.corr.inv_quad_form(&d))
    };
    let shape = count as f64 / 2.0 + pr.sigma_h_shape;
    let rate = quad / 2.0 + pr.sigma_h_scale;
    state.sigma2_h = inv_gamma_sample(shape, rate, rng)?;
    Ok(())
}

fn subclass_offset(model: &Model, state: &ChainState) -> DVector<f64> {
    match model.subclasses(state) {
        Some(sub) => sub.g * &state.xi,
        None => DVector::zeros(model.n()),
    }
}

/// Generalized least squares draw for coefficients `c` of `target ~ N(W c, σ² R)`
/// under an iid normal prior.
fn gls_draw(
    design: &DMatrix<f64>,
    target: &DVector<f64>,
    state: &ChainState,
    field: &FieldCache,
    prior_var: f64,
    use_covariance: bool,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    let weighted = if use_covariance {
        // the Σ_H-in-place-of-Σ_H⁻¹ fault
        field.corr.matrix() * design * state.sigma2_h
    } else {
        field.corr.solve_matrix(design) / state.sigma2_h
    };
    let mut prec = design.transpose() * &weighted;
    for j in 0..prec.nrows() {
        prec[(j, j)] += 1.0 / prior_var;
    }
    let lin = weighted.transpose() * target;
    mvn_sample_precision(&lin, &SpdMatrix::new(prec)?, rng)
}

/// β with precision `Wᵀ Σ_H⁻¹ W + I/beta_var`, linear `Wᵀ Σ_H⁻¹ (H − g ξ)`.
pub fn step_beta(model: &Model, state: &mut ChainState, field: &FieldCache, typo: Option<Typo>, rng: &mut RngStream) -> Result<()> {
    let offset = subclass_offset(model, state);
    let target = model.field_vec(&state.h) - model.field_vec(&offset);
    let w = model.field_rows(&model.design);
    state.beta = gls_draw(&w, &target, state, field, model.priors().beta_var, typo == Some(Typo::StepBeta), rng)?;
    Ok(())
}

/// ξ with precision `gᵀ Σ_H⁻¹ g + I/xi_var`, linear `gᵀ Σ_H⁻¹ (H − W β)`.
pub fn step_xi(model: &Model, state: &mut ChainState, field: &FieldCache, rng: &mut RngStream) -> Result<()> {
    let sub = model
        .subclasses(state)
        .ok_or_else(|| Error::Config("xi update requires variant B".into()))?;
    let g = model.field_rows(&sub.g);
    if g.column(0).iter().all(|&v| v == 0.0) || g.column(1).iter().all(|&v| v == 0.0) {
        log::debug!("empty propensity subclass; its xi is drawn from the prior");
    }
    let wb = &model.design * &state.beta;
    let target = model.field_vec(&state.h) - model.field_vec(&wb);
    state.xi = gls_draw(&g, &target, state, field, model.priors().xi_var, false, rng)?;
    Ok(())
}

/// Log density of the field given mean and correlation factor.
fn field_loglik(model: &Model, state: &ChainState, mu: &DVector<f64>, corr: &SpdMatrix) -> f64 {
    let d = model.field_vec(&state.h) - model.field_vec(mu);
    let m = d.len() as f64;
    let s2 = state.sigma2_h;
    -0.5 * (m * (2.0 * std::f64::consts::PI).ln() + m * s2.ln() + corr.log_det() + corr.inv_quad_form(&d) / s2)
}

/// Random-walk Metropolis on `log φ`. Returns the acceptance probability and
/// whether the proposal was taken.
pub fn step_phi(
    model: &Model,
    state: &mut ChainState,
    field: &mut FieldCache,
    proposal_sd: f64,
    typo: Option<Typo>,
    rng: &mut RngStream,
) -> Result<(f64, bool)> {
    let pr = model.priors();
    let proposed = state.phi * (proposal_sd * rng.std_normal()).exp();
    let mu = offset_mean(model, state)?;
    let prior = |phi: f64| lognormal_logpdf(phi, pr.phi_log_mu, pr.phi_log_sigma);
    let (cur_ll, new_ll, new_cache) = if typo == Some(Typo::StepPhi) {
        // product of marginals N(μ_i, σ²_H): no φ dependence
        let ll: f64 = model
            .field
            .iter()
            .map(|&i| normal_logpdf(state.h[i], mu[i], state.sigma2_h))
            .sum();
        (ll, ll, None)
    } else {
        match FieldCache::new(model, proposed) {
            Ok(cache) => {
                let cur = field_loglik(model, state, &mu, &field.corr);
                let new = field_loglik(model, state, &mu, &cache.corr);
                (cur, new, Some(cache))
            }
            Err(Error::NotPositiveDefinite) => (0.0, f64::NEG_INFINITY, None),
            Err(e) => return Err(e),
        }
    };
    let log_ratio = new_ll + prior(proposed)? - cur_ll - prior(state.phi)? + proposed.ln() - state.phi.ln();
    let accept_prob = if log_ratio.is_nan() { 0.0 } else { log_ratio.min(0.0).exp() };
    let u = rng.uniform();
    let accepted = u < accept_prob;
    if accepted {
        state.phi = proposed;
        match new_cache {
            Some(c) => *field = c,
            None => field.sync(model, proposed)?,
        }
    }
    Ok((accept_prob, accepted))
}

/// Log target of γ: logistic likelihood of T plus prior, and under
/// [`GammaUpdate::Joint`] the H-level density through the subclasses.
pub fn gamma_log_target(model: &Model, state: &ChainState, gamma: &DVector<f64>, field: &FieldCache) -> Result<f64> {
    let pr = model.priors();
    let mut lp = model.treatment_loglik(gamma) + gamma.iter().map(|&g| normal_logpdf(g, 0.0, pr.gamma_var)).sum::<f64>();
    if model.config.gamma_update == GammaUpdate::Joint {
        let knots = tertile_knots(propensity_scores(&model.x, gamma).as_slice());
        let sub = subclass_assignment(&model.x, gamma, knots);
        let mu = &model.design * &state.beta + sub.g * &state.xi;
        lp += field_loglik(model, state, &mu, &field.corr);
    }
    Ok(lp)
}

/// Random-walk Metropolis on γ. On acceptance the knots are recomputed.
pub fn step_gamma(
    model: &Model,
    state: &mut ChainState,
    field: &FieldCache,
    proposal_sd: f64,
    rng: &mut RngStream,
) -> Result<(f64, bool)> {
    let k = model.k();
    let proposed = &state.gamma + rng.std_normal_vec(k) * proposal_sd;
    let log_ratio = gamma_log_target(model, state, &proposed, field)? - gamma_log_target(model, state, &state.gamma, field)?;
    let accept_prob = if log_ratio.is_nan() { 0.0 } else { log_ratio.min(0.0).exp() };
    let accepted = rng.uniform() < accept_prob;
    if accepted {
        state.gamma = proposed;
        state.refresh_knots(model);
    }
    Ok((accept_prob, accepted))
}

/// Log target ratio of the rescaling `H → cH, β → cβ, ξ → cξ, σ²_H → c²σ²_H,
/// a → a/c`, Jacobian included. The Y-level density and the field quadratic
/// form are invariant under it.
pub fn scale_log_ratio(model: &Model, state: &ChainState, log_c: f64) -> f64 {
    let pr = model.priors();
    let c2 = (2.0 * log_c).exp();
    let xi_dim = if model.variant() == Variant::B { state.xi.len() } else { 0 };
    let dim = model.n() + state.beta.len() + xi_dim + 2;
    let mut lr = (dim as f64 - model.p() as f64) * log_c - model.field.len() as f64 * log_c;
    if let Some(i) = model.anchor {
        let h = state.h[i];
        lr += normal_logpdf(h * log_c.exp(), pr.anchor_mean, pr.anchor_var) - normal_logpdf(h, pr.anchor_mean, pr.anchor_var);
    }
    lr -= state.a.norm_squared() / (2.0 * pr.loading_var) * (1.0 / c2 - 1.0);
    lr -= state.beta.norm_squared() / (2.0 * pr.beta_var) * (c2 - 1.0);
    if xi_dim > 0 {
        lr -= state.xi.norm_squared() / (2.0 * pr.xi_var) * (c2 - 1.0);
    }
    lr + inv_gamma_logpdf(c2 * state.sigma2_h, pr.sigma_h_shape, pr.sigma_h_scale)
        - inv_gamma_logpdf(state.sigma2_h, pr.sigma_h_shape, pr.sigma_h_scale)
}

/// Random-walk Metropolis on `log c` for the rescaling in [`scale_log_ratio`].
/// The (a, H) scale is pinned only by the anchor, and the conjugate steps
/// move along it in tiny increments; this step crosses it directly.
pub fn step_scale(model: &Model, state: &mut ChainState, proposal_sd: f64, rng: &mut RngStream) -> Result<(f64, bool)> {
    let log_c = proposal_sd * rng.std_normal();
    let log_ratio = scale_log_ratio(model, state, log_c);
    let accept_prob = if log_ratio.is_nan() { 0.0 } else { log_ratio.min(0.0).exp() };
    let accepted = rng.uniform() < accept_prob;
    if accepted {
        let c = log_c.exp();
        state.h *= c;
        state.a /= c;
        state.beta *= c;
        state.xi *= c;
        state.sigma2_h *= c * c;
    }
    Ok((accept_prob, accepted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Country, Dataset};
    use crate::model::{Covariance, ModelConfig, Variant};

    fn dataset(n: usize, p: usize, k: usize, seed: u64) -> Dataset {
        let mut rng = RngStream::new(seed, 77);
        let coords: Vec<(f64, f64)> = (0..n).map(|_| (rng.uniform() * 30.0, rng.uniform() * 30.0)).collect();
        Dataset {
            countries: (0..n)
                .map(|i| Country {
                    id: format!("C{i}"),
                    name: format!("C{i}"),
                    income_group: String::new(),
                    capital_lat_deg: coords[i].0,
                    capital_lon_deg: coords[i].1,
                })
                .collect(),
            year: 0,
            y: DMatrix::from_fn(n, p, |_, _| rng.std_normal()),
            x: DMatrix::from_fn(n, k, |_, _| rng.std_normal()),
            t: (0..n).map(|i| ((i * 7) % 3 == 0) as u8).collect(),
            d: crate::ingest::great_circle_matrix(&coords).unwrap(),
            metric_names: (0..p).map(|j| format!("m{j}")).collect(),
            covariate_names: (0..k).map(|j| format!("x{j}")).collect(),
            anchor_index: 0,
        }
    }

    fn state(model: &Model) -> ChainState {
        let mut rng = RngStream::new(4, 4);
        let mut s = ChainState::initial(model, &mut rng);
        s.a = rng.std_normal_vec(model.p());
        s.beta = rng.std_normal_vec(model.beta_dim()) * 0.5;
        s.sigma2_h = 0.3;
        s.phi = 1.2;
        if model.variant() == Variant::B {
            s.gamma = rng.std_normal_vec(model.k());
            s.xi = DVector::from_vec(vec![0.3, -0.2]);
            s.refresh_knots(model);
        }
        s
    }

    /// Per-coordinate sample mean and variance of `draws` repeated calls.
    fn moments(n: usize, mut f: impl FnMut() -> DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let first = f();
        let mut s = first.clone();
        let mut ss = first.component_mul(&first);
        for _ in 1..n {
            let v = f();
            ss += v.component_mul(&v);
            s += v;
        }
        let mean = &s / n as f64;
        let var = &ss / n as f64 - mean.component_mul(&mean);
        (mean, var)
    }

    #[test]
    fn zero_loading_gives_prior_conditional() {
        let ds = dataset(5, 2, 1, 1);
        let model = Model::new(&ds, &ModelConfig::default()).unwrap();
        let mut s = state(&model);
        s.a = DVector::zeros(2);
        let field = FieldCache::new(&model, s.phi).unwrap();
        // country 1 is the first field site visited (the anchor does not enter
        // its conditional): N(m, D) from the precision identities
        let mu = model.h_level_mean(&s).unwrap();
        let q = &field.corr_precision / s.sigma2_h;
        let r = model.field_vec(&s.h) - model.field_vec(&mu);
        let cross: f64 = (0..4).filter(|&v| v != 0).map(|v| q[(0, v)] * r[v]).sum();
        let m = mu[1] - cross / q[(0, 0)];
        let d = 1.0 / q[(0, 0)];
        // dense-inverse oracle for the conditional: Σ[i,i] − Σ[i,−i] Σ[−i,−i]⁻¹ Σ[−i,i]
        let sigma = field.corr.matrix() * s.sigma2_h;
        let others = [1usize, 2, 3];
        let s_io = DVector::from_iterator(3, others.iter().map(|&v| sigma[(0, v)]));
        let s_oo = DMatrix::from_fn(3, 3, |a, b| sigma[(others[a], others[b])]).try_inverse().unwrap();
        let r_o = DVector::from_iterator(3, others.iter().map(|&v| r[v]));
        let d_dense = sigma[(0, 0)] - (s_io.transpose() * &s_oo * &s_io)[(0, 0)];
        let m_dense = mu[1] + (s_io.transpose() * &s_oo * r_o)[(0, 0)];
        assert!((d - d_dense).abs() < 1e-10 && (m - m_dense).abs() < 1e-10, "{d} {d_dense} {m} {m_dense}");

        let mut rng = RngStream::new(10, 0);
        let n = 100_000;
        let (mean, var) = moments(n, || {
            let mut t = s.clone();
            step_h(&model, &mut t, &field, None, &mut rng).unwrap();
            DVector::from_vec(vec![t.h[1]])
        });
        assert!((mean[0] - m).abs() < 3.0 * (d / n as f64).sqrt());
        assert!((var[0] - d).abs() < 3.0 * d * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn iid_conditional_reduces_to_regression_mean() {
        let ds = dataset(4, 1, 1, 2);
        let cfg = ModelConfig {
            covariance: Covariance::Iid,
            ..Default::default()
        };
        let model = Model::new(&ds, &cfg).unwrap();
        let mut s = state(&model);
        let field = FieldCache::new(&model, s.phi).unwrap();
        let mu = model.h_level_mean(&s).unwrap();
        // scalar normal posterior: prec = a²/σ_y + 1/σ²_H, mean = (a y/σ_y + μ/σ²_H)/prec
        let sy = s.sigma_y.matrix()[(0, 0)];
        let a = s.a[0];
        let prec = a * a / sy + 1.0 / s.sigma2_h;
        let mean = (a * ds.y[(1, 0)] / sy + mu[1] / s.sigma2_h) / prec;
        let mut rng = RngStream::new(11, 0);
        let n = 100_000;
        let (m, v) = moments(n, || {
            step_h(&model, &mut s, &field, None, &mut rng).unwrap();
            DVector::from_vec(vec![s.h[1]])
        });
        assert!((m[0] - mean).abs() < 3.0 * (1.0 / prec / n as f64).sqrt());
        assert!(((v[0] - 1.0 / prec) / (1.0 / prec)).abs() < 0.02);
    }

    #[test]
    fn block_and_single_site_agree_in_distribution() {
        let ds = dataset(6, 2, 1, 3);
        let model = Model::new(&ds, &ModelConfig::default()).unwrap();
        let s0 = state(&model);
        let field = FieldCache::new(&model, s0.phi).unwrap();
        let n = 60_000;
        let mut r1 = RngStream::new(1, 0);
        let mut s1 = s0.clone();
        let (m1, v1) = moments(n, || {
            step_h(&model, &mut s1, &field, None, &mut r1).unwrap();
            s1.h.clone()
        });
        let mut r2 = RngStream::new(2, 0);
        let mut s2 = s0.clone();
        let (m2, v2) = moments(n, || {
            step_h_block(&model, &mut s2, &field, None, &mut r2).unwrap();
            s2.h.clone()
        });
        for i in 0..6 {
            // single-site draws are autocorrelated; allow a loose bound
            assert!((m1[i] - m2[i]).abs() < 10.0 * (v2[i] / n as f64).sqrt(), "{i}: {} vs {}", m1[i], m2[i]);
            assert!(((v1[i] - v2[i]) / v2[i]).abs() < 0.05);
        }
    }

    #[test]
    fn loadings_with_zero_h_follow_prior() {
        let ds = dataset(5, 3, 1, 4);
        let model = Model::new(&ds, &ModelConfig::default()).unwrap();
        let mut s = state(&model);
        s.h = DVector::zeros(5);
        let mut rng = RngStream::new(12, 0);
        let n = 50_000;
        let (m, v) = moments(n, || {
            step_a(&model, &mut s, None, &mut rng).unwrap();
            s.a.clone()
        });
        for j in 0..3 {
            assert!(m[j].abs() < 4.0 * (100.0 / n as f64).sqrt());
            assert!(((v[j] - 100.0) / 100.0).abs() < 0.03);
        }
    }

    #[test]
    fn loadings_flat_prior_limit_is_least_squares() {
        let ds = dataset(8, 2, 1, 5);
        let mut cfg = ModelConfig::default();
        cfg.priors.loading_var = 1e8;
        let model = Model::new(&ds, &cfg).unwrap();
        let mut s = state(&model);
        let mut rng = RngStream::new(13, 0);
        let hh = s.h.norm_squared();
        let ols = ds.y.transpose() * &s.h / hh;
        let n = 20_000;
        let (m, _) = moments(n, || {
            step_a(&model, &mut s, None, &mut rng).unwrap();
            s.a.clone()
        });
        for j in 0..2 {
            assert!((m[j] - ols[j]).abs() < 1e-2, "{} vs {}", m[j], ols[j]);
        }
        // exact mean from the precision form matches OLS to 1e-3
        let sy_inv = s.sigma_y.precision();
        let mut prec = &sy_inv * hh;
        for j in 0..2 {
            prec[(j, j)] += 1e-8;
        }
        let exact = prec.try_inverse().unwrap() * (&sy_inv * ds.y.transpose() * &s.h);
        assert!((exact - ols).amax() < 1e-3);
    }

    #[test]
    fn sigma_y_zero_residual_is_prior_plus_count() {
        let ds = dataset(6, 1, 1, 6);
        let model = Model::new(&ds, &ModelConfig::default()).unwrap();
        let mut s = state(&model);
        // residual Y − H a = 0 by construction
        let mut m2 = model.clone();
        m2.y = &s.h * s.a.transpose();
        let mut rng = RngStream::new(14, 0);
        let n = 100_000;
        // P = 1: IW(ν₀ + N, S₀) = Inv-Gamma((3 + 6)/2, 1/2), mean (1/2)/(9/2 − 1)
        let (m, _) = moments(n, || {
            step_sigma_y(&m2, &mut s, &mut rng).unwrap();
            DVector::from_vec(vec![s.sigma_y.matrix()[(0, 0)]])
        });
        let expected = 1.0 / (9.0 - 2.0);
        assert!(((m[0] - expected) / expected).abs() < 0.03);
    }

    #[test]
    fn sigma2_h_identity_rate_and_zero_residual() {
        let ds = dataset(5, 1, 1, 7);
        let cfg = ModelConfig {
            covariance: Covariance::Iid,
            ..Default::default()
        };
        let model = Model::new(&ds, &cfg).unwrap();
        let mut s = state(&model);
        let field = FieldCache::new(&model, s.phi).unwrap();
        let mu = model.h_level_mean(&s).unwrap();
        let rate: f64 = model.field.iter().map(|&i| (s.h[i] - mu[i]).powi(2)).sum::<f64>() / 2.0 + 0.1;
        let shape = 4.0 / 2.0 + 1.0;
        let mut rng = RngStream::new(15, 0);
        // shape 3: mean rate/2, finite variance rate²/4
        let n = 100_000;
        let (m, _) = moments(n, || {
            step_sigma2_h(&model, &mut s, &field, None, &mut rng).unwrap();
            DVector::from_vec(vec![s.sigma2_h])
        });
        assert!(((m[0] - rate / (shape - 1.0)) / (rate / (shape - 1.0))).abs() < 0.03);

        // D ≡ 0: rate collapses to the prior scale
        for &i in &model.field {
            s.h[i] = mu[i];
        }
        let (m, _) = moments(n, || {
            let mut t = s.clone();
            step_sigma2_h(&model, &mut t, &field, None, &mut rng).unwrap();
            DVector::from_vec(vec![t.sigma2_h])
        });
        assert!(((m[0] - 0.1 / 2.0) / 0.05).abs() < 0.03);
    }

    #[test]
    fn beta_flat_prior_iid_is_ols() {
        let ds = dataset(10, 1, 2, 8);
        let mut cfg = ModelConfig {
            covariance: Covariance::Iid,
            ..Default::default()
        };
        cfg.priors.beta_var = 1e8;
        let model = Model::new(&ds, &cfg).unwrap();
        let mut s = state(&model);
        let field = FieldCache::new(&model, s.phi).unwrap();
        let w = model.field_rows(&model.design);
        let h = model.field_vec(&s.h);
        let ols = (w.transpose() * &w).try_inverse().unwrap() * w.transpose() * h;
        let mut rng = RngStream::new(16, 0);
        let n = 40_000;
        let (m, v) = moments(n, || {
            step_beta(&model, &mut s, &field, None, &mut rng).unwrap();
            s.beta.clone()
        });
        for j in 0..ols.len() {
            assert!((m[j] - ols[j]).abs() < 4.0 * (v[j] / n as f64).sqrt() + 1e-3);
        }
    }

    #[test]
    fn beta_zero_target_centers_at_zero() {
        let ds = dataset(6, 1, 1, 9);
        let model = Model::new(&ds, &ModelConfig::default()).unwrap();
        let mut s = state(&model);
        s.h = DVector::zeros(6);
        let field = FieldCache::new(&model, s.phi).unwrap();
        let mut rng = RngStream::new(17, 0);
        let n = 40_000;
        let (m, v) = moments(n, || {
            step_beta(&model, &mut s, &field, None, &mut rng).unwrap();
            s.beta.clone()
        });
        for j in 0..m.len() {
            assert!(m[j].abs() < 4.0 * (v[j] / n as f64).sqrt());
        }
    }

    #[test]
    fn variant_b_beta_with_zero_xi_equals_variant_a_on_same_design() {
        let ds = dataset(7, 1, 2, 10);
        let mb = Model::new(&ds, &ModelConfig { variant: Variant::B, ..Default::default() }).unwrap();
        let mut sb = state(&mb);
        sb.xi = DVector::zeros(2);
        let mut ds_a = ds.clone();
        ds_a.x = DMatrix::zeros(7, 0);
        ds_a.covariate_names.clear();
        let ma = Model::new(&ds_a, &ModelConfig::default()).unwrap();
        let mut sa = sb.clone();
        sa.gamma = DVector::zeros(0);
        sa.xi = DVector::zeros(0);
        sa.knots = None;
        let fa = FieldCache::new(&ma, sa.phi).unwrap();
        let fb = FieldCache::new(&mb, sb.phi).unwrap();
        step_beta(&ma, &mut sa, &fa, None, &mut RngStream::new(3, 3)).unwrap();
        step_beta(&mb, &mut sb, &fb, None, &mut RngStream::new(3, 3)).unwrap();
        assert!((sa.beta - sb.beta).amax() < 1e-12);
    }

    #[test]
    fn xi_degenerate_knots_draw_from_prior() {
        let ds = dataset(6, 1, 1, 11);
        let model = Model::new(&ds, &ModelConfig { variant: Variant::B, ..Default::default() }).unwrap();
        let mut s = state(&model);
        // knots above every score: all rows of g are [0, 0]
        s.knots = Some((2.0, 2.0));
        let field = FieldCache::new(&model, s.phi).unwrap();
        let mut rng = RngStream::new(18, 0);
        let n = 50_000;
        let (m, v) = moments(n, || {
            step_xi(&model, &mut s, &field, &mut rng).unwrap();
            s.xi.clone()
        });
        for j in 0..2 {
            assert!(m[j].abs() < 4.0 * (100.0 / n as f64).sqrt());
            assert!(((v[j] - 100.0) / 100.0).abs() < 0.03);
        }
    }

    #[test]
    fn xi_flat_prior_iid_is_group_means() {
        let ds = dataset(12, 1, 1, 12);
        let mut cfg = ModelConfig {
            variant: Variant::B,
            covariance: Covariance::Iid,
            ..Default::default()
        };
        cfg.priors.xi_var = 1e8;
        let model = Model::new(&ds, &cfg).unwrap();
        let mut s = state(&model);
        s.beta = DVector::zeros(2);
        let field = FieldCache::new(&model, s.phi).unwrap();
        let sub = model.subclasses(&s).unwrap();
        let mut sums = [0.0; 2];
        let mut counts = [0.0; 2];
        for &i in &model.field {
            for c in 0..2 {
                if sub.g[(i, c)] == 1.0 {
                    sums[c] += s.h[i];
                    counts[c] += 1.0;
                }
            }
        }
        assert!(counts.iter().all(|&c| c > 0.0));
        // with β = 0 the lowest tertile has mean 0 and does not inform ξ
        let mut rng = RngStream::new(19, 0);
        let n = 40_000;
        let (m, v) = moments(n, || {
            step_xi(&model, &mut s, &field, &mut rng).unwrap();
            s.xi.clone()
        });
        for c in 0..2 {
            let expected = sums[c] / counts[c];
            assert!((m[c] - expected).abs() < 4.0 * (v[c] / n as f64).sqrt() + 1e-3, "{c}");
        }
    }

    #[test]
    fn phi_equal_kernels_accept_on_prior_and_jacobian() {
        // two field countries at identical positions: R(φ) has the same
        // off-diagonal 1 for every φ, so the field likelihood cancels.
        let mut ds = dataset(3, 1, 1, 13);
        ds.d = DMatrix::zeros(3, 3);
        let mut cfg = ModelConfig::default();
        cfg.nugget = 1e-3;
        let model = Model::new(&ds, &cfg).unwrap();
        let mut s = state(&model);
        let mut field = FieldCache::new(&model, s.phi).unwrap();
        let mut rng = RngStream::new(20, 0);
        let mut shadow = rng.clone();
        let phi0 = s.phi;
        let (prob, _) = step_phi(&model, &mut s, &mut field, 0.7, None, &mut rng).unwrap();
        let proposed = phi0 * (0.7 * shadow.std_normal()).exp();
        let pr = model.priors();
        let ratio = lognormal_logpdf(proposed, pr.phi_log_mu, pr.phi_log_sigma).unwrap()
            - lognormal_logpdf(phi0, pr.phi_log_mu, pr.phi_log_sigma).unwrap()
            + proposed.ln()
            - phi0.ln();
        assert!((prob - ratio.min(0.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn gamma_cut_ignores_outcome() {
        let ds = dataset(10, 2, 2, 14);
        let model = Model::new(&ds, &ModelConfig { variant: Variant::B, ..Default::default() }).unwrap();
        let mut m2 = model.clone();
        m2.y *= -5.0;
        let mut s1 = state(&model);
        let mut s2 = s1.clone();
        s2.h *= 3.0;
        let f = FieldCache::new(&model, s1.phi).unwrap();
        let mut r1 = RngStream::new(21, 0);
        let mut r2 = RngStream::new(21, 0);
        for _ in 0..200 {
            step_gamma(&model, &mut s1, &f, 0.3, &mut r1).unwrap();
            step_gamma(&m2, &mut s2, &f, 0.3, &mut r2).unwrap();
            assert_eq!(s1.gamma, s2.gamma);
            assert_eq!(s1.knots, s2.knots);
        }
    }

    #[test]
    fn typo_names_roundtrip() {
        for t in Typo::ALL {
            assert_eq!(Typo::parse(t.name()), Some(t));
        }
        assert_eq!(Typo::parse("nope"), None);
    }

    #[test]
    fn scale_ratio_matches_log_joint_difference() {
        let ds = dataset(7, 3, 2, 5);
        for variant in [Variant::A, Variant::B] {
            for anchored in [true, false] {
                let cfg = ModelConfig {
                    variant,
                    anchored,
                    ..Default::default()
                };
                let model = Model::new(&ds, &cfg).unwrap();
                let s = state(&model);
                for log_c in [-0.4, 0.03, 0.7] {
                    let c = f64::exp(log_c);
                    let mut t = s.clone();
                    t.h *= c;
                    t.a /= c;
                    t.beta *= c;
                    t.xi *= c;
                    t.sigma2_h *= c * c;
                    let dim = model.n() + s.beta.len() + if variant == Variant::B { 2 } else { 0 } + 2;
                    let jacobian = (dim as f64 - model.p() as f64) * log_c;
                    let expected = model.log_joint(&t).unwrap().total() - model.log_joint(&s).unwrap().total() + jacobian;
                    let got = scale_log_ratio(&model, &s, log_c);
                    assert!((got - expected).abs() < 1e-9, "{variant:?} {anchored} {log_c}: {got} vs {expected}");
                }
            }
        }
    }
}
