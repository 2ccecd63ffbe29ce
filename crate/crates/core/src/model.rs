//! Model definitions for the spatial latent health factor model (variant A)
//! and its propensity-score extension (variant B).
//!
//! ```text
//! y_i | a, H_i, Σ_Y   ~ N(a H_i, Σ_Y)                       every country
//! H_F | ...           ~ N(μ_F, σ²_H (R(φ) + nugget·I))     non-anchor field F
//! H_anc               ~ N(anchor_mean, anchor_var)
//! R_nm = exp(-d_nm / φ)
//! A: μ = [1, T, X] β
//! B: μ = β₀ + T β₁ + g(z(X, γ))ᵀ ξ,   logit P(T_i = 1) = X_i γ
//! ```
//!
//! `g` places each country into one of three propensity tertiles; the two
//! indicator columns mark the middle and upper tertiles.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::stochastics::{expit, log1p_exp, lognormal_logpdf, mvn_logpdf, normal_logpdf, RngStream, SpdMatrix};

/// Propensity scores are clamped to `[PROPENSITY_CLAMP, 1 - PROPENSITY_CLAMP]`.
pub const PROPENSITY_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Spatial factor model with treatment entering as a plain covariate.
    #[default]
    A,
    /// Propensity-score subclassification model.
    B,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariance {
    /// `Σ_H = σ²_H (R(φ) + nugget·I)`
    #[default]
    Spatial,
    /// `Σ_H = σ²_H I`; the base model used for pilots and residual maps.
    Iid,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceUnit {
    #[default]
    Megameters,
    Kilometers,
}

impl DistanceUnit {
    fn per_megameter(self) -> f64 {
        match self {
            DistanceUnit::Megameters => 1.0,
            DistanceUnit::Kilometers => 1000.0,
        }
    }
}

/// How the propensity coefficients are updated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaUpdate {
    /// Target `p(γ | T, X)` only; the outcome model never informs γ.
    #[default]
    Cut,
    /// Target the full conditional, including the H-level term through `g`.
    /// Used by the joint-distribution test, where the sampler must leave
    /// the full joint invariant.
    Joint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub loading_var: f64,
    pub beta_var: f64,
    pub xi_var: f64,
    pub gamma_var: f64,
    /// Defaults to `P + 2`.
    pub sigma_y_dof: Option<f64>,
    /// The inverse-Wishart scale is `sigma_y_scale · I`.
    pub sigma_y_scale: f64,
    pub sigma_h_shape: f64,
    pub sigma_h_scale: f64,
    pub phi_log_mu: f64,
    pub phi_log_sigma: f64,
    pub anchor_mean: f64,
    /// Variance (not sd) of the anchor prior.
    pub anchor_var: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            loading_var: 100.0,
            beta_var: 100.0,
            xi_var: 100.0,
            gamma_var: 100.0,
            sigma_y_dof: None,
            sigma_y_scale: 1.0,
            sigma_h_shape: 1.0,
            sigma_h_scale: 0.1,
            phi_log_mu: 0.4,
            phi_log_sigma: 2.0,
            anchor_mean: -2.0,
            anchor_var: 0.1,
        }
    }
}

impl PriorConfig {
    pub fn sigma_y_dof(&self, p: usize) -> f64 {
        self.sigma_y_dof.unwrap_or(p as f64 + 2.0)
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let positive = [
            ("loading_var", self.loading_var),
            ("beta_var", self.beta_var),
            ("xi_var", self.xi_var),
            ("gamma_var", self.gamma_var),
            ("sigma_y_scale", self.sigma_y_scale),
            ("sigma_h_shape", self.sigma_h_shape),
            ("sigma_h_scale", self.sigma_h_scale),
            ("phi_log_sigma", self.phi_log_sigma),
            ("anchor_var", self.anchor_var),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("prior {name} must be positive, got {v}")));
            }
        }
        let dof = self.sigma_y_dof(p);
        if !(dof > p as f64 - 1.0) {
            return Err(Error::Config(format!("sigma_y_dof {dof} must exceed P - 1 = {}", p as f64 - 1.0)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub covariance: Covariance,
    pub priors: PriorConfig,
    /// Overrides the dataset's anchor when set.
    pub anchor_id: Option<String>,
    /// When false, every country joins the H-level field and no anchor prior
    /// is applied (the unidentified pilot fit).
    pub anchored: bool,
    /// Added to the diagonal of the correlation matrix.
    pub nugget: f64,
    pub distance_unit: DistanceUnit,
    pub gamma_update: GammaUpdate,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::A,
            covariance: Covariance::Spatial,
            priors: PriorConfig::default(),
            anchor_id: None,
            anchored: true,
            nugget: 1e-8,
            distance_unit: DistanceUnit::Megameters,
            gamma_update: GammaUpdate::Cut,
        }
    }
}

/// Full parameter snapshot of one chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    #[serde(with = "vector_serde")]
    pub h: DVector<f64>,
    #[serde(with = "vector_serde")]
    pub a: DVector<f64>,
    pub sigma_y: SpdMatrix,
    #[serde(with = "vector_serde")]
    pub beta: DVector<f64>,
    pub sigma2_h: f64,
    pub phi: f64,
    /// Empty for variant A.
    #[serde(with = "vector_serde")]
    pub gamma: DVector<f64>,
    /// Empty for variant A.
    #[serde(with = "vector_serde")]
    pub xi: DVector<f64>,
    /// Tertile knots `(q₁, q₂)`; variant B only.
    pub knots: Option<(f64, f64)>,
}

impl ChainState {
    /// Starting point: H and a from the leading principal component of Y
    /// (oriented by the anchor, H jittered by N(0, 0.25)), Σ_Y = I, β = 0,
    /// σ²_H = 0.1, φ = exp(phi_log_mu), γ at its logistic posterior mode,
    /// ξ = 0.
    pub fn initial(model: &Model, rng: &mut RngStream) -> Self {
        let n = model.n();
        let p = model.p();
        let (mut h, a) = principal_start(&model.y, model.anchor.map(|i| (i, model.config.priors.anchor_mean)));
        h += rng.std_normal_vec(n) * 0.5;
        let (gamma, xi) = match model.config.variant {
            Variant::A => (DVector::zeros(0), DVector::zeros(0)),
            Variant::B => (
                logistic_map(&model.x, &model.t, model.config.priors.gamma_var),
                DVector::zeros(2),
            ),
        };
        let mut state = Self {
            h,
            a,
            sigma_y: SpdMatrix::identity(p),
            beta: DVector::zeros(model.beta_dim()),
            sigma2_h: 0.1,
            phi: model.config.priors.phi_log_mu.exp(),
            gamma,
            xi,
            knots: None,
        };
        state.refresh_knots(model);
        state
    }

    /// Recompute the tertile knots from the current γ (variant B).
    pub fn refresh_knots(&mut self, model: &Model) {
        if model.config.variant == Variant::B {
            let z = propensity_scores(&model.x, &self.gamma);
            self.knots = Some(tertile_knots(z.as_slice()));
        }
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().chain(self.a.iter()).chain(self.beta.iter()).all(|v| v.is_finite())
            && self.gamma.iter().chain(self.xi.iter()).all(|v| v.is_finite())
            && self.sigma_y.matrix().iter().all(|v| v.is_finite())
            && self.sigma2_h.is_finite()
            && self.sigma2_h > 0.0
            && self.phi.is_finite()
            && self.phi > 0.0
    }
}

/// Scores and loadings of the leading principal direction of `y`, scaled so
/// the scores have unit variance. With `anchor = Some((i, m))` the sign puts
/// score `i` on the side of `m`.
pub fn principal_start(y: &DMatrix<f64>, anchor: Option<(usize, f64)>) -> (DVector<f64>, DVector<f64>) {
    let (n, p) = y.shape();
    let eig = (y.transpose() * y).symmetric_eigen();
    let top = eig.eigenvalues.imax();
    let mut v = eig.eigenvectors.column(top).into_owned();
    let mut h = y * &v;
    let sd = (h.norm_squared() / n.max(1) as f64).sqrt();
    if !(sd > 0.0) {
        return (DVector::zeros(n), DVector::zeros(p));
    }
    if let Some((i, m)) = anchor {
        if h[i] * m < 0.0 {
            v.neg_mut();
            h.neg_mut();
        }
    }
    (h / sd, v * sd)
}

/// Posterior mode of γ under the Bernoulli-logit likelihood and an iid
/// `N(0, prior_var)` prior, by Newton's method.
pub fn logistic_map(x: &DMatrix<f64>, t: &DVector<f64>, prior_var: f64) -> DVector<f64> {
    let k = x.ncols();
    let mut g = DVector::zeros(k);
    for _ in 0..100 {
        let p = (x * &g).map(expit);
        let grad = x.transpose() * (t - &p) - &g / prior_var;
        let w = p.map(|v| v * (1.0 - v));
        let mut info = DMatrix::identity(k, k) / prior_var;
        for i in 0..x.nrows() {
            let r = x.row(i);
            info += r.transpose() * r * w[i];
        }
        let Some(chol) = info.cholesky() else { break };
        let step = chol.solve(&grad);
        g += &step;
        if step.amax() < 1e-12 {
            break;
        }
    }
    g
}

/// Membership of each country in the propensity tertiles.
#[derive(Clone, Debug, PartialEq)]
pub struct SubclassAssignment {
    /// N×2 indicator matrix; rows are `[0,0]`, `[1,0]` or `[0,1]`.
    pub g: DMatrix<f64>,
    pub z: DVector<f64>,
    pub knots: (f64, f64),
}

pub fn spatial_correlation(d: f64, phi: f64) -> f64 {
    (-d / phi).exp()
}

/// `R(d, φ) + nugget·I`.
pub fn correlation_matrix(d: &DMatrix<f64>, phi: f64, nugget: f64) -> DMatrix<f64> {
    let n = d.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0 + nugget
        } else {
            spatial_correlation(d[(i, j)], phi)
        }
    })
}

/// `σ²_H (R(d, φ) + nugget·I)`.
pub fn build_sigma_h(d: &DMatrix<f64>, sigma2_h: f64, phi: f64, nugget: f64) -> Result<SpdMatrix> {
    if !(sigma2_h > 0.0) || !(phi > 0.0) || !(nugget >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need sigma2_h > 0, phi > 0, nugget >= 0 (got {sigma2_h}, {phi}, {nugget})"
        )));
    }
    SpdMatrix::new(correlation_matrix(d, phi, nugget) * sigma2_h)
}

/// Logistic propensity scores `expit(X γ)`, clamped away from 0 and 1.
pub fn propensity_scores(x: &DMatrix<f64>, gamma: &DVector<f64>) -> DVector<f64> {
    let eta = x * gamma;
    eta.map(|e| expit(e).clamp(PROPENSITY_CLAMP, 1.0 - PROPENSITY_CLAMP))
}

/// Order statistics of `z` at 1-based ranks `⌊N/3⌋ + 1` and `⌊2N/3⌋ + 1`.
///
/// With distinct scores this leaves `⌊N/3⌋` countries strictly below `q₁`
/// and splits the rest as evenly as possible around `q₂`.
pub fn tertile_knots(z: &[f64]) -> (f64, f64) {
    let mut s = z.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return (0.5, 0.5);
    }
    let q1 = s[(n / 3).min(n - 1)];
    let q2 = s[(2 * n / 3).min(n - 1)];
    if q1 == q2 {
        log::debug!("degenerate propensity knots: q1 = q2 = {q1}");
    }
    (q1, q2)
}

pub fn subclass_indicator(z: f64, q1: f64, q2: f64) -> [f64; 2] {
    if z < q1 {
        [0.0, 0.0]
    } else if z < q2 {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    }
}

pub fn subclass_assignment(x: &DMatrix<f64>, gamma: &DVector<f64>, knots: (f64, f64)) -> SubclassAssignment {
    let z = propensity_scores(x, gamma);
    let mut g = DMatrix::zeros(z.len(), 2);
    for (i, &zi) in z.iter().enumerate() {
        let row = subclass_indicator(zi, knots.0, knots.1);
        g[(i, 0)] = row[0];
        g[(i, 1)] = row[1];
    }
    SubclassAssignment { g, z, knots }
}

/// A dataset bound to a model configuration: resolved anchor, field index
/// set, design matrix, and distances in the configured unit.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub y: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub t: DVector<f64>,
    /// H-level regression design: `[1, T, X]` for A, `[1, T]` for B.
    pub design: DMatrix<f64>,
    pub anchor: Option<usize>,
    /// Countries in the H-level field, in index order.
    pub field: Vec<usize>,
    /// Field-by-field distances in the configured unit.
    pub field_distances: DMatrix<f64>,
}

impl Model {
    pub fn new(dataset: &Dataset, config: &ModelConfig) -> Result<Self> {
        dataset.validate(false)?;
        config.priors.validate(dataset.p())?;
        if !(config.nugget >= 0.0) {
            return Err(Error::Config("nugget must be non-negative".into()));
        }
        let n = dataset.n();
        if config.variant == Variant::B && dataset.k() == 0 {
            return Err(Error::Config("variant B needs at least one covariate".into()));
        }
        let anchor = if config.anchored {
            Some(match &config.anchor_id {
                Some(id) => dataset.index_of(id).ok_or_else(|| Error::AnchorMissing(id.clone()))?,
                None => dataset.anchor_index,
            })
        } else {
            None
        };
        let field: Vec<usize> = (0..n).filter(|&i| Some(i) != anchor).collect();
        if field.is_empty() {
            return Err(Error::TooFewCountries { got: n, need: 2 });
        }
        let t = dataset.t_vec();
        let design = match config.variant {
            Variant::A => {
                let mut w = DMatrix::zeros(n, 2 + dataset.k());
                w.column_mut(0).fill(1.0);
                w.set_column(1, &t);
                for j in 0..dataset.k() {
                    w.set_column(2 + j, &dataset.x.column(j));
                }
                w
            }
            Variant::B => {
                let mut w = DMatrix::zeros(n, 2);
                w.column_mut(0).fill(1.0);
                w.set_column(1, &t);
                w
            }
        };
        let scale = config.distance_unit.per_megameter();
        let field_distances = DMatrix::from_fn(field.len(), field.len(), |a, b| dataset.d[(field[a], field[b])] * scale);
        Ok(Self {
            config: config.clone(),
            y: dataset.y.clone(),
            x: dataset.x.clone(),
            t,
            design,
            anchor,
            field,
            field_distances,
        })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    /// Replace the outcome data and treatment, keeping covariates and
    /// geometry. The treatment column of the design follows `t`.
    pub fn set_data(&mut self, y: DMatrix<f64>, t: DVector<f64>) -> Result<()> {
        if y.nrows() != self.n() || y.ncols() != self.p() || t.len() != self.n() {
            return Err(Error::Dimension("replacement data does not match the model".into()));
        }
        self.design.set_column(1, &t);
        self.y = y;
        self.t = t;
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.y.ncols()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn priors(&self) -> &PriorConfig {
        &self.config.priors
    }

    pub fn is_spatial(&self) -> bool {
        self.config.covariance == Covariance::Spatial
    }

    pub fn beta_dim(&self) -> usize {
        self.design.ncols()
    }

    /// Rows of `m` restricted to the field.
    pub fn field_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        m.select_rows(self.field.iter())
    }

    pub fn field_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.field.len(), self.field.iter().map(|&i| v[i]))
    }

    /// Correlation matrix of the field (identity for the iid covariance).
    pub fn field_correlation(&self, phi: f64) -> Result<SpdMatrix> {
        match self.config.covariance {
            Covariance::Spatial => SpdMatrix::new(correlation_matrix(&self.field_distances, phi, self.config.nugget)),
            Covariance::Iid => Ok(SpdMatrix::identity(self.field.len())),
        }
    }

    pub fn subclasses(&self, state: &ChainState) -> Option<SubclassAssignment> {
        match self.config.variant {
            Variant::A => None,
            Variant::B => {
                let knots = state
                    .knots
                    .unwrap_or_else(|| tertile_knots(propensity_scores(&self.x, &state.gamma).as_slice()));
                Some(subclass_assignment(&self.x, &state.gamma, knots))
            }
        }
    }

    /// H-level mean for every country (the anchor's entry is not used by
    /// the model but is reported for completeness).
    pub fn h_level_mean(&self, state: &ChainState) -> Result<DVector<f64>> {
        if state.beta.len() != self.beta_dim() {
            return Err(Error::Dimension(format!(
                "beta has length {}, design has {} columns",
                state.beta.len(),
                self.beta_dim()
            )));
        }
        let mut mu = &self.design * &state.beta;
        if let Some(sub) = self.subclasses(state) {
            if state.xi.len() != 2 {
                return Err(Error::Dimension(format!("xi has length {}, expected 2", state.xi.len())));
            }
            mu += &sub.g * &state.xi;
        }
        Ok(mu)
    }

    /// Bernoulli-logit log likelihood of T given X and γ.
    pub fn treatment_loglik(&self, gamma: &DVector<f64>) -> f64 {
        let eta = &self.x * gamma;
        eta.iter()
            .zip(self.t.iter())
            .map(|(&e, &ti)| ti * e - log1p_exp(e))
            .sum()
    }

    pub fn log_joint(&self, state: &ChainState) -> Result<LogJoint> {
        let pr = self.priors();
        let n = self.n();
        let p = self.p();
        if state.h.len() != n || state.a.len() != p || state.sigma_y.dim() != p {
            return Err(Error::Dimension("state does not match model dimensions".into()));
        }

        let mut y_level = 0.0;
        for i in 0..n {
            let yi = self.y.row(i).transpose();
            let mean = &state.a * state.h[i];
            y_level += mvn_logpdf(&yi, &mean, &state.sigma_y)?;
        }

        let mu = self.h_level_mean(state)?;
        let sigma_h = match self.config.covariance {
            Covariance::Spatial => build_sigma_h(&self.field_distances, state.sigma2_h, state.phi, self.config.nugget)?,
            Covariance::Iid => SpdMatrix::scaled_identity(self.field.len(), state.sigma2_h)?,
        };
        let h_level = mvn_logpdf(&self.field_vec(&state.h), &self.field_vec(&mu), &sigma_h)?;

        let anchor = match self.anchor {
            Some(i) => normal_logpdf(state.h[i], pr.anchor_mean, pr.anchor_var),
            None => 0.0,
        };

        let treatment = match self.config.variant {
            Variant::A => 0.0,
            Variant::B => self.treatment_loglik(&state.gamma),
        };

        let iid_normal = |v: &DVector<f64>, var: f64| v.iter().map(|&x| normal_logpdf(x, 0.0, var)).sum::<f64>();
        let dof = pr.sigma_y_dof(p);
        let prior_a = iid_normal(&state.a, pr.loading_var);
        let prior_beta = iid_normal(&state.beta, pr.beta_var);
        let prior_sigma_y = inv_wishart_logpdf(&state.sigma_y, dof, pr.sigma_y_scale);
        let prior_sigma2_h = inv_gamma_logpdf(state.sigma2_h, pr.sigma_h_shape, pr.sigma_h_scale);
        let prior_phi = match self.config.covariance {
            Covariance::Spatial => lognormal_logpdf(state.phi, pr.phi_log_mu, pr.phi_log_sigma)?,
            Covariance::Iid => 0.0,
        };
        let (prior_xi, prior_gamma) = match self.config.variant {
            Variant::A => (0.0, 0.0),
            Variant::B => (iid_normal(&state.xi, pr.xi_var), iid_normal(&state.gamma, pr.gamma_var)),
        };

        Ok(LogJoint {
            y_level,
            h_level,
            anchor,
            treatment,
            prior_a,
            prior_beta,
            prior_sigma_y,
            prior_sigma2_h,
            prior_phi,
            prior_xi,
            prior_gamma,
        })
    }
}

/// Additive pieces of the log joint density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogJoint {
    pub y_level: f64,
    pub h_level: f64,
    pub anchor: f64,
    /// Depends on (T, X, γ) only.
    pub treatment: f64,
    pub prior_a: f64,
    pub prior_beta: f64,
    pub prior_sigma_y: f64,
    pub prior_sigma2_h: f64,
    pub prior_phi: f64,
    pub prior_xi: f64,
    pub prior_gamma: f64,
}

impl LogJoint {
    pub fn total(&self) -> f64 {
        self.y_level
            + self.h_level
            + self.anchor
            + self.treatment
            + self.prior_a
            + self.prior_beta
            + self.prior_sigma_y
            + self.prior_sigma2_h
            + self.prior_phi
            + self.prior_xi
            + self.prior_gamma
    }
}

/// Log density of `IW(dof, scale·I)` at `x`.
pub fn inv_wishart_logpdf(x: &SpdMatrix, dof: f64, scale: f64) -> f64 {
    let p = x.dim() as f64;
    let log_mv_gamma = p * (p - 1.0) / 4.0 * std::f64::consts::PI.ln()
        + (0..x.dim()).map(|j| ln_gamma((dof - j as f64) / 2.0)).sum::<f64>();
    let trace = scale * x.precision().trace();
    0.5 * dof * p * scale.ln() - 0.5 * dof * p * 2f64.ln() - log_mv_gamma - 0.5 * (dof + p + 1.0) * x.log_det() - 0.5 * trace
}

/// Log density of `Inv-Gamma(shape, scale)` at `x`.
pub fn inv_gamma_logpdf(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

/// Serde adapter writing a vector as a plain list.
pub mod vector_serde {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        serde::Serialize::serialize(v.as_slice(), s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}
