//! Forward simulation from the model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{Country, Dataset};
use crate::error::{Error, Result};
use crate::ingest::{great_circle_matrix, standardize};
use crate::model::{ChainState, Model, ModelConfig, Variant};
use crate::stochastics::{expit, inv_gamma_sample, inv_wishart_sample, mvn_sample, RngStream, SpdMatrix};

/// Stream id reserved for synthetic data so it never collides with chains.
pub const SYNTHETIC_STREAM: u64 = 0x5359_4e54;

/// Latitude/longitude box; points are uniform on the sphere inside it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordinatePatch {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Default for CoordinatePatch {
    fn default() -> Self {
        Self {
            lat_min: -30.0,
            lat_max: 30.0,
            lon_min: -30.0,
            lon_max: 30.0,
        }
    }
}

impl CoordinatePatch {
    pub fn sample(&self, rng: &mut RngStream) -> (f64, f64) {
        let s0 = self.lat_min.to_radians().sin();
        let s1 = self.lat_max.to_radians().sin();
        let lat = (s0 + (s1 - s0) * rng.uniform()).asin().to_degrees();
        let lon = self.lon_min + (self.lon_max - self.lon_min) * rng.uniform();
        (lat, lon)
    }
}

/// Generating values. `gamma` also drives treatment assignment under
/// variant A, where it is not a model parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    pub a: Vec<f64>,
    /// Row-major P×P.
    pub sigma_y: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma2_h: f64,
    pub phi: f64,
    pub gamma: Vec<f64>,
    pub xi: Vec<f64>,
}

impl TrueParams {
    /// Variant B truth with β₁ = 0.5, φ = 1.5, σ²_H = 0.2.
    pub fn recovery(p: usize, k: usize) -> Self {
        let a = (0..p)
            .map(|j| if p > 1 { 0.6 + 0.8 * j as f64 / (p - 1) as f64 } else { 1.0 })
            .collect();
        let mut sigma_y = vec![0.0; p * p];
        for j in 0..p {
            sigma_y[j * p + j] = 0.3;
        }
        let base = [0.8, -0.6, 0.4, -0.3];
        Self {
            a,
            sigma_y,
            beta: vec![0.0, 0.5],
            sigma2_h: 0.2,
            phi: 1.5,
            gamma: (0..k).map(|i| base[i % base.len()]).collect(),
            xi: vec![0.3, 0.7],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TruthSource {
    Prior,
    Fixed(TrueParams),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    /// Variant, priors (for `TruthSource::Prior`), anchor, nugget.
    pub model: ModelConfig,
    pub truth: TruthSource,
    pub patch: CoordinatePatch,
    pub seed: u64,
    /// Standardize Y columns. The returned truth then refers to the raw
    /// scale; `y_maps` records the transformation.
    pub standardize_y: bool,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 3 || self.p < 1 || self.k < 1 {
            return Err(Error::Config("synthetic data needs N ≥ 3, P ≥ 1, K ≥ 1".into()));
        }
        if let TruthSource::Fixed(t) = &self.truth {
            let b = match self.model.variant {
                Variant::A => 2 + self.k,
                Variant::B => 2,
            };
            if t.a.len() != self.p || t.sigma_y.len() != self.p * self.p || t.beta.len() != b {
                return Err(Error::Dimension("fixed truth does not match N, P, K".into()));
            }
            if self.model.variant == Variant::B && (t.gamma.len() != self.k || t.xi.len() != 2) {
                return Err(Error::Dimension("fixed truth needs K gammas and 2 xis".into()));
            }
        }
        Ok(())
    }
}

/// `standardized = (raw − mean) / sd`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub truth: ChainState,
    pub x_maps: Vec<AffineMap>,
    pub y_maps: Option<Vec<AffineMap>>,
}

fn standardize_recorded(m: &mut DMatrix<f64>) -> Result<Vec<AffineMap>> {
    let mut maps = Vec::with_capacity(m.ncols());
    for j in 0..m.ncols() {
        let col: Vec<f64> = m.column(j).iter().copied().collect();
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let z = standardize(&col).map_err(|_| Error::ConstantColumn(format!("column {j}")))?;
        m.set_column(j, &DVector::from_vec(z));
        maps.push(AffineMap { mean, sd });
    }
    Ok(maps)
}

/// Draw every parameter except H from the priors of `model`.
pub fn sample_prior_params(model: &Model, rng: &mut RngStream) -> Result<ChainState> {
    let pr = model.priors();
    let p = model.p();
    let mut state = ChainState::initial(model, rng);
    state.a = rng.std_normal_vec(p) * pr.loading_var.sqrt();
    state.sigma_y = inv_wishart_sample(pr.sigma_y_dof(p), &SpdMatrix::scaled_identity(p, pr.sigma_y_scale)?, rng)?;
    state.beta = rng.std_normal_vec(model.beta_dim()) * pr.beta_var.sqrt();
    state.sigma2_h = inv_gamma_sample(pr.sigma_h_shape, pr.sigma_h_scale, rng)?;
    state.phi = if model.is_spatial() {
        (pr.phi_log_mu + pr.phi_log_sigma * rng.std_normal()).exp()
    } else {
        pr.phi_log_mu.exp()
    };
    if model.variant() == Variant::B {
        state.xi = rng.std_normal_vec(2) * pr.xi_var.sqrt();
        state.gamma = rng.std_normal_vec(model.k()) * pr.gamma_var.sqrt();
        state.refresh_knots(model);
    }
    Ok(state)
}

/// Draw H given the other parameters (anchor from its fixed prior).
pub fn sample_h(model: &Model, state: &mut ChainState, rng: &mut RngStream) -> Result<()> {
    let pr = model.priors();
    let mu = model.h_level_mean(state)?;
    let corr = model.field_correlation(state.phi)?;
    let cov = SpdMatrix::new(corr.matrix() * state.sigma2_h)?;
    let hf = mvn_sample(&model.field_vec(&mu), &cov, rng)?;
    for (u, &i) in model.field.iter().enumerate() {
        state.h[i] = hf[u];
    }
    if let Some(i) = model.anchor {
        state.h[i] = pr.anchor_mean + pr.anchor_var.sqrt() * rng.std_normal();
    }
    Ok(())
}

/// Draw Y given H, a, Σ_Y.
pub fn sample_y(state: &ChainState, rng: &mut RngStream) -> Result<DMatrix<f64>> {
    let n = state.h.len();
    let p = state.a.len();
    let zero = DVector::zeros(p);
    let mut y = DMatrix::zeros(n, p);
    for i in 0..n {
        let e = mvn_sample(&zero, &state.sigma_y, rng)?;
        y.set_row(i, &(&state.a * state.h[i] + e).transpose());
    }
    Ok(y)
}

/// Bernoulli-logit treatment draws.
pub fn sample_treatment(x: &DMatrix<f64>, gamma: &DVector<f64>, rng: &mut RngStream) -> DVector<f64> {
    let eta = x * gamma;
    eta.map(|e| (rng.uniform() < expit(e)) as u8 as f64)
}

fn state_from_truth(model: &Model, t: &TrueParams) -> Result<ChainState> {
    let p = model.p();
    let n = model.n();
    Ok(ChainState {
        h: DVector::zeros(n),
        a: DVector::from_vec(t.a.clone()),
        sigma_y: SpdMatrix::new(DMatrix::from_row_slice(p, p, &t.sigma_y))?,
        beta: DVector::from_vec(t.beta.clone()),
        sigma2_h: t.sigma2_h,
        phi: t.phi,
        gamma: match model.variant() {
            Variant::A => DVector::zeros(0),
            Variant::B => DVector::from_vec(t.gamma.clone()),
        },
        xi: match model.variant() {
            Variant::A => DVector::zeros(0),
            Variant::B => DVector::from_vec(t.xi.clone()),
        },
        knots: None,
    })
}

/// Simulate a dataset. Country 0 is the anchor unless `model.anchor_id`
/// names another (ids are `S001`, `S002`, ...).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let (n, p, k) = (spec.n, spec.p, spec.k);
    let mut rng = RngStream::new(spec.seed, SYNTHETIC_STREAM);
    let coords: Vec<(f64, f64)> = (0..n).map(|_| spec.patch.sample(&mut rng)).collect();
    let mut x = DMatrix::from_fn(n, k, |_, _| rng.std_normal());
    let x_maps = standardize_recorded(&mut x)?;
    let ids: Vec<String> = (0..n).map(|i| format!("S{:03}", i + 1)).collect();
    let anchor_index = match &spec.model.anchor_id {
        Some(id) => ids.iter().position(|c| c == id).ok_or_else(|| Error::AnchorMissing(id.clone()))?,
        None => 0,
    };
    let mut dataset = Dataset {
        countries: ids
            .iter()
            .zip(&coords)
            .map(|(id, &(lat, lon))| Country {
                id: id.clone(),
                name: format!("Synthetic {id}"),
                income_group: String::new(),
                capital_lat_deg: lat,
                capital_lon_deg: lon,
            })
            .collect(),
        year: 0,
        y: DMatrix::zeros(n, p),
        x,
        t: vec![0; n],
        d: great_circle_matrix(&coords)?,
        metric_names: (1..=p).map(|j| format!("m{j}")).collect(),
        covariate_names: (1..=k).map(|j| format!("x{j}")).collect(),
        anchor_index,
    };
    let mut model = Model::new(&dataset, &spec.model)?;
    let mut state = match &spec.truth {
        TruthSource::Prior => sample_prior_params(&model, &mut rng)?,
        TruthSource::Fixed(t) => state_from_truth(&model, t)?,
    };
    let assign_gamma = match (&spec.truth, model.variant()) {
        (_, Variant::B) => Some(state.gamma.clone()),
        (TruthSource::Fixed(t), Variant::A) if t.gamma.len() == k => Some(DVector::from_vec(t.gamma.clone())),
        _ => None,
    };
    let t = match assign_gamma {
        Some(g) => sample_treatment(&dataset.x, &g, &mut rng),
        None => DVector::from_fn(n, |_, _| (rng.uniform() < 0.5) as u8 as f64),
    };
    dataset.t = t.iter().map(|&v| v as u8).collect();
    model.set_data(dataset.y.clone(), t)?;
    state.refresh_knots(&model);
    sample_h(&model, &mut state, &mut rng)?;
    let mut y = sample_y(&state, &mut rng)?;
    let y_maps = if spec.standardize_y {
        Some(standardize_recorded(&mut y)?)
    } else {
        None
    };
    dataset.y = y;
    // income groups by true health tertile, for report plumbing
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| state.h[a].total_cmp(&state.h[b]));
    for (r, &i) in order.iter().enumerate() {
        dataset.countries[i].income_group = ["low", "middle", "high"][(3 * r / n).min(2)].to_string();
    }
    dataset.validate(false)?;
    Ok(SyntheticData {
        dataset,
        truth: state,
        x_maps,
        y_maps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(variant: Variant, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n: 60,
            p: 6,
            k: 3,
            model: ModelConfig {
                variant,
                ..Default::default()
            },
            truth: TruthSource::Fixed(TrueParams::recovery(6, 3)),
            patch: CoordinatePatch::default(),
            seed,
            standardize_y: false,
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_synthetic(&spec(Variant::B, 4)).unwrap();
        let b = generate_synthetic(&spec(Variant::B, 4)).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
        let c = generate_synthetic(&spec(Variant::B, 5)).unwrap();
        assert_ne!(a.dataset.y, c.dataset.y);
    }

    #[test]
    fn zero_loading_decouples_y_from_h() {
        let mut s = spec(Variant::A, 6);
        s.n = 200;
        let mut t = TrueParams::recovery(6, 3);
        t.a = vec![0.0; 6];
        t.beta = vec![0.0, 0.5, 0.1, 0.1, 0.1];
        s.truth = TruthSource::Fixed(t);
        let d = generate_synthetic(&s).unwrap();
        let h: Vec<f64> = d.truth.h.iter().copied().collect();
        let mean_abs: f64 = (0..6)
            .map(|j| {
                let y: Vec<f64> = d.dataset.y.column(j).iter().copied().collect();
                corr(&h, &y).abs()
            })
            .sum::<f64>()
            / 6.0;
        assert!(mean_abs < 0.1, "mean |corr| {mean_abs}");
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn huge_range_makes_field_nearly_constant() {
        let mut s = spec(Variant::A, 7);
        s.n = 6;
        let mut t = TrueParams::recovery(6, 3);
        t.phi = 1e6;
        t.beta = vec![0.0; 5];
        s.truth = TruthSource::Fixed(t);
        // pairwise correlation of field H across replicates
        let reps = 400;
        let hs: Vec<Vec<f64>> = (0..reps)
            .map(|r| {
                s.seed = 1000 + r;
                generate_synthetic(&s).unwrap().truth.h.iter().copied().collect()
            })
            .collect();
        let col = |i: usize| hs.iter().map(|h| h[i]).collect::<Vec<_>>();
        // the synthetic covariates differ across replicates, but β = 0
        for i in 1..6 {
            for j in (i + 1)..6 {
                assert!(corr(&col(i), &col(j)) > 0.99);
            }
        }
    }

    #[test]
    fn standardized_output_passes_validation_and_records_maps() {
        let mut s = spec(Variant::B, 8);
        s.standardize_y = true;
        let d = generate_synthetic(&s).unwrap();
        d.dataset.validate(true).unwrap();
        let maps = d.y_maps.unwrap();
        assert_eq!(maps.len(), 6);
        assert!(maps.iter().all(|m| m.sd > 0.0));
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut s = spec(Variant::B, 1);
        s.n = 2;
        assert!(generate_synthetic(&s).is_err());
        let mut s = spec(Variant::B, 1);
        s.truth = TruthSource::Fixed(TrueParams::recovery(5, 3));
        assert!(generate_synthetic(&s).is_err());
    }
}
