//! Random streams and the handful of distributions the sampler needs.
//!
//! Every Gibbs and Metropolis step draws from an [`RngStream`], a ChaCha20
//! generator addressed by `(seed, stream_id)`. Chains and validation replicas
//! take distinct stream ids so they never share a sequence, and the word
//! position can be saved and restored for bit-exact checkpoint resume.
//!
//! Covariances live in [`SpdMatrix`], which carries its Cholesky factor so
//! that log-determinants, quadratic forms, and solves never form an explicit
//! inverse.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Seeded, stream-addressable random source.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha20Rng,
}

/// Saved position of an [`RngStream`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngPosition {
    pub seed: u64,
    pub stream_id: u64,
    pub word_pos: u128,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn position(&self) -> RngPosition {
        RngPosition {
            seed: self.seed,
            stream_id: self.stream_id,
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn restore(pos: RngPosition) -> Self {
        let mut rng = Self::new(pos.seed, pos.stream_id);
        rng.inner.set_word_pos(pos.word_pos);
        rng
    }

    pub fn std_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn std_normal_vec(&mut self, n: usize) -> DVector<f64> {
        DVector::from_iterator(n, (0..n).map(|_| self.std_normal()))
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Symmetric positive definite matrix with a cached lower Cholesky factor.
#[derive(Clone, Debug)]
pub struct SpdMatrix {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl SpdMatrix {
    /// Checks symmetry (1e-12 relative to the largest entry) and factors.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Dimension(format!(
                "expected square matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        let n = matrix.nrows();
        for i in 0..n {
            for j in 0..i {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::NotPositiveDefinite);
                }
            }
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let chol = Cholesky::new(sym.clone()).ok_or(Error::NotPositiveDefinite)?;
        if chol.l_dirty().diagonal().iter().any(|d| !(*d > 0.0)) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self { matrix: sym, chol })
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim)).expect("identity is SPD")
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim) * scale)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Lower-triangular `L` with `L Lᵀ = self`.
    pub fn factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `self⁻¹ b`
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `xᵀ self⁻¹ x`, via one triangular solve.
    pub fn inv_quad_form(&self, x: &DVector<f64>) -> f64 {
        let l = self.chol.l_dirty();
        let w = l
            .solve_lower_triangular(x)
            .expect("Cholesky factor has positive diagonal");
        w.norm_squared()
    }

    /// Precision matrix `self⁻¹`, built from the factor.
    pub fn precision(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

impl Serialize for SpdMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        crate::dataset::matrix_rows::serialize(&self.matrix, s)
    }
}

impl<'de> Deserialize<'de> for SpdMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = crate::dataset::matrix_rows::deserialize(d)?;
        SpdMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

/// Draw from `N(mean, cov)` as `mean + L z`.
pub fn mvn_sample(mean: &DVector<f64>, cov: &SpdMatrix, rng: &mut RngStream) -> Result<DVector<f64>> {
    if mean.len() != cov.dim() {
        return Err(Error::Dimension(format!(
            "mean has length {}, covariance is {}x{}",
            mean.len(),
            cov.dim(),
            cov.dim()
        )));
    }
    let z = rng.std_normal_vec(mean.len());
    Ok(mean + cov.chol.l_dirty().lower_triangle() * z)
}

/// Draw from the normal with precision `prec` and mean `prec⁻¹ linear`.
///
/// With `prec = L Lᵀ`, the draw is `prec⁻¹ linear + L⁻ᵀ z`.
pub fn mvn_sample_precision(
    linear: &DVector<f64>,
    prec: &SpdMatrix,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    if linear.len() != prec.dim() {
        return Err(Error::Dimension(format!(
            "linear term has length {}, precision is {}x{}",
            linear.len(),
            prec.dim(),
            prec.dim()
        )));
    }
    let mean = prec.solve(linear);
    let z = rng.std_normal_vec(linear.len());
    let noise = prec
        .chol
        .l_dirty()
        .lower_triangle()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or(Error::NotPositiveDefinite)?;
    Ok(mean + noise)
}

pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &SpdMatrix) -> Result<f64> {
    if x.len() != mean.len() || x.len() != cov.dim() {
        return Err(Error::Dimension(format!(
            "x: {}, mean: {}, cov: {}",
            x.len(),
            mean.len(),
            cov.dim()
        )));
    }
    let r = x - mean;
    Ok(-0.5 * (x.len() as f64 * LN_2PI + cov.log_det() + cov.inv_quad_form(&r)))
}

pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -0.5 * (LN_2PI + var.ln() + r * r / var)
}

/// Inverse-Wishart draw with density `∝ |X|^{-(dof+p+1)/2} exp(-tr(scale X⁻¹)/2)`.
///
/// Draws `W ~ Wishart(dof, scale⁻¹)` by the Bartlett decomposition and
/// returns `W⁻¹`. With `scale = C Cᵀ` and Bartlett factor `A`, the inverse is
/// `(C A⁻ᵀ)(C A⁻ᵀ)ᵀ`, so only triangular solves are needed.
pub fn inv_wishart_sample(dof: f64, scale: &SpdMatrix, rng: &mut RngStream) -> Result<SpdMatrix> {
    let p = scale.dim();
    if !(dof > p as f64 - 1.0) {
        return Err(Error::InvalidParameter(format!(
            "inverse-Wishart dof {dof} must exceed dim - 1 = {}",
            p as f64 - 1.0
        )));
    }
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(dof - i as f64)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
    }
    for i in 0..p {
        for j in 0..i {
            a[(i, j)] = rng.std_normal();
        }
    }
    let c = scale.factor();
    // Mᵀ = A⁻¹ Cᵀ
    let mt = a
        .solve_lower_triangular(&c.transpose())
        .ok_or(Error::NotPositiveDefinite)?;
    let x = mt.transpose() * &mt;
    SpdMatrix::new((&x + x.transpose()) * 0.5)
}

/// `1 / Gamma(shape, rate = scale)`.
pub fn inv_gamma_sample(shape: f64, scale: f64, rng: &mut RngStream) -> Result<f64> {
    if !(shape > 0.0) || !(scale > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "inverse-gamma needs shape, scale > 0 (got {shape}, {scale})"
        )));
    }
    let g = Gamma::new(shape, 1.0 / scale).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(1.0 / g.sample(rng))
}

/// Log density at `x` of `exp(N(mu, sigma²))`.
pub fn lognormal_logpdf(x: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::InvalidParameter(format!("lognormal support is x > 0, got {x}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("lognormal sigma must be > 0, got {sigma}")));
    }
    let lx = x.ln();
    let z = (lx - mu) / sigma;
    Ok(-lx - sigma.ln() - 0.5 * (2.0 * PI).ln() - 0.5 * z * z)
}

/// Logistic function `1 / (1 + e^{-x})`, computed without overflow.
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)`
pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
