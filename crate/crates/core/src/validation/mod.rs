//! Sampler-correctness harness: forward simulation, joint-distribution
//! tests, exhaustive quadrature on tiny instances, and Monte Carlo checks
//! of each conjugate update.

pub mod conjugate;
pub mod geweke;
pub mod kernels;
pub mod oracle;
pub mod synthetic;

pub use conjugate::{conjugate_suite, ConjugateReport, MomentCheck};
pub use geweke::{geweke_test, GewekeConfig, GewekeReport, GewekeStat};
pub use kernels::{kernel_checks, KernelCheck};
pub use oracle::{frozen_instances, grid_oracle, Axis, FreeParam, FrozenInstance, GridSpec, InstanceReport, OracleResult};
pub use synthetic::{generate_synthetic, CoordinatePatch, SyntheticData, SyntheticSpec, TrueParams, TruthSource};

/// Standard error of the mean of a correlated series, from ⌊√n⌋-sized
/// non-overlapping batches.
pub fn batch_means_se(x: &[f64]) -> f64 {
    let n = x.len();
    let b = (n as f64).sqrt().floor().max(1.0) as usize;
    let nb = n / b;
    if nb < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..nb).map(|k| x[k * b..(k + 1) * b].iter().sum::<f64>() / b as f64).collect();
    let m = means.iter().sum::<f64>() / nb as f64;
    let v = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (nb as f64 - 1.0);
    (v / nb as f64).sqrt()
}
