//! Posterior summaries: quantiles, health rankings, dominance
//! probabilities, treatment effects, correlation-range curves, residuals,
//! and convergence diagnostics.
//!
//! Intervals are equal-tailed (2.5%, 97.5%) with type-7 quantiles.
//! Rankings are by posterior median, descending, ties by country id.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{spatial_correlation, Covariance, Variant};
use crate::sampler::{AcceptanceRates, PosteriorSamples};

pub const MIN_SUMMARY_DRAWS: usize = 100;
pub const MIN_DIAGNOSTIC_DRAWS: usize = 200;
pub const DEFAULT_THRESHOLDS: [f64; 2] = [0.1, 0.2];

/// Type-7 quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty sample");
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(draws: &[f64]) -> Vec<f64> {
    let mut s = draws.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
}

/// Summary of a raw draw vector; no minimum length.
pub fn summarize_draws(name: &str, draws: &[f64]) -> Summary {
    let s = sorted(draws);
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let sd = if draws.len() > 1 {
        (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Summary {
        name: name.to_string(),
        mean,
        sd,
        q025: quantile_sorted(&s, 0.025),
        median: quantile_sorted(&s, 0.5),
        q975: quantile_sorted(&s, 0.975),
    }
}

/// Summaries of the named columns (all columns when `names` is empty).
pub fn summarize(samples: &PosteriorSamples, names: &[String]) -> Result<Vec<Summary>> {
    let have = samples.total_draws();
    if have < MIN_SUMMARY_DRAWS {
        return Err(Error::InsufficientDraws {
            have,
            need: MIN_SUMMARY_DRAWS,
        });
    }
    let idx: Vec<usize> = if names.is_empty() {
        (0..samples.ncols()).collect()
    } else {
        names.iter().map(|n| samples.index_of(n)).collect::<Result<_>>()?
    };
    Ok(idx
        .into_iter()
        .map(|j| summarize_draws(&samples.columns[j], &samples.pooled_index(j)))
        .collect())
}

/// Fraction of draws with `a > b` (ties count as neither).
pub fn dominance_probability(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("draw vectors of length {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::InsufficientDraws { have: 0, need: 1 });
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x > y).count() as f64 / a.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub rank: usize,
    pub id: String,
    pub name: String,
    pub income_group: String,
    pub median: f64,
    pub q025: f64,
    pub q975: f64,
}

pub fn rank_report(samples: &PosteriorSamples, dataset: &Dataset) -> Result<Vec<RankRow>> {
    let block = samples.block("H").ok_or_else(|| Error::UnknownName("H".into()))?;
    if block.len != dataset.n() {
        return Err(Error::Dimension("samples and dataset disagree on the country count".into()));
    }
    let mut rows: Vec<RankRow> = (0..block.len)
        .map(|i| {
            let s = summarize_draws("", &samples.pooled_index(block.start + i));
            let c = &dataset.countries[i];
            RankRow {
                rank: 0,
                id: c.id.clone(),
                name: c.name.clone(),
                income_group: c.income_group.clone(),
                median: s.median,
                q025: s.q025,
                q975: s.q975,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.median.total_cmp(&a.median).then_with(|| a.id.cmp(&b.id)));
    for (k, r) in rows.iter_mut().enumerate() {
        r.rank = k + 1;
    }
    Ok(rows)
}

/// Pairwise dominance over the listed country ids; entry `[i][j]` is
/// `P(H_i > H_j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominanceTable {
    pub ids: Vec<String>,
    pub prob: Vec<Vec<f64>>,
}

pub fn dominance_table(samples: &PosteriorSamples, ids: &[String]) -> Result<DominanceTable> {
    let draws: Vec<Vec<f64>> = ids.iter().map(|id| samples.pooled(&format!("H[{id}]"))).collect::<Result<_>>()?;
    let mut prob = vec![vec![0.0; ids.len()]; ids.len()];
    for i in 0..ids.len() {
        for j in 0..ids.len() {
            if i != j {
                prob[i][j] = dominance_probability(&draws[i], &draws[j])?;
            }
        }
    }
    Ok(DominanceTable {
        ids: ids.to_vec(),
        prob,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreatmentEffect {
    /// "causal" for the propensity model, "non-causal" for the base regression.
    pub label: String,
    pub median: f64,
    pub q025: f64,
    pub q975: f64,
    pub p_positive: f64,
    pub reference: f64,
    pub p_above_reference: f64,
}

pub fn treatment_effect_report(samples: &PosteriorSamples, reference: f64) -> Result<TreatmentEffect> {
    let draws = samples.pooled("beta[T]")?;
    if draws.is_empty() {
        return Err(Error::InsufficientDraws { have: 0, need: 1 });
    }
    let s = summarize_draws("beta[T]", &draws);
    let n = draws.len() as f64;
    Ok(TreatmentEffect {
        label: match samples.meta.variant {
            Variant::A => "non-causal".into(),
            Variant::B => "causal".into(),
        },
        median: s.median,
        q025: s.q025,
        q975: s.q975,
        p_positive: draws.iter().filter(|&&b| b > 0.0).count() as f64 / n,
        reference,
        p_above_reference: draws.iter().filter(|&&b| b > reference).count() as f64 / n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub d: f64,
    pub median: f64,
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
    /// `(threshold, P(ρ > threshold))`
    pub p_above: Vec<(f64, f64)>,
}

/// Posterior of `ρ(d) = exp(−d/φ)` at each grid distance.
pub fn correlation_curve(phi: &[f64], d_grid: &[f64], thresholds: &[f64]) -> Result<Vec<CurvePoint>> {
    if phi.is_empty() {
        return Err(Error::InsufficientDraws { have: 0, need: 1 });
    }
    if let Some(d) = d_grid.iter().find(|d| !(**d >= 0.0)) {
        return Err(Error::InvalidParameter(format!("distance grid value {d} is negative")));
    }
    Ok(d_grid
        .iter()
        .map(|&d| {
            let rho: Vec<f64> = phi.iter().map(|&p| spatial_correlation(d, p)).collect();
            let s = summarize_draws("", &rho);
            let n = rho.len() as f64;
            CurvePoint {
                d,
                median: s.median,
                mean: s.mean,
                q025: s.q025,
                q975: s.q975,
                p_above: thresholds
                    .iter()
                    .map(|&t| (t, rho.iter().filter(|&&r| r > t).count() as f64 / n))
                    .collect(),
            }
        })
        .collect())
}

/// Evenly spaced grid from 0 to `max` with `points` entries.
pub fn distance_grid(max: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![0.0];
    }
    (0..points).map(|k| max * k as f64 / (points - 1) as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub id: String,
    pub value: f64,
}

/// `Ĥ − W β̂` from posterior medians, for base-model (variant A, iid) fits.
pub fn h_residuals(samples: &PosteriorSamples, dataset: &Dataset) -> Result<Vec<Residual>> {
    if samples.meta.variant != Variant::A || samples.meta.covariance != Covariance::Iid {
        return Err(Error::Config("residual diagnostics are defined for the base model (variant A, iid)".into()));
    }
    let median = |name: &str| -> Result<f64> { Ok(summarize_draws(name, &samples.pooled(name)?).median) };
    let b0 = median("beta[intercept]")?;
    let b1 = median("beta[T]")?;
    let bx: Vec<f64> = dataset
        .covariate_names
        .iter()
        .map(|c| median(&format!("beta[{c}]")))
        .collect::<Result<_>>()?;
    dataset
        .countries
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let h = median(&format!("H[{}]", c.id))?;
            let fit = b0 + b1 * dataset.t[i] as f64 + bx.iter().enumerate().map(|(k, b)| b * dataset.x[(i, k)]).sum::<f64>();
            Ok(Residual {
                id: c.id.clone(),
                value: h - fit,
            })
        })
        .collect()
}

/// Effective sample size of one chain by Geyer's initial monotone
/// sequence estimator, capped at the chain length.
pub fn ess(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let acov = |k: usize| dev[..n - k].iter().zip(&dev[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let c0 = acov(0);
    if c0 <= 0.0 {
        return n as f64;
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let g = (acov(2 * m) + acov(2 * m + 1)) / c0;
        if g <= 0.0 {
            break;
        }
        let g = g.min(prev);
        sum += g;
        prev = g;
        m += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1e-12);
    (n as f64 / tau).min(n as f64)
}

/// Split potential scale reduction over chains of equal length.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let mut parts: Vec<&[f64]> = Vec::new();
    for c in chains {
        let h = c.len() / 2;
        parts.push(&c[..h]);
        parts.push(&c[c.len() - h..]);
    }
    let n = parts.iter().map(|p| p.len()).min().unwrap_or(0);
    if n < 2 || parts.len() < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = parts.iter().map(|p| p[..n].iter().sum::<f64>() / n as f64).collect();
    let vars: Vec<f64> = parts
        .iter()
        .zip(&means)
        .map(|(p, m)| p[..n].iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0))
        .collect();
    let m = parts.len() as f64;
    let grand = means.iter().sum::<f64>() / m;
    let b_over_n = means.iter().map(|v| (v - grand).powi(2)).sum::<f64>() / (m - 1.0);
    let w = vars.iter().sum::<f64>() / m;
    if w <= 0.0 {
        return if b_over_n <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    (var_plus / w).sqrt()
}

/// Geweke z comparing the first 10% and last 50% of a chain.
pub fn geweke_z(x: &[f64]) -> f64 {
    let n = x.len();
    let a = &x[..n / 10];
    let b = &x[n - n / 2..];
    let stats = |s: &[f64]| {
        let m = s.iter().sum::<f64>() / s.len() as f64;
        let v = s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (s.len() as f64 - 1.0);
        (m, v / ess(s))
    };
    let (ma, va) = stats(a);
    let (mb, vb) = stats(b);
    let se = (va + vb).sqrt();
    if se == 0.0 {
        return if ma == mb { 0.0 } else { f64::INFINITY };
    }
    (ma - mb) / se
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub name: String,
    pub ess: f64,
    pub split_rhat: f64,
    /// One z per chain.
    pub geweke_z: Vec<f64>,
}

pub fn diagnostics(samples: &PosteriorSamples, names: &[String]) -> Result<Vec<Diagnostic>> {
    let have = samples.draws_per_chain();
    if have < MIN_DIAGNOSTIC_DRAWS {
        return Err(Error::InsufficientDraws {
            have,
            need: MIN_DIAGNOSTIC_DRAWS,
        });
    }
    let idx: Vec<usize> = if names.is_empty() {
        (0..samples.ncols()).collect()
    } else {
        names.iter().map(|n| samples.index_of(n)).collect::<Result<_>>()?
    };
    Ok(idx
        .into_iter()
        .map(|j| {
            let chains = samples.per_chain_index(j);
            let total: f64 = chains.iter().map(|c| ess(c)).sum();
            Diagnostic {
                name: samples.columns[j].clone(),
                ess: total.min(samples.total_draws() as f64),
                split_rhat: split_rhat(&chains),
                geweke_z: chains.iter().map(|c| geweke_z(c)).collect(),
            }
        })
        .collect())
}

/// Everything `report all` emits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullReport {
    pub variant: Variant,
    pub summary: Vec<Summary>,
    pub ranking: Vec<RankRow>,
    pub dominance: DominanceTable,
    pub treatment_effect: TreatmentEffect,
    pub correlation_curve: Option<Vec<CurvePoint>>,
    pub diagnostics: Option<Vec<Diagnostic>>,
    pub acceptance: Vec<AcceptanceRates>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    /// Reference value for `P(β₁ > ref)`.
    pub effect_reference: f64,
    /// Number of top-ranked countries in the dominance table.
    pub dominance_top: usize,
    pub curve_points: usize,
    pub thresholds: Vec<f64>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            effect_reference: 0.0,
            dominance_top: 10,
            curve_points: 41,
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
        }
    }
}

pub fn full_report(samples: &PosteriorSamples, dataset: &Dataset, opts: &ReportOptions) -> Result<FullReport> {
    let ranking = rank_report(samples, dataset)?;
    let top: Vec<String> = ranking.iter().take(opts.dominance_top).map(|r| r.id.clone()).collect();
    let scalars: Vec<String> = samples
        .columns
        .iter()
        .filter(|c| !c.starts_with("H[") && !c.starts_with("Sigma_Y[") && !c.starts_with("knots["))
        .cloned()
        .collect();
    let correlation_curve = match samples.meta.covariance {
        Covariance::Spatial => {
            let dmax = dataset.d.max();
            Some(correlation_curve(
                &samples.pooled("phi")?,
                &distance_grid(dmax, opts.curve_points),
                &opts.thresholds,
            )?)
        }
        Covariance::Iid => None,
    };
    let diagnostics = match diagnostics(samples, &scalars) {
        Ok(d) => Some(d),
        Err(Error::InsufficientDraws { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(FullReport {
        variant: samples.meta.variant,
        summary: summarize(samples, &scalars)?,
        ranking,
        dominance: dominance_table(samples, &top)?,
        treatment_effect: treatment_effect_report(samples, opts.effect_reference)?,
        correlation_curve,
        diagnostics,
        acceptance: samples.chains.iter().map(|c| c.acceptance).collect(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_summary_csv(path: &Path, rows: &[Summary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["name", "mean", "sd", "q025", "median", "q975"])?;
    for r in rows {
        w.write_record([r.name.clone(), r.mean.to_string(), r.sd.to_string(), r.q025.to_string(), r.median.to_string(), r.q975.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_ranking_csv(path: &Path, rows: &[RankRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rank", "id", "name", "income_group", "median", "q025", "q975"])?;
    for r in rows {
        w.write_record([
            r.rank.to_string(),
            r.id.clone(),
            r.name.clone(),
            r.income_group.clone(),
            r.median.to_string(),
            r.q025.to_string(),
            r.q975.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Long format: one row per (distance, statistic).
pub fn write_curve_csv(path: &Path, points: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["d", "statistic", "value"])?;
    for p in points {
        let d = p.d.to_string();
        for (k, v) in [("median", p.median), ("mean", p.mean), ("q025", p.q025), ("q975", p.q975)] {
            w.write_record([d.as_str(), k, &v.to_string()])?;
        }
        for (t, v) in &p.p_above {
            w.write_record([d.as_str(), &format!("p_above_{t}"), &v.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_residuals_csv(path: &Path, rows: &[Residual]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "value"])?;
    for r in rows {
        w.write_record([r.id.clone(), r.value.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastics::RngStream;
    use proptest::prelude::{prop_assert, proptest};

    #[test]
    fn quantile_examples() {
        let s = summarize_draws("x", &[1.0, 2.0, 3.0]);
        assert_eq!(s.median, 2.0);
        let c = summarize_draws("c", &[4.5; 50]);
        assert_eq!((c.q025, c.median, c.q975), (4.5, 4.5, 4.5));
        // type 7 on 1..=4: p = 0.25 → 1 + 0.75 = 1.75
        assert_eq!(quantile_sorted(&[1.0, 2.0, 3.0, 4.0], 0.25), 1.75);
    }

    #[test]
    fn dominance_examples() {
        assert!((dominance_probability(&[1.0, 2.0, 3.0], &[0.0, 2.5, 1.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(dominance_probability(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(dominance_probability(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn curve_examples() {
        let c = correlation_curve(&[0.5, 1.0, 2.0], &[0.0], &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!((c[0].median, c[0].q025, c[0].q975), (1.0, 1.0, 1.0));
        let c = correlation_curve(&[1.0], &[1.0], &DEFAULT_THRESHOLDS).unwrap();
        let e = (-1.0f64).exp();
        assert!([c[0].median, c[0].mean, c[0].q025, c[0].q975].iter().all(|v| (v - e).abs() < 1e-15));
        assert!(correlation_curve(&[1.0], &[-1.0], &[]).is_err());
    }

    #[test]
    fn ess_iid_and_ar1() {
        let mut rng = RngStream::new(8, 0);
        let n = 10_000;
        let iid: Vec<f64> = (0..n).map(|_| rng.std_normal()).collect();
        let e = ess(&iid);
        assert!((8e3..=1.2e4).contains(&e), "iid ess {e}");
        let rho = 0.9;
        let mut x = 0.0;
        let ar: Vec<f64> = (0..n)
            .map(|_| {
                x = rho * x + (1.0 - rho * rho as f64).sqrt() * rng.std_normal();
                x
            })
            .collect();
        let expect = n as f64 * (1.0 - rho) / (1.0 + rho);
        let e = ess(&ar);
        assert!((e - expect).abs() / expect < 0.3, "ar1 ess {e} vs {expect}");
    }

    #[test]
    fn rhat_detects_separated_chains() {
        let mut rng = RngStream::new(9, 0);
        let a: Vec<f64> = (0..1000).map(|_| rng.std_normal()).collect();
        let b: Vec<f64> = (0..1000).map(|_| 3.0 + rng.std_normal()).collect();
        assert!(split_rhat(&[a.clone(), b]) > 1.2);
        let c: Vec<f64> = (0..1000).map(|_| rng.std_normal()).collect();
        assert!(split_rhat(&[a, c]) < 1.05);
    }

    #[test]
    fn geweke_z_null_and_drift() {
        let mut rng = RngStream::new(10, 0);
        let x: Vec<f64> = (0..5000).map(|_| rng.std_normal()).collect();
        assert!(geweke_z(&x).abs() < 4.0);
        let y: Vec<f64> = (0..5000).map(|i| i as f64 / 1000.0 + rng.std_normal()).collect();
        assert!(geweke_z(&y).abs() > 4.0);
    }

    proptest! {
        #[test]
        fn quantiles_ordered(v in proptest::collection::vec(-1e6f64..1e6, 1..200)) {
            let s = summarize_draws("v", &v);
            prop_assert!(s.q025 <= s.median && s.median <= s.q975);
        }

        #[test]
        fn dominance_partition(v in proptest::collection::vec((-5i32..5, -5i32..5), 1..100)) {
            let a: Vec<f64> = v.iter().map(|p| p.0 as f64).collect();
            let b: Vec<f64> = v.iter().map(|p| p.1 as f64).collect();
            let ties = v.iter().filter(|p| p.0 == p.1).count() as f64 / v.len() as f64;
            let total = dominance_probability(&a, &b).unwrap() + dominance_probability(&b, &a).unwrap() + ties;
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn curve_nonincreasing(phi in proptest::collection::vec(0.01f64..50.0, 1..50)) {
            let c = correlation_curve(&phi, &distance_grid(20.0, 30), &DEFAULT_THRESHOLDS).unwrap();
            for w in c.windows(2) {
                prop_assert!(w[1].median <= w[0].median + 1e-15);
                prop_assert!(w[1].mean <= w[0].mean + 1e-15);
            }
        }

        #[test]
        fn ess_bounded(v in proptest::collection::vec(-10f64..10.0, 4..300)) {
            prop_assert!(ess(&v) <= v.len() as f64);
        }
    }
}
