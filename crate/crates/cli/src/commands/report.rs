use std::fs;
use std::path::{Path, PathBuf};

use lhfi::posterior::{
    correlation_curve, diagnostics, distance_grid, dominance_probability, dominance_table, full_report, h_residuals, rank_report,
    summarize, treatment_effect_report, write_curve_csv, write_ranking_csv, write_residuals_csv, write_summary_csv, Diagnostic,
    DominanceTable, ReportOptions,
};
use lhfi::sampler::{PosteriorSamples, MANIFEST_FILE};
use lhfi::model::Covariance;
use lhfi::Dataset;
use serde::{Deserialize, Serialize};

use super::fit::SAMPLES_DIR;
use super::{write_json, DATASET_FILE};
use crate::config::load_dataset;
use crate::error::{io_error, CliError, CliResult};
use crate::manifest::RunManifest;

pub const REPORT_DIR: &str = "report";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ReportKind {
    Summary,
    Ranking,
    Dominance,
    Effect,
    RhoCurve,
    Residuals,
    Diagnostics,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportArgs {
    /// A fit output directory, or a samples directory.
    pub samples: PathBuf,
    pub kind: ReportKind,
    /// Two country ids for a single dominance probability.
    pub pair: Option<(String, String)>,
    /// Defaults to the dataset copy written by `fit`.
    pub dataset: Option<PathBuf>,
    /// Defaults to `<fit dir>/report`.
    pub out: Option<PathBuf>,
    pub effect_reference: f64,
    pub dominance_top: usize,
    pub curve_points: usize,
}

impl ReportArgs {
    pub fn new(samples: impl Into<PathBuf>, kind: ReportKind) -> Self {
        let d = ReportOptions::default();
        Self {
            samples: samples.into(),
            kind,
            pair: None,
            dataset: None,
            out: None,
            effect_reference: d.effect_reference,
            dominance_top: d.dominance_top,
            curve_points: d.curve_points,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDominance {
    pub a: String,
    pub b: String,
    /// `P(H_a > H_b)` over pooled draws.
    pub probability: f64,
}

/// Resolve `(samples dir, fit dir)` from either layout.
fn locate(path: &Path) -> CliResult<(PathBuf, PathBuf)> {
    if path.join(SAMPLES_DIR).join(MANIFEST_FILE).is_file() {
        Ok((path.join(SAMPLES_DIR), path.to_path_buf()))
    } else if path.join(MANIFEST_FILE).is_file() {
        let parent = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        Ok((path.to_path_buf(), parent))
    } else {
        Err(CliError::Usage(format!("no samples found under {}", path.display())))
    }
}

fn write_dominance_csv(path: &Path, t: &DominanceTable) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(e.into()))?;
    let mut rec = |r: [&str; 3]| w.write_record(r).map_err(|e| CliError::Runtime(e.into()));
    rec(["a", "b", "probability"])?;
    for (i, a) in t.ids.iter().enumerate() {
        for (j, b) in t.ids.iter().enumerate() {
            if i != j {
                rec([a, b, &t.prob[i][j].to_string()])?;
            }
        }
    }
    w.flush().map_err(|e| io_error(path, e))
}

fn write_diagnostics_csv(path: &Path, rows: &[Diagnostic]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(e.into()))?;
    let mut rec = |r: Vec<String>| w.write_record(r).map_err(|e| CliError::Runtime(e.into()));
    rec(vec!["name".into(), "ess".into(), "split_rhat".into(), "chain".into(), "geweke_z".into()])?;
    for d in rows {
        for (c, z) in d.geweke_z.iter().enumerate() {
            rec(vec![d.name.clone(), d.ess.to_string(), d.split_rhat.to_string(), c.to_string(), z.to_string()])?;
        }
    }
    w.flush().map_err(|e| io_error(path, e))
}

fn write_choropleth_csv(path: &Path, rows: &[lhfi::posterior::RankRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(e.into()))?;
    let mut rec = |r: [&str; 2]| w.write_record(r).map_err(|e| CliError::Runtime(e.into()));
    rec(["id", "value"])?;
    for r in rows {
        rec([&r.id, &r.median.to_string()])?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

fn emit<T: Serialize>(out: &Path, name: &str, files: &mut Vec<PathBuf>, value: &T) -> CliResult<()> {
    let p = out.join(name);
    write_json(&p, value)?;
    files.push(p);
    Ok(())
}

fn scalar_names(samples: &PosteriorSamples) -> Vec<String> {
    samples
        .columns
        .iter()
        .filter(|c| !c.starts_with("H[") && !c.starts_with("Sigma_Y[") && !c.starts_with("knots["))
        .cloned()
        .collect()
}

/// Posterior analyses of a finished fit. Returns the files written.
pub fn cmd_report(args: &ReportArgs) -> CliResult<Vec<PathBuf>> {
    let (samples_dir, fit_dir) = locate(&args.samples)?;
    let ds_path = args.dataset.clone().unwrap_or_else(|| fit_dir.join(DATASET_FILE));
    let dataset = load_dataset(&ds_path)?;
    let out = args.out.clone().unwrap_or_else(|| fit_dir.join(REPORT_DIR));
    let samples = PosteriorSamples::read_dir(&samples_dir)?;
    if samples.meta.dataset_hash != dataset.content_hash()? {
        return Err(CliError::Usage(format!("{} is not the dataset these samples were fitted to", ds_path.display())));
    }
    if let Some((a, b)) = &args.pair {
        for id in [a, b] {
            if dataset.index_of(id).is_none() {
                return Err(CliError::Usage(format!("unknown country id {id}")));
            }
        }
    }
    let mut manifest = RunManifest::new("report", args, &out)?;
    manifest.add_input(&samples_dir.join(MANIFEST_FILE))?;
    manifest.add_input(&ds_path)?;
    manifest.seed = Some(samples.meta.seed);
    manifest.config_hash = Some(samples.meta.config_hash.clone());
    manifest.dataset_hash = Some(samples.meta.dataset_hash.clone());
    manifest.write()?;
    let result = run(args, &samples, &dataset, &out);
    if let Ok(files) = &result {
        for f in files {
            manifest.add_output(f);
        }
    }
    manifest.conclude(&result)?;
    result
}

fn run(args: &ReportArgs, samples: &PosteriorSamples, dataset: &Dataset, out: &Path) -> CliResult<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let opts = ReportOptions {
        effect_reference: args.effect_reference,
        dominance_top: args.dominance_top,
        curve_points: args.curve_points,
        ..ReportOptions::default()
    };
    let mut files = Vec::new();
    let mut csvs: Vec<PathBuf> = Vec::new();
    let csv_path = |name: &str, csvs: &mut Vec<PathBuf>| {
        let p = out.join(name);
        csvs.push(p.clone());
        p
    };
    let spatial = samples.meta.covariance == Covariance::Spatial;
    match args.kind {
        ReportKind::Summary => {
            let rows = summarize(samples, &scalar_names(samples))?;
            emit(out, "summary.json", &mut files, &rows)?;
            write_summary_csv(&csv_path("summary.csv", &mut csvs), &rows)?;
            for r in &rows {
                println!("{:<24} median {:>9.4}  95% CI ({:.4}, {:.4})", r.name, r.median, r.q025, r.q975);
            }
        }
        ReportKind::Ranking => {
            let rows = rank_report(samples, dataset)?;
            emit(out, "ranking.json", &mut files, &rows)?;
            write_ranking_csv(&csv_path("ranking.csv", &mut csvs), &rows)?;
            write_choropleth_csv(&csv_path("choropleth.csv", &mut csvs), &rows)?;
            for r in rows.iter().take(10) {
                println!("{:>4}  {:<8} {:>8.3}  ({:.3}, {:.3})  {}", r.rank, r.id, r.median, r.q025, r.q975, r.income_group);
            }
        }
        ReportKind::Dominance => match &args.pair {
            Some((a, b)) => {
                let p = dominance_probability(&samples.pooled(&format!("H[{a}]"))?, &samples.pooled(&format!("H[{b}]"))?)?;
                println!("P(H[{a}] > H[{b}]) = {p:.4}");
                emit(out, "dominance_pair.json", &mut files, &PairDominance {
                        a: a.clone(),
                        b: b.clone(),
                        probability: p,
                    },
                )?;
            }
            None => {
                let top: Vec<String> = rank_report(samples, dataset)?
                    .into_iter()
                    .take(args.dominance_top)
                    .map(|r| r.id)
                    .collect();
                let t = dominance_table(samples, &top)?;
                emit(out, "dominance.json", &mut files, &t)?;
                write_dominance_csv(&csv_path("dominance.csv", &mut csvs), &t)?;
                println!("dominance table over the top {} countries", t.ids.len());
            }
        },
        ReportKind::Effect => {
            let e = treatment_effect_report(samples, args.effect_reference)?;
            println!(
                "beta[T] ({}): median {:.4}, 95% CI ({:.4}, {:.4}), P(>0) = {:.4}",
                e.label, e.median, e.q025, e.q975, e.p_positive
            );
            emit(out, "effect.json", &mut files, &e)?;
        }
        ReportKind::RhoCurve => {
            if !spatial {
                return Err(CliError::Usage("rho-curve needs a spatial fit".into()));
            }
            let pts = correlation_curve(&samples.pooled("phi")?, &distance_grid(dataset.d.max(), args.curve_points), &opts.thresholds)?;
            emit(out, "rho_curve.json", &mut files, &pts)?;
            write_curve_csv(&csv_path("rho_curve.csv", &mut csvs), &pts)?;
            println!("correlation curve at {} distances", pts.len());
        }
        ReportKind::Residuals => {
            let rows = h_residuals(samples, dataset).map_err(|e| CliError::Usage(e.to_string()))?;
            emit(out, "residuals.json", &mut files, &rows)?;
            write_residuals_csv(&csv_path("residuals.csv", &mut csvs), &rows)?;
            println!("{} residuals", rows.len());
        }
        ReportKind::Diagnostics => {
            let rows = diagnostics(samples, &scalar_names(samples))?;
            emit(out, "diagnostics.json", &mut files, &rows)?;
            write_diagnostics_csv(&csv_path("diagnostics.csv", &mut csvs), &rows)?;
            for d in &rows {
                println!("{:<24} ESS {:>9.1}  split R-hat {:.3}", d.name, d.ess, d.split_rhat);
            }
        }
        ReportKind::All => {
            let r = full_report(samples, dataset, &opts)?;
            emit(out, "report.json", &mut files, &r)?;
            write_summary_csv(&csv_path("summary.csv", &mut csvs), &r.summary)?;
            write_ranking_csv(&csv_path("ranking.csv", &mut csvs), &r.ranking)?;
            write_choropleth_csv(&csv_path("choropleth.csv", &mut csvs), &r.ranking)?;
            write_dominance_csv(&csv_path("dominance.csv", &mut csvs), &r.dominance)?;
            if let Some(c) = &r.correlation_curve {
                write_curve_csv(&csv_path("rho_curve.csv", &mut csvs), c)?;
            }
            if let Some(d) = &r.diagnostics {
                write_diagnostics_csv(&csv_path("diagnostics.csv", &mut csvs), d)?;
            }
            let e = &r.treatment_effect;
            println!(
                "beta[T] ({}): median {:.4}, 95% CI ({:.4}, {:.4}), P(>0) = {:.4}",
                e.label, e.median, e.q025, e.q975, e.p_positive
            );
        }
    }
    files.extend(csvs);
    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(files)
}
