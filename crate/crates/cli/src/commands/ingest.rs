use std::path::PathBuf;

use lhfi::ingest::{build_dataset, load_csv, Schema, TransformSpec};
use lhfi::Dataset;
use serde::{Deserialize, Serialize};

use super::{write_json, DATASET_FILE};
use crate::error::{require_file, CliError, CliResult};
use crate::manifest::RunManifest;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub csv: PathBuf,
    pub schema: PathBuf,
    pub transform: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Clone, Debug)]
pub struct IngestOutcome {
    pub dataset: Dataset,
    pub path: PathBuf,
    pub rows_read: usize,
    pub control: usize,
    pub treated: usize,
}

/// CSV + schema + transform spec to `<out>/dataset.json`.
pub fn cmd_ingest(opts: &IngestOptions) -> CliResult<IngestOutcome> {
    require_file(&opts.csv, "CSV file")?;
    require_file(&opts.schema, "schema file")?;
    if let Some(t) = &opts.transform {
        require_file(t, "transform spec")?;
    }
    let mut manifest = RunManifest::new("ingest", opts, &opts.out)?;
    manifest.add_input(&opts.csv)?;
    manifest.add_input(&opts.schema)?;
    if let Some(t) = &opts.transform {
        manifest.add_input(t)?;
    }
    manifest.write()?;
    let result = run(opts, &mut manifest);
    manifest.conclude(&result)?;
    result
}

fn run(opts: &IngestOptions, manifest: &mut RunManifest) -> CliResult<IngestOutcome> {
    let schema = Schema::load(&opts.schema).map_err(|e| CliError::Usage(format!("invalid schema {}: {e}", opts.schema.display())))?;
    let spec = match &opts.transform {
        Some(p) => TransformSpec::load(p).map_err(|e| CliError::Usage(format!("invalid transform spec {}: {e}", p.display())))?,
        None => TransformSpec::default(),
    };
    let table = load_csv(&opts.csv, &schema)?;
    let dataset = build_dataset(&table, &spec)?;
    let path = opts.out.join(DATASET_FILE);
    write_json(&path, &dataset)?;
    manifest.add_output(&path);
    manifest.dataset_hash = Some(dataset.content_hash()?);
    let (control, treated) = dataset.treatment_split();
    println!("read {} rows; {} countries survive complete-case filtering", table.rows.len(), dataset.n());
    println!("treatment split: control={control}, treated={treated}");
    println!("anchor: {}", dataset.countries[dataset.anchor_index].id);
    Ok(IngestOutcome {
        rows_read: table.rows.len(),
        control,
        treated,
        dataset,
        path,
    })
}
