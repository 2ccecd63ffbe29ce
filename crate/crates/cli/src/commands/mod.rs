//! One module per subcommand. Each `cmd_*` takes a serializable options
//! struct so the resolved invocation can be recorded in the run manifest.

pub mod fit;
pub mod ingest;
pub mod pilot;
pub mod report;
pub mod validate;

pub use fit::{cmd_fit, FitOptions, FitOutcome};
pub use ingest::{cmd_ingest, IngestOptions, IngestOutcome};
pub use pilot::{cmd_pilot, PilotOptions, PilotReport};
pub use report::{cmd_report, ReportArgs, ReportKind};
pub use validate::{cmd_validate, Suite, ValidateOptions, ValidationReport};

use std::path::Path;

use crate::error::{io_error, CliError, CliResult};

pub const DATASET_FILE: &str = "dataset.json";

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.into()))?;
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}
