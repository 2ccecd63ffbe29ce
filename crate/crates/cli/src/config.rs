use std::path::Path;

use lhfi::model::ModelConfig;
use lhfi::sampler::{config_hash, McmcConfig};
use lhfi::Dataset;
use serde::{Deserialize, Serialize};

use crate::error::{io_error, require_file, CliError, CliResult};

pub const THREADS_ENV: &str = "LHFI_THREADS";

/// Contents of `--config`. Both sections are optional and default to the
/// engine defaults; unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub model: ModelConfig,
    pub mcmc: McmcConfig,
}

impl FitConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        require_file(path, "config file")?;
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn hash(&self) -> CliResult<String> {
        Ok(config_hash(&self.model, &self.mcmc)?)
    }
}

pub fn load_dataset(path: &Path) -> CliResult<Dataset> {
    require_file(path, "dataset file")?;
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let ds = Dataset::from_json(&text).map_err(|e| CliError::Usage(format!("invalid dataset {}: {e}", path.display())))?;
    ds.validate(false)?;
    Ok(ds)
}

/// Thread count from the flag, else `LHFI_THREADS`, else `None` (rayon's
/// default).
pub fn thread_count(flag: Option<usize>, env: Option<&str>) -> CliResult<Option<usize>> {
    let n = match (flag, env) {
        (Some(n), _) => n,
        (None, Some(v)) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
        (None, None) => return Ok(None),
    };
    if n == 0 {
        return Err(CliError::Usage("thread count must be at least 1".into()));
    }
    Ok(Some(n))
}
