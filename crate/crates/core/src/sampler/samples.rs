//! Kept draws, addressable by parameter name, and their on-disk form: one
//! CSV per parameter block plus `manifest.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{sha256_hex, Dataset};
use crate::error::{Error, Result};
use crate::model::{ChainState, Covariance, ModelConfig, Variant};
use crate::sampler::McmcConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to name the columns and reproduce the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplesMeta {
    pub variant: Variant,
    pub covariance: Covariance,
    pub country_ids: Vec<String>,
    pub metric_names: Vec<String>,
    pub covariate_names: Vec<String>,
    pub anchor: Option<String>,
    pub seed: u64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub dataset_hash: String,
    pub config_hash: String,
}

impl SamplesMeta {
    pub fn new(dataset: &Dataset, model: &ModelConfig, mcmc: &McmcConfig) -> Result<Self> {
        let anchor = if model.anchored {
            Some(
                model
                    .anchor_id
                    .clone()
                    .unwrap_or_else(|| dataset.countries[dataset.anchor_index].id.clone()),
            )
        } else {
            None
        };
        Ok(Self {
            variant: model.variant,
            covariance: model.covariance,
            country_ids: dataset.countries.iter().map(|c| c.id.clone()).collect(),
            metric_names: dataset.metric_names.clone(),
            covariate_names: dataset.covariate_names.clone(),
            anchor,
            seed: mcmc.seed,
            iterations: mcmc.iterations,
            burn_in: mcmc.burn_in,
            thin: mcmc.thin,
            dataset_hash: dataset.content_hash()?,
            config_hash: config_hash(model, mcmc)?,
        })
    }

    /// Column names and block boundaries for this model.
    pub fn layout(&self) -> (Vec<String>, Vec<BlockSpec>) {
        let mut cols = Vec::new();
        let mut blocks = Vec::new();
        let mut push = |name: &str, names: Vec<String>, cols: &mut Vec<String>| {
            blocks.push(BlockSpec {
                name: name.to_string(),
                start: cols.len(),
                len: names.len(),
            });
            cols.extend(names);
        };
        push("H", self.country_ids.iter().map(|c| format!("H[{c}]")).collect(), &mut cols);
        push("a", self.metric_names.iter().map(|m| format!("a[{m}]")).collect(), &mut cols);
        let mut sy = Vec::new();
        for i in 0..self.metric_names.len() {
            for j in 0..=i {
                sy.push(format!("Sigma_Y[{},{}]", self.metric_names[i], self.metric_names[j]));
            }
        }
        push("Sigma_Y", sy, &mut cols);
        let mut beta = vec!["beta[intercept]".to_string(), "beta[T]".to_string()];
        if self.variant == Variant::A {
            beta.extend(self.covariate_names.iter().map(|c| format!("beta[{c}]")));
        }
        push("beta", beta, &mut cols);
        push("sigma2_H", vec!["sigma2_H".into()], &mut cols);
        if self.covariance == Covariance::Spatial {
            push("phi", vec!["phi".into()], &mut cols);
        }
        if self.variant == Variant::B {
            push("xi", vec!["xi[1]".into(), "xi[2]".into()], &mut cols);
            push(
                "gamma",
                self.covariate_names.iter().map(|c| format!("gamma[{c}]")).collect(),
                &mut cols,
            );
            push("knots", vec!["knots[q1]".into(), "knots[q2]".into()], &mut cols);
        }
        (cols, blocks)
    }
}

/// SHA-256 over the canonical JSON of both configurations, excluding the
/// chain count (so adding chains does not invalidate checkpoints).
pub fn config_hash(model: &ModelConfig, mcmc: &McmcConfig) -> Result<String> {
    let mcmc = McmcConfig {
        chains: 0,
        ..mcmc.clone()
    };
    let text = serde_json::to_string(&(model, &mcmc))?;
    Ok(sha256_hex(text.as_bytes()))
}

/// Flatten a state in layout order.
pub fn flatten_state(state: &ChainState, meta: &SamplesMeta, out: &mut Vec<f64>) {
    out.extend(state.h.iter());
    out.extend(state.a.iter());
    let sy = state.sigma_y.matrix();
    for i in 0..sy.nrows() {
        for j in 0..=i {
            out.push(sy[(i, j)]);
        }
    }
    out.extend(state.beta.iter());
    out.push(state.sigma2_h);
    if meta.covariance == Covariance::Spatial {
        out.push(state.phi);
    }
    if meta.variant == Variant::B {
        out.extend(state.xi.iter());
        out.extend(state.gamma.iter());
        let (q1, q2) = state.knots.unwrap_or((f64::NAN, f64::NAN));
        out.push(q1);
        out.push(q2);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRates {
    pub phi: Option<f64>,
    pub gamma: Option<f64>,
    pub phi_proposal_sd: Option<f64>,
    pub gamma_proposal_sd: Option<f64>,
    #[serde(default)]
    pub scale: Option<f64>,
    #[serde(default)]
    pub scale_proposal_sd: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainDraws {
    pub chain_id: u64,
    /// Row-major, one row per kept draw.
    pub values: Vec<f64>,
    pub acceptance: AcceptanceRates,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSamples {
    pub meta: SamplesMeta,
    pub columns: Vec<String>,
    pub blocks: Vec<BlockSpec>,
    pub chains: Vec<ChainDraws>,
}

#[derive(Serialize, Deserialize)]
struct ChainEntry {
    chain_id: u64,
    draws: usize,
    acceptance: AcceptanceRates,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    meta: SamplesMeta,
    blocks: Vec<BlockSpec>,
    columns: Vec<String>,
    chains: Vec<ChainEntry>,
}

impl PosteriorSamples {
    pub fn new(meta: SamplesMeta, chains: Vec<ChainDraws>) -> Result<Self> {
        let (columns, blocks) = meta.layout();
        let s = Self {
            meta,
            columns,
            blocks,
            chains,
        };
        for c in &s.chains {
            if c.values.len() % s.columns.len().max(1) != 0 {
                return Err(Error::Dimension(format!("chain {} has a partial draw row", c.chain_id)));
            }
        }
        let counts: Vec<usize> = (0..s.chains.len()).map(|c| s.draws_in(c)).collect();
        if counts.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::Dimension(format!("chains have unequal draw counts {counts:?}")));
        }
        Ok(s)
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    fn draws_in(&self, chain: usize) -> usize {
        self.chains[chain].values.len() / self.ncols().max(1)
    }

    /// Kept draws per chain.
    pub fn draws_per_chain(&self) -> usize {
        if self.chains.is_empty() {
            0
        } else {
            self.draws_in(0)
        }
    }

    pub fn total_draws(&self) -> usize {
        self.draws_per_chain() * self.n_chains()
    }

    /// Column index for a name. Accepts exact column names and a few
    /// aliases: `beta1` (treatment coefficient), `a1`, `H1`, `xi1`, `xi2`,
    /// `gamma1` (1-based, in column order).
    pub fn index_of(&self, name: &str) -> Result<usize> {
        if let Some(i) = self.columns.iter().position(|c| c == name) {
            return Ok(i);
        }
        let alias = |block: &str, k: usize| -> Option<usize> {
            let b = self.block(block)?;
            (k >= 1 && k <= b.len).then(|| b.start + k - 1)
        };
        let parsed = name
            .char_indices()
            .find(|(_, c)| c.is_ascii_digit())
            .and_then(|(pos, _)| Some((&name[..pos], name[pos..].parse::<usize>().ok()?)));
        let hit = match parsed {
            Some(("beta", k)) => alias("beta", k + 1),
            Some(("a", k)) => alias("a", k),
            Some(("H", k)) => alias("H", k),
            Some(("xi", k)) => alias("xi", k),
            Some(("gamma", k)) => alias("gamma", k),
            _ => None,
        };
        hit.ok_or_else(|| Error::UnknownName(name.to_string()))
    }

    pub fn block(&self, name: &str) -> Option<&BlockSpec> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Draws of one column, per chain.
    pub fn per_chain(&self, name: &str) -> Result<Vec<Vec<f64>>> {
        let j = self.index_of(name)?;
        Ok(self.per_chain_index(j))
    }

    pub fn per_chain_index(&self, j: usize) -> Vec<Vec<f64>> {
        let w = self.ncols();
        self.chains
            .iter()
            .map(|c| c.values.iter().skip(j).step_by(w).copied().collect())
            .collect()
    }

    /// Draws of one column, chains concatenated in id order.
    pub fn pooled(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.per_chain(name)?.concat())
    }

    pub fn pooled_index(&self, j: usize) -> Vec<f64> {
        self.per_chain_index(j).concat()
    }

    /// The pooled draws as (draws × dim) for a block.
    pub fn block_draws(&self, name: &str) -> Result<Vec<Vec<f64>>> {
        let b = self.block(name).ok_or_else(|| Error::UnknownName(name.to_string()))?;
        let w = self.ncols();
        Ok(self
            .chains
            .iter()
            .flat_map(|c| c.values.chunks(w).map(|row| row[b.start..b.start + b.len].to_vec()))
            .collect())
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let w = self.ncols();
        for b in &self.blocks {
            let path = dir.join(format!("{}.csv", b.name));
            let mut wr = csv::Writer::from_path(&path)?;
            let mut header = vec!["chain".to_string(), "draw".to_string()];
            header.extend(self.columns[b.start..b.start + b.len].iter().cloned());
            wr.write_record(&header)?;
            for c in &self.chains {
                for (d, row) in c.values.chunks(w).enumerate() {
                    let mut rec = vec![c.chain_id.to_string(), d.to_string()];
                    rec.extend(row[b.start..b.start + b.len].iter().map(|v| format!("{v}")));
                    wr.write_record(&rec)?;
                }
            }
            wr.flush().map_err(|e| Error::io(&path, e))?;
        }
        let manifest = Manifest {
            format: "lhfi-samples-1".into(),
            meta: self.meta.clone(),
            blocks: self.blocks.clone(),
            columns: self.columns.clone(),
            chains: self
                .chains
                .iter()
                .enumerate()
                .map(|(i, c)| ChainEntry {
                    chain_id: c.chain_id,
                    draws: self.draws_in(i),
                    acceptance: c.acceptance,
                })
                .collect(),
        };
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let w = manifest.columns.len();
        let mut chains: Vec<ChainDraws> = manifest
            .chains
            .iter()
            .map(|c| ChainDraws {
                chain_id: c.chain_id,
                values: vec![f64::NAN; c.draws * w],
                acceptance: c.acceptance,
            })
            .collect();
        for b in &manifest.blocks {
            let path = dir.join(format!("{}.csv", b.name));
            let mut rd = csv::Reader::from_path(&path)?;
            let header = rd.headers()?.clone();
            if header.len() != b.len + 2 || header.iter().skip(2).ne(manifest.columns[b.start..b.start + b.len].iter()) {
                return Err(Error::Schema(format!("{} header does not match manifest", path.display())));
            }
            for rec in rd.records() {
                let rec = rec?;
                let parse = |s: &str| -> Result<f64> {
                    s.parse::<f64>()
                        .map_err(|_| Error::Schema(format!("{}: bad number {s:?}", path.display())))
                };
                let chain_id: u64 = rec[0]
                    .parse()
                    .map_err(|_| Error::Schema(format!("{}: bad chain id", path.display())))?;
                let draw: usize = rec[1]
                    .parse()
                    .map_err(|_| Error::Schema(format!("{}: bad draw index", path.display())))?;
                let c = chains
                    .iter_mut()
                    .find(|c| c.chain_id == chain_id)
                    .ok_or_else(|| Error::Schema(format!("{}: unknown chain {chain_id}", path.display())))?;
                if (draw + 1) * w > c.values.len() {
                    return Err(Error::Schema(format!("{}: draw {draw} out of range", path.display())));
                }
                for k in 0..b.len {
                    c.values[draw * w + b.start + k] = parse(&rec[k + 2])?;
                }
            }
        }
        let s = Self::new(manifest.meta, chains)?;
        if s.columns != manifest.columns {
            return Err(Error::Schema("manifest columns do not match the model layout".into()));
        }
        Ok(s)
    }
}
