//! Checkpoint documents: UTF-8 JSON where every real number is a C99
//! hexadecimal float string, so saving and loading is bit-exact.
//!
//! Schema (`format = "svss-checkpoint"`, `version = 1`):
//!
//! ```text
//! q, d, m, iterations, seed        integers
//! config                           mode, ws, ws_factor, ng, mc_samples, pair_rate, max_pairs,
//!                                  step_size, betas, adam_eps, prior_scale_factor, init
//! params                           weights[q], means[q][d], scales[q][d], noise_var
//! prior                            per component: means[rows][d], scales[rows][d]
//! allocation                       counts[q]
//! standardizer                     optional; kept_columns, x_mean, x_std, y_mean, y_std, dropped_columns
//! data                             optional; path, target, header, split_fraction, split_seed
//! ```

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::hexfloat;
use crate::inference::kl::{ComponentPrior, PriorSpec};
use crate::inference::train::{Mode, TrainConfig};
use crate::kernel::SmParams;

const FORMAT: &str = "svss-checkpoint";
const VERSION: u32 = 1;

/// An `f64` serialized as a hexadecimal float string.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Hex(f64);

impl Serialize for Hex {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&hexfloat::format(self.0))
    }
}

impl<'de> Deserialize<'de> for Hex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        hexfloat::parse(&s)
            .map(Hex)
            .ok_or_else(|| serde::de::Error::custom(format!("{s:?} is not a hexadecimal float")))
    }
}

fn hex_vec(v: impl IntoIterator<Item = f64>) -> Vec<Hex> {
    v.into_iter().map(Hex).collect()
}

fn hex_rows(m: &DMatrix<f64>) -> Vec<Vec<Hex>> {
    m.row_iter().map(|r| hex_vec(r.iter().copied())).collect()
}

fn from_rows(rows: &[Vec<Hex>], what: &str) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Checkpoint(format!("{what} rows have unequal lengths")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j].0))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    mode: String,
    ws: bool,
    ws_factor: String,
    ng: bool,
    mc_samples: usize,
    pair_rate: Hex,
    max_pairs: Option<usize>,
    step_size: Hex,
    betas: [Hex; 2],
    adam_eps: Hex,
    prior_scale_factor: Hex,
    init: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsDoc {
    weights: Vec<Hex>,
    means: Vec<Vec<Hex>>,
    scales: Vec<Vec<Hex>>,
    noise_var: Hex,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PriorDoc {
    means: Vec<Vec<Hex>>,
    scales: Vec<Vec<Hex>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StandardizerDoc {
    kept_columns: Vec<usize>,
    dropped_columns: Vec<usize>,
    x_mean: Vec<Hex>,
    x_std: Vec<Hex>,
    y_mean: Hex,
    y_std: Hex,
}

/// Where the training data came from, so prediction can rebuild the same split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub path: String,
    pub target: String,
    pub header: bool,
    pub split_fraction: Option<f64>,
    pub split_seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    format: String,
    version: u32,
    q: usize,
    d: usize,
    m: usize,
    iterations: usize,
    seed: u64,
    config: ConfigDoc,
    params: ParamsDoc,
    prior: Vec<PriorDoc>,
    allocation: Vec<usize>,
    standardizer: Option<StandardizerDoc>,
    data: Option<DataSource>,
}

/// Everything needed to predict with, or resume inspection of, a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Completed optimizer iterations.
    pub iterations: usize,
    pub params: SmParams,
    pub prior: PriorSpec,
    pub allocation: Vec<usize>,
    pub standardizer: Option<Standardizer>,
    pub data: Option<DataSource>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let c = &self.config;
        let doc = Document {
            format: FORMAT.into(),
            version: VERSION,
            q: self.params.q(),
            d: self.params.dims(),
            m: c.m,
            iterations: self.iterations,
            seed: c.seed,
            config: ConfigDoc {
                mode: c.mode.to_string(),
                ws: c.use_ws,
                ws_factor: c.ws_factor.to_string(),
                ng: c.use_ng,
                mc_samples: c.mc_samples,
                pair_rate: Hex(c.pair_rate),
                max_pairs: c.max_pairs,
                step_size: Hex(c.step_size),
                betas: [Hex(c.betas.0), Hex(c.betas.1)],
                adam_eps: Hex(c.adam_eps),
                prior_scale_factor: Hex(c.prior_scale_factor),
                init: c.init.to_string(),
            },
            params: ParamsDoc {
                weights: hex_vec(self.params.weights.iter().copied()),
                means: hex_rows(&self.params.means),
                scales: hex_rows(&self.params.scales),
                noise_var: Hex(self.params.noise_var),
            },
            prior: self
                .prior
                .components
                .iter()
                .map(|c| PriorDoc {
                    means: hex_rows(&c.means),
                    scales: hex_rows(&c.scales),
                })
                .collect(),
            allocation: self.allocation.clone(),
            standardizer: self.standardizer.as_ref().map(|s| StandardizerDoc {
                kept_columns: s.kept_columns.clone(),
                dropped_columns: s.dropped_columns.clone(),
                x_mean: hex_vec(s.x_mean.iter().copied()),
                x_std: hex_vec(s.x_std.iter().copied()),
                y_mean: Hex(s.y_mean),
                y_std: Hex(s.y_std),
            }),
            data: self.data.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("checkpoint serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Document = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if doc.format != FORMAT || doc.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported document {:?} version {}",
                doc.format, doc.version
            )));
        }
        let mode: Mode = doc
            .config
            .mode
            .parse()
            .map_err(|_| Error::Checkpoint(format!("unknown mode {:?}", doc.config.mode)))?;
        let config = TrainConfig {
            mode,
            use_ws: doc.config.ws,
            ws_factor: doc
                .config
                .ws_factor
                .parse()
                .map_err(|_| Error::Checkpoint(format!("unknown ws_factor {:?}", doc.config.ws_factor)))?,
            use_ng: doc.config.ng,
            mc_samples: doc.config.mc_samples,
            pair_rate: doc.config.pair_rate.0,
            max_pairs: doc.config.max_pairs,
            iterations: doc.iterations,
            step_size: doc.config.step_size.0,
            betas: (doc.config.betas[0].0, doc.config.betas[1].0),
            adam_eps: doc.config.adam_eps.0,
            seed: doc.seed,
            m: doc.m,
            q: doc.q,
            prior_scale_factor: doc.config.prior_scale_factor.0,
            init: doc
                .config
                .init
                .parse()
                .map_err(|_| Error::Checkpoint(format!("unknown init {:?}", doc.config.init)))?,
        };
        let params = SmParams {
            weights: doc.params.weights.iter().map(|h| h.0).collect(),
            means: from_rows(&doc.params.means, "means")?,
            scales: from_rows(&doc.params.scales, "scales")?,
            noise_var: doc.params.noise_var.0,
        };
        if params.weights.len() != doc.q
            || params.means.shape() != (doc.q, doc.d)
            || params.scales.shape() != (doc.q, doc.d)
        {
            return Err(Error::Checkpoint(format!(
                "parameter shapes disagree with q = {}, d = {}",
                doc.q, doc.d
            )));
        }
        params
            .validate()
            .map_err(|e| Error::Checkpoint(format!("stored parameters invalid: {e}")))?;
        let prior = PriorSpec {
            components: doc
                .prior
                .iter()
                .map(|p| {
                    Ok(ComponentPrior {
                        means: from_rows(&p.means, "prior means")?,
                        scales: from_rows(&p.scales, "prior scales")?,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        };
        prior
            .validate(&params)
            .map_err(|e| Error::Checkpoint(format!("stored prior invalid: {e}")))?;
        if doc.allocation.len() != doc.q || doc.allocation.iter().sum::<usize>() != doc.m {
            return Err(Error::Checkpoint("allocation does not sum to m over q components".into()));
        }
        let standardizer = doc.standardizer.map(|s| Standardizer {
            kept_columns: s.kept_columns,
            dropped_columns: s.dropped_columns,
            x_mean: s.x_mean.iter().map(|h| h.0).collect(),
            x_std: s.x_std.iter().map(|h| h.0).collect(),
            y_mean: s.y_mean.0,
            y_std: s.y_std.0,
        });
        if let Some(s) = &standardizer {
            if s.kept_columns.len() != doc.d || s.x_mean.len() != doc.d || s.x_std.len() != doc.d {
                return Err(Error::Checkpoint("standardizer width disagrees with d".into()));
            }
        }
        Ok(Checkpoint {
            config,
            iterations: doc.iterations,
            params,
            prior,
            allocation: doc.allocation,
            standardizer,
            data: doc.data,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
