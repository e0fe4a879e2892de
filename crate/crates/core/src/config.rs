//! Experiment configuration. Every field has a default, so an empty file is
//! a valid configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::biogen::Attribute;
use crate::calibration::{adaptive_partition, log_partition_with_floor, BinPartition, DEFAULT_MASS_FLOOR};
use crate::corpus::{FactSchema, ReplicationSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum UniverseConfig {
    Synth {
        fields: Vec<String>,
        pool_sizes: Vec<u64>,
        count: usize,
    },
    Tsv {
        path: PathBuf,
        fields: Vec<String>,
        #[serde(default = "default_delimiter")]
        delimiter: char,
        #[serde(default)]
        skip_header: bool,
    },
}

fn default_delimiter() -> char {
    '\t'
}

impl Default for UniverseConfig {
    /// Six movie fields over a 50,000-fact universe. Every field except the
    /// director is effectively unique per fact, so the director is the only
    /// token shared across facts and the place where a bigram model can
    /// splice two facts together.
    fn default() -> Self {
        UniverseConfig::Synth {
            fields: FactSchema::movie().field_names().to_vec(),
            pool_sizes: vec![1_000_000, 1_000_000, 1_000_000, 4_000, 1_000_000, 1_000_000],
            count: 50_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Pareto,
    Gaussian,
    Poisson,
}

/// A one-parameter family of replication specs: Pareto shapes, Gaussian
/// means or Poisson rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicationGrid {
    pub family: Family,
    pub values: Vec<f64>,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default = "one")]
    pub std_dev: f64,
}

fn one() -> f64 {
    1.0
}

impl ReplicationGrid {
    pub fn pareto(shapes: Vec<f64>) -> Self {
        ReplicationGrid {
            family: Family::Pareto,
            values: shapes,
            scale: 1.0,
            std_dev: 1.0,
        }
    }

    pub fn spec(&self, value: f64) -> ReplicationSpec {
        match self.family {
            Family::Pareto => ReplicationSpec::Pareto {
                shape: value,
                scale: self.scale,
            },
            Family::Gaussian => ReplicationSpec::Gaussian {
                mean: value,
                std_dev: self.std_dev,
            },
            Family::Poisson => ReplicationSpec::Poisson { rate: value },
        }
    }

    pub fn specs(&self) -> Vec<ReplicationSpec> {
        self.values.iter().map(|&v| self.spec(v)).collect()
    }
}

/// Twelve evenly spaced shapes from 1.05 to 3.0.
pub fn default_shapes() -> Vec<f64> {
    (0..12).map(|i| 1.05 + 1.95 * i as f64 / 11.0).collect()
}

impl Default for ReplicationGrid {
    fn default() -> Self {
        ReplicationGrid::pareto(default_shapes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "lowercase", deny_unknown_fields)]
pub enum BinningConfig {
    Logarithmic {
        epsilon: f64,
        #[serde(default = "default_floor")]
        floor: f64,
    },
    /// Equal-mass bins over the model's scores of the training statements.
    Adaptive { bins: usize },
}

fn default_floor() -> f64 {
    DEFAULT_MASS_FLOOR
}

impl Default for BinningConfig {
    fn default() -> Self {
        BinningConfig::Logarithmic {
            epsilon: 0.1,
            floor: DEFAULT_MASS_FLOOR,
        }
    }
}

impl BinningConfig {
    /// The partition for one trial; adaptive partitions are fitted to
    /// `scores`.
    pub fn partition(&self, scores: &[f64]) -> Result<BinPartition> {
        match *self {
            BinningConfig::Logarithmic { epsilon, floor } => log_partition_with_floor(epsilon, floor),
            BinningConfig::Adaptive { bins } => adaptive_partition(scores, bins),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    pub m: f64,
    pub delta: f64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        BoundConfig { m: 10.0, delta: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpweightConfig {
    /// Replication settings of the cells to intervene on.
    pub replication: ReplicationGrid,
    /// Subset sizes `k`, counted in distinct training statements.
    pub subset_sizes: Vec<usize>,
    pub weights: Vec<u64>,
}

impl Default for UpweightConfig {
    fn default() -> Self {
        UpweightConfig {
            replication: ReplicationGrid::pareto(vec![3.0]),
            subset_sizes: vec![0, 50, 125, 250, 500],
            weights: vec![1, 5, 10],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiogenConfig {
    /// Distinct biographies.
    pub count: usize,
    pub replication: ReplicationSpec,
    /// Training sample drawn with replacement from the duplicated corpus.
    pub sample_size: usize,
    /// Directory of replacement pool files.
    pub pools_dir: Option<PathBuf>,
    /// Texts corrupted in the evaluator self-check.
    pub corrupt_count: usize,
    pub corrupt_field: Attribute,
}

impl Default for BiogenConfig {
    fn default() -> Self {
        BiogenConfig {
            count: 10_000,
            replication: ReplicationSpec::pareto(1.5),
            sample_size: 10_000,
            pools_dir: None,
            corrupt_count: 500,
            corrupt_field: Attribute::Employer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Training sample size.
    pub n: usize,
    pub order: usize,
    /// Statements generated per trial.
    pub generations: usize,
    pub trials: usize,
    pub out: Option<PathBuf>,
    pub universe: UniverseConfig,
    pub replication: ReplicationGrid,
    pub binning: BinningConfig,
    pub bounds: BoundConfig,
    pub upweight: UpweightConfig,
    pub biogen: BiogenConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            n: 5_000,
            order: 2,
            generations: 5_000,
            trials: 20,
            out: None,
            universe: UniverseConfig::default(),
            replication: ReplicationGrid::default(),
            binning: BinningConfig::default(),
            bounds: BoundConfig::default(),
            upweight: UpweightConfig::default(),
            biogen: BiogenConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::invalid("config", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::invalid("config", e.to_string()))
    }

    /// Checks every field before any work starts.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n", "sample size must be positive"));
        }
        if self.order == 0 {
            return Err(Error::invalid("order", "order must be at least 1"));
        }
        if self.generations == 0 {
            return Err(Error::invalid("generations", "must generate at least one statement"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials", "need at least one trial per cell"));
        }
        match &self.universe {
            UniverseConfig::Synth {
                fields,
                pool_sizes,
                count,
            } => {
                if fields.len() != pool_sizes.len() {
                    return Err(Error::invalid("universe", "one pool size per field"));
                }
                if fields.len() <= self.order.saturating_sub(1) {
                    return Err(Error::invalid("universe", "statements must be longer than the context"));
                }
                if *count == 0 {
                    return Err(Error::invalid("universe", "count must be positive"));
                }
            }
            UniverseConfig::Tsv { fields, .. } => {
                if fields.is_empty() {
                    return Err(Error::invalid("universe", "tsv universe needs field names"));
                }
            }
        }
        for grid in [&self.replication, &self.upweight.replication] {
            if grid.values.is_empty() {
                return Err(Error::invalid("replication", "grid has no values"));
            }
            for spec in grid.specs() {
                spec.validate()?;
            }
        }
        match self.binning {
            BinningConfig::Logarithmic { epsilon, floor } => {
                log_partition_with_floor(epsilon, floor)?;
            }
            BinningConfig::Adaptive { bins } if bins < 2 => {
                return Err(Error::invalid("binning", "adaptive binning needs at least 2 bins"));
            }
            BinningConfig::Adaptive { .. } => {}
        }
        let BoundConfig { m, delta } = self.bounds;
        if m.is_nan() || m <= 0.0 || delta.is_nan() || delta <= 0.0 || delta >= 1.0 {
            return Err(Error::invalid("bounds", "need m > 0 and delta in (0, 1)"));
        }
        if self.upweight.weights.contains(&0) {
            return Err(Error::invalid("upweight", "weights must be positive"));
        }
        if let Some(&k) = self.upweight.subset_sizes.iter().find(|&&k| k > self.n) {
            return Err(Error::invalid(
                "upweight",
                format!("subset size {k} exceeds the sample size {}", self.n),
            ));
        }
        self.biogen.replication.validate()?;
        if self.biogen.count == 0 || self.biogen.sample_size == 0 {
            return Err(Error::invalid("biogen", "count and sample_size must be positive"));
        }
        if self.biogen.corrupt_field == Attribute::Name {
            return Err(Error::invalid("biogen", "corrupt_field must be a scored attribute"));
        }
        if self.biogen.corrupt_count > self.biogen.count {
            return Err(Error::invalid("biogen", "corrupt_count exceeds the corpus size"));
        }
        Ok(())
    }

    /// Short hex digest of the canonical JSON form, stamped on every row.
    /// The output directory does not take part.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&ExperimentConfig {
            out: None,
            ..self.clone()
        })
        .expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}
