//! Run configuration file: TOML with one optional table per pipeline stage.
//! Every key mirrors a command-line flag; flags take precedence.
//!
//! ```toml
//! [dataset]
//! kind = "circle"
//! n = 10000
//! seed = 1
//!
//! [sketch]
//! law = "folded-gaussian"
//! kernel_var = 1e-3
//! m = 1000
//!
//! [arch]
//! latent_dim = 10
//! hidden = [10, 10, 10, 10, 10, 10, 10]
//!
//! [train]
//! n_prime = 10000
//! batch_size = 1000
//! epochs = 200
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rff_sketch::LawKind;
use crate::trainer::OptimizerKind;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub sketch: SketchSection,
    pub arch: ArchSection,
    pub train: TrainSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: Option<String>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub sigma_r: Option<f64>,
    pub radius: Option<f64>,
    pub comp_sigma: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SketchSection {
    pub law: Option<LawKind>,
    pub sigma2: Option<f64>,
    pub kernel_var: Option<f64>,
    pub m: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSection {
    pub latent_dim: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub n_prime: Option<usize>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub optimizer: Option<OptimizerKind>,
    pub learning_rate: Option<f64>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub seed: Option<u64>,
    pub resample_latents: Option<bool>,
    pub checkpoint_every: Option<usize>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }
}
