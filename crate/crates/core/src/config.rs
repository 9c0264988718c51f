//! Run configuration: one TOML document with `[model]`, `[data]`,
//! `[training]` and `[eval]` tables. Every key is optional and unknown keys
//! are rejected with the full dotted path.
//!
//! ```toml
//! [model]
//! arch = "fno"            # fno | conv_baseline | linear
//! width = 32
//! modes = 16
//!
//! [data]
//! resolution = 128        # native grid, power of two
//! count = 576
//! n_train = 512
//!
//! [data.grf]
//! alpha = 3.0
//!
//! [training]
//! epochs = 24
//! resolutions = [32]
//! loss = { terms = [["relative_l2", 1.0]] }
//!
//! [eval]
//! resolutions = [16, 32, 64, 128]
//! ```

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::GrfSpec;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub grf: GrfSpec,
    pub dim: usize,
    /// Points per axis of the native grid.
    pub resolution: usize,
    /// Samples generated; the first `n_train` form the training split.
    pub count: usize,
    pub n_train: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            // alpha = 2 leaves enough forcing energy near the 16^2 Nyquist
            // band that even the exact solver is 4x worse at 16 than at 32
            grf: GrfSpec {
                alpha: 3.0,
                ..GrfSpec::default()
            },
            dim: 2,
            resolution: 128,
            count: 576,
            n_train: 512,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub resolutions: Vec<usize>,
    pub train_resolution: usize,
    pub query_resolution: usize,
    pub slack: f64,
    /// Box-kernel radius of the collapse demo.
    pub collapse_radius: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            resolutions: vec![16, 32, 64, 128],
            train_resolution: 32,
            query_resolution: 64,
            slack: 0.2,
            collapse_radius: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub training: TrainConfig,
    pub eval: EvalConfig,
}

fn config_err(key: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

/// `unknown field `x`, expected ...` -> `x`.
fn unknown_field(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("unknown field `")?;
    rest.split('`').next()
}

fn section<T: DeserializeOwned + Default>(table: &toml::Table, name: &str) -> Result<T> {
    let Some(value) = table.get(name) else {
        return Ok(T::default());
    };
    T::deserialize(value.clone()).map_err(|e| {
        let msg = e.message().to_string();
        match unknown_field(&msg) {
            Some(field) => config_err(format!("{name}.{field}"), "unknown key"),
            None => config_err(name, msg),
        }
    })
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| config_err("<document>", e.message()))?;
        for key in table.keys() {
            if !["model", "data", "training", "eval"].contains(&key.as_str()) {
                return Err(config_err(key.clone(), "unknown section"));
            }
        }
        let config = Config {
            model: section(&table, "model")?,
            data: section(&table, "data")?,
            training: section(&table, "training")?,
            eval: section(&table, "eval")?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()?;
        let d = &self.data;
        if d.dim != self.model.dim {
            return Err(config_err("data.dim", format!("{} differs from model.dim = {}", d.dim, self.model.dim)));
        }
        if !d.resolution.is_power_of_two() || d.resolution < 2 {
            return Err(config_err("data.resolution", format!("{} is not a power of two", d.resolution)));
        }
        if d.n_train == 0 || d.n_train >= d.count {
            return Err(config_err(
                "data.n_train",
                format!("must lie in 1..{} (data.count), got {}", d.count, d.n_train),
            ));
        }
        d.grf.validate(d.dim).map_err(|e| config_err("data.grf", e.to_string()))?;
        let fits = |r: usize| r > 0 && r <= d.resolution && d.resolution % r == 0;
        for (key, rs) in [
            ("training.resolutions", &self.training.resolutions),
            ("eval.resolutions", &self.eval.resolutions),
        ] {
            if let Some(r) = rs.iter().find(|&&r| !fits(r)) {
                return Err(config_err(key, format!("{r} is not obtainable from the native {}", d.resolution)));
            }
        }
        for stage in &self.training.curriculum {
            if let Some(r) = stage.resolutions.iter().find(|&&r| !fits(r)) {
                return Err(config_err(
                    "training.curriculum",
                    format!("{r} is not obtainable from the native {}", d.resolution),
                ));
            }
        }
        let e = &self.eval;
        if e.resolutions.is_empty() {
            return Err(config_err("eval.resolutions", "must not be empty"));
        }
        for (key, r) in [("eval.train_resolution", e.train_resolution), ("eval.query_resolution", e.query_resolution)] {
            if !fits(r) {
                return Err(config_err(key, format!("{r} is not obtainable from the native {}", d.resolution)));
            }
        }
        if e.train_resolution == e.query_resolution {
            return Err(config_err("eval.query_resolution", "must differ from eval.train_resolution"));
        }
        if !(e.slack >= 0.0) {
            return Err(config_err("eval.slack", "must be nonnegative"));
        }
        if !(e.collapse_radius > 0.0 && e.collapse_radius < 0.5) {
            return Err(config_err("eval.collapse_radius", "must lie in (0, 0.5)"));
        }
        Ok(())
    }
}
