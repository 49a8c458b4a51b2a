//! JSON checkpoint of a [`PolicyNet`]: a shape manifest plus the flat weights.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::lstm::PolicyNet;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "kou-wdra-policy/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub input_size: usize,
    pub hidden_size: usize,
    pub manifest: Vec<ShapeEntry>,
    /// Affine standardisation applied to raw features: `(raw - offset) / scale`.
    pub feature_offset: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Checkpoint {
    pub fn new(net: &PolicyNet, feature_offset: Vec<f64>, feature_scale: Vec<f64>) -> Self {
        let manifest = net
            .blocks()
            .into_iter()
            .map(|b| ShapeEntry {
                name: b.name,
                offset: b.start,
                len: b.len,
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            input_size: net.input_size(),
            hidden_size: net.hidden_size(),
            manifest,
            feature_offset,
            feature_scale,
            weights: net.to_flat(),
        }
    }

    pub fn to_net(&self) -> Result<PolicyNet> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("unknown checkpoint format `{}`", self.format)));
        }
        let mut net = PolicyNet::zeros(self.input_size, self.hidden_size);
        let expected: Vec<_> = net.blocks().into_iter().map(|b| (b.name, b.start, b.len)).collect();
        let found: Vec<_> = self
            .manifest
            .iter()
            .map(|e| (e.name.clone(), e.offset, e.len))
            .collect();
        if expected != found {
            return Err(Error::Shape("checkpoint manifest does not match network shape".into()));
        }
        net.set_flat(&self.weights)?;
        Ok(net)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
