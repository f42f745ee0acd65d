// SPDX-License-Identifier: Apache-2.0

//! Checkpoint files: one line of JSON header, a newline, then the raw
//! little-endian `f64` payload of every section in header order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::nets::{StudentArch, TeacherArch};
use super::params::ParamStore;
use crate::error::{Error, Result};

pub const FORMAT: &str = "ttfm-checkpoint-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum ModelArch {
    Teacher(TeacherArch),
    Student(StudentArch),
}

impl ModelArch {
    pub fn dim(&self) -> usize {
        match self {
            ModelArch::Teacher(a) => a.dim,
            ModelArch::Student(a) => a.dim,
        }
    }

    fn layout(&self) -> Vec<super::params::LayerShape> {
        match self {
            ModelArch::Teacher(a) => a.mlp.layout(),
            ModelArch::Student(a) => a.mlp.layout(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub model: ModelArch,
    pub seed: u64,
    pub iteration: u64,
    pub sigma_min: f64,
    pub sections: Vec<Section>,
    /// Free-form run metadata (loss spec, dataset, …).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<ParamStore>,
}

impl Checkpoint {
    /// Section names are attached to `tensors` in order.
    pub fn new(
        model: ModelArch,
        seed: u64,
        iteration: u64,
        sigma_min: f64,
        named: Vec<(String, ParamStore)>,
    ) -> Result<Self> {
        let layout = model.layout();
        let mut sections = Vec::new();
        let mut tensors = Vec::new();
        for (name, p) in named {
            if p.layout() != layout.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "section {name} does not match the model layout"
                )));
            }
            sections.push(Section { name, len: p.len() });
            tensors.push(p);
        }
        Ok(Self {
            header: CheckpointHeader {
                format: FORMAT.into(),
                model,
                seed,
                iteration,
                sigma_min,
                sections,
                extra: BTreeMap::new(),
            },
            tensors,
        })
    }

    pub fn section(&self, name: &str) -> Option<&ParamStore> {
        self.header
            .sections
            .iter()
            .position(|s| s.name == name)
            .map(|i| &self.tensors[i])
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(&self.header)?;
        out.push(b'\n');
        for t in &self.tensors {
            out.extend(t.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("missing header terminator".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])?;
        if header.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format {:?}",
                header.format
            )));
        }
        match &header.model {
            ModelArch::Teacher(a) => a.validate()?,
            ModelArch::Student(a) => a.validate()?,
        }
        let layout = header.model.layout();
        let mut payload = &bytes[nl + 1..];
        let mut tensors = Vec::with_capacity(header.sections.len());
        for sec in &header.sections {
            let n = sec.len * 8;
            if payload.len() < n {
                return Err(Error::Checkpoint(format!("section {} is truncated", sec.name)));
            }
            tensors.push(ParamStore::from_le_bytes(layout.clone(), &payload[..n])?);
            payload = &payload[n..];
        }
        if !payload.is_empty() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last section",
                payload.len()
            )));
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
