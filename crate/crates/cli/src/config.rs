// SPDX-License-Identifier: Apache-2.0

//! Run configuration loading with field-path error reporting.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ttfm::pipeline::RunConfig;
use ttfm::DatasetKind;

use crate::Common;

pub const DEFAULT_OUTPUT: &str = "out";

/// Parses a JSON run configuration. Unknown or mistyped fields are reported
/// with their path, e.g. `train.loss.tau`.
pub fn parse(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        anyhow::anyhow!("config field `{path}`: {}", e.inner())
    })
}

/// Config file (or defaults) with the command-line overrides applied and
/// validated.
pub fn load(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.output {
        cfg.output_dir = Some(out.clone());
    }
    cfg.validate().context("invalid config")?;
    if let DatasetKind::CsvPointCloud { path } = &cfg.dataset.kind {
        require_file(path, "dataset.path")?;
    }
    let out = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT));
    Ok((cfg, out))
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what}: file {} does not exist", path.display());
    }
    Ok(())
}
