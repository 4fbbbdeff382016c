//! Strict TOML configuration for the command-line tools.
//!
//! Unknown keys are rejected everywhere; a typo in a hyperparameter name
//! fails loudly instead of training with a silent default. Overrides are
//! `key.path=value` strings applied on top of the file before
//! deserialization, and every run writes the fully resolved config next to
//! its outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_paired_dataset, PairedDataset, PhantomConfig};
use crate::error::{PfctError, Result};
use crate::training::{synthesize_phantom_dataset, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSourceKind {
    /// Synthetic phantom pairs generated from the run seed.
    Phantom,
    /// User-supplied paired dataset described by a JSON manifest.
    Manifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSourceKind,
    pub phantom: PhantomConfig,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub manifest_root: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSourceKind::Phantom,
            phantom: PhantomConfig::default(),
            n_train: 256,
            n_val: 16,
            n_test: 16,
            manifest_root: None,
            manifest: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    pub run: RunConfig,
    pub data: DataConfig,
}

impl AppConfig {
    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        match self.data.source {
            DataSourceKind::Phantom => {
                self.data.phantom.validate()?;
                if self.data.n_train == 0 {
                    return Err(PfctError::Config("data.n_train must be >= 1".into()));
                }
            }
            DataSourceKind::Manifest => {
                if self.data.manifest.is_none() {
                    return Err(PfctError::Config(
                        "data.manifest is required when data.source = \"manifest\"".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Materialize the configured dataset.
    pub fn load_dataset(&self) -> Result<PairedDataset> {
        match self.data.source {
            DataSourceKind::Phantom => synthesize_phantom_dataset(
                &self.data.phantom,
                self.data.n_train,
                self.data.n_val,
                self.data.n_test,
                self.run.seed,
            ),
            DataSourceKind::Manifest => {
                let manifest = self.data.manifest.as_ref().expect("validated");
                let root = self
                    .data
                    .manifest_root
                    .clone()
                    .unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).to_path_buf());
                load_paired_dataset(&root, manifest)
            }
        }
    }
}

/// Set `key.path = value` inside a TOML tree, creating tables on the way.
/// The value is parsed as a TOML literal and falls back to a string.
pub fn apply_override(root: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| PfctError::Config(format!("override '{spec}' is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(PfctError::Config(format!("override '{spec}' has an empty key")));
    }
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(t) => t["v"].clone(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut node = root;
    let segments: Vec<&str> = key.split('.').collect();
    for seg in &segments[..segments.len() - 1] {
        node = node
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| PfctError::Config(format!("override '{key}': '{seg}' is not a table")))?;
    }
    node.insert(segments.last().unwrap().to_string(), parsed);
    Ok(())
}

/// Load the config file (or start from defaults), apply overrides, and
/// validate strictly.
pub fn load_app_config(path: Option<&Path>, overrides: &[String]) -> Result<AppConfig> {
    let mut table: toml::Table = match path {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| PfctError::Config(format!("{}: {e}", p.display())))?
            .parse()
            .map_err(|e| PfctError::Config(format!("{}: {e}", p.display())))?,
        None => toml::Table::new(),
    };
    for spec in overrides {
        apply_override(&mut table, spec)?;
    }
    let cfg: AppConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| PfctError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Write the fully resolved config into the run directory.
pub fn write_resolved_config(cfg: &AppConfig, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let text = toml::to_string_pretty(cfg).map_err(|e| PfctError::Config(e.to_string()))?;
    fs::write(out_dir.join("config.toml"), text)?;
    Ok(())
}
