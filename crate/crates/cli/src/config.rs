//! Data, catalog and download configuration.

use std::path::{Path, PathBuf};

use cbi_core::catalog::load_catalog;
use cbi_core::table::{load_dir, LoadOptions, LoadReport};
use cbi_core::{builtin_registry, Assistant, CatalogError, MetadataCatalog, TableError, TableSet};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("catalog {path}: {source}")]
    Catalog { path: String, source: CatalogError },
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config {path}: {msg}")]
    Parse { path: String, msg: String },
}

/// The committed fixture tables.
pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn catalog(path: Option<&Path>) -> Result<MetadataCatalog, ConfigError> {
    let Some(path) = path else {
        return Ok(MetadataCatalog::shipped());
    };
    let file = std::fs::File::open(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_catalog(file).map_err(|source| ConfigError::Catalog {
        path: path.display().to_string(),
        source,
    })
}

/// Loads every catalog table from `data_dir` and wraps it in an assistant.
pub fn assistant(data_dir: &Path, catalog_path: Option<&Path>) -> Result<Assistant, ConfigError> {
    let catalog = catalog(catalog_path)?;
    let reports = load_dir(data_dir, &catalog, &LoadOptions::default())?;
    let tables: TableSet = reports.into_iter().map(|r| r.table).collect();
    Ok(Assistant::new(builtin_registry(), catalog, tables))
}

/// Loads without enforcing the rejection cap so the full report is available.
pub fn inspect(data_dir: &Path, catalog: &MetadataCatalog) -> Result<Vec<LoadReport>, ConfigError> {
    let options = LoadOptions {
        max_reject_fraction: 1.0,
        ..LoadOptions::default()
    };
    Ok(load_dir(data_dir, catalog, &options)?)
}

/// Remote yearly files.
///
/// ```toml
/// cache_dir = "cache"
///
/// [[source]]
/// year = 2019
/// table = "characteristics"
/// url = "https://example.org/caracteristiques-2019.csv"
/// sha256 = "..."          # optional
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownloadConfig {
    pub cache_dir: PathBuf,
    #[serde(default, rename = "source")]
    pub sources: Vec<Source>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Source {
    pub year: i32,
    pub table: String,
    pub url: String,
    #[serde(default)]
    pub sha256: Option<String>,
}

impl DownloadConfig {
    /// Reads a config file; a relative `cache_dir` is taken relative to it.
    pub fn read(path: &Path) -> Result<DownloadConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg: DownloadConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        if cfg.cache_dir.is_relative() {
            if let Some(parent) = path.parent() {
                cfg.cache_dir = parent.join(&cfg.cache_dir);
            }
        }
        Ok(cfg)
    }

    pub fn years(&self) -> Vec<i32> {
        let mut y: Vec<i32> = self.sources.iter().map(|s| s.year).collect();
        y.sort_unstable();
        y.dedup();
        y
    }
}
