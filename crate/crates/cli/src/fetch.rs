//! Download of the yearly source files into a checksummed on-disk cache.

use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use cbi_core::table::{drop_missing, sniff_delimiter};
use cbi_core::{Column, MetadataCatalog, Table};

use crate::config::{DownloadConfig, Source};

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("{url}: {msg}")]
    Http { url: String, msg: String },
    #[error("{url}: checksum {got}, expected {expected}")]
    ChecksumMismatch { url: String, expected: String, got: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("no sources configured for year {0}")]
    NoSources(i32),
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
}

#[derive(Debug, Clone)]
pub struct Fetched {
    pub source: Source,
    pub path: PathBuf,
    pub sha256: String,
    pub cached: bool,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Cache file for a source: year, table and a digest of the URL.
pub fn cache_path(cache_dir: &Path, source: &Source) -> PathBuf {
    let tag = &sha256_hex(source.url.as_bytes())[..16];
    cache_dir.join(format!("{}-{}-{tag}.csv", source.year, source.table))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FetchError + '_ {
    move |source| FetchError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn verify(source: &Source, bytes: &[u8]) -> Result<String, FetchError> {
    let got = sha256_hex(bytes);
    match &source.sha256 {
        Some(expected) if !expected.eq_ignore_ascii_case(&got) => Err(FetchError::ChecksumMismatch {
            url: source.url.clone(),
            expected: expected.clone(),
            got,
        }),
        _ => Ok(got),
    }
}

/// Returns the cached copy when present and valid, otherwise downloads it.
pub fn fetch_source(cache_dir: &Path, source: &Source) -> Result<Fetched, FetchError> {
    let path = cache_path(cache_dir, source);
    if let Ok(bytes) = std::fs::read(&path) {
        if let Ok(sha256) = verify(source, &bytes) {
            return Ok(Fetched {
                source: source.clone(),
                path,
                sha256,
                cached: true,
            });
        }
        tracing::warn!("cached {} fails its checksum, downloading again", path.display());
    }

    let http = |msg: String| FetchError::Http {
        url: source.url.clone(),
        msg,
    };
    let resp = reqwest::blocking::get(&source.url).map_err(|e| http(e.to_string()))?;
    if !resp.status().is_success() {
        return Err(http(format!("status {}", resp.status())));
    }
    let bytes = resp.bytes().map_err(|e| http(e.to_string()))?;
    let sha256 = verify(source, &bytes)?;

    std::fs::create_dir_all(cache_dir).map_err(io_err(cache_dir))?;
    let tmp = path.with_extension("part");
    let mut f = std::fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(&bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, &path).map_err(io_err(&path))?;
    Ok(Fetched {
        source: source.clone(),
        path,
        sha256,
        cached: false,
    })
}

/// Fetches every source of `year` and copies them to `<data_dir>/<table>.csv`.
pub fn fetch_year(cfg: &DownloadConfig, year: i32, data_dir: &Path) -> Result<Vec<Fetched>, FetchError> {
    let sources: Vec<&Source> = cfg.sources.iter().filter(|s| s.year == year).collect();
    if sources.is_empty() {
        return Err(FetchError::NoSources(year));
    }
    std::fs::create_dir_all(data_dir).map_err(io_err(data_dir))?;
    let mut out = Vec::new();
    for s in sources {
        let f = fetch_source(&cfg.cache_dir, s)?;
        let dest = data_dir.join(format!("{}.csv", s.table));
        std::fs::copy(&f.path, &dest).map_err(io_err(&dest))?;
        out.push(f);
    }
    Ok(out)
}

/// Rows of one column that `drop_missing` removes, read straight from a
/// downloaded file: `(rows, removed)`. Only the one column is parsed, so
/// schema drift elsewhere in the file does not matter.
pub fn missing_in(path: &Path, table: &str, column: &str, catalog: &MetadataCatalog) -> Result<(usize, usize), FetchError> {
    let parse = |msg: String| FetchError::Parse {
        path: path.display().to_string(),
        msg,
    };
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let text = String::from_utf8_lossy(&bytes);
    let text = text.strip_prefix('\u{feff}').unwrap_or(&text);
    let meta = catalog
        .column(table, column)
        .ok_or_else(|| parse(format!("{table}.{column} is not in the catalog")))?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(sniff_delimiter(text))
        .flexible(true)
        .from_reader(text.as_bytes());
    let idx = rdr
        .headers()
        .map_err(|e| parse(e.to_string()))?
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| parse(format!("no {column} column")))?;
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse(e.to_string()))?;
        let v = rec
            .get(idx)
            .and_then(|f| f.trim().parse::<i64>().ok())
            .filter(|v| !meta.na_codes.contains(v));
        values.push(v);
    }
    let rows = values.len();
    let t = Table::new(table, vec![Column::int(column, table, meta.ty, values)]).map_err(|e| parse(e.to_string()))?;
    let (_, removed) = drop_missing(&t, column).map_err(|e| parse(e.to_string()))?;
    Ok((rows, removed))
}
