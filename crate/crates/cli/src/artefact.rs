//! Hash-stamped artefact files and the bundle manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// First line of every artefact file.
pub const HASH_PREFIX: &str = "# config_hash=";

pub fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io { path: path.to_path_buf(), source: e }
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Writer that stamps files with one config hash and remembers their digests.
pub struct ArtefactWriter {
    dir: PathBuf,
    hash: String,
    written: Vec<(String, String)>,
}

impl ArtefactWriter {
    pub fn new(dir: &Path, hash: &str) -> CliResult<Self> {
        ensure_dir(dir)?;
        Ok(ArtefactWriter { dir: dir.to_path_buf(), hash: hash.to_string(), written: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, body: &str) -> CliResult<()> {
        let text = format!("{HASH_PREFIX}{}\n{body}", self.hash);
        let path = self.dir.join(name);
        std::fs::write(&path, text.as_bytes()).map_err(|e| io_err(&path, e))?;
        self.written.push((name.to_string(), hex::encode(Sha256::digest(text.as_bytes()))));
        Ok(())
    }

    /// Write `manifest.csv` listing every file written so far.
    pub fn finish(mut self) -> CliResult<()> {
        let mut body = String::from("file,sha256\n");
        self.written.sort();
        for (f, h) in &self.written {
            let _ = writeln!(body, "{f},{h}");
        }
        let text = format!("{HASH_PREFIX}{}\n{body}", self.hash);
        let path = self.dir.join("manifest.csv");
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))
    }
}

/// Split a stamped file into `(hash, body)`.
pub fn read_stamped(path: &Path) -> CliResult<(String, String)> {
    if !path.exists() {
        return Err(CliError::Missing(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let (first, rest) = text.split_once('\n').unwrap_or((text.as_str(), ""));
    let hash = first.strip_prefix(HASH_PREFIX).ok_or_else(|| CliError::Malformed {
        file: path.to_path_buf(),
        reason: "missing config hash line".into(),
    })?;
    Ok((hash.trim().to_string(), rest.to_string()))
}

/// Read a stamped file, refusing it unless it carries `expected`.
pub fn read_artefact(path: &Path, expected: &str) -> CliResult<String> {
    let (hash, body) = read_stamped(path)?;
    if hash != expected {
        return Err(CliError::Provenance { file: path.to_path_buf(), found: hash, expected: expected.to_string() });
    }
    Ok(body)
}

/// Parse a headed CSV body into records.
pub fn csv_records(path: &Path, body: &str) -> CliResult<Vec<csv::StringRecord>> {
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    rdr.records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Malformed { file: path.to_path_buf(), reason: e.to_string() })
}

pub fn parse_field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> CliResult<T> {
    rec.get(i)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| CliError::Malformed { file: path.to_path_buf(), reason: format!("bad column {i} in {rec:?}") })
}
