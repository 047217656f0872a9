//! Output files: each is written to a temporary file in the target
//! directory and renamed into place, so readers never see partial files.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use bellsim::{Error, Result};
use serde::Serialize;
use tempfile::NamedTempFile;

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Writes `path` through `fill`, renaming into place only on success.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::with_capacity(1 << 20, tmp.as_file());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        // Temporary files are private; published outputs are not.
        tmp.as_file()
            .set_permissions(std::fs::Permissions::from_mode(0o644))?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |w| Ok(w.write_all(text.as_bytes())?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Input(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

/// Provenance record written last, after every data file is in place.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    pub config_hash: Option<String>,
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    pub verdict: Option<String>,
    pub outputs: Vec<PathBuf>,
    pub started_unix_s: f64,
    pub elapsed_s: f64,
    /// Command-specific figures (rates, S, metrics).
    pub details: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            config_hash: None,
            scenario: None,
            seed: None,
            verdict: None,
            outputs: Vec::new(),
            started_unix_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0),
            elapsed_s: 0.0,
            details: serde_json::Value::Null,
        }
    }

    pub fn record(&mut self, path: &Path) {
        self.outputs.push(
            path.file_name()
                .map(PathBuf::from)
                .unwrap_or_else(|| path.to_path_buf()),
        );
    }

    pub fn finish(mut self, dir: &Path, started: std::time::Instant) -> Result<PathBuf> {
        self.elapsed_s = started.elapsed().as_secs_f64();
        let path = dir.join("manifest.json");
        write_json(&path, &self)?;
        Ok(path)
    }
}
