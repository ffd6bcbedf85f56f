//! Exit codes, the run manifest and file writing.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug)]
pub enum Failure {
    /// A check or experiment failed (exit 1).
    Failed(String),
    /// Invalid flags or flag combinations (exit 2).
    Usage(String),
    /// Required input files are missing (exit 3).
    MissingData(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Failed(_) => 1,
            Failure::Usage(_) => 2,
            Failure::MissingData(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Failed(m) | Failure::Usage(m) | Failure::MissingData(m) => m,
        }
    }
}

impl From<bwlab::Error> for Failure {
    fn from(e: bwlab::Error) -> Self {
        match e {
            bwlab::Error::Validation(_) | bwlab::Error::DimensionMismatch { .. } => Failure::Usage(e.to_string()),
            other => Failure::Failed(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Failed(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Failed(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

pub fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

pub fn resolve_seed(flag: Option<u64>) -> CliResult<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("BWLAB_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| usage(format!("BWLAB_SEED must be an unsigned integer, got '{v}'"))),
        Err(_) => Ok(0),
    }
}

fn unix_seconds() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Output directory plus its `manifest.txt`, written before any result file
/// and completed with the end time once the run succeeds.
pub struct Run {
    dir: PathBuf,
    header: String,
}

impl Run {
    pub fn start(dir: &Path, subcommand: &str, seed: u64) -> CliResult<Self> {
        std::fs::create_dir_all(dir)?;
        let args: Vec<String> = std::env::args().skip(1).collect();
        let header = format!(
            "subcommand: {subcommand}\nargs: {}\nseed: {seed}\nversion: {}\nout: {}\nstart: {}\n",
            args.join(" "),
            env!("CARGO_PKG_VERSION"),
            dir.display(),
            unix_seconds()
        );
        std::fs::write(dir.join("manifest.txt"), &header)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            header,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> CliResult<()> {
        std::fs::write(self.path(name), contents)?;
        Ok(())
    }

    /// Writes a CSV file from a header and rows of displayable cells.
    pub fn write_csv<R, C>(&self, name: &str, header: &[&str], rows: R) -> CliResult<()>
    where
        R: IntoIterator<Item = Vec<C>>,
        C: Display,
    {
        let mut w = csv::Writer::from_path(self.path(name))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row.iter().map(|c| c.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn finish(self) -> CliResult<()> {
        let text = format!("{}end: {}\n", self.header, unix_seconds());
        std::fs::write(self.dir.join("manifest.txt"), text)?;
        Ok(())
    }
}
