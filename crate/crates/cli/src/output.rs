use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const TOOL_VERSION: &str = concat!("isolab ", env!("CARGO_PKG_VERSION"));

/// One line of a results file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResultRecord {
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    pub tool_version: String,
    pub config_digest: String,
    pub kind: String,
    pub payload: serde_json::Value,
}

/// Streams records to a file or stdout, flushing after each line.
pub struct RecordSink {
    out: Box<dyn Write>,
    path: Option<PathBuf>,
    digest: String,
}

impl RecordSink {
    pub fn open(path: Option<&Path>, digest: String) -> Result<Self> {
        let out: Box<dyn Write> = match path {
            Some(p) => Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("creating {}", p.display()))?,
            )),
            None => Box::new(io::stdout()),
        };
        Ok(RecordSink {
            out,
            path: path.map(Path::to_path_buf),
            digest,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn emit<T: Serialize>(&mut self, kind: &str, payload: &T) -> Result<()> {
        let rec = ResultRecord {
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
            tool_version: TOOL_VERSION.to_string(),
            config_digest: self.digest.clone(),
            kind: kind.to_string(),
            payload: serde_json::to_value(payload)?,
        };
        serde_json::to_writer(&mut self.out, &rec)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

/// Path of a sibling file: `out.jsonl` → `out.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .with_context(|| format!("{}:{}: not a result record", path.display(), i + 1))
        })
        .collect()
}
