use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Written next to the outputs of every command. Contains nothing that
/// varies between identical runs; wall-clock timings go to the separate
/// file named in `timings`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub files: Vec<FileRecord>,
    pub timings: String,
}

impl RunManifest {
    pub fn file_name(command: &str) -> String {
        format!("manifest-{command}.json")
    }

    pub fn timings_name(command: &str) -> String {
        format!("timings-{command}.txt")
    }
}

pub fn record_file(out_dir: &Path, rel: &str) -> CliResult<FileRecord> {
    let path = out_dir.join(rel);
    let bytes = fs::read(&path).map_err(|e| CliError::output(&path, e))?;
    Ok(FileRecord {
        path: rel.replace('\\', "/"),
        bytes: bytes.len() as u64,
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

pub fn timings_text(steps: &[(String, Duration)]) -> String {
    let mut out = String::from("step\tseconds\n");
    for (name, d) in steps {
        writeln!(out, "{name}\t{:.3}", d.as_secs_f64()).unwrap();
    }
    out
}
