//! File layer for dataset splits. Every read is logged so tests can prove
//! which splits a command touched.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use posthoc_core::dataset::{self, DatasetHeader};
use posthoc_core::{GeneratorConfig, Instance};

use crate::error::{CliError, CliResult};

#[derive(Debug)]
pub struct DataStore {
    dir: PathBuf,
    expected: GeneratorConfig,
    reads: Mutex<Vec<String>>,
}

impl DataStore {
    pub fn new(dir: impl Into<PathBuf>, expected: GeneratorConfig) -> Self {
        DataStore {
            dir: dir.into(),
            expected,
            reads: Mutex::new(Vec::new()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, split: &str) -> PathBuf {
        self.dir.join(format!("{split}.csv"))
    }

    /// Loads a split, checking that it was generated with the expected
    /// generator configuration.
    pub fn read(&self, split: &str) -> CliResult<Vec<Instance>> {
        self.reads.lock().expect("read log").push(split.to_string());
        let path = self.path(split);
        if !path.exists() {
            return Err(CliError::MissingInput {
                path,
                hint: "run `posthoc gen` first".into(),
            });
        }
        let (header, instances) = dataset::read_split(&path, Some(&self.expected))?;
        if header.split != split {
            return Err(CliError::Data(format!(
                "{} holds split `{}`, expected `{split}`",
                path.display(),
                header.split
            )));
        }
        Ok(instances)
    }

    pub fn write(&self, split: &str, seed: u64, instances: &[Instance]) -> CliResult<PathBuf> {
        std::fs::create_dir_all(&self.dir).map_err(|e| CliError::output(&self.dir, e))?;
        let path = self.path(split);
        let header = DatasetHeader::new(split, seed, self.expected.clone());
        dataset::write_split(&path, &header, instances).map_err(|e| match e {
            posthoc_core::Error::Io { path, source } => CliError::Output { path, source },
            other => other.into(),
        })?;
        Ok(path)
    }

    /// Split names read so far, in order.
    pub fn reads(&self) -> Vec<String> {
        self.reads.lock().expect("read log").clone()
    }
}
