//! CSV container for generated splits.
//!
//! The first line is `#` followed by a JSON header echoing the generator
//! configuration, split name and seed. Then comes a column-name row
//! `y,a_1..a_G,x_1..x_D` and one row per instance, with features written to
//! 17 significant digits so that reading back is exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{GeneratorConfig, Instance};

pub const DATASET_FORMAT: &str = "posthoc-shortcut-split";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub split: String,
    pub seed: u64,
    pub generator: GeneratorConfig,
}

impl DatasetHeader {
    pub fn new(split: impl Into<String>, seed: u64, generator: GeneratorConfig) -> Self {
        DatasetHeader {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            split: split.into(),
            seed,
            generator,
        }
    }
}

pub fn write_split_to<W: Write>(mut w: W, header: &DatasetHeader, instances: &[Instance]) -> std::io::Result<()> {
    writeln!(w, "#{}", serde_json::to_string(header)?)?;
    let g = header.generator.num_shortcuts;
    let d = header.generator.feature_dim();
    let mut names = vec!["y".to_string()];
    names.extend((1..=g).map(|i| format!("a_{i}")));
    names.extend((1..=d).map(|i| format!("x_{i}")));
    writeln!(w, "{}", names.join(","))?;
    let mut line = String::new();
    for inst in instances {
        use std::fmt::Write as _;
        line.clear();
        write!(line, "{}", inst.y).unwrap();
        for a in &inst.shortcuts {
            write!(line, ",{a}").unwrap();
        }
        for v in &inst.x {
            write!(line, ",{v:.16e}").unwrap();
        }
        writeln!(w, "{line}")?;
    }
    w.flush()
}

pub fn write_split(path: &Path, header: &DatasetHeader, instances: &[Instance]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_split_to(BufWriter::new(file), header, instances).map_err(|e| Error::io(path, e))
}

/// Parses a split. When `expected` is given the header's generator
/// configuration must match it exactly.
pub fn read_split_from<R: BufRead>(
    mut r: R,
    origin: &Path,
    expected: Option<&GeneratorConfig>,
) -> Result<(DatasetHeader, Vec<Instance>)> {
    let bad = |reason: String| Error::Format {
        path: origin.to_path_buf(),
        reason,
    };
    let mut first = String::new();
    r.read_line(&mut first).map_err(|e| Error::io(origin, e))?;
    let json = first
        .trim_end()
        .strip_prefix('#')
        .ok_or_else(|| bad("missing `#` header line".into()))?;
    let header: DatasetHeader = serde_json::from_str(json).map_err(|e| bad(format!("header: {e}")))?;
    if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
        return Err(bad(format!("unsupported format {} v{}", header.format, header.version)));
    }
    if let Some(cfg) = expected {
        if &header.generator != cfg {
            return Err(bad("generator configuration differs from the expected one".into()));
        }
    }

    let g = header.generator.num_shortcuts;
    let d = header.generator.feature_dim();
    let labels = header.generator.num_labels;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let columns = reader.headers().map_err(|e| bad(e.to_string()))?.len();
    if columns != 1 + g + d {
        return Err(bad(format!("expected {} columns, found {columns}", 1 + g + d)));
    }
    let mut instances = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |i: usize| rec.get(i).ok_or_else(|| bad(format!("row {row}: missing column {i}")));
        let label = |i: usize| -> Result<usize> {
            let v: usize = field(i)?.parse().map_err(|e| bad(format!("row {row}: {e}")))?;
            if v >= labels {
                return Err(bad(format!("row {row}: label {v} out of range")));
            }
            Ok(v)
        };
        let y = label(0)?;
        let shortcuts = (1..=g).map(label).collect::<Result<Vec<_>>>()?;
        let x = (1 + g..1 + g + d)
            .map(|i| {
                let v: f64 = field(i)?.parse().map_err(|e| bad(format!("row {row}: {e}")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(bad(format!("row {row}: non-finite feature")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        instances.push(Instance { x, y, shortcuts });
    }
    Ok((header, instances))
}

pub fn read_split(path: &Path, expected: Option<&GeneratorConfig>) -> Result<(DatasetHeader, Vec<Instance>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_split_from(BufReader::new(file), path, expected)
}
