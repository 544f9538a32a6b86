//! Model checkpoints in two containers: a readable JSON document and a
//! compact little-endian binary file. Both restore parameters exactly.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, MosConfig};
use crate::nn::Parameters;

pub const CHECKPOINT_FORMAT: &str = "posthoc-mos-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"PHMOSCK\0";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Seed the parameters were initialised from.
    pub seed: u64,
    pub model: ModelParams,
}

impl Checkpoint {
    pub fn new(model: ModelParams, seed: u64) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seed,
            model,
        }
    }

    fn check(&self, origin: &Path) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                path: origin.into(),
                reason: format!(
                    "unsupported checkpoint {} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
                    self.format, self.version
                ),
            });
        }
        self.model.config.validate()?;
        let expected = ModelParams::zeros(self.model.config)?.num_params();
        if self.model.num_params() != expected || self.model.experts.len() != self.model.config.num_experts {
            return Err(Error::Format {
                path: origin.into(),
                reason: "parameter shapes do not match the stored configuration".into(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        ck.check(origin)?;
        Ok(ck)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.model.config;
        let flat = self.model.to_flat();
        let eps = layer_norm_epsilons(&self.model);
        let mut out = Vec::with_capacity(64 + 8 * (flat.len() + eps.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for dim in [c.num_experts, c.num_labels, c.input_dim, c.hidden_dim, c.repr_dim] {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
        for v in flat.iter().chain(&eps) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: origin.into(),
            reason: reason.into(),
        };
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("not a binary checkpoint"));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf).map_err(|_| bad("truncated header"))?;
        if u32::from_le_bytes(u32buf) != CHECKPOINT_VERSION {
            return Err(bad("unsupported checkpoint version"));
        }
        let next_u64 = |r: &mut &[u8]| -> Result<u64> {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf).map_err(|_| bad("truncated checkpoint"))?;
            Ok(u64::from_le_bytes(buf))
        };
        let seed = next_u64(&mut r)?;
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = next_u64(&mut r)? as usize;
        }
        let config = MosConfig {
            num_experts: dims[0],
            num_labels: dims[1],
            input_dim: dims[2],
            hidden_dim: dims[3],
            repr_dim: dims[4],
        };
        let mut model = ModelParams::zeros(config)?;
        let n = next_u64(&mut r)? as usize;
        if n != model.num_params() {
            return Err(bad("parameter count does not match the stored configuration"));
        }
        let norms = config.num_experts + 1;
        if r.len() != 8 * (n + norms) {
            return Err(bad("unexpected payload length"));
        }
        let values: Vec<f64> = r
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight")))
            .collect();
        model.set_flat(&values[..n])?;
        for (norm, &eps) in layer_norms_mut(&mut model).into_iter().zip(&values[n..]) {
            *norm = eps;
        }
        Ok(Checkpoint::new(model, seed))
    }

    /// Binary when the extension is `.bin`, JSON otherwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = if is_binary(path) { self.to_bytes() } else { self.to_json()?.into_bytes() };
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if is_binary(path) {
            Self::from_bytes(&bytes, path)
        } else {
            let text = String::from_utf8(bytes).map_err(|_| Error::Format {
                path: path.into(),
                reason: "checkpoint is not valid UTF-8".into(),
            })?;
            Self::from_json(&text, path)
        }
    }
}

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

fn layer_norm_epsilons(model: &ModelParams) -> Vec<f64> {
    model
        .experts
        .iter()
        .map(|e| e.transform.norm.epsilon)
        .chain([model.router.transform.norm.epsilon])
        .collect()
}

fn layer_norms_mut(model: &mut ModelParams) -> Vec<&mut f64> {
    let mut out: Vec<&mut f64> = model.experts.iter_mut().map(|e| &mut e.transform.norm.epsilon).collect();
    out.push(&mut model.router.transform.norm.epsilon);
    out
}
