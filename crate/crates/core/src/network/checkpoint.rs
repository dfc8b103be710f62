//! Checkpoint files.
//!
//! Layout:
//!
//! ```text
//! u64 LE        length of the JSON header in bytes
//! [u8; len]     JSON header (CheckpointHeader)
//! f64 LE × P    parameters, in NetworkParams::tensors order
//! f64 LE × P    Adam first moment   (only if header.adam_step is set)
//! f64 LE × P    Adam second moment  (only if header.adam_step is set)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetworkConfig, NetworkError, NetworkParams, Result};

pub const CHECKPOINT_FORMAT: &str = "subspacenet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub config: NetworkConfig,
    /// Number of completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub param_count: usize,
    /// Adam step counter; present iff optimizer moments follow the parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam_step: Option<u64>,
    /// Training state owned by the trainer (settings and log so far).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerBlob {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: NetworkParams,
    pub optimizer: Option<OptimizerBlob>,
}

impl Checkpoint {
    pub fn new(config: NetworkConfig, params: NetworkParams, epoch: usize, seed: u64) -> Self {
        let param_count = params.param_count();
        Checkpoint {
            header: CheckpointHeader {
                format: CHECKPOINT_FORMAT.into(),
                version: CHECKPOINT_VERSION,
                config,
                epoch,
                seed,
                param_count,
                adam_step: None,
                training: None,
            },
            params,
            optimizer: None,
        }
    }

    pub fn with_optimizer(mut self, opt: OptimizerBlob) -> Self {
        self.header.adam_step = Some(opt.step);
        self.optimizer = Some(opt);
        self
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let p = self.params.param_count();
        if p != self.header.param_count {
            return Err(NetworkError::Checkpoint(format!(
                "header says {} parameters, have {p}",
                self.header.param_count
            )));
        }
        if let Some(opt) = &self.optimizer {
            if opt.m.len() != p || opt.v.len() != p || self.header.adam_step != Some(opt.step) {
                return Err(NetworkError::Checkpoint("optimizer state does not match parameters".into()));
            }
        }
        let header = serde_json::to_vec(&self.header).map_err(|e| NetworkError::Checkpoint(e.to_string()))?;
        let blobs = if self.optimizer.is_some() { 3 } else { 1 };
        let mut out = Vec::with_capacity(8 + header.len() + blobs * p * 8);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in self.params.tensors() {
            t.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        if let Some(opt) = &self.optimizer {
            for v in opt.m.iter().chain(&opt.v) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| NetworkError::Checkpoint(m.to_string());
        if bytes.len() < 8 {
            return Err(bad("file too short for header length"));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(8..).unwrap_or_default();
        if hlen > body.len() {
            return Err(bad("truncated header"));
        }
        let header: CheckpointHeader =
            serde_json::from_slice(&body[..hlen]).map_err(|e| NetworkError::Checkpoint(format!("header: {e}")))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(NetworkError::Checkpoint(format!("unknown format {:?}", header.format)));
        }
        if header.version != CHECKPOINT_VERSION {
            return Err(NetworkError::Checkpoint(format!("unsupported version {}", header.version)));
        }
        header.config.validate()?;
        let p = header.config.param_count();
        if p != header.param_count {
            return Err(NetworkError::Checkpoint(format!(
                "config implies {p} parameters, header says {}",
                header.param_count
            )));
        }
        let blobs = if header.adam_step.is_some() { 3 } else { 1 };
        let data = &body[hlen..];
        if data.len() != blobs * p * 8 {
            return Err(NetworkError::Checkpoint(format!(
                "expected {} bytes of parameter data, found {}",
                blobs * p * 8,
                data.len()
            )));
        }
        let values: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let params = NetworkParams::from_flat(&header.config, &values[..p])?;
        let optimizer = header.adam_step.map(|step| OptimizerBlob {
            step,
            m: values[p..2 * p].to_vec(),
            v: values[2 * p..].to_vec(),
        });
        Ok(Checkpoint {
            header,
            params,
            optimizer,
        })
    }
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let bytes = checkpoint.to_bytes()?;
    let io = |e: std::io::Error| NetworkError::Checkpoint(format!("{}: {e}", path.display()));
    // Write to a sibling temp file first so a crash never leaves a torn checkpoint.
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(&bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| NetworkError::Checkpoint(format!("{}: {e}", path.display())))?;
    Checkpoint::from_bytes(&bytes)
}
