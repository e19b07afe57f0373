//! Checkpoint serialization. The format is a fixed little-endian layout with
//! the model configuration embedded as JSON, a digest of the anchor weights
//! for continued checkpoints, and a whole-file SHA-256 at the end so silent
//! corruption is caught at load. Byte-identical runs produce byte-identical
//! checkpoint files.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

const MAGIC: &[u8; 8] = b"TABCPTCK";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Base,
    Continued,
}

impl Stage {
    fn to_byte(self) -> u8 {
        match self {
            Stage::Base => 0,
            Stage::Continued => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Stage> {
        match b {
            0 => Ok(Stage::Base),
            1 => Ok(Stage::Continued),
            other => Err(Error::Input(format!("unknown checkpoint stage tag {other}"))),
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Base => "base",
            Stage::Continued => "continued",
        })
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub stage: Stage,
    pub steps: u64,
    pub seed: u64,
    /// SHA-256 of the anchor parameters for continued checkpoints, zeros for
    /// base checkpoints; ties a stage-two model to its exact base.
    pub anchor_digest: [u8; 32],
    pub params: Vec<f64>,
}

/// Digest of a parameter vector in its little-endian byte form.
pub fn params_digest(params: &[f64]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for p in params {
        hasher.update(p.to_le_bytes());
    }
    hasher.finalize().into()
}

impl Checkpoint {
    pub fn expect_config(&self, config: &ModelConfig) -> Result<()> {
        if self.config != *config {
            return Err(Error::Input(format!(
                "checkpoint model configuration {:?} does not match expected {:?}",
                self.config, config
            )));
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    assert_eq!(
        ckpt.params.len(),
        ckpt.config.n_params(),
        "parameter count must match the configuration"
    );
    let config_json = serde_json::to_vec(&ckpt.config).expect("config serializes");
    let mut buf = Vec::with_capacity(64 + config_json.len() + ckpt.params.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config_json);
    buf.push(ckpt.stage.to_byte());
    buf.extend_from_slice(&ckpt.steps.to_le_bytes());
    buf.extend_from_slice(&ckpt.seed.to_le_bytes());
    buf.extend_from_slice(&ckpt.anchor_digest);
    buf.extend_from_slice(&(ckpt.params.len() as u64).to_le_bytes());
    for p in &ckpt.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let digest: [u8; 32] = Sha256::digest(&buf).into();
    buf.extend_from_slice(&digest);
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Input(format!(
                "{}: checkpoint truncated at byte {}",
                self.path.display(),
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < MAGIC.len() + 4 + 32 {
        return Err(Error::Input(format!(
            "{}: too short to be a checkpoint",
            path.display()
        )));
    }
    // Whole-file digest first: decode nothing from a corrupt file.
    let (body, stored_digest) = buf.split_at(buf.len() - 32);
    let digest: [u8; 32] = Sha256::digest(body).into();
    if digest != stored_digest {
        return Err(Error::Input(format!(
            "{}: checksum mismatch, checkpoint corrupt",
            path.display()
        )));
    }

    let mut r = Reader { buf: body, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(Error::Input(format!(
            "{}: not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Input(format!(
            "{}: unsupported checkpoint version {version} (supported: {VERSION})",
            path.display()
        )));
    }
    let config_len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(config_len)?).map_err(|e| {
        Error::Input(format!("{}: bad embedded config: {e}", path.display()))
    })?;
    config.validate()?;
    let stage = Stage::from_byte(r.take(1)?[0])?;
    let steps = r.u64()?;
    let seed = r.u64()?;
    let anchor_digest: [u8; 32] = r.take(32)?.try_into().unwrap();
    let n_params = r.u64()? as usize;
    if n_params != config.n_params() {
        return Err(Error::Input(format!(
            "{}: parameter count {n_params} does not match the embedded configuration ({})",
            path.display(),
            config.n_params()
        )));
    }
    let mut params = Vec::with_capacity(n_params);
    let raw = r.take(n_params * 8)?;
    for chunk in raw.chunks_exact(8) {
        params.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    if r.pos != body.len() {
        return Err(Error::Input(format!(
            "{}: {} trailing bytes after parameters",
            path.display(),
            body.len() - r.pos
        )));
    }
    Ok(Checkpoint { config, stage, steps, seed, anchor_digest, params })
}
