//! Checkpoint container.
//!
//! Layout: `MCICCKP1`, a u32 LE header length, a UTF-8 JSON header, then the
//! f64 LE payload (student values, teacher values, first moments, second
//! moments, each in canonical order), then the SHA-256 of everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use super::ops::Moments;
use super::step::TrainState;
use crate::backbone::{ArchConfig, Param, ParamSet};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MCICCKP1";
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    arch: ArchConfig,
    config: TrainConfig,
    config_hash: String,
    seed: u64,
    epoch: usize,
    iteration: u64,
    optimizer_step: u64,
    params: Vec<Param>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchConfig,
    pub config: TrainConfig,
    pub state: TrainState,
}

impl Checkpoint {
    /// Training state, with the optimizer moments zeroed on request.
    pub fn into_state(self, reset_optimizer: bool) -> TrainState {
        let mut state = self.state;
        if reset_optimizer {
            state.moments.reset();
        }
        state
    }
}

fn push_values(buf: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_checkpoint(arch: &ArchConfig, config: &TrainConfig, state: &TrainState) -> Result<Vec<u8>> {
    state.student.check_congruent(&state.teacher)?;
    let header = Header {
        arch: arch.clone(),
        config: config.clone(),
        config_hash: state.config_hash.clone(),
        seed: state.seed,
        epoch: state.epoch,
        iteration: state.iteration,
        optimizer_step: state.moments.step,
        params: state.student.params().to_vec(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(json.len() + 16 * state.student.total_count() + 64);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for set in [&state.student, &state.teacher] {
        for p in set.params() {
            push_values(&mut buf, &p.data);
        }
    }
    for t in state.moments.m.iter().chain(&state.moments.v) {
        push_values(&mut buf, t);
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::BadCheckpoint("payload shorter than header declares".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn values(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + DIGEST_LEN || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::BadCheckpoint("missing checkpoint magic".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::BadCheckpoint("checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let len = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
    let header: Header =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::BadCheckpoint(format!("header: {e}")))?;
    let read_set = |r: &mut Reader<'_>| -> Result<ParamSet> {
        let mut params = header.params.clone();
        for p in params.iter_mut() {
            let n: usize = p.shape.iter().product();
            p.data = r.values(n)?;
        }
        Ok(ParamSet::new(params))
    };
    let student = read_set(&mut r)?;
    let teacher = read_set(&mut r)?;
    let mut moments = Moments::zeros(&student);
    moments.step = header.optimizer_step;
    for t in moments.m.iter_mut().chain(moments.v.iter_mut()) {
        *t = r.values(t.len())?;
    }
    if r.pos != body.len() {
        return Err(Error::BadCheckpoint("trailing bytes after payload".into()));
    }
    Ok(Checkpoint {
        arch: header.arch,
        config: header.config,
        state: TrainState {
            student,
            teacher,
            moments,
            epoch: header.epoch,
            iteration: header.iteration,
            seed: header.seed,
            config_hash: header.config_hash,
        },
    })
}

/// Short content id of an encoded checkpoint.
pub fn checkpoint_id(bytes: &[u8]) -> String {
    hex::encode(&bytes[bytes.len().saturating_sub(DIGEST_LEN)..])[..16].to_string()
}

/// Writes the checkpoint and returns its id.
pub fn save_checkpoint(path: &Path, arch: &ArchConfig, config: &TrainConfig, state: &TrainState) -> Result<String> {
    let bytes = encode_checkpoint(arch, config, state)?;
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(checkpoint_id(&bytes))
}

/// Reads a checkpoint, returning it together with its id.
pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ck = decode_checkpoint(&bytes)?;
    Ok((ck, checkpoint_id(&bytes)))
}
