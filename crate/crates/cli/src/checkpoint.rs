//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `MARLCPC\0`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the JSON header, then for
//! every agent and every parameter tensor (header order) the values, the Adam
//! first moments and the Adam second moments as little-endian `f64`s.

use std::path::Path;

use marlcpc_core::agents::build_team;
use marlcpc_core::{AgentBundle, TrainerConfig};
use serde::{Deserialize, Serialize};

use crate::error::{io_at, CliError, Result};

pub const MAGIC: &[u8; 8] = b"MARLCPC\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: TrainerConfig,
    pub iteration: usize,
    pub env_steps: u64,
    pub agents: Vec<AgentHeader>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentHeader {
    pub index: usize,
    pub adam_step: u64,
    pub params: Vec<TensorHeader>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// Agents restored from a checkpoint with the settings they were trained under.
pub struct Checkpoint {
    pub header: Header,
    pub bundles: Vec<AgentBundle>,
}

pub fn encode(
    config: &TrainerConfig,
    iteration: usize,
    env_steps: u64,
    bundles: &[AgentBundle],
) -> Vec<u8> {
    let header = Header {
        config: config.clone(),
        iteration,
        env_steps,
        agents: bundles
            .iter()
            .map(|b| AgentHeader {
                index: b.index(),
                adam_step: b.optimizer.step,
                params: b
                    .store
                    .params()
                    .iter()
                    .map(|p| TensorHeader {
                        name: p.name.clone(),
                        rows: p.value.nrows(),
                        cols: p.value.ncols(),
                    })
                    .collect(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for b in bundles {
        for (i, p) in b.store.params().iter().enumerate() {
            for block in [&p.value, &b.optimizer.m[i], &b.optimizer.v[i]] {
                for x in block.iter() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn save(
    path: &Path,
    config: &TrainerConfig,
    iteration: usize,
    env_steps: u64,
    bundles: &[AgentBundle],
) -> Result<()> {
    if let Some(dir) = path.parent() {
        io_at(std::fs::create_dir_all(dir), dir)?;
    }
    // write then rename, so a crash never leaves a half-written checkpoint
    let tmp = path.with_extension("tmp");
    io_at(
        std::fs::write(&tmp, encode(config, iteration, env_steps, bundles)),
        &tmp,
    )?;
    io_at(std::fs::rename(&tmp, path), path)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(CliError::validation(format!(
                "checkpoint truncated while reading {field} (need {n} bytes at offset {}, {} left)",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn f64s(&mut self, out: &mut [f64], field: &str) -> Result<()> {
        let raw = self.take(8 * out.len(), field)?;
        for (x, c) in out.iter_mut().zip(raw.chunks_exact(8)) {
            *x = f64::from_le_bytes(c.try_into().unwrap());
        }
        Ok(())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(CliError::validation("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(CliError::validation(format!(
            "checkpoint version {version} is not supported (expected {VERSION})"
        )));
    }
    let len = u64::from_le_bytes(r.take(8, "header length")?.try_into().unwrap());
    let len = usize::try_from(len).map_err(|_| CliError::validation("header length overflows"))?;
    let header: Header = serde_json::from_slice(r.take(len, "header")?)
        .map_err(|e| CliError::validation(format!("checkpoint header: {e}")))?;

    let c = &header.config;
    c.validate()
        .map_err(|e| CliError::validation(format!("checkpoint config: {e}")))?;
    let mut bundles = build_team(
        c.condition,
        &c.env.obs_dims(),
        &c.env.n_actions(),
        c.k,
        c.beta,
        c.straight_through,
        c.adam(),
        c.seed,
    )?;
    if bundles.len() != header.agents.len() {
        return Err(CliError::validation(format!(
            "checkpoint holds {} agents, the configuration builds {}",
            header.agents.len(),
            bundles.len()
        )));
    }
    for (b, ah) in bundles.iter_mut().zip(&header.agents) {
        let params = b.store.params().len();
        if ah.index != b.index() || ah.params.len() != params {
            return Err(CliError::validation(format!(
                "agent {} layout does not match its configuration",
                ah.index
            )));
        }
        for (i, th) in ah.params.iter().enumerate() {
            let p = &b.store.params()[i];
            if p.name != th.name || p.value.dim() != (th.rows, th.cols) {
                return Err(CliError::validation(format!(
                    "tensor {} is {}x{} in the checkpoint, expected {} {:?}",
                    th.name,
                    th.rows,
                    th.cols,
                    p.name,
                    p.value.dim()
                )));
            }
            let value = b.store.params_mut()[i].value.as_slice_mut().unwrap();
            r.f64s(value, &format!("{} values", th.name))?;
            r.f64s(
                b.optimizer.m[i].as_slice_mut().unwrap(),
                &format!("{} first moments", th.name),
            )?;
            r.f64s(
                b.optimizer.v[i].as_slice_mut().unwrap(),
                &format!("{} second moments", th.name),
            )?;
        }
        b.optimizer.step = ah.adam_step;
    }
    if r.pos != bytes.len() {
        return Err(CliError::validation(format!(
            "{} unexpected bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint { header, bundles })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = io_at(std::fs::read(path), path)?;
    decode(&bytes).map_err(|e| match e {
        CliError::Validation(m) => CliError::validation(format!("{}: {m}", path.display())),
        other => other,
    })
}
