//! Binary checkpoints of a training session.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"QRRN" | u16 version | u32 header_len | header (UTF-8 JSON) | f64 params...
//! ```
//!
//! The header records the run config, the map, the RNG and environment
//! state, the replay buffer and the evaluation history. The trailing
//! floats hold the parameter blocks listed in `header.blocks`, in order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Env, EnvSnapshot, ObsEncoding};
use crate::learner::{Agent, ReplayBuffer};
use crate::nn::AdamState;
use crate::rng::{derive_seed, purpose, Rng};
use crate::roadnet::{GraphMap, Route, RouteCatalog, RouteClass};
use crate::trainer::{EvalPoint, RunConfig, Session};

pub const MAGIC: &[u8; 4] = b"QRRN";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

fn corrupt(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt(msg.into())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Block {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AdamMeta {
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: RunConfig,
    map: serde_json::Value,
    seed: u64,
    step: u64,
    episode: u64,
    n_states: usize,
    n_actions: usize,
    n_quantiles: usize,
    encoding: ObsEncoding,
    dims: Option<Vec<usize>>,
    updates: u64,
    adam: Option<AdamMeta>,
    blocks: Vec<Block>,
    behavior_rng: Rng,
    env: EnvSnapshot,
    buffer: ReplayBuffer,
    points: Vec<EvalPoint>,
    final_routes: BTreeMap<String, (RouteClass, Route)>,
}

/// Serializes `session` to bytes.
pub fn to_bytes(session: &Session) -> Vec<u8> {
    let agent = &session.agent;
    let online = agent.online().params();
    let target = agent.target().params();
    let mut blocks = vec![
        Block { name: "online".into(), len: online.len() },
        Block { name: "target".into(), len: target.len() },
    ];
    let mut floats = online;
    floats.extend(target);
    let adam = agent.optimizer_state().map(|st| {
        blocks.push(Block { name: "adam_m".into(), len: st.m.len() });
        blocks.push(Block { name: "adam_v".into(), len: st.v.len() });
        floats.extend(&st.m);
        floats.extend(&st.v);
        AdamMeta { t: st.t, beta1: st.beta1, beta2: st.beta2, eps: st.eps }
    });
    let header = Header {
        config: session.cfg.clone(),
        map: serde_json::from_str(&session.map.to_json()).expect("map JSON is valid"),
        seed: session.seed,
        step: session.step,
        episode: session.episode,
        n_states: agent.n_states(),
        n_actions: agent.n_actions(),
        n_quantiles: agent.n_quantiles(),
        encoding: agent.encoding(),
        dims: agent.network().map(|n| n.dims()),
        updates: agent.updates(),
        adam,
        blocks,
        behavior_rng: session.behavior_rng.clone(),
        env: session.env.snapshot(),
        buffer: agent.buffer.clone(),
        points: session.points.clone(),
        final_routes: session.final_routes.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(10 + json.len() + 8 * floats.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for f in floats {
        out.extend_from_slice(&f.to_le_bytes());
    }
    out
}

/// Rebuilds a session from checkpoint bytes.
pub fn from_bytes(bytes: &[u8]) -> Result<Session, CheckpointError> {
    if bytes.len() < 10 || &bytes[..4] != MAGIC {
        return Err(corrupt("missing QRRN magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch { found: version, expected: VERSION });
    }
    let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let body = &bytes[10..];
    if body.len() < header_len {
        return Err(corrupt("truncated header"));
    }
    let header: Header =
        serde_json::from_slice(&body[..header_len]).map_err(|e| corrupt(format!("header: {}", e)))?;
    let raw = &body[header_len..];
    if !raw.len().is_multiple_of(8) {
        return Err(corrupt("parameter section is not a whole number of f64 values"));
    }
    let floats: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let expected: usize = header.blocks.iter().map(|b| b.len).sum();
    if floats.len() != expected {
        return Err(corrupt(format!("expected {} parameters, found {}", expected, floats.len())));
    }
    let mut offset = 0;
    let mut named: BTreeMap<&str, &[f64]> = BTreeMap::new();
    for b in &header.blocks {
        named.insert(b.name.as_str(), &floats[offset..offset + b.len]);
        offset += b.len;
    }
    let block = |name: &str| named.get(name).copied().ok_or_else(|| corrupt(format!("missing block {}", name)));

    let map = GraphMap::from_json(&header.map.to_string()).map_err(|e| corrupt(format!("map: {}", e)))?;
    if map.num_states() != header.n_states || map.action_dim() != header.n_actions {
        return Err(corrupt("map dimensions disagree with the header"));
    }
    let map = Arc::new(map);
    let cfg = header.config;
    if cfg.agent.n_quantiles != header.n_quantiles || cfg.env.obs_encoding != header.encoding {
        return Err(corrupt("agent config disagrees with the header"));
    }
    let mut agent = Agent::new(
        cfg.agent.clone(),
        header.n_states,
        header.n_actions,
        header.encoding,
        derive_seed(header.seed, purpose::NET_INIT),
    )
    .map_err(|e| corrupt(e.to_string()))?;
    if agent.network().map(|n| n.dims()) != header.dims {
        return Err(corrupt("network dimensions disagree with the config"));
    }
    let adam = match header.adam {
        Some(meta) => Some(AdamState {
            m: block("adam_m")?.to_vec(),
            v: block("adam_v")?.to_vec(),
            t: meta.t,
            beta1: meta.beta1,
            beta2: meta.beta2,
            eps: meta.eps,
        }),
        None => None,
    };
    if adam.is_some() != agent.optimizer_state().is_some() {
        return Err(corrupt("optimizer state disagrees with the config"));
    }
    agent
        .restore_parts(block("online")?, block("target")?, adam, header.updates)
        .map_err(|e| corrupt(e.to_string()))?;
    if header.buffer.capacity() != cfg.agent.buffer_size {
        return Err(corrupt("replay buffer capacity disagrees with the config"));
    }
    agent.buffer = header.buffer;
    let env = Env::restore(map.clone(), cfg.env.clone(), header.env);
    Ok(Session {
        catalog: RouteCatalog::new(&map),
        cfg,
        map,
        seed: header.seed,
        agent,
        env,
        episode: header.episode,
        step: header.step,
        behavior_rng: header.behavior_rng,
        points: header.points,
        final_routes: header.final_routes,
    })
}

pub fn save(session: &Session, path: &Path) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(&to_bytes(session)).map_err(io)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Session, CheckpointError> {
    let io = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    let mut bytes = Vec::new();
    std::fs::File::open(path).map_err(io)?.read_to_end(&mut bytes).map_err(io)?;
    from_bytes(&bytes)
}
