//! Episodic MDP over a [`GraphMap`].
//!
//! Transitions are deterministic; the only randomness is the travel-time
//! reward drawn on entering a crosswalk node.

use std::sync::Arc;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{rng_from_seed, Rng};
use crate::roadnet::{ActionIndex, GraphMap, MapError, NodeId};

/// Rejection-sampling attempts before giving up.
pub const TRUNC_NORMAL_MAX_ATTEMPTS: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("step called on a finished episode")]
    EpisodeFinished,
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("invalid environment config: {0}")]
    BadConfig(String),
    #[error("internal error: {0}")]
    Internal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObsEncoding {
    #[default]
    OneHot,
    Index,
}

impl ObsEncoding {
    pub fn dim(self, num_states: usize) -> usize {
        match self {
            ObsEncoding::OneHot => num_states,
            ObsEncoding::Index => 1,
        }
    }
}

fn default_crosswalk_std() -> f64 {
    1.0
}
fn default_episode_cap() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub r_base: f64,
    #[serde(default)]
    pub r_loopback: f64,
    #[serde(default = "default_crosswalk_std")]
    pub crosswalk_std: f64,
    #[serde(default = "default_episode_cap")]
    pub episode_cap: usize,
    #[serde(default)]
    pub obs_encoding: ObsEncoding,
}

impl EnvConfig {
    pub fn new(r_base: f64, r_loopback: f64) -> Self {
        EnvConfig {
            r_base,
            r_loopback,
            crosswalk_std: default_crosswalk_std(),
            episode_cap: default_episode_cap(),
            obs_encoding: ObsEncoding::OneHot,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.r_base > 0.0 && self.r_base.is_finite()) {
            return Err(EnvError::BadConfig(format!("r_base must be positive, got {}", self.r_base)));
        }
        if !(self.r_loopback >= 0.0 && self.r_loopback.is_finite()) {
            return Err(EnvError::BadConfig(format!(
                "r_loopback must be non-negative, got {}",
                self.r_loopback
            )));
        }
        if !(self.crosswalk_std > 0.0 && self.crosswalk_std.is_finite()) {
            return Err(EnvError::BadConfig("crosswalk_std must be positive".into()));
        }
        if self.episode_cap == 0 {
            return Err(EnvError::BadConfig("episode_cap must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

/// Deterministic observation of `state`.
pub fn observe(num_states: usize, encoding: ObsEncoding, state: NodeId) -> Observation {
    match encoding {
        ObsEncoding::OneHot => {
            let mut v = vec![0.0; num_states];
            v[state] = 1.0;
            Observation(v)
        }
        ObsEncoding::Index => Observation(vec![state as f64]),
    }
}

/// Draws from N(mean, std²) conditioned on `[lo, hi]` by rejection.
pub fn trunc_normal(mean: f64, std: f64, lo: f64, hi: f64, rng: &mut Rng) -> Result<f64, EnvError> {
    if !(lo < hi) || !(std > 0.0) {
        return Err(EnvError::Internal(format!(
            "truncated normal needs lo < hi and std > 0 (lo={}, hi={}, std={})",
            lo, hi, std
        )));
    }
    for _ in 0..TRUNC_NORMAL_MAX_ATTEMPTS {
        let z: f64 = rng.sample(StandardNormal);
        let x = mean + std * z;
        if (lo..=hi).contains(&x) {
            return Ok(x);
        }
    }
    Err(EnvError::Internal(format!(
        "truncated normal rejected {} draws on [{}, {}]",
        TRUNC_NORMAL_MAX_ATTEMPTS, lo, hi
    )))
}

/// Reward for entering `next` from `prev`.
///
/// Precedence: goal (0) > loopback (`-(r_base + r_loopback)`) > crosswalk
/// (truncated normal around `-r_base` on `[-2 r_base, 0]`) > base (`-r_base`).
pub fn reward_sample(
    map: &GraphMap,
    next: NodeId,
    prev: NodeId,
    cfg: &EnvConfig,
    rng: &mut Rng,
) -> Result<f64, EnvError> {
    if map.is_goal(next) {
        Ok(0.0)
    } else if next == prev {
        Ok(-(cfg.r_base + cfg.r_loopback))
    } else if map.is_crosswalk(next) {
        trunc_normal(-cfg.r_base, cfg.crosswalk_std, -2.0 * cfg.r_base, 0.0, rng)
    } else {
        Ok(-cfg.r_base)
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
}

/// One running episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Env {
    map: Arc<GraphMap>,
    cfg: EnvConfig,
    current: NodeId,
    prev: NodeId,
    steps: usize,
    done: bool,
    rng: Rng,
}

/// Serializable snapshot of an [`Env`] (the map and config live elsewhere).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub current: NodeId,
    pub prev: NodeId,
    pub steps: usize,
    pub done: bool,
    pub rng: Rng,
}

impl Env {
    /// Starts an episode at the map's start node.
    pub fn reset(map: Arc<GraphMap>, cfg: EnvConfig, seed: u64) -> (Env, Observation) {
        let start = map.start();
        Env::reset_at(map, cfg, seed, start)
    }

    /// Starts an episode at an arbitrary node.
    pub fn reset_at(map: Arc<GraphMap>, cfg: EnvConfig, seed: u64, state: NodeId) -> (Env, Observation) {
        let done = map.is_goal(state);
        let env = Env {
            map,
            cfg,
            current: state,
            prev: state,
            steps: 0,
            done,
            rng: rng_from_seed(seed),
        };
        let obs = env.observation();
        (env, obs)
    }

    pub fn restore(map: Arc<GraphMap>, cfg: EnvConfig, snap: EnvSnapshot) -> Env {
        Env {
            map,
            cfg,
            current: snap.current,
            prev: snap.prev,
            steps: snap.steps,
            done: snap.done,
            rng: snap.rng,
        }
    }

    pub fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot {
            current: self.current,
            prev: self.prev,
            steps: self.steps,
            done: self.done,
            rng: self.rng.clone(),
        }
    }

    pub fn map(&self) -> &GraphMap {
        &self.map
    }
    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }
    pub fn current(&self) -> NodeId {
        self.current
    }
    pub fn steps(&self) -> usize {
        self.steps
    }
    pub fn is_done(&self) -> bool {
        self.done
    }
    pub fn reached_goal(&self) -> bool {
        self.map.is_goal(self.current)
    }

    pub fn observation(&self) -> Observation {
        observe(self.map.num_states(), self.cfg.obs_encoding, self.current)
    }

    pub fn step(&mut self, action: ActionIndex) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        let next = self.map.transition(self.current, action)?;
        let reward = reward_sample(&self.map, next, self.current, &self.cfg, &mut self.rng)?;
        self.prev = self.current;
        self.current = next;
        self.steps += 1;
        self.done = self.map.is_goal(next) || self.steps >= self.cfg.episode_cap;
        Ok(StepOutcome { observation: self.observation(), reward, done: self.done })
    }
}
