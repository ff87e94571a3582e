//! Training loop, periodic evaluation and multi-seed trials.
//!
//! A [`Session`] owns everything one seed needs: the agent, the running
//! training episode, the behavior RNG and the evaluation history. All of
//! it round-trips through a checkpoint, so a run split at any step and
//! resumed from disk is bit-identical to an uninterrupted run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Env, EnvConfig, EnvError};
use crate::learner::{Agent, AgentConfig, LearnerError, Transition};
use crate::policies::ExecPolicy;
use crate::rng::{derive_seed, purpose, stream, Rng};
use crate::roadnet::{
    generate_scenario, ActionIndex, GraphMap, MapError, NodeId, Route, RouteCatalog, RouteClass,
    ScenarioKind, ScenarioParams,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Where the road network comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MapSource {
    File {
        path: PathBuf,
    },
    Generated {
        generate: ScenarioKind,
        noisy_len: usize,
        robust_len: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        robust2_len: Option<usize>,
    },
}

impl MapSource {
    pub fn load(&self) -> Result<GraphMap, TrainError> {
        match self {
            MapSource::File { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|source| TrainError::Io { path: path.clone(), source })?;
                Ok(GraphMap::from_json(&text)?)
            }
            MapSource::Generated { generate, noisy_len, robust_len, robust2_len } => Ok(generate_scenario(
                *generate,
                ScenarioParams { noisy_len: *noisy_len, robust_len: *robust_len, robust2_len: *robust2_len },
            )?),
        }
    }
}

fn default_eval_interval() -> u64 {
    10_000
}
fn default_eval_cap() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub map: MapSource,
    pub env: EnvConfig,
    #[serde(default)]
    pub agent: AgentConfig,
    pub total_steps: u64,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: u64,
    #[serde(default = "default_eval_cap")]
    pub eval_episode_cap: usize,
    /// Greedy, SSD and thresholded SSD with `5 r_base` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exec_policies: Option<Vec<ExecPolicy>>,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Learning rates to sweep; each runs the full seed list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_sweep: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative map and output paths resolve against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| TrainError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = RunConfig::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let MapSource::File { path: p } = &mut cfg.map {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.env.validate()?;
        self.agent.validate()?;
        if self.seeds.is_empty() {
            return Err(TrainError::Config("seeds must not be empty".into()));
        }
        if self.eval_interval == 0 || self.total_steps < self.eval_interval {
            return Err(TrainError::Config(format!(
                "total_steps ({}) must be at least eval_interval ({}) and eval_interval positive",
                self.total_steps, self.eval_interval
            )));
        }
        if self.eval_episode_cap == 0 {
            return Err(TrainError::Config("eval_episode_cap must be positive".into()));
        }
        if matches!(&self.exec_policies, Some(p) if p.is_empty()) {
            return Err(TrainError::Config("exec_policies must not be empty".into()));
        }
        if let Some(lrs) = &self.lr_sweep {
            if lrs.is_empty() || lrs.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
                return Err(TrainError::Config("lr_sweep must list positive learning rates".into()));
            }
        }
        Ok(())
    }

    pub fn exec_policies(&self) -> Vec<ExecPolicy> {
        self.exec_policies.clone().unwrap_or_else(|| {
            vec![
                ExecPolicy::Greedy,
                ExecPolicy::ssd(),
                ExecPolicy::ThresholdedSsd { thres: 5.0 * self.env.r_base },
            ]
        })
    }

    pub fn num_eval_points(&self) -> u64 {
        self.total_steps / self.eval_interval
    }

    /// Adds `offset` to every seed (cluster sharding).
    pub fn offset_seeds(&mut self, offset: u64) {
        for s in &mut self.seeds {
            *s = s.wrapping_add(offset);
        }
    }
}

/// One evaluation rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub visited: Vec<NodeId>,
    pub actions: Vec<ActionIndex>,
    pub rewards: Vec<f64>,
    pub discounted_return: f64,
    pub reached_goal: bool,
}

impl EpisodeTrace {
    /// `Σ_k γ^k r_{k+1}` of the stored rewards.
    pub fn recompute_return(&self, gamma: f64) -> f64 {
        let mut g = 0.0;
        let mut discount = 1.0;
        for r in &self.rewards {
            g += discount * r;
            discount *= gamma;
        }
        g
    }

    pub fn route(&self) -> Route {
        Route::new(self.visited.clone())
    }
}

/// Rolls out `exec` from the map's start with no exploration until a goal
/// or `episode_cap` steps.
pub fn evaluate(
    agent: &Agent,
    exec: &ExecPolicy,
    map: &Arc<GraphMap>,
    env_cfg: &EnvConfig,
    episode_cap: usize,
    gamma: f64,
    seed: u64,
) -> Result<EpisodeTrace, TrainError> {
    let mut cfg = env_cfg.clone();
    cfg.episode_cap = episode_cap;
    let (mut env, _) = Env::reset(map.clone(), cfg, seed);
    let mut trace = EpisodeTrace {
        visited: vec![env.current()],
        actions: Vec::new(),
        rewards: Vec::new(),
        discounted_return: 0.0,
        reached_goal: env.reached_goal(),
    };
    let mut discount = 1.0;
    while !env.is_done() {
        let a = exec.select(&agent.action_dists(env.current()));
        let out = env.step(a)?;
        trace.actions.push(a);
        trace.rewards.push(out.reward);
        trace.visited.push(env.current());
        trace.discounted_return += discount * out.reward;
        discount *= gamma;
    }
    trace.reached_goal = env.reached_goal();
    Ok(trace)
}

/// One point of a learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub policy: String,
    pub step: u64,
    pub discounted_return: f64,
    pub reached_goal: bool,
    pub route_class: RouteClass,
}

/// Everything one seed produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedReport {
    pub seed: u64,
    pub points: Vec<EvalPoint>,
    /// Final evaluation route per policy.
    pub final_routes: BTreeMap<String, (RouteClass, Route)>,
}

impl SeedReport {
    pub fn final_class(&self, policy: &str) -> Option<RouteClass> {
        self.final_routes.get(policy).map(|(c, _)| *c)
    }
}

/// Training state of one seed.
#[derive(Debug, Clone)]
pub struct Session {
    pub(crate) cfg: RunConfig,
    pub(crate) map: Arc<GraphMap>,
    pub(crate) catalog: RouteCatalog,
    pub(crate) seed: u64,
    pub(crate) agent: Agent,
    pub(crate) env: Env,
    pub(crate) episode: u64,
    pub(crate) step: u64,
    pub(crate) behavior_rng: Rng,
    pub(crate) points: Vec<EvalPoint>,
    pub(crate) final_routes: BTreeMap<String, (RouteClass, Route)>,
}

fn train_env_seed(seed: u64, episode: u64) -> u64 {
    derive_seed(derive_seed(seed, purpose::TRAIN_ENV), episode)
}

fn eval_env_seed(seed: u64, eval_index: u64) -> u64 {
    derive_seed(derive_seed(seed, purpose::EVAL_ENV), eval_index)
}

impl Session {
    pub fn new(cfg: &RunConfig, map: Arc<GraphMap>, seed: u64) -> Result<Self, TrainError> {
        cfg.validate()?;
        let agent = Agent::new(
            cfg.agent.clone(),
            map.num_states(),
            map.action_dim(),
            cfg.env.obs_encoding,
            derive_seed(seed, purpose::NET_INIT),
        )?;
        let (env, _) = Env::reset(map.clone(), cfg.env.clone(), train_env_seed(seed, 0));
        Ok(Session {
            cfg: cfg.clone(),
            catalog: RouteCatalog::new(&map),
            map,
            seed,
            agent,
            env,
            episode: 0,
            step: 0,
            behavior_rng: stream(seed, purpose::BEHAVIOR),
            points: Vec::new(),
            final_routes: BTreeMap::new(),
        })
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }
    pub fn agent_mut(&mut self) -> &mut Agent {
        &mut self.agent
    }
    pub fn map(&self) -> &Arc<GraphMap> {
        &self.map
    }
    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn step(&self) -> u64 {
        self.step
    }
    pub fn points(&self) -> &[EvalPoint] {
        &self.points
    }
    pub fn is_finished(&self) -> bool {
        self.step >= self.cfg.total_steps
    }

    /// Advances training to `target` steps (capped at `total_steps`).
    pub fn run_until(&mut self, target: u64) -> Result<(), TrainError> {
        let target = target.min(self.cfg.total_steps);
        let total = self.cfg.total_steps;
        let batch_size = self.cfg.agent.batch_size;
        let sync = self.cfg.agent.target_sync_interval();
        while self.step < target {
            let s = self.env.current();
            let a = self.agent.behavior_action(s, self.step, total, &mut self.behavior_rng);
            let out = self.env.step(a)?;
            self.agent.buffer.push(Transition {
                s,
                a,
                r: out.reward,
                s_next: self.env.current(),
                done: self.env.reached_goal(),
            });
            self.step += 1;
            if self.agent.buffer.len() >= batch_size {
                for _ in 0..self.cfg.agent.gradient_steps {
                    let batch = self.agent.buffer.sample(batch_size, &mut self.behavior_rng)?;
                    self.agent.qr_update(&batch)?;
                }
            }
            if self.step.is_multiple_of(sync) {
                self.agent.sync_target();
            }
            if out.done {
                self.episode += 1;
                let (env, _) = Env::reset(
                    self.map.clone(),
                    self.cfg.env.clone(),
                    train_env_seed(self.seed, self.episode),
                );
                self.env = env;
            }
            if self.step.is_multiple_of(self.cfg.eval_interval) {
                self.evaluate_all(self.step / self.cfg.eval_interval)?;
            }
        }
        Ok(())
    }

    fn evaluate_all(&mut self, eval_index: u64) -> Result<(), TrainError> {
        let seed = eval_env_seed(self.seed, eval_index);
        for exec in self.cfg.exec_policies() {
            let trace = self.evaluate(&exec, seed)?;
            let class = self.catalog.classify(&self.map, &trace.visited, trace.reached_goal);
            self.points.push(EvalPoint {
                policy: exec.name().to_string(),
                step: self.step,
                discounted_return: trace.discounted_return,
                reached_goal: trace.reached_goal,
                route_class: class,
            });
            self.final_routes
                .insert(exec.name().to_string(), (class, crate::roadnet::collapse_repeats(&trace.visited)));
        }
        Ok(())
    }

    /// Evaluates the current agent with `exec` in a fresh environment.
    pub fn evaluate(&self, exec: &ExecPolicy, seed: u64) -> Result<EpisodeTrace, TrainError> {
        evaluate(
            &self.agent,
            exec,
            &self.map,
            &self.cfg.env,
            self.cfg.eval_episode_cap,
            self.cfg.agent.gamma,
            seed,
        )
    }

    pub fn report(&self) -> SeedReport {
        SeedReport { seed: self.seed, points: self.points.clone(), final_routes: self.final_routes.clone() }
    }

    pub fn classify(&self, trace: &EpisodeTrace) -> RouteClass {
        self.catalog.classify(&self.map, &trace.visited, trace.reached_goal)
    }
}

/// Trains one seed to completion.
pub fn train_one(cfg: &RunConfig, map: Arc<GraphMap>, seed: u64) -> Result<Session, TrainError> {
    let mut session = Session::new(cfg, map, seed)?;
    session.run_until(cfg.total_steps)?;
    Ok(session)
}

/// Mean and standard error of one policy's return at one eval step.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatePoint {
    pub policy: String,
    pub step: u64,
    pub mean_return: f64,
    pub stderr_return: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialReport {
    pub policies: Vec<String>,
    pub seeds: Vec<SeedReport>,
    pub aggregate: Vec<AggregatePoint>,
}

/// Sample mean and standard error (zero for a single value).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

impl TrialReport {
    pub fn from_seeds(policies: Vec<String>, seeds: Vec<SeedReport>) -> Self {
        let mut by_key: BTreeMap<(usize, u64), Vec<f64>> = BTreeMap::new();
        for s in &seeds {
            for p in &s.points {
                let idx = policies.iter().position(|q| *q == p.policy).unwrap_or(policies.len());
                by_key.entry((idx, p.step)).or_default().push(p.discounted_return);
            }
        }
        let aggregate = by_key
            .into_iter()
            .map(|((idx, step), values)| {
                let (mean_return, stderr_return) = mean_stderr(&values);
                AggregatePoint {
                    policy: policies.get(idx).cloned().unwrap_or_default(),
                    step,
                    mean_return,
                    stderr_return,
                    n_seeds: values.len(),
                }
            })
            .collect();
        TrialReport { policies, seeds, aggregate }
    }

    /// Final route class counts per policy.
    pub fn class_histograms(&self) -> BTreeMap<String, BTreeMap<RouteClass, usize>> {
        self.policies
            .iter()
            .map(|p| {
                let h = crate::roadnet::class_histogram(self.seeds.iter().filter_map(|s| s.final_class(p)));
                (p.clone(), h)
            })
            .collect()
    }

    pub fn count_final(&self, policy: &str, class: RouteClass) -> usize {
        self.seeds.iter().filter(|s| s.final_class(policy) == Some(class)).count()
    }
}

/// Finished trials: the report plus each seed's session for checkpointing.
#[derive(Debug)]
pub struct Trials {
    pub report: TrialReport,
    pub sessions: Vec<Session>,
}

/// Trains every seed of `cfg` on up to `jobs` threads and aggregates.
pub fn run_trials(cfg: &RunConfig, map: Arc<GraphMap>, jobs: usize) -> Result<Trials, TrainError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| TrainError::Config(format!("thread pool: {}", e)))?;
    let sessions: Vec<Session> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| train_one(cfg, map.clone(), seed))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let policies = cfg.exec_policies().iter().map(|p| p.name().to_string()).collect();
    let report = TrialReport::from_seeds(policies, sessions.iter().map(Session::report).collect());
    Ok(Trials { report, sessions })
}

/// Area under one seed's learning curve (rectangle rule).
pub fn curve_area(points: &[EvalPoint], policy: &str, eval_interval: u64) -> f64 {
    points
        .iter()
        .filter(|p| p.policy == policy)
        .map(|p| p.discounted_return * eval_interval as f64)
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub lr: f64,
    pub policy: String,
    pub mean_area: f64,
    pub stderr_area: f64,
    pub n_seeds: usize,
}

/// Runs the trials once per learning rate in `cfg.lr_sweep`.
pub fn run_sweep(cfg: &RunConfig, map: Arc<GraphMap>, jobs: usize) -> Result<Vec<SweepPoint>, TrainError> {
    let lrs = cfg.lr_sweep.clone().unwrap_or_else(|| vec![cfg.agent.lr]);
    let mut out = Vec::new();
    for lr in lrs {
        let mut c = cfg.clone();
        c.agent.lr = lr;
        c.lr_sweep = None;
        let trials = run_trials(&c, map.clone(), jobs)?;
        for policy in &trials.report.policies {
            let areas: Vec<f64> = trials
                .report
                .seeds
                .iter()
                .map(|s| curve_area(&s.points, policy, c.eval_interval))
                .collect();
            let (mean_area, stderr_area) = mean_stderr(&areas);
            out.push(SweepPoint { lr, policy: policy.clone(), mean_area, stderr_area, n_seeds: areas.len() });
        }
    }
    Ok(out)
}

