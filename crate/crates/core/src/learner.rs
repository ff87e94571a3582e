//! Quantile-regression TD learning (QR-DQN).
//!
//! The agent keeps N quantile atoms per state-action pair, either in a
//! table or as the flattened, action-major output of a [`DenseNet`]
//! (`output[a * N + i] = θ_i(s, a)`). Each update regresses every online
//! atom `θ_i(s, a)` onto every bootstrapped target atom
//! `r + γ θ⁻_j(s', a*)` under the quantile Huber loss, where `a*` is the
//! greedy action of the target parameters at `s'`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{observe, ObsEncoding};
use crate::nn::{AdamState, DenseNet, Gradients, NnError};
use crate::policies::greedy_from_atoms;
use crate::quantdist::{midpoints, quantile_huber, quantile_huber_grad, QuantError, QuantileDist};
use crate::rng::Rng;
use crate::roadnet::{ActionIndex, NodeId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("cannot sample from an empty replay buffer")]
    EmptyBuffer,
    #[error("invalid agent config: {0}")]
    BadConfig(String),
    #[error("transition references state {s} / action {a} outside the agent's tables")]
    OutOfRange { s: usize, a: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Quant(#[from] QuantError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: NodeId,
    pub a: ActionIndex,
    pub r: f64,
    pub s_next: NodeId,
    /// `s_next` is terminal; truncated episodes are not.
    pub done: bool,
}

/// Fixed-capacity FIFO of transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer { items: Vec::with_capacity(capacity.min(1 << 16)), capacity: capacity.max(1), cursor: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends `t`, overwriting the oldest entry once full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Contents, oldest first.
    pub fn contents(&self) -> Vec<Transition> {
        if self.items.len() < self.capacity {
            self.items.clone()
        } else {
            self.items[self.cursor..].iter().chain(&self.items[..self.cursor]).copied().collect()
        }
    }

    /// `k` uniform draws with replacement.
    pub fn sample(&self, k: usize, rng: &mut Rng) -> Result<Vec<Transition>, LearnerError> {
        if self.items.is_empty() {
            return Err(LearnerError::EmptyBuffer);
        }
        Ok((0..k).map(|_| self.items[rng.random_range(0..self.items.len())]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Tabular,
    Network,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

mod defaults {
    pub fn n_quantiles() -> usize {
        4
    }
    pub fn gamma() -> f64 {
        0.99
    }
    pub fn lr() -> f64 {
        5e-4
    }
    pub fn buffer_size() -> usize {
        2048
    }
    pub fn batch_size() -> usize {
        64
    }
    pub fn gradient_steps() -> usize {
        1
    }
    pub fn exploration_fraction() -> f64 {
        0.02
    }
    pub fn exploration_final_eps() -> f64 {
        0.1
    }
    pub fn kappa() -> f64 {
        crate::quantdist::DEFAULT_KAPPA
    }
    pub fn hidden() -> Vec<usize> {
        vec![64, 64]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    #[serde(default = "defaults::n_quantiles")]
    pub n_quantiles: usize,
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::buffer_size")]
    pub buffer_size: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::gradient_steps")]
    pub gradient_steps: usize,
    #[serde(default = "defaults::exploration_fraction")]
    pub exploration_fraction: f64,
    #[serde(default = "defaults::exploration_final_eps")]
    pub exploration_final_eps: f64,
    /// Environment steps between target copies; backend default if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_sync_interval: Option<u64>,
    #[serde(default)]
    pub backend: Backend,
    /// Backend default if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<Optimizer>,
    #[serde(default = "defaults::kappa")]
    pub kappa: f64,
    /// Hidden layer widths of the network backend.
    #[serde(default = "defaults::hidden")]
    pub hidden: Vec<usize>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            n_quantiles: defaults::n_quantiles(),
            gamma: defaults::gamma(),
            lr: defaults::lr(),
            buffer_size: defaults::buffer_size(),
            batch_size: defaults::batch_size(),
            gradient_steps: defaults::gradient_steps(),
            exploration_fraction: defaults::exploration_fraction(),
            exploration_final_eps: defaults::exploration_final_eps(),
            target_sync_interval: None,
            backend: Backend::Tabular,
            optimizer: None,
            kappa: defaults::kappa(),
            hidden: defaults::hidden(),
        }
    }
}

impl AgentConfig {
    pub fn target_sync_interval(&self) -> u64 {
        self.target_sync_interval.unwrap_or(match self.backend {
            Backend::Tabular => 1,
            Backend::Network => 1000,
        })
    }

    pub fn optimizer(&self) -> Optimizer {
        self.optimizer.unwrap_or(Optimizer::Adam)
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |m: &str| Err(LearnerError::BadConfig(m.to_string()));
        if self.n_quantiles == 0 {
            return bad("n_quantiles must be positive");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.buffer_size == 0 || self.batch_size == 0 || self.gradient_steps == 0 {
            return bad("buffer_size, batch_size and gradient_steps must be positive");
        }
        if !(self.exploration_fraction > 0.0 && self.exploration_fraction <= 1.0) {
            return bad("exploration_fraction must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.exploration_final_eps) {
            return bad("exploration_final_eps must lie in [0, 1]");
        }
        if self.target_sync_interval == Some(0) {
            return bad("target_sync_interval must be positive");
        }
        if !(self.kappa > 0.0) {
            return bad("kappa must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        Ok(())
    }
}

/// Linear ε schedule: 1 → `exploration_final_eps` over the first
/// `exploration_fraction` of training, constant afterwards.
pub fn epsilon(step: u64, total_steps: u64, cfg: &AgentConfig) -> f64 {
    let horizon = cfg.exploration_fraction * total_steps as f64;
    if horizon <= 0.0 {
        return cfg.exploration_final_eps;
    }
    let progress = (step as f64 / horizon).min(1.0);
    1.0 + progress * (cfg.exploration_final_eps - 1.0)
}

/// Quantile atoms of every state-action pair, `values[(s * A + a) * N + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_quantiles: usize,
    pub values: Vec<f64>,
}

impl QuantileTable {
    pub fn zeros(n_states: usize, n_actions: usize, n_quantiles: usize) -> Self {
        QuantileTable { n_states, n_actions, n_quantiles, values: vec![0.0; n_states * n_actions * n_quantiles] }
    }

    fn offset(&self, s: NodeId, a: ActionIndex) -> usize {
        (s * self.n_actions + a) * self.n_quantiles
    }

    /// All actions' atoms at `s`, action-major.
    pub fn state_atoms(&self, s: NodeId) -> &[f64] {
        let w = self.n_actions * self.n_quantiles;
        &self.values[s * w..(s + 1) * w]
    }
}

/// Online or target parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantileModel {
    Tabular(QuantileTable),
    Network(DenseNet),
}

impl QuantileModel {
    pub fn params(&self) -> Vec<f64> {
        match self {
            QuantileModel::Tabular(t) => t.values.clone(),
            QuantileModel::Network(n) => n.params(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            QuantileModel::Tabular(t) => t.values.len(),
            QuantileModel::Network(n) => n.param_count(),
        }
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<(), NnError> {
        match self {
            QuantileModel::Tabular(t) => {
                if flat.len() != t.values.len() {
                    return Err(NnError::DimMismatch { expected: t.values.len(), got: flat.len() });
                }
                t.values.copy_from_slice(flat);
                Ok(())
            }
            QuantileModel::Network(n) => n.set_params(flat),
        }
    }
}

/// Per-transition `N × N` matrix of quantile TD errors, row `i` (online
/// atom) by column `j` (target atom).
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaMatrix {
    pub n: usize,
    pub values: Vec<f64>,
}

impl DeltaMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    config: AgentConfig,
    n_states: usize,
    n_actions: usize,
    encoding: ObsEncoding,
    taus: Vec<f64>,
    pub(crate) online: QuantileModel,
    pub(crate) target: QuantileModel,
    pub(crate) optimizer_state: Option<AdamState>,
    pub buffer: ReplayBuffer,
    pub(crate) updates: u64,
}

impl Agent {
    /// Zero-initialized table, or a Glorot-initialized network seeded by
    /// `init_seed`. The target starts as a copy of the online parameters.
    pub fn new(
        config: AgentConfig,
        n_states: usize,
        n_actions: usize,
        encoding: ObsEncoding,
        init_seed: u64,
    ) -> Result<Self, LearnerError> {
        config.validate()?;
        if n_states == 0 || n_actions == 0 {
            return Err(LearnerError::BadConfig("agent needs at least one state and action".into()));
        }
        let n = config.n_quantiles;
        let online = match config.backend {
            Backend::Tabular => QuantileModel::Tabular(QuantileTable::zeros(n_states, n_actions, n)),
            Backend::Network => {
                let mut dims = vec![encoding.dim(n_states)];
                dims.extend(&config.hidden);
                dims.push(n_actions * n);
                QuantileModel::Network(DenseNet::init(&dims, init_seed)?)
            }
        };
        let optimizer_state = match config.optimizer() {
            Optimizer::Adam => Some(AdamState::new(online.param_count())),
            Optimizer::Sgd => None,
        };
        Ok(Agent {
            taus: midpoints(n)?,
            buffer: ReplayBuffer::new(config.buffer_size),
            target: online.clone(),
            online,
            optimizer_state,
            config,
            n_states,
            n_actions,
            encoding,
            updates: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }
    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    pub fn n_quantiles(&self) -> usize {
        self.config.n_quantiles
    }
    pub fn encoding(&self) -> ObsEncoding {
        self.encoding
    }
    pub fn online(&self) -> &QuantileModel {
        &self.online
    }
    pub fn target(&self) -> &QuantileModel {
        &self.target
    }
    pub fn optimizer_state(&self) -> Option<&AdamState> {
        self.optimizer_state.as_ref()
    }
    /// Number of gradient updates applied so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn model_atoms(&self, model: &QuantileModel, s: NodeId) -> Vec<f64> {
        match model {
            QuantileModel::Tabular(t) => t.state_atoms(s).to_vec(),
            QuantileModel::Network(net) => {
                let x = observe(self.n_states, self.encoding, s);
                net.forward(&x.0).expect("input dimension fixed at construction")
            }
        }
    }

    /// Online atoms of every action at `s`, action-major.
    pub fn atoms(&self, s: NodeId) -> Vec<f64> {
        self.model_atoms(&self.online, s)
    }

    pub fn target_atoms(&self, s: NodeId) -> Vec<f64> {
        self.model_atoms(&self.target, s)
    }

    /// Online return distribution of every action at `s`.
    pub fn action_dists(&self, s: NodeId) -> Vec<QuantileDist> {
        self.atoms(s)
            .chunks_exact(self.n_quantiles())
            .map(|c| QuantileDist::new(c.to_vec()).expect("learned atoms stay finite"))
            .collect()
    }

    /// Greedy action of the online parameters (mean maximizer).
    pub fn greedy(&self, s: NodeId) -> ActionIndex {
        greedy_from_atoms(&self.atoms(s), self.n_quantiles())
    }

    /// Overwrites `θ(s, a)` in both online and target tables. Tabular only.
    pub fn set_quantiles(&mut self, s: NodeId, a: ActionIndex, atoms: &[f64]) -> Result<(), LearnerError> {
        if s >= self.n_states || a >= self.n_actions {
            return Err(LearnerError::OutOfRange { s, a });
        }
        if atoms.len() != self.n_quantiles() {
            return Err(LearnerError::BadConfig(format!("expected {} atoms", self.n_quantiles())));
        }
        for model in [&mut self.online, &mut self.target] {
            match model {
                QuantileModel::Tabular(t) => {
                    let o = t.offset(s, a);
                    t.values[o..o + atoms.len()].copy_from_slice(atoms);
                }
                QuantileModel::Network(_) => {
                    return Err(LearnerError::BadConfig("set_quantiles needs the tabular backend".into()))
                }
            }
        }
        Ok(())
    }

    /// ε-greedy behavior policy.
    pub fn behavior_action(&self, s: NodeId, step: u64, total_steps: u64, rng: &mut Rng) -> ActionIndex {
        let eps = epsilon(step, total_steps, &self.config);
        if rng.random::<f64>() < eps {
            rng.random_range(0..self.n_actions)
        } else {
            self.greedy(s)
        }
    }

    fn check_batch(&self, batch: &[Transition]) -> Result<(), LearnerError> {
        if batch.is_empty() {
            return Err(LearnerError::EmptyBatch);
        }
        for t in batch {
            if t.s >= self.n_states || t.s_next >= self.n_states || t.a >= self.n_actions {
                return Err(LearnerError::OutOfRange { s: t.s.max(t.s_next), a: t.a });
            }
        }
        Ok(())
    }

    /// Target atoms `r + γ θ⁻_j(s', a*)`, or `r` repeated for terminal `s'`.
    fn target_values(&self, t: &Transition) -> Vec<f64> {
        let n = self.n_quantiles();
        if t.done {
            return vec![t.r; n];
        }
        let next = self.target_atoms(t.s_next);
        let a_star = greedy_from_atoms(&next, n);
        next[a_star * n..(a_star + 1) * n]
            .iter()
            .map(|&z| t.r + self.config.gamma * z)
            .collect()
    }

    fn deltas_for(&self, t: &Transition, online_atoms: &[f64]) -> DeltaMatrix {
        let n = self.n_quantiles();
        let theta = &online_atoms[t.a * n..(t.a + 1) * n];
        let targets = self.target_values(t);
        let mut values = Vec::with_capacity(n * n);
        for &th in theta {
            for &tz in &targets {
                values.push(tz - th);
            }
        }
        DeltaMatrix { n, values }
    }

    /// Quantile TD errors `δ_ij` for each transition.
    pub fn td_deltas(&self, batch: &[Transition]) -> Result<Vec<DeltaMatrix>, LearnerError> {
        self.check_batch(batch)?;
        Ok(batch.iter().map(|t| self.deltas_for(t, &self.atoms(t.s))).collect())
    }

    /// One quantile-regression step on `batch`. Returns the batch loss
    /// `mean_b Σ_i (1/N) Σ_j ρ_{τ̂_i}(δ_ij)` measured before the step.
    pub fn qr_update(&mut self, batch: &[Transition]) -> Result<f64, LearnerError> {
        self.check_batch(batch)?;
        let n = self.n_quantiles();
        let kappa = self.config.kappa;
        let scale = 1.0 / (batch.len() as f64 * n as f64);
        let mut loss = 0.0;
        // dL/dθ_i(s, a) per transition; ∂δ_ij/∂θ_i = -1.
        let mut per_sample: Vec<(usize, Vec<f64>)> = Vec::with_capacity(batch.len());
        for (b, t) in batch.iter().enumerate() {
            let deltas = self.deltas_for(t, &self.atoms(t.s));
            let mut g = vec![0.0; n];
            for (i, gi) in g.iter_mut().enumerate() {
                let tau = self.taus[i];
                for j in 0..n {
                    let d = deltas.get(i, j);
                    loss += quantile_huber(d, tau, kappa) / n as f64;
                    *gi -= quantile_huber_grad(d, tau, kappa) * scale;
                }
            }
            per_sample.push((b, g));
        }
        loss /= batch.len() as f64;

        let lr = self.config.lr;
        match &mut self.online {
            QuantileModel::Tabular(table) => {
                let mut grads = vec![0.0; table.values.len()];
                for (b, g) in &per_sample {
                    let t = &batch[*b];
                    let o = table.offset(t.s, t.a);
                    for (k, gi) in g.iter().enumerate() {
                        grads[o + k] += gi;
                    }
                }
                match &mut self.optimizer_state {
                    Some(adam) => adam.step(&mut table.values, &grads, lr)?,
                    None => table.values.iter_mut().zip(&grads).for_each(|(p, g)| *p -= lr * g),
                }
            }
            QuantileModel::Network(net) => {
                let mut grads = Gradients::zeros_like(net);
                let mut grad_out = vec![0.0; self.n_actions * n];
                for (b, g) in &per_sample {
                    let t = &batch[*b];
                    grad_out.iter_mut().for_each(|x| *x = 0.0);
                    grad_out[t.a * n..(t.a + 1) * n].copy_from_slice(g);
                    let x = observe(self.n_states, self.encoding, t.s);
                    net.backward_into(&x.0, &grad_out, &mut grads)?;
                }
                match &mut self.optimizer_state {
                    Some(adam) => {
                        let mut params = net.params();
                        adam.step(&mut params, &grads.flat(), lr)?;
                        net.set_params(&params)?;
                    }
                    None => net.sgd_step(&grads, lr),
                }
            }
        }
        self.updates += 1;
        Ok(loss)
    }

    /// Copies the online parameters into the target.
    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }

    /// Network backend accessor, mainly for tests.
    pub fn network(&self) -> Option<&DenseNet> {
        match &self.online {
            QuantileModel::Network(n) => Some(n),
            QuantileModel::Tabular(_) => None,
        }
    }

    pub fn network_mut(&mut self) -> Option<&mut DenseNet> {
        match &mut self.online {
            QuantileModel::Network(n) => Some(n),
            QuantileModel::Tabular(_) => None,
        }
    }

    pub fn table(&self) -> Option<&QuantileTable> {
        match &self.online {
            QuantileModel::Tabular(t) => Some(t),
            QuantileModel::Network(_) => None,
        }
    }

    pub(crate) fn restore_parts(
        &mut self,
        online: &[f64],
        target: &[f64],
        adam: Option<AdamState>,
        updates: u64,
    ) -> Result<(), LearnerError> {
        self.online.set_params(online)?;
        self.target.set_params(target)?;
        self.optimizer_state = adam;
        self.updates = updates;
        Ok(())
    }
}

/// Helper for callers holding the distributions of one state.
pub fn dists_from_atoms(atoms: &[f64], n_quantiles: usize) -> Vec<QuantileDist> {
    atoms
        .chunks_exact(n_quantiles)
        .map(|c| QuantileDist::new(c.to_vec()).expect("finite atoms"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::oracle::value_iteration;
    use crate::rng::rng_from_seed;
    use crate::roadnet::parse_map;

    fn tr(s: NodeId, a: ActionIndex, r: f64, s_next: NodeId, done: bool) -> Transition {
        Transition { s, a, r, s_next, done }
    }

    fn cfg_with(n: usize, lr: f64, optimizer: Optimizer) -> AgentConfig {
        AgentConfig { n_quantiles: n, lr, optimizer: Some(optimizer), ..AgentConfig::default() }
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = AgentConfig::default();
        assert_eq!(epsilon(0, 100_000, &cfg), 1.0);
        assert!((epsilon(2_000, 100_000, &cfg) - 0.1).abs() < 1e-12);
        assert!((epsilon(1_000, 100_000, &cfg) - 0.55).abs() < 1e-12);
        assert!((epsilon(90_000, 100_000, &cfg) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn buffer_is_fifo() {
        let mut buf = ReplayBuffer::new(2);
        for k in 1..=3 {
            buf.push(tr(k, 0, 0.0, k, false));
        }
        let states: Vec<NodeId> = buf.contents().iter().map(|t| t.s).collect();
        assert_eq!(states, vec![2, 3]);
        assert_eq!(buf.len(), 2);
    }

    #[test]
    fn sampling_is_with_replacement() {
        let mut buf = ReplayBuffer::new(8);
        buf.push(tr(4, 1, -3.0, 5, false));
        let mut rng = rng_from_seed(1);
        let batch = buf.sample(64, &mut rng).unwrap();
        assert_eq!(batch.len(), 64);
        assert!(batch.iter().all(|t| *t == tr(4, 1, -3.0, 5, false)));
        assert!(matches!(ReplayBuffer::new(3).sample(1, &mut rng), Err(LearnerError::EmptyBuffer)));
    }

    #[test]
    fn sampling_frequencies_are_uniform() {
        let mut buf = ReplayBuffer::new(10);
        for k in 0..10 {
            buf.push(tr(k, 0, 0.0, k, false));
        }
        let mut rng = rng_from_seed(7);
        let draws = 100_000;
        let mut counts = [0usize; 10];
        for t in buf.sample(draws, &mut rng).unwrap() {
            counts[t.s] += 1;
        }
        let p = 0.1;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sigma, "{:?}", counts);
        }
    }

    #[test]
    fn behavior_action_extremes() {
        let mut agent = Agent::new(cfg_with(2, 1e-3, Optimizer::Adam), 3, 4, ObsEncoding::OneHot, 0).unwrap();
        agent.set_quantiles(1, 2, &[5.0, 5.0]).unwrap();
        let mut rng = rng_from_seed(3);
        let draws = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[agent.behavior_action(1, 0, 1000, &mut rng)] += 1;
        }
        let sigma = (draws as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * 0.25).abs() < 3.0 * sigma, "{:?}", counts);
        }

        let mut greedy_cfg = cfg_with(2, 1e-3, Optimizer::Adam);
        greedy_cfg.exploration_final_eps = 0.0;
        let mut greedy = Agent::new(greedy_cfg, 3, 4, ObsEncoding::OneHot, 0).unwrap();
        greedy.set_quantiles(1, 2, &[5.0, 5.0]).unwrap();
        for _ in 0..1000 {
            assert_eq!(greedy.behavior_action(1, 1000, 1000, &mut rng), 2);
        }

        let seq = |seed| {
            let mut r = rng_from_seed(seed);
            (0..50).map(|_| agent.behavior_action(1, 0, 1000, &mut r)).collect::<Vec<_>>()
        };
        assert_eq!(seq(11), seq(11));
    }

    #[test]
    fn converged_terminal_has_zero_deltas() {
        let mut agent = Agent::new(cfg_with(4, 1e-3, Optimizer::Adam), 2, 1, ObsEncoding::OneHot, 0).unwrap();
        agent.set_quantiles(0, 0, &[-3.0; 4]).unwrap();
        let d = agent.td_deltas(&[tr(0, 0, -3.0, 1, true)]).unwrap();
        assert!(d[0].values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_quantile_delta() {
        let mut agent = Agent::new(cfg_with(1, 1e-3, Optimizer::Adam), 2, 2, ObsEncoding::OneHot, 0).unwrap();
        agent.set_quantiles(0, 0, &[-5.0]).unwrap();
        // Action 1 at s' is worse, so a* = 0.
        agent.set_quantiles(1, 0, &[-10.0]).unwrap();
        agent.set_quantiles(1, 1, &[-12.0]).unwrap();
        let d = agent.td_deltas(&[tr(0, 0, -1.0, 1, false)]).unwrap();
        assert!((d[0].get(0, 0) - (-5.9)).abs() < 1e-12);
    }

    #[test]
    fn two_quantile_delta_matrix() {
        let mut agent = Agent::new(cfg_with(2, 1e-3, Optimizer::Adam), 2, 1, ObsEncoding::OneHot, 0).unwrap();
        agent.set_quantiles(0, 0, &[-4.0, -2.0]).unwrap();
        agent.set_quantiles(1, 0, &[-6.0, 0.0]).unwrap();
        let d = agent.td_deltas(&[tr(0, 0, -1.0, 1, false)]).unwrap();
        // targets: -1 + 0.99 * [-6, 0] = [-6.94, -1]
        let expect = [[-6.94 + 4.0, -1.0 + 4.0], [-6.94 + 2.0, -1.0 + 2.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((d[0].get(i, j) - expect[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bootstrap_uses_target_parameters() {
        let cfg = AgentConfig { target_sync_interval: Some(100), ..cfg_with(1, 0.5, Optimizer::Sgd) };
        let mut agent = Agent::new(cfg, 2, 1, ObsEncoding::OneHot, 0).unwrap();
        agent.set_quantiles(1, 0, &[-10.0]).unwrap();
        agent.qr_update(&[tr(1, 0, -1.0, 0, true)]).unwrap();
        assert_ne!(agent.atoms(1), agent.target_atoms(1));
        let d = agent.td_deltas(&[tr(0, 0, 0.0, 1, false)]).unwrap();
        assert!((d[0].get(0, 0) - 0.99 * -10.0).abs() < 1e-12);
        agent.sync_target();
        assert_eq!(agent.atoms(1), agent.target_atoms(1));
    }

    #[test]
    fn zero_td_is_a_fixed_point() {
        for opt in [Optimizer::Adam, Optimizer::Sgd] {
            let mut agent = Agent::new(cfg_with(4, 1e-2, opt), 2, 1, ObsEncoding::OneHot, 0).unwrap();
            agent.set_quantiles(0, 0, &[-3.0; 4]).unwrap();
            let before = agent.online().params();
            let loss = agent.qr_update(&[tr(0, 0, -3.0, 1, true); 8]).unwrap();
            assert_eq!(loss, 0.0);
            assert_eq!(agent.online().params(), before);
        }
    }

    #[test]
    fn deterministic_bandit_converges() {
        for opt in [Optimizer::Sgd, Optimizer::Adam] {
            let mut agent = Agent::new(cfg_with(4, 1e-2, opt), 2, 1, ObsEncoding::OneHot, 0).unwrap();
            let batch = [tr(0, 0, -1.0, 1, true)];
            for _ in 0..10_000 {
                agent.qr_update(&batch).unwrap();
            }
            for x in agent.atoms(0) {
                assert!((x + 1.0).abs() < 1e-2, "{:?}: {}", opt, x);
            }
        }
    }

    #[test]
    fn tabular_step_matches_one_hot_linear_net() {
        let (s_n, a_n, n) = (3, 2, 2);
        let tab_cfg = cfg_with(n, 0.05, Optimizer::Sgd);
        let net_cfg = AgentConfig { backend: Backend::Network, hidden: vec![], ..tab_cfg.clone() };
        let mut tab = Agent::new(tab_cfg, s_n, a_n, ObsEncoding::OneHot, 0).unwrap();
        let mut net = Agent::new(net_cfg, s_n, a_n, ObsEncoding::OneHot, 0).unwrap();
        let init = [[-1.0, 0.5, -2.0, 1.0], [0.25, -0.75, 3.0, -3.0], [-5.0, -4.0, 2.0, 2.5]];
        {
            let layer = &mut net.network_mut().unwrap().layers_mut()[0];
            for s in 0..s_n {
                for o in 0..a_n * n {
                    layer.weights[o * s_n + s] = init[s][o];
                }
            }
            layer.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        net.sync_target();
        for s in 0..s_n {
            for a in 0..a_n {
                tab.set_quantiles(s, a, &init[s][a * n..(a + 1) * n]).unwrap();
            }
        }
        for s in 0..s_n {
            assert_eq!(tab.atoms(s), net.atoms(s));
        }
        let batch = [tr(0, 1, -1.0, 1, false), tr(1, 0, -3.0, 2, false), tr(2, 1, -0.5, 0, true), tr(0, 1, -2.0, 2, false)];
        tab.qr_update(&batch).unwrap();
        net.qr_update(&batch).unwrap();
        let w = &net.network().unwrap().layers()[0].weights;
        for s in 0..s_n {
            let t = tab.table().unwrap().state_atoms(s);
            for o in 0..a_n * n {
                let dt = t[o] - init[s][o];
                let dn = w[o * s_n + s] - init[s][o];
                assert!((dt - dn).abs() < 1e-8, "s {} o {}: {} vs {}", s, o, dt, dn);
            }
        }
    }

    #[test]
    fn single_quantile_learning_matches_value_iteration() {
        // 0 -> 1 -> 2 (goal); action 1 at node 1 leads back to 0.
        let map = parse_map(
            r#"{"name": "chain3",
                "nodes": [{"id": 0, "x": 0, "y": 0, "tags": ["start"]}, {"id": 1, "x": 1, "y": 0},
                          {"id": 2, "x": 2, "y": 0, "tags": ["goal"]}],
                "edges": [{"from": 0, "to": 1, "action": 0}, {"from": 1, "to": 2, "action": 0},
                          {"from": 1, "to": 0, "action": 1}],
                "start": 0, "goals": [2]}"#,
        )
        .unwrap();
        let env_cfg = EnvConfig::new(1.0, 2.0);
        let q = value_iteration(&map, &env_cfg, 0.99, 1e-12);
        let batch = [
            tr(0, 0, -1.0, 1, false),
            tr(0, 1, -3.0, 0, false),
            tr(1, 0, 0.0, 2, true),
            tr(1, 1, -1.0, 0, false),
        ];
        let mut agent = Agent::new(cfg_with(1, 1e-2, Optimizer::Adam), 3, 2, ObsEncoding::OneHot, 0).unwrap();
        for _ in 0..20_000 {
            agent.qr_update(&batch).unwrap();
            agent.sync_target();
        }
        for s in 0..2 {
            for a in 0..2 {
                let learned = agent.atoms(s)[a];
                assert!((learned - q.get(s, a)).abs() < 1e-2, "Q({}, {}) = {} vs {}", s, a, learned, q.get(s, a));
            }
        }
    }

    #[test]
    fn identical_seeds_give_identical_losses() {
        let run = || {
            let mut agent = Agent::new(cfg_with(4, 1e-2, Optimizer::Adam), 3, 2, ObsEncoding::OneHot, 0).unwrap();
            let mut rng = rng_from_seed(5);
            for k in 0..20 {
                agent.buffer.push(tr(k % 3, k % 2, -(k as f64), (k + 1) % 3, k % 5 == 0));
            }
            (0..50)
                .map(|_| {
                    let b = agent.buffer.sample(8, &mut rng).unwrap();
                    agent.qr_update(&b).unwrap()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn out_of_range_batches_are_rejected() {
        let mut agent = Agent::new(cfg_with(2, 1e-2, Optimizer::Adam), 2, 2, ObsEncoding::OneHot, 0).unwrap();
        assert!(matches!(agent.qr_update(&[]), Err(LearnerError::EmptyBatch)));
        assert!(matches!(agent.qr_update(&[tr(0, 2, 0.0, 1, false)]), Err(LearnerError::OutOfRange { .. })));
        assert!(matches!(agent.qr_update(&[tr(0, 0, 0.0, 9, false)]), Err(LearnerError::OutOfRange { .. })));
    }
}
