//! Reference computations used to check the learner.
//!
//! Nothing here shares numerical code with [`crate::learner`] or
//! [`crate::quantdist`]'s SSD sweep: value iteration works on expected
//! rewards, return distributions come from plain Monte-Carlo rollouts, and
//! the SSD check integrates step CDFs on a grid.

use std::sync::Arc;

use thiserror::Error;

use crate::env::{Env, EnvConfig, EnvError};
use crate::quantdist::QuantileDist;
use crate::rng::derive_seed;
use crate::roadnet::{ActionIndex, GraphMap, NodeId, Route};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("policy hit the episode cap in {capped} of {episodes} rollouts")]
    NonterminatingPolicy { capped: usize, episodes: usize },
    #[error("need at least {needed} samples, have {have}")]
    TooFewSamples { needed: usize, have: usize },
    #[error("policy covers {got} states but the map has {expected}")]
    PolicySize { expected: usize, got: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Action values for every state-action pair.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn get(&self, s: NodeId, a: ActionIndex) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn row(&self, s: NodeId) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn value(&self, s: NodeId) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// First maximizing action per state.
    pub fn greedy_policy(&self) -> Vec<ActionIndex> {
        (0..self.n_states)
            .map(|s| {
                let row = self.row(s);
                let mut best = 0;
                for (a, &q) in row.iter().enumerate() {
                    if q > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }
}

/// Expected immediate reward of entering `next` from `prev`. The crosswalk
/// perturbation is symmetric about `-r_base` so its mean is `-r_base`.
fn expected_reward(map: &GraphMap, next: NodeId, prev: NodeId, cfg: &EnvConfig) -> f64 {
    if map.is_goal(next) {
        0.0
    } else if next == prev {
        -(cfg.r_base + cfg.r_loopback)
    } else {
        -cfg.r_base
    }
}

/// Q* by iterating the Bellman optimality operator until the sup-norm
/// change falls below `tol`. Goal states are absorbing with value 0.
pub fn value_iteration(map: &GraphMap, cfg: &EnvConfig, gamma: f64, tol: f64) -> QTable {
    let (ns, na) = (map.num_states(), map.action_dim());
    let mut q = vec![0.0; ns * na];
    let succ: Vec<NodeId> = (0..ns * na)
        .map(|k| map.transition(k / na, k % na).expect("indices in range"))
        .collect();
    loop {
        let v: Vec<f64> = (0..ns)
            .map(|s| {
                if map.is_goal(s) {
                    0.0
                } else {
                    q[s * na..(s + 1) * na].iter().copied().fold(f64::NEG_INFINITY, f64::max)
                }
            })
            .collect();
        let mut change = 0.0_f64;
        for s in 0..ns {
            if map.is_goal(s) {
                continue;
            }
            for a in 0..na {
                let next = succ[s * na + a];
                let updated = expected_reward(map, next, s, cfg) + gamma * v[next];
                change = change.max((updated - q[s * na + a]).abs());
                q[s * na + a] = updated;
            }
        }
        if change < tol {
            break;
        }
    }
    QTable { n_states: ns, n_actions: na, values: q }
}

/// Follows the greedy policy of `q` from the map's start.
pub fn greedy_rollout(map: &GraphMap, q: &QTable, cap: usize) -> Route {
    let policy = q.greedy_policy();
    let mut nodes = vec![map.start()];
    let mut s = map.start();
    while !map.is_goal(s) && nodes.len() <= cap {
        s = map.transition(s, policy[s]).expect("policy actions are in range");
        nodes.push(s);
    }
    Route::new(nodes)
}

/// Deterministic policy that walks `route` and takes action 0 elsewhere.
pub fn policy_from_route(map: &GraphMap, route: &Route) -> Vec<ActionIndex> {
    let mut policy = vec![0; map.num_states()];
    for (u, v) in route.edges() {
        if let Some(a) = map.action_between(u, v) {
            policy[u] = a;
        }
    }
    policy
}

/// Sorted return samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDist {
    samples: Vec<f64>,
}

impl EmpiricalDist {
    pub fn new(mut samples: Vec<f64>) -> Self {
        samples.sort_by(f64::total_cmp);
        EmpiricalDist { samples }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Unbiased sample variance.
    pub fn sample_variance(&self) -> f64 {
        let n = self.samples.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        self.samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
    }

    pub fn std_error(&self) -> f64 {
        (self.sample_variance() / self.samples.len() as f64).sqrt()
    }
}

/// Discounted returns of `episodes` rollouts of a fixed policy from `start`.
pub fn mc_returns(
    map: &Arc<GraphMap>,
    cfg: &EnvConfig,
    policy: &[ActionIndex],
    start: NodeId,
    gamma: f64,
    episodes: usize,
    seed: u64,
) -> Result<EmpiricalDist, OracleError> {
    if policy.len() != map.num_states() {
        return Err(OracleError::PolicySize { expected: map.num_states(), got: policy.len() });
    }
    let mut samples = Vec::with_capacity(episodes);
    let mut capped = 0;
    for ep in 0..episodes {
        let (mut env, _) = Env::reset_at(map.clone(), cfg.clone(), derive_seed(seed, ep as u64), start);
        let mut ret = 0.0;
        let mut discount = 1.0;
        while !env.is_done() {
            let out = env.step(policy[env.current()])?;
            ret += discount * out.reward;
            discount *= gamma;
        }
        if !env.reached_goal() {
            capped += 1;
        }
        samples.push(ret);
    }
    if 2 * capped > episodes {
        return Err(OracleError::NonterminatingPolicy { capped, episodes });
    }
    Ok(EmpiricalDist::new(samples))
}

/// Empirical `τ̂_i` quantiles, `τ̂_i = (2i - 1) / 2N`, interpolating
/// linearly between order statistics placed at probabilities
/// `(k + 0.5) / n`.
pub fn empirical_quantiles(d: &EmpiricalDist, n: usize) -> Result<QuantileDist, OracleError> {
    let m = d.len();
    if n == 0 || m < n {
        return Err(OracleError::TooFewSamples { needed: n.max(1), have: m });
    }
    let xs = d.samples();
    let atoms = (1..=n)
        .map(|i| {
            let tau = (2 * i - 1) as f64 / (2 * n) as f64;
            let pos = (tau * m as f64 - 0.5).clamp(0.0, (m - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(m - 1);
            let frac = pos - lo as f64;
            xs[lo] + frac * (xs[hi] - xs[lo])
        })
        .collect();
    Ok(QuantileDist::new(atoms).expect("samples are finite"))
}

/// Brute-force SSD check: integrates both step CDFs on `grid_points`
/// uniform points over `[min atom - 1, max atom + 1]`, refined with the
/// atoms themselves, and compares them at every point with tolerance
/// `1e-6 × range`.
///
/// With every jump on a grid point the CDFs are constant on each cell, so
/// the left Riemann sum is exact and near-ties are not blurred by the
/// grid spacing.
pub fn ssd_grid_check(a: &QuantileDist, b: &QuantileDist, grid_points: usize) -> bool {
    let grid_points = grid_points.max(100);
    let all = a.atoms().iter().chain(b.atoms());
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let hi = all.clone().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let range = hi - lo;
    let h = range / (grid_points - 1) as f64;
    let mut grid: Vec<f64> = (0..grid_points).map(|k| lo + k as f64 * h).chain(all.copied()).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let cdf = |d: &QuantileDist, x: f64| {
        d.atoms().iter().filter(|&&t| t <= x).count() as f64 / d.n() as f64
    };
    let tol = 1e-6 * range;
    let (mut ia, mut ib) = (0.0, 0.0);
    for w in grid.windows(2) {
        let dx = w[1] - w[0];
        ia += dx * cdf(a, w[0]);
        ib += dx * cdf(b, w[0]);
        if ia > ib + tol {
            return false;
        }
    }
    true
}
