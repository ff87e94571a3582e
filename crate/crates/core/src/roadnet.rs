//! Directed road-network graphs.
//!
//! A [`GraphMap`] is the static topology of the environment: vertices are
//! states, edges are actions. Every node exposes the same padded action
//! space of size [`GraphMap::action_dim`]; action indices without an edge
//! are loopbacks that leave the agent where it is.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = usize;
pub type ActionIndex = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("edge {from} -> {to} references an unknown node")]
    DanglingEdge { from: usize, to: usize },
    #[error("node {node} assigns action {action} to more than one edge")]
    DuplicateAction { node: NodeId, action: ActionIndex },
    #[error("goal {0} is unreachable from the start node")]
    UnreachableGoal(NodeId),
    #[error("state {0} is not a node of the map")]
    InvalidState(usize),
    #[error("action {action} is outside the action space of size {action_dim}")]
    InvalidAction { action: usize, action_dim: usize },
    #[error("bad scenario parameters: {0}")]
    BadParams(String),
    #[error("no path from the start to any goal")]
    NoPath,
    #[error("invalid route: {0}")]
    InvalidRoute(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Start,
    Goal,
    Crosswalk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: NodeId,
    /// Meters; only used for rendering.
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub tags: Vec<Tag>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectedEdge {
    pub from: NodeId,
    pub to: NodeId,
    pub action: ActionIndex,
}

/// On-disk map document. Field order matches the emitted JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapDocument {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    action_dim: Option<usize>,
    nodes: Vec<Node>,
    edges: Vec<DirectedEdge>,
    start: NodeId,
    goals: Vec<NodeId>,
    #[serde(default)]
    crosswalks: Vec<NodeId>,
}

/// Validated road network.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphMap {
    name: String,
    nodes: Vec<Node>,
    edges: Vec<DirectedEdge>,
    action_dim: usize,
    start: NodeId,
    goals: BTreeSet<NodeId>,
    crosswalks: BTreeSet<NodeId>,
    /// `successors[s * action_dim + a]`, `None` for loopback slots.
    successors: Vec<Option<NodeId>>,
}

impl GraphMap {
    /// Builds and validates a map. Node tags are recomputed from
    /// `start`/`goals`/`crosswalks`.
    pub fn new(
        name: impl Into<String>,
        nodes: Vec<Node>,
        edges: Vec<DirectedEdge>,
        action_dim: Option<usize>,
        start: NodeId,
        goals: BTreeSet<NodeId>,
        crosswalks: BTreeSet<NodeId>,
    ) -> Result<Self, MapError> {
        let mut nodes = nodes;
        nodes.sort_by_key(|n| n.id);
        for (i, n) in nodes.iter().enumerate() {
            if n.id != i {
                return Err(MapError::Schema(format!(
                    "node ids must be dense 0..{}; found id {} at position {}",
                    nodes.len(),
                    n.id,
                    i
                )));
            }
            if !n.x.is_finite() || !n.y.is_finite() {
                return Err(MapError::Schema(format!("node {} has non-finite coordinates", i)));
            }
        }
        let n = nodes.len();
        if n == 0 {
            return Err(MapError::Schema("map has no nodes".into()));
        }
        if start >= n {
            return Err(MapError::Schema(format!("start {} is not a node", start)));
        }
        if goals.is_empty() {
            return Err(MapError::Schema("map has no goals".into()));
        }
        if let Some(&g) = goals.iter().find(|&&g| g >= n) {
            return Err(MapError::Schema(format!("goal {} is not a node", g)));
        }
        if let Some(&c) = crosswalks.iter().find(|&&c| c >= n) {
            return Err(MapError::Schema(format!("crosswalk {} is not a node", c)));
        }
        if goals.contains(&start) {
            return Err(MapError::Schema("the start node cannot also be a goal".into()));
        }

        let mut out_degree = vec![0usize; n];
        let mut used: BTreeSet<(NodeId, ActionIndex)> = BTreeSet::new();
        for e in &edges {
            if e.from >= n || e.to >= n {
                return Err(MapError::DanglingEdge { from: e.from, to: e.to });
            }
            if !used.insert((e.from, e.action)) {
                return Err(MapError::DuplicateAction { node: e.from, action: e.action });
            }
            out_degree[e.from] += 1;
        }
        let max_degree = out_degree.iter().copied().max().unwrap_or(0);
        let action_dim = match action_dim {
            Some(d) if d != max_degree => {
                return Err(MapError::Schema(format!(
                    "action_dim {} differs from the maximum out-degree {}",
                    d, max_degree
                )))
            }
            Some(d) => d,
            None => max_degree,
        };
        if action_dim == 0 {
            return Err(MapError::Schema("map has no edges".into()));
        }
        let mut successors = vec![None; n * action_dim];
        for e in &edges {
            if e.action >= action_dim {
                return Err(MapError::Schema(format!(
                    "edge {} -> {} uses action {} but action_dim is {}",
                    e.from, e.to, e.action, action_dim
                )));
            }
            successors[e.from * action_dim + e.action] = Some(e.to);
        }

        for node in nodes.iter_mut() {
            let mut tags = Vec::new();
            if node.id == start {
                tags.push(Tag::Start);
            }
            if goals.contains(&node.id) {
                tags.push(Tag::Goal);
            }
            if crosswalks.contains(&node.id) {
                tags.push(Tag::Crosswalk);
            }
            node.tags = tags;
        }

        let map = GraphMap {
            name: name.into(),
            nodes,
            edges,
            action_dim,
            start,
            goals,
            crosswalks,
            successors,
        };
        let dist = map.bfs_from(map.start);
        if let Some(&g) = map.goals.iter().find(|&&g| dist[g].is_none()) {
            return Err(MapError::UnreachableGoal(g));
        }
        Ok(map)
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }
    pub fn edges(&self) -> &[DirectedEdge] {
        &self.edges
    }
    pub fn num_states(&self) -> usize {
        self.nodes.len()
    }
    pub fn action_dim(&self) -> usize {
        self.action_dim
    }
    pub fn start(&self) -> NodeId {
        self.start
    }
    pub fn goals(&self) -> &BTreeSet<NodeId> {
        &self.goals
    }
    pub fn crosswalks(&self) -> &BTreeSet<NodeId> {
        &self.crosswalks
    }
    pub fn is_goal(&self, s: NodeId) -> bool {
        self.goals.contains(&s)
    }
    pub fn is_crosswalk(&self, s: NodeId) -> bool {
        self.crosswalks.contains(&s)
    }

    /// Successor of `(state, action)`; loopback slots return `state`.
    pub fn transition(&self, state: NodeId, action: ActionIndex) -> Result<NodeId, MapError> {
        if state >= self.nodes.len() {
            return Err(MapError::InvalidState(state));
        }
        if action >= self.action_dim {
            return Err(MapError::InvalidAction { action, action_dim: self.action_dim });
        }
        Ok(self.successors[state * self.action_dim + action].unwrap_or(state))
    }

    /// Edge destination for `(state, action)`, or `None` for a loopback slot.
    pub fn edge_target(&self, state: NodeId, action: ActionIndex) -> Option<NodeId> {
        self.successors.get(state * self.action_dim + action).copied().flatten()
    }

    /// Lowest action index whose edge leads from `from` to `to`.
    pub fn action_between(&self, from: NodeId, to: NodeId) -> Option<ActionIndex> {
        (0..self.action_dim).find(|&a| self.edge_target(from, a) == Some(to))
    }

    pub fn out_degree(&self, state: NodeId) -> usize {
        (0..self.action_dim).filter(|&a| self.edge_target(state, a).is_some()).count()
    }

    /// Distinct real successors of `s`, ascending.
    fn neighbours(&self, s: NodeId) -> Vec<NodeId> {
        let set: BTreeSet<NodeId> = (0..self.action_dim)
            .filter_map(|a| self.edge_target(s, a))
            .filter(|&t| t != s)
            .collect();
        set.into_iter().collect()
    }

    fn bfs_from(&self, origin: NodeId) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.nodes.len()];
        dist[origin] = Some(0);
        let mut queue = VecDeque::from([origin]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap();
            for v in self.neighbours(u) {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Parses and validates a map document.
    pub fn from_json(text: &str) -> Result<Self, MapError> {
        let doc: MapDocument =
            serde_json::from_str(text).map_err(|e| MapError::Schema(e.to_string()))?;
        for node in &doc.nodes {
            let tagged = |t| node.tags.contains(&t);
            if tagged(Tag::Start) && tagged(Tag::Goal) {
                return Err(MapError::Schema(format!("node {} is tagged both start and goal", node.id)));
            }
            if tagged(Tag::Start) != (node.id == doc.start)
                || tagged(Tag::Goal) != doc.goals.contains(&node.id)
                || tagged(Tag::Crosswalk) != doc.crosswalks.contains(&node.id)
            {
                return Err(MapError::Schema(format!(
                    "tags of node {} disagree with start/goals/crosswalks",
                    node.id
                )));
            }
        }
        let goals: BTreeSet<NodeId> = doc.goals.iter().copied().collect();
        let crosswalks: BTreeSet<NodeId> = doc.crosswalks.iter().copied().collect();
        GraphMap::new(doc.name, doc.nodes, doc.edges, doc.action_dim, doc.start, goals, crosswalks)
    }

    /// Emits the map document; `from_json(to_json(m)) == m`.
    pub fn to_json(&self) -> String {
        let doc = MapDocument {
            name: self.name.clone(),
            action_dim: Some(self.action_dim),
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
            start: self.start,
            goals: self.goals.iter().copied().collect(),
            crosswalks: self.crosswalks.iter().copied().collect(),
        };
        serde_json::to_string_pretty(&doc).expect("map document serializes")
    }
}

/// Parses a map document.
pub fn parse_map(text: &str) -> Result<GraphMap, MapError> {
    GraphMap::from_json(text)
}

/// A walk through the map, as visited node ids.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Route {
    pub nodes: Vec<NodeId>,
}

impl Route {
    pub fn new(nodes: Vec<NodeId>) -> Self {
        Route { nodes }
    }

    /// Number of edges.
    pub fn len(&self) -> usize {
        self.nodes.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() <= 1
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.nodes.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.nodes.contains(&node)
    }

    pub fn passes_crosswalk(&self, map: &GraphMap) -> bool {
        self.nodes.iter().any(|&n| map.is_crosswalk(n))
    }

    /// Checks that every consecutive pair is joined by an edge.
    pub fn validate(&self, map: &GraphMap) -> Result<(), MapError> {
        if self.nodes.is_empty() {
            return Err(MapError::InvalidRoute("route has no nodes".into()));
        }
        if let Some(&n) = self.nodes.iter().find(|&&n| n >= map.num_states()) {
            return Err(MapError::InvalidRoute(format!("node {} is not in the map", n)));
        }
        for (u, v) in self.edges() {
            if map.action_between(u, v).is_none() {
                return Err(MapError::InvalidRoute(format!("no edge {} -> {}", u, v)));
            }
        }
        Ok(())
    }
}

/// Minimum-edge route from `start` to the nearest goal in `goals`, ties
/// broken by the lexicographically smallest node sequence.
pub fn shortest_path(
    map: &GraphMap,
    start: NodeId,
    goals: &BTreeSet<NodeId>,
) -> Result<Route, MapError> {
    let n = map.num_states();
    if start >= n {
        return Err(MapError::InvalidState(start));
    }
    // Reverse BFS gives every node its distance to the goal set.
    let mut preds: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    for u in 0..n {
        for v in map.neighbours(u) {
            preds[v].push(u);
        }
    }
    let mut to_goal: Vec<Option<usize>> = vec![None; n];
    let mut queue = VecDeque::new();
    for &g in goals.iter().filter(|&&g| g < n) {
        to_goal[g] = Some(0);
        queue.push_back(g);
    }
    while let Some(v) = queue.pop_front() {
        let d = to_goal[v].unwrap();
        for &u in &preds[v] {
            if to_goal[u].is_none() {
                to_goal[u] = Some(d + 1);
                queue.push_back(u);
            }
        }
    }
    let Some(mut remaining) = to_goal[start] else {
        return Err(MapError::NoPath);
    };
    let mut nodes = vec![start];
    let mut cur = start;
    while remaining > 0 {
        cur = map
            .neighbours(cur)
            .into_iter()
            .find(|&v| to_goal[v] == Some(remaining - 1))
            .expect("bfs layering guarantees a successor one step closer");
        nodes.push(cur);
        remaining -= 1;
    }
    Ok(Route::new(nodes))
}

/// All simple start-to-goal paths with at most `max_len` edges, sorted by
/// length and then node sequence. Paths stop at the first goal reached.
pub fn enumerate_simple_paths(map: &GraphMap, max_len: usize) -> Vec<Route> {
    fn walk(
        map: &GraphMap,
        max_len: usize,
        path: &mut Vec<NodeId>,
        on_path: &mut [bool],
        out: &mut Vec<Route>,
    ) {
        let cur = *path.last().unwrap();
        if map.is_goal(cur) {
            out.push(Route::new(path.clone()));
            return;
        }
        if path.len() > max_len {
            return;
        }
        for v in map.neighbours(cur) {
            if !on_path[v] {
                on_path[v] = true;
                path.push(v);
                walk(map, max_len, path, on_path, out);
                path.pop();
                on_path[v] = false;
            }
        }
    }
    let mut out = Vec::new();
    let mut on_path = vec![false; map.num_states()];
    on_path[map.start()] = true;
    walk(map, max_len, &mut vec![map.start()], &mut on_path, &mut out);
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.nodes.cmp(&b.nodes)));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    TwoRoute,
    ThreeRoute,
}

/// Route lengths in edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParams {
    pub noisy_len: usize,
    pub robust_len: usize,
    /// Length of the second crosswalk-free route (three-route only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robust2_len: Option<usize>,
}

/// Spacing between consecutive nodes, meters.
const NODE_SPACING: f64 = 10.0;

struct Builder {
    nodes: Vec<Node>,
    edges: Vec<DirectedEdge>,
}

impl Builder {
    fn node(&mut self, x: f64, y: f64) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { id, x, y, tags: Vec::new() });
        id
    }

    fn edge(&mut self, from: NodeId, to: NodeId, action: ActionIndex) {
        self.edges.push(DirectedEdge { from, to, action });
    }

    /// Lays `len - 1` interior nodes on an arc from `(x0, 0)` to
    /// `(x1, 0)` bulging to height `bulge`, wiring `from -> ... -> to`.
    /// Returns the interior node ids.
    fn chain(
        &mut self,
        from: NodeId,
        from_action: ActionIndex,
        to: NodeId,
        len: usize,
        (x0, x1): (f64, f64),
        bulge: f64,
    ) -> Vec<NodeId> {
        let mut interior = Vec::with_capacity(len - 1);
        let mut prev = from;
        for k in 1..len {
            let t = k as f64 / len as f64;
            let x = x0 + (x1 - x0) * t;
            let y = bulge * (std::f64::consts::PI * t).sin();
            let id = self.node(x, y);
            self.edge(prev, id, if prev == from { from_action } else { 0 });
            interior.push(id);
            prev = id;
        }
        self.edge(prev, to, if prev == from { from_action } else { 0 });
        interior
    }
}

/// Synthetic analogs of the evaluation towns.
///
/// `two-route`: the start is the critical node; action 0 leads onto the
/// noisy route (with the crosswalk), action 1 onto the robust route; both
/// merge at the goal.
///
/// `three-route`: action 1 at the start leads onto robust route 1; action
/// 0 leads to a second divergence node where action 0 continues on the
/// noisy route and action 1 on robust route 2.
///
/// The crosswalk is the node reached after `noisy_len / 2` edges of the
/// noisy route.
pub fn generate_scenario(kind: ScenarioKind, params: ScenarioParams) -> Result<GraphMap, MapError> {
    let ScenarioParams { noisy_len, robust_len, robust2_len } = params;
    if noisy_len < 3 || robust_len < 3 {
        return Err(MapError::BadParams("route lengths must be at least 3".into()));
    }
    if noisy_len >= robust_len {
        return Err(MapError::BadParams(format!(
            "noisy route ({}) must be shorter than the robust route ({})",
            noisy_len, robust_len
        )));
    }
    let mut b = Builder { nodes: Vec::new(), edges: Vec::new() };
    let width = NODE_SPACING * noisy_len as f64;
    let start = b.node(0.0, 0.0);
    match kind {
        ScenarioKind::TwoRoute => {
            if robust2_len.is_some() {
                return Err(MapError::BadParams("two-route scenarios take two lengths".into()));
            }
            let goal_slot = b.nodes.len();
            let goal = b.node(width, 0.0);
            debug_assert_eq!(goal, goal_slot);
            let noisy = b.chain(start, 0, goal, noisy_len, (0.0, width), -0.25 * width);
            b.chain(start, 1, goal, robust_len, (0.0, width), 0.5 * width);
            let crosswalk = noisy[noisy_len / 2 - 1];
            finish(b, "two-route", start, goal, crosswalk)
        }
        ScenarioKind::ThreeRoute => {
            let robust2_len = robust2_len
                .ok_or_else(|| MapError::BadParams("three-route scenarios need robust2_len".into()))?;
            if robust2_len < robust_len {
                return Err(MapError::BadParams(format!(
                    "robust route 2 ({}) must not be shorter than robust route 1 ({})",
                    robust2_len, robust_len
                )));
            }
            if noisy_len < 4 {
                return Err(MapError::BadParams(
                    "three-route scenarios need a noisy route of at least 4 edges".into(),
                ));
            }
            let goal = b.node(width, 0.0);
            let split = b.node(NODE_SPACING, 0.0);
            b.edge(start, split, 0);
            let noisy = b.chain(split, 0, goal, noisy_len - 1, (NODE_SPACING, width), -0.25 * width);
            b.chain(split, 1, goal, robust2_len - 1, (NODE_SPACING, width), -0.6 * width);
            b.chain(start, 1, goal, robust_len, (0.0, width), 0.5 * width);
            // noisy[k] is k + 2 edges from the start.
            let crosswalk = noisy[noisy_len / 2 - 2];
            finish(b, "three-route", start, goal, crosswalk)
        }
    }
}

fn finish(
    b: Builder,
    name: &str,
    start: NodeId,
    goal: NodeId,
    crosswalk: NodeId,
) -> Result<GraphMap, MapError> {
    GraphMap::new(
        name,
        b.nodes,
        b.edges,
        None,
        start,
        BTreeSet::from([goal]),
        BTreeSet::from([crosswalk]),
    )
}

const ROUTE_COLORS: [&str; 6] = ["red", "blue", "darkgreen", "orange", "purple", "brown"];

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Renders the map as a DOT digraph with each route overlaid as a set of
/// colored, labelled edges.
pub fn render_routes(map: &GraphMap, routes: &[(Route, String)]) -> Result<String, MapError> {
    for (route, _) in routes {
        route.validate(map)?;
    }
    let mut out = String::new();
    writeln!(out, "digraph \"{}\" {{", dot_escape(map.name())).unwrap();
    writeln!(out, "  node [shape=circle, fontsize=10, width=0.3];").unwrap();
    for node in map.nodes() {
        let style = if node.id == map.start() {
            ", style=filled, fillcolor=green"
        } else if map.is_goal(node.id) {
            ", style=filled, fillcolor=magenta, shape=doublecircle"
        } else if map.is_crosswalk(node.id) {
            ", style=filled, fillcolor=black, fontcolor=white, shape=box"
        } else {
            ""
        };
        writeln!(out, "  {} [pos=\"{},{}!\"{}];", node.id, node.x, node.y, style).unwrap();
    }
    for e in map.edges() {
        writeln!(out, "  {} -> {} [color=gray];", e.from, e.to).unwrap();
    }
    for (k, (route, label)) in routes.iter().enumerate() {
        let color = ROUTE_COLORS[k % ROUTE_COLORS.len()];
        for (u, v) in route.edges() {
            writeln!(
                out,
                "  {} -> {} [color={}, penwidth=3, label=\"{}\"];",
                u,
                v,
                color,
                dot_escape(label)
            )
            .unwrap();
        }
    }
    out.push_str("}\n");
    Ok(out)
}

/// Crosswalk-free routes ranked by length, used to name final routes.
#[derive(Debug, Clone)]
pub struct RouteCatalog {
    pub noisy: Option<Route>,
    pub robust: Vec<Route>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RouteClass {
    #[serde(rename = "noisy")]
    Noisy,
    #[serde(rename = "robust-1")]
    Robust1,
    #[serde(rename = "robust-2")]
    Robust2,
    #[serde(rename = "other")]
    Other,
    #[serde(rename = "timeout")]
    Timeout,
}

impl RouteClass {
    pub const ALL: [RouteClass; 5] = [
        RouteClass::Noisy,
        RouteClass::Robust1,
        RouteClass::Robust2,
        RouteClass::Other,
        RouteClass::Timeout,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RouteClass::Noisy => "noisy",
            RouteClass::Robust1 => "robust-1",
            RouteClass::Robust2 => "robust-2",
            RouteClass::Other => "other",
            RouteClass::Timeout => "timeout",
        }
    }
}

impl std::fmt::Display for RouteClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl RouteCatalog {
    pub fn new(map: &GraphMap) -> Self {
        let paths = enumerate_simple_paths(map, map.num_states());
        let noisy = paths.iter().find(|r| r.passes_crosswalk(map)).cloned();
        let robust = paths.into_iter().filter(|r| !r.passes_crosswalk(map)).take(2).collect();
        RouteCatalog { noisy, robust }
    }

    /// Classifies a visited node sequence. Consecutive repeats (loopbacks)
    /// are collapsed before matching.
    pub fn classify(&self, map: &GraphMap, visited: &[NodeId], reached_goal: bool) -> RouteClass {
        if !reached_goal {
            return RouteClass::Timeout;
        }
        let route = collapse_repeats(visited);
        if route.passes_crosswalk(map) {
            return RouteClass::Noisy;
        }
        match self.robust.iter().position(|r| *r == route) {
            Some(0) => RouteClass::Robust1,
            Some(1) => RouteClass::Robust2,
            _ => RouteClass::Other,
        }
    }
}

pub fn collapse_repeats(visited: &[NodeId]) -> Route {
    let mut nodes: Vec<NodeId> = Vec::with_capacity(visited.len());
    for &n in visited {
        if nodes.last() != Some(&n) {
            nodes.push(n);
        }
    }
    Route::new(nodes)
}

/// Histogram helper shared by reports.
pub fn class_histogram<I: IntoIterator<Item = RouteClass>>(classes: I) -> BTreeMap<RouteClass, usize> {
    let mut h = BTreeMap::new();
    for c in classes {
        *h.entry(c).or_insert(0) += 1;
    }
    h
}
