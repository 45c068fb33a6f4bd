//! Single-evaluator PUCT tree search (PV-MCTS).
//!
//! Each node stores the position it represents, its visit count `N(s)` and
//! the sum of backed-up values `W(s)` from the perspective of the player to
//! move at that node. Nodes are unique per path, so edge statistics are read
//! from the child: `N(s,a) = N(child)` and `Q(s,a) = -W(child) / N(child)`.
//! Node visits count the node's own evaluation plus every backup through it,
//! giving `N(s) = 1 + sum_a N(s,a)`.
//!
//! Budgets are counted in evaluator forward passes. A simulation that ends on
//! a terminal position is scored by the rules and does not use a pass.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution};
use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::evaluator::{mix_seed, EvalError, Evaluator};
use crate::game::{BitIter, Move, Position};

pub type NodeId = u32;

/// Consecutive terminal-only simulations after which a search gives up on
/// finding another position to evaluate (the reachable tree is solved).
pub const TERMINAL_STREAK_LIMIT: u32 = 256;

pub(crate) const NOISE_STREAM: u64 = 2;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("node {0} was already evaluated")]
    AlreadyEvaluated(NodeId),
    #[error("root has no visited moves")]
    NoVisits,
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootNoise {
    pub alpha: f64,
    pub weight: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub c_puct: f64,
    pub root_noise: Option<RootNoise>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { c_puct: 1.5, root_noise: None }
    }
}

#[derive(Debug, Clone)]
pub struct Edge {
    /// Point index of the move.
    pub point: u16,
    pub prior: f32,
    pub child: Option<NodeId>,
    pub child_key: u64,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub key: u64,
    pub position: Position,
    pub parent: Option<(NodeId, u16)>,
    pub visits: u32,
    pub value_sum: f64,
    pub evaluated: bool,
    pub terminal: bool,
    pub edges: Vec<Edge>,
}

impl Node {
    fn new(position: Position, parent: Option<(NodeId, u16)>) -> Node {
        Node {
            key: position.key(),
            position,
            parent,
            visits: 0,
            value_sum: 0.0,
            evaluated: false,
            terminal: position.is_terminal(),
            edges: Vec::new(),
        }
    }

    /// Mean backed-up value for the player to move here; 0 when unvisited.
    pub fn mean_value(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.value_sum / self.visits as f64
        }
    }
}

/// Per-edge statistics as seen from the parent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeStats {
    pub visits: u32,
    pub total_value: f64,
    pub q: f64,
    pub prior: f64,
}

/// `Q + c * P * sqrt(N(s)) / (1 + N(s,a))`.
#[inline]
pub fn puct_score(q: f64, prior: f64, parent_visits: u32, edge_visits: u32, c_puct: f64) -> f64 {
    q + c_puct * prior * (parent_visits as f64).sqrt() / (1.0 + edge_visits as f64)
}

/// Index of the highest score; ties go to the lowest index.
pub fn argmax_first(scores: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Supplies the `Q(s,a)` and `P(s,a)` used during selection. The plain view
/// reads the tree's own statistics; the dual search substitutes shared ones.
pub trait EdgeView {
    fn q(&self, tree: &SearchTree, node: &Node, slot: usize) -> f64;
    fn prior(&self, tree: &SearchTree, node: &Node, slot: usize) -> f64;
}

/// A tree's own statistics.
pub struct OwnStats;

impl EdgeView for OwnStats {
    fn q(&self, tree: &SearchTree, node: &Node, slot: usize) -> f64 {
        match node.edges[slot].child {
            Some(c) if tree.nodes[c as usize].visits > 0 => -tree.nodes[c as usize].mean_value(),
            _ => 0.0,
        }
    }

    fn prior(&self, _tree: &SearchTree, node: &Node, slot: usize) -> f64 {
        node.edges[slot].prior as f64
    }
}

/// Where a selection ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafTarget {
    /// An existing node: the unevaluated root, or a terminal node.
    Node(NodeId),
    /// The unexpanded child reached through edge `slot` of `parent`.
    Child { parent: NodeId, slot: usize },
}

/// A selected leaf together with the edges taken from the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub path: Vec<(NodeId, usize)>,
    pub target: LeafTarget,
}

/// Result of resolving a selected leaf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafResult {
    pub node: NodeId,
    pub value: f32,
    /// Whether the evaluator was called (false for terminal positions).
    pub evaluated: bool,
}

pub struct SearchTree {
    pub(crate) nodes: Vec<Node>,
    by_key: FxHashMap<u64, NodeId>,
    evaluator: Arc<dyn Evaluator>,
    pub config: SearchConfig,
    root_noise: Option<Vec<f32>>,
    forward_passes: u64,
    simulations: u64,
    backups: u64,
}

impl SearchTree {
    pub fn new(root: Position, evaluator: Arc<dyn Evaluator>, config: SearchConfig) -> SearchTree {
        let mut by_key = FxHashMap::default();
        by_key.insert(root.key(), 0);
        SearchTree {
            nodes: vec![Node::new(root, None)],
            by_key,
            evaluator,
            config,
            root_noise: None,
            forward_passes: 0,
            simulations: 0,
            backups: 0,
        }
    }

    pub const ROOT: NodeId = 0;

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id as usize]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn evaluator(&self) -> &Arc<dyn Evaluator> {
        &self.evaluator
    }

    /// First node created for a position key.
    pub fn node_by_key(&self, key: u64) -> Option<NodeId> {
        self.by_key.get(&key).copied()
    }

    pub fn forward_passes(&self) -> u64 {
        self.forward_passes
    }

    pub fn simulations(&self) -> u64 {
        self.simulations
    }

    /// Number of backups applied to this tree.
    pub fn backups(&self) -> u64 {
        self.backups
    }

    pub fn edge_stats(&self, node: NodeId, slot: usize) -> EdgeStats {
        let n = &self.nodes[node as usize];
        let e = &n.edges[slot];
        let (visits, total) = match e.child {
            Some(c) => {
                let c = &self.nodes[c as usize];
                (c.visits, -c.value_sum)
            }
            None => (0, 0.0),
        };
        EdgeStats {
            visits,
            total_value: total,
            q: if visits > 0 { total / visits as f64 } else { 0.0 },
            prior: e.prior as f64,
        }
    }

    /// Prior at `node` after mixing in root noise.
    pub(crate) fn noisy_prior(&self, node: NodeId, slot: usize, prior: f64) -> f64 {
        match (&self.root_noise, self.config.root_noise) {
            (Some(eta), Some(cfg)) if node == Self::ROOT => (1.0 - cfg.weight) * prior + cfg.weight * eta[slot] as f64,
            _ => prior,
        }
    }

    /// PUCT descent from the root using `view` for Q and P.
    pub fn select_leaf_with<V: EdgeView>(&self, view: &V) -> Selection {
        let mut path = Vec::new();
        let mut id = Self::ROOT;
        loop {
            let node = &self.nodes[id as usize];
            if !node.evaluated || node.terminal {
                return Selection { path, target: LeafTarget::Node(id) };
            }
            let c = self.config.c_puct;
            let slot = argmax_first((0..node.edges.len()).map(|s| {
                let visits = node.edges[s].child.map_or(0, |ch| self.nodes[ch as usize].visits);
                let prior = self.noisy_prior(id, s, view.prior(self, node, s));
                puct_score(view.q(self, node, s), prior, node.visits, visits, c)
            }))
            .expect("evaluated non-terminal nodes have edges");
            path.push((id, slot));
            match node.edges[slot].child {
                Some(child) => id = child,
                None => return Selection { path, target: LeafTarget::Child { parent: id, slot } },
            }
        }
    }

    pub fn select_leaf(&self) -> Selection {
        self.select_leaf_with(&OwnStats)
    }

    /// Position and key of a selection's leaf.
    pub fn target_position(&self, target: LeafTarget) -> Position {
        match target {
            LeafTarget::Node(id) => self.nodes[id as usize].position,
            LeafTarget::Child { parent, slot } => {
                let p = &self.nodes[parent as usize];
                let mut pos = p.position;
                pos.play_index_unchecked(p.edges[slot].point as usize);
                pos
            }
        }
    }

    pub fn target_key(&self, target: LeafTarget) -> u64 {
        match target {
            LeafTarget::Node(id) => self.nodes[id as usize].key,
            LeafTarget::Child { parent, slot } => self.nodes[parent as usize].edges[slot].child_key,
        }
    }

    fn create_child(&mut self, parent: NodeId, slot: usize) -> NodeId {
        let pos = self.target_position(LeafTarget::Child { parent, slot });
        let id = self.nodes.len() as NodeId;
        self.nodes.push(Node::new(pos, Some((parent, slot as u16))));
        self.nodes[parent as usize].edges[slot].child = Some(id);
        self.by_key.entry(pos.key()).or_insert(id);
        id
    }

    /// Creates the leaf node if needed and scores it: terminal positions get
    /// the exact value -1 (the player to move has lost) without calling the
    /// evaluator; other leaves are evaluated once and receive their priors.
    pub fn expand_and_evaluate(&mut self, target: LeafTarget) -> Result<LeafResult, SearchError> {
        let id = match target {
            LeafTarget::Node(id) => id,
            LeafTarget::Child { parent, slot } => match self.nodes[parent as usize].edges[slot].child {
                Some(id) => id,
                None => self.create_child(parent, slot),
            },
        };
        let node = &self.nodes[id as usize];
        if node.terminal {
            let node = &mut self.nodes[id as usize];
            node.evaluated = true;
            return Ok(LeafResult { node: id, value: -1.0, evaluated: false });
        }
        if node.evaluated {
            return Err(SearchError::AlreadyEvaluated(id));
        }
        let pos = node.position;
        let out = self.evaluator.evaluate(&pos)?;
        self.forward_passes += 1;
        let edges = BitIter(pos.legal_mask())
            .map(|i| Edge { point: i as u16, prior: out.policy[i], child: None, child_key: pos.child_key(i) })
            .collect();
        let node = &mut self.nodes[id as usize];
        node.edges = edges;
        node.evaluated = true;
        if id == Self::ROOT {
            self.draw_root_noise();
        }
        Ok(LeafResult { node: id, value: out.value, evaluated: true })
    }

    fn draw_root_noise(&mut self) {
        let Some(cfg) = self.config.root_noise else { return };
        let n = self.nodes[0].edges.len();
        self.root_noise = Some(if n >= 2 {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, NOISE_STREAM));
            Dirichlet::new_with_size(cfg.alpha, n)
                .expect("positive alpha")
                .sample(&mut rng)
                .into_iter()
                .map(|v| v as f32)
                .collect()
        } else {
            vec![1.0; n]
        });
    }

    /// Adds `value` (for the player to move at `leaf`) to the leaf and every
    /// ancestor, flipping sign at each ply. Returns the touched nodes,
    /// leaf first.
    pub fn backup(&mut self, leaf: NodeId, value: f32) -> Vec<NodeId> {
        let mut touched = Vec::new();
        let mut v = value as f64;
        let mut id = Some(leaf);
        while let Some(n) = id {
            let node = &mut self.nodes[n as usize];
            node.visits += 1;
            node.value_sum += v;
            touched.push(n);
            v = -v;
            id = node.parent.map(|(p, _)| p);
        }
        self.backups += 1;
        touched
    }

    /// One simulation with the given selection view.
    pub fn simulate_with<V: EdgeView>(&mut self, view: &V) -> Result<(LeafResult, Vec<NodeId>), SearchError> {
        let sel = self.select_leaf_with(view);
        self.simulate_target(sel.target)
    }

    /// Resolves an already chosen leaf and backs it up, counting one simulation.
    pub fn simulate_target(&mut self, target: LeafTarget) -> Result<(LeafResult, Vec<NodeId>), SearchError> {
        let leaf = self.expand_and_evaluate(target)?;
        let touched = self.backup(leaf.node, leaf.value);
        self.simulations += 1;
        Ok((leaf, touched))
    }

    /// Simulates until one forward pass has been used, or until the
    /// terminal streak limit is reached. Returns whether a pass was used.
    pub fn simulate_one_pass(&mut self) -> Result<bool, SearchError> {
        for _ in 0..TERMINAL_STREAK_LIMIT {
            if self.simulate_with(&OwnStats)?.0.evaluated {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Runs until `budget` forward passes have been used.
    pub fn run_search(&mut self, budget: u64) -> Result<(), SearchError> {
        let target = self.forward_passes + budget;
        while self.forward_passes < target {
            if !self.simulate_one_pass()? {
                break;
            }
        }
        Ok(())
    }

    /// Visit counts of the root's edges, with their moves.
    pub fn root_counts(&self) -> Vec<(Move, u32)> {
        let size = self.root().position.size();
        (0..self.root().edges.len())
            .map(|s| (Move::from_index(self.root().edges[s].point as usize, size), self.edge_stats(0, s).visits))
            .collect()
    }

    /// `pi(a)` proportional to `N(root,a)^(1/tau)` over all board points;
    /// `tau == 0` gives the most visited move (lowest index on ties).
    pub fn policy_from_counts(&self, tau: f64) -> Result<Vec<f32>, SearchError> {
        let points = self.root().position.points();
        let counts: Vec<(usize, u32)> = (0..self.root().edges.len())
            .map(|s| (self.root().edges[s].point as usize, self.edge_stats(0, s).visits))
            .collect();
        policy_from_visit_counts(&counts, points, tau)
    }

    /// Visit-count policy at temperature 1 and the most visited point. A
    /// root whose edges were never visited falls back to its priors.
    pub fn move_policy(&self) -> Result<(Vec<f32>, usize), SearchError> {
        match self.policy_from_counts(1.0) {
            Ok(pi) => {
                let best = self.policy_from_counts(0.0)?.iter().position(|&v| v == 1.0).expect("one-hot policy");
                Ok((pi, best))
            }
            Err(SearchError::NoVisits) if !self.root().edges.is_empty() => {
                let mut pi = vec![0.0f32; self.root().position.points()];
                for e in &self.root().edges {
                    pi[e.point as usize] = e.prior;
                }
                let best = argmax_first(pi.iter().map(|&p| p as f64)).expect("nonempty board");
                Ok((pi, best))
            }
            Err(e) => Err(e),
        }
    }
}

/// Shared by single and dual search: counts are `(point, visits)`.
pub fn policy_from_visit_counts(counts: &[(usize, u32)], points: usize, tau: f64) -> Result<Vec<f32>, SearchError> {
    let max = counts.iter().map(|&(_, n)| n).max().unwrap_or(0);
    if max == 0 {
        return Err(SearchError::NoVisits);
    }
    let mut pi = vec![0.0f32; points];
    if tau <= 1e-3 {
        let best = counts.iter().filter(|&&(_, n)| n == max).map(|&(p, _)| p).min().expect("nonempty");
        pi[best] = 1.0;
        return Ok(pi);
    }
    let weights: Vec<f64> = counts.iter().map(|&(_, n)| (n as f64 / max as f64).powf(1.0 / tau)).collect();
    let total: f64 = weights.iter().sum();
    for (&(p, _), w) in counts.iter().zip(weights) {
        pi[p] = (w / total) as f32;
    }
    Ok(pi)
}
