//! Two-tree search with a fast evaluator `f_S` and an accurate one `f_L`.
//!
//! Each evaluator grows its own tree (`T_S`, `T_L`). A random schedule of
//! `b_S + b_L` slots decides which evaluator runs next:
//!
//! * small slots descend `T_S` by PUCT, evaluate the leaf with `f_S` and back
//!   up in `T_S` only;
//! * large slots pick the unevaluated `T_L` leaf whose state has the most
//!   visits in `T_S`. If that count is zero they instead descend `T_L` by
//!   PUCT using `T_L`'s own visit counts. The leaf is evaluated with `f_L`
//!   and backed up in `T_L` only.
//!
//! When a state is known to both trees, selection in either tree uses the
//! mixed value `alpha * V_S + (1 - alpha) * V_L` and the mixed prior
//! `beta * p_S + (1 - beta) * p_L`. States are matched across trees by
//! position key; within a tree, nodes stay unique per path and the key maps
//! to the first node created for it.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::sync::Arc;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::evaluator::{cost_of, mix_seed, Evaluator, NetShape, NormalizedCost};
use crate::game::Position;
use crate::search::{
    policy_from_visit_counts, EdgeView, LeafResult, LeafTarget, Node, NodeId, SearchConfig, SearchError,
    SearchTree, TERMINAL_STREAK_LIMIT,
};

pub(crate) const SCHEDULE_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum MpvError {
    #[error("budget b_S = {small} is below b_L = {large}")]
    InvertedBudget { small: u64, large: u64 },
    #[error("weight {0} outside [0, 1]")]
    Weight(f64),
    #[error("budget ratio {0} outside [0, 1]")]
    Ratio(f64),
    #[error("position key {0:016x} is in neither tree")]
    UnknownState(u64),
    #[error("move index {0} is not legal at the state")]
    UnknownMove(usize),
    #[error("every reachable state has been evaluated by the large evaluator")]
    EmptyFrontier,
    #[error(transparent)]
    Search(#[from] SearchError),
}

/// Simulation budgets for the two evaluators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BudgetSpec {
    pub small: u64,
    pub large: u64,
}

impl BudgetSpec {
    /// Checks `b_S >= b_L`.
    pub fn new(small: u64, large: u64) -> Result<BudgetSpec, MpvError> {
        if small < large {
            return Err(MpvError::InvertedBudget { small, large });
        }
        Ok(BudgetSpec { small, large })
    }

    /// Skips the `b_S >= b_L` check. Used for single-evaluator controls.
    pub fn unchecked(small: u64, large: u64) -> BudgetSpec {
        BudgetSpec { small, large }
    }

    pub fn total(&self) -> u64 {
        self.small + self.large
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShareWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for ShareWeights {
    fn default() -> Self {
        ShareWeights { alpha: 0.5, beta: 0.0 }
    }
}

impl ShareWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<ShareWeights, MpvError> {
        for w in [alpha, beta] {
            if !(0.0..=1.0).contains(&w) {
                return Err(MpvError::Weight(w));
            }
        }
        Ok(ShareWeights { alpha, beta })
    }
}

/// `true` marks a small-evaluator slot. Exactly `b_S` of the `b_S + b_L`
/// slots are small, chosen uniformly by a seeded shuffle.
pub fn make_schedule(spec: BudgetSpec, seed: u64) -> Vec<bool> {
    let mut slots: Vec<bool> = std::iter::repeat_n(true, spec.small as usize)
        .chain(std::iter::repeat_n(false, spec.large as usize))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, SCHEDULE_STREAM));
    slots.shuffle(&mut rng);
    slots
}

/// Splits a normalized budget `B`: `r * B` goes to the large evaluator and
/// `(1 - r) * B` to the small one, each divided by its per-pass cost and
/// floored.
pub fn budget_split(
    budget: u64,
    ratio: Ratio<u64>,
    small_cost: NormalizedCost,
    large_cost: NormalizedCost,
    allow_inverted: bool,
) -> Result<BudgetSpec, MpvError> {
    if ratio > Ratio::from_integer(1) {
        return Err(MpvError::Ratio(*ratio.numer() as f64 / *ratio.denom() as f64));
    }
    let b = Ratio::from_integer(budget);
    let large = (ratio * b / large_cost.units()).floor().to_integer();
    let small = ((Ratio::from_integer(1) - ratio) * b / small_cost.units()).floor().to_integer();
    if allow_inverted {
        Ok(BudgetSpec::unchecked(small, large))
    } else {
        BudgetSpec::new(small, large)
    }
}

/// [`budget_split`] with costs taken from network shapes.
pub fn budget_split_shapes(
    budget: u64,
    ratio: Ratio<u64>,
    small: NetShape,
    large: NetShape,
    reference: NetShape,
    allow_inverted: bool,
) -> Result<BudgetSpec, MpvError> {
    budget_split(budget, ratio, cost_of(small, reference), cost_of(large, reference), allow_inverted)
}

/// Which tree a view is selecting in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Net {
    Small,
    Large,
}

/// Selection statistics shared between the two trees.
struct SharedStats<'a> {
    other: &'a SearchTree,
    this: Net,
    weights: ShareWeights,
}

impl SharedStats<'_> {
    fn mix_value(&self, own: f64, other: f64) -> f64 {
        match self.this {
            Net::Small => self.weights.alpha * own + (1.0 - self.weights.alpha) * other,
            Net::Large => self.weights.alpha * other + (1.0 - self.weights.alpha) * own,
        }
    }

    fn mix_prior(&self, own: f64, other: f64) -> f64 {
        match self.this {
            Net::Small => self.weights.beta * own + (1.0 - self.weights.beta) * other,
            Net::Large => self.weights.beta * other + (1.0 - self.weights.beta) * own,
        }
    }

    fn other_node(&self, key: u64) -> Option<&Node> {
        self.other.node_by_key(key).map(|id| self.other.node(id))
    }
}

impl EdgeView for SharedStats<'_> {
    fn q(&self, tree: &SearchTree, node: &Node, slot: usize) -> f64 {
        let edge = &node.edges[slot];
        let Some(child) = edge.child.map(|c| tree.node(c)) else { return 0.0 };
        if child.visits == 0 {
            return 0.0;
        }
        let own = child.mean_value();
        let v = match self.other_node(edge.child_key) {
            Some(o) if o.visits > 0 => self.mix_value(own, o.mean_value()),
            _ => own,
        };
        -v
    }

    fn prior(&self, _tree: &SearchTree, node: &Node, slot: usize) -> f64 {
        let own = node.edges[slot].prior as f64;
        match self.other_node(node.key) {
            Some(o) if o.evaluated && !o.terminal => self.mix_prior(own, o.edges[slot].prior as f64),
            _ => own,
        }
    }
}

/// How a simulation picked its leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectMode {
    Puct,
    Priority,
    Fallback,
}

impl SelectMode {
    fn as_str(self) -> &'static str {
        match self {
            SelectMode::Puct => "puct",
            SelectMode::Priority => "priority",
            SelectMode::Fallback => "fallback",
        }
    }
}

/// One line of the debug trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub index: u64,
    pub net: Net,
    pub leaf: u64,
    pub mode: SelectMode,
    pub value: f32,
}

impl std::fmt::Display for TraceEvent {
    /// `i;net=S|L;leaf=<key>;mode=puct|priority|fallback;value=<v>`
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let net = match self.net {
            Net::Small => "S",
            Net::Large => "L",
        };
        write!(
            f,
            "{};net={};leaf={:016x};mode={};value={:.4}",
            self.index,
            net,
            self.leaf,
            self.mode.as_str(),
            self.value
        )
    }
}

#[derive(Debug, Clone)]
struct FrontierEntry {
    parent: NodeId,
    slot: usize,
    key: u64,
    open: bool,
}

/// `T_L` edges whose child has not been evaluated by `f_L`, prioritized by the
/// child state's visit count in `T_S`. The heap is lazily invalidated: every
/// change of a relevant `T_S` count pushes a fresh entry and stale ones are
/// dropped when they reach the top.
#[derive(Debug, Default)]
struct Frontier {
    entries: Vec<FrontierEntry>,
    heap: BinaryHeap<(u32, Reverse<u32>)>,
    by_key: FxHashMap<u64, Vec<u32>>,
    by_edge: FxHashMap<(NodeId, usize), u32>,
}

/// A candidate chosen by visit-count priority.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PriorityPick {
    pub parent: NodeId,
    pub slot: usize,
    pub key: u64,
    pub small_visits: u32,
}

impl Frontier {
    fn add_children(&mut self, tree: &SearchTree, node: NodeId, small: &SearchTree) {
        for (slot, edge) in tree.node(node).edges.iter().enumerate() {
            if edge.child.is_some() {
                continue;
            }
            let id = self.entries.len() as u32;
            self.entries.push(FrontierEntry { parent: node, slot, key: edge.child_key, open: true });
            self.by_key.entry(edge.child_key).or_default().push(id);
            self.by_edge.insert((node, slot), id);
            self.heap.push((small_visits(small, edge.child_key), Reverse(id)));
        }
    }

    fn close(&mut self, parent: NodeId, slot: usize) {
        if let Some(id) = self.by_edge.remove(&(parent, slot)) {
            self.entries[id as usize].open = false;
        }
    }

    fn notify(&mut self, key: u64, visits: u32) {
        if let Some(ids) = self.by_key.get(&key) {
            for &id in ids {
                if self.entries[id as usize].open {
                    self.heap.push((visits, Reverse(id)));
                }
            }
        }
    }

    fn best(&mut self, small: &SearchTree) -> Option<PriorityPick> {
        while let Some(&(visits, Reverse(id))) = self.heap.peek() {
            let e = &self.entries[id as usize];
            if !e.open || small_visits(small, e.key) != visits {
                self.heap.pop();
                continue;
            }
            return Some(PriorityPick { parent: e.parent, slot: e.slot, key: e.key, small_visits: visits });
        }
        None
    }

    /// Linear-scan reference for [`Frontier::best`].
    fn best_by_scan(&self, small: &SearchTree) -> Option<PriorityPick> {
        self.entries
            .iter()
            .filter(|e| e.open)
            .map(|e| PriorityPick { parent: e.parent, slot: e.slot, key: e.key, small_visits: small_visits(small, e.key) })
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.small_visits.cmp(&b.small_visits).then(ib.cmp(ia)))
            .map(|(_, p)| p)
    }

    fn open_len(&self) -> usize {
        self.by_edge.len()
    }
}

fn small_visits(small: &SearchTree, key: u64) -> u32 {
    small.node_by_key(key).map_or(0, |id| small.node(id).visits)
}

/// Paired trees plus the cross-tree frontier and schedule state.
pub struct DualSearch {
    pub small: SearchTree,
    pub large: SearchTree,
    pub weights: ShareWeights,
    frontier: Frontier,
    trace: Option<Vec<TraceEvent>>,
    debug_checks: bool,
    slot_index: u64,
}

impl DualSearch {
    /// Both trees rooted at `root`. `small_config` may carry root noise; the
    /// large tree uses `large_config`.
    pub fn new(
        root: Position,
        small_eval: Arc<dyn Evaluator>,
        large_eval: Arc<dyn Evaluator>,
        small_config: SearchConfig,
        large_config: SearchConfig,
        weights: ShareWeights,
    ) -> DualSearch {
        DualSearch {
            small: SearchTree::new(root, small_eval, small_config),
            large: SearchTree::new(root, large_eval, large_config),
            weights,
            frontier: Frontier::default(),
            trace: None,
            debug_checks: false,
            slot_index: 0,
        }
    }

    /// Records one [`TraceEvent`] per simulation.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> &[TraceEvent] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn trace_text(&self) -> String {
        let mut s = String::new();
        for e in self.trace() {
            writeln!(s, "{e}").expect("write to string");
        }
        s
    }

    /// Cross-checks every priority pick against a full frontier scan.
    pub fn enable_debug_checks(&mut self) {
        self.debug_checks = true;
    }

    pub fn frontier_len(&self) -> usize {
        self.frontier.open_len()
    }

    /// Mixed state value for `key`, from the perspective of its player to move.
    pub fn shared_value(&self, key: u64) -> Result<f64, MpvError> {
        let v = |t: &SearchTree| t.node_by_key(key).map(|id| t.node(id)).filter(|n| n.visits > 0).map(Node::mean_value);
        match (v(&self.small), v(&self.large)) {
            (Some(s), Some(l)) => Ok(self.weights.alpha * s + (1.0 - self.weights.alpha) * l),
            (Some(s), None) => Ok(s),
            (None, Some(l)) => Ok(l),
            (None, None) => Err(MpvError::UnknownState(key)),
        }
    }

    /// Mixed prior of the move at point `index` in state `key`.
    pub fn shared_prior(&self, key: u64, index: usize) -> Result<f64, MpvError> {
        let p = |t: &SearchTree| -> Option<Result<f64, MpvError>> {
            let n = t.node(t.node_by_key(key)?);
            if !n.evaluated || n.terminal {
                return None;
            }
            Some(
                n.edges
                    .iter()
                    .find(|e| e.point as usize == index)
                    .map(|e| e.prior as f64)
                    .ok_or(MpvError::UnknownMove(index)),
            )
        };
        match (p(&self.small).transpose()?, p(&self.large).transpose()?) {
            (Some(s), Some(l)) => Ok(self.weights.beta * s + (1.0 - self.weights.beta) * l),
            (Some(s), None) => Ok(s),
            (None, Some(l)) => Ok(l),
            (None, None) => Err(MpvError::UnknownState(key)),
        }
    }

    /// The frontier state of `T_L` with the highest `T_S` visit count (ties:
    /// earliest inserted). A pick with zero visits signals the PUCT fallback.
    pub fn select_priority_leaf(&mut self) -> Result<PriorityPick, MpvError> {
        let pick = self.frontier.best(&self.small);
        if self.debug_checks {
            let scan = self.frontier.best_by_scan(&self.small);
            assert_eq!(pick, scan, "priority heap disagrees with frontier scan");
        }
        pick.ok_or(MpvError::EmptyFrontier)
    }

    fn record(&mut self, net: Net, key: u64, mode: SelectMode, value: f32) {
        let index = self.slot_index;
        self.slot_index += 1;
        if let Some(t) = &mut self.trace {
            t.push(TraceEvent { index, net, leaf: key, mode, value });
        }
    }

    /// One small-evaluator simulation. Returns whether `f_S` was called.
    pub fn small_simulation(&mut self) -> Result<bool, MpvError> {
        let view = SharedStats { other: &self.large, this: Net::Small, weights: self.weights };
        let sel = self.small.select_leaf_with(&view);
        let key = self.small.target_key(sel.target);
        let (leaf, touched) = self.small.simulate_target(sel.target)?;
        for id in touched {
            let n = self.small.node(id);
            if self.small.node_by_key(n.key) == Some(id) {
                self.frontier.notify(n.key, n.visits);
            }
        }
        self.record(Net::Small, key, SelectMode::Puct, leaf.value);
        Ok(leaf.evaluated)
    }

    /// One large-evaluator simulation. Returns whether `f_L` was called.
    pub fn large_simulation(&mut self) -> Result<bool, MpvError> {
        let (target, mode) = if !self.large.root().evaluated {
            (LeafTarget::Node(SearchTree::ROOT), SelectMode::Fallback)
        } else {
            match self.select_priority_leaf() {
                Ok(p) if p.small_visits > 0 => {
                    (LeafTarget::Child { parent: p.parent, slot: p.slot }, SelectMode::Priority)
                }
                Ok(_) | Err(MpvError::EmptyFrontier) => {
                    let view = SharedStats { other: &self.small, this: Net::Large, weights: self.weights };
                    (self.large.select_leaf_with(&view).target, SelectMode::Fallback)
                }
                Err(e) => return Err(e),
            }
        };
        let key = self.large.target_key(target);
        let (leaf, _): (LeafResult, _) = self.large.simulate_target(target)?;
        if let LeafTarget::Child { parent, slot } = target {
            self.frontier.close(parent, slot);
        }
        if leaf.evaluated {
            self.frontier.add_children(&self.large, leaf.node, &self.small);
        }
        self.record(Net::Large, key, mode, leaf.value);
        Ok(leaf.evaluated)
    }

    /// Runs the whole schedule. Each slot simulates until its evaluator has
    /// been called once (terminal leaves do not count), giving exactly
    /// `b_S` and `b_L` forward passes unless the reachable tree is exhausted.
    /// A tree whose slot hits the terminal streak limit gets no further slots.
    pub fn mpv_search(&mut self, spec: BudgetSpec, seed: u64) -> Result<(), MpvError> {
        let mut exhausted = [false; 2];
        for small_slot in make_schedule(spec, seed) {
            let which = usize::from(!small_slot);
            if exhausted[which] {
                continue;
            }
            exhausted[which] = true;
            for _ in 0..TERMINAL_STREAK_LIMIT {
                let used = if small_slot { self.small_simulation()? } else { self.large_simulation()? };
                if used {
                    exhausted[which] = false;
                    break;
                }
            }
        }
        Ok(())
    }

    /// Visit counts of the tree that provides the playing policy: `T_S`, or
    /// `T_L` when `T_S` never ran (a large-only control).
    fn policy_counts(&self) -> (Vec<(usize, u32)>, usize) {
        let tree = if self.small.root().visits > 1 || self.large.root().visits <= 1 { &self.small } else { &self.large };
        let root = tree.root();
        let counts = (0..root.edges.len()).map(|s| (root.edges[s].point as usize, tree.edge_stats(0, s).visits)).collect();
        (counts, root.position.points())
    }

    /// `pi(a)` proportional to `N_S(root,a)^(1/tau)`.
    pub fn mpv_policy(&self, tau: f64) -> Result<Vec<f32>, MpvError> {
        let (counts, points) = self.policy_counts();
        Ok(policy_from_visit_counts(&counts, points, tau)?)
    }

    /// Forward passes used as `(f_S, f_L)`.
    pub fn forward_passes(&self) -> (u64, u64) {
        (self.small.forward_passes(), self.large.forward_passes())
    }
}
