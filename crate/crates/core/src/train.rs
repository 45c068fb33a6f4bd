//! Self-play generation, the replay buffer and the synchronous training loop.
//!
//! A phase plays `games_per_phase` self-play games (in parallel), appends
//! their records to the buffer, then takes `steps_per_phase` SGD steps on
//! uniformly sampled batches. In MPV mode both networks are trained on the
//! same batches; in PV mode only the large network exists.

use std::collections::VecDeque;
use std::fmt;
use std::fs::{self, File};
use std::hash::Hasher;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_rational::Ratio;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHasher;
use thiserror::Error;

use crate::evaluator::{cost_of, mix_seed, Evaluator, NetShape, NormalizedCost};
use crate::game::{Color, FeaturePlanes, GameRecord, Move, Position};
use crate::mpv::{BudgetSpec, DualSearch, MpvError, ShareWeights};
use crate::nn::{self, NetEvaluator, NetworkConfig, NnError, Parameters, Sgd, TrainingBatch};
use crate::search::{RootNoise, SearchConfig, SearchError, SearchTree};

pub const REPLAY_MAGIC: &[u8; 4] = b"MPVR";
pub const REPLAY_VERSION: u32 = 1;

/// Simulations per move of one normalized generated game on the reference
/// shape.
pub const NORMALIZED_GAME_SIMULATIONS: u64 = 200;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("cannot sample from an empty replay buffer")]
    EmptyBuffer,
    #[error("non-finite loss {loss} at training step {step} ({net} network)")]
    NonFiniteLoss { step: u64, net: &'static str, loss: f32 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("replay file: {0}")]
    Format(String),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Mpv(#[from] MpvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One training example: the state, the visit-count policy and the outcome
/// for the player to move.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRecord {
    pub features: FeaturePlanes,
    pub policy: Vec<f32>,
    pub z: i8,
}

/// Fixed-capacity FIFO of records; capacity counts positions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    records: VecDeque<ReplayRecord>,
}

impl ReplayBuffer {
    pub const DEFAULT_CAPACITY: usize = 100_000;

    pub fn new(capacity: usize) -> ReplayBuffer {
        ReplayBuffer { capacity: capacity.max(1), records: VecDeque::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends, evicting the oldest records beyond capacity.
    pub fn push(&mut self, record: ReplayRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
    }

    pub fn extend(&mut self, records: impl IntoIterator<Item = ReplayRecord>) {
        for r in records {
            self.push(r);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &ReplayRecord> {
        self.records.iter()
    }

    pub fn get(&self, i: usize) -> Option<&ReplayRecord> {
        self.records.get(i)
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>, TrainError> {
        if self.records.is_empty() {
            return Err(TrainError::EmptyBuffer);
        }
        Ok((0..n).map(|_| rng.gen_range(0..self.records.len())).collect())
    }

    /// A batch sampled uniformly with replacement, optionally under a random
    /// board symmetry per example.
    pub fn sample_batch<R: Rng>(&self, n: usize, augment: bool, rng: &mut R) -> Result<TrainingBatch, TrainError> {
        let mut batch = TrainingBatch::default();
        for i in self.sample_indices(n, rng)? {
            let r = &self.records[i];
            if augment {
                let sym = rng.gen_range(0..8);
                let (f, p) = transform_record(r, sym);
                batch.push(f, p, r.z as f32);
            } else {
                batch.push(r.features.clone(), r.policy.clone(), r.z as f32);
            }
        }
        Ok(batch)
    }
}

/// Maps a point under one of the eight board symmetries.
pub fn symmetry_index(index: usize, size: usize, sym: u8) -> usize {
    let (mut r, mut c) = (index / size, index % size);
    if sym & 4 != 0 {
        std::mem::swap(&mut r, &mut c);
    }
    if sym & 1 != 0 {
        r = size - 1 - r;
    }
    if sym & 2 != 0 {
        c = size - 1 - c;
    }
    r * size + c
}

/// A record's features and policy under symmetry `sym`.
pub fn transform_record(r: &ReplayRecord, sym: u8) -> (FeaturePlanes, Vec<f32>) {
    let size = r.features.size;
    let points = size * size;
    let mut data = vec![0.0; r.features.data.len()];
    let mut policy = vec![0.0; points];
    for i in 0..points {
        let j = symmetry_index(i, size, sym);
        for plane in 0..FeaturePlanes::PLANES {
            data[plane * points + j] = r.features.data[plane * points + i];
        }
        policy[j] = r.policy[i];
    }
    (FeaturePlanes { size, data }, policy)
}

/// Writes the `MPVR` header followed by the records.
pub fn write_replay<W: Write>(size: usize, records: &[ReplayRecord], w: &mut W) -> Result<(), TrainError> {
    w.write_all(REPLAY_MAGIC)?;
    w.write_all(&REPLAY_VERSION.to_le_bytes())?;
    w.write_all(&(size as u32).to_le_bytes())?;
    let points = size * size;
    for r in records {
        if r.features.size != size || r.policy.len() != points {
            return Err(TrainError::Format(format!("record for board {} in a {size} file", r.features.size)));
        }
        let mut bits = vec![0u8; (4 * points).div_ceil(8)];
        for (i, &v) in r.features.data.iter().enumerate() {
            if v > 0.5 {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        w.write_all(&bits)?;
        for p in &r.policy {
            w.write_all(&p.to_le_bytes())?;
        }
        w.write_all(&[r.z as u8])?;
    }
    Ok(())
}

/// Reads a replay file: board size and records.
pub fn read_replay<R: Read>(r: &mut R) -> Result<(usize, Vec<ReplayRecord>), TrainError> {
    let eof = |e: std::io::Error| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => TrainError::Format("file is truncated".into()),
        _ => TrainError::Io(e),
    };
    let mut head = [0u8; 12];
    r.read_exact(&mut head).map_err(eof)?;
    if &head[..4] != REPLAY_MAGIC {
        return Err(TrainError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes"));
    if version != REPLAY_VERSION {
        return Err(TrainError::Format(format!("unsupported version {version}")));
    }
    let size = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes")) as usize;
    if size == 0 || size > crate::game::MAX_SIZE {
        return Err(TrainError::Format(format!("board size {size}")));
    }
    let points = size * size;
    let record_len = (4 * points).div_ceil(8) + 4 * points + 1;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() % record_len != 0 {
        return Err(TrainError::Format("file is truncated".into()));
    }
    let mut records = Vec::with_capacity(body.len() / record_len);
    for chunk in body.chunks_exact(record_len) {
        let (bits, rest) = chunk.split_at((4 * points).div_ceil(8));
        let data = (0..4 * points).map(|i| f32::from(bits[i / 8] >> (i % 8) & 1)).collect();
        let policy = rest[..4 * points]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let z = rest[4 * points] as i8;
        if z != 1 && z != -1 {
            return Err(TrainError::Format(format!("outcome {z}")));
        }
        records.push(ReplayRecord { features: FeaturePlanes { size, data }, policy, z });
    }
    Ok((size, records))
}

pub fn save_replay(path: &Path, size: usize, records: &[ReplayRecord]) -> Result<(), TrainError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_replay(size, records, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_replay(path: &Path) -> Result<(usize, Vec<ReplayRecord>), TrainError> {
    read_replay(&mut BufReader::new(File::open(path)?))
}

/// The search run at every move.
#[derive(Clone)]
pub enum SearchPlan {
    Pv { evaluator: Arc<dyn Evaluator>, simulations: u64 },
    Mpv { small: Arc<dyn Evaluator>, large: Arc<dyn Evaluator>, budget: BudgetSpec, weights: ShareWeights },
}

impl fmt::Debug for SearchPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SearchPlan::Pv { evaluator, simulations } => write!(f, "PV({} x {simulations})", evaluator.name()),
            SearchPlan::Mpv { small, large, budget, .. } => {
                write!(f, "MPV({} x {}, {} x {})", small.name(), budget.small, large.name(), budget.large)
            }
        }
    }
}

/// Result of searching one position.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// Visit-count policy at temperature 1, or the root priors if no move
    /// was visited.
    pub policy: Vec<f32>,
    /// Most visited move, lowest index on ties.
    pub best: usize,
    pub forward_passes: (u64, u64),
}

impl SearchPlan {
    /// Forward passes per move as `(small, large)` with their costs.
    pub fn passes_and_costs(&self) -> Vec<(u64, NormalizedCost)> {
        match self {
            SearchPlan::Pv { evaluator, simulations } => vec![(*simulations, evaluator.cost())],
            SearchPlan::Mpv { small, large, budget, .. } => {
                vec![(budget.small, small.cost()), (budget.large, large.cost())]
            }
        }
    }

    /// Searches `pos`. `noise` is `(concentration, weight)` of root Dirichlet
    /// noise; `seed` drives the noise and the MPV schedule.
    pub fn search(&self, pos: Position, c_puct: f64, noise: Option<(f64, f64)>, seed: u64) -> Result<SearchOutcome, TrainError> {
        let root_noise = noise.map(|(alpha, weight)| RootNoise { alpha, weight, seed });
        let config = SearchConfig { c_puct, root_noise };
        let (policy, best, forward_passes) = match self {
            SearchPlan::Pv { evaluator, simulations } => {
                let mut tree = SearchTree::new(pos, evaluator.clone(), config);
                tree.run_search(*simulations)?;
                let (policy, best) = tree.move_policy()?;
                (policy, best, (tree.forward_passes(), 0))
            }
            SearchPlan::Mpv { small, large, budget, weights } => {
                let mut d = DualSearch::new(pos, small.clone(), large.clone(), config, config, *weights);
                d.mpv_search(*budget, seed)?;
                let policy = d.mpv_policy(1.0)?;
                let best = d.mpv_policy(0.0)?.iter().position(|&v| v == 1.0).expect("one-hot policy");
                (policy, best, d.forward_passes())
            }
        };
        Ok(SearchOutcome { policy, best, forward_passes })
    }
}

/// Per-game self-play settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfPlayConfig {
    pub board_size: usize,
    pub c_puct: f64,
    /// Moves sampled at temperature 1 before switching to the most visited
    /// move; `None` means `ceil(0.3 * size^2)`.
    pub tau_moves: Option<usize>,
    /// Root Dirichlet noise as `(concentration, weight)`.
    pub noise: Option<(f64, f64)>,
}

impl SelfPlayConfig {
    pub fn new(board_size: usize) -> SelfPlayConfig {
        SelfPlayConfig { board_size, c_puct: 1.5, tau_moves: None, noise: Some((0.3, 0.25)) }
    }

    pub fn sampled_moves(&self) -> usize {
        self.tau_moves.unwrap_or_else(|| (3 * self.board_size * self.board_size).div_ceil(10))
    }
}

/// A finished self-play game.
#[derive(Debug, Clone)]
pub struct SelfPlayGame {
    pub record: GameRecord,
    pub records: Vec<ReplayRecord>,
    pub forward_passes: (u64, u64),
}

/// Samples a point from a policy.
pub fn sample_policy<R: Rng>(policy: &[f32], rng: &mut R) -> usize {
    WeightedIndex::new(policy).expect("policy has positive mass").sample(rng)
}

/// Plays one game with a fresh search at every move and labels each stored
/// state with the outcome for its player to move.
pub fn selfplay_game(cfg: &SelfPlayConfig, plan: &SearchPlan, seed: u64) -> Result<SelfPlayGame, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos = Position::new(cfg.board_size).map_err(|e| TrainError::Config(e.to_string()))?;
    let mut moves = Vec::new();
    let mut states = Vec::new();
    let mut passes = (0, 0);
    while !pos.is_terminal() {
        let out = plan.search(pos, cfg.c_puct, cfg.noise, mix_seed(seed, moves.len() as u64))?;
        passes.0 += out.forward_passes.0;
        passes.1 += out.forward_passes.1;
        let point = if moves.len() < cfg.sampled_moves() { sample_policy(&out.policy, &mut rng) } else { out.best };
        states.push((pos.encode_features(), out.policy));
        let m = Move::from_index(point, cfg.board_size);
        pos = pos.play(m).expect("searched moves are legal");
        moves.push(m);
    }
    let winner = pos.winner().expect("terminal position has a winner");
    let records = states
        .into_iter()
        .enumerate()
        .map(|(ply, (features, policy))| {
            let mover = if ply % 2 == 0 { Color::Black } else { Color::White };
            ReplayRecord { features, policy, z: if mover == winner { 1 } else { -1 } }
        })
        .collect();
    Ok(SelfPlayGame { record: GameRecord { size: cfg.board_size, moves, winner: Some(winner) }, records, forward_passes: passes })
}

/// [`selfplay_game`] with MPV search; the policy comes from `T_S`.
pub fn mpv_selfplay_game(
    cfg: &SelfPlayConfig,
    small: Arc<dyn Evaluator>,
    large: Arc<dyn Evaluator>,
    budget: BudgetSpec,
    weights: ShareWeights,
    seed: u64,
) -> Result<SelfPlayGame, TrainError> {
    selfplay_game(cfg, &SearchPlan::Mpv { small, large, budget, weights }, seed)
}

/// Normalized generated games consumed by one game, given forward passes per
/// move and their costs.
pub fn normalized_game_cost(per_move: &[(u64, NormalizedCost)]) -> Ratio<u64> {
    let units = per_move.iter().fold(Ratio::from_integer(0), |acc, &(n, c)| acc + Ratio::from_integer(n) * c.units());
    units / NORMALIZED_GAME_SIMULATIONS
}

/// [`normalized_game_cost`] with costs taken from network shapes.
pub fn normalized_game_cost_shapes(per_move: &[(u64, NetShape)], reference: NetShape) -> Ratio<u64> {
    let costs: Vec<_> = per_move.iter().map(|&(n, s)| (n, cost_of(s, reference))).collect();
    normalized_game_cost(&costs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// A single network (the large one) searching alone.
    Pv,
    /// Both networks with MPV search; both are trained.
    Mpv,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Pv => "pv",
            TrainMode::Mpv => "mpv",
        })
    }
}

impl std::str::FromStr for TrainMode {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pv" => Ok(TrainMode::Pv),
            "mpv" => Ok(TrainMode::Mpv),
            _ => Err(TrainError::Config(format!("mode {s:?} (expected pv or mpv)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub board_size: usize,
    pub small_shape: NetShape,
    pub large_shape: NetShape,
    /// Shape whose forward pass is one normalized unit.
    pub reference: NetShape,
    pub value_hidden: usize,
    pub l2: f64,
    pub pv_simulations: u64,
    pub budget: BudgetSpec,
    pub weights: ShareWeights,
    pub selfplay: SelfPlayConfig,
    pub games_per_phase: usize,
    pub steps_per_phase: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub milestones: Vec<u64>,
    pub buffer_capacity: usize,
    pub augment: bool,
    /// Normalized games between checkpoints.
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale defaults on a `size` board: `f(16,1)` and `f(32,2)`.
    pub fn new(mode: TrainMode, size: usize) -> TrainConfig {
        TrainConfig {
            mode,
            board_size: size,
            small_shape: NetShape::new(16, 1),
            large_shape: NetShape::new(32, 2),
            reference: NetShape::new(32, 2),
            value_hidden: 32,
            l2: 1e-4,
            pv_simulations: 800,
            budget: BudgetSpec { small: 800, large: 100 },
            weights: ShareWeights::default(),
            selfplay: SelfPlayConfig::new(size),
            games_per_phase: 20,
            steps_per_phase: 40,
            batch_size: 64,
            learning_rate: 0.02,
            momentum: 0.9,
            milestones: vec![],
            buffer_capacity: ReplayBuffer::DEFAULT_CAPACITY,
            augment: false,
            checkpoint_every: 100,
            seed: 0,
        }
    }

    pub fn network(&self, shape: NetShape) -> NetworkConfig {
        NetworkConfig {
            board_size: self.board_size,
            filters: shape.filters as usize,
            blocks: shape.blocks as usize,
            l2: self.l2,
            value_hidden: self.value_hidden,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.network(self.small_shape).validate()?;
        self.network(self.large_shape).validate()?;
        if self.selfplay.board_size != self.board_size {
            return Err(TrainError::Config("self-play board size differs from board_size".into()));
        }
        if self.games_per_phase == 0 || self.batch_size == 0 || self.checkpoint_every == 0 {
            return Err(TrainError::Config("games_per_phase, batch_size and checkpoint_every must be positive".into()));
        }
        match self.mode {
            TrainMode::Pv if self.pv_simulations == 0 => Err(TrainError::Config("pv_simulations must be positive".into())),
            TrainMode::Mpv => BudgetSpec::new(self.budget.small, self.budget.large).map(|_| ()).map_err(Into::into),
            _ => Ok(()),
        }
    }

    /// Stable hash of every setting, stored in checkpoint metadata.
    pub fn hash(&self) -> u64 {
        let mut h = FxHasher::default();
        h.write(format!("{self:?}").as_bytes());
        h.finish()
    }

    pub fn small_cost(&self) -> NormalizedCost {
        cost_of(self.small_shape, self.reference)
    }

    pub fn large_cost(&self) -> NormalizedCost {
        cost_of(self.large_shape, self.reference)
    }
}

/// Counters reported after every phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseReport {
    pub phase: u64,
    pub games: u64,
    pub normalized_games: Ratio<u64>,
    pub positions: usize,
    pub steps: u64,
    pub loss_small: Option<f32>,
    pub loss_large: f32,
    pub learning_rate: f64,
}

impl fmt::Display for PhaseReport {
    /// `phase=<n> games=<n> normalized_games=<x> positions=<n> steps=<n> loss_small=<x|-> loss_large=<x> lr=<x>`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let small = self.loss_small.map_or("-".to_string(), |l| format!("{l:.5}"));
        write!(
            f,
            "phase={} games={} normalized_games={:.3} positions={} steps={} loss_small={} loss_large={:.5} lr={}",
            self.phase,
            self.games,
            ratio_f64(self.normalized_games),
            self.positions,
            self.steps,
            small,
            self.loss_large,
            self.learning_rate
        )
    }
}

fn ratio_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Training state: parameters, optimizers, buffer and counters.
pub struct Trainer {
    pub config: TrainConfig,
    pub small: Option<Parameters<f32>>,
    pub large: Parameters<f32>,
    opt_small: Sgd<f32>,
    opt_large: Sgd<f32>,
    pub buffer: ReplayBuffer,
    pub games: u64,
    pub phase: u64,
    pub normalized_games: Ratio<u64>,
}

impl Trainer {
    /// Fresh randomly initialized networks.
    pub fn new(config: TrainConfig) -> Result<Trainer, TrainError> {
        config.validate()?;
        let small = match config.mode {
            TrainMode::Mpv => Some(Parameters::init(config.network(config.small_shape), mix_seed(config.seed, 11))?),
            TrainMode::Pv => None,
        };
        let large = Parameters::init(config.network(config.large_shape), mix_seed(config.seed, 12))?;
        Ok(Trainer {
            opt_small: Sgd::new(config.learning_rate, config.momentum, config.milestones.clone()),
            opt_large: Sgd::new(config.learning_rate, config.momentum, config.milestones.clone()),
            buffer: ReplayBuffer::new(config.buffer_capacity),
            small,
            large,
            config,
            games: 0,
            phase: 0,
            normalized_games: Ratio::from_integer(0),
        })
    }

    /// The search used for self-play with the current parameters.
    pub fn plan(&self) -> SearchPlan {
        let large: Arc<dyn Evaluator> =
            Arc::new(NetEvaluator::new(Arc::new(self.large.clone()), self.config.large_cost()));
        match &self.small {
            None => SearchPlan::Pv { evaluator: large, simulations: self.config.pv_simulations },
            Some(small) => SearchPlan::Mpv {
                small: Arc::new(NetEvaluator::new(Arc::new(small.clone()), self.config.small_cost())),
                large,
                budget: self.config.budget,
                weights: self.config.weights,
            },
        }
    }

    /// Normalized games charged per generated game.
    pub fn game_cost(&self) -> Ratio<u64> {
        match self.config.mode {
            TrainMode::Pv => normalized_game_cost(&[(self.config.pv_simulations, self.config.large_cost())]),
            TrainMode::Mpv => normalized_game_cost(&[
                (self.config.budget.small, self.config.small_cost()),
                (self.config.budget.large, self.config.large_cost()),
            ]),
        }
    }

    /// Plays `n` games in parallel with seeds derived from the game counter.
    pub fn generate(&mut self, n: usize) -> Result<Vec<SelfPlayGame>, TrainError> {
        let plan = self.plan();
        let base = self.games;
        let seed = self.config.seed;
        let cfg = self.config.selfplay;
        let games: Vec<SelfPlayGame> = (0..n as u64)
            .into_par_iter()
            .map(|i| selfplay_game(&cfg, &plan, mix_seed(seed, 1_000_003 + base + i)))
            .collect::<Result<_, _>>()?;
        for g in &games {
            self.buffer.extend(g.records.iter().cloned());
        }
        self.games += n as u64;
        self.normalized_games += self.game_cost() * n as u64;
        Ok(games)
    }

    /// `steps` SGD steps on sampled batches. Returns the mean losses.
    pub fn train(&mut self, steps: usize) -> Result<(Option<f32>, f32), TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.config.seed, 2_000_003 + self.phase));
        let (mut sum_small, mut sum_large) = (0.0f64, 0.0f64);
        for _ in 0..steps {
            let batch = self.buffer.sample_batch(self.config.batch_size, self.config.augment, &mut rng)?;
            if let Some(small) = &mut self.small {
                let l = step(small, &mut self.opt_small, &batch, "small")?;
                sum_small += l as f64;
            }
            sum_large += step(&mut self.large, &mut self.opt_large, &batch, "large")? as f64;
        }
        let n = steps.max(1) as f64;
        Ok((self.small.as_ref().map(|_| (sum_small / n) as f32), (sum_large / n) as f32))
    }

    /// One generation phase followed by one training phase.
    pub fn run_phase(&mut self) -> Result<PhaseReport, TrainError> {
        self.generate(self.config.games_per_phase)?;
        let (loss_small, loss_large) = self.train(self.config.steps_per_phase)?;
        self.phase += 1;
        Ok(PhaseReport {
            phase: self.phase,
            games: self.games,
            normalized_games: self.normalized_games,
            positions: self.buffer.len(),
            steps: self.opt_large.steps,
            loss_small,
            loss_large,
            learning_rate: self.opt_large.current_rate(),
        })
    }

    /// Writes `ckpt_<normalized games>/` under `root` with `fL.mpvn`, `fS.mpvn`
    /// (MPV only), `meta`, the optimizer momentum (`*.momentum`, model format)
    /// and the replay buffer as `replay.mpvr`.
    pub fn checkpoint(&self, root: &Path) -> Result<PathBuf, TrainError> {
        let dir = root.join(format!("ckpt_{}", self.normalized_games.floor().to_integer()));
        fs::create_dir_all(&dir)?;
        nn::save_params(&self.large, &dir.join("fL.mpvn"))?;
        if let Some(v) = self.opt_large.velocity() {
            nn::save_params(v, &dir.join("fL.momentum"))?;
        }
        if let Some(small) = &self.small {
            nn::save_params(small, &dir.join("fS.mpvn"))?;
            if let Some(v) = self.opt_small.velocity() {
                nn::save_params(v, &dir.join("fS.momentum"))?;
            }
        }
        let records: Vec<ReplayRecord> = self.buffer.iter().cloned().collect();
        save_replay(&dir.join("replay.mpvr"), self.config.board_size, &records)?;
        let meta = [
            format!("mode={}", self.config.mode),
            format!("normalized_games={}/{}", self.normalized_games.numer(), self.normalized_games.denom()),
            format!("games={}", self.games),
            format!("phase={}", self.phase),
            format!("steps={}", self.opt_large.steps),
            format!("seed={}", self.config.seed),
            format!("config_hash={:016x}", self.config.hash()),
        ];
        fs::write(dir.join("meta"), meta.join("\n") + "\n")?;
        Ok(dir)
    }

    /// Restores a trainer from a checkpoint written with the same config.
    pub fn resume(config: TrainConfig, dir: &Path) -> Result<Trainer, TrainError> {
        let bad = |reason: String| TrainError::Checkpoint { path: dir.to_path_buf(), reason };
        let meta = read_meta(&dir.join("meta"))?;
        let get = |k: &str| meta.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str()).ok_or_else(|| bad(format!("missing {k}")));
        if get("config_hash")? != format!("{:016x}", config.hash()) {
            return Err(bad("written with a different configuration".into()));
        }
        let mut t = Trainer::new(config)?;
        let parse = |k: &str| get(k)?.parse::<u64>().map_err(|e| bad(format!("{k}: {e}")));
        t.games = parse("games")?;
        t.phase = parse("phase")?;
        let steps = parse("steps")?;
        let (n, d) = get("normalized_games")?.split_once('/').ok_or_else(|| bad("normalized_games".into()))?;
        let n: u64 = n.parse().map_err(|_| bad("normalized_games".into()))?;
        let d: u64 = d.parse().map_err(|_| bad("normalized_games".into()))?;
        if d == 0 {
            return Err(bad("normalized_games has a zero denominator".into()));
        }
        t.normalized_games = Ratio::new(n, d);
        t.large = nn::load_params_for(&dir.join("fL.mpvn"), &t.config.network(t.config.large_shape))?;
        if t.small.is_some() {
            t.small = Some(nn::load_params_for(&dir.join("fS.mpvn"), &t.config.network(t.config.small_shape))?);
        }
        t.opt_small.steps = steps;
        t.opt_large.steps = steps;
        let momentum = |name: &str, shape: NetShape| -> Result<Option<Parameters<f32>>, TrainError> {
            let path = dir.join(name);
            Ok(if path.exists() { Some(nn::load_params_for(&path, &t.config.network(shape))?) } else { None })
        };
        let large_velocity = momentum("fL.momentum", t.config.large_shape)?;
        let small_velocity = momentum("fS.momentum", t.config.small_shape)?;
        t.opt_large.set_velocity(large_velocity);
        t.opt_small.set_velocity(small_velocity);
        let replay = dir.join("replay.mpvr");
        if replay.exists() {
            t.buffer.extend(load_replay(&replay)?.1);
        }
        Ok(t)
    }
}

fn step(params: &mut Parameters<f32>, opt: &mut Sgd<f32>, batch: &TrainingBatch, net: &'static str) -> Result<f32, TrainError> {
    let (loss, grads) = nn::loss_and_gradients(params, batch)?;
    if !loss.is_finite() {
        return Err(TrainError::NonFiniteLoss { step: opt.steps, net, loss });
    }
    opt.step(params, &grads)?;
    Ok(loss)
}

/// `key=value` lines.
pub fn read_meta(path: &Path) -> Result<Vec<(String, String)>, TrainError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| TrainError::Checkpoint { path: path.to_path_buf(), reason: format!("bad line {l:?}") })
        })
        .collect()
}

/// Parameters of one checkpoint in the progression.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub normalized_games: Ratio<u64>,
    pub small: Option<Parameters<f32>>,
    pub large: Parameters<f32>,
    pub dir: Option<PathBuf>,
}

/// Trains until `total` normalized games have been generated, snapshotting
/// every `checkpoint_every` normalized games (and at the end). Snapshots are
/// written under `out` when given; `log` receives one line per phase.
pub fn train_loop(
    trainer: &mut Trainer,
    total: u64,
    out: Option<&Path>,
    mut log: impl FnMut(&PhaseReport),
) -> Result<Vec<Snapshot>, TrainError> {
    let total = Ratio::from_integer(total);
    let every = trainer.config.checkpoint_every;
    let mut snapshots = Vec::new();
    let mut next_mark = (trainer.normalized_games / every).floor().to_integer() + 1;
    while trainer.normalized_games < total {
        let report = trainer.run_phase()?;
        log(&report);
        let reached = (trainer.normalized_games / every).floor().to_integer();
        if reached >= next_mark || trainer.normalized_games >= total {
            next_mark = reached + 1;
            let dir = out.map(|o| trainer.checkpoint(o)).transpose()?;
            snapshots.push(Snapshot {
                normalized_games: trainer.normalized_games,
                small: trainer.small.clone(),
                large: trainer.large.clone(),
                dir,
            });
        }
    }
    Ok(snapshots)
}
