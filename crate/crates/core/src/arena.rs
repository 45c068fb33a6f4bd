//! Head-to-head matches, Elo conversion and the budget experiments.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::evaluator::{
    mix_seed, Evaluator, HeuristicEvaluator, NormalizedCost, NoisyEvaluator, RolloutEvaluator, UniformEvaluator,
};
use crate::game::{Color, GameRecord, Move, Position};
use crate::mpv::{budget_split, BudgetSpec, MpvError, ShareWeights};
use crate::nn::{self, NetEvaluator, NnError};
use crate::train::{sample_policy, SearchPlan, TrainError};

#[derive(Debug, Error)]
pub enum ArenaError {
    #[error("Elo is undefined at win rate {0}")]
    UndefinedElo(f64),
    #[error("a match needs an even number of games, at least 2 (got {0})")]
    GameCount(usize),
    #[error("checkpoint {0} has no large network")]
    MissingLarge(String),
    #[error("evaluator spec {0:?}: {1}")]
    EvaluatorSpec(String, String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Mpv(#[from] MpvError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// `400 * log10(p / (1 - p))`.
pub fn elo_from_winrate(p: f64) -> Result<f64, ArenaError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(ArenaError::UndefinedElo(p));
    }
    Ok(400.0 * (p / (1.0 - p)).log10())
}

/// How an agent picks moves.
#[derive(Clone, Debug)]
pub enum Agent {
    Search { plan: SearchPlan, c_puct: f64 },
    /// Uniformly random legal moves.
    Random,
}

#[derive(Clone, Debug)]
pub struct AgentSpec {
    pub name: String,
    pub agent: Agent,
}

impl AgentSpec {
    pub fn pv(name: impl Into<String>, evaluator: Arc<dyn Evaluator>, simulations: u64) -> AgentSpec {
        AgentSpec { name: name.into(), agent: Agent::Search { plan: SearchPlan::Pv { evaluator, simulations }, c_puct: 1.5 } }
    }

    pub fn mpv(
        name: impl Into<String>,
        small: Arc<dyn Evaluator>,
        large: Arc<dyn Evaluator>,
        budget: BudgetSpec,
        weights: ShareWeights,
    ) -> AgentSpec {
        AgentSpec {
            name: name.into(),
            agent: Agent::Search { plan: SearchPlan::Mpv { small, large, budget, weights }, c_puct: 1.5 },
        }
    }

    /// Replaces the PUCT constant of a search agent.
    pub fn with_c_puct(mut self, c: f64) -> AgentSpec {
        if let Agent::Search { c_puct, .. } = &mut self.agent {
            *c_puct = c;
        }
        self
    }

    pub fn random(name: impl Into<String>) -> AgentSpec {
        AgentSpec { name: name.into(), agent: Agent::Random }
    }

    /// Picks a move at a non-terminal position. With `explore` the move is
    /// sampled from the visit counts at temperature 1; otherwise it is the
    /// most visited move, ties broken at random.
    pub fn choose(&self, pos: &Position, explore: bool, seed: u64) -> Result<Move, ArenaError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match &self.agent {
            Agent::Random => Ok(*pos.legal_moves().choose(&mut rng).expect("non-terminal position")),
            Agent::Search { plan, c_puct } => {
                let out = plan.search(*pos, *c_puct, None, seed)?;
                let point = if explore {
                    sample_policy(&out.policy, &mut rng)
                } else {
                    let max = out.policy.iter().cloned().fold(0.0f32, f32::max);
                    let best: Vec<usize> = (0..out.policy.len()).filter(|&i| out.policy[i] == max).collect();
                    best[rng.gen_range(0..best.len())]
                };
                Ok(Move::from_index(point, pos.size()))
            }
        }
    }
}

/// PV search guided by single random playouts with uniform priors.
pub fn uct_rollout_baseline(simulations: u64, seed: u64) -> AgentSpec {
    AgentSpec::pv(format!("uct-rollout({simulations})"), Arc::new(RolloutEvaluator::new(1, seed)), simulations)
}

/// PV agent on the large network of a checkpoint directory; the small
/// network is never loaded.
pub fn large_only_test(checkpoint: &Path, simulations: u64) -> Result<AgentSpec, ArenaError> {
    let path = checkpoint.join("fL.mpvn");
    if !path.exists() {
        return Err(ArenaError::MissingLarge(checkpoint.display().to_string()));
    }
    let params = nn::load_params(&path)?;
    let name = format!("large-only({})", checkpoint.file_name().map_or("?".into(), |n| n.to_string_lossy().into_owned()));
    Ok(AgentSpec::pv(name, Arc::new(NetEvaluator::new(Arc::new(params), NormalizedCost::ONE)), simulations))
}

/// Match settings shared by all games.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    pub board_size: usize,
    pub games: usize,
    pub seed: u64,
    /// Opening plies played by sampling from the visit counts.
    pub opening_plies: usize,
}

impl MatchConfig {
    pub fn new(board_size: usize, games: usize, seed: u64) -> MatchConfig {
        MatchConfig { board_size, games, seed, opening_plies: 2 }
    }
}

/// One finished game between `a` and `b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GameOutcome {
    pub a_color: Color,
    pub record: GameRecord,
}

impl GameOutcome {
    pub fn a_won(&self) -> bool {
        self.record.winner == Some(self.a_color)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub a: String,
    pub b: String,
    pub games: usize,
    /// Wins of `a`.
    pub wins: usize,
    pub wins_as_black: usize,
    pub wins_as_white: usize,
    pub games_as_black: usize,
    pub outcomes: Vec<GameOutcome>,
}

impl MatchResult {
    pub fn from_outcomes(a: &str, b: &str, outcomes: Vec<GameOutcome>) -> MatchResult {
        let won = |c: Color| outcomes.iter().filter(|o| o.a_color == c && o.a_won()).count();
        MatchResult {
            a: a.to_string(),
            b: b.to_string(),
            games: outcomes.len(),
            wins: outcomes.iter().filter(|o| o.a_won()).count(),
            wins_as_black: won(Color::Black),
            wins_as_white: won(Color::White),
            games_as_black: outcomes.iter().filter(|o| o.a_color == Color::Black).count(),
            outcomes,
        }
    }

    pub fn losses(&self) -> usize {
        self.games - self.wins
    }

    pub fn win_rate(&self) -> f64 {
        self.wins as f64 / self.games as f64
    }

    /// Binomial standard error of the win rate.
    pub fn stderr(&self) -> f64 {
        let p = self.win_rate();
        (p * (1.0 - p) / self.games as f64).sqrt()
    }

    pub fn elo(&self) -> Result<f64, ArenaError> {
        elo_from_winrate(self.win_rate())
    }

    /// Elo standard error by the delta method.
    pub fn elo_stderr(&self) -> Option<f64> {
        let p = self.win_rate();
        (p > 0.0 && p < 1.0).then(|| 400.0 / std::f64::consts::LN_10 / (p * (1.0 - p)) * self.stderr())
    }

    /// Elo, or for a clean sweep the bound given by half a game, as `>x` / `<x`.
    pub fn elo_text(&self) -> String {
        match self.elo() {
            Ok(e) => format!("{e:.1}"),
            Err(_) => {
                let half = 0.5 / self.games as f64;
                if self.wins == self.games {
                    format!(">{:.1}", elo_from_winrate(1.0 - half).expect("interior"))
                } else {
                    format!("<{:.1}", elo_from_winrate(half).expect("interior"))
                }
            }
        }
    }

    /// `pairing;games;wins;p;elo;stderr`
    pub fn machine_line(&self) -> String {
        format!(
            "{} vs {};{};{};{:.4};{};{:.4}",
            self.a,
            self.b,
            self.games,
            self.wins,
            self.win_rate(),
            self.elo_text(),
            self.stderr()
        )
    }
}

/// A text table with one row per pairing.
pub fn report_table(results: &[MatchResult]) -> String {
    let width = results.iter().map(|r| r.a.len() + r.b.len() + 4).max().unwrap_or(7).max(7);
    let mut s = format!("{:<width$}  {:>6}  {:>6}  {:>7}  {:>9}  {:>7}\n", "pairing", "games", "wins", "p", "elo", "stderr");
    for r in results {
        s += &format!(
            "{:<width$}  {:>6}  {:>6}  {:>7.4}  {:>9}  {:>7.4}\n",
            format!("{} vs {}", r.a, r.b),
            r.games,
            r.wins,
            r.win_rate(),
            r.elo_text(),
            r.stderr()
        );
    }
    s
}

impl fmt::Display for MatchResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&report_table(std::slice::from_ref(self)))
    }
}

/// Plays one game; `a` takes `a_color`.
pub fn play_game(a: &AgentSpec, b: &AgentSpec, a_color: Color, cfg: &MatchConfig, seed: u64) -> Result<GameOutcome, ArenaError> {
    let mut pos = Position::new(cfg.board_size).map_err(|e| TrainError::Config(e.to_string()))?;
    let mut moves = Vec::new();
    while !pos.is_terminal() {
        let agent = if pos.to_play() == a_color { a } else { b };
        let ply = moves.len();
        let m = agent.choose(&pos, ply < cfg.opening_plies, mix_seed(seed, ply as u64))?;
        pos = pos.play(m).expect("agents return legal moves");
        moves.push(m);
    }
    Ok(GameOutcome { a_color, record: GameRecord { size: cfg.board_size, moves, winner: pos.winner() } })
}

/// Plays `games` games, alternating colors; games `2k` and `2k + 1` share a
/// seed so every opening is played from both sides.
pub fn play_match(a: &AgentSpec, b: &AgentSpec, cfg: &MatchConfig) -> Result<MatchResult, ArenaError> {
    if cfg.games < 2 || !cfg.games.is_multiple_of(2) {
        return Err(ArenaError::GameCount(cfg.games));
    }
    let outcomes = (0..cfg.games)
        .into_par_iter()
        .map(|i| {
            let color = if i % 2 == 0 { Color::Black } else { Color::White };
            play_game(a, b, color, cfg, mix_seed(cfg.seed, (i / 2) as u64))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MatchResult::from_outcomes(&a.name, &b.name, outcomes))
}

/// One row of a budget sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub budget: u64,
    pub ratio: Ratio<u64>,
    pub spec: BudgetSpec,
    pub result: MatchResult,
}

/// For every `(B, r)` builds the MPV agent from [`budget_split`] and plays it
/// against `opponent`. The `r = 0` and `r = 1` rows are single-evaluator
/// controls.
pub fn budget_sweep(
    budgets: &[u64],
    ratios: &[Ratio<u64>],
    small: Arc<dyn Evaluator>,
    large: Arc<dyn Evaluator>,
    opponent: &AgentSpec,
    cfg: &MatchConfig,
) -> Result<Vec<SweepRow>, ArenaError> {
    let mut rows = Vec::new();
    for &budget in budgets {
        for &ratio in ratios {
            let spec = budget_split(budget, ratio, small.cost(), large.cost(), true)?;
            let name = format!("mpv(B={budget},r={ratio})");
            let agent = AgentSpec::mpv(name, small.clone(), large.clone(), spec, ShareWeights::default());
            let result = play_match(&agent, opponent, cfg)?;
            rows.push(SweepRow { budget, ratio, spec, result });
        }
    }
    Ok(rows)
}

/// `B;r;b_S;b_L;games;wins;p;elo;stderr` lines.
pub fn sweep_lines(rows: &[SweepRow]) -> String {
    rows.iter()
        .map(|r| {
            format!(
                "{};{};{};{};{};{};{:.4};{};{:.4}\n",
                r.budget,
                r.ratio,
                r.spec.small,
                r.spec.large,
                r.result.games,
                r.result.wins,
                r.result.win_rate(),
                r.result.elo_text(),
                r.result.stderr()
            )
        })
        .collect()
}

/// Textual evaluator descriptions:
///
/// * `uniform`
/// * `heuristic`
/// * `rollout[:playouts]`
/// * `noisy:<sigma>` (heuristic values plus seeded noise)
/// * `net:<path>`
///
/// Any of them may end in `@<cost>` with a cost such as `1/8`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatorSpec {
    pub kind: EvaluatorKind,
    pub cost: Option<NormalizedCost>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvaluatorKind {
    Uniform,
    Heuristic,
    Rollout(u32),
    Noisy(f32),
    Net(String),
}

impl FromStr for EvaluatorSpec {
    type Err = ArenaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |why: &str| ArenaError::EvaluatorSpec(s.to_string(), why.to_string());
        let (body, cost) = match s.rsplit_once('@') {
            Some((b, c)) => {
                let cost = match c.split_once('/') {
                    Some((n, d)) => {
                        let n: u64 = n.trim().parse().map_err(|_| err("cost numerator"))?;
                        let d: u64 = d.trim().parse().map_err(|_| err("cost denominator"))?;
                        if n == 0 || d == 0 {
                            return Err(err("cost must be positive"));
                        }
                        NormalizedCost::new(n, d)
                    }
                    None => {
                        let n: u64 = c.trim().parse().map_err(|_| err("cost"))?;
                        if n == 0 {
                            return Err(err("cost must be positive"));
                        }
                        NormalizedCost::new(n, 1)
                    }
                };
                (b, Some(cost))
            }
            None => (s, None),
        };
        let (head, arg) = body.split_once(':').map_or((body, None), |(h, a)| (h, Some(a)));
        let kind = match (head, arg) {
            ("uniform", None) => EvaluatorKind::Uniform,
            ("heuristic", None) => EvaluatorKind::Heuristic,
            ("rollout", None) => EvaluatorKind::Rollout(1),
            ("rollout", Some(a)) => match a.parse() {
                Ok(n) if n >= 1 => EvaluatorKind::Rollout(n),
                _ => return Err(err("playouts must be a positive integer")),
            },
            ("noisy", Some(a)) => match a.parse::<f32>() {
                Ok(x) if x >= 0.0 && x.is_finite() => EvaluatorKind::Noisy(x),
                _ => return Err(err("sigma must be a non-negative number")),
            },
            ("net", Some(p)) if !p.is_empty() => EvaluatorKind::Net(p.to_string()),
            _ => return Err(err("unknown evaluator")),
        };
        Ok(EvaluatorSpec { kind, cost })
    }
}

impl EvaluatorSpec {
    /// Builds the evaluator; `seed` feeds rollouts and noise.
    pub fn build(&self, seed: u64) -> Result<Arc<dyn Evaluator>, ArenaError> {
        let cost = self.cost.unwrap_or(NormalizedCost::ONE);
        Ok(match &self.kind {
            EvaluatorKind::Uniform => Arc::new(UniformEvaluator { cost }),
            EvaluatorKind::Heuristic => Arc::new(HeuristicEvaluator { cost, ..HeuristicEvaluator::default() }),
            EvaluatorKind::Rollout(n) => Arc::new(RolloutEvaluator { cost, ..RolloutEvaluator::new(*n, seed) }),
            EvaluatorKind::Noisy(sigma) => {
                Arc::new(NoisyEvaluator::new(Arc::new(HeuristicEvaluator::default()), *sigma, seed, cost))
            }
            EvaluatorKind::Net(path) => Arc::new(NetEvaluator::new(Arc::new(nn::load_params(Path::new(path))?), cost)),
        })
    }
}
