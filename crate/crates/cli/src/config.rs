//! `key = value` experiment configuration.
//!
//! Lines starting with `#` and blank lines are ignored. Every key must be
//! known; values are checked when they are set and once more as a whole by
//! [`Config::validate`].

use std::fs;
use std::path::{Path, PathBuf};

use mpv_core::arena::EvaluatorSpec;
use mpv_core::evaluator::NetShape;
use mpv_core::game::MAX_SIZE;
use mpv_core::mpv::{BudgetSpec, ShareWeights};
use mpv_core::train::{SelfPlayConfig, TrainConfig, TrainMode};
use num_rational::Ratio;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("{key}: cannot use {value:?}: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
}

/// Every recognised key, in the order `mpvgo` documents them.
pub const KEYS: &[&str] = &[
    "mode",
    "board_size",
    "c_puct",
    "alpha",
    "beta",
    "simulations",
    "b_s",
    "b_l",
    "budget_B",
    "r",
    "tau_moves",
    "dirichlet_alpha",
    "dirichlet_weight",
    "buffer_capacity",
    "batch_size",
    "games_per_phase",
    "steps_per_phase",
    "lr",
    "momentum",
    "milestones",
    "l2",
    "augment",
    "fS",
    "fL",
    "reference",
    "value_hidden",
    "normalized_games",
    "checkpoint_every",
    "games",
    "seed",
    "eval",
    "small_eval",
    "large_eval",
    "agent",
    "agent_a",
    "agent_b",
    "out",
    "resume",
    "replay",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub mode: TrainMode,
    pub board_size: usize,
    pub c_puct: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Simulations per move of single-evaluator search.
    pub simulations: u64,
    pub b_s: u64,
    pub b_l: u64,
    /// Normalized budget per move; with `r` it replaces `b_s` and `b_l`.
    pub budget_b: Option<u64>,
    pub r: Ratio<u64>,
    pub tau_moves: Option<usize>,
    pub dirichlet_alpha: f64,
    /// Zero turns root noise off.
    pub dirichlet_weight: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub games_per_phase: usize,
    pub steps_per_phase: usize,
    pub lr: f64,
    pub momentum: f64,
    pub milestones: Vec<u64>,
    pub l2: f64,
    pub augment: bool,
    pub f_s: NetShape,
    pub f_l: NetShape,
    pub reference: NetShape,
    pub value_hidden: usize,
    /// Training length in normalized games.
    pub normalized_games: u64,
    pub checkpoint_every: u64,
    pub games: usize,
    pub seed: u64,
    pub eval: String,
    pub small_eval: String,
    pub large_eval: String,
    pub agent: String,
    pub agent_a: String,
    pub agent_b: String,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
    pub replay: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            mode: TrainMode::Mpv,
            board_size: 9,
            c_puct: 1.5,
            alpha: 0.5,
            beta: 0.0,
            simulations: 800,
            b_s: 800,
            b_l: 100,
            budget_b: None,
            r: Ratio::new(1, 2),
            tau_moves: None,
            dirichlet_alpha: 0.3,
            dirichlet_weight: 0.25,
            buffer_capacity: 100_000,
            batch_size: 64,
            games_per_phase: 20,
            steps_per_phase: 40,
            lr: 0.02,
            momentum: 0.9,
            milestones: Vec::new(),
            l2: 1e-4,
            augment: false,
            f_s: NetShape::new(16, 1),
            f_l: NetShape::new(32, 2),
            reference: NetShape::new(32, 2),
            value_hidden: 32,
            normalized_games: 2000,
            checkpoint_every: 100,
            games: 100,
            seed: 0,
            eval: "heuristic".into(),
            small_eval: "noisy:0.3@1/8".into(),
            large_eval: "noisy:0.05".into(),
            agent: "pv sims=800".into(),
            agent_a: "mpv".into(),
            agent_b: "pv".into(),
            out: PathBuf::from("runs"),
            resume: None,
            replay: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value { key: key.into(), value: value.into(), reason: e.to_string() })
}

fn bad(key: &str, value: &str, reason: &str) -> ConfigError {
    ConfigError::Value { key: key.into(), value: value.into(), reason: reason.into() }
}

fn unit(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = parse(key, value)?;
    if !(0.0..=1.0).contains(&v) {
        return Err(bad(key, value, "must lie in [0, 1]"));
    }
    Ok(v)
}

fn positive<T: std::str::FromStr + PartialOrd + Default>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    let v: T = parse(key, value)?;
    if v <= T::default() {
        return Err(bad(key, value, "must be positive"));
    }
    Ok(v)
}

fn evaluator(key: &str, value: &str) -> Result<String, ConfigError> {
    value.parse::<EvaluatorSpec>().map_err(|e| bad(key, value, &e.to_string()))?;
    Ok(value.to_string())
}

fn ratio(key: &str, value: &str) -> Result<Ratio<u64>, ConfigError> {
    let r: Ratio<u64> = match value.parse::<Ratio<u64>>() {
        Ok(r) => r,
        Err(_) => {
            let x: f64 = parse(key, value)?;
            if !(0.0..=1.0).contains(&x) {
                return Err(bad(key, value, "must lie in [0, 1]"));
            }
            let r = Ratio::<i64>::approximate_float(x).ok_or_else(|| bad(key, value, "not a ratio"))?;
            Ratio::new(*r.numer() as u64, *r.denom() as u64)
        }
    };
    if r > Ratio::from_integer(1) {
        return Err(bad(key, value, "must lie in [0, 1]"));
    }
    Ok(r)
}

impl Config {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "mode" => self.mode = parse(key, v)?,
            "board_size" => {
                let n: usize = parse(key, v)?;
                if n == 0 || n > MAX_SIZE {
                    return Err(bad(key, v, &format!("board sizes run from 1 to {MAX_SIZE}")));
                }
                self.board_size = n;
            }
            "c_puct" => {
                let c: f64 = parse(key, v)?;
                if !(c >= 0.0 && c.is_finite()) {
                    return Err(bad(key, v, "must be a non-negative number"));
                }
                self.c_puct = c;
            }
            "alpha" => self.alpha = unit(key, v)?,
            "beta" => self.beta = unit(key, v)?,
            "simulations" => self.simulations = positive(key, v)?,
            "b_s" => self.b_s = parse(key, v)?,
            "b_l" => self.b_l = parse(key, v)?,
            "budget_B" => self.budget_b = if v == "none" { None } else { Some(positive(key, v)?) },
            "r" => self.r = ratio(key, v)?,
            "tau_moves" => self.tau_moves = if v == "auto" { None } else { Some(parse(key, v)?) },
            "dirichlet_alpha" => self.dirichlet_alpha = positive(key, v)?,
            "dirichlet_weight" => self.dirichlet_weight = unit(key, v)?,
            "buffer_capacity" => self.buffer_capacity = positive(key, v)?,
            "batch_size" => self.batch_size = positive(key, v)?,
            "games_per_phase" => self.games_per_phase = positive(key, v)?,
            "steps_per_phase" => self.steps_per_phase = parse(key, v)?,
            "lr" => self.lr = positive(key, v)?,
            "momentum" => {
                let m: f64 = parse(key, v)?;
                if !(0.0..1.0).contains(&m) {
                    return Err(bad(key, v, "must lie in [0, 1)"));
                }
                self.momentum = m;
            }
            "milestones" => {
                let m: Vec<u64> = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|s| parse(key, s.trim())).collect::<Result<_, _>>()?
                };
                if m.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(bad(key, v, "must be strictly increasing"));
                }
                self.milestones = m;
            }
            "l2" => {
                let l: f64 = parse(key, v)?;
                if !(l >= 0.0 && l.is_finite()) {
                    return Err(bad(key, v, "must be a non-negative number"));
                }
                self.l2 = l;
            }
            "augment" => self.augment = parse(key, v)?,
            "fS" => self.f_s = parse(key, v)?,
            "fL" => self.f_l = parse(key, v)?,
            "reference" => self.reference = parse(key, v)?,
            "value_hidden" => self.value_hidden = positive(key, v)?,
            "normalized_games" => self.normalized_games = positive(key, v)?,
            "checkpoint_every" => self.checkpoint_every = positive(key, v)?,
            "games" => self.games = positive(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "eval" => self.eval = evaluator(key, v)?,
            "small_eval" => self.small_eval = evaluator(key, v)?,
            "large_eval" => self.large_eval = evaluator(key, v)?,
            "agent" => self.agent = v.to_string(),
            "agent_a" => self.agent_a = v.to_string(),
            "agent_b" => self.agent_b = v.to_string(),
            "out" => self.out = PathBuf::from(v),
            "resume" => self.resume = (!v.is_empty()).then(|| PathBuf::from(v)),
            "replay" => self.replay = (!v.is_empty()).then(|| PathBuf::from(v)),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn merge_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.to_string() })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Config, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut c = Config::default();
        c.merge_text(&text)?;
        Ok(c)
    }

    /// Applies `key=value` overrides, as given on the command line.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<(), ConfigError> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::Syntax { line: 0, text: o.to_string() })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Cross-key checks.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.budget_b.is_none() && self.mode == TrainMode::Mpv {
            BudgetSpec::new(self.b_s, self.b_l).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        self.train_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn weights(&self) -> ShareWeights {
        ShareWeights { alpha: self.alpha, beta: self.beta }
    }

    /// Root noise as `(concentration, weight)`, if enabled.
    pub fn noise(&self) -> Option<(f64, f64)> {
        (self.dirichlet_weight > 0.0).then_some((self.dirichlet_alpha, self.dirichlet_weight))
    }

    pub fn selfplay_config(&self) -> SelfPlayConfig {
        SelfPlayConfig { board_size: self.board_size, c_puct: self.c_puct, tau_moves: self.tau_moves, noise: self.noise() }
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = TrainConfig::new(self.mode, self.board_size);
        t.small_shape = self.f_s;
        t.large_shape = self.f_l;
        t.reference = self.reference;
        t.value_hidden = self.value_hidden;
        t.l2 = self.l2;
        t.pv_simulations = self.simulations;
        t.budget = BudgetSpec::unchecked(self.b_s, self.b_l);
        t.weights = self.weights();
        t.selfplay = self.selfplay_config();
        t.games_per_phase = self.games_per_phase;
        t.steps_per_phase = self.steps_per_phase;
        t.batch_size = self.batch_size;
        t.learning_rate = self.lr;
        t.momentum = self.momentum;
        t.milestones = self.milestones.clone();
        t.buffer_capacity = self.buffer_capacity;
        t.augment = self.augment;
        t.checkpoint_every = self.checkpoint_every;
        t.seed = self.seed;
        t
    }
}
