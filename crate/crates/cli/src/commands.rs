use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use mpv_core::arena::{play_match, report_table, Agent, ArenaError, MatchConfig};
use mpv_core::evaluator::mix_seed;
use mpv_core::game::{GameError, GameRecord};
use mpv_core::nn::{self, NnError, Parameters};
use mpv_core::train::{load_replay, save_replay, selfplay_game, train_loop, SearchPlan, TrainError, TrainMode, Trainer};
use thiserror::Error;

use crate::agent::{build_agent, AgentError};
use crate::config::{Config, ConfigError};
use crate::gtp::GtpEngine;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Arena(#[from] ArenaError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    /// 1 for usage and configuration problems, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Agent(_) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// The search described by `mode`: `pv` uses `eval` with `simulations`,
/// `mpv` uses `small_eval`/`large_eval` with `b_s`/`b_l` or `budget_B`/`r`.
pub fn search_plan(config: &Config) -> Result<SearchPlan, CliError> {
    let desc = match config.mode {
        TrainMode::Pv => "pv",
        TrainMode::Mpv => "mpv",
    };
    match build_agent(desc, config)?.agent {
        Agent::Search { plan, .. } => Ok(plan),
        Agent::Random => unreachable!("pv and mpv are search agents"),
    }
}

/// Plays `config.games` self-play games and writes `games.txt` (one record
/// per line) and `replay.mpvr` under `config.out`.
pub fn cmd_selfplay(config: &Config, log: &mut dyn Write) -> Result<(), CliError> {
    config.validate()?;
    let plan = search_plan(config)?;
    let sp = config.selfplay_config();
    let mut lines = String::new();
    let mut records = Vec::new();
    for i in 0..config.games {
        let game = selfplay_game(&sp, &plan, mix_seed(config.seed, i as u64))?;
        lines += &format!("{}\n", game.record);
        records.extend(game.records);
        writeln!(log, "game={} moves={} winner={}", i + 1, game.record.moves.len(), game.record.winner.map_or('?', |c| c.letter()))
            .map_err(io_err(Path::new("<log>")))?;
    }
    fs::create_dir_all(&config.out).map_err(io_err(&config.out))?;
    let games = config.out.join("games.txt");
    fs::write(&games, lines).map_err(io_err(&games))?;
    save_replay(&config.out.join("replay.mpvr"), config.board_size, &records)?;
    Ok(())
}

/// Runs the training loop until `normalized_games`, checkpointing under
/// `out`. Each phase logs `mode=<pv|mpv> ` followed by the phase report.
pub fn cmd_train(config: &Config, log: &mut dyn Write) -> Result<Vec<PathBuf>, CliError> {
    config.validate()?;
    let tc = config.train_config();
    let mut trainer = match &config.resume {
        Some(dir) => Trainer::resume(tc, dir)?,
        None => Trainer::new(tc)?,
    };
    if let Some(path) = &config.replay {
        let (size, records) = load_replay(path)?;
        if size != config.board_size {
            return Err(CliError::Usage(format!(
                "{} holds {size}x{size} positions but board_size is {}",
                path.display(),
                config.board_size
            )));
        }
        trainer.buffer.extend(records);
    }
    let mode = config.mode;
    let mut failed = None;
    let snapshots = train_loop(&mut trainer, config.normalized_games, Some(&config.out), |r| {
        if let Err(e) = writeln!(log, "mode={mode} {r}") {
            failed.get_or_insert(e);
        }
    })?;
    if let Some(e) = failed {
        return Err(CliError::Io { path: "<log>".into(), source: e });
    }
    Ok(snapshots.into_iter().filter_map(|s| s.dir).collect())
}

/// Plays `agent_a` against `agent_b` and writes the table and machine line.
pub fn cmd_match(config: &Config, out: &mut dyn Write) -> Result<(), CliError> {
    let a = build_agent(&config.agent_a, config)?;
    let b = build_agent(&config.agent_b, config)?;
    let cfg = MatchConfig::new(config.board_size, config.games, config.seed);
    let result = play_match(&a, &b, &cfg)?;
    let text = format!("{}{}\n", report_table(std::slice::from_ref(&result)), result.machine_line());
    out.write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))?;
    Ok(())
}

/// Serves GTP on the given streams with the configured `agent`.
pub fn cmd_gtp(config: &Config, input: impl io::BufRead, output: impl Write) -> Result<(), CliError> {
    let agent = build_agent(&config.agent, config)?;
    GtpEngine::new(agent, config.board_size, config.seed).run(input, output).map_err(io_err(Path::new("<gtp>")))
}

/// Times forward passes of `fS`, `fL` and the reference shape on the
/// configured board and prints microseconds per pass and the measured cost
/// relative to the reference.
pub fn cmd_bench(config: &Config, passes: usize, out: &mut dyn Write) -> Result<(), CliError> {
    if passes == 0 {
        return Err(CliError::Usage("bench needs at least one pass".into()));
    }
    let tc = config.train_config();
    let features = mpv_core::game::Position::new(config.board_size)?.encode_features();
    let mut timings = Vec::new();
    for (name, shape) in [("fS", tc.small_shape), ("fL", tc.large_shape), ("reference", tc.reference)] {
        let params: Parameters<f32> = Parameters::init(tc.network(shape), config.seed)?;
        nn::forward(&params, &features)?;
        let start = Instant::now();
        for _ in 0..passes {
            nn::forward(&params, &features)?;
        }
        timings.push((name, shape, start.elapsed().as_secs_f64() * 1e6 / passes as f64));
    }
    let reference = timings[2].2;
    for (name, shape, us) in timings {
        writeln!(out, "{name} {shape} us_per_pass={us:.1} measured_cost={:.4}", us / reference)
            .map_err(io_err(Path::new("<stdout>")))?;
    }
    Ok(())
}

/// Searches the position after `record` (a game record, `result` optional)
/// and prints the `top` moves by visit share.
pub fn cmd_analyze(config: &Config, record: &str, top: usize, out: &mut dyn Write) -> Result<(), CliError> {
    let record: GameRecord = record.parse()?;
    if record.size != config.board_size {
        return Err(CliError::Usage(format!("record is {0}x{0} but board_size is {1}", record.size, config.board_size)));
    }
    let pos = record.replay()?;
    if pos.is_terminal() {
        let winner = pos.winner().expect("terminal position has a winner");
        writeln!(out, "terminal winner={}", winner.letter()).map_err(io_err(Path::new("<stdout>")))?;
        return Ok(());
    }
    let plan = search_plan(config)?;
    let result = plan.search(pos, config.c_puct, None, config.seed)?;
    let mut ranked: Vec<(usize, f32)> = result.policy.iter().copied().enumerate().filter(|&(_, p)| p > 0.0).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let size = config.board_size;
    let best = mpv_core::game::Move::from_index(result.best, size).to_gtp(size);
    let mut text = format!("to_play={} best={best}\n", pos.to_play().letter());
    for (point, share) in ranked.into_iter().take(top) {
        text += &format!("{} {share:.4}\n", mpv_core::game::Move::from_index(point, size).to_gtp(size));
    }
    out.write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))?;
    Ok(())
}
