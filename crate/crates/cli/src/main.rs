use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mpv_cli::commands::{self, CliError};
use mpv_cli::config::Config;

/// MPV-MCTS on NoGo.
#[derive(Debug, Parser)]
#[command(name = "mpvgo", version)]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Board size.
    #[arg(long, global = true)]
    size: Option<usize>,
    /// Base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate self-play games and a replay file.
    Selfplay {
        #[arg(long)]
        games: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train in PV or MPV mode, writing checkpoints.
    Train {
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        normalized_games: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Replay file to preload into the buffer.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Play two agents against each other.
    Match {
        #[arg(long = "a")]
        agent_a: Option<String>,
        #[arg(long = "b")]
        agent_b: Option<String>,
        #[arg(long)]
        games: Option<usize>,
    },
    /// Serve the Go Text Protocol on stdin/stdout.
    Gtp {
        #[arg(long)]
        agent: Option<String>,
    },
    /// Time forward passes of the configured network shapes.
    Bench {
        #[arg(long, default_value_t = 200)]
        passes: usize,
    },
    /// Search one position given as a game record.
    Analyze {
        record: String,
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
}

fn path(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn flag_overrides(cli: &Cli) -> Vec<String> {
    let mut pairs: Vec<(&str, Option<String>)> =
        vec![("board_size", cli.size.map(|v| v.to_string())), ("seed", cli.seed.map(|v| v.to_string()))];
    match &cli.command {
        Command::Selfplay { games, out } => {
            pairs.push(("games", games.map(|v| v.to_string())));
            pairs.push(("out", path(out)));
        }
        Command::Train { mode, normalized_games, out, resume, replay } => {
            pairs.push(("mode", mode.clone()));
            pairs.push(("normalized_games", normalized_games.map(|v| v.to_string())));
            pairs.push(("out", path(out)));
            pairs.push(("resume", path(resume)));
            pairs.push(("replay", path(replay)));
        }
        Command::Match { agent_a, agent_b, games } => {
            pairs.push(("agent_a", agent_a.clone()));
            pairs.push(("agent_b", agent_b.clone()));
            pairs.push(("games", games.map(|v| v.to_string())));
        }
        Command::Gtp { agent } => pairs.push(("agent", agent.clone())),
        Command::Bench { .. } | Command::Analyze { .. } => {}
    }
    pairs.into_iter().filter_map(|(k, v)| v.map(|v| format!("{k}={v}"))).collect()
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(p) => Config::from_file(p)?,
        None => Config::default(),
    };
    config.apply_overrides(&cli.set)?;
    config.apply_overrides(&flag_overrides(cli))?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match &cli.command {
        Command::Selfplay { .. } => commands::cmd_selfplay(&config, &mut io::stderr()),
        Command::Train { .. } => {
            for dir in commands::cmd_train(&config, &mut out)? {
                eprintln!("checkpoint {}", dir.display());
            }
            Ok(())
        }
        Command::Match { .. } => commands::cmd_match(&config, &mut out),
        Command::Gtp { .. } => commands::cmd_gtp(&config, io::stdin().lock(), out),
        Command::Bench { passes } => commands::cmd_bench(&config, *passes, &mut out),
        Command::Analyze { record, top } => commands::cmd_analyze(&config, record, *top, &mut out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mpvgo: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
