//! Go Text Protocol front end.
//!
//! Supported: `protocol_version`, `name`, `version`, `known_command`,
//! `list_commands`, `boardsize`, `clear_board`, `play`, `genmove`,
//! `legal_moves` and `quit`. NoGo has no passes, so `play` rejects `pass`
//! and `genmove` answers `resign` when the side to move has no legal move.

use std::io::{self, BufRead, Write};

use mpv_core::arena::AgentSpec;
use mpv_core::evaluator::mix_seed;
use mpv_core::game::{Color, Move, Position, MAX_SIZE};

pub const COMMANDS: &[&str] = &[
    "protocol_version",
    "name",
    "version",
    "known_command",
    "list_commands",
    "boardsize",
    "clear_board",
    "play",
    "genmove",
    "legal_moves",
    "quit",
];

/// A reply before framing: `Ok` becomes `= text`, `Err` becomes `? text`.
pub type Reply = Result<String, String>;

pub struct GtpEngine {
    agent: AgentSpec,
    seed: u64,
    position: Position,
    quit: bool,
}

impl GtpEngine {
    pub fn new(agent: AgentSpec, size: usize, seed: u64) -> GtpEngine {
        GtpEngine { agent, seed, position: Position::new(size).expect("validated board size"), quit: false }
    }

    pub fn position(&self) -> &Position {
        &self.position
    }

    pub fn has_quit(&self) -> bool {
        self.quit
    }

    fn color(arg: Option<&str>) -> Result<Color, String> {
        arg.ok_or("missing color")?.parse().map_err(|_| "invalid color".to_string())
    }

    /// Runs one command line (without id) and returns the reply.
    pub fn execute(&mut self, command: &str, args: &[&str]) -> Reply {
        let size = self.position.size();
        match command {
            "protocol_version" => Ok("2".into()),
            "name" => Ok("mpvgo".into()),
            "version" => Ok(env!("CARGO_PKG_VERSION").into()),
            "known_command" => Ok(COMMANDS.contains(&args.first().copied().unwrap_or("")).to_string()),
            "list_commands" => Ok(COMMANDS.join("\n")),
            "quit" => {
                self.quit = true;
                Ok(String::new())
            }
            "boardsize" => {
                let n: usize = args.first().and_then(|a| a.parse().ok()).ok_or("boardsize not an integer")?;
                if n == 0 || n > MAX_SIZE {
                    return Err("unacceptable size".into());
                }
                self.position = Position::new(n).expect("size checked");
                Ok(String::new())
            }
            "clear_board" => {
                self.position = Position::new(size).expect("current size is valid");
                Ok(String::new())
            }
            "play" => {
                let color = Self::color(args.first().copied())?;
                let vertex = args.get(1).ok_or("missing vertex")?;
                let m = Move::from_gtp(vertex, size).map_err(|_| "invalid coordinate".to_string())?;
                let pos = self.position.with_to_play(color);
                if !pos.is_legal(m).map_err(|e| e.to_string())? {
                    return Err("illegal move".into());
                }
                self.position = pos.play(m).map_err(|e| e.to_string())?;
                Ok(String::new())
            }
            "genmove" => {
                let color = Self::color(args.first().copied())?;
                let pos = self.position.with_to_play(color);
                if pos.is_terminal() {
                    return Ok("resign".into());
                }
                let seed = mix_seed(self.seed, pos.move_count() as u64);
                let m = self.agent.choose(&pos, false, seed).map_err(|e| e.to_string())?;
                self.position = pos.play(m).map_err(|e| e.to_string())?;
                Ok(m.to_gtp(size))
            }
            "legal_moves" => {
                let pos = match args.first() {
                    Some(c) => self.position.with_to_play(Self::color(Some(c))?),
                    None => self.position,
                };
                Ok(pos.legal_moves().iter().map(|m| m.to_gtp(size)).collect::<Vec<_>>().join(" "))
            }
            _ => Err("unknown command".into()),
        }
    }

    /// Handles one raw input line. Returns the framed response, or `None` for
    /// lines that carry no command.
    pub fn handle_line(&mut self, line: &str) -> Option<String> {
        let cleaned: String = line
            .split('#')
            .next()
            .unwrap_or("")
            .chars()
            .filter(|c| !c.is_control() || *c == '\t')
            .map(|c| if c == '\t' { ' ' } else { c })
            .collect();
        let mut words = cleaned.split_whitespace();
        let first = words.next()?;
        let (id, command) = match first.parse::<u64>() {
            Ok(id) => (Some(id), words.next().unwrap_or("")),
            Err(_) => (None, first),
        };
        let args: Vec<&str> = words.collect();
        let reply = self.execute(&command.to_ascii_lowercase(), &args);
        let id = id.map_or(String::new(), |i| i.to_string());
        Some(match reply {
            Ok(text) if text.is_empty() => format!("={id}\n\n"),
            Ok(text) => format!("={id} {text}\n\n"),
            Err(text) => format!("?{id} {text}\n\n"),
        })
    }

    /// Serves commands until `quit` or end of input.
    pub fn run<R: BufRead, W: Write>(&mut self, input: R, mut output: W) -> io::Result<()> {
        for line in input.lines() {
            if let Some(response) = self.handle_line(&line?) {
                output.write_all(response.as_bytes())?;
                output.flush()?;
            }
            if self.quit {
                break;
            }
        }
        Ok(())
    }
}
