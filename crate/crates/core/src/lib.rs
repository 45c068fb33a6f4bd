//! Dual-network Monte Carlo tree search (MPV-MCTS) for the game NoGo.
//!
//! The crate is organized bottom-up:
//!
//! * [`game`]: NoGo rules, position keys, feature planes and text formats.
//! * [`evaluator`]: the policy-value evaluation interface, reference
//!   evaluators and the normalized compute-cost model.
//! * [`nn`]: a small residual policy-value network with exact gradients.
//! * [`search`]: single-evaluator PUCT tree search (PV-MCTS).
//! * [`mpv`]: the two-tree search combining a fast and an accurate evaluator.
//! * [`train`]: self-play generation, replay buffer and the training loop.
//! * [`arena`]: budget-matched matches and Elo reporting.
//! * [`config`]: the key-value configuration file used by the CLI.

pub mod evaluator;
pub mod game;
pub mod mpv;
pub mod nn;
pub mod search;
pub mod train;
pub mod arena;

pub use game::{Color, FeaturePlanes, GameError, GameRecord, Move, Position};
