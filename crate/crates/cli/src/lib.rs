//! Command-line front end for MPV-MCTS on NoGo: self-play, training,
//! matches, benchmarking, position analysis and a GTP engine.

pub mod agent;
pub mod commands;
pub mod config;
pub mod gtp;
