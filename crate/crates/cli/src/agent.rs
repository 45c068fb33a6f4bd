//! Agent descriptions: a kind followed by `key=value` options, for example
//! `mpv small=noisy:0.3@1/8 large=noisy:0.05 budget=400 r=1/2`.
//!
//! | kind     | options                                          |
//! |----------|--------------------------------------------------|
//! | `pv`     | `eval`, `sims`, `c_puct`                         |
//! | `mpv`    | `small`, `large`, `b_s`, `b_l`, `budget`, `r`, `c_puct` |
//! | `uct`    | `sims`                                           |
//! | `large`  | `ckpt`, `sims`, `c_puct`                         |
//! | `random` |                                                  |
//!
//! Missing options fall back to the configuration (`eval`, `small_eval`,
//! `large_eval`, `simulations`, `b_s`, `b_l`, `budget_B`, `r`, `c_puct`).

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use mpv_core::arena::{large_only_test, uct_rollout_baseline, AgentSpec, ArenaError, EvaluatorSpec};
use mpv_core::evaluator::{mix_seed, Evaluator};
use mpv_core::mpv::{budget_split, BudgetSpec, MpvError};
use num_rational::Ratio;
use thiserror::Error;

use crate::config::Config;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("agent {desc:?}: {reason}")]
    Description { desc: String, reason: String },
    #[error(transparent)]
    Arena(#[from] ArenaError),
    #[error(transparent)]
    Mpv(#[from] MpvError),
}

const OPTIONS: &[(&str, &[&str])] = &[
    ("pv", &["eval", "sims", "c_puct"]),
    ("mpv", &["small", "large", "b_s", "b_l", "budget", "r", "c_puct"]),
    ("uct", &["sims"]),
    ("large", &["ckpt", "sims", "c_puct"]),
    ("random", &[]),
];

/// Seed for an evaluator built from `spec`. Equal descriptions share a seed,
/// so a noisy evaluator adds the same noise wherever it is used.
fn evaluator_seed(seed: u64, spec: &str) -> u64 {
    let fnv = spec.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    mix_seed(seed, fnv)
}

fn build_evaluator(spec: &str, seed: u64) -> Result<Arc<dyn Evaluator>, ArenaError> {
    spec.parse::<EvaluatorSpec>()?.build(evaluator_seed(seed, spec))
}

/// Parses an agent description and builds it.
pub fn build_agent(desc: &str, config: &Config) -> Result<AgentSpec, AgentError> {
    let fail = |reason: String| AgentError::Description { desc: desc.to_string(), reason };
    let mut tokens = desc.split_whitespace();
    let kind = tokens.next().ok_or_else(|| fail("empty description".into()))?;
    let allowed = OPTIONS
        .iter()
        .find(|(k, _)| *k == kind)
        .map(|(_, o)| *o)
        .ok_or_else(|| fail(format!("unknown kind {kind:?}")))?;
    let mut opts = BTreeMap::new();
    for t in tokens {
        let (k, v) = t.split_once('=').ok_or_else(|| fail(format!("expected key=value, got {t:?}")))?;
        if !allowed.contains(&k) {
            return Err(fail(format!("{kind} takes no option {k:?}")));
        }
        opts.insert(k, v);
    }
    let num = |k: &str, default: u64| -> Result<u64, AgentError> {
        opts.get(k).map_or(Ok(default), |v| v.parse().map_err(|_| fail(format!("{k} must be an integer"))))
    };
    let c_puct = match opts.get("c_puct") {
        Some(v) => v.parse::<f64>().ok().filter(|c| *c >= 0.0 && c.is_finite()).ok_or_else(|| fail("bad c_puct".into()))?,
        None => config.c_puct,
    };
    let seed = config.seed;
    let spec = match kind {
        "random" => AgentSpec::random("random"),
        "uct" => {
            let sims = num("sims", config.simulations)?;
            if sims == 0 {
                return Err(fail("sims must be positive".into()));
            }
            uct_rollout_baseline(sims, seed)
        }
        "pv" => {
            let eval = opts.get("eval").copied().unwrap_or(&config.eval);
            let sims = num("sims", config.simulations)?;
            if sims == 0 {
                return Err(fail("sims must be positive".into()));
            }
            AgentSpec::pv(format!("pv({eval},{sims})"), build_evaluator(eval, seed)?, sims).with_c_puct(c_puct)
        }
        "mpv" => {
            let small_desc = opts.get("small").copied().unwrap_or(&config.small_eval);
            let large_desc = opts.get("large").copied().unwrap_or(&config.large_eval);
            let small = build_evaluator(small_desc, seed)?;
            let large = build_evaluator(large_desc, seed)?;
            let budget = match opts.get("budget") {
                Some(b) => Some(b.parse::<u64>().map_err(|_| fail("budget must be an integer".into()))?),
                None if opts.contains_key("b_s") || opts.contains_key("b_l") => None,
                None => config.budget_b,
            };
            let spec = match budget {
                Some(b) => {
                    let r = match opts.get("r") {
                        Some(r) => r.parse::<Ratio<u64>>().map_err(|_| fail("r must be a ratio such as 1/2".into()))?,
                        None => config.r,
                    };
                    budget_split(b, r, small.cost(), large.cost(), true)?
                }
                None => BudgetSpec::new(num("b_s", config.b_s)?, num("b_l", config.b_l)?)?,
            };
            let name = format!("mpv({small_desc},{large_desc},{},{})", spec.small, spec.large);
            AgentSpec::mpv(name, small, large, spec, config.weights()).with_c_puct(c_puct)
        }
        "large" => {
            let ckpt = opts.get("ckpt").ok_or_else(|| fail("large needs ckpt=<checkpoint dir>".into()))?;
            large_only_test(Path::new(ckpt), num("sims", config.simulations)?)?.with_c_puct(c_puct)
        }
        _ => unreachable!("kind checked above"),
    };
    Ok(spec)
}
