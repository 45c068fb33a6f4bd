//! Degenerate budgets reduce MPV search to single-tree search.

use std::sync::Arc;

use mpv_core::evaluator::{Evaluator, HeuristicEvaluator, NoisyEvaluator, NormalizedCost, UniformEvaluator};
use mpv_core::game::Position;
use mpv_core::mpv::{BudgetSpec, DualSearch, ShareWeights};
use mpv_core::search::{RootNoise, SearchConfig, SearchTree};

fn evaluators() -> (Arc<dyn Evaluator>, Arc<dyn Evaluator>) {
    let small = Arc::new(NoisyEvaluator::new(
        Arc::new(HeuristicEvaluator::default()),
        0.3,
        5,
        NormalizedCost::new(1, 8),
    ));
    (small, Arc::new(UniformEvaluator::default()))
}

fn all_stats(t: &SearchTree) -> Vec<(u64, u32, u64)> {
    (0..t.len() as u32).map(|i| t.node(i)).map(|n| (n.key, n.visits, n.value_sum.to_bits())).collect()
}

fn configs(seed: u64) -> SearchConfig {
    SearchConfig { c_puct: 1.5, root_noise: Some(RootNoise { alpha: 0.3, weight: 0.25, seed }) }
}

#[test]
fn no_large_budget_is_plain_search_with_small_evaluator() {
    let (fs, fl) = evaluators();
    for (plies, seed) in [(0, 1), (3, 2), (7, 3)] {
        let mut root = Position::new(5).unwrap();
        for _ in 0..plies {
            root = root.play(root.legal_moves()[plies % root.legal_count()]).unwrap();
        }
        let mut d = DualSearch::new(root, fs.clone(), fl.clone(), configs(seed), configs(seed), ShareWeights::default());
        d.mpv_search(BudgetSpec::new(400, 0).unwrap(), seed).unwrap();
        let mut pv = SearchTree::new(root, fs.clone(), configs(seed));
        pv.run_search(400).unwrap();
        assert_eq!(all_stats(&d.small), all_stats(&pv));
        assert_eq!(d.forward_passes(), (400, 0));
        assert_eq!(d.mpv_policy(1.0).unwrap(), pv.policy_from_counts(1.0).unwrap());
    }
}

#[test]
fn no_small_budget_is_plain_search_with_large_evaluator() {
    let (fs, fl) = evaluators();
    let root = Position::new(5).unwrap();
    let mut d = DualSearch::new(root, fs, fl.clone(), configs(4), configs(4), ShareWeights::default());
    d.mpv_search(BudgetSpec::unchecked(0, 300), 4).unwrap();
    let mut pv = SearchTree::new(root, fl, configs(4));
    pv.run_search(300).unwrap();
    assert_eq!(all_stats(&d.large), all_stats(&pv));
    assert_eq!(d.forward_passes(), (0, 300));
    assert_eq!(d.mpv_policy(0.0).unwrap(), pv.policy_from_counts(0.0).unwrap());
}

#[test]
fn counters_are_exact_for_mixed_budgets() {
    let (fs, fl) = evaluators();
    for (bs, bl) in [(800, 100), (64, 64), (37, 5), (1, 1)] {
        let mut d = DualSearch::new(Position::new(5).unwrap(), fs.clone(), fl.clone(), configs(0), configs(0), ShareWeights::default());
        d.enable_debug_checks();
        d.mpv_search(BudgetSpec::new(bs, bl).unwrap(), 6).unwrap();
        assert_eq!(d.forward_passes(), (bs, bl));
    }
}
