//! MPV search on a scripted position, checked step by step.

mod common;

use common::toy::Toy;
use mpv_core::mpv::make_schedule;
use mpv_core::search::SearchTree;

#[test]
fn toy_position_has_the_scripted_shape() {
    let t = Toy::new();
    assert_eq!(t.root.legal_count(), 2);
    assert_eq!(t.a.legal_count(), 2);
    assert_eq!(t.b.legal_count(), 1);
    for p in [t.a, t.b] {
        for m in p.legal_moves() {
            assert!(p.play(m).unwrap().is_terminal());
        }
    }
}

#[test]
fn trace_matches_hand_execution() {
    let t = Toy::new();
    assert_eq!(make_schedule(Toy::BUDGET, Toy::SEED), Toy::SCHEDULE);
    let mut d = t.dual();
    d.enable_trace();
    d.enable_debug_checks();
    d.mpv_search(Toy::BUDGET, Toy::SEED).unwrap();
    assert_eq!(d.trace_text(), t.expected_trace());
    assert_eq!(d.forward_passes(), (3, 3));
}

#[test]
fn tree_statistics_match_hand_execution() {
    let t = Toy::new();
    let mut d = t.dual();
    d.mpv_search(Toy::BUDGET, Toy::SEED).unwrap();
    let stats = |tree: &SearchTree, key: u64| {
        let n = tree.node(tree.node_by_key(key).unwrap());
        (n.visits, n.value_sum)
    };
    let close = |(n, w): (u32, f64), (en, ew): (u32, f64)| n == en && (w - ew).abs() < 1e-6;
    assert!(close(stats(&d.small, t.root.key()), (3, 0.1 - 0.8 - 0.4)));
    assert!(close(stats(&d.small, t.a.key()), (1, 0.4)));
    assert!(close(stats(&d.small, t.b.key()), (1, 0.8)));
    assert!(close(stats(&d.large, t.root.key()), (3, -0.2 - 0.9 - 0.6)));
    assert!(close(stats(&d.large, t.a.key()), (1, 0.6)));
    assert!(close(stats(&d.large, t.b.key()), (1, 0.9)));
    let pi = d.mpv_policy(1.0).unwrap();
    assert_eq!((pi[0], pi[1]), (0.5, 0.5));
    // Values mixed at the end of the run.
    assert!((d.shared_value(t.b.key()).unwrap() - 0.85).abs() < 1e-6);
    assert!((d.shared_prior(t.root.key(), 1).unwrap() - 0.8).abs() < 1e-6);
}
