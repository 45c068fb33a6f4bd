//! Bitboard rules against the flood-fill oracle.

mod common;

use std::collections::HashMap;

use common::{reachable, Grid, BLACK, WHITE};
use mpv_core::game::{Color, Move, Position};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check_against_oracle(g: &Grid, p: &Position) {
    assert!(g.all_groups_alive());
    assert_eq!(p.move_count(), g.cells.iter().filter(|&&c| c != 0).count());
    for i in 0..g.cells.len() {
        let m = Move::from_index(i, g.size);
        assert_eq!(p.is_legal(m).unwrap(), g.is_legal(i), "point {i} in {g:?}");
        let them = if p.to_play() == Color::Black { WHITE } else { BLACK };
        let opp_legal = p.legal_mask_for(p.to_play().opponent()) >> i & 1 == 1;
        assert_eq!(opp_legal, g.is_legal_for(them, i));
    }
    let legal = g.legal();
    assert_eq!(p.is_terminal(), legal.is_empty());
    if legal.is_empty() {
        assert_eq!(p.winner(), Some(p.to_play().opponent()));
    }
}

#[test]
fn exhaustive_six_ply_three_by_three() {
    let grids = reachable(3, 6);
    assert!(grids.len() > 1000, "only {} positions", grids.len());
    for g in &grids {
        let p = g.to_position();
        check_against_oracle(g, &p);
        for i in g.legal() {
            let child = p.play(Move::from_index(i, 3)).unwrap();
            assert_eq!(child, g.play(i).to_position());
            assert_eq!(child.key(), p.child_key(i));
        }
    }
}

#[test]
fn random_games_on_larger_boards_agree_with_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for size in [4, 5, 7, 9] {
        for _ in 0..20 {
            let mut p = Position::new(size).unwrap();
            let mut g = Grid::new(size);
            loop {
                check_against_oracle(&g, &p);
                let legal = g.legal();
                if legal.is_empty() {
                    break;
                }
                let i = legal[rng.gen_range(0..legal.len())];
                p = p.play(Move::from_index(i, size)).unwrap();
                g = g.play(i);
            }
            assert!(p.move_count() <= size * size);
        }
    }
}

#[test]
fn keys_do_not_collide_on_a_million_positions() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut seen: HashMap<u64, (u128, u128, Color)> = HashMap::with_capacity(1 << 21);
    let mut distinct = 0usize;
    while distinct < 1_000_000 {
        let mut p = Position::new(5).unwrap();
        // Skip a random prefix so the set is not dominated by openings.
        loop {
            let legal = p.legal_moves();
            if legal.is_empty() {
                break;
            }
            p = p.play(legal[rng.gen_range(0..legal.len())]).unwrap();
            let id = (p.stones(Color::Black), p.stones(Color::White), p.to_play());
            match seen.insert(p.key(), id) {
                None => distinct += 1,
                Some(prev) => assert_eq!(prev, id, "key collision at {:016x}", p.key()),
            }
        }
    }
}

#[test]
fn transposed_move_orders_share_a_key() {
    let a = ["C3", "B2", "D4", "E5"];
    let b = ["D4", "E5", "C3", "B2"];
    let play = |moves: &[&str]| {
        moves.iter().fold(Position::new(5).unwrap(), |p, m| p.play(Move::from_gtp(m, 5).unwrap()).unwrap())
    };
    let (pa, pb) = (play(&a), play(&b));
    assert_eq!(pa.key(), pb.key());
    assert_eq!(pa, pb);
    let fresh = Position::from_diagram(&["....O", "...X.", "..X..", ".O...", "....."], Color::Black).unwrap();
    assert_eq!(fresh, pa);
    assert_eq!(fresh.key(), pa.key());
}
