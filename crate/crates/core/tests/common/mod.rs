//! Reference implementations used as test oracles. They work on plain
//! arrays and share no code with the library's bitboard rules.

#![allow(dead_code)]

pub mod toy;

use std::collections::HashMap;

use mpv_core::game::{Color, Move, Position};

pub const EMPTY: i8 = 0;
pub const BLACK: i8 = 1;
pub const WHITE: i8 = 2;

/// A board as a row-major grid of `EMPTY`, `BLACK` and `WHITE`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Grid {
    pub size: usize,
    pub cells: Vec<i8>,
    pub to_play: i8,
}

impl Grid {
    pub fn new(size: usize) -> Grid {
        Grid { size, cells: vec![EMPTY; size * size], to_play: BLACK }
    }

    pub fn from_position(p: &Position) -> Grid {
        let n = p.size();
        let mut g = Grid::new(n);
        for r in 0..n {
            for c in 0..n {
                let bit = 1u128 << (r * n + c);
                if p.stones(Color::Black) & bit != 0 {
                    g.cells[r * n + c] = BLACK;
                } else if p.stones(Color::White) & bit != 0 {
                    g.cells[r * n + c] = WHITE;
                }
            }
        }
        g.to_play = if p.to_play() == Color::Black { BLACK } else { WHITE };
        g
    }

    pub fn to_position(&self) -> Position {
        let mut black = Vec::new();
        let mut white = Vec::new();
        for (i, &v) in self.cells.iter().enumerate() {
            let m = Move::new(i / self.size, i % self.size);
            match v {
                BLACK => black.push(m),
                WHITE => white.push(m),
                _ => {}
            }
        }
        let color = if self.to_play == BLACK { Color::Black } else { Color::White };
        Position::from_stones(self.size, &black, &white, color).expect("oracle grids are valid")
    }

    fn neighbors(&self, i: usize) -> Vec<usize> {
        let n = self.size;
        let (r, c) = (i / n, i % n);
        let mut out = Vec::with_capacity(4);
        if r > 0 {
            out.push(i - n);
        }
        if r + 1 < n {
            out.push(i + n);
        }
        if c > 0 {
            out.push(i - 1);
        }
        if c + 1 < n {
            out.push(i + 1);
        }
        out
    }

    /// Liberty count of the group containing `start`, by breadth-first fill.
    pub fn group_liberties(&self, start: usize) -> usize {
        let color = self.cells[start];
        let mut seen = vec![false; self.cells.len()];
        let mut libs = vec![false; self.cells.len()];
        let mut queue = std::collections::VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            for j in self.neighbors(i) {
                if self.cells[j] == EMPTY {
                    libs[j] = true;
                } else if self.cells[j] == color && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        libs.iter().filter(|&&l| l).count()
    }

    pub fn is_legal_for(&self, color: i8, i: usize) -> bool {
        if self.cells[i] != EMPTY {
            return false;
        }
        let mut g = self.clone();
        g.cells[i] = color;
        if g.group_liberties(i) == 0 {
            return false;
        }
        let opp = 3 - color;
        g.neighbors(i).into_iter().all(|j| g.cells[j] != opp || g.group_liberties(j) > 0)
    }

    pub fn is_legal(&self, i: usize) -> bool {
        self.is_legal_for(self.to_play, i)
    }

    pub fn legal(&self) -> Vec<usize> {
        (0..self.cells.len()).filter(|&i| self.is_legal(i)).collect()
    }

    pub fn play(&self, i: usize) -> Grid {
        let mut g = self.clone();
        g.cells[i] = self.to_play;
        g.to_play = 3 - self.to_play;
        g
    }

    pub fn all_groups_alive(&self) -> bool {
        (0..self.cells.len()).all(|i| self.cells[i] == EMPTY || self.group_liberties(i) > 0)
    }
}

/// Exact game solver by memoized negamax. `wins(g)` is true when the player
/// to move at `g` wins with perfect play.
#[derive(Default)]
pub struct Solver {
    memo: HashMap<Grid, bool>,
}

impl Solver {
    pub fn wins(&mut self, g: &Grid) -> bool {
        if let Some(&w) = self.memo.get(g) {
            return w;
        }
        let w = g.legal().into_iter().any(|i| !self.wins(&g.play(i)));
        self.memo.insert(g.clone(), w);
        w
    }

    /// Moves that keep a won position won. Empty when the position is lost.
    pub fn winning_moves(&mut self, g: &Grid) -> Vec<usize> {
        g.legal().into_iter().filter(|&i| !self.wins(&g.play(i))).collect()
    }
}

/// Every position reachable from the empty board in at most `plies` moves,
/// deduplicated.
pub fn reachable(size: usize, plies: usize) -> Vec<Grid> {
    let mut seen = std::collections::HashSet::new();
    let mut layer = vec![Grid::new(size)];
    seen.insert(layer[0].clone());
    let mut all = layer.clone();
    for _ in 0..plies {
        let mut next = Vec::new();
        for g in &layer {
            for i in g.legal() {
                let c = g.play(i);
                if seen.insert(c.clone()) {
                    next.push(c.clone());
                    all.push(c);
                }
            }
        }
        layer = next;
    }
    all
}
