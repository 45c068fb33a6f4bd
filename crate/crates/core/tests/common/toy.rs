//! A scripted two-ply position with table evaluators, and the trace of
//! the MPV search loop on it worked out by hand.

use std::collections::HashMap;
use std::sync::Arc;

use mpv_core::evaluator::{EvalError, Evaluator, NormalizedCost, PvOutput};
use mpv_core::game::{Color, Move, Position};
use mpv_core::mpv::{BudgetSpec, DualSearch, ShareWeights};
use mpv_core::search::SearchConfig;

/// Fixed outputs per position key.
pub struct TableEvaluator {
    pub table: HashMap<u64, PvOutput>,
    pub label: &'static str,
}

impl Evaluator for TableEvaluator {
    fn evaluate(&self, pos: &Position) -> Result<PvOutput, EvalError> {
        if pos.is_terminal() {
            return Err(EvalError::Terminal);
        }
        Ok(self.table.get(&pos.key()).cloned().expect("scripted position"))
    }
    fn cost(&self) -> NormalizedCost {
        NormalizedCost::ONE
    }
    fn name(&self) -> String {
        self.label.to_string()
    }
}

/// White to move with exactly two legal moves, A3 (point 0) and B3 (point 1).
/// After A3 black has two replies, after B3 one; every reply ends the game.
///
/// ```text
/// . . X
/// . X .
/// X O O
/// ```
pub struct Toy {
    pub root: Position,
    pub a: Position,
    pub b: Position,
}

impl Toy {
    pub fn new() -> Toy {
        let root = Position::from_diagram(&["..X", ".X.", "XOO"], Color::White).unwrap();
        let a = root.play(Move::new(0, 0)).unwrap();
        let b = root.play(Move::new(0, 1)).unwrap();
        Toy { root, a, b }
    }

    fn output(pos: &Position, priors: &[(usize, f32)], value: f32) -> PvOutput {
        let mut policy = vec![0.0; pos.points()];
        for &(i, p) in priors {
            policy[i] = p;
        }
        PvOutput { policy, value }
    }

    pub fn small(&self) -> TableEvaluator {
        let table = HashMap::from([
            (self.root.key(), Self::output(&self.root, &[(0, 0.7), (1, 0.3)], 0.1)),
            (self.a.key(), Self::output(&self.a, &[(1, 0.5), (3, 0.5)], 0.4)),
            (self.b.key(), Self::output(&self.b, &[(3, 1.0)], 0.8)),
        ]);
        TableEvaluator { table, label: "table-small" }
    }

    pub fn large(&self) -> TableEvaluator {
        let table = HashMap::from([
            (self.root.key(), Self::output(&self.root, &[(0, 0.2), (1, 0.8)], -0.2)),
            (self.a.key(), Self::output(&self.a, &[(1, 0.9), (3, 0.1)], 0.6)),
            (self.b.key(), Self::output(&self.b, &[(3, 1.0)], 0.9)),
        ]);
        TableEvaluator { table, label: "table-large" }
    }

    pub fn dual(&self) -> DualSearch {
        DualSearch::new(
            self.root,
            Arc::new(self.small()),
            Arc::new(self.large()),
            SearchConfig::default(),
            SearchConfig::default(),
            ShareWeights::default(),
        )
    }

    pub const BUDGET: BudgetSpec = BudgetSpec { small: 3, large: 3 };
    pub const SEED: u64 = 1;
    /// Slot order drawn by the seeded shuffle, `true` for small.
    pub const SCHEDULE: [bool; 6] = [false, true, true, false, false, true];

    /// The MPV search loop executed by hand with c = 1.5, alpha = 0.5, beta = 0.
    ///
    /// 0. L: `T_L` is empty, so its only unevaluated leaf is the root, which
    ///    `T_S` has never visited: fallback. `f_L(R)` = -0.2.
    /// 1. S: `T_S` is empty; PUCT reaches the root. `f_S(R)` = 0.1.
    /// 2. S: at R, N = 1, both Q = 0. The root is in both trees and beta = 0,
    ///    so priors are `p_L` = (0.2, 0.8): scores (0.3, 1.2), pick B.
    ///    `f_S(B)` = 0.8.
    /// 3. L: frontier A (N_S = 0), B (N_S = 1). Priority picks B.
    ///    `f_L(B)` = 0.9. B's only child enters the frontier.
    /// 4. L: frontier A and B's child, both N_S = 0: fallback PUCT on `T_L`.
    ///    At R, N_L = 2. A: 0 + 1.5 * 0.2 * sqrt 2 / 1 = 0.4243.
    ///    B: -(0.5 * 0.8 + 0.5 * 0.9) + 1.5 * 0.8 * sqrt 2 / 2 = -0.0015.
    ///    Pick A. `f_L(A)` = 0.6.
    /// 5. S: at R, N_S = 2. A is new to `T_S`: 0.4243. B mixes to -0.85 as
    ///    before: -0.0015. Pick A. `f_S(A)` = 0.4.
    pub fn expected_trace(&self) -> String {
        let (r, a, b) = (self.root.key(), self.a.key(), self.b.key());
        [
            format!("0;net=L;leaf={r:016x};mode=fallback;value=-0.2000"),
            format!("1;net=S;leaf={r:016x};mode=puct;value=0.1000"),
            format!("2;net=S;leaf={b:016x};mode=puct;value=0.8000"),
            format!("3;net=L;leaf={b:016x};mode=priority;value=0.9000"),
            format!("4;net=L;leaf={a:016x};mode=fallback;value=0.6000"),
            format!("5;net=S;leaf={a:016x};mode=puct;value=0.4000"),
        ]
        .map(|l| l + "\n")
        .concat()
    }
}
