//! Policy-value evaluation interface, the non-neural reference evaluators,
//! and the normalized compute-cost model.
//!
//! Costs are counted in forward passes of a reference network shape: a pass
//! through a network with `a` times the filters and `b` times the residual
//! blocks of another costs `a^2 * b` times as much. Selection and backup
//! overhead is ignored.

use std::fmt;
use std::ops::{Div, Mul};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::game::{BitIter, Position};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("terminal positions are scored by the rules, not evaluated")]
    Terminal,
    #[error("invalid evaluator output: {0}")]
    InvalidOutput(String),
    #[error("network error: {0}")]
    Network(String),
}

/// Policy over all board points (zero off the legal moves) and a value in
/// [-1, 1] for the player to move.
#[derive(Debug, Clone, PartialEq)]
pub struct PvOutput {
    pub policy: Vec<f32>,
    pub value: f32,
}

impl PvOutput {
    /// Uniform policy over the legal moves of `pos`.
    pub fn uniform(pos: &Position, value: f32) -> PvOutput {
        let mask = pos.legal_mask();
        let mut policy = vec![0.0; pos.points()];
        let n = mask.count_ones();
        if n > 0 {
            let p = 1.0 / n as f32;
            for i in BitIter(mask) {
                policy[i] = p;
            }
        }
        PvOutput { policy, value }
    }

    /// Zeroes illegal entries and rescales the rest to sum to one. Falls back
    /// to uniform if no mass is left on legal moves.
    pub fn renormalize(&mut self, pos: &Position) {
        let mask = pos.legal_mask();
        let mut total = 0.0f64;
        for (i, p) in self.policy.iter_mut().enumerate() {
            if mask >> i & 1 == 0 || !p.is_finite() || *p < 0.0 {
                *p = 0.0;
            }
            total += *p as f64;
        }
        if total <= 0.0 {
            self.policy = PvOutput::uniform(pos, self.value).policy;
            return;
        }
        for p in &mut self.policy {
            *p = (*p as f64 / total) as f32;
        }
    }

    /// Checks the output contract against `pos`.
    pub fn validate(&self, pos: &Position) -> Result<(), EvalError> {
        if self.policy.len() != pos.points() {
            return Err(EvalError::InvalidOutput(format!(
                "policy has {} entries, board has {}",
                self.policy.len(),
                pos.points()
            )));
        }
        if !self.value.is_finite() || self.value.abs() > 1.0 {
            return Err(EvalError::InvalidOutput(format!("value {} outside [-1, 1]", self.value)));
        }
        let mask = pos.legal_mask();
        let mut sum = 0.0f64;
        for (i, &p) in self.policy.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(EvalError::InvalidOutput(format!("policy[{i}] = {p}")));
            }
            if p > 0.0 && mask >> i & 1 == 0 {
                return Err(EvalError::InvalidOutput(format!("mass on illegal point {i}")));
            }
            sum += p as f64;
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(EvalError::InvalidOutput(format!("policy sums to {sum}")));
        }
        Ok(())
    }
}

/// The f(x, y) designation: `filters` channels and `blocks` residual blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NetShape {
    pub filters: u32,
    pub blocks: u32,
}

impl NetShape {
    pub const REFERENCE: NetShape = NetShape { filters: 128, blocks: 10 };

    pub fn new(filters: u32, blocks: u32) -> NetShape {
        assert!(filters >= 1 && blocks >= 1, "network shape needs positive filters and blocks");
        NetShape { filters, blocks }
    }
}

impl fmt::Display for NetShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f({},{})", self.filters, self.blocks)
    }
}

impl std::str::FromStr for NetShape {
    type Err = String;

    /// Accepts `f(64,5)`, `64,5` or `64x5`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let inner = s.trim().trim_start_matches('f').trim_start_matches('(').trim_end_matches(')');
        let (a, b) = inner
            .split_once([',', 'x'])
            .ok_or_else(|| format!("bad network shape {s:?}"))?;
        let filters: u32 = a.trim().parse().map_err(|_| format!("bad network shape {s:?}"))?;
        let blocks: u32 = b.trim().parse().map_err(|_| format!("bad network shape {s:?}"))?;
        if filters == 0 || blocks == 0 {
            return Err(format!("network shape {s:?} must be positive"));
        }
        Ok(NetShape { filters, blocks })
    }
}

/// Compute cost in units of one reference forward pass, kept exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NormalizedCost(pub Ratio<u64>);

impl NormalizedCost {
    pub const ONE: NormalizedCost = NormalizedCost(Ratio::new_raw(1, 1));

    pub fn new(numer: u64, denom: u64) -> NormalizedCost {
        NormalizedCost(Ratio::new(numer, denom))
    }

    pub fn units(self) -> Ratio<u64> {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }
}

impl Mul for NormalizedCost {
    type Output = NormalizedCost;
    fn mul(self, rhs: Self) -> Self {
        NormalizedCost(self.0 * rhs.0)
    }
}

impl Div for NormalizedCost {
    type Output = Ratio<u64>;
    fn div(self, rhs: Self) -> Ratio<u64> {
        self.0 / rhs.0
    }
}

impl fmt::Display for NormalizedCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Cost of one forward pass of `shape` relative to one pass of `reference`.
pub fn cost_of(shape: NetShape, reference: NetShape) -> NormalizedCost {
    let num = shape.filters as u64 * shape.filters as u64 * shape.blocks as u64;
    let den = reference.filters as u64 * reference.filters as u64 * reference.blocks as u64;
    NormalizedCost(Ratio::new(num, den))
}

/// A policy-value evaluator. Implementations are immutable after construction
/// and must be deterministic given their parameters.
pub trait Evaluator: Send + Sync {
    fn evaluate(&self, pos: &Position) -> Result<PvOutput, EvalError>;

    /// Normalized cost of one call to [`Evaluator::evaluate`].
    fn cost(&self) -> NormalizedCost;

    fn name(&self) -> String;
}

impl<E: Evaluator + ?Sized> Evaluator for Arc<E> {
    fn evaluate(&self, pos: &Position) -> Result<PvOutput, EvalError> {
        (**self).evaluate(pos)
    }
    fn cost(&self) -> NormalizedCost {
        (**self).cost()
    }
    fn name(&self) -> String {
        (**self).name()
    }
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn evaluate(&self, pos: &Position) -> Result<PvOutput, EvalError> {
        (**self).evaluate(pos)
    }
    fn cost(&self) -> NormalizedCost {
        (**self).cost()
    }
    fn name(&self) -> String {
        (**self).name()
    }
}

/// splitmix64 finalizer, used to derive per-call RNG seeds.
#[inline]
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform policy, value 0.
#[derive(Debug, Clone)]
pub struct UniformEvaluator {
    pub cost: NormalizedCost,
}

impl Default for UniformEvaluator {
    fn default() -> Self {
        UniformEvaluator { cost: NormalizedCost::ONE }
    }
}

impl Evaluator for UniformEvaluator {
    fn evaluate(&self, pos: &Position) -> Result<PvOutput, EvalError> {
        if pos.is_terminal() {
            return Err(EvalError::Terminal);
        }
        Ok(PvOutput::uniform(pos, 0.0))
    }
    fn cost(&self) -> NormalizedCost {
        self.cost
    }
    fn name(&self) -> String {
        "uniform".into()
    }
}

/// Mobility heuristic: uniform policy and
/// `value = tanh(c * (own legal moves - opponent legal moves))`.
#[derive(Debug, Clone)]
pub struct HeuristicEvaluator {
    pub coefficient: f32,
    pub cost: NormalizedCost,
}

impl Default for HeuristicEvaluator {
    fn default() -> Self {
        HeuristicEvaluator { coefficient: 0.1, cost: NormalizedCost::ONE }
    }
}

impl HeuristicEvaluator {
    pub fn mobility_value(&self, pos: &Position) -> f32 {
        let me = pos.to_play();
        let own = pos.legal_mask_for(me).count_ones() as f32;
        let opp = pos.legal_mask_for(me.opponent()).count_ones() as f32;
        (self.coefficient * (own - opp)).tanh()
    }
}

impl Evaluator for HeuristicEvaluator {
    fn evaluate(&self, pos: &Position) -> Result<PvOutput, EvalError> {
        if pos.is_terminal() {
            return Err(EvalError::Terminal);
        }
        Ok(PvOutput::uniform(pos, self.mobility_value(pos)))
    }
    fn cost(&self) -> NormalizedCost {
        self.cost
    }
    fn name(&self) -> String {
        "heuristic".into()
    }
}

/// Plays `pos` out with uniformly random legal moves and returns the winner's
/// sign from the perspective of `pos.to_play()`.
pub fn random_playout<R: Rng>(pos: &Position, rng: &mut R) -> f32 {
    let root = pos.to_play();
    let mut p = *pos;
    loop {
        let mask = p.legal_mask();
        if mask == 0 {
            return if p.to_play() == root { -1.0 } else { 1.0 };
        }
        let pick = rng.gen_range(0..mask.count_ones() as usize);
        let index = BitIter(mask).nth(pick).expect("pick below popcount");
        p.play_index_unchecked(index);
    }
}

/// Monte Carlo rollout evaluator: uniform policy, value is the mean outcome
/// of `playouts` random games. The RNG is seeded from the evaluator seed and
/// the position key, so repeated calls on a position agree.
#[derive(Debug, Clone)]
pub struct RolloutEvaluator {
    pub playouts: u32,
    pub seed: u64,
    pub cost: NormalizedCost,
}

impl RolloutEvaluator {
    pub fn new(playouts: u32, seed: u64) -> RolloutEvaluator {
        assert!(playouts >= 1);
        RolloutEvaluator { playouts, seed, cost: NormalizedCost::ONE }
    }
}

/// Free-function form of the rollout evaluator.
pub fn rollout_evaluate(pos: &Position, playouts: u32, seed: u64) -> Result<PvOutput, EvalError> {
    RolloutEvaluator::new(playouts, seed).evaluate(pos)
}

impl Evaluator for RolloutEvaluator {
    fn evaluate(&self, pos: &Position) -> Result<PvOutput, EvalError> {
        if pos.is_terminal() {
            return Err(EvalError::Terminal);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, pos.key()));
        let total: f32 = (0..self.playouts).map(|_| random_playout(pos, &mut rng)).sum();
        Ok(PvOutput::uniform(pos, total / self.playouts as f32))
    }
    fn cost(&self) -> NormalizedCost {
        self.cost
    }
    fn name(&self) -> String {
        format!("rollout({})", self.playouts)
    }
}

/// Adds seeded Gaussian noise to another evaluator's value and clamps it back
/// into [-1, 1]. The noise for a position depends only on the seed and the
/// position key, so the wrapper is a fixed (if less accurate) function.
pub struct NoisyEvaluator {
    inner: Arc<dyn Evaluator>,
    sigma: f32,
    seed: u64,
    cost: NormalizedCost,
}

impl NoisyEvaluator {
    pub fn new(inner: Arc<dyn Evaluator>, sigma: f32, seed: u64, cost: NormalizedCost) -> Self {
        assert!(sigma >= 0.0 && sigma.is_finite());
        NoisyEvaluator { inner, sigma, seed, cost }
    }
}

impl Evaluator for NoisyEvaluator {
    fn evaluate(&self, pos: &Position) -> Result<PvOutput, EvalError> {
        let mut out = self.inner.evaluate(pos)?;
        if self.sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, pos.key()));
            let noise: f32 = Normal::new(0.0, self.sigma).expect("finite sigma").sample(&mut rng);
            out.value = (out.value + noise).clamp(-1.0, 1.0);
        }
        Ok(out)
    }
    fn cost(&self) -> NormalizedCost {
        self.cost
    }
    fn name(&self) -> String {
        format!("noisy({}, sigma={})", self.inner.name(), self.sigma)
    }
}

/// Counts forward passes through the wrapped evaluator.
pub struct CountingEvaluator {
    inner: Arc<dyn Evaluator>,
    calls: AtomicU64,
}

impl CountingEvaluator {
    pub fn new(inner: Arc<dyn Evaluator>) -> CountingEvaluator {
        CountingEvaluator { inner, calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl Evaluator for CountingEvaluator {
    fn evaluate(&self, pos: &Position) -> Result<PvOutput, EvalError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.evaluate(pos)
    }
    fn cost(&self) -> NormalizedCost {
        self.inner.cost()
    }
    fn name(&self) -> String {
        self.inner.name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{Color, Move};

    #[test]
    fn cost_model_matches_scaling_rule() {
        assert_eq!(cost_of(NetShape::new(64, 5), NetShape::REFERENCE), NormalizedCost::new(1, 8));
        assert_eq!(cost_of(NetShape::REFERENCE, NetShape::REFERENCE), NormalizedCost::ONE);
        assert_eq!(cost_of(NetShape::new(256, 20), NetShape::REFERENCE), NormalizedCost::new(8, 1));
        assert_eq!(cost_of(NetShape::new(16, 1), NetShape::new(32, 2)), NormalizedCost::new(1, 8));
    }

    #[test]
    fn heuristic_on_empty_board_is_uniform_and_neutral() {
        let p = Position::new(9).unwrap();
        let out = HeuristicEvaluator::default().evaluate(&p).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.policy.iter().all(|&x| (x - 1.0 / 81.0).abs() < 1e-7));
        out.validate(&p).unwrap();
    }

    #[test]
    fn heuristic_value_tracks_mobility() {
        let p = Position::from_diagram(&["X..", "...", "..."], Color::White).unwrap();
        let h = HeuristicEvaluator::default();
        let own = p.legal_mask_for(Color::White).count_ones() as f32;
        let opp = p.legal_mask_for(Color::Black).count_ones() as f32;
        assert_eq!(h.mobility_value(&p), (0.1 * (own - opp)).tanh());
    }

    #[test]
    fn terminal_positions_are_rejected() {
        let p = Position::from_stones(2, &[Move::new(0, 0), Move::new(0, 1), Move::new(1, 0)], &[], Color::White)
            .unwrap();
        assert_eq!(UniformEvaluator::default().evaluate(&p), Err(EvalError::Terminal));
        assert_eq!(RolloutEvaluator::new(4, 1).evaluate(&p), Err(EvalError::Terminal));
    }

    #[test]
    fn single_playout_is_a_sign() {
        let p = Position::new(5).unwrap();
        for seed in 0..20 {
            let v = rollout_evaluate(&p, 1, seed).unwrap().value;
            assert!(v == 1.0 || v == -1.0);
        }
    }

    #[test]
    fn rollout_is_deterministic_per_seed() {
        let p = Position::new(5).unwrap().play(Move::new(2, 2)).unwrap();
        let a = rollout_evaluate(&p, 64, 7).unwrap();
        let b = rollout_evaluate(&p, 64, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.value.abs() <= 1.0);
        a.validate(&p).unwrap();
    }

    #[test]
    fn renormalize_drops_illegal_mass() {
        let p = Position::new(3).unwrap().play(Move::new(1, 1)).unwrap();
        let mut out = PvOutput { policy: vec![1.0; 9], value: 0.0 };
        out.renormalize(&p);
        assert_eq!(out.policy[4], 0.0);
        out.validate(&p).unwrap();
    }

    #[test]
    fn noisy_wrapper_is_fixed_per_position_and_clamped() {
        let base: Arc<dyn Evaluator> = Arc::new(HeuristicEvaluator::default());
        let noisy = NoisyEvaluator::new(base, 5.0, 3, NormalizedCost::new(1, 8));
        let p = Position::new(5).unwrap();
        let a = noisy.evaluate(&p).unwrap();
        assert_eq!(a, noisy.evaluate(&p).unwrap());
        assert!(a.value.abs() <= 1.0);
        assert_eq!(noisy.cost(), NormalizedCost::new(1, 8));
    }

    #[test]
    fn counting_wrapper_counts() {
        let c = CountingEvaluator::new(Arc::new(UniformEvaluator::default()));
        let p = Position::new(4).unwrap();
        for _ in 0..3 {
            c.evaluate(&p).unwrap();
        }
        assert_eq!(c.calls(), 3);
    }
}
