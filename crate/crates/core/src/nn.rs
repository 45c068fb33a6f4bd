//! Residual policy-value network f(x, y) with hand-written backpropagation.
//!
//! Architecture (per sample, activations stored channel-major `[C][points]`):
//!
//! ```text
//! input 4 planes -> conv3x3(4 -> x) + bias -> relu
//! y times:  conv3x3(x -> x) + bias -> relu -> conv3x3(x -> x) + bias -> (+ skip) -> relu
//! policy:   conv1x1(x -> 2) + bias -> relu -> linear(2*points -> points) -> masked softmax
//! value:    conv1x1(x -> 1) + bias -> relu -> linear(points -> hidden) -> relu
//!           -> linear(hidden -> 1) -> tanh
//! ```
//!
//! Batch normalization is replaced by per-channel biases. The policy has one
//! logit per point; illegal points get exactly zero probability.

use std::fmt::Debug;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use ndarray::{Array2, ArrayView2, LinalgScalar};
use num_traits::{Float, FromPrimitive};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::evaluator::{EvalError, Evaluator, NetShape, NormalizedCost, PvOutput};
use crate::game::{FeaturePlanes, Position, MAX_SIZE};

pub const MODEL_MAGIC: &[u8; 4] = b"MPVN";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("bad model file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Floating-point type the network can run in.
pub trait Scalar:
    Float
    + LinalgScalar
    + FromPrimitive
    + Debug
    + Default
    + Send
    + Sync
    + std::iter::Sum
    + std::ops::AddAssign
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
fn cast<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("finite cast")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkConfig {
    pub board_size: usize,
    pub filters: usize,
    pub blocks: usize,
    pub l2: f64,
    pub value_hidden: usize,
}

impl NetworkConfig {
    pub fn new(board_size: usize, shape: NetShape) -> NetworkConfig {
        NetworkConfig {
            board_size,
            filters: shape.filters as usize,
            blocks: shape.blocks as usize,
            l2: 1e-4,
            value_hidden: 32,
        }
    }

    pub fn shape(&self) -> NetShape {
        NetShape::new(self.filters as u32, self.blocks as u32)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.board_size == 0 || self.board_size > MAX_SIZE {
            return Err(NnError::Config(format!("board size {}", self.board_size)));
        }
        if self.filters < 4 || self.blocks < 1 || self.value_hidden < 1 {
            return Err(NnError::Config(format!(
                "filters {} (>= 4), blocks {} (>= 1), value_hidden {} (>= 1)",
                self.filters, self.blocks, self.value_hidden
            )));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(NnError::Config(format!("l2 coefficient {}", self.l2)));
        }
        Ok(())
    }

    fn points(&self) -> usize {
        self.board_size * self.board_size
    }

    /// Names and shapes of every tensor, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (x, p, h) = (self.filters, self.points(), self.value_hidden);
        let mut v = vec![
            ("input.weight".to_string(), vec![x, 4 * 9]),
            ("input.bias".to_string(), vec![x]),
        ];
        for b in 0..self.blocks {
            v.push((format!("block{b}.conv1.weight"), vec![x, x * 9]));
            v.push((format!("block{b}.conv1.bias"), vec![x]));
            v.push((format!("block{b}.conv2.weight"), vec![x, x * 9]));
            v.push((format!("block{b}.conv2.bias"), vec![x]));
        }
        v.extend([
            ("policy.conv.weight".to_string(), vec![2, x]),
            ("policy.conv.bias".to_string(), vec![2]),
            ("policy.fc.weight".to_string(), vec![p, 2 * p]),
            ("policy.fc.bias".to_string(), vec![p]),
            ("value.conv.weight".to_string(), vec![1, x]),
            ("value.conv.bias".to_string(), vec![1]),
            ("value.fc1.weight".to_string(), vec![h, p]),
            ("value.fc1.bias".to_string(), vec![h]),
            ("value.fc2.weight".to_string(), vec![1, h]),
            ("value.fc2.bias".to_string(), vec![1]),
        ]);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    fn matrix(&self) -> ArrayView2<'_, T> {
        let (r, c) = match self.shape.as_slice() {
            [r, c] => (*r, *c),
            [n] => (*n, 1),
            _ => unreachable!("tensors are rank 1 or 2"),
        };
        ArrayView2::from_shape((r, c), &self.data).expect("tensor shape")
    }
}

/// Network weights as an ordered list of named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    pub config: NetworkConfig,
    pub tensors: Vec<Tensor<T>>,
}

/// Gradients share the parameter layout.
pub type Gradients<T> = Parameters<T>;

// Tensor indices.
const INPUT_W: usize = 0;
const INPUT_B: usize = 1;

#[inline]
fn block_index(b: usize) -> usize {
    2 + 4 * b
}

struct HeadIdx {
    pconv_w: usize,
    pconv_b: usize,
    pfc_w: usize,
    pfc_b: usize,
    vconv_w: usize,
    vconv_b: usize,
    vfc1_w: usize,
    vfc1_b: usize,
    vfc2_w: usize,
    vfc2_b: usize,
}

fn heads(config: &NetworkConfig) -> HeadIdx {
    let s = 2 + 4 * config.blocks;
    HeadIdx {
        pconv_w: s,
        pconv_b: s + 1,
        pfc_w: s + 2,
        pfc_b: s + 3,
        vconv_w: s + 4,
        vconv_b: s + 5,
        vfc1_w: s + 6,
        vfc1_b: s + 7,
        vfc2_w: s + 8,
        vfc2_b: s + 9,
    }
}

impl<T: Scalar> Parameters<T> {
    pub fn zeros(config: NetworkConfig) -> Result<Parameters<T>, NnError> {
        config.validate()?;
        let tensors = config
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                let n = shape.iter().product();
                Tensor { name, shape, data: vec![T::zero(); n] }
            })
            .collect();
        Ok(Parameters { config, tensors })
    }

    /// He-scaled Gaussian weights, zero biases.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Parameters<T>, NnError> {
        let mut params = Parameters::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in &mut params.tensors {
            if t.shape.len() == 2 {
                let fan_in = t.shape[1] as f64;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
                for w in &mut t.data {
                    *w = cast(normal.sample(&mut rng));
                }
            }
        }
        Ok(params)
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        Parameters {
            config: self.config,
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|&v| cast(v.to_f64().expect("finite"))).collect(),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn squared_norm(&self) -> T {
        self.tensors.iter().flat_map(|t| t.data.iter()).map(|&v| v * v).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flat_map(|t| t.data.iter()).all(|v| v.is_finite())
    }

    /// Order-sensitive checksum of the raw values.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for v in self.tensors.iter().flat_map(|t| t.data.iter()) {
            h ^= v.to_f64().unwrap_or(f64::NAN).to_bits();
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    fn same_layout(&self, other: &Parameters<T>) -> bool {
        self.config == other.config
            && self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.shape == b.shape)
    }

    /// Flat mutable access across all tensors, by global index.
    pub fn get_flat(&self, mut i: usize) -> T {
        for t in &self.tensors {
            if i < t.data.len() {
                return t.data[i];
            }
            i -= t.data.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set_flat(&mut self, mut i: usize, v: T) {
        for t in &mut self.tensors {
            if i < t.data.len() {
                t.data[i] = v;
                return;
            }
            i -= t.data.len();
        }
        panic!("parameter index out of range")
    }
}

/// For each point and 3x3 offset, the source point (or none off-board).
fn neighborhood(size: usize) -> &'static [[Option<u8>; 9]] {
    static TABLES: OnceLock<Vec<Vec<[Option<u8>; 9]>>> = OnceLock::new();
    let all = TABLES.get_or_init(|| {
        (0..=MAX_SIZE)
            .map(|n| {
                (0..n * n)
                    .map(|p| {
                        let (r, c) = ((p / n) as isize, (p % n) as isize);
                        let mut out = [None; 9];
                        for (k, slot) in out.iter_mut().enumerate() {
                            let (rr, cc) = (r + k as isize / 3 - 1, c + k as isize % 3 - 1);
                            if rr >= 0 && cc >= 0 && (rr as usize) < n && (cc as usize) < n {
                                *slot = Some((rr as usize * n + cc as usize) as u8);
                            }
                        }
                        out
                    })
                    .collect()
            })
            .collect()
    });
    &all[size]
}

fn im2col<T: Scalar>(input: &Array2<T>, size: usize) -> Array2<T> {
    let (channels, points) = input.dim();
    let nb = neighborhood(size);
    let mut cols = Array2::<T>::zeros((channels * 9, points));
    for ci in 0..channels {
        let row_in = input.row(ci);
        for k in 0..9 {
            let mut row = cols.row_mut(ci * 9 + k);
            for p in 0..points {
                if let Some(src) = nb[p][k] {
                    row[p] = row_in[src as usize];
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &Array2<T>, channels: usize, size: usize) -> Array2<T> {
    let points = size * size;
    let nb = neighborhood(size);
    let mut out = Array2::<T>::zeros((channels, points));
    for ci in 0..channels {
        for k in 0..9 {
            let row = cols.row(ci * 9 + k);
            for p in 0..points {
                if let Some(src) = nb[p][k] {
                    out[[ci, src as usize]] += row[p];
                }
            }
        }
    }
    out
}

fn add_bias<T: Scalar>(m: &mut Array2<T>, bias: &[T]) {
    for (mut row, &b) in m.rows_mut().into_iter().zip(bias) {
        row.mapv_inplace(|v| v + b);
    }
}

fn relu_inplace<T: Scalar>(m: &mut Array2<T>) {
    m.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// Multiplies `grad` by the derivative of relu given the relu output.
fn relu_backward<T: Scalar>(grad: &mut Array2<T>, output: &Array2<T>) {
    grad.zip_mut_with(output, |g, &o| {
        if o <= T::zero() {
            *g = T::zero();
        }
    });
}

fn accumulate<T: Scalar>(dst: &mut [T], src: impl IntoIterator<Item = T>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn row_sums<T: Scalar>(m: &Array2<T>) -> Vec<T> {
    m.rows().into_iter().map(|r| r.iter().copied().sum()).collect()
}

struct BlockCache<T> {
    cols1: Array2<T>,
    h1: Array2<T>,
    cols2: Array2<T>,
    out: Array2<T>,
}

struct ForwardCache<T> {
    cols0: Array2<T>,
    a0: Array2<T>,
    blocks: Vec<BlockCache<T>>,
    pconv: Array2<T>,
    vconv: Array2<T>,
    vhidden: Array2<T>,
}

/// Network output for one position.
#[derive(Debug, Clone, PartialEq)]
pub struct NetOutput<T> {
    /// Masked softmax over points; exactly zero on illegal points.
    pub policy: Vec<T>,
    pub logits: Vec<T>,
    pub value: T,
}

fn masked_softmax<T: Scalar>(logits: &[T], legal: &[bool]) -> Vec<T> {
    let max = logits
        .iter()
        .zip(legal)
        .filter(|(_, &l)| l)
        .map(|(&v, _)| v)
        .fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = logits
        .iter()
        .zip(legal)
        .map(|(&v, &l)| if l { (v - max).exp() } else { T::zero() })
        .collect();
    let total: T = out.iter().copied().sum();
    if total > T::zero() {
        for v in &mut out {
            *v = *v / total;
        }
    }
    out
}

fn check_features<T: Scalar>(params: &Parameters<T>, f: &FeaturePlanes) -> Result<(), NnError> {
    let n = params.config.board_size;
    if f.size != n || f.data.len() != 4 * n * n {
        return Err(NnError::Shape(format!(
            "features for a {}x{} board given to a {}x{} network",
            f.size, f.size, n, n
        )));
    }
    Ok(())
}

fn forward_cached<T: Scalar>(params: &Parameters<T>, features: &FeaturePlanes) -> (NetOutput<T>, ForwardCache<T>) {
    let cfg = &params.config;
    let (size, points) = (cfg.board_size, cfg.points());
    let t = &params.tensors;
    let hi = heads(cfg);

    let input = Array2::from_shape_vec((4, points), features.data.iter().map(|&v| cast::<T>(v as f64)).collect())
        .expect("feature shape");
    let cols0 = im2col(&input, size);
    let mut a0 = t[INPUT_W].matrix().dot(&cols0);
    add_bias(&mut a0, &t[INPUT_B].data);
    relu_inplace(&mut a0);

    let mut blocks = Vec::with_capacity(cfg.blocks);
    let mut a = a0.clone();
    for b in 0..cfg.blocks {
        let i = block_index(b);
        let cols1 = im2col(&a, size);
        let mut h1 = t[i].matrix().dot(&cols1);
        add_bias(&mut h1, &t[i + 1].data);
        relu_inplace(&mut h1);
        let cols2 = im2col(&h1, size);
        let mut out = t[i + 2].matrix().dot(&cols2);
        add_bias(&mut out, &t[i + 3].data);
        out += &a;
        relu_inplace(&mut out);
        a = out.clone();
        blocks.push(BlockCache { cols1, h1, cols2, out });
    }

    let mut pconv = t[hi.pconv_w].matrix().dot(&a);
    add_bias(&mut pconv, &t[hi.pconv_b].data);
    relu_inplace(&mut pconv);
    let flat = pconv.view().into_shape((2 * points, 1)).expect("contiguous");
    let mut logits = t[hi.pfc_w].matrix().dot(&flat);
    add_bias(&mut logits, &t[hi.pfc_b].data);
    let logits: Vec<T> = logits.into_raw_vec();
    let legal: Vec<bool> = features.legal().collect();
    let policy = masked_softmax(&logits, &legal);

    let mut vconv = t[hi.vconv_w].matrix().dot(&a);
    add_bias(&mut vconv, &t[hi.vconv_b].data);
    relu_inplace(&mut vconv);
    let vflat = vconv.view().into_shape((points, 1)).expect("contiguous");
    let mut vhidden = t[hi.vfc1_w].matrix().dot(&vflat);
    add_bias(&mut vhidden, &t[hi.vfc1_b].data);
    relu_inplace(&mut vhidden);
    let vo = t[hi.vfc2_w].matrix().dot(&vhidden)[[0, 0]] + t[hi.vfc2_b].data[0];
    let value = vo.tanh();

    (
        NetOutput { policy, logits, value },
        ForwardCache { cols0, a0, blocks, pconv, vconv, vhidden },
    )
}

pub fn forward<T: Scalar>(params: &Parameters<T>, features: &FeaturePlanes) -> Result<NetOutput<T>, NnError> {
    check_features(params, features)?;
    Ok(forward_cached(params, features).0)
}

/// A batch of training targets. `values` are the game outcomes z in {-1, +1}.
#[derive(Debug, Clone, Default)]
pub struct TrainingBatch {
    pub states: Vec<FeaturePlanes>,
    pub policies: Vec<Vec<f32>>,
    pub values: Vec<f32>,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn push(&mut self, state: FeaturePlanes, policy: Vec<f32>, value: f32) {
        self.states.push(state);
        self.policies.push(policy);
        self.values.push(value);
    }
}

/// Per-sample loss `(z - v)^2 - sum(pi * log p)` without the L2 term.
pub fn sample_loss<T: Scalar>(policy: &[T], value: T, target_policy: &[f32], target_value: f32) -> T {
    let z: T = cast(target_value as f64);
    let mut ce = T::zero();
    for (&p, &pi) in policy.iter().zip(target_policy) {
        if pi > 0.0 {
            ce = ce - cast::<T>(pi as f64) * p.ln();
        }
    }
    (z - value) * (z - value) + ce
}

fn check_batch<T: Scalar>(params: &Parameters<T>, batch: &TrainingBatch) -> Result<(), NnError> {
    if batch.is_empty() || batch.policies.len() != batch.len() || batch.values.len() != batch.len() {
        return Err(NnError::Shape("empty or ragged batch".into()));
    }
    let points = params.config.points();
    for (s, p) in batch.states.iter().zip(&batch.policies) {
        check_features(params, s)?;
        if p.len() != points {
            return Err(NnError::Shape(format!("target policy has {} entries, expected {points}", p.len())));
        }
    }
    Ok(())
}

/// Mean sample loss over the batch plus `l2 * ||theta||^2`.
pub fn loss<T: Scalar>(params: &Parameters<T>, batch: &TrainingBatch) -> Result<T, NnError> {
    check_batch(params, batch)?;
    let mut total = T::zero();
    for i in 0..batch.len() {
        let (out, _) = forward_cached(params, &batch.states[i]);
        total += sample_loss(&out.policy, out.value, &batch.policies[i], batch.values[i]);
    }
    let n: T = cast(batch.len() as f64);
    Ok(total / n + cast::<T>(params.config.l2) * params.squared_norm())
}

/// Exact gradient of [`loss`] together with the loss value.
pub fn loss_and_gradients<T: Scalar>(
    params: &Parameters<T>,
    batch: &TrainingBatch,
) -> Result<(T, Gradients<T>), NnError> {
    check_batch(params, batch)?;
    let cfg = params.config;
    let (size, points, x) = (cfg.board_size, cfg.points(), cfg.filters);
    let t = &params.tensors;
    let hi = heads(&cfg);
    let mut grads = Parameters::<T>::zeros(cfg)?;
    let scale: T = cast(1.0 / batch.len() as f64);
    let mut total = T::zero();

    for s in 0..batch.len() {
        let (out, cache) = forward_cached(params, &batch.states[s]);
        let target = &batch.policies[s];
        let z: T = cast(batch.values[s] as f64);
        total += sample_loss(&out.policy, out.value, target, batch.values[s]);

        // Policy head.
        let pi_sum: T = target.iter().map(|&v| cast::<T>(v as f64)).sum();
        let legal: Vec<bool> = batch.states[s].legal().collect();
        let dlogits: Vec<T> = (0..points)
            .map(|i| {
                if legal[i] {
                    (out.policy[i] * pi_sum - cast::<T>(target[i] as f64)) * scale
                } else {
                    T::zero()
                }
            })
            .collect();
        let dlogits_m = Array2::from_shape_vec((points, 1), dlogits.clone()).expect("shape");
        let flat = cache.pconv.view().into_shape((1, 2 * points)).expect("contiguous");
        accumulate(&mut grads.tensors[hi.pfc_w].data, dlogits_m.dot(&flat));
        accumulate(&mut grads.tensors[hi.pfc_b].data, dlogits);
        let dflat = t[hi.pfc_w].matrix().t().dot(&dlogits_m);
        let mut dpconv = dflat.into_shape((2, points)).expect("contiguous");
        relu_backward(&mut dpconv, &cache.pconv);
        let a_final = cache.blocks.last().map(|b| &b.out).unwrap_or(&cache.a0);
        accumulate(&mut grads.tensors[hi.pconv_w].data, dpconv.dot(&a_final.t()));
        accumulate(&mut grads.tensors[hi.pconv_b].data, row_sums(&dpconv));
        let mut da = t[hi.pconv_w].matrix().t().dot(&dpconv);

        // Value head.
        let dvo = cast::<T>(2.0) * (out.value - z) * (T::one() - out.value * out.value) * scale;
        let dvo_m = Array2::from_elem((1, 1), dvo);
        accumulate(&mut grads.tensors[hi.vfc2_w].data, dvo_m.dot(&cache.vhidden.t()));
        grads.tensors[hi.vfc2_b].data[0] += dvo;
        let mut dvh = t[hi.vfc2_w].matrix().t().dot(&dvo_m);
        relu_backward(&mut dvh, &cache.vhidden);
        let vflat = cache.vconv.view().into_shape((1, points)).expect("contiguous");
        accumulate(&mut grads.tensors[hi.vfc1_w].data, dvh.dot(&vflat));
        accumulate(&mut grads.tensors[hi.vfc1_b].data, dvh.iter().copied());
        let dvflat = t[hi.vfc1_w].matrix().t().dot(&dvh);
        let mut dvconv = dvflat.into_shape((1, points)).expect("contiguous");
        relu_backward(&mut dvconv, &cache.vconv);
        accumulate(&mut grads.tensors[hi.vconv_w].data, dvconv.dot(&a_final.t()));
        accumulate(&mut grads.tensors[hi.vconv_b].data, row_sums(&dvconv));
        da += &t[hi.vconv_w].matrix().t().dot(&dvconv);

        // Residual tower, last block first.
        for b in (0..cfg.blocks).rev() {
            let i = block_index(b);
            let bc = &cache.blocks[b];
            relu_backward(&mut da, &bc.out);
            accumulate(&mut grads.tensors[i + 2].data, da.dot(&bc.cols2.t()));
            accumulate(&mut grads.tensors[i + 3].data, row_sums(&da));
            let dcols2 = t[i + 2].matrix().t().dot(&da);
            let mut dh1 = col2im(&dcols2, x, size);
            relu_backward(&mut dh1, &bc.h1);
            accumulate(&mut grads.tensors[i].data, dh1.dot(&bc.cols1.t()));
            accumulate(&mut grads.tensors[i + 1].data, row_sums(&dh1));
            let dcols1 = t[i].matrix().t().dot(&dh1);
            da += &col2im(&dcols1, x, size);
        }

        relu_backward(&mut da, &cache.a0);
        accumulate(&mut grads.tensors[INPUT_W].data, da.dot(&cache.cols0.t()));
        accumulate(&mut grads.tensors[INPUT_B].data, row_sums(&da));
    }

    let l2: T = cast(cfg.l2);
    if l2 > T::zero() {
        for (g, p) in grads.tensors.iter_mut().zip(&params.tensors) {
            accumulate(&mut g.data, p.data.iter().map(|&v| cast::<T>(2.0) * l2 * v));
        }
    }
    let loss = total * scale + l2 * params.squared_norm();
    Ok((loss, grads))
}

pub fn backward<T: Scalar>(params: &Parameters<T>, batch: &TrainingBatch) -> Result<Gradients<T>, NnError> {
    loss_and_gradients(params, batch).map(|(_, g)| g)
}

fn check_grads<T: Scalar>(params: &Parameters<T>, grads: &Gradients<T>) -> Result<(), NnError> {
    if !params.same_layout(grads) {
        return Err(NnError::Shape("gradient layout differs from parameters".into()));
    }
    for g in &grads.tensors {
        if g.data.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteGradient(g.name.clone()));
        }
    }
    Ok(())
}

/// Plain gradient step `theta - lr * grad`.
pub fn sgd_step<T: Scalar>(
    params: &Parameters<T>,
    grads: &Gradients<T>,
    learning_rate: T,
) -> Result<Parameters<T>, NnError> {
    check_grads(params, grads)?;
    let mut next = params.clone();
    for (p, g) in next.tensors.iter_mut().zip(&grads.tensors) {
        for (w, &d) in p.data.iter_mut().zip(&g.data) {
            *w = *w - learning_rate * d;
        }
    }
    Ok(next)
}

/// SGD with momentum and step-decay learning rate.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Step counts at which the rate is multiplied by `decay`.
    pub milestones: Vec<u64>,
    pub decay: f64,
    pub steps: u64,
    velocity: Option<Parameters<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(learning_rate: f64, momentum: f64, milestones: Vec<u64>) -> Sgd<T> {
        Sgd { learning_rate, momentum, milestones, decay: 0.1, steps: 0, velocity: None }
    }

    /// Momentum buffer, once the first step has been taken.
    pub fn velocity(&self) -> Option<&Parameters<T>> {
        self.velocity.as_ref()
    }

    pub fn set_velocity(&mut self, velocity: Option<Parameters<T>>) {
        self.velocity = velocity;
    }

    pub fn current_rate(&self) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| self.steps >= m).count();
        self.learning_rate * self.decay.powi(passed as i32)
    }

    pub fn step(&mut self, params: &mut Parameters<T>, grads: &Gradients<T>) -> Result<(), NnError> {
        check_grads(params, grads)?;
        let lr: T = cast(self.current_rate());
        let mu: T = cast(self.momentum);
        let velocity = self.velocity.get_or_insert_with(|| Parameters::zeros(params.config).expect("valid config"));
        for ((p, g), v) in params.tensors.iter_mut().zip(&grads.tensors).zip(&mut velocity.tensors) {
            for ((w, &d), m) in p.data.iter_mut().zip(&g.data).zip(v.data.iter_mut()) {
                *m = mu * *m + d;
                *w = *w - lr * *m;
            }
        }
        self.steps += 1;
        Ok(())
    }
}

/// Writes `MPVN`, version, config as u32s (l2 as its f32 bit pattern), then
/// every tensor as little-endian f32 in layout order.
pub fn save_params<T: Scalar>(params: &Parameters<T>, path: &Path) -> Result<(), NnError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_params(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_params<T: Scalar, W: Write>(params: &Parameters<T>, w: &mut W) -> Result<(), NnError> {
    let c = &params.config;
    w.write_all(MODEL_MAGIC)?;
    for v in [
        MODEL_VERSION,
        c.board_size as u32,
        c.filters as u32,
        c.blocks as u32,
        c.value_hidden as u32,
        (c.l2 as f32).to_bits(),
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for t in &params.tensors {
        for v in &t.data {
            let f = v.to_f32().expect("finite");
            w.write_all(&f.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_params(path: &Path) -> Result<Parameters<f32>, NnError> {
    read_params(&mut BufReader::new(File::open(path)?))
}

/// Loads and checks that the file matches `expected`.
pub fn load_params_for(path: &Path, expected: &NetworkConfig) -> Result<Parameters<f32>, NnError> {
    let p = load_params(path)?;
    let c = &p.config;
    if (c.board_size, c.filters, c.blocks, c.value_hidden)
        != (expected.board_size, expected.filters, expected.blocks, expected.value_hidden)
    {
        return Err(NnError::Shape(format!(
            "file holds board {} f({},{}) hidden {}, expected board {} f({},{}) hidden {}",
            c.board_size,
            c.filters,
            c.blocks,
            c.value_hidden,
            expected.board_size,
            expected.filters,
            expected.blocks,
            expected.value_hidden
        )));
    }
    Ok(p)
}

pub fn read_params<R: Read>(r: &mut R) -> Result<Parameters<f32>, NnError> {
    let truncated = |e: std::io::Error| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            NnError::Format("file is truncated".into())
        } else {
            NnError::Io(e)
        }
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MODEL_MAGIC {
        return Err(NnError::Format(format!("bad magic {magic:?}")));
    }
    let mut header = [0u32; 6];
    for h in &mut header {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(truncated)?;
        *h = u32::from_le_bytes(b);
    }
    if header[0] != MODEL_VERSION {
        return Err(NnError::Format(format!("unsupported version {}", header[0])));
    }
    let config = NetworkConfig {
        board_size: header[1] as usize,
        filters: header[2] as usize,
        blocks: header[3] as usize,
        value_hidden: header[4] as usize,
        l2: f32::from_bits(header[5]) as f64,
    };
    config.validate().map_err(|e| NnError::Format(e.to_string()))?;
    let mut params = Parameters::<f32>::zeros(config)?;
    let mut buf = [0u8; 4];
    for t in &mut params.tensors {
        for v in &mut t.data {
            r.read_exact(&mut buf).map_err(truncated)?;
            *v = f32::from_le_bytes(buf);
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(NnError::Format("trailing bytes after last tensor".into()));
    }
    if !params.all_finite() {
        return Err(NnError::Format("non-finite weights".into()));
    }
    Ok(params)
}

/// Evaluator backed by an immutable parameter snapshot.
pub struct NetEvaluator {
    params: Arc<Parameters<f32>>,
    cost: NormalizedCost,
}

impl NetEvaluator {
    pub fn new(params: Arc<Parameters<f32>>, cost: NormalizedCost) -> NetEvaluator {
        NetEvaluator { params, cost }
    }

    pub fn params(&self) -> &Arc<Parameters<f32>> {
        &self.params
    }
}

impl Evaluator for NetEvaluator {
    fn evaluate(&self, pos: &Position) -> Result<PvOutput, EvalError> {
        if pos.is_terminal() {
            return Err(EvalError::Terminal);
        }
        let out = forward(&self.params, &pos.encode_features()).map_err(|e| EvalError::Network(e.to_string()))?;
        Ok(PvOutput { policy: out.policy, value: out.value })
    }
    fn cost(&self) -> NormalizedCost {
        self.cost
    }
    fn name(&self) -> String {
        format!("net{}", self.params.config.shape())
    }
}
