//! Skip-gram with negative sampling over walk corpora.
//!
//! For every walk position `i` and every context position `j` within the
//! window, one stochastic step ascends
//! `log σ(e_i · c_j) + Σ_k log σ(-e_i · c_{n_k})`, where the negatives
//! `n_k` follow the corpus unigram distribution raised to the 0.75 power.
//! Parameters live in relaxed atomics so the same step code serves the
//! single-worker deterministic mode and the lock-free parallel mode.

use std::sync::atomic::{AtomicU32, Ordering};

use num_traits::Float;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;

use super::{EmbeddingMatrix, TrainingMode, WalkConfig};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

const UNIGRAM_POWER: f64 = 0.75;
const MIN_LR_FRACTION: f64 = 1e-4;
const FAST_CHUNK_WALKS: usize = 64;

/// `log σ(s)` for a positive pair or `log σ(-s)` for a negative one,
/// together with its derivative with respect to `s`.
pub fn logistic_term<F: Float>(score: F, positive: bool) -> (F, F) {
    let one = F::one();
    let s = if positive { score } else { -score };
    // log σ(s) = -softplus(-s)
    let objective = if s > F::zero() {
        -(-s).exp().ln_1p()
    } else {
        s - s.exp().ln_1p()
    };
    let sig = one / (one + (-s).exp());
    let slope = one - sig;
    (objective, if positive { slope } else { -slope })
}

fn dot<F: Float>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Per-pair objective, evaluated directly from its definition.
pub fn pair_objective<F: Float>(input: &[F], positive: &[F], negatives: &[&[F]]) -> F {
    let log_sigmoid = |s: F| -(F::one() + (-s).exp()).ln();
    negatives
        .iter()
        .fold(log_sigmoid(dot(input, positive)), |acc, n| acc + log_sigmoid(-dot(input, n)))
}

/// Analytic gradient of the per-pair objective.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradient<F> {
    pub objective: F,
    pub input: Vec<F>,
    pub positive: Vec<F>,
    pub negatives: Vec<Vec<F>>,
}

pub fn pair_gradient<F: Float>(input: &[F], positive: &[F], negatives: &[&[F]]) -> PairGradient<F> {
    let mut grad = PairGradient {
        objective: F::zero(),
        input: vec![F::zero(); input.len()],
        positive: Vec::new(),
        negatives: Vec::with_capacity(negatives.len()),
    };
    let targets = std::iter::once((positive, true)).chain(negatives.iter().map(|n| (*n, false)));
    for (ctx, label) in targets {
        let (obj, slope) = logistic_term(dot(input, ctx), label);
        grad.objective = grad.objective + obj;
        for (g, &c) in grad.input.iter_mut().zip(ctx) {
            *g = *g + slope * c;
        }
        let ctx_grad = input.iter().map(|&e| slope * e).collect();
        if label {
            grad.positive = ctx_grad;
        } else {
            grad.negatives.push(ctx_grad);
        }
    }
    grad
}

struct SharedMatrix {
    dims: usize,
    cells: Vec<AtomicU32>,
}

impl SharedMatrix {
    fn from_values(values: &[f32], dims: usize) -> Self {
        SharedMatrix {
            dims,
            cells: values.iter().map(|v| AtomicU32::new(v.to_bits())).collect(),
        }
    }

    fn read(&self, row: usize, out: &mut [f32]) {
        let cells = &self.cells[row * self.dims..(row + 1) * self.dims];
        for (o, c) in out.iter_mut().zip(cells) {
            *o = f32::from_bits(c.load(Ordering::Relaxed));
        }
    }

    fn add_scaled(&self, row: usize, scale: f32, delta: &[f32]) {
        let cells = &self.cells[row * self.dims..(row + 1) * self.dims];
        for (c, &d) in cells.iter().zip(delta) {
            let v = f32::from_bits(c.load(Ordering::Relaxed)) + scale * d;
            c.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    fn into_values(self) -> Vec<f32> {
        self.cells.into_iter().map(|c| f32::from_bits(c.into_inner())).collect()
    }
}

/// Noise distribution: corpus frequency ^ 0.75.
pub fn unigram_table(corpus: &[Vec<usize>], node_count: usize) -> Result<WeightedIndex<f64>> {
    let mut freq = vec![0usize; node_count];
    for walk in corpus {
        for &v in walk {
            if v >= node_count {
                return Err(Error::Index { index: v, len: node_count });
            }
            freq[v] += 1;
        }
    }
    WeightedIndex::new(freq.iter().map(|&f| (f as f64).powf(UNIGRAM_POWER)))
        .map_err(|e| Error::Training(format!("cannot build noise distribution: {e}")))
}

/// Random input vectors in `[-0.5/d, 0.5/d]`, zero context vectors.
pub fn initialize(node_count: usize, dims: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = rng::stream(seed, &[tag::INIT]);
    let half = 0.5 / dims as f32;
    let input = (0..node_count * dims)
        .map(|_| rng.random_range(-half..=half))
        .collect();
    EmbeddingMatrix {
        labels: (0..node_count).map(|i| i.to_string()).collect(),
        dims,
        input,
        context: vec![0.0; node_count * dims],
    }
}

struct Step<'a> {
    input: &'a SharedMatrix,
    context: &'a SharedMatrix,
    noise: &'a WeightedIndex<f64>,
    window: usize,
    negatives: usize,
    center: Vec<f32>,
    ctx: Vec<f32>,
    delta: Vec<f32>,
}

impl<'a> Step<'a> {
    fn new(
        input: &'a SharedMatrix,
        context: &'a SharedMatrix,
        noise: &'a WeightedIndex<f64>,
        cfg: &WalkConfig,
    ) -> Self {
        Step {
            input,
            context,
            noise,
            window: cfg.window,
            negatives: cfg.negatives,
            center: vec![0.0; input.dims],
            ctx: vec![0.0; input.dims],
            delta: vec![0.0; input.dims],
        }
    }

    fn update_target(&mut self, target: usize, positive: bool, lr: f32) {
        self.context.read(target, &mut self.ctx);
        let (_, slope) = logistic_term(dot(&self.center, &self.ctx), positive);
        let g = lr * slope;
        for (d, &c) in self.delta.iter_mut().zip(&self.ctx) {
            *d += g * c;
        }
        self.context.add_scaled(target, g, &self.center);
    }

    /// All (center, context) pairs of position `i`.
    fn position<R: Rng>(&mut self, walk: &[usize], i: usize, lr: f32, rng: &mut R) {
        let center = walk[i];
        let lo = i.saturating_sub(self.window);
        let hi = (i + self.window + 1).min(walk.len());
        for j in lo..hi {
            if j == i {
                continue;
            }
            let target = walk[j];
            self.input.read(center, &mut self.center);
            self.delta.iter_mut().for_each(|d| *d = 0.0);
            self.update_target(target, true, lr);
            for _ in 0..self.negatives {
                let neg = self.noise.sample(rng);
                if neg == target {
                    continue;
                }
                self.update_target(neg, false, lr);
            }
            self.input.add_scaled(center, 1.0, &self.delta);
        }
    }
}

/// Trains skip-gram vectors starting from `init`.
pub fn train_from(
    init: EmbeddingMatrix,
    corpus: &[Vec<usize>],
    cfg: &WalkConfig,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    cfg.validate()?;
    let tokens: usize = corpus.iter().map(Vec::len).sum();
    if tokens == 0 {
        return Err(Error::Training("empty walk corpus".into()));
    }
    if init.dims != cfg.dimensions {
        return Err(Error::Dimension {
            expected: cfg.dimensions,
            found: init.dims,
        });
    }
    let n = init.node_count();
    let noise = unigram_table(corpus, n)?;
    let input = SharedMatrix::from_values(&init.input, init.dims);
    let context = SharedMatrix::from_values(&init.context, init.dims);
    let total = (cfg.epochs * tokens) as f64;
    let lr0 = cfg.initial_learning_rate;
    let rate = |done: usize| (lr0 * (1.0 - done as f64 / total).max(MIN_LR_FRACTION)) as f32;

    match cfg.mode {
        TrainingMode::Deterministic => {
            let mut step = Step::new(&input, &context, &noise, cfg);
            let mut rng = rng::stream(seed, &[tag::SGNS]);
            let mut done = 0;
            for _ in 0..cfg.epochs {
                for walk in corpus {
                    for i in 0..walk.len() {
                        step.position(walk, i, rate(done), &mut rng);
                        done += 1;
                    }
                }
            }
        }
        TrainingMode::Fast => {
            // token offset of every chunk, for the learning-rate schedule
            let chunks: Vec<&[Vec<usize>]> = corpus.chunks(FAST_CHUNK_WALKS).collect();
            let mut offsets = Vec::with_capacity(chunks.len());
            let mut acc = 0;
            for c in &chunks {
                offsets.push(acc);
                acc += c.iter().map(Vec::len).sum::<usize>();
            }
            for epoch in 0..cfg.epochs {
                chunks.par_iter().zip(&offsets).enumerate().for_each(|(k, (chunk, &offset))| {
                    let mut step = Step::new(&input, &context, &noise, cfg);
                    let mut rng = rng::stream(seed, &[tag::SGNS, epoch as u64, k as u64]);
                    let mut done = epoch * tokens + offset;
                    for walk in chunk.iter() {
                        for i in 0..walk.len() {
                            step.position(walk, i, rate(done), &mut rng);
                            done += 1;
                        }
                    }
                });
            }
        }
    }

    let out = EmbeddingMatrix {
        labels: init.labels,
        dims: init.dims,
        input: input.into_values(),
        context: context.into_values(),
    };
    if out.input.iter().chain(&out.context).any(|v| !v.is_finite()) {
        return Err(Error::Training("skip-gram training produced non-finite vectors".into()));
    }
    Ok(out)
}

/// Trains skip-gram vectors for `node_count` nodes from a walk corpus.
pub fn train_skipgram(
    corpus: &[Vec<usize>],
    node_count: usize,
    cfg: &WalkConfig,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    train_from(initialize(node_count, cfg.dimensions, seed), corpus, cfg, seed)
}

/// Mean per-pair objective over the corpus with a fixed negative draw.
pub fn mean_objective(
    emb: &EmbeddingMatrix,
    corpus: &[Vec<usize>],
    window: usize,
    negatives: usize,
    seed: u64,
) -> Result<f64> {
    let noise = unigram_table(corpus, emb.node_count())?;
    let mut rng = rng::stream(seed, &[tag::SGNS, u64::MAX]);
    let widen = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for walk in corpus {
        for i in 0..walk.len() {
            let lo = i.saturating_sub(window);
            let hi = (i + window + 1).min(walk.len());
            for j in (lo..hi).filter(|&j| j != i) {
                let e = widen(emb.vector(walk[i]));
                let c = widen(emb.context_vector(walk[j]));
                let negs: Vec<Vec<f64>> = (0..negatives)
                    .map(|_| widen(emb.context_vector(noise.sample(&mut rng))))
                    .collect();
                let refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
                sum += pair_objective(&e, &c, &refs);
                pairs += 1;
            }
        }
    }
    Ok(if pairs == 0 { 0.0 } else { sum / pairs as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_term_is_stable() {
        let (o, d) = logistic_term(800.0f64, true);
        assert!(o.abs() < 1e-300 && d.abs() < 1e-300);
        let (o, d) = logistic_term(-800.0f64, true);
        assert!((o + 800.0).abs() < 1e-9 && (d - 1.0).abs() < 1e-12);
        let (o, d) = logistic_term(0.0f64, false);
        assert!((o + std::f64::consts::LN_2).abs() < 1e-15 && (d + 0.5).abs() < 1e-15);
    }

    #[test]
    fn shape_and_empty_corpus() {
        let cfg = WalkConfig {
            dimensions: 8,
            ..WalkConfig::default()
        };
        let emb = train_skipgram(&[vec![0, 1, 2], vec![2, 1]], 4, &cfg, 3).unwrap();
        assert_eq!(emb.node_count(), 4);
        assert_eq!(emb.input.len(), 32);
        assert!(emb.input.iter().all(|v| v.is_finite()));
        assert!(matches!(
            train_skipgram(&[], 4, &cfg, 3),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn initialization_range() {
        let emb = initialize(10, 16, 1);
        let bound = 0.5 / 16.0;
        assert!(emb.input.iter().all(|v| v.abs() <= bound));
        assert!(emb.context.iter().all(|&v| v == 0.0));
    }
}
