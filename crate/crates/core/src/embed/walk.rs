//! Second-order biased random walks over out-edges.
//!
//! From the start node the first step is uniform over out-neighbors. After
//! that, moving from `cur` (reached from `prev`) to candidate `x` has weight
//! `1/p` if `x == prev`, `1` if `x` is an out-neighbor of `prev`, and `1/q`
//! otherwise. A walk stops early at a node without out-neighbors.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::WalkConfig;
use crate::error::Result;
use crate::graph::DirectedGraph;
use crate::rng::{self, tag};

/// Unnormalized weight of stepping to `candidate` from `cur` given the
/// previous node.
fn bias(g: &DirectedGraph, prev: usize, candidate: usize, p: f64, q: f64) -> f64 {
    if candidate == prev {
        1.0 / p
    } else if g.has_edge(prev, candidate) {
        1.0
    } else {
        1.0 / q
    }
}

/// Samples the next node of a walk, or `None` at a dead end.
pub fn next_step<R: Rng + ?Sized>(
    g: &DirectedGraph,
    prev: Option<usize>,
    cur: usize,
    p: f64,
    q: f64,
    rng: &mut R,
) -> Option<usize> {
    let nbrs = g.out_slice(cur);
    match (nbrs.len(), prev) {
        (0, _) => None,
        (k, None) => Some(nbrs[rng.random_range(0..k)]),
        (_, Some(prev)) => {
            let total: f64 = nbrs.iter().map(|&x| bias(g, prev, x, p, q)).sum();
            let mut target = rng.random::<f64>() * total;
            for &x in nbrs {
                target -= bias(g, prev, x, p, q);
                if target < 0.0 {
                    return Some(x);
                }
            }
            nbrs.last().copied()
        }
    }
}

/// One walk of at most `length` nodes starting at `start`.
pub fn walk_from<R: Rng + ?Sized>(
    g: &DirectedGraph,
    start: usize,
    length: usize,
    p: f64,
    q: f64,
    rng: &mut R,
) -> Vec<usize> {
    let mut walk = Vec::with_capacity(length);
    walk.push(start);
    let mut prev = None;
    while walk.len() < length {
        let cur = *walk.last().unwrap();
        match next_step(g, prev, cur, p, q, rng) {
            Some(next) => {
                prev = Some(cur);
                walk.push(next);
            }
            None => break,
        }
    }
    walk
}

/// `walks_per_node` rounds; each round visits every node once in a freshly
/// shuffled order and starts one walk there. Walks are generated in
/// parallel from per-(round, node) substreams.
pub fn generate_walks(g: &DirectedGraph, cfg: &WalkConfig, seed: u64) -> Result<Vec<Vec<usize>>> {
    cfg.validate()?;
    let mut corpus = Vec::with_capacity(g.node_count() * cfg.walks_per_node);
    for round in 0..cfg.walks_per_node {
        let mut order: Vec<usize> = (0..g.node_count()).collect();
        order.shuffle(&mut rng::stream(seed, &[tag::WALKS, round as u64]));
        let walks: Vec<Vec<usize>> = order
            .par_iter()
            .map(|&start| {
                let mut rng = rng::stream(seed, &[tag::WALKS, round as u64, start as u64]);
                walk_from(g, start, cfg.walk_length, cfg.p, cfg.q, &mut rng)
            })
            .collect();
        corpus.extend(walks);
    }
    Ok(corpus)
}
