//! Synthetic graph generators for tests, smoke runs and desk-scale
//! experiments when a real network file is not at hand.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::DirectedGraph;
use crate::rng;

/// Directed preferential attachment.
///
/// Starts from a complete digraph on `m + 1` nodes. Every later node sends
/// `m` edges to distinct existing nodes chosen with probability
/// proportional to in-degree + 1, and receives `m` edges from distinct
/// existing nodes chosen proportional to out-degree + 1. The result has
/// heavy-tailed in- and out-degree distributions and roughly `2 m n` edges.
pub fn scale_free_directed(n: usize, m: usize, seed: u64) -> Result<DirectedGraph> {
    if m == 0 {
        return Err(Error::Param("scale-free generator needs m >= 1".into()));
    }
    let core = (m + 1).min(n);
    let mut rng = rng::stream(seed, &[0x5346]);
    let mut edges = Vec::with_capacity(2 * m * n);
    let mut in_deg = vec![0usize; n];
    let mut out_deg = vec![0usize; n];
    for u in 0..core {
        for v in 0..core {
            if u != v {
                edges.push((u, v));
                out_deg[u] += 1;
                in_deg[v] += 1;
            }
        }
    }
    // roulette pools: node i appears (deg + 1) times
    let mut in_pool: Vec<usize> = Vec::new();
    let mut out_pool: Vec<usize> = Vec::new();
    for u in 0..core {
        in_pool.extend(std::iter::repeat_n(u, in_deg[u] + 1));
        out_pool.extend(std::iter::repeat_n(u, out_deg[u] + 1));
    }
    let mut picked = Vec::with_capacity(m);
    for t in core..n {
        picked.clear();
        while picked.len() < m.min(t) {
            let v = in_pool[rng.random_range(0..in_pool.len())];
            if !picked.contains(&v) {
                picked.push(v);
            }
        }
        for &v in &picked {
            edges.push((t, v));
            in_pool.push(v);
        }
        out_deg[t] += picked.len();
        picked.clear();
        while picked.len() < m.min(t) {
            let u = out_pool[rng.random_range(0..out_pool.len())];
            if !picked.contains(&u) {
                picked.push(u);
            }
        }
        for &u in &picked {
            edges.push((u, t));
            out_pool.push(u);
        }
        in_pool.extend(std::iter::repeat_n(t, m.min(t) + 1));
        out_pool.extend(std::iter::repeat_n(t, out_deg[t] + 1));
    }
    DirectedGraph::from_edges(n, &edges)
}

/// Uniformly random simple digraph with exactly `m` edges.
pub fn random_digraph(n: usize, m: usize, seed: u64) -> Result<DirectedGraph> {
    let slots = n * n.saturating_sub(1);
    if m > slots {
        return Err(Error::Param(format!("{m} edges do not fit in a simple digraph on {n} nodes")));
    }
    let mut rng = rng::stream(seed, &[0x5244]);
    let mut chosen = index::sample(&mut rng, slots, m).into_vec();
    chosen.sort_unstable();
    let edges: Vec<_> = chosen
        .into_iter()
        .map(|s| {
            let u = s / (n - 1);
            let mut v = s % (n - 1);
            if v >= u {
                v += 1;
            }
            (u, v)
        })
        .collect();
    DirectedGraph::from_edges(n, &edges)
}

/// Two complete digraphs on `k` nodes each, joined by a single edge in
/// each direction between node `k - 1` and node `k`.
pub fn two_cliques(k: usize) -> DirectedGraph {
    let mut edges = Vec::new();
    for block in 0..2 {
        let base = block * k;
        for u in 0..k {
            for v in 0..k {
                if u != v {
                    edges.push((base + u, base + v));
                }
            }
        }
    }
    if k > 0 {
        edges.push((k - 1, k));
        edges.push((k, k - 1));
    }
    DirectedGraph::from_edges(2 * k, &edges).expect("clique construction is valid")
}
