//! Directed graph storage and edge-list ingestion.
//!
//! Nodes carry an external label (whatever the input file used) and a dense
//! index assigned in order of first appearance. Adjacency is kept in two
//! compressed rows (out and in), each sorted by neighbor index and carrying
//! the id of the edge it came from so per-edge data can be aligned with it.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use crate::error::{check_index, Error, Result};

/// How tokens on an edge-list line are separated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DelimiterMode {
    /// Comma if the line contains one, whitespace otherwise.
    #[default]
    Auto,
    Whitespace,
    Comma,
}

/// Counts of input lines that did not become edges.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub comments: usize,
    pub blank: usize,
    pub self_loops: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Csr {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    edge_ids: Vec<usize>,
}

impl Csr {
    fn build(node_count: usize, pairs: impl Iterator<Item = (usize, usize, usize)>) -> Self {
        let mut buckets: Vec<Vec<(usize, usize)>> = vec![Vec::new(); node_count];
        for (from, to, id) in pairs {
            buckets[from].push((to, id));
        }
        let mut csr = Csr {
            offsets: Vec::with_capacity(node_count + 1),
            ..Default::default()
        };
        csr.offsets.push(0);
        for mut bucket in buckets {
            bucket.sort_unstable();
            for (to, id) in bucket {
                csr.neighbors.push(to);
                csr.edge_ids.push(id);
            }
            csr.offsets.push(csr.neighbors.len());
        }
        csr
    }

    fn range(&self, u: usize) -> std::ops::Range<usize> {
        self.offsets[u]..self.offsets[u + 1]
    }
}

/// A simple directed graph: no self-loops, no parallel edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    edges: Vec<(usize, usize)>,
    out: Csr,
    inc: Csr,
}

impl Default for DirectedGraph {
    fn default() -> Self {
        DirectedGraph::from_edges(0, &[]).expect("empty graph is valid")
    }
}

impl DirectedGraph {
    /// Builds a graph over nodes labelled `0..node_count`, dropping
    /// self-loops and duplicate edges.
    pub fn from_edges(node_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let labels = (0..node_count).map(|i| i.to_string()).collect();
        Self::from_labelled_edges(labels, edges)
    }

    /// Builds a graph with explicit external labels, one per dense index.
    pub fn from_labelled_edges(labels: Vec<String>, edges: &[(usize, usize)]) -> Result<Self> {
        let node_count = labels.len();
        let mut index = HashMap::with_capacity(node_count);
        for (i, label) in labels.iter().enumerate() {
            if index.insert(label.clone(), i).is_some() {
                return Err(Error::Consistency(format!("duplicate node label {label:?}")));
            }
        }
        let mut seen = HashSet::with_capacity(edges.len());
        let mut kept = Vec::with_capacity(edges.len());
        for &(u, v) in edges {
            check_index(u, node_count)?;
            check_index(v, node_count)?;
            if u != v && seen.insert((u, v)) {
                kept.push((u, v));
            }
        }
        Ok(Self::assemble(labels, index, kept))
    }

    fn assemble(labels: Vec<String>, index: HashMap<String, usize>, edges: Vec<(usize, usize)>) -> Self {
        let n = labels.len();
        let out = Csr::build(n, edges.iter().enumerate().map(|(id, &(u, v))| (u, v, id)));
        let inc = Csr::build(n, edges.iter().enumerate().map(|(id, &(u, v))| (v, u, id)));
        DirectedGraph {
            labels,
            index,
            edges,
            out,
            inc,
        }
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges in ingestion order. Per-edge data (activation probabilities)
    /// is aligned with this list.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn label(&self, u: usize) -> &str {
        &self.labels[u]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    /// Out-neighbors of `u`, sorted ascending.
    pub fn out_neighbors(&self, u: usize) -> Result<&[usize]> {
        check_index(u, self.node_count())?;
        Ok(&self.out.neighbors[self.out.range(u)])
    }

    /// In-neighbors of `u`, sorted ascending.
    pub fn in_neighbors(&self, u: usize) -> Result<&[usize]> {
        check_index(u, self.node_count())?;
        Ok(&self.inc.neighbors[self.inc.range(u)])
    }

    /// Out-neighbors of `u` paired with the id of the connecting edge.
    /// Panics if `u` is out of range.
    pub fn out_edges(&self, u: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let r = self.out.range(u);
        self.out.neighbors[r.clone()]
            .iter()
            .copied()
            .zip(self.out.edge_ids[r].iter().copied())
    }

    pub(crate) fn out_slice(&self, u: usize) -> &[usize] {
        &self.out.neighbors[self.out.range(u)]
    }

    pub fn out_degree(&self, u: usize) -> usize {
        self.out.range(u).len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.node_count() && self.out_slice(u).binary_search(&v).is_ok()
    }

    /// Nodes reachable from `u` along directed edges, including `u`.
    pub fn reachable_from(&self, u: usize) -> Result<Vec<bool>> {
        check_index(u, self.node_count())?;
        let mut seen = vec![false; self.node_count()];
        let mut stack = vec![u];
        seen[u] = true;
        while let Some(x) = stack.pop() {
            for &y in self.out_slice(x) {
                if !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        Ok(seen)
    }

    /// Subgraph induced by the first `k` dense indices, keeping labels.
    pub fn induced_prefix(&self, k: usize) -> DirectedGraph {
        let k = k.min(self.node_count());
        let labels = self.labels[..k].to_vec();
        let edges: Vec<_> = self.edges.iter().copied().filter(|&(u, v)| u < k && v < k).collect();
        Self::from_labelled_edges(labels, &edges).expect("prefix of a valid graph is valid")
    }

    /// Writes `src TAB dst` lines that reload (first-appearance order) to
    /// an identical graph. When an edge would introduce its nodes out of
    /// index order, or a node has no edges, the missing nodes are first
    /// written as self-loop lines, which the loader registers and drops.
    pub fn save_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.node_count();
        let mut next = 0;
        for &(u, v) in &self.edges {
            let mut expect = next;
            let mut clean = true;
            for x in [u, v] {
                if x >= expect {
                    clean &= x == expect;
                    expect = x + 1;
                }
            }
            if !clean {
                for k in next..=u.max(v) {
                    let l = &self.labels[k];
                    writeln!(w, "{l}\t{l}")?;
                }
            }
            next = next.max(u.max(v) + 1);
            writeln!(w, "{}\t{}", self.labels[u], self.labels[v])?;
        }
        for l in &self.labels[next..n] {
            writeln!(w, "{l}\t{l}")?;
        }
        Ok(())
    }
}

fn split_line(line: &str, mode: DelimiterMode) -> Vec<&str> {
    let comma = match mode {
        DelimiterMode::Comma => true,
        DelimiterMode::Whitespace => false,
        DelimiterMode::Auto => line.contains(','),
    };
    if comma {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Parses a plain-text edge list.
///
/// Each non-comment line starts with a source label and a target label;
/// further columns are ignored. Lines starting with `#` or `%` are
/// comments. Self-loops and repeated edges are dropped and counted.
pub fn load_edge_list<R: BufRead>(source: R, mode: DelimiterMode) -> Result<(DirectedGraph, LoadReport)> {
    let mut report = LoadReport::default();
    let mut labels: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut seen = HashSet::new();
    let mut edges = Vec::new();

    let mut intern = |label: &str, labels: &mut Vec<String>| -> usize {
        if let Some(&i) = index.get(label) {
            return i;
        }
        let i = labels.len();
        labels.push(label.to_owned());
        index.insert(label.to_owned(), i);
        i
    };

    for (lineno, line) in source.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            report.blank += 1;
            continue;
        }
        if trimmed.starts_with('#') || trimmed.starts_with('%') {
            report.comments += 1;
            continue;
        }
        let tokens = split_line(trimmed, mode);
        if tokens.len() < 2 || tokens[0].is_empty() || tokens[1].is_empty() {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected source and target labels, got {trimmed:?}"),
            });
        }
        let u = intern(tokens[0], &mut labels);
        let v = intern(tokens[1], &mut labels);
        if u == v {
            report.self_loops += 1;
        } else if !seen.insert((u, v)) {
            report.duplicates += 1;
        } else {
            edges.push((u, v));
        }
    }

    let index = labels.iter().cloned().enumerate().map(|(i, l)| (l, i)).collect();
    Ok((DirectedGraph::assemble(labels, index, edges), report))
}
