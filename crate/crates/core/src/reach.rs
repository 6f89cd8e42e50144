//! Reach-probability matrices.
//!
//! `estimate_reach` counts, for each seed `u`, how many of its cascades
//! contain each node `w`, and divides by either the nominal number of
//! cascades per seed (full cascade sets) or by the number of cascades
//! actually observed for `u` (sampled portions). `exact_reach_bruteforce`
//! is the reference answer on tiny graphs, obtained by enumerating every
//! live-edge subgraph.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{check_index, Error, Result};
use crate::graph::DirectedGraph;
use crate::icm::{parse_header_fields, ActivationProbabilities, CascadeSet};

/// What a count is divided by to turn it into a probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivisorMode {
    /// Divide by the nominal number of cascades per seed.
    NominalR,
    /// Divide by the number of cascades present for that seed.
    PerSeedCount,
}

/// Which kind of values a stored matrix holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    Actual,
    Label,
    Predicted,
}

impl MatrixKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MatrixKind::Actual => "actual",
            MatrixKind::Label => "label",
            MatrixKind::Predicted => "predicted",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "actual" => Ok(MatrixKind::Actual),
            "label" => Ok(MatrixKind::Label),
            "predicted" => Ok(MatrixKind::Predicted),
            other => Err(Error::Format(format!("unknown matrix mode {other:?}"))),
        }
    }
}

/// Sparse row-major map `(u, v) -> probability`; absent entries are 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachMatrix {
    rows: Vec<Vec<(usize, f64)>>,
    counts: Vec<usize>,
}

impl ReachMatrix {
    /// All-zero matrix.
    pub fn zeros(node_count: usize) -> Self {
        ReachMatrix {
            rows: vec![Vec::new(); node_count],
            counts: vec![0; node_count],
        }
    }

    /// Builds a matrix from per-row entries. Entries are sorted, zeros are
    /// dropped, and values must lie in `[0, 1]`.
    pub fn from_rows(mut rows: Vec<Vec<(usize, f64)>>, counts: Vec<usize>) -> Result<Self> {
        let n = rows.len();
        if counts.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: counts.len(),
            });
        }
        for row in &mut rows {
            row.retain(|&(_, p)| p != 0.0);
            row.sort_unstable_by_key(|&(v, _)| v);
            if row.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::Consistency("duplicate matrix entry".into()));
            }
            for &(v, p) in row.iter() {
                check_index(v, n)?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
                }
            }
        }
        Ok(ReachMatrix { rows, counts })
    }

    pub fn node_count(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        let row = &self.rows[u];
        match row.binary_search_by_key(&v, |&(c, _)| c) {
            Ok(i) => row[i].1,
            Err(_) => 0.0,
        }
    }

    /// Nonzero entries of row `u`, sorted by column.
    pub fn row(&self, u: usize) -> &[(usize, f64)] {
        &self.rows[u]
    }

    /// Cascades observed per seed.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn nonzeros(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Row `u` as a dense vector.
    pub fn dense_row(&self, u: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.node_count()];
        for &(v, p) in &self.rows[u] {
            out[v] = p;
        }
        out
    }

    /// Checks that every nonzero `(u, v)` has `v` reachable from `u`.
    pub fn validate_reachability(&self, g: &DirectedGraph) -> Result<()> {
        if g.node_count() != self.node_count() {
            return Err(Error::Dimension {
                expected: g.node_count(),
                found: self.node_count(),
            });
        }
        for (u, row) in self.rows.iter().enumerate() {
            if row.is_empty() {
                continue;
            }
            let reach = g.reachable_from(u)?;
            if let Some(&(v, _)) = row.iter().find(|&&(v, _)| !reach[v]) {
                return Err(Error::Consistency(format!("entry ({u}, {v}) is not reachable")));
            }
        }
        Ok(())
    }
}

/// Estimates reach probabilities from a cascade set.
///
/// Every node appearing in a cascade seeded at `u` adds one to `M[u][w]`;
/// the row is then divided according to `divisor`. Seeds without cascades
/// get an empty row. Rows are counted in parallel, one task per seed, so
/// the result does not depend on the number of workers.
pub fn estimate_reach(cs: &CascadeSet, divisor: DivisorMode) -> Result<ReachMatrix> {
    let n = cs.fingerprint.nodes;
    let mut by_seed: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, c) in cs.cascades.iter().enumerate() {
        check_index(c.seed(), n)?;
        by_seed[c.seed()].push(i);
    }
    let counts: Vec<usize> = by_seed.iter().map(Vec::len).collect();
    if divisor == DivisorMode::NominalR {
        if let Some(u) = counts.iter().position(|&k| k > cs.r_nominal) {
            return Err(Error::Consistency(format!(
                "seed {u} has {} cascades, more than r = {}",
                counts[u], cs.r_nominal
            )));
        }
    }
    let rows = by_seed
        .par_iter()
        .map_init(
            || (vec![0usize; n], Vec::new()),
            |(tally, touched), members| -> Result<Vec<(usize, f64)>> {
                if members.is_empty() {
                    return Ok(Vec::new());
                }
                for &i in members {
                    for &w in cs.cascades[i].nodes() {
                        check_index(w, n)?;
                        if tally[w] == 0 {
                            touched.push(w);
                        }
                        tally[w] += 1;
                    }
                }
                let denom = match divisor {
                    DivisorMode::NominalR => cs.r_nominal,
                    DivisorMode::PerSeedCount => members.len(),
                } as f64;
                touched.sort_unstable();
                let row = touched.iter().map(|&w| (w, tally[w] as f64 / denom)).collect();
                for &w in touched.iter() {
                    tally[w] = 0;
                }
                touched.clear();
                Ok(row)
            },
        )
        .collect::<Result<Vec<_>>>()?;
    Ok(ReachMatrix { rows, counts })
}

/// Largest edge count `exact_reach_bruteforce` accepts.
pub const BRUTEFORCE_MAX_EDGES: usize = 22;

/// Exact reach probabilities from `u` by enumerating all `2^|E|` live-edge
/// subgraphs: `v` is reached in a subgraph with probability equal to the
/// product of `p` over present edges and `1 - p` over absent ones.
pub fn exact_reach_bruteforce(
    g: &DirectedGraph,
    probs: &ActivationProbabilities,
    u: usize,
) -> Result<Vec<f64>> {
    let m = g.edge_count();
    if m > BRUTEFORCE_MAX_EDGES {
        return Err(Error::Param(format!(
            "exact enumeration refuses {m} edges (limit {BRUTEFORCE_MAX_EDGES})"
        )));
    }
    if probs.values().len() != m {
        return Err(Error::Dimension {
            expected: m,
            found: probs.values().len(),
        });
    }
    let n = g.node_count();
    check_index(u, n)?;
    let edges = g.edges();
    let p = probs.values();
    let mut reach = vec![0.0; n];
    let mut seen = vec![false; n];
    let mut stack = Vec::with_capacity(n);
    for mask in 0u32..(1u32 << m) {
        let mut weight = 1.0;
        for (e, &pe) in p.iter().enumerate() {
            weight *= if mask >> e & 1 == 1 { pe } else { 1.0 - pe };
        }
        if weight == 0.0 {
            continue;
        }
        seen.iter_mut().for_each(|s| *s = false);
        seen[u] = true;
        stack.push(u);
        while let Some(x) = stack.pop() {
            for (e, &(a, b)) in edges.iter().enumerate() {
                if a == x && !seen[b] && mask >> e & 1 == 1 {
                    seen[b] = true;
                    stack.push(b);
                }
            }
        }
        for (v, &hit) in seen.iter().enumerate() {
            if hit {
                reach[v] += weight;
            }
        }
    }
    reach[u] = 1.0;
    Ok(reach)
}

/// Mean absolute error over all ordered pairs `(u, v)` with `u != v`.
/// Graphs with fewer than two nodes have no pairs and score 0.
pub fn mae(predicted: &ReachMatrix, actual: &ReachMatrix) -> Result<f64> {
    let n = actual.node_count();
    if predicted.node_count() != n {
        return Err(Error::Dimension {
            expected: n,
            found: predicted.node_count(),
        });
    }
    if n < 2 {
        return Ok(0.0);
    }
    let total: f64 = (0..n)
        .map(|u| {
            let (a, b) = (predicted.row(u), actual.row(u));
            let (mut i, mut j) = (0, 0);
            let mut sum = 0.0;
            while i < a.len() || j < b.len() {
                let ca = a.get(i).map_or(usize::MAX, |e| e.0);
                let cb = b.get(j).map_or(usize::MAX, |e| e.0);
                let (col, diff) = if ca == cb {
                    i += 1;
                    j += 1;
                    (ca, a[i - 1].1 - b[j - 1].1)
                } else if ca < cb {
                    i += 1;
                    (ca, a[i - 1].1)
                } else {
                    j += 1;
                    (cb, b[j - 1].1)
                };
                if col != u {
                    sum += diff.abs();
                }
            }
            sum
        })
        .sum();
    Ok(total / (n * (n - 1)) as f64)
}

const REACH_MAGIC: &str = "#reachcast-reach v1";

/// Writes a matrix: a header, one `src TAB dst TAB p` line per nonzero,
/// and a trailing `#counts` section listing every node label with its
/// seed count in dense-index order.
pub fn write_reach<W: Write>(m: &ReachMatrix, labels: &[String], kind: MatrixKind, mut w: W) -> Result<()> {
    if labels.len() != m.node_count() {
        return Err(Error::Dimension {
            expected: m.node_count(),
            found: labels.len(),
        });
    }
    writeln!(w, "{REACH_MAGIC} nodes={} mode={}", m.node_count(), kind.as_str())?;
    for (u, row) in m.rows.iter().enumerate() {
        for &(v, p) in row {
            writeln!(w, "{}\t{}\t{}", labels[u], labels[v], p)?;
        }
    }
    writeln!(w, "#counts")?;
    for (label, count) in labels.iter().zip(&m.counts) {
        writeln!(w, "{label}\t{count}")?;
    }
    Ok(())
}

/// A matrix read back from disk together with its node labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledReach {
    pub matrix: ReachMatrix,
    pub labels: Vec<String>,
    pub kind: MatrixKind,
}

impl LabelledReach {
    /// Re-indexes the matrix to follow `labels`; both label sets must match.
    pub fn aligned_to(&self, labels: &[String]) -> Result<ReachMatrix> {
        if labels == self.labels.as_slice() {
            return Ok(self.matrix.clone());
        }
        if labels.len() != self.labels.len() {
            return Err(Error::Dimension {
                expected: labels.len(),
                found: self.labels.len(),
            });
        }
        let target: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let map = self
            .labels
            .iter()
            .map(|l| {
                target
                    .get(l.as_str())
                    .copied()
                    .ok_or_else(|| Error::Consistency(format!("label {l:?} missing from target")))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = labels.len();
        let mut rows = vec![Vec::new(); n];
        let mut counts = vec![0; n];
        for u in 0..n {
            counts[map[u]] = self.matrix.counts[u];
            rows[map[u]] = self.matrix.rows[u].iter().map(|&(v, p)| (map[v], p)).collect();
        }
        ReachMatrix::from_rows(rows, counts)
    }
}

/// Reads a matrix written by `write_reach`.
pub fn read_reach<R: BufRead>(source: R) -> Result<LabelledReach> {
    let mut lines = source.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::Format("empty reach file".into()))?;
    let mut nodes = None;
    let mut kind = None;
    for (k, v) in parse_header_fields(&header, REACH_MAGIC)? {
        match k {
            "nodes" => {
                nodes = Some(
                    v.parse::<usize>()
                        .map_err(|_| Error::Format(format!("bad node count {v:?}")))?,
                )
            }
            "mode" => kind = Some(MatrixKind::parse(v)?),
            _ => {}
        }
    }
    let nodes = nodes.ok_or_else(|| Error::Format("reach header lacks nodes".into()))?;
    let kind = kind.ok_or_else(|| Error::Format("reach header lacks mode".into()))?;

    let mut entries: Vec<(String, String, f64)> = Vec::new();
    let mut labels = Vec::with_capacity(nodes);
    let mut counts = Vec::with_capacity(nodes);
    let mut in_counts = false;
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line == "#counts" {
            in_counts = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |msg: &str| Error::Parse {
            line: lineno,
            message: msg.to_string(),
        };
        if in_counts {
            if fields.len() != 2 {
                return Err(bad("expected label and count"));
            }
            labels.push(fields[0].to_string());
            counts.push(fields[1].parse::<usize>().map_err(|_| bad("bad count"))?);
        } else {
            if fields.len() != 3 {
                return Err(bad("expected source, target and probability"));
            }
            let p = fields[2].parse::<f64>().map_err(|_| bad("bad probability"))?;
            entries.push((fields[0].to_string(), fields[1].to_string(), p));
        }
    }
    if !in_counts || labels.len() != nodes {
        return Err(Error::Format(format!(
            "counts section lists {} nodes, header says {nodes}",
            labels.len()
        )));
    }
    let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut rows = vec![Vec::new(); nodes];
    for (src, dst, p) in entries {
        let (Some(&u), Some(&v)) = (index.get(src.as_str()), index.get(dst.as_str())) else {
            return Err(Error::Format(format!("entry ({src}, {dst}) uses an unknown label")));
        };
        rows[u].push((v, p));
    }
    let matrix = ReachMatrix::from_rows(rows, counts)?;
    Ok(LabelledReach { matrix, labels, kind })
}
