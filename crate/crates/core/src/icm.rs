//! Independent Cascade Model simulation.
//!
//! A cascade starts from one seed node at t = 0. A node activated at step t
//! makes a single attempt on each of its still-inactive out-neighbors at
//! step t + 1, succeeding with that edge's activation probability. The
//! cascade stops at the first step that activates nobody.
//!
//! Attempts within a step run in ascending activator order, then ascending
//! target order. A node already activated earlier in the same step is not
//! attempted again, which saves random draws; determinism is defined under
//! this rule.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{check_index, Error, Result};
use crate::graph::DirectedGraph;
use crate::rng::{self, tag};

/// Node and edge counts of the graph a derived artifact belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fingerprint {
    pub nodes: usize,
    pub edges: usize,
}

impl Fingerprint {
    pub fn of(g: &DirectedGraph) -> Self {
        Fingerprint {
            nodes: g.node_count(),
            edges: g.edge_count(),
        }
    }
}

/// Per-edge activation probabilities, aligned with `DirectedGraph::edges`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationProbabilities {
    values: Vec<f64>,
    max_p: f64,
    fingerprint: Fingerprint,
}

impl ActivationProbabilities {
    /// Wraps explicit probabilities. Every value must lie in `[0, max_p]`.
    pub fn new(g: &DirectedGraph, values: Vec<f64>, max_p: f64) -> Result<Self> {
        check_max_p(max_p)?;
        if values.len() != g.edge_count() {
            return Err(Error::Dimension {
                expected: g.edge_count(),
                found: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|p| !(0.0..=max_p).contains(*p)) {
            return Err(Error::Param(format!("probability {bad} outside [0, {max_p}]")));
        }
        Ok(ActivationProbabilities {
            values,
            max_p,
            fingerprint: Fingerprint::of(g),
        })
    }

    /// Same probability on every edge.
    pub fn uniform(g: &DirectedGraph, p: f64) -> Result<Self> {
        Self::new(g, vec![p; g.edge_count()], p)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, edge_id: usize) -> f64 {
        self.values[edge_id]
    }

    pub fn max_p(&self) -> f64 {
        self.max_p
    }

    fn check_aligned(&self, g: &DirectedGraph) -> Result<()> {
        if self.fingerprint != Fingerprint::of(g) {
            return Err(Error::Consistency(
                "activation probabilities belong to a different graph".into(),
            ));
        }
        Ok(())
    }
}

fn check_max_p(max_p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&max_p) {
        Ok(())
    } else {
        Err(Error::Param(format!("max_p must lie in [0, 1], got {max_p}")))
    }
}

/// Draws an independent uniform `[0, max_p)` probability for every edge.
pub fn assign_probabilities(g: &DirectedGraph, max_p: f64, seed: u64) -> Result<ActivationProbabilities> {
    check_max_p(max_p)?;
    let mut rng = rng::stream(seed, &[tag::PROBS]);
    let values = (0..g.edge_count())
        .map(|_| rng.random::<f64>() * max_p)
        .collect();
    Ok(ActivationProbabilities {
        values,
        max_p,
        fingerprint: Fingerprint::of(g),
    })
}

/// One realized diffusion: the nodes activated at each timestep.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Cascade {
    nodes: Vec<usize>,
    step_ends: Vec<usize>,
}

impl Cascade {
    /// Builds a cascade from per-step activation sets; step 0 must hold
    /// exactly the seed.
    pub fn from_steps<I, S>(steps: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = usize>,
    {
        let mut nodes = Vec::new();
        let mut step_ends = Vec::new();
        for step in steps {
            let start = nodes.len();
            nodes.extend(step);
            nodes[start..].sort_unstable();
            if nodes.len() == start {
                return Err(Error::Consistency("cascade contains an empty step".into()));
            }
            step_ends.push(nodes.len());
        }
        if step_ends.first() != Some(&1) {
            return Err(Error::Consistency("step 0 must contain exactly the seed".into()));
        }
        let mut seen = nodes.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Consistency("a node is activated more than once".into()));
        }
        Ok(Cascade { nodes, step_ends })
    }

    pub fn seed(&self) -> usize {
        self.nodes[0]
    }

    /// Every activated node, in step order (sorted within a step).
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn step_count(&self) -> usize {
        self.step_ends.len()
    }

    /// Nodes activated at step `t`.
    pub fn step(&self, t: usize) -> &[usize] {
        let start = if t == 0 { 0 } else { self.step_ends[t - 1] };
        &self.nodes[start..self.step_ends[t]]
    }

    /// `(t, activated)` pairs in time order.
    pub fn steps(&self) -> impl Iterator<Item = (usize, &[usize])> + '_ {
        (0..self.step_count()).map(move |t| (t, self.step(t)))
    }

    /// Checks every structural invariant against `g`: indices in range,
    /// steps disjoint and non-empty, and each node activated at t + 1
    /// having an in-neighbor activated at t.
    pub fn validate(&self, g: &DirectedGraph) -> Result<()> {
        for &v in &self.nodes {
            check_index(v, g.node_count())?;
        }
        if self.step_ends.first() != Some(&1) {
            return Err(Error::Consistency("step 0 must contain exactly the seed".into()));
        }
        let mut when = vec![usize::MAX; g.node_count()];
        for (t, step) in self.steps() {
            if step.is_empty() {
                return Err(Error::Consistency(format!("step {t} is empty")));
            }
            for &v in step {
                if when[v] != usize::MAX {
                    return Err(Error::Consistency(format!("node {v} activated twice")));
                }
                when[v] = t;
            }
        }
        for (t, step) in self.steps().skip(1) {
            for &v in step {
                let parent = g.in_neighbors(v)?.iter().any(|&u| when[u] == t - 1);
                if !parent {
                    return Err(Error::Consistency(format!(
                        "node {v} activated at step {t} without an active in-neighbor at step {}",
                        t - 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Reusable scratch space for running many cascades on one graph.
#[derive(Debug, Clone)]
pub struct Simulator {
    stamp: Vec<u32>,
    epoch: u32,
}

impl Simulator {
    pub fn new(node_count: usize) -> Self {
        Simulator {
            stamp: vec![0; node_count],
            epoch: 0,
        }
    }

    fn next_epoch(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
    }

    /// Runs one cascade, asking `attempt(edge_id, from, to)` whether each
    /// activation attempt succeeds. Attempts arrive in canonical order and
    /// each edge is attempted at most once.
    pub fn run<F>(&mut self, g: &DirectedGraph, seed: usize, mut attempt: F) -> Result<Cascade>
    where
        F: FnMut(usize, usize, usize) -> bool,
    {
        check_index(seed, g.node_count())?;
        if self.stamp.len() != g.node_count() {
            self.stamp = vec![0; g.node_count()];
            self.epoch = 0;
        }
        self.next_epoch();
        let epoch = self.epoch;
        self.stamp[seed] = epoch;
        let mut nodes = vec![seed];
        let mut step_ends = vec![1];
        let mut frontier = 0..1;
        loop {
            let start = nodes.len();
            for i in frontier.clone() {
                let u = nodes[i];
                for (v, edge) in g.out_edges(u) {
                    if self.stamp[v] != epoch && attempt(edge, u, v) {
                        self.stamp[v] = epoch;
                        nodes.push(v);
                    }
                }
            }
            if nodes.len() == start {
                break;
            }
            nodes[start..].sort_unstable();
            step_ends.push(nodes.len());
            frontier = start..nodes.len();
        }
        Ok(Cascade { nodes, step_ends })
    }
}

/// Runs one ICM cascade from `seed`, drawing one uniform per attempt.
pub fn run_icm<R: Rng + ?Sized>(
    g: &DirectedGraph,
    probs: &ActivationProbabilities,
    seed: usize,
    rng: &mut R,
) -> Result<Cascade> {
    probs.check_aligned(g)?;
    Simulator::new(g.node_count()).run(g, seed, |e, _, _| rng.random::<f64>() < probs.get(e))
}

/// Cascades plus the metadata needed to interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeSet {
    pub cascades: Vec<Cascade>,
    pub r_nominal: usize,
    pub fingerprint: Fingerprint,
}

impl CascadeSet {
    pub fn len(&self) -> usize {
        self.cascades.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cascades.is_empty()
    }

    /// Number of cascades seeded at each node.
    pub fn seed_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.fingerprint.nodes];
        for c in &self.cascades {
            counts[c.seed()] += 1;
        }
        counts
    }

    pub fn validate(&self, g: &DirectedGraph) -> Result<()> {
        if self.fingerprint != Fingerprint::of(g) {
            return Err(Error::Consistency(format!(
                "cascade set was generated on a graph with {} nodes and {} edges, got {} and {}",
                self.fingerprint.nodes,
                self.fingerprint.edges,
                g.node_count(),
                g.edge_count()
            )));
        }
        self.cascades.iter().try_for_each(|c| c.validate(g))
    }
}

/// Runs `r` cascades from every node.
///
/// Replicate `k` of seed `v` uses its own substream keyed by
/// `(seed, v, k)`, so the output is identical for any number of workers.
/// Cascades are ordered by seed node, then replicate.
pub fn generate_cascade_set(
    g: &DirectedGraph,
    probs: &ActivationProbabilities,
    r: usize,
    seed: u64,
) -> Result<CascadeSet> {
    if r < 1 {
        return Err(Error::Param("r must be at least 1".into()));
    }
    probs.check_aligned(g)?;
    let per_node: Vec<Vec<Cascade>> = (0..g.node_count())
        .into_par_iter()
        .map_init(
            || Simulator::new(g.node_count()),
            |sim, v| {
                (0..r)
                    .map(|k| {
                        let mut rng = rng::stream(seed, &[tag::CASCADES, v as u64, k as u64]);
                        sim.run(g, v, |e, _, _| rng.random::<f64>() < probs.get(e))
                    })
                    .collect::<Result<Vec<_>>>()
            },
        )
        .collect::<Result<_>>()?;
    Ok(CascadeSet {
        cascades: per_node.into_iter().flatten().collect(),
        r_nominal: r,
        fingerprint: Fingerprint::of(g),
    })
}

/// Uniform sample without replacement of `floor(fraction * len)` cascades.
///
/// The sample is the prefix of a seeded random permutation, so calls with
/// the same seed and growing fractions are nested. Selected cascades keep
/// their original relative order.
pub fn sample_portion(cs: &CascadeSet, fraction: f64, seed: u64) -> Result<CascadeSet> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Param(format!("fraction must lie in [0, 1], got {fraction}")));
    }
    let n = cs.len();
    // tolerate representation error such as 0.29 * 100 = 28.999...
    let k = ((fraction * n as f64) + 1e-9).floor() as usize;
    let k = k.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[tag::SAMPLE]));
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    Ok(CascadeSet {
        cascades: chosen.into_iter().map(|i| cs.cascades[i].clone()).collect(),
        r_nominal: cs.r_nominal,
        fingerprint: cs.fingerprint,
    })
}

const CASCADE_MAGIC: &str = "#reachcast-cascades v1";

/// Writes a cascade set using external node labels, one cascade per line:
/// `id TAB seed TAB t0:a TAB t1:b,c ...`.
pub fn write_cascades<W: Write>(cs: &CascadeSet, g: &DirectedGraph, mut w: W) -> Result<()> {
    if cs.fingerprint != Fingerprint::of(g) {
        return Err(Error::Consistency("cascade set does not match graph".into()));
    }
    writeln!(
        w,
        "{CASCADE_MAGIC} r={} nodes={} edges={}",
        cs.r_nominal, cs.fingerprint.nodes, cs.fingerprint.edges
    )?;
    for (id, c) in cs.cascades.iter().enumerate() {
        write!(w, "{id}\t{}", g.label(c.seed()))?;
        for (t, step) in c.steps() {
            write!(w, "\t{t}:")?;
            for (i, &v) in step.iter().enumerate() {
                if i > 0 {
                    w.write_all(b",")?;
                }
                w.write_all(g.label(v).as_bytes())?;
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

pub(crate) fn parse_header_fields<'a>(
    line: &'a str,
    magic: &str,
) -> Result<impl Iterator<Item = (&'a str, &'a str)> + 'a> {
    let rest = line
        .strip_prefix(magic)
        .ok_or_else(|| Error::Format(format!("expected header starting with {magic:?}")))?;
    Ok(rest
        .split_whitespace()
        .filter_map(|kv| kv.split_once('=')))
}

fn parse_usize(s: &str, what: &str, line: usize) -> Result<usize> {
    s.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what} {s:?}"),
    })
}

/// Reads a cascade file and validates it against `g`.
pub fn read_cascades<R: BufRead>(source: R, g: &DirectedGraph) -> Result<CascadeSet> {
    let mut lines = source.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::Format("empty cascade file".into()))?;
    let mut r_nominal = None;
    let mut nodes = None;
    let mut edges = None;
    for (k, v) in parse_header_fields(&header, CASCADE_MAGIC)? {
        match k {
            "r" => r_nominal = Some(parse_usize(v, "r", 1)?),
            "nodes" => nodes = Some(parse_usize(v, "node count", 1)?),
            "edges" => edges = Some(parse_usize(v, "edge count", 1)?),
            _ => {}
        }
    }
    let missing = || Error::Format("cascade header lacks r, nodes or edges".into());
    let fingerprint = Fingerprint {
        nodes: nodes.ok_or_else(missing)?,
        edges: edges.ok_or_else(missing)?,
    };
    let r_nominal = r_nominal.ok_or_else(missing)?;
    if fingerprint != Fingerprint::of(g) {
        return Err(Error::Consistency(format!(
            "cascade file is for a graph with {} nodes and {} edges, got {} and {}",
            fingerprint.nodes,
            fingerprint.edges,
            g.node_count(),
            g.edge_count()
        )));
    }

    let lookup = |label: &str, line: usize| {
        g.index_of(label).ok_or_else(|| Error::Parse {
            line,
            message: format!("unknown node label {label:?}"),
        })
    };
    let mut cascades = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let _id = fields.next();
        let seed = fields.next().ok_or_else(|| Error::Parse {
            line: lineno,
            message: "missing seed label".into(),
        })?;
        let seed = lookup(seed, lineno)?;
        let mut steps: Vec<Vec<usize>> = Vec::new();
        for field in fields {
            let (t, members) = field.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                message: format!("malformed step {field:?}"),
            })?;
            if parse_usize(t, "timestep", lineno)? != steps.len() {
                return Err(Error::Parse {
                    line: lineno,
                    message: "timesteps must start at 0 and be consecutive".into(),
                });
            }
            let step = members
                .split(',')
                .map(|l| lookup(l, lineno))
                .collect::<Result<Vec<_>>>()?;
            steps.push(step);
        }
        if steps.first().map(Vec::as_slice) != Some(&[seed][..]) {
            return Err(Error::Parse {
                line: lineno,
                message: "step 0 must hold exactly the seed".into(),
            });
        }
        let cascade = Cascade::from_steps(steps)?;
        cascade.validate(g)?;
        cascades.push(cascade);
    }
    Ok(CascadeSet {
        cascades,
        r_nominal,
        fingerprint,
    })
}
