//! Least-squares gradient boosting with depth-limited regression trees.
//!
//! Each feature gets a small set of candidate thresholds taken at quantiles
//! of (a sample of) its training values, and rows are binned against them
//! once. Trees grow level by level: for every open node, per-bin residual
//! histograms give the variance reduction of each candidate split. Ties go
//! to the lowest feature index, then the lowest threshold.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ExecMode, Trained};
use crate::error::{Error, Result};
use crate::features::Dataset;
use crate::rng::{self, tag};

/// Rows used to place candidate thresholds.
const THRESHOLD_SAMPLE: usize = 50_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbrtConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    pub subsample: f64,
    /// Candidate thresholds per feature.
    pub max_bins: usize,
    pub mode: ExecMode,
}

impl Default for GbrtConfig {
    fn default() -> Self {
        GbrtConfig {
            trees: 100,
            max_depth: 3,
            shrinkage: 0.1,
            subsample: 1.0,
            max_bins: 32,
            mode: ExecMode::Deterministic,
        }
    }
}

impl GbrtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 || self.max_bins == 0 || self.max_bins > 255 {
            return Err(Error::Param("max_depth must be positive and max_bins in 1..=255".into()));
        }
        if !(self.shrinkage > 0.0) || !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::Param("shrinkage must be positive and subsample in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
    },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f32,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f32]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbrtModel {
    pub dim: usize,
    pub init: f64,
    pub shrinkage: f64,
    pub trees: Vec<Tree>,
}

impl GbrtModel {
    /// Verifies that every split references a valid feature and child.
    pub fn check(&self) -> Result<()> {
        for tree in &self.trees {
            let n = tree.nodes.len();
            if n == 0 {
                return Err(Error::Format("empty tree".into()));
            }
            for (i, node) in tree.nodes.iter().enumerate() {
                if let Node::Split { feature, left, right, .. } = *node {
                    if feature >= self.dim || left <= i || right <= i || left >= n || right >= n {
                        return Err(Error::Format("inconsistent tree".into()));
                    }
                }
            }
        }
        Ok(())
    }

    fn raw(&self, x: &[f32]) -> f64 {
        self.init + self.shrinkage * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn predict(&self, features: &[f32]) -> Result<f64> {
        if features.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                found: features.len(),
            });
        }
        Ok(self.raw(features).clamp(0.0, 1.0))
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<f64>> {
        if ds.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                found: ds.dim(),
            });
        }
        let mut buf = vec![0.0f32; self.dim];
        Ok((0..ds.len())
            .map(|i| {
                ds.fill_row(i, &mut buf);
                self.raw(&buf).clamp(0.0, 1.0)
            })
            .collect())
    }
}

/// Midpoint between two adjacent sorted values that still separates them
/// after rounding to `f32`.
fn separating_threshold(lo: f32, hi: f32) -> f32 {
    let mid = ((lo as f64 + hi as f64) / 2.0) as f32;
    if mid >= lo && mid < hi {
        mid
    } else {
        lo
    }
}

/// Candidate thresholds for one feature: the boundaries after the first
/// `k * S / max_bins` sorted sample values, `k = 1..max_bins`, moved up to
/// the next change of value.
pub fn candidate_thresholds(mut sample: Vec<f32>, max_bins: usize) -> Vec<f32> {
    sample.sort_unstable_by(f32::total_cmp);
    let s = sample.len();
    let mut out: Vec<f32> = Vec::new();
    for k in 1..max_bins.max(2) {
        let mut pos = k * s / max_bins.max(2);
        if pos == 0 {
            continue;
        }
        while pos < s && sample[pos] == sample[pos - 1] {
            pos += 1;
        }
        if pos >= s {
            continue;
        }
        let t = separating_threshold(sample[pos - 1], sample[pos]);
        if out.last().is_none_or(|&last| t > last) {
            out.push(t);
        }
    }
    out
}

struct Binned {
    rows: usize,
    thresholds: Vec<Vec<f32>>,
    /// Column-major: `bins[f * rows + i]`.
    bins: Vec<u8>,
}

impl Binned {
    fn build(ds: &Dataset, max_bins: usize, seed: u64) -> Self {
        let n = ds.len();
        let d = ds.dim();
        let sample_rows: Vec<usize> = if n <= THRESHOLD_SAMPLE {
            (0..n).collect()
        } else {
            let mut idx = index::sample(&mut rng::stream(seed, &[tag::TRAIN, 0xB1]), n, THRESHOLD_SAMPLE).into_vec();
            idx.sort_unstable();
            idx
        };
        let mut columns = vec![Vec::with_capacity(sample_rows.len()); d];
        let mut buf = vec![0.0f32; d];
        for &i in &sample_rows {
            ds.fill_row(i, &mut buf);
            for (col, &v) in columns.iter_mut().zip(&buf) {
                col.push(v);
            }
        }
        let thresholds: Vec<Vec<f32>> = columns
            .into_iter()
            .map(|c| candidate_thresholds(c, max_bins))
            .collect();
        let mut bins = vec![0u8; n * d];
        for i in 0..n {
            ds.fill_row(i, &mut buf);
            for (f, &v) in buf.iter().enumerate() {
                bins[f * n + i] = thresholds[f].partition_point(|&t| t < v) as u8;
            }
        }
        Binned { rows: n, thresholds, bins }
    }

    fn column(&self, f: usize) -> &[u8] {
        &self.bins[f * self.rows..(f + 1) * self.rows]
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    bin: usize,
}

/// Grows one tree on `rows` against `residual`. Returns the tree and, per
/// split node, the bin index used, for fast evaluation on binned rows.
fn grow_tree(
    binned: &Binned,
    residual: &[f64],
    rows: &[usize],
    max_depth: usize,
    mode: ExecMode,
) -> (Tree, Vec<Option<(usize, usize)>>) {
    const OPEN: u32 = u32::MAX;
    let n_features = binned.thresholds.len();
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut split_bins: Vec<Option<(usize, usize)>> = vec![None];
    // position of each sampled row's node among this level's open nodes
    let mut slot = vec![0u32; rows.len()];
    let mut open: Vec<usize> = vec![0];
    let mut totals: Vec<(f64, usize)> = vec![(rows.iter().map(|&i| residual[i]).sum(), rows.len())];

    for _depth in 0..max_depth {
        if open.is_empty() {
            break;
        }
        let k = open.len();
        let best_for = |f: usize| -> Vec<Option<Candidate>> {
            let width = binned.thresholds[f].len() + 1;
            let mut hist = vec![(0.0f64, 0usize); k * width];
            let col = binned.column(f);
            for (r, &i) in rows.iter().enumerate() {
                if slot[r] == OPEN {
                    continue;
                }
                let cell = &mut hist[slot[r] as usize * width + col[i] as usize];
                cell.0 += residual[i];
                cell.1 += 1;
            }
            (0..k)
                .map(|s| {
                    let (sum, count) = totals[s];
                    let parent = sum * sum / count as f64;
                    let mut best: Option<Candidate> = None;
                    let (mut ls, mut lc) = (0.0, 0usize);
                    for b in 0..width - 1 {
                        let (hs, hc) = hist[s * width + b];
                        ls += hs;
                        lc += hc;
                        let rc = count - lc;
                        if lc == 0 || rc == 0 {
                            continue;
                        }
                        let rs = sum - ls;
                        let gain = ls * ls / lc as f64 + rs * rs / rc as f64 - parent;
                        if gain > 1e-12 * (1.0 + parent.abs()) && best.is_none_or(|c| gain > c.gain) {
                            best = Some(Candidate { gain, feature: f, bin: b });
                        }
                    }
                    best
                })
                .collect()
        };
        let per_feature: Vec<Vec<Option<Candidate>>> = match mode {
            ExecMode::Deterministic => (0..n_features).map(best_for).collect(),
            ExecMode::Fast => (0..n_features).into_par_iter().map(best_for).collect(),
        };

        let mut next_open = Vec::new();
        let mut next_totals = Vec::new();
        // for each open slot: (left slot, right slot, feature, bin) if split
        let mut routing: Vec<Option<(u32, u32, usize, usize)>> = vec![None; k];
        for s in 0..k {
            let mut best: Option<Candidate> = None;
            for cands in &per_feature {
                if let Some(c) = cands[s] {
                    if best.is_none_or(|b| c.gain > b.gain) {
                        best = Some(c);
                    }
                }
            }
            let Some(c) = best else { continue };
            let left = nodes.len();
            nodes.push(Node::Leaf { value: 0.0 });
            nodes.push(Node::Leaf { value: 0.0 });
            split_bins.push(None);
            split_bins.push(None);
            nodes[open[s]] = Node::Split {
                feature: c.feature,
                threshold: binned.thresholds[c.feature][c.bin],
                left,
                right: left + 1,
            };
            split_bins[open[s]] = Some((c.feature, c.bin));
            routing[s] = Some((next_open.len() as u32, next_open.len() as u32 + 1, c.feature, c.bin));
            next_open.push(left);
            next_open.push(left + 1);
            next_totals.push((0.0, 0));
            next_totals.push((0.0, 0));
        }
        // leaves that stop here get their value now
        let mut leaf_sums = vec![(0.0f64, 0usize); k];
        for (r, &i) in rows.iter().enumerate() {
            if slot[r] == OPEN {
                continue;
            }
            let s = slot[r] as usize;
            match routing[s] {
                Some((l, rt, f, b)) => {
                    let to = if (binned.column(f)[i] as usize) <= b { l } else { rt };
                    slot[r] = to;
                    let t = &mut next_totals[to as usize];
                    t.0 += residual[i];
                    t.1 += 1;
                }
                None => {
                    leaf_sums[s].0 += residual[i];
                    leaf_sums[s].1 += 1;
                    slot[r] = OPEN;
                }
            }
        }
        for s in 0..k {
            if routing[s].is_none() {
                let (sum, count) = leaf_sums[s];
                nodes[open[s]] = Node::Leaf {
                    value: if count > 0 { sum / count as f64 } else { 0.0 },
                };
            }
        }
        open = next_open;
        totals = next_totals;
    }
    for (s, &node) in open.iter().enumerate() {
        let (sum, count) = totals[s];
        nodes[node] = Node::Leaf {
            value: if count > 0 { sum / count as f64 } else { 0.0 },
        };
    }
    (Tree { nodes }, split_bins)
}

fn predict_binned(tree: &Tree, split_bins: &[Option<(usize, usize)>], binned: &Binned, i: usize) -> f64 {
    let mut at = 0;
    loop {
        match (&tree.nodes[at], split_bins[at]) {
            (Node::Leaf { value }, _) => return *value,
            (Node::Split { left, right, .. }, Some((f, b))) => {
                at = if (binned.column(f)[i] as usize) <= b { *left } else { *right };
            }
            (Node::Split { .. }, None) => unreachable!("split without bin"),
        }
    }
}

/// Least-squares boosting. Losses are the training mean squared error
/// before the first tree and after every tree.
pub fn train_gbrt(ds: &Dataset, cfg: &GbrtConfig, seed: u64) -> Result<Trained<GbrtModel>> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Training("cannot train on an empty dataset".into()));
    }
    let n = ds.len();
    let y = ds.labels();
    let init = y.iter().sum::<f64>() / n as f64;
    let mut fitted = vec![init; n];
    let mse = |fitted: &[f64]| fitted.iter().zip(y).map(|(f, t)| (t - f) * (t - f)).sum::<f64>() / n as f64;
    let mut losses = vec![mse(&fitted)];
    let mut trees = Vec::with_capacity(cfg.trees);
    if cfg.trees > 0 {
        let binned = Binned::build(ds, cfg.max_bins, seed);
        let take = ((cfg.subsample * n as f64).round() as usize).clamp(1, n);
        let mut residual = vec![0.0; n];
        for t in 0..cfg.trees {
            for ((r, &yt), &f) in residual.iter_mut().zip(y).zip(&fitted) {
                *r = yt - f;
            }
            let rows: Vec<usize> = if take == n {
                (0..n).collect()
            } else {
                let mut idx = index::sample(&mut rng::stream(seed, &[tag::TRAIN, t as u64]), n, take).into_vec();
                idx.sort_unstable();
                idx
            };
            let (tree, split_bins) = grow_tree(&binned, &residual, &rows, cfg.max_depth, cfg.mode);
            for (i, f) in fitted.iter_mut().enumerate() {
                *f += cfg.shrinkage * predict_binned(&tree, &split_bins, &binned, i);
            }
            losses.push(mse(&fitted));
            trees.push(tree);
        }
    }
    Ok(Trained {
        model: GbrtModel {
            dim: ds.dim(),
            init,
            shrinkage: cfg.shrinkage,
            trees,
        },
        losses,
    })
}
