//! Link features and regression datasets.
//!
//! The feature vector of an ordered pair `(u, v)` is `e_u` followed by
//! `e_v`. A dataset built from an embedding matrix keeps only the pair list
//! and labels and produces feature rows on demand.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::embed::EmbeddingMatrix;
use crate::error::{check_index, Error, Result};
use crate::reach::ReachMatrix;
use crate::rng::{self, tag};

/// Concatenated embedding `[e_src | e_dst]` of an ordered pair.
pub fn link_embedding(emb: &EmbeddingMatrix, src: usize, dst: usize) -> Result<Vec<f32>> {
    check_index(src, emb.node_count())?;
    check_index(dst, emb.node_count())?;
    if src == dst {
        return Err(Error::Domain(format!("link embedding of ({src}, {src}) is undefined")));
    }
    let mut out = Vec::with_capacity(2 * emb.dims);
    out.extend_from_slice(emb.vector(src));
    out.extend_from_slice(emb.vector(dst));
    Ok(out)
}

/// One dataset row.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkFeature {
    pub src: usize,
    pub dst: usize,
    pub vector: Vec<f32>,
    pub label: f64,
}

/// Where a dataset came from.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Provenance {
    pub embedding_fingerprint: u64,
    pub labels_fingerprint: u64,
    pub zero_keep_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
enum Features {
    Dense(Vec<f32>),
    Concat(Arc<EmbeddingMatrix>),
}

/// Rows of features with probability labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    labels: Vec<f64>,
    pairs: Vec<(usize, usize)>,
    node_labels: Vec<String>,
    features: Features,
    pub provenance: Provenance,
}

impl Dataset {
    /// A dataset over explicit feature rows (row-major, `dim` per row).
    pub fn dense(dim: usize, features: Vec<f32>, labels: Vec<f64>) -> Result<Self> {
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(Error::Dimension {
                expected: dim * labels.len(),
                found: features.len(),
            });
        }
        check_labels(&labels)?;
        Ok(Dataset {
            dim,
            labels,
            pairs: Vec::new(),
            node_labels: Vec::new(),
            features: Features::Dense(features),
            provenance: Provenance::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// `(src, dst)` of every row; empty for datasets without pair identity.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Copies the features of row `i` into `out`.
    pub fn fill_row(&self, i: usize, out: &mut [f32]) {
        match &self.features {
            Features::Dense(values) => out.copy_from_slice(&values[i * self.dim..(i + 1) * self.dim]),
            Features::Concat(emb) => {
                let (u, v) = self.pairs[i];
                let d = emb.dims;
                out[..d].copy_from_slice(emb.vector(u));
                out[d..].copy_from_slice(emb.vector(v));
            }
        }
    }

    pub fn row(&self, i: usize) -> LinkFeature {
        let mut vector = vec![0.0; self.dim];
        self.fill_row(i, &mut vector);
        let (src, dst) = self.pairs.get(i).copied().unwrap_or((i, i));
        LinkFeature {
            src,
            dst,
            vector,
            label: self.labels[i],
        }
    }
}

fn check_labels(labels: &[f64]) -> Result<()> {
    match labels.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        Some(bad) => Err(Error::Domain(format!("label {bad} outside [0, 1]"))),
        None => Ok(()),
    }
}

/// FNV-1a over a byte stream; identifies inputs in dataset provenance.
fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    bytes.into_iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn embedding_fingerprint(emb: &EmbeddingMatrix) -> u64 {
    fnv1a(emb.input.iter().flat_map(|v| v.to_bits().to_le_bytes()))
}

pub fn reach_fingerprint(m: &ReachMatrix) -> u64 {
    fnv1a((0..m.node_count()).flat_map(|u| {
        m.row(u)
            .iter()
            .flat_map(move |&(v, p)| [u as u64, v as u64, p.to_bits()])
            .flat_map(u64::to_le_bytes)
    }))
}

/// One row per ordered pair `(u, v)`, `u != v`, in `(u, v)` order with
/// label `labels(u, v)`. Zero-label rows are kept independently with
/// probability `zero_keep_fraction`; positive rows are always kept.
pub fn build_dataset(
    emb: Arc<EmbeddingMatrix>,
    labels: &ReachMatrix,
    zero_keep_fraction: f64,
    seed: u64,
) -> Result<Dataset> {
    let n = emb.node_count();
    if labels.node_count() != n {
        return Err(Error::Dimension {
            expected: n,
            found: labels.node_count(),
        });
    }
    if !(zero_keep_fraction > 0.0 && zero_keep_fraction <= 1.0) {
        return Err(Error::Param(format!(
            "zero_keep_fraction must lie in (0, 1], got {zero_keep_fraction}"
        )));
    }
    let blocks: Vec<(Vec<(usize, usize)>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|u| {
            let mut rng = rng::stream(seed, &[tag::DATASET, u as u64]);
            let dense = labels.dense_row(u);
            let mut pairs = Vec::with_capacity(n - 1);
            let mut ys = Vec::with_capacity(n - 1);
            for (v, &y) in dense.iter().enumerate() {
                if v == u {
                    continue;
                }
                if y == 0.0 && zero_keep_fraction < 1.0 && rng.random::<f64>() >= zero_keep_fraction {
                    continue;
                }
                pairs.push((u, v));
                ys.push(y);
            }
            (pairs, ys)
        })
        .collect();
    let mut pairs = Vec::new();
    let mut ys = Vec::new();
    for (p, y) in blocks {
        pairs.extend(p);
        ys.extend(y);
    }
    Ok(Dataset {
        dim: 2 * emb.dims,
        labels: ys,
        pairs,
        node_labels: emb.labels.clone(),
        provenance: Provenance {
            embedding_fingerprint: embedding_fingerprint(&emb),
            labels_fingerprint: reach_fingerprint(labels),
            zero_keep_fraction,
            seed,
        },
        features: Features::Concat(emb),
    })
}

const DATASET_MAGIC: &str = "#reachcast-dataset v1";

/// Writes `src TAB dst TAB label TAB f1,...,f2d` rows under a header.
pub fn write_dataset<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    if ds.pairs.len() != ds.len() {
        return Err(Error::Format("only datasets with pair identity can be written".into()));
    }
    writeln!(w, "{DATASET_MAGIC} dim={} rows={}", ds.dim, ds.len())?;
    let mut buf = vec![0.0f32; ds.dim];
    for i in 0..ds.len() {
        let (u, v) = ds.pairs[i];
        ds.fill_row(i, &mut buf);
        write!(w, "{}\t{}\t{}\t", ds.node_labels[u], ds.node_labels[v], ds.labels[i])?;
        for (k, x) in buf.iter().enumerate() {
            if k > 0 {
                w.write_all(b",")?;
            }
            write!(w, "{x}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Reads a dataset file into a dense, materialized dataset.
pub fn read_dataset<R: BufRead>(source: R) -> Result<Dataset> {
    let mut lines = source.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::Format("empty dataset file".into()))?;
    let mut dim = None;
    let mut rows = None;
    for (k, v) in crate::icm::parse_header_fields(&header, DATASET_MAGIC)? {
        let parsed = v.parse::<usize>().ok();
        match k {
            "dim" => dim = parsed,
            "rows" => rows = parsed,
            _ => {}
        }
    }
    let (Some(dim), Some(rows)) = (dim, rows) else {
        return Err(Error::Format("dataset header lacks dim or rows".into()));
    };
    let mut node_labels = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut intern = |l: &str, node_labels: &mut Vec<String>| {
        *index.entry(l.to_string()).or_insert_with(|| {
            node_labels.push(l.to_string());
            node_labels.len() - 1
        })
    };
    let mut features = Vec::with_capacity(rows * dim);
    let mut labels = Vec::with_capacity(rows);
    let mut pairs = Vec::with_capacity(rows);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::Parse { line: lineno, message: m };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad(format!("expected 4 tab-separated fields, got {}", f.len())));
        }
        let u = intern(f[0], &mut node_labels);
        let v = intern(f[1], &mut node_labels);
        let y: f64 = f[2].parse().map_err(|_| bad(format!("bad label {:?}", f[2])))?;
        let before = features.len();
        for tok in f[3].split(',') {
            features.push(tok.parse::<f32>().map_err(|_| bad(format!("bad feature {tok:?}")))?);
        }
        if features.len() - before != dim {
            return Err(Error::Dimension {
                expected: dim,
                found: features.len() - before,
            });
        }
        pairs.push((u, v));
        labels.push(y);
    }
    if labels.len() != rows {
        return Err(Error::Format(format!("header promises {rows} rows, found {}", labels.len())));
    }
    let mut ds = Dataset::dense(dim, features, labels)?;
    ds.pairs = pairs;
    ds.node_labels = node_labels;
    Ok(ds)
}
