//! Node embeddings from biased random walks and skip-gram training.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::graph::DirectedGraph;

pub mod sgns;
pub mod walk;

pub use sgns::train_skipgram;
pub use walk::generate_walks;

/// Whether skip-gram updates run on one worker in canonical order or on
/// all workers without synchronization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrainingMode {
    #[default]
    Deterministic,
    Fast,
}

/// Walk and skip-gram hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkConfig {
    pub dimensions: usize,
    pub walk_length: usize,
    pub window: usize,
    pub walks_per_node: usize,
    /// Return parameter.
    pub p: f64,
    /// In-out parameter.
    pub q: f64,
    pub epochs: usize,
    pub initial_learning_rate: f64,
    pub negatives: usize,
    pub mode: TrainingMode,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            dimensions: 128,
            walk_length: 20,
            window: 5,
            walks_per_node: 10,
            p: 1.0,
            q: 1.0,
            epochs: 5,
            initial_learning_rate: 0.025,
            negatives: 5,
            mode: TrainingMode::Deterministic,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("dimensions", self.dimensions),
            ("walk_length", self.walk_length),
            ("window", self.window),
            ("walks_per_node", self.walks_per_node),
            ("epochs", self.epochs),
            ("negatives", self.negatives),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Param(format!("{name} must be at least 1")));
        }
        for (name, v) in [("p", self.p), ("q", self.q), ("learning rate", self.initial_learning_rate)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Param(format!("{name} must be positive, got {v}")));
            }
        }
        if self.window > self.walk_length {
            return Err(Error::Param("window may not exceed walk length".into()));
        }
        Ok(())
    }
}

/// Input vectors (the embeddings) plus the context vectors used while
/// training, both `node_count x dims`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub labels: Vec<String>,
    pub dims: usize,
    pub input: Vec<f32>,
    pub context: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn vector(&self, u: usize) -> &[f32] {
        &self.input[u * self.dims..(u + 1) * self.dims]
    }

    pub fn context_vector(&self, u: usize) -> &[f32] {
        &self.context[u * self.dims..(u + 1) * self.dims]
    }

    /// Writes `<nodes> <dims>` followed by `<label> <f1> ... <fd>` lines
    /// with 9 significant digits.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.node_count(), self.dims)?;
        for (u, label) in self.labels.iter().enumerate() {
            w.write_all(label.as_bytes())?;
            for x in self.vector(u) {
                write!(w, " {x:.8e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads the text format written by `save`. Context vectors come back
    /// as zeros.
    pub fn load<R: BufRead>(source: R) -> Result<Self> {
        let mut lines = source.lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::Format("empty embedding file".into()))?;
        let dims_err = || Error::Format(format!("bad embedding header {header:?}"));
        let mut it = header.split_whitespace().map(str::parse::<usize>);
        let (Some(Ok(n)), Some(Ok(dims)), None) = (it.next(), it.next(), it.next()) else {
            return Err(dims_err());
        };
        let mut labels = Vec::with_capacity(n);
        let mut input = Vec::with_capacity(n * dims);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let label = parts.next().unwrap_or_default().to_string();
            let before = input.len();
            for tok in parts {
                let v: f32 = tok.parse().map_err(|_| Error::Parse {
                    line: i + 2,
                    message: format!("bad value {tok:?}"),
                })?;
                input.push(v);
            }
            if input.len() - before != dims {
                return Err(Error::Format(format!(
                    "line {} has {} values, expected {dims}",
                    i + 2,
                    input.len() - before
                )));
            }
            labels.push(label);
        }
        if labels.len() != n {
            return Err(Error::Format(format!("expected {n} rows, found {}", labels.len())));
        }
        Ok(EmbeddingMatrix {
            labels,
            dims,
            input,
            context: vec![0.0; n * dims],
        })
    }
}

/// Walks the graph and trains embeddings, labelling rows with the graph's
/// node labels.
pub fn embed_graph(g: &DirectedGraph, cfg: &WalkConfig, seed: u64) -> Result<EmbeddingMatrix> {
    let corpus = generate_walks(g, cfg, seed)?;
    let mut emb = train_skipgram(&corpus, g.node_count(), cfg, seed)?;
    emb.labels = g.labels().to_vec();
    Ok(emb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(WalkConfig::default().validate().is_ok());
        let bad = [
            WalkConfig { window: 0, ..Default::default() },
            WalkConfig { p: 0.0, ..Default::default() },
            WalkConfig { q: -1.0, ..Default::default() },
            WalkConfig { window: 30, ..Default::default() },
            WalkConfig { initial_learning_rate: 0.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn text_round_trip() {
        let emb = sgns::initialize(3, 4, 9);
        let mut buf = Vec::new();
        emb.save(&mut buf).unwrap();
        assert!(buf.starts_with(b"3 4\n0 "));
        let back = EmbeddingMatrix::load(buf.as_slice()).unwrap();
        assert_eq!(back.labels, emb.labels);
        for (a, b) in back.input.iter().zip(&emb.input) {
            assert!((a - b).abs() <= 1e-7);
        }
    }

    #[test]
    fn inconsistent_rows_rejected() {
        assert!(EmbeddingMatrix::load("2 2\na 1 2\nb 1\n".as_bytes()).is_err());
        assert!(EmbeddingMatrix::load("2 2\na 1 2\n".as_bytes()).is_err());
        assert!(EmbeddingMatrix::load("2\n".as_bytes()).is_err());
    }
}
