//! Experiment grid: cascades, actual and label matrices, embeddings, models
//! and their errors for every (max_p, portion, trial) cell.
//!
//! Artifacts are written under the output directory when one is set:
//!
//! ```text
//! embeddings.txt
//! p{i}_t{trial}/cascades.txt, actual.tsv
//! p{i}_t{trial}/f{j}/label.tsv, model_{kind}.json, predicted_{kind}.tsv, cell.json
//! results.tsv, results.md
//! ```
//!
//! A cell whose `cell.json` exists is not recomputed, and existing cascade
//! and embedding files are read back instead of regenerated.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{embed_graph, EmbeddingMatrix, TrainingMode, WalkConfig};
use crate::error::{Error, Result};
use crate::features::build_dataset;
use crate::graph::{load_edge_list, DelimiterMode, DirectedGraph};
use crate::icm::{assign_probabilities, generate_cascade_set, read_cascades, sample_portion, write_cascades, CascadeSet};
use crate::reach::{estimate_reach, mae, write_reach, DivisorMode, MatrixKind, ReachMatrix};
use crate::regress::{
    predict_reach, save_model, train_gbrt, train_mlp, ExecMode, GbrtConfig, MlpConfig, Model, ModelKind,
};
use crate::rng::{derive_seed, tag};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub graph: Option<PathBuf>,
    pub max_p: Vec<f64>,
    pub r: usize,
    pub portions: Vec<f64>,
    pub walk: WalkConfig,
    pub mlp: MlpConfig,
    pub gbrt: GbrtConfig,
    pub models: Vec<ModelKind>,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub trials: usize,
    /// Draw every portion as a prefix of one sample, so larger portions
    /// contain smaller ones.
    pub nested_sampling: bool,
    pub zero_keep: f64,
    pub save_predictions: bool,
    /// Number of (max_p, trial) groups run concurrently.
    pub parallel_cells: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            graph: None,
            max_p: vec![0.05, 0.1],
            r: 20,
            portions: vec![0.1, 0.2, 0.4, 0.6],
            walk: WalkConfig::default(),
            mlp: MlpConfig::default(),
            gbrt: GbrtConfig::default(),
            models: vec![ModelKind::Mlp, ModelKind::Gbrt],
            seed: 0,
            output_dir: None,
            trials: 1,
            nested_sampling: false,
            zero_keep: 1.0,
            save_predictions: false,
            parallel_cells: 1,
        }
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad value `{value}` for `{key}`"),
    })
}

fn parse_list<T: FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(line, key, s))
        .collect()
}

fn parse_mode(line: usize, key: &str, value: &str) -> Result<ExecMode> {
    match value {
        "deterministic" => Ok(ExecMode::Deterministic),
        "fast" => Ok(ExecMode::Fast),
        _ => Err(Error::Parse {
            line,
            message: format!("`{key}` must be deterministic or fast"),
        }),
    }
}

impl ExperimentConfig {
    /// Parses `key = value` lines. Lists are comma separated; `#` starts a
    /// comment. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                message: "expected `key = value`".into(),
            })?;
            let (key, v) = (key.trim(), value.trim());
            match key {
                "graph" => cfg.graph = Some(PathBuf::from(v)),
                "max_p" => cfg.max_p = parse_list(line, key, v)?,
                "r" => cfg.r = parse_value(line, key, v)?,
                "portions" => cfg.portions = parse_list(line, key, v)?,
                "models" => {
                    cfg.models = v
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| {
                            ModelKind::parse(s).map_err(|e| Error::Parse {
                                line,
                                message: e.to_string(),
                            })
                        })
                        .collect::<Result<_>>()?
                }
                "seed" => cfg.seed = parse_value(line, key, v)?,
                "output_dir" => cfg.output_dir = Some(PathBuf::from(v)),
                "trials" => cfg.trials = parse_value(line, key, v)?,
                "nested_sampling" => cfg.nested_sampling = parse_value(line, key, v)?,
                "zero_keep" => cfg.zero_keep = parse_value(line, key, v)?,
                "save_predictions" => cfg.save_predictions = parse_value(line, key, v)?,
                "parallel_cells" => cfg.parallel_cells = parse_value(line, key, v)?,
                "walk.dimensions" => cfg.walk.dimensions = parse_value(line, key, v)?,
                "walk.walk_length" => cfg.walk.walk_length = parse_value(line, key, v)?,
                "walk.window" => cfg.walk.window = parse_value(line, key, v)?,
                "walk.walks_per_node" => cfg.walk.walks_per_node = parse_value(line, key, v)?,
                "walk.p" => cfg.walk.p = parse_value(line, key, v)?,
                "walk.q" => cfg.walk.q = parse_value(line, key, v)?,
                "walk.epochs" => cfg.walk.epochs = parse_value(line, key, v)?,
                "walk.learning_rate" => cfg.walk.initial_learning_rate = parse_value(line, key, v)?,
                "walk.negatives" => cfg.walk.negatives = parse_value(line, key, v)?,
                "walk.mode" => {
                    cfg.walk.mode = match parse_mode(line, key, v)? {
                        ExecMode::Deterministic => TrainingMode::Deterministic,
                        ExecMode::Fast => TrainingMode::Fast,
                    }
                }
                "mlp.hidden" => cfg.mlp.hidden = parse_list(line, key, v)?,
                "mlp.epochs" => cfg.mlp.epochs = parse_value(line, key, v)?,
                "mlp.batch_size" => cfg.mlp.batch_size = parse_value(line, key, v)?,
                "mlp.learning_rate" => cfg.mlp.learning_rate = parse_value(line, key, v)?,
                "mlp.l2" => cfg.mlp.l2 = parse_value(line, key, v)?,
                "mlp.mode" => cfg.mlp.mode = parse_mode(line, key, v)?,
                "gbrt.trees" => cfg.gbrt.trees = parse_value(line, key, v)?,
                "gbrt.max_depth" => cfg.gbrt.max_depth = parse_value(line, key, v)?,
                "gbrt.shrinkage" => cfg.gbrt.shrinkage = parse_value(line, key, v)?,
                "gbrt.subsample" => cfg.gbrt.subsample = parse_value(line, key, v)?,
                "gbrt.max_bins" => cfg.gbrt.max_bins = parse_value(line, key, v)?,
                "gbrt.mode" => cfg.gbrt.mode = parse_mode(line, key, v)?,
                _ => {
                    return Err(Error::Parse {
                        line,
                        message: format!("unknown key `{key}`"),
                    })
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.r < 1 || self.trials < 1 || self.parallel_cells < 1 {
            return Err(Error::Param("r, trials and parallel_cells must be at least 1".into()));
        }
        if self.max_p.is_empty() || self.max_p.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::Param("max_p values must lie in (0, 1]".into()));
        }
        if self.portions.is_empty() || self.portions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(Error::Param("portions must lie in (0, 1]".into()));
        }
        if !(self.zero_keep > 0.0 && self.zero_keep <= 1.0) {
            return Err(Error::Param("zero_keep must lie in (0, 1]".into()));
        }
        self.walk.validate()?;
        for m in &self.models {
            match m {
                ModelKind::Mlp => self.mlp.validate()?,
                ModelKind::Gbrt => self.gbrt.validate()?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub model: String,
    pub mae: Option<f64>,
    pub train_secs: f64,
    pub predict_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub max_p: f64,
    pub portion: f64,
    pub trial: usize,
    pub bm: Option<f64>,
    pub models: Vec<ModelResult>,
    /// Simulation plus actual-matrix time of the row's (max_p, trial) group.
    pub cascade_secs: f64,
    /// Sampling plus label-matrix time.
    pub label_secs: f64,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn model_mae(&self, kind: ModelKind) -> Option<f64> {
        self.models.iter().find(|m| m.model == kind.as_str()).and_then(|m| m.mae)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub models: Vec<ModelKind>,
    pub rows: Vec<ResultRow>,
    pub embed_secs: f64,
}

impl ResultTable {
    pub fn failed_cells(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn row(&self, max_p: f64, portion: f64, trial: usize) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.max_p == max_p && r.portion == portion && r.trial == trial)
    }

    /// The same table with every runtime set to zero, for comparing runs.
    pub fn without_runtimes(&self) -> ResultTable {
        let mut t = self.clone();
        t.embed_secs = 0.0;
        for row in &mut t.rows {
            row.cascade_secs = 0.0;
            row.label_secs = 0.0;
            for m in &mut row.models {
                m.train_secs = 0.0;
                m.predict_secs = 0.0;
            }
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Tsv,
    Markdown,
}

fn fmt_mae(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.4}"))
}

/// Renders one line per row: keys, BM and model MAE to four decimals,
/// status, then runtimes in seconds.
pub fn render_table(rt: &ResultTable, format: TableFormat) -> String {
    let mut header: Vec<String> = ["max_p", "portion", "trial", "bm"].map(String::from).to_vec();
    header.extend(rt.models.iter().map(|m| m.as_str().to_string()));
    header.extend(["status", "cascade_secs", "label_secs"].map(String::from));
    for m in &rt.models {
        header.push(format!("{}_train_secs", m.as_str()));
        header.push(format!("{}_predict_secs", m.as_str()));
    }
    let lines: Vec<Vec<String>> = rt
        .rows
        .iter()
        .map(|row| {
            let mut cells = vec![
                row.max_p.to_string(),
                row.portion.to_string(),
                row.trial.to_string(),
                fmt_mae(row.bm),
            ];
            let result = |m: &ModelKind| row.models.iter().find(|r| r.model == m.as_str());
            cells.extend(rt.models.iter().map(|m| fmt_mae(result(m).and_then(|r| r.mae))));
            cells.push(match &row.error {
                None => "ok".into(),
                Some(e) => format!("failed: {}", e.replace(['\t', '\n', '|'], " ")),
            });
            cells.push(format!("{:.3}", row.cascade_secs));
            cells.push(format!("{:.3}", row.label_secs));
            for m in &rt.models {
                let (t, p) = result(m).map_or((0.0, 0.0), |r| (r.train_secs, r.predict_secs));
                cells.push(format!("{t:.3}"));
                cells.push(format!("{p:.3}"));
            }
            cells
        })
        .collect();
    let mut out = String::new();
    match format {
        TableFormat::Tsv => {
            for cells in std::iter::once(&header).chain(&lines) {
                out.push_str(&cells.join("\t"));
                out.push('\n');
            }
        }
        TableFormat::Markdown => {
            let row = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
            out.push_str(&row(&header));
            out.push_str(&row(&vec!["---".to_string(); header.len()]));
            for cells in &lines {
                out.push_str(&row(cells));
            }
        }
    }
    out
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let value = f()?;
    Ok((value, start.elapsed().as_secs_f64()))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("partial");
    let mut w = BufWriter::new(File::create(&tmp)?);
    f(&mut w)?;
    w.flush()?;
    drop(w);
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Runner<'a> {
    g: &'a DirectedGraph,
    cfg: &'a ExperimentConfig,
    emb: Arc<EmbeddingMatrix>,
}

/// Seed coordinates of a stage in group `(i, trial)`.
fn cell_seed(master: u64, stage: u64, i: usize, trial: usize, extra: &[u64]) -> u64 {
    let mut coords = vec![stage, i as u64, trial as u64];
    coords.extend_from_slice(extra);
    derive_seed(master, &coords)
}

impl Runner<'_> {
    fn group_dir(&self, i: usize, trial: usize) -> Option<PathBuf> {
        self.cfg.output_dir.as_ref().map(|d| d.join(format!("p{i}_t{trial}")))
    }

    fn cascades(&self, i: usize, trial: usize) -> Result<(CascadeSet, ReachMatrix)> {
        let dir = self.group_dir(i, trial);
        let path = dir.as_ref().map(|d| d.join("cascades.txt"));
        let cs = match &path {
            Some(p) if p.exists() => read_cascades(BufReader::new(File::open(p)?), self.g)?,
            _ => {
                let probs = assign_probabilities(self.g, self.cfg.max_p[i], cell_seed(self.cfg.seed, tag::PROBS, i, trial, &[]))?;
                let cs = generate_cascade_set(self.g, &probs, self.cfg.r, cell_seed(self.cfg.seed, tag::CASCADES, i, trial, &[]))?;
                if let (Some(d), Some(p)) = (&dir, &path) {
                    fs::create_dir_all(d)?;
                    write_file(p, |w| write_cascades(&cs, self.g, w))?;
                }
                cs
            }
        };
        let actual = estimate_reach(&cs, DivisorMode::NominalR)?;
        if let Some(d) = &dir {
            write_file(&d.join("actual.tsv"), |w| write_reach(&actual, self.g.labels(), MatrixKind::Actual, w))?;
        }
        Ok((cs, actual))
    }

    fn cell(&self, i: usize, j: usize, trial: usize, cs: &CascadeSet, actual: &ReachMatrix) -> Result<ResultRow> {
        let cfg = self.cfg;
        let dir = self.group_dir(i, trial).map(|d| d.join(format!("f{j}")));
        if let Some(d) = &dir {
            fs::create_dir_all(d)?;
        }
        let sample_coords: &[u64] = if cfg.nested_sampling { &[] } else { &[j as u64] };
        let ((label, bm), label_secs) = timed(|| {
            let part = sample_portion(cs, cfg.portions[j], cell_seed(cfg.seed, tag::SAMPLE, i, trial, sample_coords))?;
            let label = estimate_reach(&part, DivisorMode::PerSeedCount)?;
            let bm = mae(&label, actual)?;
            Ok((label, bm))
        })?;
        if let Some(d) = &dir {
            write_file(&d.join("label.tsv"), |w| write_reach(&label, self.g.labels(), MatrixKind::Label, w))?;
        }
        let mut models = Vec::new();
        for &kind in &cfg.models {
            let k = kind as u64;
            let (model, train_secs) = timed(|| {
                let ds = build_dataset(
                    self.emb.clone(),
                    &label,
                    cfg.zero_keep,
                    cell_seed(cfg.seed, tag::DATASET, i, trial, &[j as u64]),
                )?;
                let seed = cell_seed(cfg.seed, tag::TRAIN, i, trial, &[j as u64, k]);
                Ok(match kind {
                    ModelKind::Mlp => Model::Mlp(train_mlp(&ds, &cfg.mlp, seed)?.model),
                    ModelKind::Gbrt => Model::Gbrt(train_gbrt(&ds, &cfg.gbrt, seed)?.model),
                })
            })?;
            let (predicted, predict_secs) = timed(|| predict_reach(&model, self.emb.clone()))?;
            let err = mae(&predicted, actual)?;
            if let Some(d) = &dir {
                let hyper = match kind {
                    ModelKind::Mlp => serde_json::to_value(&cfg.mlp),
                    ModelKind::Gbrt => serde_json::to_value(&cfg.gbrt),
                }
                .map_err(|e| Error::Format(e.to_string()))?;
                write_file(&d.join(format!("model_{}.json", kind.as_str())), |w| save_model(&model, hyper, w))?;
                if cfg.save_predictions {
                    write_file(&d.join(format!("predicted_{}.tsv", kind.as_str())), |w| {
                        write_reach(&predicted, self.g.labels(), MatrixKind::Predicted, w)
                    })?;
                }
            }
            models.push(ModelResult {
                model: kind.as_str().into(),
                mae: Some(err),
                train_secs,
                predict_secs,
            });
        }
        Ok(ResultRow {
            max_p: cfg.max_p[i],
            portion: cfg.portions[j],
            trial,
            bm: Some(bm),
            models,
            cascade_secs: 0.0,
            label_secs,
            error: None,
        })
    }

    fn failed(&self, i: usize, j: usize, trial: usize, e: &Error) -> ResultRow {
        ResultRow {
            max_p: self.cfg.max_p[i],
            portion: self.cfg.portions[j],
            trial,
            bm: None,
            models: Vec::new(),
            cascade_secs: 0.0,
            label_secs: 0.0,
            error: Some(e.to_string()),
        }
    }

    fn stored(&self, i: usize, j: usize, trial: usize) -> Option<ResultRow> {
        let path = self.group_dir(i, trial)?.join(format!("f{j}")).join("cell.json");
        let row: ResultRow = serde_json::from_reader(BufReader::new(File::open(path).ok()?)).ok()?;
        (row.error.is_none()).then_some(row)
    }

    fn group(&self, i: usize, trial: usize) -> Vec<ResultRow> {
        let n = self.cfg.portions.len();
        let mut rows: Vec<Option<ResultRow>> = (0..n).map(|j| self.stored(i, j, trial)).collect();
        if rows.iter().all(Option::is_some) {
            return rows.into_iter().flatten().collect();
        }
        let (cs, actual, cascade_secs) = match timed(|| self.cascades(i, trial)) {
            Ok(((cs, actual), secs)) => (cs, actual, secs),
            Err(e) => return (0..n).map(|j| self.failed(i, j, trial, &e)).collect(),
        };
        for (j, slot) in rows.iter_mut().enumerate() {
            if slot.is_some() {
                continue;
            }
            let mut row = self.cell(i, j, trial, &cs, &actual).unwrap_or_else(|e| self.failed(i, j, trial, &e));
            row.cascade_secs = cascade_secs;
            if row.error.is_none() {
                if let Some(d) = self.group_dir(i, trial) {
                    let path = d.join(format!("f{j}")).join("cell.json");
                    if let Err(e) = write_file(&path, |w| {
                        serde_json::to_writer_pretty(&mut *w, &row).map_err(|e| Error::Format(e.to_string()))
                    }) {
                        row.error = Some(e.to_string());
                    }
                }
            }
            *slot = Some(row);
        }
        rows.into_iter().flatten().collect()
    }
}

fn embeddings(g: &DirectedGraph, cfg: &ExperimentConfig) -> Result<EmbeddingMatrix> {
    let path = cfg.output_dir.as_ref().map(|d| d.join("embeddings.txt"));
    if let Some(p) = &path {
        if p.exists() {
            let emb = EmbeddingMatrix::load(BufReader::new(File::open(p)?))?;
            if emb.labels == g.labels() && emb.dims == cfg.walk.dimensions {
                return Ok(emb);
            }
        }
    }
    let emb = embed_graph(g, &cfg.walk, derive_seed(cfg.seed, &[tag::WALKS]))?;
    if let Some(p) = &path {
        write_file(p, |w| emb.save(w))?;
    }
    Ok(emb)
}

/// Loads the configured graph and runs the grid.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let path = cfg
        .graph
        .as_ref()
        .ok_or_else(|| Error::Param("experiment config has no graph".into()))?;
    let (g, _) = load_edge_list(BufReader::new(File::open(path)?), DelimiterMode::Auto)?;
    run_experiment_on(&g, cfg)
}

/// Runs every (max_p, portion, trial) cell on `g`. Cell failures are recorded
/// in the table; only configuration and embedding errors abort the run.
pub fn run_experiment_on(g: &DirectedGraph, cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    if let Some(d) = &cfg.output_dir {
        fs::create_dir_all(d)?;
    }
    let models_needed = !cfg.models.is_empty();
    let (emb, embed_secs) = if models_needed {
        timed(|| embeddings(g, cfg))?
    } else {
        (
            EmbeddingMatrix {
                labels: Vec::new(),
                dims: 0,
                input: Vec::new(),
                context: Vec::new(),
            },
            0.0,
        )
    };
    let runner = Runner {
        g,
        cfg,
        emb: Arc::new(emb),
    };
    let groups: Vec<(usize, usize)> = (0..cfg.max_p.len())
        .flat_map(|i| (0..cfg.trials).map(move |t| (i, t)))
        .collect();
    let results: Vec<Vec<ResultRow>> = if cfg.parallel_cells > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallel_cells)
            .build()
            .map_err(|e| Error::Param(e.to_string()))?;
        pool.install(|| groups.par_iter().map(|&(i, t)| runner.group(i, t)).collect())
    } else {
        groups.iter().map(|&(i, t)| runner.group(i, t)).collect()
    };
    // rows ordered by max_p, portion, trial
    let mut rows: Vec<ResultRow> = results.into_iter().flatten().collect();
    let p_index = |x: f64| cfg.portions.iter().position(|&p| p == x).unwrap_or(usize::MAX);
    let m_index = |x: f64| cfg.max_p.iter().position(|&p| p == x).unwrap_or(usize::MAX);
    rows.sort_by_key(|r| (m_index(r.max_p), p_index(r.portion), r.trial));
    let table = ResultTable {
        models: cfg.models.clone(),
        rows,
        embed_secs,
    };
    if let Some(d) = &cfg.output_dir {
        write_file(&d.join("results.tsv"), |w| Ok(w.write_all(render_table(&table, TableFormat::Tsv).as_bytes())?))?;
        write_file(&d.join("results.md"), |w| {
            Ok(w.write_all(render_table(&table, TableFormat::Markdown).as_bytes())?)
        })?;
    }
    Ok(table)
}

/// Median of the values, `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.to_vec();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}
