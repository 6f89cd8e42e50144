use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use reachcast::features::{read_dataset, write_dataset};
use reachcast::icm::{read_cascades, write_cascades};
use reachcast::reach::{read_reach, write_reach};
use reachcast::regress::{load_model, predict_reach, save_model};
use reachcast::{
    assign_probabilities, build_dataset, embed_graph, estimate_reach, generate_cascade_set, load_edge_list, mae,
    render_table, run_experiment, sample_portion, DelimiterMode, DirectedGraph, DivisorMode, EmbeddingMatrix,
    ExecMode, ExperimentConfig, GbrtConfig, MatrixKind, MlpConfig, Model, TableFormat, TrainingMode, WalkConfig,
};

#[derive(Parser)]
#[command(name = "reachcast", version, about = "Diffusion reach estimation and prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Actual,
    Label,
    Predicted,
}

#[derive(Clone, Copy, ValueEnum)]
enum Divisor {
    Nominal,
    Perseed,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Mlp,
    Gbrt,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Markdown,
    Tsv,
}

#[derive(Subcommand)]
enum Command {
    /// Draw activation probabilities and generate r cascades per node.
    Simulate {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        max_p: f64,
        #[arg(long, default_value_t = 20)]
        r: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate a reach matrix from a cascade file.
    Estimate {
        #[arg(long)]
        cascades: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, value_enum)]
        divisor: Option<Divisor>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep a seeded fraction of a cascade file.
    Sample {
        #[arg(long)]
        cascades: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn node embeddings from biased random walks.
    Embed {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 128)]
        dims: usize,
        #[arg(long, default_value_t = 20)]
        walk_length: usize,
        #[arg(long, default_value_t = 5)]
        window: usize,
        #[arg(long, default_value_t = 10)]
        walks_per_node: usize,
        #[arg(long, default_value_t = 1.0)]
        p: f64,
        #[arg(long, default_value_t = 1.0)]
        q: f64,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long, default_value_t = 5)]
        negatives: usize,
        #[arg(long, default_value_t = 0.025)]
        learning_rate: f64,
        /// Lock-free parallel training; not bit-reproducible.
        #[arg(long)]
        fast: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a training table of link embeddings and reach labels.
    Featurize {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        zero_keep: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a regressor on a training table.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        model: ModelArg,
        /// Hidden layer sizes, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "100")]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        #[arg(long, default_value_t = 1e-4)]
        l2: f64,
        #[arg(long, default_value_t = 100)]
        trees: usize,
        #[arg(long, default_value_t = 3)]
        max_depth: usize,
        #[arg(long, default_value_t = 0.1)]
        shrinkage: f64,
        #[arg(long, default_value_t = 1.0)]
        subsample: f64,
        #[arg(long, default_value_t = 32)]
        max_bins: usize,
        /// Parallel training; results are identical to the default mode.
        #[arg(long)]
        fast: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict reach for all ordered pairs or for the pairs listed in a file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// `all`, or a file with one `src dst` label pair per line.
        #[arg(long, default_value = "all")]
        pairs: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the MAE between two reach matrices.
    Evaluate {
        #[arg(long)]
        predicted: PathBuf,
        #[arg(long)]
        actual: PathBuf,
    },
    /// Run a full experiment grid from a key = value config file.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
    },
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn load_graph(path: &Path) -> Result<DirectedGraph> {
    let (g, _) = load_edge_list(open(path)?, DelimiterMode::Auto)
        .with_context(|| format!("cannot load graph {}", path.display()))?;
    Ok(g)
}

fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::load(open(path)?).with_context(|| format!("cannot load embeddings {}", path.display()))
}

fn exec_mode(fast: bool) -> ExecMode {
    if fast {
        ExecMode::Fast
    } else {
        ExecMode::Deterministic
    }
}

/// Completes successfully, or reports whether grid cells failed.
enum Outcome {
    Done,
    CellsFailed(usize),
}

fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Simulate {
            graph,
            max_p,
            r,
            seed,
            out,
        } => {
            let g = load_graph(&graph)?;
            let probs = assign_probabilities(&g, max_p, seed)?;
            let cs = generate_cascade_set(&g, &probs, r, seed)?;
            let mut w = create(&out)?;
            write_cascades(&cs, &g, &mut w)?;
            w.flush()?;
        }
        Command::Estimate {
            cascades,
            graph,
            mode,
            divisor,
            out,
        } => {
            let g = load_graph(&graph)?;
            let cs = read_cascades(open(&cascades)?, &g)?;
            let (kind, default_divisor) = match mode {
                Mode::Actual => (MatrixKind::Actual, Divisor::Nominal),
                Mode::Label => (MatrixKind::Label, Divisor::Perseed),
                Mode::Predicted => (MatrixKind::Predicted, Divisor::Perseed),
            };
            let divisor = match divisor.unwrap_or(default_divisor) {
                Divisor::Nominal => DivisorMode::NominalR,
                Divisor::Perseed => DivisorMode::PerSeedCount,
            };
            let m = estimate_reach(&cs, divisor)?;
            let mut w = create(&out)?;
            write_reach(&m, g.labels(), kind, &mut w)?;
            w.flush()?;
        }
        Command::Sample {
            cascades,
            graph,
            fraction,
            seed,
            out,
        } => {
            let g = load_graph(&graph)?;
            let cs = read_cascades(open(&cascades)?, &g)?;
            let part = sample_portion(&cs, fraction, seed)?;
            let mut w = create(&out)?;
            write_cascades(&part, &g, &mut w)?;
            w.flush()?;
        }
        Command::Embed {
            graph,
            dims,
            walk_length,
            window,
            walks_per_node,
            p,
            q,
            epochs,
            negatives,
            learning_rate,
            fast,
            seed,
            out,
        } => {
            let g = load_graph(&graph)?;
            let cfg = WalkConfig {
                dimensions: dims,
                walk_length,
                window,
                walks_per_node,
                p,
                q,
                epochs,
                initial_learning_rate: learning_rate,
                negatives,
                mode: if fast {
                    TrainingMode::Fast
                } else {
                    TrainingMode::Deterministic
                },
            };
            let emb = embed_graph(&g, &cfg, seed)?;
            let mut w = create(&out)?;
            emb.save(&mut w)?;
            w.flush()?;
        }
        Command::Featurize {
            embeddings,
            labels,
            zero_keep,
            seed,
            out,
        } => {
            let emb = load_embeddings(&embeddings)?;
            let labelled = read_reach(open(&labels)?)?;
            let matrix = labelled.aligned_to(&emb.labels)?;
            let ds = build_dataset(Arc::new(emb), &matrix, zero_keep, seed)?;
            let mut w = create(&out)?;
            write_dataset(&ds, &mut w)?;
            w.flush()?;
        }
        Command::Train {
            data,
            model,
            hidden,
            epochs,
            batch_size,
            learning_rate,
            l2,
            trees,
            max_depth,
            shrinkage,
            subsample,
            max_bins,
            fast,
            seed,
            out,
        } => {
            let ds = read_dataset(open(&data)?)?;
            let mode = exec_mode(fast);
            let (fitted, hyper, losses) = match model {
                ModelArg::Mlp => {
                    let cfg = MlpConfig {
                        hidden,
                        epochs,
                        batch_size,
                        learning_rate,
                        l2,
                        mode,
                    };
                    let t = reachcast::train_mlp(&ds, &cfg, seed)?;
                    (Model::Mlp(t.model), serde_json::to_value(&cfg)?, t.losses)
                }
                ModelArg::Gbrt => {
                    let cfg = GbrtConfig {
                        trees,
                        max_depth,
                        shrinkage,
                        subsample,
                        max_bins,
                        mode,
                    };
                    let t = reachcast::train_gbrt(&ds, &cfg, seed)?;
                    (Model::Gbrt(t.model), serde_json::to_value(&cfg)?, t.losses)
                }
            };
            let mut w = create(&out)?;
            save_model(&fitted, hyper, &mut w)?;
            w.flush()?;
            if let Some(last) = losses.last() {
                eprintln!("final training loss {last:.6e}");
            }
        }
        Command::Predict {
            model,
            embeddings,
            pairs,
            out,
        } => {
            let m = load_model(open(&model)?)?;
            let emb = Arc::new(load_embeddings(&embeddings)?);
            let mut w = create(&out)?;
            if pairs == "all" {
                let predicted = predict_reach(&m, emb.clone())?;
                write_reach(&predicted, &emb.labels, MatrixKind::Predicted, &mut w)?;
            } else {
                let index = |label: &str| {
                    emb.labels
                        .iter()
                        .position(|l| l == label)
                        .with_context(|| format!("unknown node {label:?}"))
                };
                for (i, line) in open(Path::new(&pairs))?.lines().enumerate() {
                    let line = line?;
                    let fields: Vec<&str> = line.split_whitespace().collect();
                    if fields.is_empty() || fields[0].starts_with('#') {
                        continue;
                    }
                    if fields.len() < 2 {
                        bail!("line {}: expected `src dst`", i + 1);
                    }
                    let (u, v) = (index(fields[0])?, index(fields[1])?);
                    let x = reachcast::link_embedding(&emb, u, v)?;
                    writeln!(w, "{}\t{}\t{}", fields[0], fields[1], m.predict(&x)?)?;
                }
            }
            w.flush()?;
        }
        Command::Evaluate { predicted, actual } => {
            let p = read_reach(open(&predicted)?)?;
            let a = read_reach(open(&actual)?)?;
            let aligned = p.aligned_to(&a.labels)?;
            println!("{:.6}", mae(&aligned, &a.matrix)?);
        }
        Command::Experiment {
            config,
            output_dir,
            format,
        } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("cannot read {}", config.display()))?;
            let mut cfg = ExperimentConfig::parse(&text)?;
            if let Some(graph) = &cfg.graph {
                if graph.is_relative() {
                    if let Some(dir) = config.parent() {
                        cfg.graph = Some(dir.join(graph));
                    }
                }
            }
            if output_dir.is_some() {
                cfg.output_dir = output_dir;
            }
            let table = run_experiment(&cfg)?;
            let format = match format {
                Format::Markdown => TableFormat::Markdown,
                Format::Tsv => TableFormat::Tsv,
            };
            print!("{}", render_table(&table, format));
            let failed = table.failed_cells();
            if failed > 0 {
                return Ok(Outcome::CellsFailed(failed));
            }
        }
    }
    Ok(Outcome::Done)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::CellsFailed(n)) => {
            eprintln!("error: {n} experiment cells failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
