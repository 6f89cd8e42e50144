//! Diffusion reach probabilities on directed graphs.
//!
//! The pipeline simulates Independent Cascade Model diffusions, estimates
//! reach probabilities from complete and partial cascade sets, embeds nodes
//! with biased random walks and skip-gram training, and fits regressors on
//! concatenated pair embeddings to predict reach probability for any
//! ordered node pair.

pub mod embed;
pub mod error;
pub mod features;
pub mod graph;
pub mod harness;
pub mod icm;
pub mod reach;
pub mod regress;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use graph::{load_edge_list, DelimiterMode, DirectedGraph, LoadReport};
pub use icm::{
    assign_probabilities, generate_cascade_set, run_icm, sample_portion, ActivationProbabilities, Cascade,
    CascadeSet, Fingerprint, Simulator,
};
pub use harness::{render_table, run_experiment, run_experiment_on, ExperimentConfig, ResultRow, ResultTable, TableFormat};
pub use reach::{estimate_reach, exact_reach_bruteforce, mae, DivisorMode, MatrixKind, ReachMatrix};
pub use embed::{embed_graph, EmbeddingMatrix, TrainingMode, WalkConfig};
pub use regress::{
    load_model, load_model_of, predict_reach, save_model, train_gbrt, train_mlp, ExecMode, GbrtConfig, GbrtModel,
    MlpConfig, MlpModel, Model, ModelKind, Trained,
};
pub use features::{build_dataset, link_embedding, Dataset, LinkFeature};
