//! Regressors from link embeddings to reach probability.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::features::{build_dataset, Dataset};
use crate::reach::ReachMatrix;

pub mod gbrt;
pub mod mlp;

pub use gbrt::{train_gbrt, GbrtConfig, GbrtModel};
pub use mlp::{train_mlp, MlpConfig, MlpModel};

/// `Fast` parallelises work whose results do not depend on scheduling, so
/// both modes produce identical models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ExecMode {
    #[default]
    Deterministic,
    Fast,
}

/// A fitted model and its per-epoch (MLP) or per-stage (GBRT) training loss.
#[derive(Debug, Clone)]
pub struct Trained<M> {
    pub model: M,
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Mlp,
    Gbrt,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Gbrt => "gbrt",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(ModelKind::Mlp),
            "gbrt" => Ok(ModelKind::Gbrt),
            other => Err(Error::Param(format!("unknown model type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Mlp(MlpModel),
    Gbrt(GbrtModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Mlp(_) => ModelKind::Mlp,
            Model::Gbrt(_) => ModelKind::Gbrt,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::Mlp(m) => m.input_dim(),
            Model::Gbrt(m) => m.dim,
        }
    }

    /// Prediction for one feature vector, clipped to `[0, 1]`.
    pub fn predict(&self, features: &[f32]) -> Result<f64> {
        match self {
            Model::Mlp(m) => m.predict(features),
            Model::Gbrt(m) => m.predict(features),
        }
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<f64>> {
        match self {
            Model::Mlp(m) => m.predict_dataset(ds),
            Model::Gbrt(m) => m.predict_dataset(ds),
        }
    }
}

const MODEL_FORMAT: &str = "reachcast-model";
const MODEL_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u64,
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    hyperparameters: Value,
    model: Value,
}

/// Writes a model as a versioned JSON document. `hyperparameters` is stored
/// for reference only.
pub fn save_model<W: Write>(model: &Model, hyperparameters: Value, w: W) -> Result<()> {
    let body = match model {
        Model::Mlp(m) => serde_json::to_value(m),
        Model::Gbrt(m) => serde_json::to_value(m),
    }
    .map_err(|e| Error::Format(e.to_string()))?;
    let env = Envelope {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        kind: model.kind().as_str().into(),
        hyperparameters,
        model: body,
    };
    serde_json::to_writer(w, &env).map_err(|e| Error::Format(e.to_string()))
}

pub fn load_model<R: Read>(r: R) -> Result<Model> {
    let env: Envelope = serde_json::from_reader(r).map_err(|e| Error::Format(e.to_string()))?;
    if env.format != MODEL_FORMAT {
        return Err(Error::Format(format!("not a model file (format `{}`)", env.format)));
    }
    if env.version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {}", env.version)));
    }
    let bad = |e: serde_json::Error| Error::Format(e.to_string());
    let model = match ModelKind::parse(&env.kind).map_err(|_| Error::Format(format!("unknown model type `{}`", env.kind)))? {
        ModelKind::Mlp => {
            let m: MlpModel = serde_json::from_value(env.model).map_err(bad)?;
            m.check()?;
            Model::Mlp(m)
        }
        ModelKind::Gbrt => {
            let m: GbrtModel = serde_json::from_value(env.model).map_err(bad)?;
            m.check()?;
            Model::Gbrt(m)
        }
    };
    Ok(model)
}

/// Loads a model and requires it to be of the given kind.
pub fn load_model_of<R: Read>(r: R, expected: ModelKind) -> Result<Model> {
    let model = load_model(r)?;
    if model.kind() != expected {
        return Err(Error::ModelType {
            expected: expected.as_str().into(),
            found: model.kind().as_str().into(),
        });
    }
    Ok(model)
}

/// Predicted reach for every ordered pair `u != v`. Row counts are zero.
pub fn predict_reach(model: &Model, emb: Arc<EmbeddingMatrix>) -> Result<ReachMatrix> {
    let n = emb.node_count();
    let ds = build_dataset(emb, &ReachMatrix::zeros(n), 1.0, 0)?;
    let preds = model.predict_dataset(&ds)?;
    let mut rows = vec![Vec::new(); n];
    for (&(u, v), p) in ds.pairs().iter().zip(preds) {
        rows[u].push((v, p));
    }
    ReachMatrix::from_rows(rows, vec![0; n])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_gbrt() -> Model {
        let ds = Dataset::dense(1, vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let cfg = GbrtConfig {
            trees: 2,
            ..Default::default()
        };
        Model::Gbrt(train_gbrt(&ds, &cfg, 0).unwrap().model)
    }

    #[test]
    fn model_round_trip() {
        let mlp = Model::Mlp(MlpModel::init(3, &[4], 9));
        for m in [mlp, tiny_gbrt()] {
            let mut buf = Vec::new();
            save_model(&m, serde_json::json!({"k": 1}), &mut buf).unwrap();
            assert_eq!(load_model(buf.as_slice()).unwrap(), m);
        }
    }

    #[test]
    fn wrong_type_and_corruption() {
        let mut buf = Vec::new();
        save_model(&tiny_gbrt(), Value::Null, &mut buf).unwrap();
        assert!(matches!(
            load_model_of(buf.as_slice(), ModelKind::Mlp),
            Err(Error::ModelType { .. })
        ));
        assert!(matches!(load_model(&buf[..buf.len() / 2]), Err(Error::Format(_))));
        let text = String::from_utf8(buf).unwrap().replace(MODEL_FORMAT, "something-else");
        assert!(matches!(load_model(text.as_bytes()), Err(Error::Format(_))));
    }
}
