//! Versioned JSON model files.
//!
//! A file holds a header, the learner configuration, the fitted
//! normalizer and every parameter tensor by name. Loading checks the
//! version, the feature names against the current extractor and every
//! tensor shape before anything is used.

use serde::{Deserialize, Serialize};

use crate::baselines::{LogitFlavor, LogitModel};
use crate::crf::CrfModel;
use crate::docmodel::BiesoLabel;
use crate::error::{Error, Result};
use crate::features::{node_feature_names, QuantileNormalizer, FEATURE_SET_VERSION};
use crate::linalg::Matrix;
use crate::neural::{EcnVariant, Layer, Network, NetworkKind};
use crate::pipeline::{LearnerConfig, Model, ModelBody, ModelKind};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub node: usize,
    pub edge: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub model_kind: ModelKind,
    pub dims: Dims,
    /// ECN models only.
    pub variant: Option<EcnVariant>,
    pub seed: u64,
    pub feature_set_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    header: Header,
    config: LearnerConfig,
    normalizer: QuantileNormalizer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    majority: Option<BiesoLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    logit_flavor: Option<LogitFlavor>,
    tensors: Vec<NamedTensor>,
}

fn network_names(net: &Network<f64>) -> Vec<String> {
    let mut names = Vec::new();
    for (i, layer) in net.layers.iter().enumerate() {
        names.push(format!("layer{i}.weight"));
        names.push(format!("layer{i}.bias"));
        if let Layer::Ecn(l) = layer {
            names.extend((0..l.forward.len()).map(|c| format!("layer{i}.forward{c}")));
            names.extend((0..l.backward.len()).map(|c| format!("layer{i}.backward{c}")));
        }
    }
    names.push("output.weight".into());
    names.push("output.bias".into());
    names
}

const CRF_NAMES: [&str; 3] = ["unary", "pairwise.horizontal", "pairwise.vertical"];
const LOGIT_NAMES: [&str; 2] = ["weight", "bias"];

fn named(names: Vec<String>, tensors: Vec<&Matrix<f64>>) -> Vec<NamedTensor> {
    names
        .into_iter()
        .zip(tensors)
        .map(|(name, t)| NamedTensor {
            name,
            rows: t.rows(),
            cols: t.cols(),
            data: t.data().to_vec(),
        })
        .collect()
}

/// Copies stored tensors into `targets`, which define the expected shapes.
fn fill(stored: &[NamedTensor], names: &[String], targets: Vec<&mut Matrix<f64>>) -> Result<()> {
    if stored.len() != targets.len() {
        return Err(Error::Model(format!(
            "expected {} tensors, found {}",
            targets.len(),
            stored.len()
        )));
    }
    for ((s, name), t) in stored.iter().zip(names).zip(targets) {
        if &s.name != name {
            return Err(Error::Model(format!(
                "expected tensor {name}, found {}",
                s.name
            )));
        }
        if (s.rows, s.cols) != t.shape() || s.data.len() != s.rows * s.cols {
            return Err(Error::Model(format!(
                "tensor {name} is {}×{} with {} values, expected {}×{}",
                s.rows,
                s.cols,
                s.data.len(),
                t.rows(),
                t.cols()
            )));
        }
        t.data_mut().copy_from_slice(&s.data);
    }
    Ok(())
}

/// Serializes a trained model.
pub fn save_model(model: &Model) -> Result<Vec<u8>> {
    let dims = Dims {
        node: model.normalizer.node.len(),
        edge: model.normalizer.edge.len(),
        classes: BiesoLabel::COUNT,
    };
    let (mut majority, mut logit_flavor, mut variant) = (None, None, None);
    let tensors = match &model.body {
        ModelBody::Majority(l) => {
            majority = Some(*l);
            Vec::new()
        }
        ModelBody::Logit(m) => {
            logit_flavor = Some(m.flavor);
            named(
                LOGIT_NAMES.iter().map(|s| s.to_string()).collect(),
                vec![&m.weight, &m.bias],
            )
        }
        ModelBody::Crf(m) => named(
            CRF_NAMES.iter().map(|s| s.to_string()).collect(),
            m.tensors(),
        ),
        ModelBody::Network(net) => {
            if net.config.kind == NetworkKind::Ecn {
                variant = Some(net.config.variant);
            }
            named(network_names(net), net.tensors())
        }
    };
    let file = ModelFile {
        header: Header {
            format_version: MODEL_FORMAT_VERSION,
            model_kind: model.config.kind,
            dims,
            variant,
            seed: model.config.seed,
            feature_set_version: FEATURE_SET_VERSION,
        },
        config: model.config.clone(),
        normalizer: model.normalizer.clone(),
        majority,
        logit_flavor,
        tensors,
    };
    let mut bytes = serde_json::to_vec_pretty(&file).map_err(|e| Error::Model(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn check_features(file: &ModelFile) -> Result<()> {
    let h = &file.header;
    if h.feature_set_version != FEATURE_SET_VERSION {
        return Err(Error::Model(format!(
            "model uses feature set {}, this build extracts feature set {FEATURE_SET_VERSION}",
            h.feature_set_version
        )));
    }
    let norm = &file.normalizer;
    if norm.node_names != node_feature_names() {
        return Err(Error::Model(
            "node feature names differ from the current extractor".into(),
        ));
    }
    if norm.edge_names != file.config.edge_features.names() {
        return Err(Error::Model(
            "edge feature names differ from the current extractor".into(),
        ));
    }
    if norm.node.len() != norm.node_names.len() || norm.edge.len() != norm.edge_names.len() {
        return Err(Error::Model(
            "normalizer scales do not match its feature names".into(),
        ));
    }
    if h.dims.node != norm.node.len()
        || h.dims.edge != norm.edge.len()
        || h.dims.classes != BiesoLabel::COUNT
    {
        return Err(Error::Model(format!(
            "header dims ({}, {}, {}) disagree with the normalizer ({}, {}, {})",
            h.dims.node,
            h.dims.edge,
            h.dims.classes,
            norm.node.len(),
            norm.edge.len(),
            BiesoLabel::COUNT
        )));
    }
    if h.model_kind != file.config.kind || h.seed != file.config.seed {
        return Err(Error::Model(
            "header disagrees with the stored configuration".into(),
        ));
    }
    Ok(())
}

fn body(file: &ModelFile) -> Result<ModelBody> {
    let dims = file.header.dims;
    let names = |list: &[&str]| list.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    match file.config.kind {
        ModelKind::Majority => {
            let label = file
                .majority
                .ok_or_else(|| Error::Model("majority model without a label".into()))?;
            if !file.tensors.is_empty() {
                return Err(Error::Model("majority model carries tensors".into()));
            }
            Ok(ModelBody::Majority(label))
        }
        ModelKind::Logit | ModelKind::Logit1Conv => {
            let want = if file.config.kind == ModelKind::Logit {
                LogitFlavor::Standard
            } else {
                LogitFlavor::OneConv
            };
            if file.logit_flavor != Some(want) {
                return Err(Error::Model(
                    "logit flavor does not match the model kind".into(),
                ));
            }
            let width = match want {
                LogitFlavor::Standard => dims.node,
                LogitFlavor::OneConv => 2 * dims.node,
            };
            let mut m = LogitModel::zeros(width, want);
            fill(
                &file.tensors,
                &names(&LOGIT_NAMES),
                vec![&mut m.weight, &mut m.bias],
            )?;
            Ok(ModelBody::Logit(m))
        }
        ModelKind::Crf => {
            let mut m = CrfModel::zeros(dims.node, dims.edge);
            fill(&file.tensors, &names(&CRF_NAMES), m.tensors_mut())?;
            Ok(ModelBody::Crf(m))
        }
        ModelKind::Gcn | ModelKind::Ecn => {
            let cfg = file.config.network.clone();
            let kind = if file.config.kind == ModelKind::Gcn {
                NetworkKind::Gcn
            } else {
                NetworkKind::Ecn
            };
            let edge = if kind == NetworkKind::Gcn {
                0
            } else {
                dims.edge
            };
            if cfg.kind != kind
                || cfg.node_dim != dims.node
                || cfg.edge_dim != edge
                || cfg.classes != dims.classes
            {
                return Err(Error::Model(
                    "network configuration disagrees with the header".into(),
                ));
            }
            if kind == NetworkKind::Ecn && file.header.variant != Some(cfg.variant) {
                return Err(Error::Model(
                    "header variant disagrees with the network configuration".into(),
                ));
            }
            let mut net = Network::new(cfg, 0)?;
            let expected = network_names(&net);
            fill(&file.tensors, &expected, net.tensors_mut())?;
            Ok(ModelBody::Network(net))
        }
    }
}

/// Parses and validates a model file.
pub fn load_model(bytes: &[u8]) -> Result<Model> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| Error::from_json(e, bytes))?;
    let version = value
        .get("header")
        .and_then(|h| h.get("format_version"))
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Model("missing header.format_version".into()))?;
    if version != u64::from(MODEL_FORMAT_VERSION) {
        return Err(Error::Version {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let file: ModelFile = serde_json::from_value(value).map_err(|e| Error::Model(e.to_string()))?;
    check_features(&file)?;
    let body = body(&file)?;
    Ok(Model {
        config: file.config,
        normalizer: file.normalizer,
        body,
    })
}
