//! Page-level training and prediction for every learner.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{augment_1conv, train_logit, LogitConfig, LogitFlavor, LogitModel};
use crate::crf::{train_crf, CrfExample, CrfInput, CrfModel, CrfTrainConfig};
use crate::docmodel::{BiesoLabel, Page};
use crate::error::{Error, Result};
use crate::features::{
    edge_features, fit_normalizer, node_features, EdgeFeatureSet, EdgeFeatures, NodeFeatures,
    QuantileNormalizer, DEFAULT_KNOTS,
};
use crate::graphbuild::{build_graph, GraphParams, PageGraph};
use crate::linalg::Matrix;
use crate::neural::{
    train, GraphInput, Network, NetworkConfig, NetworkKind, TrainConfig, TrainingExample,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logit,
    #[serde(rename = "logit1conv")]
    Logit1Conv,
    Gcn,
    Ecn,
    Crf,
    /// Predicts the most frequent training label everywhere.
    Majority,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        Self::Logit,
        Self::Logit1Conv,
        Self::Gcn,
        Self::Ecn,
        Self::Crf,
        Self::Majority,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Logit => "logit",
            Self::Logit1Conv => "logit1conv",
            Self::Gcn => "gcn",
            Self::Ecn => "ecn",
            Self::Crf => "crf",
            Self::Majority => "majority",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind {s:?}")))
    }
}

/// Everything needed to train one learner. Feature dimensions inside
/// `network` are filled in at training time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub kind: ModelKind,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub logit: LogitConfig,
    pub crf: CrfTrainConfig,
    pub edge_features: EdgeFeatureSet,
    pub knots: usize,
    pub graph: GraphParams,
    pub seed: u64,
}

impl LearnerConfig {
    pub fn new(kind: ModelKind) -> Self {
        let network = match kind {
            ModelKind::Gcn => NetworkConfig {
                layers: 5,
                stacked: true,
                ..NetworkConfig::gcn(0)
            },
            _ => NetworkConfig::ecn(0, 0),
        };
        Self {
            kind,
            network,
            train: TrainConfig::default(),
            logit: LogitConfig::default(),
            crf: CrfTrainConfig::default(),
            edge_features: EdgeFeatureSet::Full,
            knots: DEFAULT_KNOTS,
            graph: GraphParams::default(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Graph and raw features of one page.
#[derive(Debug, Clone)]
pub struct PreparedPage {
    pub id: String,
    pub graph: PageGraph,
    pub node: NodeFeatures,
    pub edge: EdgeFeatures,
    pub labels: Option<Vec<BiesoLabel>>,
}

pub fn prepare_page(page: &Page, graph: &GraphParams, edge_set: EdgeFeatureSet) -> PreparedPage {
    let g = build_graph(page, graph);
    let node = node_features(page, &g);
    let edge = edge_set.select(&edge_features(page, &g));
    let labels = page
        .lines
        .iter()
        .map(|l| l.label)
        .collect::<Option<Vec<_>>>();
    PreparedPage {
        id: page.id.clone(),
        graph: g,
        node,
        edge,
        labels,
    }
}

/// Prepares pages on all available cores; output order follows input order.
pub fn prepare_pages(
    pages: &[Page],
    graph: &GraphParams,
    edge_set: EdgeFeatureSet,
) -> Vec<PreparedPage> {
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(pages.len().max(1));
    let chunk = pages.len().div_ceil(workers).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = pages
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|p| prepare_page(p, graph, edge_set))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("feature worker panicked"))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelBody {
    Logit(LogitModel<f64>),
    Network(Network<f64>),
    Crf(CrfModel<f64>),
    Majority(BiesoLabel),
}

/// A trained learner with its normalizer and feature configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: LearnerConfig,
    pub normalizer: QuantileNormalizer,
    pub body: ModelBody,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub kind: ModelKind,
    pub pages: usize,
    pub lines: usize,
    pub train_accuracy: f64,
    /// Network training only.
    pub validation_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_run: Option<usize>,
    /// CRF training only.
    pub best_iteration: Option<usize>,
    pub objective: Option<f64>,
}

fn labels_of(p: &PreparedPage) -> Result<&[BiesoLabel]> {
    p.labels.as_deref().ok_or_else(|| {
        Error::Config(format!(
            "page {} has unlabeled lines and cannot be used for training",
            p.id
        ))
    })
}

fn stack_rows(parts: &[Matrix<f64>]) -> Matrix<f64> {
    let cols = parts.first().map_or(0, Matrix::cols);
    let rows = parts.iter().map(Matrix::rows).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Matrix::from_vec(rows, cols, data)
}

impl Model {
    fn normalized(&self, page: &PreparedPage) -> Result<(Matrix<f64>, Matrix<f64>)> {
        let (node, edge) = self
            .normalizer
            .apply(&page.node, &page.edge)
            .map_err(|e| match e {
                Error::Dimension(m) => Error::Dimension(format!("page {}: {m}", page.id)),
                other => other,
            })?;
        Ok((node.values, edge.values))
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn predict_prepared(&self, page: &PreparedPage) -> Result<Vec<BiesoLabel>> {
        let n = page.graph.node_count();
        if let ModelBody::Majority(label) = self.body {
            return Ok(vec![label; n]);
        }
        let (node, edge) = self.normalized(page)?;
        if n == 0 {
            return Ok(Vec::new());
        }
        let with_page = |e: Error| match e {
            Error::Dimension(m) if !m.starts_with("page ") => {
                Error::Dimension(format!("page {}: {m}", page.id))
            }
            other => other,
        };
        match &self.body {
            ModelBody::Logit(m) => {
                let x = match m.flavor {
                    LogitFlavor::Standard => node,
                    LogitFlavor::OneConv => augment_1conv(&page.graph, &node),
                };
                m.predict(&x).map_err(with_page)
            }
            ModelBody::Network(net) => {
                let input = GraphInput::new(&page.graph, node, edge).map_err(with_page)?;
                net.predict(&input).map_err(with_page)
            }
            ModelBody::Crf(crf) => {
                let input = CrfInput::new(&page.graph, node, edge).map_err(with_page)?;
                let inference = crate::crf::InferenceConfig {
                    seed: self.config.seed,
                    ..self.config.crf.inference
                };
                crf.map_inference(&input, &inference).map_err(with_page)
            }
            ModelBody::Majority(_) => unreachable!(),
        }
    }

    pub fn predict_page(&self, page: &Page) -> Result<Vec<BiesoLabel>> {
        self.predict_prepared(&prepare_page(
            page,
            &self.config.graph,
            self.config.edge_features,
        ))
    }
}

/// Fits the normalizer and the learner on fully labeled pages.
pub fn fit_prepared(
    pages: &[PreparedPage],
    config: &LearnerConfig,
) -> Result<(Model, TrainSummary)> {
    if pages.is_empty() {
        return Err(Error::Config("no training pages".into()));
    }
    let pairs: Vec<(&NodeFeatures, &EdgeFeatures)> =
        pages.iter().map(|p| (&p.node, &p.edge)).collect();
    let normalizer = fit_normalizer(&pairs, config.knots)?;
    let mut config = config.clone();
    config.train.seed = config.seed;
    config.crf.seed = config.seed;
    let mut model = Model {
        config: config.clone(),
        normalizer,
        body: ModelBody::Majority(BiesoLabel::B),
    };
    let normalized = pages
        .iter()
        .map(|p| Ok((model.normalized(p)?, labels_of(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let lines: usize = normalized.iter().map(|(_, l)| l.len()).sum();
    let mut summary = TrainSummary {
        kind: config.kind,
        pages: pages.len(),
        lines,
        train_accuracy: 0.0,
        validation_loss: None,
        best_epoch: None,
        epochs_run: None,
        best_iteration: None,
        objective: None,
    };
    let node_dim = pages[0].node.dim();
    let edge_dim = pages[0].edge.dim();
    model.body = match config.kind {
        ModelKind::Majority => {
            let mut counts = [0usize; BiesoLabel::COUNT];
            for (_, labels) in &normalized {
                for l in labels.iter() {
                    counts[l.index()] += 1;
                }
            }
            let mut best = 0;
            for k in 1..BiesoLabel::COUNT {
                if counts[k] > counts[best] {
                    best = k;
                }
            }
            ModelBody::Majority(BiesoLabel::ALL[best])
        }
        ModelKind::Logit | ModelKind::Logit1Conv => {
            let flavor = if config.kind == ModelKind::Logit {
                LogitFlavor::Standard
            } else {
                LogitFlavor::OneConv
            };
            let xs: Vec<Matrix<f64>> = normalized
                .iter()
                .zip(pages)
                .map(|(((node, _), _), p)| match flavor {
                    LogitFlavor::Standard => node.clone(),
                    LogitFlavor::OneConv => augment_1conv(&p.graph, node),
                })
                .collect();
            let labels: Vec<BiesoLabel> = normalized
                .iter()
                .flat_map(|(_, l)| l.iter().copied())
                .collect();
            ModelBody::Logit(train_logit(
                &stack_rows(&xs),
                &labels,
                flavor,
                &config.logit,
            )?)
        }
        ModelKind::Gcn | ModelKind::Ecn => {
            let mut net = config.network.clone();
            net.kind = if config.kind == ModelKind::Gcn {
                NetworkKind::Gcn
            } else {
                NetworkKind::Ecn
            };
            net.node_dim = node_dim;
            net.edge_dim = if net.kind == NetworkKind::Gcn {
                0
            } else {
                edge_dim
            };
            net.classes = BiesoLabel::COUNT;
            net.validate()?;
            let examples = normalized
                .into_iter()
                .zip(pages)
                .map(|(((node, edge), labels), p)| {
                    Ok(TrainingExample {
                        id: p.id.clone(),
                        input: GraphInput::new(&p.graph, node, edge)?,
                        labels: labels.iter().map(|l| l.index()).collect(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let outcome = train(&examples, &net, &config.train)?;
            summary.best_epoch = Some(outcome.best_epoch);
            summary.epochs_run = Some(outcome.history.len());
            summary.validation_loss = outcome
                .history
                .get(outcome.best_epoch)
                .map(|r| r.validation_loss);
            model.config.network = net;
            ModelBody::Network(outcome.model)
        }
        ModelKind::Crf => {
            let examples = normalized
                .into_iter()
                .zip(pages)
                .map(|(((node, edge), labels), p)| {
                    Ok(CrfExample {
                        id: p.id.clone(),
                        input: CrfInput::new(&p.graph, node, edge)?,
                        labels: labels.to_vec(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let outcome = train_crf(&examples, node_dim, edge_dim, &config.crf)?;
            summary.best_iteration = Some(outcome.best_iteration);
            summary.objective = Some(outcome.objective[outcome.best_iteration]);
            ModelBody::Crf(outcome.model)
        }
    };
    let (mut correct, mut total) = (0usize, 0usize);
    for p in pages {
        let predicted = model.predict_prepared(p)?;
        let gold = labels_of(p)?;
        correct += predicted.iter().zip(gold).filter(|(a, b)| a == b).count();
        total += gold.len();
    }
    summary.train_accuracy = if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    };
    Ok((model, summary))
}

pub fn fit(pages: &[Page], config: &LearnerConfig) -> Result<(Model, TrainSummary)> {
    fit_prepared(
        &prepare_pages(pages, &config.graph, config.edge_features),
        config,
    )
}

/// Copies of `pages` with `predicted` filled in by `model`.
pub fn predict_pages(model: &Model, pages: &[Page]) -> Result<Vec<Page>> {
    let prepared = prepare_pages(pages, &model.config.graph, model.config.edge_features);
    pages
        .iter()
        .zip(&prepared)
        .map(|(page, prep)| {
            let labels = model.predict_prepared(prep)?;
            let mut out = page.clone();
            for (line, label) in out.lines.iter_mut().zip(labels) {
                line.predicted = Some(label);
            }
            Ok(out)
        })
        .collect()
}
