//! Structured-hinge training by batch subgradient descent with the
//! Pegasos step `1 / (λ t)`.

use serde::{Deserialize, Serialize};

use super::{joint_features, to_indices, CrfInput, CrfModel, InferenceConfig};
use crate::docmodel::BiesoLabel;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrfTrainConfig {
    pub iterations: usize,
    pub lambda: f64,
    pub seed: u64,
    pub inference: InferenceConfig,
}

impl Default for CrfTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1500,
            lambda: 1e-3,
            seed: 0,
            inference: InferenceConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CrfExample<T> {
    pub id: String,
    pub input: CrfInput<T>,
    pub labels: Vec<BiesoLabel>,
}

#[derive(Debug, Clone)]
pub struct CrfTrainOutcome<T> {
    pub model: CrfModel<T>,
    /// Iterate index of the returned model; 0 is the zero model.
    pub best_iteration: usize,
    /// Training objective at every iterate.
    pub objective: Vec<f64>,
}

/// Objective `λ/2 ‖w‖² + mean_p hinge_p / n_p` at `model` and its subgradient.
fn objective<T: Real>(
    model: &CrfModel<T>,
    examples: &[CrfExample<T>],
    config: &CrfTrainConfig,
) -> Result<(f64, CrfModel<T>)> {
    let (a, d) = (model.node_dim(), model.edge_dim());
    let mut grad = CrfModel::zeros(a, d);
    let mut hinge = 0.0;
    let inv_pages = 1.0 / examples.len() as f64;
    for (p, ex) in examples.iter().enumerate() {
        if ex.input.n == 0 {
            continue;
        }
        let gold = to_indices(&ex.labels);
        let mut pot = model.potentials(&ex.input)?;
        let gold_score = pot.score(&gold);
        pot.add_hamming(&gold, 1.0)?;
        let inference = InferenceConfig {
            seed: config.seed.wrapping_add(p as u64),
            ..config.inference
        };
        let y = pot.map(&inference);
        let violation = pot.score(&y) - gold_score;
        if violation > 0.0 {
            let weight = inv_pages / ex.input.n as f64;
            hinge += violation * weight;
            let predicted = joint_features(&ex.input, &super::to_labels(&y), a, d)?;
            let truth = joint_features(&ex.input, &ex.labels, a, d)?;
            grad.add_scaled(&predicted, T::of(weight));
            grad.add_scaled(&truth, T::of(-weight));
        }
    }
    let value = 0.5 * config.lambda * model.norm_squared().as_f64() + hinge;
    Ok((value, grad))
}

pub fn train_crf<T: Real>(
    examples: &[CrfExample<T>],
    node_dim: usize,
    edge_dim: usize,
    config: &CrfTrainConfig,
) -> Result<CrfTrainOutcome<T>> {
    if examples.is_empty() {
        return Err(Error::Config("crf training needs at least one page".into()));
    }
    if !(config.lambda > 0.0 && config.lambda.is_finite()) {
        return Err(Error::Config(format!(
            "lambda must be positive, got {}",
            config.lambda
        )));
    }
    for ex in examples {
        if ex.labels.len() != ex.input.n {
            return Err(Error::Dimension(format!(
                "page {}: {} labels for {} nodes",
                ex.id,
                ex.labels.len(),
                ex.input.n
            )));
        }
    }
    let radius = 1.0 / config.lambda.sqrt();
    let mut model = CrfModel::zeros(node_dim, edge_dim);
    let mut best = (f64::INFINITY, model.clone(), 0);
    let mut history = Vec::with_capacity(config.iterations + 1);
    for t in 0..=config.iterations {
        let (value, sub) = objective(&model, examples, config)?;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                epoch: t,
                page: String::from("<all>"),
                value,
            });
        }
        history.push(value);
        if value < best.0 {
            best = (value, model.clone(), t);
        }
        log::debug!("crf iteration {t}: objective {value:.6}");
        if t == config.iterations {
            break;
        }
        let step = t as f64 + 1.0;
        model.scale(T::of(1.0 - 1.0 / step));
        model.add_scaled(&sub, T::of(-1.0 / (config.lambda * step)));
        let norm = model.norm_squared().as_f64().sqrt();
        if norm > radius {
            model.scale(T::of(radius / norm));
        }
    }
    Ok(CrfTrainOutcome {
        model: best.1,
        best_iteration: best.2,
        objective: history,
    })
}
