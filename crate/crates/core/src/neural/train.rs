use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Gradients, GraphInput, Network, NetworkConfig};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Dropout rate on hidden activations, in [0, 1).
    pub dropout: f64,
    pub validation_fraction: f64,
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            max_epochs: 2000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            dropout: 0.2,
            validation_fraction: 0.1,
            patience: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && (0.0..1.0).contains(&self.dropout)
            && self.validation_fraction > 0.0
            && self.validation_fraction < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "training configuration out of range: {self:?}"
            )))
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    step: i32,
    first: Vec<Matrix<T>>,
    second: Vec<Matrix<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            learning_rate: T::of(learning_rate),
            beta1: T::of(beta1),
            beta2: T::of(beta2),
            epsilon: T::of(epsilon),
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Matrix<T>>, grads: &[Matrix<T>]) {
        assert_eq!(
            params.len(),
            grads.len(),
            "one gradient per parameter tensor"
        );
        if self.first.is_empty() {
            self.first = grads
                .iter()
                .map(|g| Matrix::zeros(g.rows(), g.cols()))
                .collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.step);
        let c2 = one - self.beta2.powi(self.step);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((w, &gi), (mi, vi)) in it {
                *mi = self.beta1 * *mi + (one - self.beta1) * gi;
                *vi = self.beta2 * *vi + (one - self.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

/// One supervised page.
#[derive(Debug, Clone)]
pub struct TrainingExample<T> {
    pub id: String,
    pub input: GraphInput<T>,
    /// Class index per node.
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Network<T>,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub validation_ids: Vec<String>,
}

fn node_weighted_loss<T: Real>(
    model: &Network<T>,
    examples: &[&TrainingExample<T>],
) -> Result<f64> {
    let mut total = 0.0;
    let mut nodes = 0usize;
    for ex in examples {
        let probs = model.forward(&ex.input)?;
        for (i, &c) in ex.labels.iter().enumerate() {
            total -= probs[(i, c)].as_f64().max(f64::MIN_POSITIVE).ln();
        }
        nodes += ex.labels.len();
    }
    Ok(total / nodes.max(1) as f64)
}

/// Per-page full-graph Adam training with early stopping on a held-out
/// validation split. Bit-identical for a fixed seed.
pub fn train<T: Real>(
    examples: &[TrainingExample<T>],
    network: &NetworkConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if examples.len() < 2 {
        return Err(Error::Config(
            "training needs at least two pages so a validation split exists".into(),
        ));
    }
    for ex in examples {
        if ex.labels.len() != ex.input.n || ex.labels.iter().any(|&c| c >= network.classes) {
            return Err(Error::Dimension(format!(
                "labels of page {} do not match its graph",
                ex.id
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Network::with_rng(network.clone(), &mut rng)?;

    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((config.validation_fraction * examples.len() as f64).round() as usize)
        .clamp(1, examples.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let validation: Vec<&TrainingExample<T>> = val_idx.iter().map(|&i| &examples[i]).collect();

    let mut adam = Adam::new(
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.epsilon,
    );
    let mut best = (f64::INFINITY, model.clone(), 0usize);
    let mut history = Vec::new();
    let mut stale = 0usize;
    for epoch in 0..config.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &i in &train_idx {
            let ex = &examples[i];
            let labels: Vec<Option<usize>> = ex.labels.iter().map(|&c| Some(c)).collect();
            let (loss, Gradients { tensors }) =
                model.loss_and_gradients(&ex.input, &labels, Some((config.dropout, &mut rng)))?;
            let loss = loss.as_f64();
            if !loss.is_finite() || tensors.iter().any(|t| !t.is_finite()) {
                return Err(Error::NonFinite {
                    epoch,
                    page: ex.id.clone(),
                    value: loss,
                });
            }
            epoch_loss += loss;
            adam.step(model.tensors_mut(), &tensors);
        }
        let validation_loss = node_weighted_loss(&model, &validation)?;
        if !validation_loss.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                page: "<validation>".into(),
                value: validation_loss,
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train_idx.len() as f64,
            validation_loss,
        });
        log::debug!(
            "epoch {epoch}: train {:.5} validation {validation_loss:.5}",
            epoch_loss / train_idx.len() as f64
        );
        if validation_loss < best.0 {
            best = (validation_loss, model.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale > config.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: best.1,
        best_epoch: best.2,
        history,
        validation_ids: validation.iter().map(|e| e.id.clone()).collect(),
    })
}
