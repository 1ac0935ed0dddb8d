//! Structure-free logit baselines.
//!
//! `Standard` classifies each line from its own features. `OneConv`
//! first appends the mean of the undirected neighbors' features.

use serde::{Deserialize, Serialize};

use crate::docmodel::BiesoLabel;
use crate::error::{Error, Result};
use crate::graphbuild::PageGraph;
use crate::linalg::Matrix;
use crate::neural::{argmax_labels, softmax_rows, Adam};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogitFlavor {
    Standard,
    #[serde(rename = "1conv")]
    OneConv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogitModel<T> {
    /// `feature_dim × classes`
    pub weight: Matrix<T>,
    /// `1 × classes`
    pub bias: Matrix<T>,
    pub flavor: LogitFlavor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitConfig {
    pub l2: f64,
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for LogitConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            learning_rate: 0.01,
            iterations: 1000,
        }
    }
}

/// `[X | mean of undirected neighbors of X]`, zeros for isolated nodes.
pub fn augment_1conv<T: Real>(graph: &PageGraph, x: &Matrix<T>) -> Matrix<T> {
    let (n, a) = x.shape();
    let neighbors = graph.neighbors();
    let mut out = Matrix::zeros(n, 2 * a);
    for i in 0..n {
        out.row_mut(i)[..a].copy_from_slice(x.row(i));
        let list = &neighbors[i];
        if list.is_empty() {
            continue;
        }
        let inv = T::of(1.0 / list.len() as f64);
        let half = &mut out.row_mut(i)[a..];
        for &j in list {
            for (h, &v) in half.iter_mut().zip(x.row(j)) {
                *h += v * inv;
            }
        }
    }
    out
}

impl<T: Real> LogitModel<T> {
    pub fn zeros(dim: usize, flavor: LogitFlavor) -> Self {
        Self {
            weight: Matrix::zeros(dim, BiesoLabel::COUNT),
            bias: Matrix::zeros(1, BiesoLabel::COUNT),
            flavor,
        }
    }

    pub fn dim(&self) -> usize {
        self.weight.rows()
    }

    fn check(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(Error::Dimension(format!(
                "{} features, model expects {}",
                x.cols(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn probabilities(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check(x)?;
        let mut z = x.matmul(&self.weight);
        for i in 0..z.rows() {
            for (v, &b) in z.row_mut(i).iter_mut().zip(self.bias.row(0)) {
                *v += b;
            }
        }
        Ok(softmax_rows(&z))
    }

    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<BiesoLabel>> {
        Ok(argmax_labels(&self.probabilities(x)?))
    }

    /// Mean cross-entropy plus `l2/2 · ‖W‖²`, with gradients for `W` and `b`.
    pub fn objective(
        &self,
        x: &Matrix<T>,
        labels: &[BiesoLabel],
        l2: f64,
    ) -> Result<(T, Matrix<T>, Matrix<T>)> {
        if labels.len() != x.rows() {
            return Err(Error::Dimension(format!(
                "{} labels for {} rows",
                labels.len(),
                x.rows()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Config("no labeled line".into()));
        }
        let mut p = self.probabilities(x)?;
        let inv = T::of(1.0 / labels.len() as f64);
        let mut loss = T::zero();
        for (i, label) in labels.iter().enumerate() {
            let k = label.index();
            loss -= p[(i, k)].max(T::min_positive_value()).ln();
            p[(i, k)] -= T::one();
        }
        p.scale(inv);
        let mut gw = x.t_matmul(&p);
        gw.add_scaled(&self.weight, T::of(l2));
        let mut gb = Matrix::zeros(1, BiesoLabel::COUNT);
        for i in 0..p.rows() {
            for (g, &v) in gb.row_mut(0).iter_mut().zip(p.row(i)) {
                *g += v;
            }
        }
        let value = loss * inv + T::of(0.5 * l2) * self.weight.sum_squares();
        Ok((value, gw, gb))
    }
}

/// Full-batch Adam on the regularized multinomial logistic loss.
pub fn train_logit<T: Real>(
    x: &Matrix<T>,
    labels: &[BiesoLabel],
    flavor: LogitFlavor,
    config: &LogitConfig,
) -> Result<LogitModel<T>> {
    if labels.is_empty() {
        return Err(Error::Config("no labeled line".into()));
    }
    let mut model = LogitModel::zeros(x.cols(), flavor);
    let mut adam = Adam::new(config.learning_rate, 0.9, 0.999, 1e-8);
    for it in 0..config.iterations {
        let (loss, gw, gb) = model.objective(x, labels, config.l2)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                epoch: it,
                page: String::from("<batch>"),
                value: loss.as_f64(),
            });
        }
        adam.step(vec![&mut model.weight, &mut model.bias], &[gw, gb]);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::docmodel::{BoundingBox, Page, TextLine};
    use crate::graphbuild::{build_graph, GraphParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn star() -> PageGraph {
        // center box with one neighbor above and one below
        let lines = [(0.0, 0.0), (0.0, 10.0), (0.0, 20.0)]
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| TextLine::new(format!("l{i}"), BoundingBox::new(x, y, 10.0, 5.0)))
            .collect();
        let page = Page {
            id: "p".into(),
            width: 100.0,
            height: 100.0,
            table_region: BoundingBox::new(0.0, 0.0, 100.0, 100.0),
            columns: vec![],
            lines,
        };
        build_graph(&page, &GraphParams::default())
    }

    #[test]
    fn augmentation_means_neighbors() {
        let g = star();
        assert_eq!(g.neighbors()[1], vec![0, 2]);
        let x = Matrix::from_vec(3, 2, vec![1.0, 2.0, 10.0, 20.0, 3.0, 8.0]);
        let aug = augment_1conv(&g, &x);
        assert_eq!(aug.row(1), &[10.0, 20.0, 2.0, 5.0]);
        assert_eq!(aug.row(0), &[1.0, 2.0, 10.0, 20.0]);
    }

    #[test]
    fn isolated_nodes_get_zero_half() {
        let g = PageGraph {
            node_of: vec!["a".into()],
            edges: vec![],
        };
        let aug = augment_1conv(&g, &Matrix::from_vec(1, 2, vec![3.0, 4.0]));
        assert_eq!(aug.row(0), &[3.0, 4.0, 0.0, 0.0]);
    }

    #[test]
    fn single_class_training_predicts_that_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Matrix::from_fn(20, 3, |_, _| rng.gen_range(-1.0..1.0));
        let labels = vec![BiesoLabel::E; 20];
        let m = train_logit(&x, &labels, LogitFlavor::Standard, &LogitConfig::default()).unwrap();
        assert!(m.predict(&x).unwrap().iter().all(|&l| l == BiesoLabel::E));
    }

    #[test]
    fn separable_toy_is_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..60 {
            let (u, v): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if (u + v).abs() < 0.1 {
                continue;
            }
            rows.extend([u, v]);
            labels.push(if u + v > 0.0 {
                BiesoLabel::B
            } else {
                BiesoLabel::O
            });
        }
        let x = Matrix::from_vec(labels.len(), 2, rows);
        let m = train_logit(&x, &labels, LogitFlavor::Standard, &LogitConfig::default()).unwrap();
        assert_eq!(m.predict(&x).unwrap(), labels);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::from_fn(7, 4, |_, _| rng.gen_range(-1.0..1.0));
        let labels: Vec<_> = (0..7).map(|i| BiesoLabel::ALL[i % 5]).collect();
        let mut m = LogitModel::<f64>::zeros(4, LogitFlavor::Standard);
        m.weight = Matrix::from_fn(4, 5, |_, _| rng.gen_range(-1.0..1.0));
        m.bias = Matrix::from_fn(1, 5, |_, _| rng.gen_range(-1.0..1.0));
        let l2 = 0.3;
        let (_, gw, gb) = m.objective(&x, &labels, l2).unwrap();
        let delta = 1e-5;
        for (which, grad) in [(0, &gw), (1, &gb)] {
            for k in 0..grad.data().len() {
                let f = |s: f64| {
                    let mut probe = m.clone();
                    let t = if which == 0 {
                        &mut probe.weight
                    } else {
                        &mut probe.bias
                    };
                    t.data_mut()[k] += s * delta;
                    probe.objective(&x, &labels, l2).unwrap().0
                };
                let num = (f(1.0) - f(-1.0)) / (2.0 * delta);
                assert!(
                    (num - grad.data()[k]).abs() < 1e-7,
                    "{num} vs {}",
                    grad.data()[k]
                );
            }
        }
    }

    #[test]
    fn predictions_are_row_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = LogitModel::<f64>::zeros(3, LogitFlavor::Standard);
        m.weight = Matrix::from_fn(3, 5, |_, _| rng.gen_range(-1.0..1.0));
        let x = Matrix::from_fn(5, 3, |_, _| rng.gen_range(-1.0..1.0));
        let full = m.predict(&x).unwrap();
        for i in 0..5 {
            let single = Matrix::from_vec(1, 3, x.row(i).to_vec());
            assert_eq!(m.predict(&single).unwrap()[0], full[i]);
        }
    }

    #[test]
    fn dimension_mismatch_errors() {
        let m = LogitModel::<f64>::zeros(3, LogitFlavor::OneConv);
        assert!(matches!(
            m.predict(&Matrix::zeros(2, 4)),
            Err(Error::Dimension(_))
        ));
    }
}
