//! Graph CRF with linear potentials
//! `g(x, y) = Σ_v θ_{y_v} · φ_V(v) + Σ_(v,w) ϑ^{o}_{y_v, y_w} · φ_E(v, w)`,
//! where the pairwise block `ϑ^{o}` is selected by the edge orientation.

mod inference;
mod train;

use crate::docmodel::BiesoLabel;
use crate::error::{Error, Result};
use crate::graphbuild::{EdgeOrientation, PageGraph};
use crate::linalg::Matrix;
use crate::scalar::Real;

pub use inference::{brute_force_map, is_forest, InferenceConfig, Potentials};
pub use train::{train_crf, CrfExample, CrfTrainConfig, CrfTrainOutcome};

const L: usize = BiesoLabel::COUNT;
/// Number of edge types.
pub const EDGE_TYPES: usize = 2;

pub fn orientation_index(o: EdgeOrientation) -> usize {
    match o {
        EdgeOrientation::Horizontal => 0,
        EdgeOrientation::Vertical => 1,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfModel<T> {
    /// `l × a`, one row per label.
    pub unary: Matrix<T>,
    /// Per edge type, `(l·l) × d`; row `y_v · l + y_w`.
    pub pairwise: Vec<Matrix<T>>,
}

#[derive(Debug, Clone)]
pub struct CrfInput<T> {
    pub n: usize,
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
    pub types: Vec<usize>,
    /// `n × a`
    pub node: Matrix<T>,
    /// `d × m`
    pub edge: Matrix<T>,
}

impl<T: Real> CrfInput<T> {
    pub fn new(graph: &PageGraph, node: Matrix<T>, edge: Matrix<T>) -> Result<Self> {
        let types = graph
            .edges
            .iter()
            .map(|e| orientation_index(e.orientation))
            .collect();
        Self::from_edges(
            graph.node_count(),
            graph.sources(),
            graph.targets(),
            types,
            node,
            edge,
        )
    }

    pub fn from_edges(
        n: usize,
        sources: Vec<usize>,
        targets: Vec<usize>,
        types: Vec<usize>,
        node: Matrix<T>,
        edge: Matrix<T>,
    ) -> Result<Self> {
        let m = sources.len();
        if node.rows() != n || targets.len() != m || types.len() != m || edge.cols() != m {
            return Err(Error::Dimension(format!(
                "crf input: {n} nodes, {} feature rows, {m} edges, {} edge columns",
                node.rows(),
                edge.cols()
            )));
        }
        if sources.iter().chain(&targets).any(|&i| i >= n) || types.iter().any(|&t| t >= EDGE_TYPES)
        {
            return Err(Error::Dimension(
                "edge endpoint or type out of range".into(),
            ));
        }
        Ok(Self {
            n,
            sources,
            targets,
            types,
            node,
            edge,
        })
    }

    pub fn edge_count(&self) -> usize {
        self.sources.len()
    }
}

impl<T: Real> CrfModel<T> {
    pub fn zeros(node_dim: usize, edge_dim: usize) -> Self {
        Self {
            unary: Matrix::zeros(L, node_dim),
            pairwise: (0..EDGE_TYPES)
                .map(|_| Matrix::zeros(L * L, edge_dim))
                .collect(),
        }
    }

    pub fn node_dim(&self) -> usize {
        self.unary.cols()
    }

    pub fn edge_dim(&self) -> usize {
        self.pairwise[0].cols()
    }

    pub fn tensors(&self) -> Vec<&Matrix<T>> {
        std::iter::once(&self.unary).chain(&self.pairwise).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        std::iter::once(&mut self.unary)
            .chain(self.pairwise.iter_mut())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn norm_squared(&self) -> T {
        self.tensors().iter().map(|t| t.sum_squares()).sum()
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.tensors_mut() {
            t.scale(factor);
        }
    }

    /// `self += factor · other`
    pub fn add_scaled(&mut self, other: &Self, factor: T) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_scaled(b, factor);
        }
    }

    pub fn dot(&self, other: &Self) -> T {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .map(|(a, b)| {
                a.data()
                    .iter()
                    .zip(b.data())
                    .map(|(&x, &y)| x * y)
                    .sum::<T>()
            })
            .sum()
    }

    fn check(&self, input: &CrfInput<T>) -> Result<()> {
        if input.node.cols() != self.node_dim() || input.edge.rows() != self.edge_dim() {
            return Err(Error::Dimension(format!(
                "crf model expects {}/{} node/edge features, got {}/{}",
                self.node_dim(),
                self.edge_dim(),
                input.node.cols(),
                input.edge.rows()
            )));
        }
        Ok(())
    }

    /// Unary and pairwise potential tables for every node and edge.
    pub fn potentials(&self, input: &CrfInput<T>) -> Result<Potentials> {
        self.check(input)?;
        let unary_t = input.node.matmul_t(&self.unary);
        let unary = (0..input.n)
            .map(|v| {
                let mut row = [0.0; L];
                for (r, &u) in row.iter_mut().zip(unary_t.row(v)) {
                    *r = u.as_f64();
                }
                row
            })
            .collect();
        let d = self.edge_dim();
        let pairwise = (0..input.edge_count())
            .map(|e| {
                let block = &self.pairwise[input.types[e]];
                let mut table = [[0.0; L]; L];
                for (a, row) in table.iter_mut().enumerate() {
                    for (b, cell) in row.iter_mut().enumerate() {
                        let w = block.row(a * L + b);
                        *cell = (0..d).map(|k| (w[k] * input.edge[(k, e)]).as_f64()).sum();
                    }
                }
                table
            })
            .collect();
        Ok(Potentials {
            unary,
            pairwise,
            sources: input.sources.clone(),
            targets: input.targets.clone(),
        })
    }

    /// `g(x, y)` evaluated in the model's scalar type.
    pub fn score(&self, input: &CrfInput<T>, labels: &[BiesoLabel]) -> Result<T> {
        Ok(self.dot(&joint_features(
            input,
            labels,
            self.node_dim(),
            self.edge_dim(),
        )?))
    }

    pub fn map_inference(
        &self,
        input: &CrfInput<T>,
        config: &InferenceConfig,
    ) -> Result<Vec<BiesoLabel>> {
        let labels = self.potentials(input)?.map(config);
        Ok(to_labels(&labels))
    }

    /// MAP of `g(x, y) + weight · Hamming(y, gold)`.
    pub fn loss_augmented(
        &self,
        input: &CrfInput<T>,
        gold: &[BiesoLabel],
        weight: f64,
        config: &InferenceConfig,
    ) -> Result<Vec<BiesoLabel>> {
        let mut pot = self.potentials(input)?;
        pot.add_hamming(&to_indices(gold), weight)?;
        Ok(to_labels(&pot.map(config)))
    }
}

/// `φ(x, y)`, shaped like the model, so that `g(x, y) = ⟨w, φ(x, y)⟩`.
pub fn joint_features<T: Real>(
    input: &CrfInput<T>,
    labels: &[BiesoLabel],
    node_dim: usize,
    edge_dim: usize,
) -> Result<CrfModel<T>> {
    if labels.len() != input.n {
        return Err(Error::Dimension(format!(
            "{} labels for {} nodes",
            labels.len(),
            input.n
        )));
    }
    if input.node.cols() != node_dim || input.edge.rows() != edge_dim {
        return Err(Error::Dimension(
            "feature dimensions differ from the model".into(),
        ));
    }
    let mut phi = CrfModel::zeros(node_dim, edge_dim);
    for (v, label) in labels.iter().enumerate() {
        for (w, &x) in phi
            .unary
            .row_mut(label.index())
            .iter_mut()
            .zip(input.node.row(v))
        {
            *w += x;
        }
    }
    for e in 0..input.edge_count() {
        let row = labels[input.sources[e]].index() * L + labels[input.targets[e]].index();
        let block = &mut phi.pairwise[input.types[e]];
        for k in 0..edge_dim {
            block[(row, k)] += input.edge[(k, e)];
        }
    }
    Ok(phi)
}

pub(crate) fn to_labels(y: &[usize]) -> Vec<BiesoLabel> {
    y.iter()
        .map(|&k| BiesoLabel::from_index(k).expect("label index"))
        .collect()
}

pub(crate) fn to_indices(y: &[BiesoLabel]) -> Vec<usize> {
    y.iter().map(|l| l.index()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(super) fn random_instance(
        rng: &mut ChaCha8Rng,
        n: usize,
        edges: &[(usize, usize)],
    ) -> (CrfModel<f64>, CrfInput<f64>) {
        let (a, d) = (3, 2);
        let mut model = CrfModel::zeros(a, d);
        for t in model.tensors_mut() {
            for v in t.data_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let m = edges.len();
        let input = CrfInput::from_edges(
            n,
            edges.iter().map(|e| e.0).collect(),
            edges.iter().map(|e| e.1).collect(),
            (0..m).map(|_| rng.gen_range(0..EDGE_TYPES)).collect(),
            Matrix::from_fn(n, a, |_, _| rng.gen_range(-1.0..1.0)),
            Matrix::from_fn(d, m, |_, _| rng.gen_range(0.0..1.0)),
        )
        .unwrap();
        (model, input)
    }

    /// Term-by-term recomputation of the potential sum.
    fn oracle_score(model: &CrfModel<f64>, input: &CrfInput<f64>, y: &[BiesoLabel]) -> f64 {
        let mut total = 0.0;
        for v in 0..input.n {
            for k in 0..input.node.cols() {
                total += model.unary[(y[v].index(), k)] * input.node[(v, k)];
            }
        }
        for e in 0..input.edge_count() {
            let (s, t) = (input.sources[e], input.targets[e]);
            for k in 0..input.edge.rows() {
                total += model.pairwise[input.types[e]][(y[s].index() * 5 + y[t].index(), k)]
                    * input.edge[(k, e)];
            }
        }
        total
    }

    #[test]
    fn zero_model_scores_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (_, input) = random_instance(&mut rng, 4, &[(0, 1), (1, 2), (2, 3)]);
        let model = CrfModel::zeros(3, 2);
        assert_eq!(model.score(&input, &[BiesoLabel::S; 4]).unwrap(), 0.0);
    }

    #[test]
    fn single_node_dot_product() {
        let mut model = CrfModel::<f64>::zeros(2, 1);
        model.unary[(0, 0)] = 1.0;
        let input = CrfInput::from_edges(
            1,
            vec![],
            vec![],
            vec![],
            Matrix::from_vec(1, 2, vec![1.0, 0.0]),
            Matrix::zeros(1, 0),
        )
        .unwrap();
        assert_eq!(model.score(&input, &[BiesoLabel::B]).unwrap(), 1.0);
        assert_eq!(model.score(&input, &[BiesoLabel::I]).unwrap(), 0.0);
    }

    #[test]
    fn score_matches_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (model, input) = random_instance(&mut rng, 4, &[(0, 1), (1, 2), (2, 3), (0, 3)]);
            let y: Vec<_> = (0..4)
                .map(|_| BiesoLabel::ALL[rng.gen_range(0..5)])
                .collect();
            let fast = model.score(&input, &y).unwrap();
            let pot = model.potentials(&input).unwrap().score(&to_indices(&y));
            let slow = oracle_score(&model, &input, &y);
            assert!((fast - slow).abs() < 1e-12 && (pot - slow).abs() < 1e-12);
        }
    }

    #[test]
    fn score_is_linear_in_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (model, input) = random_instance(&mut rng, 5, &[(0, 1), (2, 1), (3, 4)]);
        let y: Vec<_> = (0..5)
            .map(|_| BiesoLabel::ALL[rng.gen_range(0..5)])
            .collect();
        let base = model.score(&input, &y).unwrap();
        for alpha in [0.0, 0.5, 3.0] {
            let mut scaled = model.clone();
            scaled.scale(alpha);
            assert!((scaled.score(&input, &y).unwrap() - alpha * base).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (_, input) = random_instance(&mut rng, 2, &[(0, 1)]);
        let model = CrfModel::<f64>::zeros(4, 2);
        assert!(matches!(
            model.score(&input, &[BiesoLabel::B; 2]),
            Err(Error::Dimension(_))
        ));
    }
}
