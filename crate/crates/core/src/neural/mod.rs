//! Graph convolutional networks and edge convolutional networks.
//!
//! A GCN layer computes `f(Â H W + b)` with the symmetric normalization
//! `Â = D^{-1/2} (A + Aᵗ + I) D^{-1/2}`, or `f([P, Â P])` when stacked. An ECN layer first projects
//! `P = H W + b`, then aggregates `P` through learned gates
//! `g(w) = S · diag(relu(w · F)) · Tᵗ`, where `S`/`T` are the edge
//! source/target incidence matrices and `F` the `d × m` edge features.
//! The three variants combine `P` with the gated terms by concatenation
//! (full stacking), by concatenating their mean (sum stacking) or by
//! addition.

mod tape;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::docmodel::BiesoLabel;
use crate::error::{Error, Result};
use crate::graphbuild::PageGraph;
use crate::linalg::Matrix;
use crate::scalar::Real;

pub use tape::{softmax_rows, Grads, Tape, Var};
pub use train::{train, Adam, EpochRecord, TrainConfig, TrainOutcome, TrainingExample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EcnVariant {
    #[serde(rename = "fullstack")]
    FullStacking,
    #[serde(rename = "sumstack")]
    SumStacking,
    Adding,
}

/// Which gated aggregations an ECN convolution uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionMode {
    /// Only `S · diag(s) · Tᵗ`.
    Forward,
    /// `S · diag(s) · Tᵗ + T · diag(s') · Sᵗ` with separate gate weights.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    Gcn,
    Ecn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub kind: NetworkKind,
    pub layers: usize,
    /// Convolutions per ECN layer (ignored by GCN layers).
    pub convs: usize,
    /// Projection width of every layer.
    pub hidden: usize,
    pub variant: EcnVariant,
    pub direction: DirectionMode,
    pub activation: Activation,
    /// GCN layers emit `[P, Â P]` with `P = H W + b` instead of `Â H W + b`.
    #[serde(default)]
    pub stacked: bool,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub classes: usize,
}

impl NetworkConfig {
    /// Three layers of ten full-stacking convolutions.
    pub fn ecn(node_dim: usize, edge_dim: usize) -> Self {
        Self {
            kind: NetworkKind::Ecn,
            layers: 3,
            convs: 10,
            hidden: 32,
            variant: EcnVariant::FullStacking,
            direction: DirectionMode::Both,
            activation: Activation::Relu,
            stacked: false,
            node_dim,
            edge_dim,
            classes: BiesoLabel::COUNT,
        }
    }

    /// Eight layers with one convolution each.
    pub fn ecn_deep(node_dim: usize, edge_dim: usize) -> Self {
        Self {
            layers: 8,
            convs: 1,
            ..Self::ecn(node_dim, edge_dim)
        }
    }

    pub fn gcn(node_dim: usize) -> Self {
        Self {
            kind: NetworkKind::Gcn,
            layers: 3,
            convs: 0,
            hidden: 32,
            variant: EcnVariant::FullStacking,
            direction: DirectionMode::Both,
            activation: Activation::Relu,
            stacked: false,
            node_dim,
            edge_dim: 0,
            classes: BiesoLabel::COUNT,
        }
    }

    /// Output width of one hidden layer.
    pub fn layer_width(&self) -> usize {
        match self.kind {
            NetworkKind::Gcn if self.stacked => 2 * self.hidden,
            NetworkKind::Gcn => self.hidden,
            NetworkKind::Ecn => match self.variant {
                EcnVariant::FullStacking => (self.convs + 1) * self.hidden,
                EcnVariant::SumStacking => 2 * self.hidden,
                EcnVariant::Adding => self.hidden,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Model("network needs at least one layer".into()));
        }
        if self.hidden == 0 || self.classes == 0 || self.node_dim == 0 {
            return Err(Error::Model("network widths must be positive".into()));
        }
        if self.kind == NetworkKind::Ecn && (self.convs == 0 || self.edge_dim == 0) {
            return Err(Error::Model(
                "ECN needs at least one convolution and one edge feature".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// `in × out`
    pub weight: Matrix<T>,
    /// `1 × out`
    pub bias: Matrix<T>,
}

impl<T: Real> Linear<T> {
    fn glorot(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        Self {
            weight: Matrix::from_fn(input, output, |_, _| T::of(rng.gen_range(-limit..limit))),
            bias: Matrix::zeros(1, output),
        }
    }
}

/// One learned edge convolution; `weight` is `1 × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGate<T> {
    pub weight: Matrix<T>,
}

impl<T: Real> EdgeGate<T> {
    fn init(edge_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (edge_dim as f64).sqrt();
        Self {
            weight: Matrix::from_fn(1, edge_dim, |_, _| T::of(rng.gen_range(-0.5..1.5) * scale)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer<T> {
    pub linear: Linear<T>,
    pub stacked: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcnLayer<T> {
    pub linear: Linear<T>,
    /// Gates applied through `S · diag(s) · Tᵗ`, one per convolution.
    pub forward: Vec<EdgeGate<T>>,
    /// Gates applied through `T · diag(s) · Sᵗ`; empty in forward mode.
    pub backward: Vec<EdgeGate<T>>,
    pub variant: EcnVariant,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Gcn(GcnLayer<T>),
    Ecn(EcnLayer<T>),
}

impl<T> Layer<T> {
    fn tensors(&self) -> Vec<&Matrix<T>> {
        match self {
            Layer::Gcn(l) => vec![&l.linear.weight, &l.linear.bias],
            Layer::Ecn(l) => {
                let mut v = vec![&l.linear.weight, &l.linear.bias];
                v.extend(l.forward.iter().map(|g| &g.weight));
                v.extend(l.backward.iter().map(|g| &g.weight));
                v
            }
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        match self {
            Layer::Gcn(l) => vec![&mut l.linear.weight, &mut l.linear.bias],
            Layer::Ecn(l) => {
                let mut v = vec![&mut l.linear.weight, &mut l.linear.bias];
                v.extend(l.forward.iter_mut().map(|g| &mut g.weight));
                v.extend(l.backward.iter_mut().map(|g| &mut g.weight));
                v
            }
        }
    }
}

/// Per-page model input: graph structure plus normalized features.
#[derive(Debug, Clone)]
pub struct GraphInput<T> {
    pub n: usize,
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
    /// Entries of `D^{-1/2} (A + Aᵗ + I) D^{-1/2}`.
    pub norm_adj: Vec<(usize, usize, T)>,
    /// `n × a`
    pub node: Matrix<T>,
    /// `d × m`
    pub edge: Matrix<T>,
}

impl<T: Real> GraphInput<T> {
    pub fn new(graph: &PageGraph, node: Matrix<T>, edge: Matrix<T>) -> Result<Self> {
        Self::from_edges(
            graph.node_count(),
            graph.sources(),
            graph.targets(),
            node,
            edge,
        )
    }

    pub fn from_edges(
        n: usize,
        sources: Vec<usize>,
        targets: Vec<usize>,
        node: Matrix<T>,
        edge: Matrix<T>,
    ) -> Result<Self> {
        if node.rows() != n {
            return Err(Error::Dimension(format!(
                "{} node feature rows for {n} nodes",
                node.rows()
            )));
        }
        if edge.cols() != sources.len() || sources.len() != targets.len() {
            return Err(Error::Dimension(format!(
                "{} edge feature columns for {} edges",
                edge.cols(),
                sources.len()
            )));
        }
        if sources.iter().chain(&targets).any(|&i| i >= n) {
            return Err(Error::Dimension("edge endpoint out of range".into()));
        }
        let mut neighbors = vec![Vec::new(); n];
        for (&s, &t) in sources.iter().zip(&targets) {
            if s != t {
                neighbors[s].push(t);
                neighbors[t].push(s);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        let degree: Vec<f64> = neighbors.iter().map(|l| 1.0 + l.len() as f64).collect();
        let mut norm_adj = Vec::with_capacity(n + 2 * sources.len());
        for (i, list) in neighbors.iter().enumerate() {
            norm_adj.push((i, i, T::of(1.0 / degree[i])));
            for &j in list {
                norm_adj.push((i, j, T::of(1.0 / (degree[i] * degree[j]).sqrt())));
            }
        }
        Ok(Self {
            n,
            sources,
            targets,
            norm_adj,
            node,
            edge,
        })
    }

    pub fn edge_count(&self) -> usize {
        self.sources.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub config: NetworkConfig,
    pub layers: Vec<Layer<T>>,
    pub output: Linear<T>,
}

/// Gradient tensors in the same order as [`Network::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Matrix<T>>,
}

/// A recorded forward pass.
pub struct ForwardPass<'g, T> {
    pub tape: Tape<'g, T>,
    pub params: Vec<Var>,
    pub logits: Var,
}

impl<T: Real> Network<T> {
    /// Randomly initialised network (Glorot weights, zero biases).
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(config, &mut rng)
    }

    pub fn with_rng(config: NetworkConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.layers);
        let mut width = config.node_dim;
        for _ in 0..config.layers {
            let linear = Linear::glorot(width, config.hidden, rng);
            layers.push(match config.kind {
                NetworkKind::Gcn => Layer::Gcn(GcnLayer {
                    linear,
                    stacked: config.stacked,
                }),
                NetworkKind::Ecn => {
                    let forward = (0..config.convs)
                        .map(|_| EdgeGate::init(config.edge_dim, rng))
                        .collect();
                    let backward = match config.direction {
                        DirectionMode::Forward => Vec::new(),
                        DirectionMode::Both => (0..config.convs)
                            .map(|_| EdgeGate::init(config.edge_dim, rng))
                            .collect(),
                    };
                    Layer::Ecn(EcnLayer {
                        linear,
                        forward,
                        backward,
                        variant: config.variant,
                    })
                }
            });
            width = config.layer_width();
        }
        let output = Linear::glorot(width, config.classes, rng);
        Ok(Self {
            config,
            layers,
            output,
        })
    }

    pub fn tensors(&self) -> Vec<&Matrix<T>> {
        let mut v: Vec<&Matrix<T>> = self.layers.iter().flat_map(Layer::tensors).collect();
        v.push(&self.output.weight);
        v.push(&self.output.bias);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut v: Vec<&mut Matrix<T>> = self
            .layers
            .iter_mut()
            .flat_map(Layer::tensors_mut)
            .collect();
        v.push(&mut self.output.weight);
        v.push(&mut self.output.bias);
        v
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.rows() * t.cols()).sum()
    }

    /// Sets every parameter to zero.
    pub fn zero_params(&mut self) {
        for t in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    fn check_input(&self, input: &GraphInput<T>) -> Result<()> {
        if input.n == 0 {
            return Err(Error::Dimension("empty graph".into()));
        }
        if input.node.cols() != self.config.node_dim {
            return Err(Error::Dimension(format!(
                "model expects {} node features, got {}",
                self.config.node_dim,
                input.node.cols()
            )));
        }
        if self.config.kind == NetworkKind::Ecn && input.edge.rows() != self.config.edge_dim {
            return Err(Error::Dimension(format!(
                "model expects {} edge features, got {}",
                self.config.edge_dim,
                input.edge.rows()
            )));
        }
        Ok(())
    }

    /// Records the forward pass up to the logits. With `dropout`, hidden
    /// activations are masked (inverted dropout) using the given RNG.
    pub fn record<'g>(
        &self,
        input: &'g GraphInput<T>,
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<ForwardPass<'g, T>> {
        self.check_input(input)?;
        let mut tape = Tape::new();
        let params: Vec<Var> = self
            .tensors()
            .into_iter()
            .map(|t| tape.param(t.clone()))
            .collect();
        let features = tape.constant(input.node.clone());
        let edge_features = tape.constant(input.edge.clone());
        let mut dropout = dropout.filter(|(p, _)| *p > 0.0);
        let mut h = features;
        let mut cursor = 0;
        for layer in &self.layers {
            let count = layer.tensors().len();
            let vars = &params[cursor..cursor + count];
            cursor += count;
            let z = match layer {
                Layer::Gcn(l) if l.stacked => {
                    let q = tape.matmul(h, vars[0]);
                    let p = tape.add_row(q, vars[1]);
                    let agg = tape.sparse(&input.norm_adj, input.n, p);
                    tape.concat(&[p, agg])
                }
                Layer::Gcn(_) => {
                    let q = tape.matmul(h, vars[0]);
                    let agg = tape.sparse(&input.norm_adj, input.n, q);
                    tape.add_row(agg, vars[1])
                }
                Layer::Ecn(l) => {
                    let q = tape.matmul(h, vars[0]);
                    let p = tape.add_row(q, vars[1]);
                    let convs = l.forward.len();
                    let mut aggregated = Vec::with_capacity(convs);
                    for c in 0..convs {
                        let raw = tape.matmul(vars[2 + c], edge_features);
                        let s = tape.relu(raw);
                        let mut a = tape.gate(s, p, &input.sources, &input.targets);
                        if !l.backward.is_empty() {
                            let raw = tape.matmul(vars[2 + convs + c], edge_features);
                            let s = tape.relu(raw);
                            let b = tape.gate(s, p, &input.targets, &input.sources);
                            a = tape.add(a, b);
                        }
                        aggregated.push(a);
                    }
                    match l.variant {
                        EcnVariant::FullStacking => {
                            let mut parts = vec![p];
                            parts.extend(aggregated);
                            tape.concat(&parts)
                        }
                        EcnVariant::SumStacking => {
                            let sum = sum_vars(&mut tape, &aggregated);
                            let mean = tape.scale(sum, T::of(1.0 / convs as f64));
                            tape.concat(&[p, mean])
                        }
                        EcnVariant::Adding => {
                            let sum = sum_vars(&mut tape, &aggregated);
                            tape.add(p, sum)
                        }
                    }
                }
            };
            h = match self.config.activation {
                Activation::Relu => tape.relu(z),
                Activation::Identity => z,
            };
            if let Some((rate, rng)) = dropout.as_mut() {
                let keep = 1.0 - *rate;
                let scale = T::of(1.0 / keep);
                let (r, c) = tape.value(h).shape();
                let mask = Matrix::from_fn(r, c, |_, _| {
                    if rng.gen::<f64>() < keep {
                        scale
                    } else {
                        T::zero()
                    }
                });
                h = tape.mask(h, mask);
            }
        }
        let q = tape.matmul(h, params[cursor]);
        let logits = tape.add_row(q, params[cursor + 1]);
        Ok(ForwardPass {
            tape,
            params,
            logits,
        })
    }

    /// Class probabilities, `n × classes`, dropout disabled.
    pub fn forward(&self, input: &GraphInput<T>) -> Result<Matrix<T>> {
        let pass = self.record(input, None)?;
        Ok(pass.tape.softmax(pass.logits))
    }

    /// Mean cross-entropy and its gradient with respect to every tensor.
    pub fn loss_and_gradients(
        &self,
        input: &GraphInput<T>,
        labels: &[Option<usize>],
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<(T, Gradients<T>)> {
        if labels.len() != input.n {
            return Err(Error::Dimension(format!(
                "{} labels for {} nodes",
                labels.len(),
                input.n
            )));
        }
        if labels.iter().all(Option::is_none) {
            return Err(Error::Config("no supervised node".into()));
        }
        let mut pass = self.record(input, dropout)?;
        let loss = pass.tape.softmax_xent(pass.logits, labels.to_vec());
        let value = pass.tape.value(loss)[(0, 0)];
        let grads = pass.tape.backward(loss);
        let tensors = pass
            .params
            .iter()
            .map(|&v| grads.get_or_zeros(v, &pass.tape))
            .collect();
        Ok((value, Gradients { tensors }))
    }

    pub fn predict(&self, input: &GraphInput<T>) -> Result<Vec<BiesoLabel>> {
        Ok(argmax_labels(&self.forward(input)?))
    }
}

fn sum_vars<T: Real>(tape: &mut Tape<'_, T>, vars: &[Var]) -> Var {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v);
    }
    acc
}

/// Row-wise argmax; ties go to the earliest label in `B < I < E < S < O`.
pub fn argmax_labels<T: Real>(probs: &Matrix<T>) -> Vec<BiesoLabel> {
    (0..probs.rows())
        .map(|i| {
            let row = probs.row(i);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            BiesoLabel::from_index(best).expect("five classes")
        })
        .collect()
}

/// Mean negative log-likelihood of `labels` over the rows selected by `mask`.
pub fn loss<T: Real>(probs: &Matrix<T>, labels: &[BiesoLabel], mask: &[bool]) -> Result<T> {
    if labels.len() != probs.rows() || mask.len() != probs.rows() {
        return Err(Error::Dimension(
            "labels, mask and probabilities disagree in length".into(),
        ));
    }
    let mut total = T::zero();
    let mut count = 0usize;
    for (i, (&label, &keep)) in labels.iter().zip(mask).enumerate() {
        if keep {
            total -= probs[(i, label.index())].ln();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Config("loss over an empty mask".into()));
    }
    Ok(total / T::of(count as f64))
}
