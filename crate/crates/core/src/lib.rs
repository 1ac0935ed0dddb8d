//! Table row recognition on graphs of text lines.
//!
//! Pages of text-line boxes become line-of-sight graphs; graph learners
//! (logit baselines, GCN, edge convolutional networks, a graph CRF) tag
//! every line with a BIESO label; the tags are then decoded into cells
//! and table rows and scored against ground truth.

pub mod baselines;
pub mod crf;
pub mod docmodel;
pub mod error;
pub mod eval;
pub mod features;
pub mod graphbuild;
pub mod linalg;
pub mod modelio;
pub mod neural;
pub mod pipeline;
pub mod rowdecode;
pub mod scalar;
pub mod synthgen;

pub use docmodel::{BiesoLabel, BoundingBox, Column, Dataset, Page, TextLine};
pub use error::{Error, Result};
pub use graphbuild::{build_graph, EdgeOrientation, GraphEdge, GraphParams, PageGraph};
pub use linalg::Matrix;
pub use scalar::Real;

/// Double-precision edge or graph convolutional network.
pub type EcnModel = neural::Network<f64>;
/// Single-precision network.
pub type EcnModelF32 = neural::Network<f32>;
pub type LogitModel = baselines::LogitModel<f64>;
pub type LogitModelF32 = baselines::LogitModel<f32>;
pub type CrfModel = crf::CrfModel<f64>;
pub type CrfModelF32 = crf::CrfModel<f32>;
