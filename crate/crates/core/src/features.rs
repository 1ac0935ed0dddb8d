//! Geometric node and edge features plus quantile normalization.
//!
//! Feature set version 1. No textual features are used.

use serde::{Deserialize, Serialize};

use crate::docmodel::{median, BoundingBox, Page};
use crate::error::{Error, Result};
use crate::graphbuild::{EdgeOrientation, PageGraph};
use crate::linalg::Matrix;

pub const FEATURE_SET_VERSION: u32 = 1;
pub const DEFAULT_KNOTS: usize = 16;

/// How a feature is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Quantile,
    /// Indicators and the bias column, already in {0, 1}.
    Passthrough,
}

const NODE_FEATURES: &[(&str, FeatureKind)] = &[
    ("left_page", FeatureKind::Quantile),
    ("top_page", FeatureKind::Quantile),
    ("right_page", FeatureKind::Quantile),
    ("bottom_page", FeatureKind::Quantile),
    ("center_x_page", FeatureKind::Quantile),
    ("center_y_page", FeatureKind::Quantile),
    ("width_table", FeatureKind::Quantile),
    ("height_table", FeatureKind::Quantile),
    ("inside_table", FeatureKind::Passthrough),
    ("above_table", FeatureKind::Passthrough),
    ("below_table", FeatureKind::Passthrough),
    ("center_x_in_column", FeatureKind::Quantile),
    ("center_y_in_table", FeatureKind::Quantile),
    ("in_degree_vertical", FeatureKind::Quantile),
    ("out_degree_vertical", FeatureKind::Quantile),
    ("in_degree_horizontal", FeatureKind::Quantile),
    ("out_degree_horizontal", FeatureKind::Quantile),
    ("aspect_ratio", FeatureKind::Quantile),
    ("height_rel_median", FeatureKind::Quantile),
    ("width_rel_column", FeatureKind::Quantile),
    ("bias", FeatureKind::Passthrough),
];

const EDGE_FEATURES: &[(&str, FeatureKind)] = &[
    ("horizontal", FeatureKind::Passthrough),
    ("vertical", FeatureKind::Passthrough),
    ("gap_page", FeatureKind::Quantile),
    ("gap_line_height", FeatureKind::Quantile),
    ("gap_median_height", FeatureKind::Quantile),
    ("overlap", FeatureKind::Quantile),
    ("left_delta", FeatureKind::Quantile),
    ("center_x_delta", FeatureKind::Quantile),
    ("right_delta", FeatureKind::Quantile),
    ("top_delta", FeatureKind::Quantile),
    ("middle_delta", FeatureKind::Quantile),
    ("bottom_delta", FeatureKind::Quantile),
    ("width_diff", FeatureKind::Quantile),
    ("height_diff", FeatureKind::Quantile),
    ("center_y_shift", FeatureKind::Quantile),
    ("center_x_shift", FeatureKind::Quantile),
    ("same_column", FeatureKind::Passthrough),
    ("bias", FeatureKind::Passthrough),
];

fn names(table: &[(&str, FeatureKind)]) -> Vec<String> {
    table.iter().map(|(n, _)| n.to_string()).collect()
}

/// Names of the node features, in column order.
pub fn node_feature_names() -> Vec<String> {
    names(NODE_FEATURES)
}

fn kinds(table: &[(&str, FeatureKind)]) -> Vec<FeatureKind> {
    table.iter().map(|&(_, k)| k).collect()
}

/// `n × a` node feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    pub values: Matrix<f64>,
    pub names: Vec<String>,
    pub kinds: Vec<FeatureKind>,
}

/// `d × m` edge feature matrix; column `j` describes edge `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFeatures {
    pub values: Matrix<f64>,
    pub names: Vec<String>,
    pub kinds: Vec<FeatureKind>,
}

impl NodeFeatures {
    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(
            (0..self.values.rows())
                .map(|i| self.values[(i, j)])
                .collect(),
        )
    }
}

impl EdgeFeatures {
    pub fn dim(&self) -> usize {
        self.values.rows()
    }

    pub fn row(&self, name: &str) -> Option<&[f64]> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.values.row(j))
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

pub fn node_features(page: &Page, graph: &PageGraph) -> NodeFeatures {
    let n = page.lines.len();
    let a = NODE_FEATURES.len();
    let (pw, ph) = (page.width, page.height);
    let region = &page.table_region;
    let median_h = page.median_line_height().unwrap_or(1.0);
    let mut degree = vec![[0.0f64; 4]; n];
    for e in &graph.edges {
        let slot = match e.orientation {
            EdgeOrientation::Vertical => 0,
            EdgeOrientation::Horizontal => 2,
        };
        degree[e.target][slot] += 1.0;
        degree[e.source][slot + 1] += 1.0;
    }
    let mut values = Matrix::zeros(n, a);
    for (i, line) in page.lines.iter().enumerate() {
        let b = &line.bbox;
        let column = line
            .column
            .and_then(|c| page.columns.get(c))
            .map(|c| &c.bbox);
        let (cx, cy) = (b.center_x(), b.center_y());
        let row = [
            b.x / pw,
            b.y / ph,
            b.right() / pw,
            b.bottom() / ph,
            cx / pw,
            cy / ph,
            b.w / region.w,
            b.h / region.h,
            indicator(cy >= region.y && cy <= region.bottom()),
            indicator(cy < region.y),
            indicator(cy > region.bottom()),
            column.map_or(0.0, |c| ratio(cx - c.x, c.w)),
            (cy - region.y) / region.h,
            degree[i][0],
            degree[i][1],
            degree[i][2],
            degree[i][3],
            b.h / b.w,
            b.h / median_h,
            column.map_or(0.0, |c| ratio(b.w, c.w)),
            1.0,
        ];
        values.row_mut(i).copy_from_slice(&row);
    }
    NodeFeatures {
        values,
        names: names(NODE_FEATURES),
        kinds: kinds(NODE_FEATURES),
    }
}

pub fn edge_features(page: &Page, graph: &PageGraph) -> EdgeFeatures {
    let d = EDGE_FEATURES.len();
    let m = graph.edge_count();
    let mut heights: Vec<f64> = page.lines.iter().map(|l| l.bbox.h).collect();
    let median_h = median(&mut heights).unwrap_or(1.0);
    let mut values = Matrix::zeros(d, m);
    for (j, e) in graph.edges.iter().enumerate() {
        let (ls, lt) = (&page.lines[e.source], &page.lines[e.target]);
        let (s, t): (&BoundingBox, &BoundingBox) = (&ls.bbox, &lt.bbox);
        let same_column = ls.column.is_some() && ls.column == lt.column;
        let norm_w = if same_column {
            page.columns[ls.column.unwrap_or_default()].bbox.w
        } else {
            page.width
        };
        let mean_h = 0.5 * (s.h + t.h);
        let horizontal = e.orientation == EdgeOrientation::Horizontal;
        let along = if horizontal { page.width } else { page.height };
        let col = [
            indicator(horizontal),
            indicator(!horizontal),
            e.gap / along,
            e.gap / mean_h,
            e.gap / median_h,
            e.overlap,
            (s.x - t.x).abs() / norm_w,
            (s.center_x() - t.center_x()).abs() / norm_w,
            (s.right() - t.right()).abs() / norm_w,
            (s.y - t.y).abs() / mean_h,
            (s.center_y() - t.center_y()).abs() / mean_h,
            (s.bottom() - t.bottom()).abs() / mean_h,
            (s.w - t.w) / norm_w,
            (s.h - t.h) / mean_h,
            (t.center_y() - s.center_y()) / mean_h,
            (t.center_x() - s.center_x()) / page.width,
            indicator(same_column),
            1.0,
        ];
        for (k, v) in col.into_iter().enumerate() {
            values[(k, j)] = v;
        }
    }
    EdgeFeatures {
        values,
        names: names(EDGE_FEATURES),
        kinds: kinds(EDGE_FEATURES),
    }
}

/// Which edge features a model sees; the reduced sets are ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeFeatureSet {
    #[default]
    Full,
    /// A single constant-1 feature per edge.
    Constant,
    /// Only the horizontal/vertical one-hot.
    Orientation,
}

impl EdgeFeatureSet {
    fn wanted(self) -> Option<&'static [&'static str]> {
        match self {
            Self::Full => None,
            Self::Constant => Some(&["bias"]),
            Self::Orientation => Some(&["horizontal", "vertical"]),
        }
    }

    /// Names of the edge features this set keeps, in order.
    pub fn names(self) -> Vec<String> {
        match self.wanted() {
            None => names(EDGE_FEATURES),
            Some(w) => w.iter().map(|n| n.to_string()).collect(),
        }
    }

    pub fn select(self, features: &EdgeFeatures) -> EdgeFeatures {
        let Some(wanted) = self.wanted() else {
            return features.clone();
        };
        let rows: Vec<usize> = wanted
            .iter()
            .map(|w| {
                features
                    .names
                    .iter()
                    .position(|n| n == w)
                    .expect("known edge feature")
            })
            .collect();
        let m = features.values.cols();
        let values = Matrix::from_fn(rows.len(), m, |i, j| features.values[(rows[i], j)]);
        EdgeFeatures {
            values,
            names: rows.iter().map(|&r| features.names[r].clone()).collect(),
            kinds: rows.iter().map(|&r| features.kinds[r]).collect(),
        }
    }
}

/// Per-feature transform learned by [`fit_normalizer`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureScale {
    /// Empirical quantiles at levels `i / (k - 1)`.
    Quantile {
        knots: Vec<f64>,
    },
    Passthrough,
}

impl FeatureScale {
    /// Piecewise-linear CDF estimate clamped to [0, 1]. Degenerate
    /// (constant) knots map everything to 0.
    pub fn transform(&self, v: f64) -> f64 {
        let knots = match self {
            Self::Passthrough => return v,
            Self::Quantile { knots } => knots,
        };
        let k = knots.len();
        if k < 2 || knots[0] == knots[k - 1] || v <= knots[0] {
            return 0.0;
        }
        if v >= knots[k - 1] {
            return 1.0;
        }
        // largest i with knots[i] <= v; i < k - 1 since v < knots[k - 1]
        let i = knots.partition_point(|&q| q <= v) - 1;
        let (lo, hi) = (knots[i], knots[i + 1]);
        (i as f64 + (v - lo) / (hi - lo)) / (k - 1) as f64
    }
}

fn quantile_knots(values: &mut [f64], k: usize) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    values.sort_by(f64::total_cmp);
    let last = (values.len() - 1) as f64;
    (0..k)
        .map(|i| {
            let pos = if k == 1 {
                0.0
            } else {
                last * i as f64 / (k - 1) as f64
            };
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            values[lo] + frac * (values[hi] - values[lo])
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileNormalizer {
    pub knots: usize,
    pub node_names: Vec<String>,
    pub edge_names: Vec<String>,
    pub node: Vec<FeatureScale>,
    pub edge: Vec<FeatureScale>,
}

fn fit_scales(kinds: &[FeatureKind], columns: Vec<Vec<f64>>, k: usize) -> Vec<FeatureScale> {
    kinds
        .iter()
        .zip(columns)
        .map(|(kind, mut col)| match kind {
            FeatureKind::Passthrough => FeatureScale::Passthrough,
            FeatureKind::Quantile => FeatureScale::Quantile {
                knots: quantile_knots(&mut col, k),
            },
        })
        .collect()
}

/// Fits quantile knots per feature on training pages only.
pub fn fit_normalizer(
    train: &[(&NodeFeatures, &EdgeFeatures)],
    knots: usize,
) -> Result<QuantileNormalizer> {
    let Some((first_node, first_edge)) = train.first() else {
        return Err(Error::Config(
            "cannot fit a normalizer on an empty training set".into(),
        ));
    };
    if train.iter().all(|(n, _)| n.values.rows() == 0) {
        return Err(Error::Config("training pages contain no lines".into()));
    }
    if knots < 2 {
        return Err(Error::Config("normalizer needs at least 2 knots".into()));
    }
    let (a, d) = (first_node.dim(), first_edge.dim());
    let mut node_cols = vec![Vec::new(); a];
    let mut edge_cols = vec![Vec::new(); d];
    for (nf, ef) in train {
        if nf.dim() != a || ef.dim() != d {
            return Err(Error::Dimension(format!(
                "training features have dims ({}, {}), expected ({a}, {d})",
                nf.dim(),
                ef.dim()
            )));
        }
        for i in 0..nf.values.rows() {
            for (j, col) in node_cols.iter_mut().enumerate() {
                col.push(nf.values[(i, j)]);
            }
        }
        for (j, col) in edge_cols.iter_mut().enumerate() {
            col.extend_from_slice(ef.values.row(j));
        }
    }
    Ok(QuantileNormalizer {
        knots,
        node_names: first_node.names.clone(),
        edge_names: first_edge.names.clone(),
        node: fit_scales(&first_node.kinds, node_cols, knots),
        edge: fit_scales(&first_edge.kinds, edge_cols, knots),
    })
}

impl QuantileNormalizer {
    pub fn apply_node(&self, features: &NodeFeatures) -> Result<NodeFeatures> {
        if features.dim() != self.node.len() {
            return Err(Error::Dimension(format!(
                "node features have {} columns, normalizer expects {}",
                features.dim(),
                self.node.len()
            )));
        }
        let v = &features.values;
        Ok(NodeFeatures {
            values: Matrix::from_fn(v.rows(), v.cols(), |i, j| self.node[j].transform(v[(i, j)])),
            names: features.names.clone(),
            kinds: features.kinds.clone(),
        })
    }

    pub fn apply_edge(&self, features: &EdgeFeatures) -> Result<EdgeFeatures> {
        if features.dim() != self.edge.len() {
            return Err(Error::Dimension(format!(
                "edge features have {} rows, normalizer expects {}",
                features.dim(),
                self.edge.len()
            )));
        }
        let v = &features.values;
        Ok(EdgeFeatures {
            values: Matrix::from_fn(v.rows(), v.cols(), |i, j| self.edge[i].transform(v[(i, j)])),
            names: features.names.clone(),
            kinds: features.kinds.clone(),
        })
    }

    pub fn apply(
        &self,
        node: &NodeFeatures,
        edge: &EdgeFeatures,
    ) -> Result<(NodeFeatures, EdgeFeatures)> {
        Ok((self.apply_node(node)?, self.apply_edge(edge)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::docmodel::{Column, TextLine};
    use crate::graphbuild::{build_graph, GraphParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn page(lines: &[(f64, f64, f64, f64)]) -> Page {
        Page {
            id: "f".into(),
            width: 100.0,
            height: 100.0,
            table_region: BoundingBox::new(10.0, 10.0, 80.0, 80.0),
            columns: vec![Column {
                index: 0,
                bbox: BoundingBox::new(10.0, 10.0, 80.0, 80.0),
            }],
            lines: lines
                .iter()
                .enumerate()
                .map(|(i, &(x, y, w, h))| {
                    let mut l = TextLine::new(format!("l{i}"), BoundingBox::new(x, y, w, h));
                    l.column = Some(0);
                    l
                })
                .collect(),
        }
    }

    fn feats(p: &Page) -> (NodeFeatures, EdgeFeatures) {
        let g = build_graph(p, &GraphParams::default());
        (node_features(p, &g), edge_features(p, &g))
    }

    fn single(values: &[f64], kind: FeatureKind) -> NodeFeatures {
        NodeFeatures {
            values: Matrix::from_vec(values.len(), 1, values.to_vec()),
            names: vec!["v".into()],
            kinds: vec![kind],
        }
    }

    fn no_edges() -> EdgeFeatures {
        EdgeFeatures {
            values: Matrix::zeros(0, 0),
            names: vec![],
            kinds: vec![],
        }
    }

    #[test]
    fn centered_line_has_half_coordinates() {
        let (nf, _) = feats(&page(&[(40.0, 45.0, 20.0, 10.0)]));
        assert_eq!(nf.column("center_x_page").unwrap(), vec![0.5]);
        assert_eq!(nf.column("center_y_page").unwrap(), vec![0.5]);
    }

    #[test]
    fn isolated_line_has_zero_degree() {
        let (nf, ef) = feats(&page(&[(40.0, 45.0, 20.0, 10.0)]));
        for name in [
            "in_degree_vertical",
            "out_degree_vertical",
            "in_degree_horizontal",
            "out_degree_horizontal",
        ] {
            assert_eq!(nf.column(name).unwrap(), vec![0.0]);
        }
        assert_eq!(ef.values.cols(), 0);
        assert_eq!(ef.dim(), EDGE_FEATURES.len());
    }

    #[test]
    fn table_relative_features_are_translation_invariant() {
        let p = page(&[(20.0, 20.0, 30.0, 5.0), (20.0, 30.0, 20.0, 5.0)]);
        let mut q = p.clone();
        q.table_region = q.table_region.translated(3.0, 4.0);
        for c in &mut q.columns {
            c.bbox = c.bbox.translated(3.0, 4.0);
        }
        for l in &mut q.lines {
            l.bbox = l.bbox.translated(3.0, 4.0);
        }
        let (a, _) = feats(&p);
        let (b, _) = feats(&q);
        for name in [
            "width_table",
            "height_table",
            "center_x_in_column",
            "center_y_in_table",
            "width_rel_column",
        ] {
            let (x, y) = (a.column(name).unwrap(), b.column(name).unwrap());
            for (u, v) in x.iter().zip(&y) {
                assert!((u - v).abs() < 1e-12, "{name}: {u} vs {v}");
            }
        }
    }

    #[test]
    fn identical_stacked_boxes_are_justified() {
        let (_, ef) = feats(&page(&[(20.0, 20.0, 30.0, 5.0), (20.0, 30.0, 30.0, 5.0)]));
        assert_eq!(ef.values.cols(), 1);
        for name in ["left_delta", "center_x_delta", "right_delta"] {
            assert_eq!(ef.row(name).unwrap(), &[0.0]);
        }
        assert_eq!(ef.row("overlap").unwrap(), &[1.0]);
        assert_eq!(ef.row("vertical").unwrap(), &[1.0]);
        assert_eq!(ef.row("horizontal").unwrap(), &[0.0]);
    }

    #[test]
    fn orientation_one_hot_and_bias() {
        let (_, ef) = feats(&page(&[
            (20.0, 20.0, 10.0, 5.0),
            (40.0, 21.0, 10.0, 5.0),
            (20.0, 40.0, 10.0, 5.0),
        ]));
        let kinds: Vec<(f64, f64)> = (0..ef.values.cols())
            .map(|j| {
                (
                    ef.row("horizontal").unwrap()[j],
                    ef.row("vertical").unwrap()[j],
                )
            })
            .collect();
        assert!(kinds.contains(&(1.0, 0.0)) && kinds.contains(&(0.0, 1.0)));
        assert!(ef.row("bias").unwrap().iter().all(|&b| b == 1.0));
    }

    #[test]
    fn page_normalized_features_are_scale_invariant() {
        let p = page(&[
            (20.0, 20.0, 30.0, 5.0),
            (22.0, 30.0, 20.0, 5.0),
            (60.0, 21.0, 10.0, 4.0),
        ]);
        for s in [0.5, 2.0, 4.0] {
            let mut q = p.clone();
            q.width *= s;
            q.height *= s;
            q.table_region = q.table_region.scaled(s);
            for c in &mut q.columns {
                c.bbox = c.bbox.scaled(s);
            }
            for l in &mut q.lines {
                l.bbox = l.bbox.scaled(s);
            }
            let (a, ea) = feats(&p);
            let (b, eb) = feats(&q);
            assert_eq!(a, b);
            assert_eq!(ea, eb);
        }
    }

    #[test]
    fn constant_feature_maps_to_zero() {
        let nf = single(&[3.7; 10], FeatureKind::Quantile);
        let ef = no_edges();
        let norm = fit_normalizer(&[(&nf, &ef)], DEFAULT_KNOTS).unwrap();
        let out = norm
            .apply_node(&single(&[3.7, -1.0, 100.0], FeatureKind::Quantile))
            .unwrap();
        assert_eq!(out.values.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn uniform_feature_is_nearly_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sample: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
        let nf = single(&sample, FeatureKind::Quantile);
        let ef = no_edges();
        let norm = fit_normalizer(&[(&nf, &ef)], DEFAULT_KNOTS).unwrap();
        for i in 0..=100 {
            let v = i as f64 / 100.0;
            let t = norm.node[0].transform(v);
            assert!((t - v).abs() < 0.05, "{v} -> {t}");
        }
    }

    #[test]
    fn values_outside_knots_are_clamped() {
        let nf = single(&[1.0, 2.0, 3.0, 4.0, 5.0], FeatureKind::Quantile);
        let ef = no_edges();
        let norm = fit_normalizer(&[(&nf, &ef)], 5).unwrap();
        assert_eq!(norm.node[0].transform(-10.0), 0.0);
        assert_eq!(norm.node[0].transform(10.0), 1.0);
    }

    #[test]
    fn knots_map_to_their_levels() {
        let nf = single(&[1.0, 2.0, 3.0, 4.0, 5.0], FeatureKind::Quantile);
        let ef = no_edges();
        let norm = fit_normalizer(&[(&nf, &ef)], 5).unwrap();
        let FeatureScale::Quantile { knots } = &norm.node[0] else {
            panic!()
        };
        for (i, &k) in knots.iter().enumerate() {
            assert_eq!(norm.node[0].transform(k), i as f64 / 4.0);
        }
    }

    #[test]
    fn two_point_feature_with_two_knots_is_identity() {
        let nf = single(&[0.0, 1.0], FeatureKind::Quantile);
        let ef = no_edges();
        let norm = fit_normalizer(&[(&nf, &ef)], 2).unwrap();
        assert_eq!(norm.node[0].transform(0.0), 0.0);
        assert_eq!(norm.node[0].transform(1.0), 1.0);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert!(fit_normalizer(&[], DEFAULT_KNOTS).is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let nf = single(&[0.0, 1.0], FeatureKind::Quantile);
        let ef = no_edges();
        let norm = fit_normalizer(&[(&nf, &ef)], 2).unwrap();
        let (wide, _) = feats(&page(&[(20.0, 20.0, 30.0, 5.0)]));
        assert!(matches!(norm.apply_node(&wide), Err(Error::Dimension(_))));
    }

    #[test]
    fn training_pages_map_into_unit_interval() {
        let pages = [
            page(&[
                (20.0, 20.0, 30.0, 5.0),
                (22.0, 30.0, 20.0, 5.0),
                (60.0, 21.0, 10.0, 4.0),
            ]),
            page(&[(15.0, 12.0, 35.0, 6.0), (15.0, 50.0, 25.0, 6.0)]),
        ];
        let feats: Vec<_> = pages.iter().map(feats).collect();
        let refs: Vec<_> = feats.iter().map(|(n, e)| (n, e)).collect();
        let norm = fit_normalizer(&refs, DEFAULT_KNOTS).unwrap();
        for (n, e) in &feats {
            let (n2, e2) = norm.apply(n, e).unwrap();
            assert!(n2
                .values
                .data()
                .iter()
                .chain(e2.values.data())
                .all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn ablation_sets_keep_expected_rows() {
        let (_, ef) = feats(&page(&[(20.0, 20.0, 10.0, 5.0), (40.0, 21.0, 10.0, 5.0)]));
        let c = EdgeFeatureSet::Constant.select(&ef);
        assert_eq!(c.names, vec!["bias"]);
        assert!(c.values.data().iter().all(|&v| v == 1.0));
        let o = EdgeFeatureSet::Orientation.select(&ef);
        assert_eq!(o.names, vec!["horizontal", "vertical"]);
        assert_eq!(EdgeFeatureSet::Full.select(&ef), ef);
    }

    proptest::proptest! {
        #[test]
        fn transform_is_monotone(mut sample in proptest::collection::vec(-50.0f64..50.0, 2..60), a in -60.0f64..60.0, b in -60.0f64..60.0) {
            let nf = single(&sample, FeatureKind::Quantile);
            let ef = no_edges();
            let norm = fit_normalizer(&[(&nf, &ef)], DEFAULT_KNOTS).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (tl, th) = (norm.node[0].transform(lo), norm.node[0].transform(hi));
            proptest::prop_assert!(tl <= th);
            proptest::prop_assert!((0.0..=1.0).contains(&tl) && (0.0..=1.0).contains(&th));
            sample.clear();
        }
    }
}
