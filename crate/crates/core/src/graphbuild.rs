//! Line-of-sight neighbor graph over the text lines of a page.
//!
//! Two lines are linked when their projections on one axis overlap by at
//! least `min_overlap` of the narrower extent and no third line intrudes
//! into the open corridor between them. Vertical edges point top to
//! bottom, horizontal edges left to right.

use serde::{Deserialize, Serialize};

use crate::docmodel::{BoundingBox, Page};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeOrientation {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub source: usize,
    pub target: usize,
    pub orientation: EdgeOrientation,
    /// Shared projection length divided by the narrower extent, in (0, 1].
    pub overlap: f64,
    /// Distance between the facing box sides, ≥ 0.
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    pub min_overlap: f64,
    #[serde(default)]
    pub max_gap: Option<f64>,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            min_overlap: 0.25,
            max_gap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageGraph {
    /// Line id of every node, in page order.
    pub node_of: Vec<String>,
    /// Sorted by (orientation, source, target).
    pub edges: Vec<GraphEdge>,
}

impl PageGraph {
    #[inline]
    pub fn node_count(&self) -> usize {
        self.node_of.len()
    }

    #[inline]
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn sources(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.source).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.target).collect()
    }

    /// Undirected neighbor lists, each sorted ascending.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count()];
        for e in &self.edges {
            adj[e.source].push(e.target);
            adj[e.target].push(e.source);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Directed adjacency by direct iteration over the edge list.
    pub fn adjacency(&self) -> Vec<Vec<u8>> {
        let n = self.node_count();
        let mut a = vec![vec![0u8; n]; n];
        for e in &self.edges {
            a[e.source][e.target] = 1;
        }
        a
    }

    /// JSON dump for external visualisation.
    pub fn to_json(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("graph serialization cannot fail");
        bytes.push(b'\n');
        bytes
    }
}

/// Source and target incidence matrices, both `n × m`, stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidencePair {
    pub n: usize,
    pub m: usize,
    /// `source[i][j] == 1` iff edge `j` leaves node `i`.
    pub source: Vec<Vec<u8>>,
    /// `target[i][j] == 1` iff edge `j` enters node `i`.
    pub target: Vec<Vec<u8>>,
}

impl IncidencePair {
    /// `S · Tᵗ`, the directed adjacency matrix.
    pub fn adjacency(&self) -> Vec<Vec<u8>> {
        let mut a = vec![vec![0u8; self.n]; self.n];
        for (i, row) in a.iter_mut().enumerate() {
            for (k, cell) in row.iter_mut().enumerate() {
                let dot: u32 = (0..self.m)
                    .map(|j| self.source[i][j] as u32 * self.target[k][j] as u32)
                    .sum();
                *cell = dot as u8;
            }
        }
        a
    }
}

pub fn incidence(graph: &PageGraph) -> IncidencePair {
    let n = graph.node_count();
    let m = graph.edge_count();
    let mut source = vec![vec![0u8; m]; n];
    let mut target = vec![vec![0u8; m]; n];
    for (j, e) in graph.edges.iter().enumerate() {
        source[e.source][j] = 1;
        target[e.target][j] = 1;
    }
    IncidencePair {
        n,
        m,
        source,
        target,
    }
}

/// Axis-aligned view so one routine handles both orientations: `along`
/// is the axis the edge travels on, `across` the axis projections
/// overlap on.
#[derive(Clone, Copy)]
struct Span {
    along_lo: f64,
    along_hi: f64,
    across_lo: f64,
    across_hi: f64,
}

fn span(b: &BoundingBox, orientation: EdgeOrientation) -> Span {
    match orientation {
        EdgeOrientation::Vertical => Span {
            along_lo: b.y,
            along_hi: b.bottom(),
            across_lo: b.x,
            across_hi: b.right(),
        },
        EdgeOrientation::Horizontal => Span {
            along_lo: b.x,
            along_hi: b.right(),
            across_lo: b.y,
            across_hi: b.bottom(),
        },
    }
}

/// Edge from `a` to `b` if `a` precedes `b` along the axis and the pair
/// passes the overlap, gap and line-of-sight tests.
fn try_edge(
    spans: &[Span],
    a: usize,
    b: usize,
    orientation: EdgeOrientation,
    params: &GraphParams,
) -> Option<GraphEdge> {
    let (sa, sb) = (spans[a], spans[b]);
    if sa.along_hi > sb.along_lo {
        return None;
    }
    let gap = sb.along_lo - sa.along_hi;
    if params.max_gap.is_some_and(|g| gap > g) {
        return None;
    }
    let lo = sa.across_lo.max(sb.across_lo);
    let hi = sa.across_hi.min(sb.across_hi);
    let shared = hi - lo;
    let narrower = (sa.across_hi - sa.across_lo).min(sb.across_hi - sb.across_lo);
    if shared <= 0.0 || shared < params.min_overlap * narrower {
        return None;
    }
    if gap > 0.0 {
        let blocked = spans.iter().enumerate().any(|(c, sc)| {
            c != a
                && c != b
                && sc.across_lo < hi
                && sc.across_hi > lo
                && sc.along_lo < sb.along_lo
                && sc.along_hi > sa.along_hi
        });
        if blocked {
            return None;
        }
    }
    Some(GraphEdge {
        source: a,
        target: b,
        orientation,
        overlap: (shared / narrower).min(1.0),
        gap,
    })
}

pub fn build_graph(page: &Page, params: &GraphParams) -> PageGraph {
    let n = page.lines.len();
    let mut edges = Vec::new();
    for orientation in [EdgeOrientation::Horizontal, EdgeOrientation::Vertical] {
        let spans: Vec<Span> = page
            .lines
            .iter()
            .map(|l| span(&l.bbox, orientation))
            .collect();
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    if let Some(e) = try_edge(&spans, a, b, orientation, params) {
                        edges.push(e);
                    }
                }
            }
        }
    }
    // already in (orientation, source, target) order by construction
    debug_assert!(edges
        .windows(2)
        .all(|w| (w[0].orientation, w[0].source, w[0].target)
            < (w[1].orientation, w[1].source, w[1].target)));
    PageGraph {
        node_of: page.lines.iter().map(|l| l.id.clone()).collect(),
        edges,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::docmodel::TextLine;

    fn page_of(boxes: &[(f64, f64, f64, f64)]) -> Page {
        Page {
            id: "g".into(),
            width: 1000.0,
            height: 1000.0,
            table_region: BoundingBox::new(0.0, 0.0, 1000.0, 1000.0),
            columns: vec![],
            lines: boxes
                .iter()
                .enumerate()
                .map(|(i, &(x, y, w, h))| {
                    TextLine::new(format!("l{i}"), BoundingBox::new(x, y, w, h))
                })
                .collect(),
        }
    }

    #[test]
    fn single_line_has_no_edges() {
        let g = build_graph(&page_of(&[(0.0, 0.0, 10.0, 2.0)]), &GraphParams::default());
        assert_eq!((g.node_count(), g.edge_count()), (1, 0));
    }

    #[test]
    fn two_stacked_boxes() {
        let g = build_graph(
            &page_of(&[(0.0, 0.0, 10.0, 2.0), (0.0, 5.0, 10.0, 2.0)]),
            &GraphParams::default(),
        );
        assert_eq!(g.edges.len(), 1);
        let e = &g.edges[0];
        assert_eq!(
            (e.source, e.target, e.orientation),
            (0, 1, EdgeOrientation::Vertical)
        );
        assert_eq!(e.overlap, 1.0);
        assert_eq!(e.gap, 3.0);
    }

    #[test]
    fn middle_box_blocks_line_of_sight() {
        let g = build_graph(
            &page_of(&[
                (0.0, 0.0, 10.0, 2.0),
                (0.0, 5.0, 10.0, 2.0),
                (0.0, 10.0, 10.0, 2.0),
            ]),
            &GraphParams::default(),
        );
        let pairs: Vec<_> = g.edges.iter().map(|e| (e.source, e.target)).collect();
        assert_eq!(pairs, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn small_projection_overlap_is_not_significant() {
        // shared x-extent 1 out of 10 = 0.1 < 0.25
        let g = build_graph(
            &page_of(&[(0.0, 0.0, 10.0, 2.0), (9.0, 5.0, 10.0, 2.0)]),
            &GraphParams::default(),
        );
        assert_eq!(g.edge_count(), 0);
        let loose = GraphParams {
            min_overlap: 0.1,
            max_gap: None,
        };
        assert_eq!(
            build_graph(
                &page_of(&[(0.0, 0.0, 10.0, 2.0), (9.0, 5.0, 10.0, 2.0)]),
                &loose
            )
            .edge_count(),
            1
        );
    }

    #[test]
    fn horizontal_edges_point_right() {
        let g = build_graph(
            &page_of(&[(20.0, 0.0, 10.0, 2.0), (0.0, 0.5, 10.0, 2.0)]),
            &GraphParams::default(),
        );
        assert_eq!(g.edges.len(), 1);
        let e = &g.edges[0];
        assert_eq!(
            (e.source, e.target, e.orientation),
            (1, 0, EdgeOrientation::Horizontal)
        );
        assert_eq!(e.gap, 10.0);
        assert_eq!(e.overlap, 0.75);
    }

    #[test]
    fn max_gap_limits_distance() {
        let params = GraphParams {
            min_overlap: 0.25,
            max_gap: Some(2.0),
        };
        let g = build_graph(
            &page_of(&[(0.0, 0.0, 10.0, 2.0), (0.0, 5.0, 10.0, 2.0)]),
            &params,
        );
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn overlapping_boxes_are_not_linked() {
        let g = build_graph(
            &page_of(&[(0.0, 0.0, 10.0, 4.0), (5.0, 2.0, 10.0, 4.0)]),
            &GraphParams::default(),
        );
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn empty_incidence() {
        let g = build_graph(
            &page_of(&[(0.0, 0.0, 10.0, 2.0), (50.0, 50.0, 1.0, 1.0)]),
            &GraphParams::default(),
        );
        let inc = incidence(&g);
        assert_eq!(inc.m, 0);
        assert!(inc.source.iter().all(|r| r.is_empty()));
        assert_eq!(inc.adjacency(), vec![vec![0, 0], vec![0, 0]]);
    }

    #[test]
    fn single_edge_incidence() {
        let g = build_graph(
            &page_of(&[(0.0, 0.0, 10.0, 2.0), (0.0, 5.0, 10.0, 2.0)]),
            &GraphParams::default(),
        );
        let inc = incidence(&g);
        assert_eq!(inc.source, vec![vec![1], vec![0]]);
        assert_eq!(inc.target, vec![vec![0], vec![1]]);
        assert_eq!(inc.adjacency(), vec![vec![0, 1], vec![0, 0]]);
    }

    #[test]
    fn graph_dump_is_json() {
        let g = build_graph(
            &page_of(&[(0.0, 0.0, 10.0, 2.0), (0.0, 5.0, 10.0, 2.0)]),
            &GraphParams::default(),
        );
        let v: serde_json::Value = serde_json::from_slice(&g.to_json()).unwrap();
        assert_eq!(v["edges"][0]["orientation"], "vertical");
    }
}
