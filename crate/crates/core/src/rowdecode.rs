//! From per-line BIESO tags to cells, and from cell tops to table rows.
//!
//! Each column is segmented into cells independently. The top Y of every
//! cell is clustered by single linkage; clusters supported by enough
//! distinct columns become row cuts, and the bands between cuts are rows.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::docmodel::{median, BiesoLabel, Page, TextLine};
use crate::error::{Error, Result};

pub const DEFAULT_COLUMN_FRACTION: f64 = 0.33;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub column: usize,
    /// Line ids, top to bottom.
    pub lines: Vec<String>,
    pub top_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowCut {
    /// Median top Y of the cluster.
    pub y: f64,
    /// Lowest top Y of the cluster; start of the row band.
    pub lower: f64,
    /// Distinct columns contributing a cell top.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableStructure {
    pub page: String,
    pub cells: Vec<Cell>,
    /// Ascending.
    pub cuts: Vec<RowCut>,
    /// Cell indices per row, top to bottom.
    pub rows: Vec<Vec<usize>>,
}

/// One cell top inside a Y-cut cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterMember {
    pub top_y: f64,
    pub column: usize,
    pub cell: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub column_fraction: f64,
    /// Clustering stop distance; the page's median line height when unset.
    pub stop: Option<f64>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            column_fraction: DEFAULT_COLUMN_FRACTION,
            stop: None,
        }
    }
}

impl TableStructure {
    /// Line ids of every row.
    pub fn row_line_sets(&self) -> Vec<BTreeSet<String>> {
        self.rows
            .iter()
            .map(|row| {
                row.iter()
                    .flat_map(|&c| self.cells[c].lines.iter().cloned())
                    .collect()
            })
            .collect()
    }

    pub fn row_of_cell(&self) -> Vec<usize> {
        let mut out = vec![0; self.cells.len()];
        for (r, row) in self.rows.iter().enumerate() {
            for &c in row {
                out[c] = r;
            }
        }
        out
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("structure serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_json(source: &[u8]) -> Result<Self> {
        serde_json::from_slice(source).map_err(|e| Error::from_json(e, source))
    }
}

/// Splits one column, already in reading order, into cells.
///
/// Inconsistent sequences are repaired: `I`/`E` without an open cell act
/// as `B`/`S`, `B`/`S` close any open cell, `O` closes any open cell and a
/// cell still open at the end is closed.
pub fn segment_column(column: usize, lines: &[(&TextLine, BiesoLabel)]) -> Vec<Cell> {
    let mut cells = Vec::new();
    let mut open: Option<Cell> = None;
    let start = |line: &TextLine| Cell {
        column,
        lines: vec![line.id.clone()],
        top_y: line.bbox.y,
    };
    for &(line, label) in lines {
        match label {
            BiesoLabel::B => {
                cells.extend(open.take());
                open = Some(start(line));
            }
            BiesoLabel::I => match open.as_mut() {
                Some(cell) => push_line(cell, line),
                None => open = Some(start(line)),
            },
            BiesoLabel::E => match open.take() {
                Some(mut cell) => {
                    push_line(&mut cell, line);
                    cells.push(cell);
                }
                None => cells.push(start(line)),
            },
            BiesoLabel::S => {
                cells.extend(open.take());
                cells.push(start(line));
            }
            BiesoLabel::O => cells.extend(open.take()),
        }
    }
    cells.extend(open);
    cells
}

fn push_line(cell: &mut Cell, line: &TextLine) {
    cell.lines.push(line.id.clone());
    cell.top_y = cell.top_y.min(line.bbox.y);
}

/// Single-linkage clustering of cell tops: the sorted tops are cut
/// wherever two consecutive values are more than `stop` apart.
pub fn cluster_ycuts(cells: &[Cell], stop: f64) -> Vec<Vec<ClusterMember>> {
    let mut members: Vec<ClusterMember> = cells
        .iter()
        .enumerate()
        .map(|(i, c)| ClusterMember {
            top_y: c.top_y,
            column: c.column,
            cell: i,
        })
        .collect();
    members.sort_by(|a, b| {
        a.top_y
            .total_cmp(&b.top_y)
            .then(a.column.cmp(&b.column))
            .then(a.cell.cmp(&b.cell))
    });
    let mut clusters: Vec<Vec<ClusterMember>> = Vec::new();
    for m in members {
        match clusters.last_mut() {
            Some(last) if m.top_y - last.last().expect("nonempty").top_y <= stop => last.push(m),
            _ => clusters.push(vec![m]),
        }
    }
    clusters
}

/// Keeps clusters whose distinct-column support exceeds
/// `fraction · num_columns`.
pub fn select_cuts(
    clusters: &[Vec<ClusterMember>],
    num_columns: usize,
    fraction: f64,
) -> Vec<RowCut> {
    let threshold = fraction * num_columns as f64;
    let mut cuts: Vec<RowCut> = clusters
        .iter()
        .filter_map(|cluster| {
            let support = cluster
                .iter()
                .map(|m| m.column)
                .collect::<BTreeSet<_>>()
                .len();
            if (support as f64) <= threshold || cluster.is_empty() {
                return None;
            }
            let mut ys: Vec<f64> = cluster.iter().map(|m| m.top_y).collect();
            let lower = ys.iter().cloned().fold(f64::INFINITY, f64::min);
            Some(RowCut {
                y: median(&mut ys).expect("nonempty"),
                lower,
                support,
            })
        })
        .collect();
    cuts.sort_by(|a, b| a.lower.total_cmp(&b.lower));
    cuts
}

/// Assigns every cell to the band of the last cut whose lower bound does
/// not exceed its top; cells above the first cut join row 0.
pub fn build_rows(page_id: &str, cells: Vec<Cell>, cuts: Vec<RowCut>) -> TableStructure {
    let rows = if cells.is_empty() {
        Vec::new()
    } else if cuts.is_empty() {
        vec![(0..cells.len()).collect()]
    } else {
        let mut rows = vec![Vec::new(); cuts.len()];
        for (i, cell) in cells.iter().enumerate() {
            let above = cuts.partition_point(|c| c.lower <= cell.top_y);
            rows[above.saturating_sub(1)].push(i);
        }
        rows
    };
    TableStructure {
        page: page_id.to_string(),
        cells,
        cuts,
        rows,
    }
}

/// Cells of a page under the given labels, column by column.
pub fn page_cells(page: &Page, labels: &[BiesoLabel]) -> Result<Vec<Cell>> {
    if labels.len() != page.lines.len() {
        return Err(Error::Decode(format!(
            "page {}: {} labels for {} lines",
            page.id,
            labels.len(),
            page.lines.len()
        )));
    }
    let mut per_column: Vec<Vec<(&TextLine, BiesoLabel)>> = vec![Vec::new(); page.columns.len()];
    for (line, &label) in page.lines.iter().zip(labels) {
        match line.column {
            Some(c) if c < page.columns.len() => per_column[c].push((line, label)),
            Some(c) => {
                return Err(Error::Decode(format!(
                    "page {}: line {} has unknown column {c}",
                    page.id, line.id
                )))
            }
            None if label == BiesoLabel::O => {}
            None => {
                return Err(Error::Decode(format!(
                    "page {}: line {} is labeled {label} but has no column",
                    page.id, line.id
                )))
            }
        }
    }
    let mut cells = Vec::new();
    for (c, mut lines) in per_column.into_iter().enumerate() {
        lines.sort_by(|a, b| {
            a.0.bbox
                .y
                .total_cmp(&b.0.bbox.y)
                .then(a.0.bbox.x.total_cmp(&b.0.bbox.x))
        });
        cells.extend(segment_column(c, &lines));
    }
    Ok(cells)
}

/// Full row decoding of `page` under `labels`.
pub fn decode_labels(
    page: &Page,
    labels: &[BiesoLabel],
    config: &DecodeConfig,
) -> Result<TableStructure> {
    if page.columns.is_empty() {
        return Err(Error::Decode(format!("page {} has no columns", page.id)));
    }
    let cells = page_cells(page, labels)?;
    let stop = match config.stop {
        Some(s) => s,
        None => page.median_line_height().unwrap_or(1.0),
    };
    let clusters = cluster_ycuts(&cells, stop);
    let cuts = select_cuts(&clusters, page.columns.len(), config.column_fraction);
    Ok(build_rows(&page.id, cells, cuts))
}

/// Decodes the `predicted` labels of a page.
pub fn decode(page: &Page, config: &DecodeConfig) -> Result<TableStructure> {
    let labels = page
        .lines
        .iter()
        .map(|l| {
            l.predicted.ok_or_else(|| {
                Error::Decode(format!(
                    "page {}: line {} has no predicted label",
                    page.id, l.id
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    decode_labels(page, &labels, config)
}

/// Decodes the gold `label`s of a page.
pub fn decode_gold(page: &Page, config: &DecodeConfig) -> Result<TableStructure> {
    let labels = page.gold_labels()?;
    decode_labels(page, &labels, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::docmodel::{BoundingBox, Column};
    use proptest::prelude::*;
    use BiesoLabel::*;

    fn column_lines(n: usize) -> Vec<TextLine> {
        (0..n)
            .map(|i| {
                TextLine::new(
                    format!("l{i}"),
                    BoundingBox::new(0.0, 10.0 * i as f64, 5.0, 4.0),
                )
            })
            .collect()
    }

    fn sizes(labels: &[BiesoLabel]) -> Vec<usize> {
        let lines = column_lines(labels.len());
        let pairs: Vec<_> = lines.iter().zip(labels.iter().copied()).collect();
        segment_column(0, &pairs)
            .iter()
            .map(|c| c.lines.len())
            .collect()
    }

    #[test]
    fn segmentation_examples() {
        assert_eq!(sizes(&[S, S, S]), vec![1, 1, 1]);
        assert_eq!(sizes(&[B, I, E, B, E]), vec![3, 2]);
        assert_eq!(sizes(&[I, E]), vec![2]);
        assert_eq!(sizes(&[B, B, E]), vec![1, 2]);
        assert_eq!(sizes(&[B, O, E]), vec![1, 1]);
        assert_eq!(sizes(&[B, I]), vec![2]);
        assert_eq!(sizes(&[O, O]), Vec::<usize>::new());
    }

    #[test]
    fn every_short_sequence_is_partitioned() {
        let mut cases = 0;
        for k in 1..=6usize {
            let lines = column_lines(k);
            for code in 0..5usize.pow(k as u32) {
                let labels: Vec<_> = (0..k)
                    .map(|i| BiesoLabel::ALL[code / 5usize.pow(i as u32) % 5])
                    .collect();
                let pairs: Vec<_> = lines.iter().zip(labels.iter().copied()).collect();
                let cells = segment_column(0, &pairs);
                let covered: Vec<String> = cells.iter().flat_map(|c| c.lines.clone()).collect();
                let expected: Vec<String> = lines
                    .iter()
                    .zip(&labels)
                    .filter(|(_, &l)| l != O)
                    .map(|(l, _)| l.id.clone())
                    .collect();
                assert_eq!(covered, expected);
                assert!(cells.iter().all(|c| !c.lines.is_empty()));
                cases += 1;
            }
        }
        assert_eq!(cases, 19_530);
    }

    fn cells_at(tops: &[(usize, f64)]) -> Vec<Cell> {
        tops.iter()
            .enumerate()
            .map(|(i, &(column, top_y))| Cell {
                column,
                lines: vec![format!("c{i}")],
                top_y,
            })
            .collect()
    }

    #[test]
    fn clustering_example() {
        let clusters = cluster_ycuts(&cells_at(&[(0, 100.0), (1, 102.0), (2, 300.0)]), 20.0);
        let tops: Vec<Vec<f64>> = clusters
            .iter()
            .map(|c| c.iter().map(|m| m.top_y).collect())
            .collect();
        assert_eq!(tops, vec![vec![100.0, 102.0], vec![300.0]]);
        assert_eq!(
            cluster_ycuts(&cells_at(&[(0, 5.0), (1, 5.0), (2, 5.0)]), 1.0).len(),
            1
        );
        assert_eq!(
            cluster_ycuts(&cells_at(&[(0, 5.0), (1, 6.0), (2, 7.0)]), 1e-9).len(),
            3
        );
    }

    #[test]
    fn column_fraction_rule() {
        let two = cluster_ycuts(&cells_at(&[(0, 10.0), (1, 11.0)]), 5.0);
        assert_eq!(select_cuts(&two, 6, 0.33).len(), 1);
        let one = cluster_ycuts(&cells_at(&[(0, 10.0)]), 5.0);
        assert!(select_cuts(&one, 6, 0.33).is_empty());
        assert_eq!(select_cuts(&one, 1, 0.33).len(), 1);
        let same_column = cluster_ycuts(&cells_at(&[(0, 10.0), (0, 11.0)]), 5.0);
        assert!(select_cuts(&same_column, 6, 0.33).is_empty());
    }

    #[test]
    fn aligned_rows() {
        let cells = cells_at(&[
            (0, 100.0),
            (1, 100.0),
            (2, 100.0),
            (0, 200.0),
            (1, 200.0),
            (2, 200.0),
        ]);
        let cuts = select_cuts(&cluster_ycuts(&cells, 10.0), 3, 0.33);
        assert_eq!(cuts.len(), 2);
        let t = build_rows("p", cells, cuts);
        assert_eq!(t.rows, vec![vec![0, 1, 2], vec![3, 4, 5]]);
    }

    #[test]
    fn banding() {
        let cut = |y: f64| RowCut {
            y,
            lower: y,
            support: 2,
        };
        let t = build_rows(
            "p",
            cells_at(&[(0, 50.0), (0, 150.0), (1, 250.0), (1, 100.0)]),
            vec![cut(100.0), cut(200.0)],
        );
        assert_eq!(t.rows, vec![vec![0, 1, 3], vec![2]]);
        assert_eq!(
            build_rows("p", cells_at(&[(0, 1.0), (1, 2.0)]), vec![]).rows,
            vec![vec![0, 1]]
        );
        assert!(build_rows("p", vec![], vec![]).rows.is_empty());
    }

    fn page(lines: Vec<TextLine>, columns: usize) -> Page {
        Page {
            id: "p".into(),
            width: 1000.0,
            height: 1000.0,
            table_region: BoundingBox::new(0.0, 0.0, 1000.0, 1000.0),
            columns: (0..columns)
                .map(|i| Column {
                    index: i,
                    bbox: BoundingBox::new(100.0 * i as f64, 0.0, 100.0, 1000.0),
                })
                .collect(),
            lines,
        }
    }

    fn line(id: &str, column: Option<usize>, y: f64, predicted: BiesoLabel) -> TextLine {
        let mut l = TextLine::new(
            id,
            BoundingBox::new(100.0 * column.unwrap_or(0) as f64 + 5.0, y, 50.0, 10.0),
        );
        l.column = column;
        l.predicted = Some(predicted);
        l
    }

    #[test]
    fn decode_examples() {
        let all_o = page(
            vec![line("a", Some(0), 10.0, O), line("b", None, 30.0, O)],
            2,
        );
        let t = decode(&all_o, &DecodeConfig::default()).unwrap();
        assert!(t.cells.is_empty() && t.rows.is_empty());
        let two = page(
            vec![line("a", Some(0), 100.0, S), line("b", Some(0), 200.0, S)],
            1,
        );
        assert_eq!(
            decode(&two, &DecodeConfig::default()).unwrap().rows.len(),
            2
        );
        assert!(decode(&page(vec![], 0), &DecodeConfig::default()).is_err());
        let orphan = page(vec![line("a", None, 10.0, S)], 1);
        assert!(matches!(
            decode(&orphan, &DecodeConfig::default()),
            Err(Error::Decode(_))
        ));
        let mut missing = two.clone();
        missing.lines[1].predicted = None;
        assert!(decode(&missing, &DecodeConfig::default()).is_err());
    }

    #[test]
    fn json_round_trip() {
        let two = page(
            vec![line("a", Some(0), 100.0, B), line("b", Some(0), 110.0, E)],
            1,
        );
        let t = decode(&two, &DecodeConfig::default()).unwrap();
        assert_eq!(TableStructure::from_json(&t.to_json()).unwrap(), t);
    }

    fn arb_labels() -> impl Strategy<Value = Vec<(usize, f64, usize)>> {
        prop::collection::vec((0usize..4, 0.0f64..500.0, 0usize..5), 0..40)
    }

    proptest! {
        #[test]
        fn decoding_invariants(drawn in arb_labels()) {
            let lines: Vec<TextLine> = drawn
                .iter()
                .enumerate()
                .map(|(i, &(c, y, l))| line(&format!("l{i}"), Some(c), y, BiesoLabel::ALL[l]))
                .collect();
            let p = page(lines, 4);
            let t = decode(&p, &DecodeConfig::default()).unwrap();
            // partition of the non-O lines
            let mut covered: Vec<&String> = t.cells.iter().flat_map(|c| &c.lines).collect();
            covered.sort();
            let mut expected: Vec<&String> = p.lines.iter().filter(|l| l.predicted != Some(O)).map(|l| &l.id).collect();
            expected.sort();
            prop_assert_eq!(covered, expected);
            // every cell in exactly one row
            let mut assigned: Vec<usize> = t.rows.iter().flatten().copied().collect();
            assigned.sort();
            prop_assert_eq!(assigned, (0..t.cells.len()).collect::<Vec<_>>());
            // cuts ascending
            prop_assert!(t.cuts.windows(2).all(|w| w[0].lower < w[1].lower && w[0].y <= w[1].y));
            // row index nondecreasing in top within a column
            let row_of = t.row_of_cell();
            for a in 0..t.cells.len() {
                for b in 0..t.cells.len() {
                    if t.cells[a].column == t.cells[b].column && t.cells[a].top_y < t.cells[b].top_y {
                        prop_assert!(row_of[a] <= row_of[b]);
                    }
                }
            }
            // banding is idempotent
            let again = build_rows(&t.page, t.cells.clone(), t.cuts.clone());
            prop_assert_eq!(again, t);
        }
    }
}
