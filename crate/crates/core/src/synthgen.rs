//! Seeded generator of register-like table pages.
//!
//! Pages are purely geometric: a table region split into columns, rows of
//! cells holding one to four stacked text lines, and a few lines outside
//! the table. Labels, cells and rows come from the construction itself.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::docmodel::{BiesoLabel, BoundingBox, Column, Dataset, Page, TextLine};
use crate::error::{Error, Result};
use crate::rowdecode::{Cell, RowCut, TableStructure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Easy,
    Writers,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Easy => "easy",
            Preset::Writers => "writers",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Preset::Easy),
            "writers" => Ok(Preset::Writers),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected easy or writers)"
            ))),
        }
    }
}

/// Generator parameters. Gaps, jitter and offsets are in line heights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub columns: (usize, usize),
    pub rows: (usize, usize),
    /// Weights of 1, 2, 3 and 4 lines per cell.
    pub lines_per_cell: [f64; 4],
    pub page_width: f64,
    pub page_height: f64,
    pub line_height: (f64, f64),
    pub min_line_height: f64,
    /// Relative spread of individual line heights.
    pub line_height_spread: f64,
    /// Per-page range of the gap between lines of one cell.
    pub line_gap: (f64, f64),
    /// Per-page range of the gap between rows.
    pub row_gap: (f64, f64),
    /// Relative variation of each gap around the page value.
    pub gap_spread: f64,
    /// Uniform x/y noise half-width.
    pub jitter: f64,
    pub empty_cell_prob: f64,
    /// Probability that a cell holds a short ditto mark.
    pub ditto_prob: f64,
    /// Probability that a cell is centered horizontally.
    pub centered_prob: f64,
    /// Probability that a cell is centered vertically in its row.
    pub vertical_center_prob: f64,
    /// Probability of each of the `outside_slots` outside lines.
    pub outside_line_prob: f64,
    pub outside_slots: usize,
}

impl SynthConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Easy => Self::easy(),
            Preset::Writers => Self::writers(),
        }
    }

    pub fn easy() -> Self {
        Self {
            columns: (5, 9),
            rows: (8, 20),
            lines_per_cell: [0.45, 0.25, 0.2, 0.1],
            page_width: 2000.0,
            page_height: 3000.0,
            line_height: (30.0, 30.0),
            min_line_height: 8.0,
            line_height_spread: 0.0,
            line_gap: (0.3, 0.3),
            row_gap: (1.0, 1.0),
            gap_spread: 0.0,
            jitter: 0.0,
            empty_cell_prob: 0.0,
            ditto_prob: 0.0,
            centered_prob: 0.0,
            vertical_center_prob: 0.0,
            outside_line_prob: 0.3,
            outside_slots: 6,
        }
    }

    pub fn writers() -> Self {
        Self {
            line_height: (24.0, 36.0),
            line_height_spread: 0.12,
            line_gap: (0.1, 0.6),
            row_gap: (0.5, 1.8),
            gap_spread: 0.3,
            jitter: 0.15,
            empty_cell_prob: 0.12,
            ditto_prob: 0.08,
            centered_prob: 0.3,
            vertical_center_prob: 0.1,
            outside_line_prob: 0.4,
            ..Self::easy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.columns.0 == 0 || self.columns.0 > self.columns.1 {
            return bad("column range must be nonempty and positive");
        }
        if self.rows.0 == 0 || self.rows.0 > self.rows.1 {
            return bad("row range must be nonempty and positive");
        }
        let total: f64 = self.lines_per_cell.iter().sum();
        if self.lines_per_cell.iter().any(|&w| !(w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return bad("lines-per-cell weights must be nonnegative and sum to 1");
        }
        for &(lo, hi) in &[self.line_height, self.line_gap, self.row_gap] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= 0.0) {
                return bad("ranges must be finite, nonnegative and ordered");
            }
        }
        if self.line_height.0 <= 0.0 || self.min_line_height <= 0.0 {
            return bad("line heights must be positive");
        }
        for p in [
            self.empty_cell_prob,
            self.ditto_prob,
            self.centered_prob,
            self.vertical_center_prob,
            self.outside_line_prob,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must lie in [0, 1]");
            }
        }
        if self.empty_cell_prob + self.ditto_prob > 1.0 {
            return bad("empty and ditto probabilities exceed 1");
        }
        if !(self.jitter >= 0.0
            && self.gap_spread >= 0.0
            && self.gap_spread < 1.0
            && self.line_height_spread >= 0.0
            && self.line_height_spread < 1.0)
        {
            return bad("jitter and spreads must be nonnegative, spreads below 1");
        }
        Ok(())
    }
}

/// The splitmix64 sequence started at `seed`; element `i` seeds page `i`.
pub fn splitmix64(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const MARGIN_X: f64 = 100.0;
const HEADER: f64 = 300.0;
const FOOTER: f64 = 250.0;

struct Draft {
    bbox: BoundingBox,
    column: usize,
    label: BiesoLabel,
    /// Cell index and row for table lines.
    cell: Option<(usize, usize)>,
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn noise(rng: &mut ChaCha8Rng, width: f64) -> f64 {
    if width > 0.0 {
        rng.gen_range(-width..width)
    } else {
        0.0
    }
}

/// Cell content before placement, in line-height units.
struct CellPlan {
    lines: Vec<(f64, f64, f64)>, // (y offset, height, width fraction)
    height: f64,
    centered: bool,
    vcenter: bool,
}

fn bieso(k: usize, count: usize) -> BiesoLabel {
    match (count, k) {
        (1, _) => BiesoLabel::S,
        (_, 0) => BiesoLabel::B,
        (c, k) if k + 1 == c => BiesoLabel::E,
        _ => BiesoLabel::I,
    }
}

/// One page and its gold structure.
pub fn generate_page(config: &SynthConfig, seed: u64, id: &str) -> Result<(Page, TableStructure)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_cols = rng.gen_range(config.columns.0..=config.columns.1);
    let n_rows = rng.gen_range(config.rows.0..=config.rows.1);
    let per_cell =
        WeightedIndex::new(config.lines_per_cell).map_err(|e| Error::Config(e.to_string()))?;
    let line_gap = uniform(&mut rng, config.line_gap);
    let row_gap = uniform(&mut rng, config.row_gap);
    let spread = |rng: &mut ChaCha8Rng, base: f64| base * (1.0 + noise(rng, config.gap_spread));

    // layout in line-height units
    let mut plan: Vec<Vec<Option<CellPlan>>> = Vec::with_capacity(n_rows);
    let mut row_tops = Vec::with_capacity(n_rows);
    let mut row_heights = Vec::with_capacity(n_rows);
    let mut y = 0.0;
    for r in 0..n_rows {
        let mut row: Vec<Option<CellPlan>> = (0..n_cols)
            .map(|_| {
                let u: f64 = rng.gen();
                if u < config.empty_cell_prob {
                    return None;
                }
                let ditto = u < config.empty_cell_prob + config.ditto_prob;
                let count = if ditto {
                    1
                } else {
                    per_cell.sample(&mut rng) + 1
                };
                let mut lines = Vec::with_capacity(count);
                let mut offset = 0.0;
                for k in 0..count {
                    if k > 0 {
                        offset += spread(&mut rng, line_gap).max(0.05);
                    }
                    let h = 1.0 + noise(&mut rng, config.line_height_spread);
                    let w = if ditto {
                        rng.gen_range(0.08..0.18)
                    } else {
                        rng.gen_range(0.3..0.95)
                    };
                    lines.push((offset, h, w));
                    offset += h;
                }
                Some(CellPlan {
                    lines,
                    height: offset,
                    centered: rng.gen_bool(config.centered_prob),
                    vcenter: rng.gen_bool(config.vertical_center_prob),
                })
            })
            .collect();
        if row.iter().all(Option::is_none) {
            let c = rng.gen_range(0..n_cols);
            row[c] = Some(CellPlan {
                lines: vec![(0.0, 1.0, 0.5)],
                height: 1.0,
                centered: false,
                vcenter: false,
            });
        }
        let height = row.iter().flatten().map(|c| c.height).fold(0.0, f64::max);
        if r > 0 {
            y += spread(&mut rng, row_gap).max(0.2);
        }
        row_tops.push(y);
        row_heights.push(height);
        y += height;
        plan.push(row);
    }
    let content_units = y + 2.0 * config.jitter;

    let usable = config.page_height - HEADER - FOOTER;
    let h = uniform(&mut rng, config.line_height).min(usable / content_units);
    if h < config.min_line_height {
        return Err(Error::Config(format!(
            "infeasible geometry: {n_rows} rows need line height {h:.2} below the minimum {}",
            config.min_line_height
        )));
    }

    let region = BoundingBox::new(
        MARGIN_X,
        HEADER,
        config.page_width - 2.0 * MARGIN_X,
        content_units * h,
    );
    let weights: Vec<f64> = (0..n_cols).map(|_| rng.gen_range(0.6..1.4)).collect();
    let total_w: f64 = weights.iter().sum();
    let mut columns = Vec::with_capacity(n_cols);
    let mut x = region.x;
    for (i, w) in weights.iter().enumerate() {
        let width = region.w * w / total_w;
        columns.push(Column {
            index: i,
            bbox: BoundingBox::new(x, region.y, width, region.h),
        });
        x += width;
    }

    let mut drafts = Vec::new();
    let mut cell_count = 0;
    let top0 = region.y + config.jitter * h;
    for (r, row) in plan.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let Some(cell) = cell else { continue };
            let col = &columns[c].bbox;
            let pad = 0.03 * col.w;
            let v_offset = if cell.vcenter {
                (row_heights[r] - cell.height) / 2.0
            } else {
                0.0
            };
            let cell_top = top0 + (row_tops[r] + v_offset) * h + noise(&mut rng, config.jitter * h);
            let count = cell.lines.len();
            for (k, &(offset, lh, wf)) in cell.lines.iter().enumerate() {
                let width = wf * (col.w - 2.0 * pad);
                let left = if cell.centered {
                    col.x + (col.w - width) / 2.0
                } else {
                    col.x + pad
                };
                let lx =
                    (left + noise(&mut rng, config.jitter * h)).clamp(col.x, col.right() - width);
                drafts.push(Draft {
                    bbox: BoundingBox::new(
                        round2(lx),
                        round2(cell_top + offset * h),
                        round2(width),
                        round2(lh * h),
                    ),
                    column: c,
                    label: bieso(k, count),
                    cell: Some((cell_count, r)),
                });
            }
            cell_count += 1;
        }
    }

    for _ in 0..config.outside_slots {
        if !rng.gen_bool(config.outside_line_prob) {
            continue;
        }
        let width = rng.gen_range(0.1..0.5) * region.w;
        let lx = rng.gen_range(region.x..region.right() - width);
        let lh = h * (1.0 + noise(&mut rng, config.line_height_spread));
        let ly = if rng.gen_bool(0.5) {
            rng.gen_range(HEADER * 0.2..HEADER - 1.5 * lh)
        } else {
            let start = region.bottom() + 0.5 * lh;
            rng.gen_range(start..start + FOOTER * 0.6)
        };
        let center = lx + width / 2.0;
        let column = columns
            .iter()
            .min_by(|a, b| {
                (a.bbox.center_x() - center)
                    .abs()
                    .total_cmp(&(b.bbox.center_x() - center).abs())
            })
            .map_or(0, |c| c.index);
        drafts.push(Draft {
            bbox: BoundingBox::new(round2(lx), round2(ly), round2(width), round2(lh)),
            column,
            label: BiesoLabel::O,
            cell: None,
        });
    }

    drafts.sort_by(|a, b| {
        a.bbox
            .y
            .total_cmp(&b.bbox.y)
            .then(a.bbox.x.total_cmp(&b.bbox.x))
    });
    let mut cells: Vec<Cell> = Vec::with_capacity(cell_count);
    let mut cell_rows = vec![0; cell_count];
    let mut slots: Vec<Option<usize>> = vec![None; cell_count];
    let mut lines = Vec::with_capacity(drafts.len());
    for (i, d) in drafts.iter().enumerate() {
        let line_id = format!("l{i:03}");
        let mut line = TextLine::new(line_id.clone(), d.bbox);
        line.column = Some(d.column);
        line.label = Some(d.label);
        lines.push(line);
        if let Some((c, r)) = d.cell {
            cell_rows[c] = r;
            match slots[c] {
                Some(k) => {
                    cells[k].lines.push(line_id);
                    cells[k].top_y = cells[k].top_y.min(d.bbox.y);
                }
                None => {
                    slots[c] = Some(cells.len());
                    cells.push(Cell {
                        column: d.column,
                        lines: vec![line_id],
                        top_y: d.bbox.y,
                    });
                }
            }
        }
    }
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n_rows];
    for (c, slot) in slots.iter().enumerate() {
        rows[cell_rows[c]].push(slot.expect("every cell has a line"));
    }
    for row in &mut rows {
        row.sort_unstable();
    }
    let cuts = rows
        .iter()
        .map(|row| {
            let mut tops: Vec<f64> = row.iter().map(|&k| cells[k].top_y).collect();
            let lower = tops.iter().cloned().fold(f64::INFINITY, f64::min);
            let support = row
                .iter()
                .map(|&k| cells[k].column)
                .collect::<BTreeSet<_>>()
                .len();
            RowCut {
                y: crate::docmodel::median(&mut tops).expect("nonempty row"),
                lower,
                support,
            }
        })
        .collect();

    let page = Page {
        id: id.to_string(),
        width: config.page_width,
        height: config.page_height,
        table_region: BoundingBox::new(
            round2(region.x),
            round2(region.y),
            round2(region.w),
            round2(region.h),
        ),
        columns: columns
            .into_iter()
            .map(|c| Column {
                index: c.index,
                bbox: BoundingBox::new(
                    round2(c.bbox.x),
                    round2(c.bbox.y),
                    round2(c.bbox.w),
                    round2(c.bbox.h),
                ),
            })
            .collect(),
        lines,
    };
    page.validate()?;
    let gold = TableStructure {
        page: id.to_string(),
        cells,
        cuts,
        rows,
    };
    Ok((page, gold))
}

pub fn page_id(index: usize) -> String {
    format!("synth-{index:04}")
}

/// `n_pages` pages with seeds from [`splitmix64`] and a 4-fold assignment.
pub fn generate_dataset(
    config: &SynthConfig,
    n_pages: usize,
    seed: u64,
) -> Result<(Dataset, Vec<TableStructure>)> {
    if n_pages == 0 {
        return Err(Error::Config("at least one page is required".into()));
    }
    let mut pages = Vec::with_capacity(n_pages);
    let mut golds = Vec::with_capacity(n_pages);
    let mut folds = BTreeMap::new();
    for i in 0..n_pages {
        let id = page_id(i);
        let (page, gold) = generate_page(config, splitmix64(seed, i as u64), &id)?;
        folds.insert(id, i % 4);
        pages.push(page);
        golds.push(gold);
    }
    Ok((
        Dataset {
            pages,
            folds: Some(folds),
        },
        golds,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::docmodel::save_page;
    use crate::rowdecode::{decode_gold, page_cells, DecodeConfig};

    #[test]
    fn splitmix_reference_values() {
        // first outputs of splitmix64 seeded with 0
        assert_eq!(splitmix64(0, 0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(splitmix64(0, 1), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(splitmix64(0, 2), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = SynthConfig::writers();
        let a = generate_page(&cfg, 11, "p").unwrap();
        let b = generate_page(&cfg, 11, "p").unwrap();
        assert_eq!(save_page(&a.0), save_page(&b.0));
        assert_eq!(a.1.to_json(), b.1.to_json());
        let c = generate_page(&cfg, 12, "p").unwrap();
        assert_ne!(save_page(&a.0), save_page(&c.0));
    }

    #[test]
    fn gold_labels_reproduce_gold_cells() {
        for preset in [Preset::Easy, Preset::Writers] {
            let cfg = SynthConfig::preset(preset);
            for seed in 0..30 {
                let (page, gold) = generate_page(&cfg, seed, "p").unwrap();
                let mut got = page_cells(&page, &page.gold_labels().unwrap()).unwrap();
                let mut want = gold.cells.clone();
                let key = |c: &Cell| (c.column, c.lines[0].clone());
                got.sort_by_key(key);
                want.sort_by_key(key);
                assert_eq!(got, want, "{preset} seed {seed}");
            }
        }
    }

    #[test]
    fn single_line_cells_are_all_singletons() {
        let cfg = SynthConfig {
            lines_per_cell: [1.0, 0.0, 0.0, 0.0],
            outside_line_prob: 0.0,
            ..SynthConfig::easy()
        };
        let (page, gold) = generate_page(&cfg, 3, "p").unwrap();
        assert!(page.lines.iter().all(|l| l.label == Some(BiesoLabel::S)));
        let per_column = gold.cells.iter().filter(|c| c.column == 0).count();
        assert_eq!(gold.rows.len(), per_column);
    }

    #[test]
    fn easy_pages_decode_exactly() {
        let cfg = SynthConfig::easy();
        for seed in 0..20 {
            let (page, gold) = generate_page(&cfg, seed, "p").unwrap();
            let t = decode_gold(&page, &DecodeConfig::default()).unwrap();
            assert_eq!(t.row_line_sets(), gold.row_line_sets());
        }
    }

    #[test]
    fn small_jitter_still_decodes_exactly() {
        let cfg = SynthConfig {
            jitter: 0.2,
            row_gap: (0.8, 1.5),
            gap_spread: 0.2,
            line_height: (20.0, 40.0),
            ..SynthConfig::easy()
        };
        for seed in 0..20 {
            let (page, gold) = generate_page(&cfg, seed, "p").unwrap();
            let t = decode_gold(&page, &DecodeConfig::default()).unwrap();
            assert_eq!(t.row_line_sets(), gold.row_line_sets());
        }
    }

    #[test]
    fn dataset_folds_and_ids() {
        let (ds, golds) = generate_dataset(&SynthConfig::easy(), 4, 7).unwrap();
        assert_eq!(ds.pages.len(), 4);
        assert_eq!(golds.len(), 4);
        let folds = ds.folds.unwrap();
        let mut seen: Vec<usize> = folds.values().copied().collect();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3]);
        assert!(generate_dataset(&SynthConfig::easy(), 0, 7).is_err());
    }

    #[test]
    fn singleton_share_matches_weight() {
        let (ds, _) = generate_dataset(&SynthConfig::easy(), 200, 1).unwrap();
        let (mut singles, mut cells) = (0usize, 0usize);
        for page in &ds.pages {
            for l in &page.lines {
                match l.label {
                    Some(BiesoLabel::S) => {
                        singles += 1;
                        cells += 1;
                    }
                    Some(BiesoLabel::B) => cells += 1,
                    _ => {}
                }
            }
        }
        let p = 0.45;
        let share = singles as f64 / cells as f64;
        let sigma = (p * (1.0 - p) / cells as f64).sqrt();
        assert!(
            (share - p).abs() < 3.0 * sigma,
            "{share} vs {p} (sigma {sigma})"
        );
    }

    #[test]
    fn infeasible_geometry_errors() {
        let cfg = SynthConfig {
            page_height: 700.0,
            rows: (20, 20),
            ..SynthConfig::easy()
        };
        assert!(matches!(generate_page(&cfg, 0, "p"), Err(Error::Config(_))));
    }

    #[test]
    fn bad_weights_are_rejected() {
        let cfg = SynthConfig {
            lines_per_cell: [0.5, 0.5, 0.5, 0.0],
            ..SynthConfig::easy()
        };
        assert!(cfg.validate().is_err());
    }
}
