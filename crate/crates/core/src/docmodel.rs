//! Geometric document model: pages of text-line boxes, their JSON form,
//! and dataset manifests.
//!
//! Coordinates grow downward (top of the page is `y = 0`). Units are
//! arbitrary but uniform within a page.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    #[inline]
    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    #[inline]
    pub fn center_x(&self) -> f64 {
        self.x + 0.5 * self.w
    }

    #[inline]
    pub fn center_y(&self) -> f64 {
        self.y + 0.5 * self.h
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h]
            .iter()
            .all(|v| v.is_finite())
            && self.w > 0.0
            && self.h > 0.0
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s, self.w * s, self.h * s)
    }
}

/// Position of a text line within its table cell.
///
/// The derived order `B < I < E < S < O` is the index order used by
/// confusion matrices, class probabilities and tie breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BiesoLabel {
    B,
    I,
    E,
    S,
    O,
}

impl BiesoLabel {
    pub const COUNT: usize = 5;
    pub const ALL: [BiesoLabel; 5] = [Self::B, Self::I, Self::E, Self::S, Self::O];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_char(self) -> char {
        match self {
            Self::B => 'B',
            Self::I => 'I',
            Self::E => 'E',
            Self::S => 'S',
            Self::O => 'O',
        }
    }
}

impl fmt::Display for BiesoLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for BiesoLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "B" => Ok(Self::B),
            "I" => Ok(Self::I),
            "E" => Ok(Self::E),
            "S" => Ok(Self::S),
            "O" => Ok(Self::O),
            other => Err(Error::Config(format!("unknown BIESO label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextLine {
    pub id: String,
    #[serde(flatten)]
    pub bbox: BoundingBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<BiesoLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<BiesoLabel>,
}

impl TextLine {
    pub fn new(id: impl Into<String>, bbox: BoundingBox) -> Self {
        Self {
            id: id.into(),
            bbox,
            column: None,
            label: None,
            predicted: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub index: usize,
    #[serde(flatten)]
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub id: String,
    pub width: f64,
    pub height: f64,
    pub table_region: BoundingBox,
    #[serde(default)]
    pub columns: Vec<Column>,
    #[serde(default)]
    pub lines: Vec<TextLine>,
}

#[derive(Serialize)]
struct PageDoc<'a> {
    format_version: u32,
    #[serde(flatten)]
    page: &'a Page,
}

const PAGE_KEYS: &[&str] = &[
    "format_version",
    "id",
    "width",
    "height",
    "table_region",
    "columns",
    "lines",
];
const BOX_KEYS: &[&str] = &["x", "y", "w", "h"];
const COLUMN_KEYS: &[&str] = &["index", "x", "y", "w", "h"];
const LINE_KEYS: &[&str] = &["id", "x", "y", "w", "h", "column", "label", "predicted"];

fn warn_unknown(value: &Value, known: &[&str], context: &str) {
    if let Value::Object(map) = value {
        for key in map.keys() {
            if !known.contains(&key.as_str()) {
                log::warn!("ignoring unknown field {key:?} in {context}");
            }
        }
    }
}

fn warn_unknown_page_fields(value: &Value) {
    warn_unknown(value, PAGE_KEYS, "page");
    if let Some(region) = value.get("table_region") {
        warn_unknown(region, BOX_KEYS, "table_region");
    }
    if let Some(Value::Array(cols)) = value.get("columns") {
        for c in cols {
            warn_unknown(c, COLUMN_KEYS, "column");
        }
    }
    if let Some(Value::Array(lines)) = value.get("lines") {
        for l in lines {
            warn_unknown(l, LINE_KEYS, "line");
        }
    }
}

fn page_from_value(value: Value) -> Result<Page> {
    let id = value
        .get("id")
        .and_then(Value::as_str)
        .unwrap_or("<unknown>")
        .to_string();
    match value.get("format_version").and_then(Value::as_u64) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::Version {
                found: v as u32,
                expected: FORMAT_VERSION,
            })
        }
        None => {
            return Err(Error::Validation {
                page: id,
                message: "missing format_version".into(),
            })
        }
    }
    warn_unknown_page_fields(&value);
    let page: Page = serde_json::from_value(value).map_err(|e| Error::Validation {
        page: id,
        message: e.to_string(),
    })?;
    page.validate()?;
    Ok(page)
}

/// Parses one page document.
pub fn load_page(source: &[u8]) -> Result<Page> {
    let value: Value = serde_json::from_slice(source).map_err(|e| Error::from_json(e, source))?;
    page_from_value(value)
}

/// Parses a file holding either a single page object or an array of pages.
pub fn load_pages(source: &[u8]) -> Result<Vec<Page>> {
    let value: Value = serde_json::from_slice(source).map_err(|e| Error::from_json(e, source))?;
    match value {
        Value::Array(items) => items.into_iter().map(page_from_value).collect(),
        other => Ok(vec![page_from_value(other)?]),
    }
}

pub fn save_page(page: &Page) -> Vec<u8> {
    let doc = PageDoc {
        format_version: FORMAT_VERSION,
        page,
    };
    let mut bytes = serde_json::to_vec_pretty(&doc).expect("page serialization cannot fail");
    bytes.push(b'\n');
    bytes
}

impl Page {
    pub fn line_index(&self, id: &str) -> Option<usize> {
        self.lines.iter().position(|l| l.id == id)
    }

    /// Checks every structural invariant of the page.
    pub fn validate(&self) -> Result<()> {
        let invalid = |message: String| Error::Validation {
            page: self.id.clone(),
            message,
        };
        if !(self.width.is_finite()
            && self.height.is_finite()
            && self.width > 0.0
            && self.height > 0.0)
        {
            return Err(invalid(format!(
                "page size {}x{} must be positive",
                self.width, self.height
            )));
        }
        if !self.table_region.is_valid() {
            return Err(invalid(
                "table_region must have positive finite size".into(),
            ));
        }
        for (i, col) in self.columns.iter().enumerate() {
            if col.index != i {
                return Err(invalid(format!(
                    "column indices must be contiguous from 0, found {} at position {i}",
                    col.index
                )));
            }
            if !col.bbox.is_valid() {
                return Err(invalid(format!("column {i} has an invalid box")));
            }
            if i > 0 && col.bbox.x <= self.columns[i - 1].bbox.x {
                return Err(invalid(format!(
                    "column {i} is not ordered by increasing x"
                )));
            }
        }
        let mut seen = HashSet::with_capacity(self.lines.len());
        for line in &self.lines {
            let bad = |message: String| Error::Line {
                page: self.id.clone(),
                line: line.id.clone(),
                message,
            };
            if !seen.insert(line.id.as_str()) {
                return Err(bad("duplicate line id".into()));
            }
            let b = &line.bbox;
            if !b.is_valid() {
                return Err(bad(format!(
                    "box ({}, {}, {}, {}) needs finite coordinates and w, h > 0",
                    b.x, b.y, b.w, b.h
                )));
            }
            if b.x < 0.0 || b.y < 0.0 || b.right() > self.width || b.bottom() > self.height {
                return Err(bad("box lies outside the page".into()));
            }
            if let Some(c) = line.column {
                if c >= self.columns.len() {
                    return Err(bad(format!(
                        "column {c} but the page has {} columns",
                        self.columns.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Median text-line height, or `None` for a page without lines.
    pub fn median_line_height(&self) -> Option<f64> {
        let mut heights: Vec<f64> = self.lines.iter().map(|l| l.bbox.h).collect();
        median(&mut heights)
    }

    pub fn gold_labels(&self) -> Result<Vec<BiesoLabel>> {
        self.lines
            .iter()
            .map(|l| {
                l.label.ok_or_else(|| Error::Line {
                    page: self.id.clone(),
                    line: l.id.clone(),
                    message: "line is not labeled".into(),
                })
            })
            .collect()
    }
}

/// Median of a slice (mean of the two middle values for even lengths).
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub pages: Vec<Page>,
    /// Page id to fold index.
    pub folds: Option<BTreeMap<String, usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub pages: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub folds: Option<BTreeMap<String, usize>>,
}

impl Dataset {
    pub fn new(pages: Vec<Page>) -> Self {
        Self { pages, folds: None }
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for p in &self.pages {
            if !ids.insert(p.id.as_str()) {
                return Err(Error::Validation {
                    page: p.id.clone(),
                    message: "duplicate page id in dataset".into(),
                });
            }
        }
        if let Some(folds) = &self.folds {
            for id in folds.keys() {
                if !ids.contains(id.as_str()) {
                    return Err(Error::Validation {
                        page: id.clone(),
                        message: "fold assignment for an unknown page".into(),
                    });
                }
            }
            let used: BTreeSet<usize> = folds.values().copied().collect();
            if used.iter().copied().ne(0..used.len()) {
                return Err(Error::Config(format!(
                    "fold indices must be contiguous from 0, found {used:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn fold_count(&self) -> Option<usize> {
        self.folds
            .as_ref()
            .map(|f| f.values().max().map_or(0, |m| m + 1))
    }

    pub fn line_count(&self) -> usize {
        self.pages.iter().map(|p| p.lines.len()).sum()
    }
}

/// Maps a page id to a file-system friendly stem.
pub fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Reads a manifest and every page it lists. Page paths are relative to
/// the manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let bytes = fs::read(manifest_path)?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes).map_err(|e| Error::from_json(e, &bytes))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            found: manifest.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut pages = Vec::new();
    for rel in &manifest.pages {
        let path = base.join(rel);
        let src = fs::read(&path)?;
        let loaded = load_pages(&src).map_err(|e| match e {
            Error::Parse { offset, message } => Error::Parse {
                offset,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })?;
        pages.extend(loaded);
    }
    let dataset = Dataset {
        pages,
        folds: manifest.folds,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Writes `<dir>/<page>.json` for every page plus `<dir>/manifest.json`.
/// Returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(dataset.pages.len());
    for page in &dataset.pages {
        let name = PathBuf::from(format!("{}.json", file_stem_for(&page.id)));
        write_atomic(&dir.join(&name), &save_page(page))?;
        paths.push(name);
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        pages: paths,
        folds: dataset.folds.clone(),
    };
    let path = dir.join("manifest.json");
    let mut bytes =
        serde_json::to_vec_pretty(&manifest).expect("manifest serialization cannot fail");
    bytes.push(b'\n');
    write_atomic(&path, &bytes)?;
    Ok(path)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LabelStats {
    /// Counts indexed by [`BiesoLabel::index`].
    pub counts: [usize; BiesoLabel::COUNT],
    pub lines: usize,
    pub cells: usize,
}

impl LabelStats {
    pub fn count(&self, label: BiesoLabel) -> usize {
        self.counts[label.index()]
    }
}

/// Per-label line counts over a fully labeled dataset. Every cell has
/// exactly one first line, so the cell count is `#B + #S`.
pub fn label_stats(dataset: &Dataset) -> Result<LabelStats> {
    let mut stats = LabelStats::default();
    for page in &dataset.pages {
        for label in page.gold_labels()? {
            stats.counts[label.index()] += 1;
            stats.lines += 1;
        }
    }
    stats.cells = stats.count(BiesoLabel::B) + stats.count(BiesoLabel::S);
    Ok(stats)
}
