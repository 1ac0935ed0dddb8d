//! Tagging accuracy, row detection precision/recall and k-fold
//! cross-validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::docmodel::{BiesoLabel, Dataset, Page};
use crate::error::{Error, Result};
use crate::pipeline::{fit_prepared, prepare_pages, LearnerConfig};
use crate::rowdecode::{decode, decode_gold, DecodeConfig, TableStructure};

pub const DEFAULT_ROW_THRESHOLD: f64 = 0.5;

const L: usize = BiesoLabel::COUNT;

/// `counts[gold][predicted]`
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: [[usize; L]; L],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl Confusion {
    pub fn add(&mut self, gold: BiesoLabel, predicted: BiesoLabel) {
        self.counts[gold.index()][predicted.index()] += 1;
    }

    pub fn merge(&mut self, other: &Confusion) {
        for g in 0..L {
            for p in 0..L {
                self.counts[g][p] += other.counts[g][p];
            }
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..L).map(|k| self.counts[k][k]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.correct(), self.total())
    }

    pub fn class(&self, label: BiesoLabel) -> ClassMetrics {
        let k = label.index();
        let tp = self.counts[k][k];
        let predicted: usize = (0..L).map(|g| self.counts[g][k]).sum();
        let support: usize = self.counts[k].iter().sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        ClassMetrics {
            precision,
            recall,
            f1: f1(precision, recall),
            support,
        }
    }
}

pub fn label_accuracy(predicted: &[BiesoLabel], gold: &[BiesoLabel]) -> Result<(f64, Confusion)> {
    if predicted.len() != gold.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} gold labels",
            predicted.len(),
            gold.len()
        )));
    }
    let mut confusion = Confusion::default();
    for (&p, &g) in predicted.iter().zip(gold) {
        confusion.add(g, p);
    }
    Ok((confusion.accuracy(), confusion))
}

/// Detection counts; precision and recall are 1 when their denominator is 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowCounts {
    pub correct: usize,
    pub missed: usize,
    pub spurious: usize,
}

impl RowCounts {
    pub fn precision(&self) -> f64 {
        let den = self.correct + self.spurious;
        if den == 0 {
            1.0
        } else {
            self.correct as f64 / den as f64
        }
    }

    pub fn recall(&self) -> f64 {
        let den = self.correct + self.missed;
        if den == 0 {
            1.0
        } else {
            self.correct as f64 / den as f64
        }
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }

    pub fn merge(&mut self, other: &RowCounts) {
        self.correct += other.correct;
        self.missed += other.missed;
        self.spurious += other.spurious;
    }
}

/// Jaccard overlap of two line-id sets; 0 for two empty sets.
pub fn overlap<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    ratio(inter, union)
}

/// Greedy one-to-one matching of predicted to gold rows, best overlaps
/// first, ties by gold then predicted index.
pub fn row_match<T: Ord>(
    predicted: &[BTreeSet<T>],
    gold: &[BTreeSet<T>],
    threshold: f64,
) -> RowCounts {
    let mut pairs = Vec::new();
    for (g, gr) in gold.iter().enumerate() {
        for (p, pr) in predicted.iter().enumerate() {
            let o = overlap(gr, pr);
            if o > 0.0 && o >= threshold {
                pairs.push((o, g, p));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut gold_used = vec![false; gold.len()];
    let mut pred_used = vec![false; predicted.len()];
    let mut correct = 0;
    for (_, g, p) in pairs {
        if !gold_used[g] && !pred_used[p] {
            gold_used[g] = true;
            pred_used[p] = true;
            correct += 1;
        }
    }
    RowCounts {
        correct,
        missed: gold.len() - correct,
        spurious: predicted.len() - correct,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pages: usize,
    pub lines: usize,
    pub accuracy: f64,
    pub per_class: BTreeMap<BiesoLabel, ClassMetrics>,
    pub confusion: Confusion,
    pub row_precision: f64,
    pub row_recall: f64,
    pub row_f1: f64,
    pub rows: RowCounts,
    pub threshold: f64,
}

impl EvalReport {
    pub fn from_counts(
        pages: usize,
        confusion: Confusion,
        rows: RowCounts,
        threshold: f64,
    ) -> Self {
        Self {
            pages,
            lines: confusion.total(),
            accuracy: confusion.accuracy(),
            per_class: BiesoLabel::ALL
                .iter()
                .map(|&l| (l, confusion.class(l)))
                .collect(),
            confusion,
            row_precision: rows.precision(),
            row_recall: rows.recall(),
            row_f1: rows.f1(),
            rows,
            threshold,
        }
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("report serializes");
        bytes.push(b'\n');
        bytes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub threshold: f64,
    pub decode: DecodeConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_ROW_THRESHOLD,
            decode: DecodeConfig::default(),
        }
    }
}

/// Scores pages carrying both `label` and `predicted`. Gold rows come from
/// `gold` when given (matched by page id), otherwise from decoding the
/// gold labels. Rows are pooled over all pages.
pub fn evaluate(
    pages: &[Page],
    gold: Option<&[TableStructure]>,
    config: &EvalConfig,
) -> Result<EvalReport> {
    let by_id: BTreeMap<&str, &TableStructure> = gold
        .unwrap_or(&[])
        .iter()
        .map(|t| (t.page.as_str(), t))
        .collect();
    let mut confusion = Confusion::default();
    let mut rows = RowCounts::default();
    for page in pages {
        let gold_labels = page.gold_labels()?;
        let predicted = page
            .lines
            .iter()
            .map(|l| {
                l.predicted.ok_or_else(|| Error::Line {
                    page: page.id.clone(),
                    line: l.id.clone(),
                    message: "line has no predicted label".into(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        confusion.merge(&label_accuracy(&predicted, &gold_labels)?.1);
        let gold_rows = match (gold, by_id.get(page.id.as_str())) {
            (Some(_), Some(t)) => t.row_line_sets(),
            (Some(_), None) => {
                return Err(Error::Config(format!(
                    "no gold structure for page {}",
                    page.id
                )))
            }
            (None, _) => decode_gold(page, &config.decode)?.row_line_sets(),
        };
        let pred_rows = decode(page, &config.decode)?.row_line_sets();
        rows.merge(&row_match(&pred_rows, &gold_rows, config.threshold));
    }
    Ok(EvalReport::from_counts(
        pages.len(),
        confusion,
        rows,
        config.threshold,
    ))
}

/// Aligned text table with one line per named report.
pub fn format_table(rows: &[(String, &EvalReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>6}  {:>6}",
        "", "accuracy", "row P", "row R", "row F1", "pages", "lines"
    );
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>6}  {:>6}",
            name, r.accuracy, r.row_precision, r.row_recall, r.row_f1, r.pages, r.lines
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub accuracy: f64,
    pub row_precision: f64,
    pub row_recall: f64,
    pub row_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub k: usize,
    /// Held-out page ids per fold.
    pub assignment: Vec<Vec<String>>,
    pub folds: Vec<EvalReport>,
    pub mean: FoldSummary,
}

impl CrossValReport {
    pub fn table(&self) -> String {
        let mut mean = EvalReport::from_counts(0, Confusion::default(), RowCounts::default(), 0.0);
        mean.accuracy = self.mean.accuracy;
        mean.row_precision = self.mean.row_precision;
        mean.row_recall = self.mean.row_recall;
        mean.row_f1 = self.mean.row_f1;
        mean.pages = self.folds.iter().map(|f| f.pages).sum();
        mean.lines = self.folds.iter().map(|f| f.lines).sum();
        let mut rows: Vec<(String, &EvalReport)> = self
            .folds
            .iter()
            .enumerate()
            .map(|(i, r)| (format!("Fold {}", i + 1), r))
            .collect();
        rows.push(("Avg".into(), &mean));
        format_table(&rows)
    }
}

/// Test fold of every page: the manifest folds when they define exactly
/// `k` folds, otherwise a seeded shuffle dealt round-robin.
pub fn fold_assignment(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = dataset.pages.len();
    if k < 2 {
        return Err(Error::Config(format!(
            "cross-validation needs k >= 2, got {k}"
        )));
    }
    if k > n {
        return Err(Error::Config(format!(
            "k = {k} exceeds the {n} available pages"
        )));
    }
    if let (Some(folds), Some(count)) = (&dataset.folds, dataset.fold_count()) {
        if count == k {
            let mut distinct: Vec<usize> = folds
                .values()
                .copied()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            distinct.sort_unstable();
            return dataset
                .pages
                .iter()
                .map(|p| {
                    folds
                        .get(&p.id)
                        .map(|f| distinct.binary_search(f).expect("fold listed"))
                        .ok_or_else(|| Error::Config(format!("page {} has no fold", p.id)))
                })
                .collect();
        }
        log::warn!("manifest defines {count} folds but k = {k}; using a seeded partition");
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &page) in order.iter().enumerate() {
        fold[page] = pos % k;
    }
    Ok(fold)
}

/// k-fold cross-validation; folds run in parallel and are reported in
/// fold order.
pub fn crossval(
    dataset: &Dataset,
    learner: &LearnerConfig,
    k: usize,
    config: &EvalConfig,
) -> Result<CrossValReport> {
    let fold = fold_assignment(dataset, k, learner.seed)?;
    let prepared = prepare_pages(&dataset.pages, &learner.graph, learner.edge_features);
    let results: Vec<Result<EvalReport>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..k)
            .map(|f| {
                let (fold, prepared) = (&fold, &prepared);
                s.spawn(move || -> Result<EvalReport> {
                    let train: Vec<_> = prepared
                        .iter()
                        .zip(fold)
                        .filter(|(_, &g)| g != f)
                        .map(|(p, _)| p.clone())
                        .collect();
                    let (model, _) = fit_prepared(&train, learner)?;
                    let mut test_pages = Vec::new();
                    for ((page, prep), _) in dataset
                        .pages
                        .iter()
                        .zip(prepared)
                        .zip(fold)
                        .filter(|(_, &g)| g == f)
                    {
                        let labels = model.predict_prepared(prep)?;
                        let mut out = page.clone();
                        for (line, label) in out.lines.iter_mut().zip(labels) {
                            line.predicted = Some(label);
                        }
                        test_pages.push(out);
                    }
                    evaluate(&test_pages, None, config)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("fold worker panicked"))
            .collect()
    });
    let folds = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mean_of = |f: fn(&EvalReport) -> f64| folds.iter().map(f).sum::<f64>() / k as f64;
    let mean = FoldSummary {
        accuracy: mean_of(|r| r.accuracy),
        row_precision: mean_of(|r| r.row_precision),
        row_recall: mean_of(|r| r.row_recall),
        row_f1: mean_of(|r| r.row_f1),
    };
    let assignment = (0..k)
        .map(|f| {
            dataset
                .pages
                .iter()
                .zip(&fold)
                .filter(|(_, &g)| g == f)
                .map(|(p, _)| p.id.clone())
                .collect()
        })
        .collect();
    Ok(CrossValReport {
        k,
        assignment,
        folds,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::ModelKind;
    use crate::synthgen::{generate_dataset, SynthConfig};
    use proptest::prelude::*;
    use BiesoLabel::*;

    fn set(ids: &[u32]) -> BTreeSet<u32> {
        ids.iter().copied().collect()
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(label_accuracy(&[B, I, E], &[B, I, E]).unwrap().0, 1.0);
        assert_eq!(label_accuracy(&[B, B], &[I, I]).unwrap().0, 0.0);
        assert_eq!(
            label_accuracy(&[B, I, E, S], &[B, I, E, O]).unwrap().0,
            0.75
        );
        assert!(label_accuracy(&[B], &[B, I]).is_err());
    }

    #[test]
    fn confusion_identities() {
        let (acc, c) = label_accuracy(&[B, I, E, S, O, S], &[B, I, I, S, O, O]).unwrap();
        assert_eq!(acc, c.correct() as f64 / c.total() as f64);
        let s = c.class(S);
        assert_eq!((s.precision, s.recall), (0.5, 1.0));
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(c.class(E).f1, 0.0);
    }

    #[test]
    fn row_match_examples() {
        let rows = vec![set(&[1, 2]), set(&[3]), set(&[4, 5, 6])];
        let r = row_match(&rows, &rows, 0.5);
        assert_eq!((r.precision(), r.recall()), (1.0, 1.0));
        let gold: Vec<_> = (0..10).map(|i| set(&[i])).collect();
        let r = row_match(&gold[..9], &gold, 0.5);
        assert_eq!((r.recall(), r.precision()), (0.9, 1.0));
        let r = row_match(&[set(&[1, 2, 9])], &[set(&[1, 2, 3])], 0.5);
        assert_eq!(r.correct, 1);
        assert_eq!(overlap(&set(&[1, 2, 9]), &set(&[1, 2, 3])), 0.5);
    }

    #[test]
    fn greedy_prefers_the_best_overlap() {
        let gold = vec![set(&[1, 2, 3, 4]), set(&[5, 6])];
        let pred = vec![set(&[1, 2, 3, 5]), set(&[1, 2, 3, 4])];
        let r = row_match(&pred, &gold, 0.5);
        assert_eq!((r.correct, r.missed, r.spurious), (1, 1, 1));
    }

    fn arb_rows() -> impl Strategy<Value = Vec<BTreeSet<u32>>> {
        prop::collection::vec(prop::collection::btree_set(0u32..30, 1..6), 0..8)
    }

    proptest! {
        #[test]
        fn matching_properties(pred in arb_rows(), gold in arb_rows(), t1 in 0.05f64..1.0, t2 in 0.05f64..1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a = row_match(&pred, &gold, lo);
            let b = row_match(&pred, &gold, hi);
            prop_assert!(b.correct <= a.correct);
            prop_assert!(a.correct <= pred.len().min(gold.len()));
            prop_assert_eq!(a.correct + a.missed, gold.len());
            prop_assert_eq!(a.correct + a.spurious, pred.len());
            for x in &pred {
                for y in &gold {
                    prop_assert_eq!(overlap(x, y), overlap(y, x));
                }
            }
        }
    }

    #[test]
    fn gold_predictions_score_perfectly() {
        let (mut ds, golds) = generate_dataset(&SynthConfig::easy(), 3, 5).unwrap();
        for p in &mut ds.pages {
            for l in &mut p.lines {
                l.predicted = l.label;
            }
        }
        let r = evaluate(&ds.pages, Some(&golds), &EvalConfig::default()).unwrap();
        assert_eq!((r.accuracy, r.row_precision, r.row_recall), (1.0, 1.0, 1.0));
        let r2 = evaluate(&ds.pages, None, &EvalConfig::default()).unwrap();
        assert_eq!(r, r2);
        let text = format_table(&[("ecn".into(), &r)]);
        assert!(text.lines().count() == 2 && text.contains("1.0000"));
    }

    #[test]
    fn fold_assignment_rules() {
        let (mut ds, _) = generate_dataset(&SynthConfig::easy(), 6, 5).unwrap();
        assert!(fold_assignment(&ds, 7, 0).is_err());
        let manifest = fold_assignment(&ds, 4, 0).unwrap();
        assert_eq!(manifest, vec![0, 1, 2, 3, 0, 1]);
        ds.folds = None;
        let a = fold_assignment(&ds, 6, 3).unwrap();
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(a, fold_assignment(&ds, 6, 3).unwrap());
    }

    #[test]
    fn constant_predictor_scores_the_majority_share() {
        let (mut ds, _) = generate_dataset(&SynthConfig::writers(), 8, 9).unwrap();
        ds.folds = None;
        let learner = LearnerConfig::new(ModelKind::Majority).with_seed(4);
        let report = crossval(&ds, &learner, 4, &EvalConfig::default()).unwrap();
        assert_eq!(report.folds.len(), 4);
        let fold = fold_assignment(&ds, 4, 4).unwrap();
        let mut expected = 0.0;
        for f in 0..4 {
            let count = |pages: &mut dyn Iterator<Item = &Page>| {
                let mut c = [0usize; L];
                for p in pages {
                    for l in &p.lines {
                        c[l.label.unwrap().index()] += 1;
                    }
                }
                c
            };
            let train = count(
                &mut ds
                    .pages
                    .iter()
                    .zip(&fold)
                    .filter(|(_, &g)| g != f)
                    .map(|(p, _)| p),
            );
            let test = count(
                &mut ds
                    .pages
                    .iter()
                    .zip(&fold)
                    .filter(|(_, &g)| g == f)
                    .map(|(p, _)| p),
            );
            let mut majority = 0;
            for k in 1..L {
                if train[k] > train[majority] {
                    majority = k;
                }
            }
            expected += test[majority] as f64 / test.iter().sum::<usize>() as f64;
        }
        assert!((report.mean.accuracy - expected / 4.0).abs() < 1e-12);
        assert!(report.table().contains("Avg"));
    }
}
