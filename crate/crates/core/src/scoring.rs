//! Shared-task metrics: boundary and connective P/R/F, relation accuracy
//! with a confusion matrix, and multi-run aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, SegLabel};
use crate::{DiscoError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConnectiveMatch {
    /// Each labeled token position counts separately.
    #[default]
    Token,
    /// Whole B/I spans must match exactly.
    Span,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// Row and column labels, most frequent gold label first.
    pub labels: Vec<String>,
    /// `counts[gold][pred]`.
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn build<S: AsRef<str>>(gold: &[S], pred: &[S]) -> Self {
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for g in gold {
            *freq.entry(g.as_ref()).or_default() += 1;
        }
        for p in pred {
            freq.entry(p.as_ref()).or_default();
        }
        let mut labels: Vec<(&str, usize)> = freq.into_iter().collect();
        labels.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let labels: Vec<String> = labels.into_iter().map(|(l, _)| l.to_string()).collect();
        let pos: BTreeMap<&str, usize> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let mut counts = vec![vec![0; labels.len()]; labels.len()];
        for (g, p) in gold.iter().zip(pred) {
            counts[pos[g.as_ref()]][pos[p.as_ref()]] += 1;
        }
        ConfusionMatrix { labels, counts }
    }

    pub fn trace(&self) -> usize {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// CSV with gold labels as rows and predicted labels as columns.
    pub fn to_csv(&self) -> String {
        let quote = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        let mut out = String::from("gold\\pred");
        for l in &self.labels {
            out.push(',');
            out.push_str(&quote(l));
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            out.push_str(&quote(l));
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub per_run: Vec<f64>,
    pub mean: f64,
    pub stdev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub gold_count: usize,
    pub pred_count: usize,
    pub correct: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runs: Option<RunSummary>,
}

impl EvalReport {
    fn prf(task: &str, gold_count: usize, pred_count: usize, correct: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let p = ratio(correct, pred_count);
        let r = ratio(correct, gold_count);
        EvalReport {
            task: task.to_string(),
            gold_count,
            pred_count,
            correct,
            precision: Some(p),
            recall: Some(r),
            f1: Some(f1(p, r)),
            accuracy: None,
            confusion: None,
            runs: None,
        }
    }

    /// The headline number: F1 for tagging tasks, accuracy for relations.
    pub fn score(&self) -> f64 {
        self.f1.or(self.accuracy).unwrap_or(0.0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    /// Aligned two-column text.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![("task".into(), self.task.clone())];
        let pct = |x: f64| format!("{:.2}", 100.0 * x);
        if let (Some(p), Some(r), Some(f)) = (self.precision, self.recall, self.f1) {
            rows.push(("gold".into(), self.gold_count.to_string()));
            rows.push(("predicted".into(), self.pred_count.to_string()));
            rows.push(("correct".into(), self.correct.to_string()));
            rows.push(("precision".into(), pct(p)));
            rows.push(("recall".into(), pct(r)));
            rows.push(("f1".into(), pct(f)));
        }
        if let Some(a) = self.accuracy {
            rows.push(("instances".into(), self.gold_count.to_string()));
            rows.push(("correct".into(), self.correct.to_string()));
            rows.push(("accuracy".into(), pct(a)));
        }
        if let Some(runs) = &self.runs {
            let per: Vec<String> = runs.per_run.iter().map(|&x| pct(x)).collect();
            rows.push(("runs".into(), per.join(" ")));
            rows.push(("mean".into(), pct(runs.mean)));
            rows.push(("stdev".into(), pct(runs.stdev)));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        rows.iter()
            .map(|(k, v)| format!("{k:<width$}  {v}\n"))
            .collect()
    }
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn aligned_labels(gold: &[Document], pred: &[Document]) -> Result<(Vec<SegLabel>, Vec<SegLabel>)> {
    if gold.len() != pred.len() {
        return Err(DiscoError::Alignment {
            position: 0,
            gold: format!("{} documents", gold.len()),
            pred: format!("{} documents", pred.len()),
        });
    }
    let g_tokens: Vec<_> = gold.iter().flat_map(|d| d.tokens()).collect();
    let p_tokens: Vec<_> = pred.iter().flat_map(|d| d.tokens()).collect();
    for i in 0..g_tokens.len().max(p_tokens.len()) {
        let g = g_tokens.get(i).map(|t| t.form.as_str());
        let p = p_tokens.get(i).map(|t| t.form.as_str());
        if g != p {
            return Err(DiscoError::Alignment {
                position: i + 1,
                gold: g.unwrap_or("<end>").to_string(),
                pred: p.unwrap_or("<end>").to_string(),
            });
        }
    }
    Ok((
        g_tokens.iter().map(|t| t.seg_label).collect(),
        p_tokens.iter().map(|t| t.seg_label).collect(),
    ))
}

/// Precision/recall/F1 over token positions labeled `BeginSeg`.
pub fn score_segmentation(gold: &[Document], pred: &[Document]) -> Result<EvalReport> {
    let (g, p) = aligned_labels(gold, pred)?;
    Ok(score_boundary_labels(&g, &p))
}

pub fn score_boundary_labels(gold: &[SegLabel], pred: &[SegLabel]) -> EvalReport {
    let is_b = |l: &SegLabel| *l == SegLabel::BeginSeg;
    let gold_count = gold.iter().filter(|l| is_b(l)).count();
    let pred_count = pred.iter().filter(|l| is_b(l)).count();
    let correct = gold.iter().zip(pred).filter(|(g, p)| is_b(g) && is_b(p)).count();
    EvalReport::prf("seg", gold_count, pred_count, correct)
}

fn is_conn(l: SegLabel) -> bool {
    matches!(l, SegLabel::BeginConn | SegLabel::InsideConn)
}

fn conn_spans(labels: &[SegLabel]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &l) in labels.iter().enumerate() {
        match l {
            SegLabel::BeginConn => {
                if let Some(s) = open.take() {
                    spans.push((s, i - 1));
                }
                open = Some(i);
            }
            SegLabel::InsideConn => {
                open.get_or_insert(i);
            }
            _ => {
                if let Some(s) = open.take() {
                    spans.push((s, i - 1));
                }
            }
        }
    }
    if let Some(s) = open {
        spans.push((s, labels.len() - 1));
    }
    spans
}

/// Connective detection scores, token-level by default.
pub fn score_connectives(
    gold: &[Document],
    pred: &[Document],
    matching: ConnectiveMatch,
) -> Result<EvalReport> {
    let (g, p) = aligned_labels(gold, pred)?;
    Ok(score_connective_labels(&g, &p, matching))
}

pub fn score_connective_labels(
    gold: &[SegLabel],
    pred: &[SegLabel],
    matching: ConnectiveMatch,
) -> EvalReport {
    match matching {
        ConnectiveMatch::Token => {
            let gold_count = gold.iter().filter(|&&l| is_conn(l)).count();
            let pred_count = pred.iter().filter(|&&l| is_conn(l)).count();
            let correct = gold
                .iter()
                .zip(pred)
                .filter(|(&g, &p)| is_conn(g) && g == p)
                .count();
            EvalReport::prf("conn", gold_count, pred_count, correct)
        }
        ConnectiveMatch::Span => {
            let gs = conn_spans(gold);
            let ps = conn_spans(pred);
            let correct = ps.iter().filter(|s| gs.contains(s)).count();
            EvalReport::prf("conn", gs.len(), ps.len(), correct)
        }
    }
}

/// Accuracy and confusion matrix over aligned relation labels.
pub fn score_relations<S: AsRef<str>>(gold: &[S], pred: &[S]) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(DiscoError::contract(format!(
            "{} gold relations but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    if gold.is_empty() {
        return Err(DiscoError::contract("cannot score zero relation instances"));
    }
    let confusion = ConfusionMatrix::build(gold, pred);
    let correct = confusion.trace();
    Ok(EvalReport {
        task: "rel".to_string(),
        gold_count: gold.len(),
        pred_count: pred.len(),
        correct,
        precision: None,
        recall: None,
        f1: None,
        accuracy: Some(correct as f64 / gold.len() as f64),
        confusion: Some(confusion),
        runs: None,
    })
}

/// Mean and sample standard deviation (0 for a single run).
pub fn aggregate_runs(scores: &[f64]) -> Result<(f64, f64)> {
    if scores.is_empty() {
        return Err(DiscoError::contract("no run scores to aggregate"));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    if scores.len() == 1 {
        return Ok((mean, 0.0));
    }
    let ss: f64 = scores.iter().map(|x| (x - mean).powi(2)).sum();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}

pub fn summarize_runs(scores: &[f64]) -> Result<RunSummary> {
    let (mean, stdev) = aggregate_runs(scores)?;
    Ok(RunSummary {
        per_run: scores.to_vec(),
        mean,
        stdev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Sentence, Token};
    use proptest::prelude::*;
    use SegLabel::*;

    fn doc(labels: &[SegLabel]) -> Document {
        let tokens = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let mut t = Token::new(i + 1, format!("w{i}"));
                t.seg_label = l;
                t
            })
            .collect();
        Document::from_sentences("d", vec![Sentence::new(0, tokens)])
    }

    #[test]
    fn perfect_segmentation() {
        let g = doc(&[BeginSeg, None, BeginSeg]);
        let r = score_segmentation(&[g.clone()], &[g]).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (Some(1.0), Some(1.0), Some(1.0)));
    }

    #[test]
    fn hand_counted_segmentation() {
        // gold boundaries at 0,2,4,6; predicted at 0,2,4,5,7
        let g = [BeginSeg, None, BeginSeg, None, BeginSeg, None, BeginSeg, None];
        let p = [BeginSeg, None, BeginSeg, None, BeginSeg, BeginSeg, None, BeginSeg];
        let r = score_boundary_labels(&g, &p);
        assert!((r.precision.unwrap() - 0.6).abs() < 1e-12);
        assert!((r.recall.unwrap() - 0.75).abs() < 1e-12);
        assert!((r.f1.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn no_predicted_boundaries() {
        let r = score_boundary_labels(&[BeginSeg, None], &[None, None]);
        assert_eq!((r.precision, r.recall, r.f1), (Some(0.0), Some(0.0), Some(0.0)));
    }

    #[test]
    fn misaligned_documents() {
        let g = doc(&[None, None]);
        let mut p = g.clone();
        p.sentences[0].tokens[1].form = "other".into();
        match score_segmentation(&[g], &[p]) {
            Err(DiscoError::Alignment { position, .. }) => assert_eq!(position, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn connective_cases() {
        let g = [BeginConn, InsideConn, None, BeginConn];
        let r = score_connective_labels(&g, &g, ConnectiveMatch::Token);
        assert_eq!(r.f1, Some(1.0));

        let p = [InsideConn, InsideConn, None, BeginConn];
        let r = score_connective_labels(&g, &p, ConnectiveMatch::Token);
        assert_eq!((r.gold_count, r.pred_count, r.correct), (3, 3, 2));

        let r = score_connective_labels(&g, &[None; 4], ConnectiveMatch::Token);
        assert_eq!(r.recall, Some(0.0));

        let p = [BeginConn, None, None, BeginConn];
        let r = score_connective_labels(&g, &p, ConnectiveMatch::Span);
        assert_eq!((r.gold_count, r.pred_count, r.correct), (2, 2, 1));
    }

    #[test]
    fn relation_accuracy_and_confusion() {
        let g = ["elab", "elab", "cause", "joint"];
        let r = score_relations(&g, &g).unwrap();
        assert_eq!(r.accuracy, Some(1.0));
        let c = r.confusion.unwrap();
        assert_eq!(c.labels[0], "elab");
        assert_eq!(c.trace(), 4);
        assert!(c.counts.iter().enumerate().all(|(i, row)| row
            .iter()
            .enumerate()
            .all(|(j, &n)| i == j || n == 0)));
        assert!(score_relations::<&str>(&[], &[]).is_err());
        assert!(score_relations(&g, &g[..3]).is_err());
    }

    #[test]
    fn table_precision_accuracy() {
        let gold: Vec<&str> = vec!["x"; 10_000];
        let pred: Vec<&str> = (0..10_000).map(|i| if i < 8649 { "x" } else { "y" }).collect();
        let r = score_relations(&gold, &pred).unwrap();
        assert_eq!(r.accuracy, Some(0.8649));
        assert_eq!(format!("{:.2}", 100.0 * r.accuracy.unwrap()), "86.49");
    }

    #[test]
    fn confusion_csv_layout() {
        let c = ConfusionMatrix::build(&["a", "b", "b"], &["b", "b", "a"]);
        assert_eq!(c.to_csv(), "gold\\pred,b,a\nb,1,1\na,1,0\n");
    }

    #[test]
    fn run_aggregation() {
        assert_eq!(aggregate_runs(&[1.0; 5]).unwrap(), (1.0, 0.0));
        let (m, s) = aggregate_runs(&[90.0, 92.0, 94.0, 96.0, 98.0]).unwrap();
        assert_eq!(m, 94.0);
        assert!((s - 10f64.sqrt()).abs() < 1e-12);
        assert_eq!(aggregate_runs(&[0.7]).unwrap(), (0.7, 0.0));
        assert!(aggregate_runs(&[]).is_err());
    }

    #[test]
    fn text_report() {
        let r = score_boundary_labels(&[BeginSeg], &[BeginSeg]);
        let text = r.to_text();
        assert!(text.contains("f1         100.00"));
    }

    fn label() -> impl Strategy<Value = SegLabel> {
        prop_oneof![Just(None), Just(BeginSeg)]
    }

    proptest! {
        #[test]
        fn f1_identities(pairs in proptest::collection::vec((label(), label()), 1..50)) {
            let (g, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let r = score_boundary_labels(&g, &p);
            let (pr, re, f) = (r.precision.unwrap(), r.recall.unwrap(), r.f1.unwrap());
            if pr + re > 0.0 {
                prop_assert!((f - 2.0 * pr * re / (pr + re)).abs() < 1e-12);
            }
            prop_assert!(f <= pr.max(re) + 1e-12);
            prop_assert_eq!(r.to_json(), score_boundary_labels(&g, &p).to_json());
        }

        #[test]
        fn accuracy_is_trace_over_total(pairs in proptest::collection::vec((0u8..4, 0u8..4), 1..60)) {
            let g: Vec<String> = pairs.iter().map(|(a, _)| a.to_string()).collect();
            let p: Vec<String> = pairs.iter().map(|(_, b)| b.to_string()).collect();
            let r = score_relations(&g, &p).unwrap();
            let c = r.confusion.as_ref().unwrap();
            prop_assert_eq!(r.accuracy.unwrap(), c.trace() as f64 / c.total() as f64);
            for (label, row) in c.labels.iter().zip(&c.counts) {
                prop_assert_eq!(row.iter().sum::<usize>(), g.iter().filter(|x| *x == label).count());
            }
        }

        #[test]
        fn aggregation_permutation_invariant(mut xs in proptest::collection::vec(0.0f64..100.0, 1..10)) {
            let a = aggregate_runs(&xs).unwrap();
            xs.reverse();
            let b = aggregate_runs(&xs).unwrap();
            prop_assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
        }
    }
}
