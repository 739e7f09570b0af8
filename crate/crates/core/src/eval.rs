//! Ranking metrics against held-out ground truth.
//!
//! Corpus figures are unweighted means over documents. A document with no
//! relevant labels still counts in precision (scoring zero) but is left out
//! of recall, and the number left out is reported.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{DocId, GroundTruth, LabelId};
use crate::index::RankedList;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("relevant set is empty")]
    EmptyTruth,
    #[error("no predictions for document {0}")]
    MissingPredictions(DocId),
    #[error("prediction list for document {doc} has {found} entries, need {needed}")]
    ShortPredictions { doc: DocId, found: usize, needed: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub const PRECISION_AT: [usize; 3] = [1, 3, 5];
pub const RECALL_AT: [usize; 4] = [1, 3, 5, 10];

fn hits(pred: &RankedList, truth: &BTreeSet<LabelId>, m: usize) -> usize {
    pred.entries()
        .iter()
        .take(m)
        .filter(|(id, _)| truth.contains(id))
        .count()
}

/// Share of the top `m` slots holding a relevant label; empty slots count as
/// misses.
pub fn precision_at(pred: &RankedList, truth: &BTreeSet<LabelId>, m: usize) -> f64 {
    assert!(m >= 1, "precision_at needs m >= 1");
    hits(pred, truth, m) as f64 / m as f64
}

pub fn recall_at(pred: &RankedList, truth: &BTreeSet<LabelId>, m: usize) -> Result<f64, EvalError> {
    assert!(m >= 1, "recall_at needs m >= 1");
    if truth.is_empty() {
        return Err(EvalError::EmptyTruth);
    }
    Ok(hits(pred, truth, m) as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    #[serde(rename = "P@1")]
    pub p1: f64,
    #[serde(rename = "P@3")]
    pub p3: f64,
    #[serde(rename = "P@5")]
    pub p5: f64,
    /// Recall at 1, 3, 5 and 10; absent when every document had empty truth.
    #[serde(rename = "R@1")]
    pub r1: Option<f64>,
    #[serde(rename = "R@3")]
    pub r3: Option<f64>,
    #[serde(rename = "R@5")]
    pub r5: Option<f64>,
    #[serde(rename = "R@10")]
    pub r10: Option<f64>,
    /// Documents evaluated.
    pub n: usize,
    /// Documents left out of the recall means.
    pub skipped: usize,
}

impl MetricsRow {
    pub fn recall(&self) -> [Option<f64>; 4] {
        [self.r1, self.r3, self.r5, self.r10]
    }
}

/// Scores predictions for every document in `docs`. Each list must hold at
/// least `min(10, L)` entries.
pub fn evaluate(
    predictions: &HashMap<DocId, RankedList>,
    truth: &GroundTruth,
    docs: &[DocId],
) -> Result<MetricsRow, EvalError> {
    let needed = 10.min(truth.num_labels());
    let mut p = [0.0; 3];
    let mut r = [0.0; 4];
    let mut recall_docs = 0usize;
    let empty = BTreeSet::new();
    for &doc in docs {
        let pred = predictions.get(&doc).ok_or(EvalError::MissingPredictions(doc))?;
        if pred.len() < needed {
            return Err(EvalError::ShortPredictions {
                doc,
                found: pred.len(),
                needed,
            });
        }
        let rel = truth.relevant(doc).unwrap_or(&empty);
        for (acc, m) in p.iter_mut().zip(PRECISION_AT) {
            *acc += precision_at(pred, rel, m);
        }
        if !rel.is_empty() {
            recall_docs += 1;
            for (acc, m) in r.iter_mut().zip(RECALL_AT) {
                *acc += recall_at(pred, rel, m)?;
            }
        }
    }
    let n = docs.len();
    let mean = |x: f64, k: usize| if k == 0 { 0.0 } else { x / k as f64 };
    let rec = |x: f64| (recall_docs > 0).then(|| mean(x, recall_docs));
    Ok(MetricsRow {
        p1: mean(p[0], n),
        p3: mean(p[1], n),
        p5: mean(p[2], n),
        r1: rec(r[0]),
        r3: rec(r[1]),
        r5: rec(r[2]),
        r10: rec(r[3]),
        n,
        skipped: n - recall_docs,
    })
}

/// Share of the relevant labels that the pseudo-labels recover.
pub fn pseudo_label_quality(pseudo: &[LabelId], truth: &BTreeSet<LabelId>) -> Result<f64, EvalError> {
    if truth.is_empty() {
        return Err(EvalError::EmptyTruth);
    }
    let pseudo: BTreeSet<LabelId> = pseudo.iter().copied().collect();
    Ok(pseudo.intersection(truth).count() as f64 / truth.len() as f64)
}

/// Mean quality over the documents with nonempty truth, or `None` when there
/// are none.
pub fn corpus_pseudo_label_quality<'a, I>(pseudo: I, truth: &GroundTruth) -> Option<f64>
where
    I: IntoIterator<Item = (DocId, &'a [LabelId])>,
{
    let mut total = 0.0;
    let mut n = 0usize;
    for (doc, labels) in pseudo {
        if let Some(rel) = truth.relevant(doc).filter(|r| !r.is_empty()) {
            total += pseudo_label_quality(labels, rel).expect("truth is nonempty");
            n += 1;
        }
    }
    (n > 0).then(|| total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    Records,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(Self::Table),
            "csv" => Ok(Self::Csv),
            "records" | "jsonl" => Ok(Self::Records),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

pub const CSV_HEADER: &str = "name,P@1,P@3,P@5,R@1,R@3,R@5,R@10,n,skipped";

fn render_csv(rows: &[(String, MetricsRow)]) -> Result<String, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = CSV_HEADER.split(',').collect();
    let io = |e: csv::Error| EvalError::Io(std::io::Error::other(e));
    w.write_record(&header).map_err(io)?;
    for (name, m) in rows {
        let mut rec = vec![name.clone(), m.p1.to_string(), m.p3.to_string(), m.p5.to_string()];
        rec.extend(m.recall().iter().map(|r| r.map(|x| x.to_string()).unwrap_or_default()));
        rec.push(m.n.to_string());
        rec.push(m.skipped.to_string());
        w.write_record(&rec).map_err(io)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| EvalError::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn render_table(rows: &[(String, MetricsRow)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).chain([4]).max().unwrap_or(4);
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", "name");
    for h in ["P@1", "P@3", "P@5", "R@1", "R@3", "R@5", "R@10"] {
        let _ = write!(out, " {h:>6}");
    }
    let _ = writeln!(out, " {:>6} {:>7}", "n", "skipped");
    for (name, m) in rows {
        let _ = write!(out, "{name:<width$}");
        for v in [m.p1, m.p3, m.p5] {
            let _ = write!(out, " {v:>6.2}");
        }
        for r in m.recall() {
            match r {
                Some(v) => {
                    let _ = write!(out, " {v:>6.2}");
                }
                None => {
                    let _ = write!(out, " {:>6}", "-");
                }
            }
        }
        let _ = writeln!(out, " {:>6} {:>7}", m.n, m.skipped);
    }
    out
}

fn render_records(rows: &[(String, MetricsRow)]) -> String {
    #[derive(Serialize)]
    struct Record<'a> {
        name: &'a str,
        #[serde(flatten)]
        metrics: &'a MetricsRow,
    }
    rows.iter()
        .map(|(name, metrics)| serde_json::to_string(&Record { name, metrics }).expect("metrics serialize") + "\n")
        .collect()
}

/// Renders named rows in the chosen format.
pub fn render_report(rows: &[(String, MetricsRow)], format: ReportFormat) -> Result<String, EvalError> {
    match format {
        ReportFormat::Csv => render_csv(rows),
        ReportFormat::Table => Ok(render_table(rows)),
        ReportFormat::Records => Ok(render_records(rows)),
    }
}

/// Writes the report to `path`, or to standard output when `path` is `None`.
pub fn emit_report(rows: &[(String, MetricsRow)], format: ReportFormat, path: Option<&Path>) -> Result<(), EvalError> {
    let text = render_report(rows, format)?;
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}
