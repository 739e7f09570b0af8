//! Documents, label texts and evaluation-only ground truth.
//!
//! Document ids are positional: the n-th record of a file gets id `n`. Formats
//! that carry their own ids (tabular, line-delimited records) are renumbered
//! densely at load and the mapping is kept so it can be written as a sidecar.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

pub type DocId = u32;
pub type LabelId = u32;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("file contains no records: {0}")]
    EmptyFile(String),
    #[error("duplicate explicit id {id:?} at line {line}")]
    DuplicateExplicitId { id: String, line: usize },
    #[error("empty label text at line {0}")]
    EmptyLabelText(usize),
    #[error("label id {id} out of range (L = {labels}) at line {line}")]
    LabelIdOutOfRange { id: u64, labels: usize, line: usize },
    #[error("ground truth has {found} rows, expected {expected}")]
    RowCountMismatch { expected: usize, found: usize },
    #[error("split infeasible: {0}")]
    SpecInfeasible(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: DocId,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocumentFormat {
    RawText,
    Tabular,
    Records,
}

impl std::str::FromStr for DocumentFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" | "raw-text" | "txt" => Ok(Self::RawText),
            "tabular" | "tsv" => Ok(Self::Tabular),
            "records" | "jsonl" | "line-delimited-records" => Ok(Self::Records),
            other => Err(format!("unknown document format {other:?}")),
        }
    }
}

/// Which columns of a tabular file make up the document text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TextField {
    #[default]
    TitleAndDescription,
    Title,
    Description,
}

impl std::str::FromStr for TextField {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" | "both" => Ok(Self::TitleAndDescription),
            "title" => Ok(Self::Title),
            "description" => Ok(Self::Description),
            other => Err(format!("unknown text field {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub allow_empty: bool,
    pub field: TextField,
}

/// A loaded document collection. `id_map` is present when the source format
/// carried explicit ids; entry `n` is the original id of document `n`.
#[derive(Debug, Clone, Default)]
pub struct DocumentSet {
    pub docs: Vec<Document>,
    pub id_map: Option<Vec<String>>,
}

impl DocumentSet {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, id: DocId) -> Option<&Document> {
        self.docs.get(id as usize)
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.docs.iter().map(|d| d.text.as_str())
    }
}

/// Collapses every whitespace run to one space and trims the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn read_to_string(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn file_lines(content: &str) -> impl Iterator<Item = (usize, &str)> {
    content
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
}

#[derive(Deserialize)]
struct DocumentRecord {
    #[serde(default)]
    id: Option<serde_json::Value>,
    text: String,
}

pub fn load_documents(path: &Path, format: DocumentFormat, opts: LoadOptions) -> Result<DocumentSet, CorpusError> {
    let content = read_to_string(path)?;
    parse_documents(&content, format, opts).map_err(|e| match e {
        CorpusError::EmptyFile(_) => CorpusError::EmptyFile(path.display().to_string()),
        other => other,
    })
}

pub fn parse_documents(content: &str, format: DocumentFormat, opts: LoadOptions) -> Result<DocumentSet, CorpusError> {
    let mut docs = Vec::new();
    let mut explicit: Vec<String> = Vec::new();
    let mut seen = HashSet::new();

    let push = |line: usize, text: String, docs: &mut Vec<Document>| {
        let text = normalize_whitespace(&text);
        if text.is_empty() && !opts.allow_empty {
            return Err(CorpusError::MalformedRecord {
                line,
                reason: "empty document".into(),
            });
        }
        docs.push(Document {
            id: docs.len() as DocId,
            text,
        });
        Ok(())
    };
    let mut register = |line: usize, id: String, explicit: &mut Vec<String>| {
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateExplicitId { id, line });
        }
        explicit.push(id);
        Ok(())
    };

    for (line, raw) in file_lines(content) {
        match format {
            DocumentFormat::RawText => push(line, raw.to_string(), &mut docs)?,
            DocumentFormat::Tabular => {
                if raw.trim().is_empty() && !opts.allow_empty {
                    return Err(CorpusError::MalformedRecord {
                        line,
                        reason: "empty line".into(),
                    });
                }
                let mut cols = raw.splitn(3, '\t');
                let (Some(id), Some(title), Some(desc)) = (cols.next(), cols.next(), cols.next()) else {
                    return Err(CorpusError::MalformedRecord {
                        line,
                        reason: "expected id<TAB>title<TAB>description".into(),
                    });
                };
                let text = match opts.field {
                    TextField::TitleAndDescription => format!("{title} {desc}"),
                    TextField::Title => title.to_string(),
                    TextField::Description => desc.to_string(),
                };
                register(line, id.trim().to_string(), &mut explicit)?;
                push(line, text, &mut docs)?;
            }
            DocumentFormat::Records => {
                if raw.trim().is_empty() {
                    return Err(CorpusError::MalformedRecord {
                        line,
                        reason: "empty line".into(),
                    });
                }
                let rec: DocumentRecord = serde_json::from_str(raw).map_err(|e| CorpusError::MalformedRecord {
                    line,
                    reason: e.to_string(),
                })?;
                if let Some(id) = rec.id {
                    let id = match id {
                        serde_json::Value::String(s) => s,
                        other => other.to_string(),
                    };
                    register(line, id, &mut explicit)?;
                } else if !explicit.is_empty() {
                    return Err(CorpusError::MalformedRecord {
                        line,
                        reason: "record without id in a file with explicit ids".into(),
                    });
                }
                push(line, rec.text, &mut docs)?;
            }
        }
    }
    if docs.is_empty() {
        return Err(CorpusError::EmptyFile(String::new()));
    }
    if format == DocumentFormat::Records && !explicit.is_empty() && explicit.len() != docs.len() {
        return Err(CorpusError::MalformedRecord {
            line: 1,
            reason: "records mix explicit and implicit ids".into(),
        });
    }
    let id_map = (!explicit.is_empty()).then_some(explicit);
    Ok(DocumentSet { docs, id_map })
}

/// Writes documents one per line (raw-text format).
pub fn write_documents(path: &Path, docs: &[Document]) -> Result<(), CorpusError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for d in docs {
        writeln!(out, "{}", d.text).map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Writes the `original_id<TAB>dense_id` sidecar.
pub fn write_id_map(path: &Path, id_map: &[String]) -> Result<(), CorpusError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for (dense, original) in id_map.iter().enumerate() {
        writeln!(out, "{original}\t{dense}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Label {
    pub id: LabelId,
    pub text: String,
}

/// The predefined label set. Ids are dense `0..L`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    labels: Vec<Label>,
}

impl LabelSpace {
    pub fn new(texts: Vec<String>) -> Result<Self, CorpusError> {
        if texts.is_empty() {
            return Err(CorpusError::EmptyFile("<label list>".into()));
        }
        let mut labels = Vec::with_capacity(texts.len());
        for (i, t) in texts.into_iter().enumerate() {
            let text = normalize_whitespace(&t);
            if text.is_empty() {
                return Err(CorpusError::EmptyLabelText(i + 1));
            }
            labels.push(Label { id: i as LabelId, text });
        }
        Ok(Self { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, id: LabelId) -> Option<&Label> {
        self.labels.get(id as usize)
    }

    pub fn text(&self, id: LabelId) -> &str {
        &self.labels[id as usize].text
    }

    pub fn iter(&self) -> impl Iterator<Item = &Label> {
        self.labels.iter()
    }
}

pub fn load_label_space(path: &Path) -> Result<LabelSpace, CorpusError> {
    let content = read_to_string(path)?;
    let texts: Vec<String> = file_lines(&content).map(|(_, l)| l.to_string()).collect();
    if texts.is_empty() {
        return Err(CorpusError::EmptyFile(path.display().to_string()));
    }
    LabelSpace::new(texts)
}

pub fn write_label_space(path: &Path, labels: &LabelSpace) -> Result<(), CorpusError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for l in labels.iter() {
        writeln!(out, "{}", l.text).map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Held-out relevance sets, one per document. Only the evaluation code and
/// the oracle teacher read this.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    relevant: Vec<BTreeSet<LabelId>>,
    num_labels: usize,
}

impl GroundTruth {
    pub fn new(relevant: Vec<BTreeSet<LabelId>>, num_labels: usize) -> Result<Self, CorpusError> {
        for (row, set) in relevant.iter().enumerate() {
            if let Some(&bad) = set.iter().find(|&&l| l as usize >= num_labels) {
                return Err(CorpusError::LabelIdOutOfRange {
                    id: bad as u64,
                    labels: num_labels,
                    line: row + 1,
                });
            }
        }
        Ok(Self { relevant, num_labels })
    }

    pub fn len(&self) -> usize {
        self.relevant.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relevant.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn relevant(&self, doc: DocId) -> Option<&BTreeSet<LabelId>> {
        self.relevant.get(doc as usize)
    }

    pub fn contains(&self, doc: DocId, label: LabelId) -> bool {
        self.relevant(doc).is_some_and(|s| s.contains(&label))
    }

    /// Documents with no relevant label.
    pub fn empty_rows(&self) -> Vec<DocId> {
        self.relevant
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_empty())
            .map(|(i, _)| i as DocId)
            .collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = (DocId, &BTreeSet<LabelId>)> {
        self.relevant.iter().enumerate().map(|(i, s)| (i as DocId, s))
    }
}

pub fn parse_ground_truth(
    content: &str,
    num_labels: usize,
    expected_rows: Option<usize>,
) -> Result<GroundTruth, CorpusError> {
    let mut relevant = Vec::new();
    for (line, raw) in file_lines(content) {
        let mut set = BTreeSet::new();
        for tok in raw.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let id: u64 = tok.parse().map_err(|_| CorpusError::MalformedRecord {
                line,
                reason: format!("not a label id: {tok:?}"),
            })?;
            if id >= num_labels as u64 {
                return Err(CorpusError::LabelIdOutOfRange {
                    id,
                    labels: num_labels,
                    line,
                });
            }
            set.insert(id as LabelId);
        }
        relevant.push(set);
    }
    if let Some(expected) = expected_rows {
        if expected != relevant.len() {
            return Err(CorpusError::RowCountMismatch {
                expected,
                found: relevant.len(),
            });
        }
    }
    Ok(GroundTruth { relevant, num_labels })
}

pub fn load_ground_truth(
    path: &Path,
    num_labels: usize,
    expected_rows: Option<usize>,
) -> Result<GroundTruth, CorpusError> {
    let content = read_to_string(path)?;
    let truth = parse_ground_truth(&content, num_labels, expected_rows)?;
    let empty = truth.empty_rows();
    if !empty.is_empty() {
        log::warn!("{}: {} documents have no relevant labels", path.display(), empty.len());
    }
    Ok(truth)
}

pub fn write_ground_truth(path: &Path, truth: &GroundTruth) -> Result<(), CorpusError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for (_, set) in truth.rows() {
        let row: Vec<String> = set.iter().map(|l| l.to_string()).collect();
        writeln!(out, "{}", row.join(",")).map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub dev_size: usize,
    pub train_subsample: Option<usize>,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            dev_size: 800,
            train_subsample: None,
            seed: 0,
        }
    }
}

/// Train and dev document ids, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<DocId>,
    pub dev: Vec<DocId>,
}

/// Dev is drawn first; the optional subsample is drawn from what remains, so
/// the dev set does not depend on the subsample size.
pub fn make_splits(num_docs: usize, spec: SplitSpec) -> Result<Splits, CorpusError> {
    if spec.dev_size == 0 {
        return Err(CorpusError::SpecInfeasible("dev_size must be at least 1".into()));
    }
    if spec.dev_size >= num_docs {
        return Err(CorpusError::SpecInfeasible(format!(
            "dev_size {} needs more than {} documents",
            spec.dev_size, num_docs
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut dev: Vec<DocId> = index::sample(&mut rng, num_docs, spec.dev_size)
        .into_iter()
        .map(|i| i as DocId)
        .collect();
    dev.sort_unstable();

    let mut in_dev = vec![false; num_docs];
    for &d in &dev {
        in_dev[d as usize] = true;
    }
    let mut train: Vec<DocId> = (0..num_docs as DocId).filter(|&d| !in_dev[d as usize]).collect();
    if let Some(n) = spec.train_subsample {
        if n > train.len() {
            return Err(CorpusError::SpecInfeasible(format!(
                "train_subsample {n} exceeds the {} documents left after dev extraction",
                train.len()
            )));
        }
        train.shuffle(&mut rng);
        train.truncate(n);
        train.sort_unstable();
    }
    Ok(Splits { train, dev })
}
