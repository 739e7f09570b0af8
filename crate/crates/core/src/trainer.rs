//! The training loop.
//!
//! Each cycle embeds labels and training documents under the current
//! parameters, builds a label index, shortlists `j` labels per document,
//! keeps the ones the teacher approves, and runs mini-batch triplet updates
//! with in-batch negatives. A teacher-judged dev P@1 after every cycle (and
//! once before the first) drives early stopping; the best checkpoint wins.

use std::collections::{HashMap, HashSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DocId, Document, LabelId, LabelSpace};
use crate::encoder::{
    adamw_step, batch_loss_and_grad, AnchorTerm, EncoderError, EncoderParams, FeatureVector, Featurizer, OptState,
};
use crate::index::{build_index, IndexConfig, IndexError, LabelIndex, LabelMatrix, RankedList};
use crate::teacher::{filter_shortlists, Judge, TeacherError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("no training document has a teacher-approved label in cycle {cycle}")]
    NoTrainingSignal { cycle: usize },
    #[error("dev set is empty")]
    EmptyDev,
    #[error(transparent)]
    Teacher(#[from] TeacherError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum NegativeMode {
    /// Other documents' chosen positives in the same batch.
    #[default]
    InBatch,
    /// In-batch negatives plus the anchor's own teacher-rejected shortlist.
    InBatchPlusTeacherHard,
}

impl std::str::FromStr for NegativeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "in-batch" => Ok(Self::InBatch),
            "in-batch+teacher-hard" | "hard" => Ok(Self::InBatchPlusTeacherHard),
            other => Err(format!("unknown negative mode {other:?}")),
        }
    }
}

impl std::fmt::Display for NegativeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::InBatch => "in-batch",
            Self::InBatchPlusTeacherHard => "in-batch+teacher-hard",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub margin: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub shortlist_size: usize,
    pub max_cycles: usize,
    pub epochs_per_cycle: usize,
    pub negative_mode: NegativeMode,
    pub patience: usize,
    pub dev_judge_k: usize,
    pub seed: u64,
    pub index: IndexConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.3,
            lr: 2e-4,
            weight_decay: 0.01,
            batch_size: 128,
            shortlist_size: 10,
            max_cycles: 8,
            epochs_per_cycle: 1,
            negative_mode: NegativeMode::InBatch,
            patience: 1,
            dev_judge_k: 5,
            seed: 0,
            index: IndexConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.shortlist_size < 1 {
            return bad("shortlist_size must be at least 1");
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("margin must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if self.epochs_per_cycle < 1 {
            return bad("epochs_per_cycle must be at least 1");
        }
        if self.patience < 1 {
            return bad("patience must be at least 1");
        }
        if self.dev_judge_k < 1 {
            return bad("dev_judge_k must be at least 1");
        }
        Ok(())
    }
}

/// Documents with their features computed once for the whole run.
#[derive(Debug, Clone)]
pub struct FeaturizedDocs<'a> {
    docs: Vec<&'a Document>,
    features: Vec<FeatureVector>,
}

impl<'a> FeaturizedDocs<'a> {
    pub fn new(featurizer: &dyn Featurizer, docs: Vec<&'a Document>) -> Result<Self, EncoderError> {
        let features = docs
            .par_iter()
            .map(|d| featurizer.featurize(&d.text))
            .collect::<Result<_, _>>()?;
        Ok(Self { docs, features })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[&'a Document] {
        &self.docs
    }
}

#[derive(Debug, Clone)]
pub struct FeaturizedLabels<'a> {
    space: &'a LabelSpace,
    features: Vec<FeatureVector>,
}

impl<'a> FeaturizedLabels<'a> {
    pub fn new(featurizer: &dyn Featurizer, space: &'a LabelSpace) -> Result<Self, EncoderError> {
        let texts: Vec<&str> = space.iter().map(|l| l.text.as_str()).collect();
        let features = texts
            .par_iter()
            .map(|t| featurizer.featurize(t))
            .collect::<Result<_, _>>()?;
        Ok(Self { space, features })
    }

    pub fn space(&self) -> &'a LabelSpace {
        self.space
    }
}

/// One document's shortlist split by the teacher, each in shortlist order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocAssignment {
    pub doc_id: DocId,
    pub shortlist: Vec<LabelId>,
    pub positives: Vec<LabelId>,
    pub rejected: Vec<LabelId>,
}

/// Pseudo-labels for one cycle, sorted by document id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PseudoLabelAssignment {
    pub docs: Vec<DocAssignment>,
}

impl PseudoLabelAssignment {
    pub fn new(mut docs: Vec<DocAssignment>) -> Self {
        docs.sort_by_key(|d| d.doc_id);
        Self { docs }
    }

    pub fn get(&self, doc: DocId) -> Option<&DocAssignment> {
        self.docs
            .binary_search_by_key(&doc, |d| d.doc_id)
            .ok()
            .map(|i| &self.docs[i])
    }

    pub fn positives(&self, doc: DocId) -> &[LabelId] {
        self.get(doc).map(|d| d.positives.as_slice()).unwrap_or(&[])
    }

    pub fn docs_with_positive(&self) -> usize {
        self.docs.iter().filter(|d| !d.positives.is_empty()).count()
    }

    pub fn total_positives(&self) -> usize {
        self.docs.iter().map(|d| d.positives.len()).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub cycle: usize,
    pub docs_with_positive: usize,
    pub total_positives: usize,
    /// Training documents that could not be embedded this cycle.
    pub skipped_docs: usize,
    pub batches: usize,
    pub teacher_calls: u64,
    pub cache_hits: u64,
    pub unparseable: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_loss: Option<f64>,
    pub dev_p1: f64,
    pub wall_secs: f64,
    /// Overlap of pseudo-labels with held-out truth, when the caller knows it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quality: Option<f64>,
}

/// Trainable state carried between cycles.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: EncoderParams,
    pub opt: OptState,
}

impl TrainState {
    pub fn new(params: EncoderParams, cfg: &TrainConfig) -> Self {
        let opt = OptState::new(&params, cfg.lr, cfg.weight_decay);
        Self { params, opt }
    }
}

fn embed_rows(params: &EncoderParams, feats: &[FeatureVector]) -> Vec<Result<Vec<f64>, EncoderError>> {
    feats
        .par_iter()
        .map(|f| {
            let mut u = params.project(f)?;
            let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n >= 1e-12) {
                return Err(EncoderError::ZeroNorm);
            }
            u.iter_mut().for_each(|v| *v /= n);
            Ok(u)
        })
        .collect()
}

/// Embeds every label under `params` and indexes them.
pub fn build_label_index(
    params: &EncoderParams,
    labels: &FeaturizedLabels<'_>,
    cfg: &IndexConfig,
) -> Result<LabelIndex, TrainError> {
    let rows = embed_rows(params, &labels.features)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(build_index(LabelMatrix::from_rows(&rows)?, *cfg, params.fingerprint())?)
}

/// Per-document shortlists keyed by position, and the skipped documents.
type Shortlists = (Vec<(usize, RankedList)>, Vec<DocId>);

/// Top-`k` lists for every document that can be embedded; the rest are
/// returned separately.
fn shortlist(
    params: &EncoderParams,
    index: &LabelIndex,
    docs: &FeaturizedDocs<'_>,
    k: usize,
) -> Result<Shortlists, TrainError> {
    let mut lists = Vec::with_capacity(docs.len());
    let mut skipped = Vec::new();
    let embedded = embed_rows(params, &docs.features);
    let ranked: Vec<Option<RankedList>> = embedded
        .par_iter()
        .map(|e| e.as_ref().ok().map(|e| index.query_topk(e, k)))
        .collect();
    for (i, (e, r)) in embedded.into_iter().zip(ranked).enumerate() {
        match (e, r) {
            (Ok(_), Some(r)) => lists.push((i, r)),
            (Err(EncoderError::ZeroNorm), _) => skipped.push(docs.docs[i].id),
            (Err(e), _) => return Err(e.into()),
            (Ok(_), None) => unreachable!("embedded documents are always queried"),
        }
    }
    if !skipped.is_empty() {
        log::warn!("{} documents have zero-norm embeddings and were skipped", skipped.len());
    }
    Ok((lists, skipped))
}

/// Shortlists and teacher-filters every training document.
pub fn assign_pseudo_labels(
    params: &EncoderParams,
    index: &LabelIndex,
    docs: &FeaturizedDocs<'_>,
    labels: &FeaturizedLabels<'_>,
    shortlist_size: usize,
    judge: &Judge<'_>,
) -> Result<(PseudoLabelAssignment, usize), TrainError> {
    let (lists, skipped) = shortlist(params, index, docs, shortlist_size)?;
    let items: Vec<(&Document, &RankedList)> = lists.iter().map(|(i, r)| (docs.docs[*i], r)).collect();
    let filtered = filter_shortlists(judge, &items, labels.space)?;
    let assignment = lists
        .iter()
        .zip(filtered)
        .map(|((i, r), f)| DocAssignment {
            doc_id: docs.docs[*i].id,
            shortlist: r.ids().collect(),
            positives: f.positives,
            rejected: f.rejected,
        })
        .collect();
    Ok((PseudoLabelAssignment::new(assignment), skipped.len()))
}

/// Shuffles the documents that have pseudo-positives, picks one positive per
/// document uniformly, and cuts batches of `batch_size`. A final batch with
/// fewer than two documents is dropped.
pub fn assemble_batches(
    assignment: &PseudoLabelAssignment,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Vec<Vec<(DocId, LabelId)>> {
    let mut docs: Vec<&DocAssignment> = assignment.docs.iter().filter(|d| !d.positives.is_empty()).collect();
    docs.shuffle(rng);
    let pairs: Vec<(DocId, LabelId)> = docs
        .into_iter()
        .map(|d| (d.doc_id, d.positives[rng.random_range(0..d.positives.len())]))
        .collect();
    pairs
        .chunks(batch_size.max(1))
        .filter(|b| b.len() >= 2)
        .map(<[_]>::to_vec)
        .collect()
}

/// Negative label ids for each anchor of a batch, deduplicated in first-seen
/// order. Labels in the anchor's own pseudo-positive set are never negatives.
pub fn batch_negatives(
    batch: &[(DocId, LabelId)],
    assignment: &PseudoLabelAssignment,
    mode: NegativeMode,
) -> Vec<Vec<LabelId>> {
    batch
        .iter()
        .enumerate()
        .map(|(i, &(doc, _))| {
            let own = assignment.get(doc);
            let positives: &[LabelId] = own.map(|a| a.positives.as_slice()).unwrap_or(&[]);
            let mut seen = HashSet::new();
            let mut out = Vec::new();
            for (k, &(_, label)) in batch.iter().enumerate() {
                if k != i && !positives.contains(&label) && seen.insert(label) {
                    out.push(label);
                }
            }
            if mode == NegativeMode::InBatchPlusTeacherHard {
                for &r in own.map(|a| a.rejected.as_slice()).unwrap_or(&[]) {
                    if seen.insert(r) {
                        out.push(r);
                    }
                }
            }
            out
        })
        .collect()
}

/// One optimizer step on a batch; returns the batch loss.
fn train_batch<'f>(
    state: &mut TrainState,
    batch: &[(DocId, LabelId)],
    negatives: &[Vec<LabelId>],
    doc_features: &HashMap<DocId, &'f FeatureVector>,
    labels: &'f FeaturizedLabels<'_>,
    margin: f64,
) -> Result<f64, TrainError> {
    let mut texts: Vec<&'f FeatureVector> = batch.iter().map(|(d, _)| doc_features[d]).collect();
    let mut label_slot: HashMap<LabelId, usize> = HashMap::new();
    let mut slot = |l: LabelId, texts: &mut Vec<&'f FeatureVector>| {
        *label_slot.entry(l).or_insert_with(|| {
            texts.push(&labels.features[l as usize]);
            texts.len() - 1
        })
    };
    let mut terms = Vec::with_capacity(batch.len());
    for (i, (&(_, pos), negs)) in batch.iter().zip(negatives).enumerate() {
        let positive = slot(pos, &mut texts);
        let negatives = negs.iter().map(|&n| slot(n, &mut texts)).collect();
        terms.push(AnchorTerm {
            anchor: i,
            positive,
            negatives,
        });
    }
    let (loss, grad) = batch_loss_and_grad(&state.params, &texts, &terms, margin)?;
    adamw_step(&mut state.params, &grad, &mut state.opt)?;
    Ok(loss)
}

/// Runs the batch updates of one cycle over an assignment. Returns the mean
/// batch loss and the number of batches, or `None` when no batch formed.
pub fn train_on_assignment(
    state: &mut TrainState,
    assignment: &PseudoLabelAssignment,
    docs: &FeaturizedDocs<'_>,
    labels: &FeaturizedLabels<'_>,
    cfg: &TrainConfig,
    cycle: usize,
) -> Result<(Option<f64>, usize), TrainError> {
    let doc_features: HashMap<DocId, &FeatureVector> =
        docs.docs.iter().zip(&docs.features).map(|(d, f)| (d.id, f)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cycle as u64);
    let mut total = 0.0;
    let mut batches = 0;
    for _ in 0..cfg.epochs_per_cycle {
        for batch in assemble_batches(assignment, cfg.batch_size, &mut rng) {
            let negatives = batch_negatives(&batch, assignment, cfg.negative_mode);
            total += train_batch(state, &batch, &negatives, &doc_features, labels, cfg.margin)?;
            batches += 1;
        }
    }
    Ok(((batches > 0).then(|| total / batches as f64), batches))
}

/// Cache counters before a step, for per-cycle deltas.
struct CacheMark(crate::teacher::CacheStats);

impl CacheMark {
    fn take(judge: &Judge<'_>) -> Self {
        Self(judge.cache().stats())
    }

    fn fill(&self, judge: &Judge<'_>, report: &mut CycleReport) {
        let now = judge.cache().stats();
        report.teacher_calls = now.computed - self.0.computed;
        report.cache_hits = now.hits - self.0.hits;
        report.unparseable = now.unparseable - self.0.unparseable;
    }
}

fn run_cycle_with_index(
    state: &mut TrainState,
    index: &LabelIndex,
    train: &FeaturizedDocs<'_>,
    labels: &FeaturizedLabels<'_>,
    cfg: &TrainConfig,
    judge: &Judge<'_>,
    cycle: usize,
) -> Result<(PseudoLabelAssignment, CycleReport), TrainError> {
    let (assignment, skipped) = assign_pseudo_labels(&state.params, index, train, labels, cfg.shortlist_size, judge)?;
    if assignment.docs_with_positive() == 0 {
        return Err(TrainError::NoTrainingSignal { cycle });
    }
    let (mean_loss, batches) = train_on_assignment(state, &assignment, train, labels, cfg, cycle)?;
    let report = CycleReport {
        cycle,
        docs_with_positive: assignment.docs_with_positive(),
        total_positives: assignment.total_positives(),
        skipped_docs: skipped,
        batches,
        mean_loss,
        ..Default::default()
    };
    Ok((assignment, report))
}

/// One full cycle: embed, index, shortlist, teacher-filter, train. The
/// report's dev score is left at zero; [`train`] fills it in.
pub fn run_cycle(
    state: &mut TrainState,
    train: &FeaturizedDocs<'_>,
    labels: &FeaturizedLabels<'_>,
    cfg: &TrainConfig,
    judge: &Judge<'_>,
    cycle: usize,
) -> Result<(PseudoLabelAssignment, CycleReport), TrainError> {
    cfg.validate()?;
    if train.len() < cfg.batch_size {
        return Err(TrainError::InvalidConfig(format!(
            "{} training documents cannot fill a batch of {}",
            train.len(),
            cfg.batch_size
        )));
    }
    let start = Instant::now();
    let mark = CacheMark::take(judge);
    let index = build_label_index(&state.params, labels, &cfg.index)?;
    let (assignment, mut report) = run_cycle_with_index(state, &index, train, labels, cfg, judge, cycle)?;
    mark.fill(judge, &mut report);
    report.wall_secs = start.elapsed().as_secs_f64();
    Ok((assignment, report))
}

fn dev_eval_with_index(
    params: &EncoderParams,
    index: &LabelIndex,
    dev: &FeaturizedDocs<'_>,
    labels: &FeaturizedLabels<'_>,
    cfg: &TrainConfig,
    judge: &Judge<'_>,
) -> Result<f64, TrainError> {
    if dev.is_empty() {
        return Err(TrainError::EmptyDev);
    }
    let (lists, _) = shortlist(params, index, dev, cfg.dev_judge_k)?;
    let items: Vec<(&Document, &RankedList)> = lists.iter().map(|(i, r)| (dev.docs[*i], r)).collect();
    let filtered = filter_shortlists(judge, &items, labels.space)?;
    let hits = lists
        .iter()
        .zip(&filtered)
        .filter(|((_, r), f)| r.top().is_some_and(|top| f.positives.contains(&top)))
        .count();
    Ok(hits as f64 / dev.len() as f64)
}

/// Fraction of dev documents whose rank-1 label the teacher approves. The
/// top `dev_judge_k` labels of each document are judged (and cached).
pub fn dev_eval(
    params: &EncoderParams,
    dev: &FeaturizedDocs<'_>,
    labels: &FeaturizedLabels<'_>,
    cfg: &TrainConfig,
    judge: &Judge<'_>,
) -> Result<f64, TrainError> {
    let index = build_label_index(params, labels, &cfg.index)?;
    dev_eval_with_index(params, &index, dev, labels, cfg, judge)
}

/// What an observer sees after each evaluation.
pub struct CycleView<'s> {
    pub state: &'s TrainState,
    /// Absent for cycle 0.
    pub assignment: Option<&'s PseudoLabelAssignment>,
    pub is_best: bool,
}

type DevOverride<'a> = dyn FnMut(usize, &EncoderParams) -> Result<f64, TrainError> + 'a;
type Observer<'a> = dyn FnMut(&mut CycleReport, &CycleView<'_>) -> Result<(), TrainError> + 'a;

/// Optional callbacks for [`train`].
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Replaces the teacher-judged dev score (cycle number, params).
    pub dev_score: Option<Box<DevOverride<'a>>>,
    /// Called once per evaluated cycle, before its report is stored.
    pub on_cycle: Option<Box<Observer<'a>>>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: TrainState,
    pub best_cycle: usize,
    pub reports: Vec<CycleReport>,
}

/// Runs cycles until `max_cycles` or until `patience` consecutive cycles
/// fail to strictly improve the dev score. Returns the best-scoring state.
pub fn train(
    initial: TrainState,
    train_docs: &FeaturizedDocs<'_>,
    dev_docs: &FeaturizedDocs<'_>,
    labels: &FeaturizedLabels<'_>,
    cfg: &TrainConfig,
    judge: &Judge<'_>,
    hooks: TrainHooks<'_>,
) -> Result<TrainOutcome, TrainError> {
    let TrainHooks {
        mut dev_score,
        mut on_cycle,
    } = hooks;
    cfg.validate()?;
    if train_docs.len() < cfg.batch_size {
        return Err(TrainError::InvalidConfig(format!(
            "{} training documents cannot fill a batch of {}",
            train_docs.len(),
            cfg.batch_size
        )));
    }
    if dev_docs.is_empty() && dev_score.is_none() {
        return Err(TrainError::EmptyDev);
    }
    let mut state = initial;
    let mut reports = Vec::new();

    let start = Instant::now();
    let mark = CacheMark::take(judge);
    let mut index = build_label_index(&state.params, labels, &cfg.index)?;
    let mut evaluate = |cycle: usize, state: &TrainState, index: &LabelIndex| match dev_score.as_mut() {
        Some(f) => f(cycle, &state.params),
        None => dev_eval_with_index(&state.params, index, dev_docs, labels, cfg, judge),
    };
    let mut report = CycleReport {
        dev_p1: evaluate(0, &state, &index)?,
        ..Default::default()
    };
    mark.fill(judge, &mut report);
    report.wall_secs = start.elapsed().as_secs_f64();
    log::info!("cycle 0: dev P@1 {:.4}", report.dev_p1);
    let mut best = (state.clone(), 0usize, report.dev_p1);
    if let Some(f) = on_cycle.as_mut() {
        f(
            &mut report,
            &CycleView {
                state: &state,
                assignment: None,
                is_best: true,
            },
        )?;
    }
    reports.push(report);

    let mut stale = 0;
    for cycle in 1..=cfg.max_cycles {
        let start = Instant::now();
        let mark = CacheMark::take(judge);
        let (assignment, mut report) = run_cycle_with_index(&mut state, &index, train_docs, labels, cfg, judge, cycle)?;
        index = build_label_index(&state.params, labels, &cfg.index)?;
        report.dev_p1 = evaluate(cycle, &state, &index)?;
        mark.fill(judge, &mut report);
        report.wall_secs = start.elapsed().as_secs_f64();
        log::info!(
            "cycle {cycle}: {} docs with positives, loss {:?}, dev P@1 {:.4}",
            report.docs_with_positive,
            report.mean_loss,
            report.dev_p1
        );
        let improved = report.dev_p1 > best.2;
        if improved {
            best = (state.clone(), cycle, report.dev_p1);
            stale = 0;
        } else {
            stale += 1;
        }
        if let Some(f) = on_cycle.as_mut() {
            f(
                &mut report,
                &CycleView {
                    state: &state,
                    assignment: Some(&assignment),
                    is_best: improved,
                },
            )?;
        }
        reports.push(report);
        if stale >= cfg.patience {
            log::info!("no dev improvement for {stale} cycle(s); stopping");
            break;
        }
    }
    Ok(TrainOutcome {
        best: best.0,
        best_cycle: best.1,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assignment(rows: &[(DocId, &[LabelId], &[LabelId])]) -> PseudoLabelAssignment {
        PseudoLabelAssignment::new(
            rows.iter()
                .map(|&(d, p, r)| DocAssignment {
                    doc_id: d,
                    shortlist: p.iter().chain(r).copied().collect(),
                    positives: p.to_vec(),
                    rejected: r.to_vec(),
                })
                .collect(),
        )
    }

    #[test]
    fn two_docs_one_batch() {
        let a = assignment(&[(0, &[10], &[]), (1, &[11], &[])]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batches = assemble_batches(&a, 128, &mut rng);
        assert_eq!(batches.len(), 1);
        let mut b = batches[0].clone();
        b.sort();
        assert_eq!(b, vec![(0, 10), (1, 11)]);
    }

    #[test]
    fn short_tail_is_dropped() {
        let rows: Vec<(DocId, Vec<LabelId>)> = (0..129).map(|d| (d, vec![d])).collect();
        let a = PseudoLabelAssignment::new(
            rows.iter()
                .map(|(d, p)| DocAssignment {
                    doc_id: *d,
                    shortlist: p.clone(),
                    positives: p.clone(),
                    rejected: vec![],
                })
                .collect(),
        );
        let batches = assemble_batches(&a, 128, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].len(), 128);

        let rows = assignment(&[(0, &[1], &[]), (1, &[2], &[]), (2, &[3], &[])]);
        let batches = assemble_batches(&rows, 2, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(batches.len(), 1);
    }

    #[test]
    fn docs_without_positives_are_skipped() {
        let a = assignment(&[(0, &[1], &[]), (1, &[], &[4]), (2, &[2], &[])]);
        let batches = assemble_batches(&a, 8, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(batches.len(), 1);
        assert!(batches[0].iter().all(|&(d, _)| d != 1));
    }

    #[test]
    fn positive_choice_is_uniform() {
        let a = assignment(&[(0, &[7, 8], &[]), (1, &[9], &[])]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 4000;
        let mut sevens = 0;
        for _ in 0..n {
            let b = assemble_batches(&a, 2, &mut rng);
            sevens += b[0].iter().filter(|&&(d, l)| d == 0 && l == 7).count();
        }
        let sd = (n as f64 * 0.25).sqrt();
        assert!((sevens as f64 - n as f64 / 2.0).abs() <= 3.0 * sd, "{sevens} of {n}");
    }

    #[test]
    fn batches_are_deterministic() {
        let rows: Vec<DocAssignment> = (0..50)
            .map(|d| DocAssignment {
                doc_id: d,
                shortlist: vec![d, d + 1],
                positives: vec![d, d + 1],
                rejected: vec![],
            })
            .collect();
        let a = PseudoLabelAssignment::new(rows);
        let x = assemble_batches(&a, 8, &mut ChaCha8Rng::seed_from_u64(5));
        let y = assemble_batches(&a, 8, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(x, y);
        assert_eq!(x.len(), 7);
        assert_eq!(x[6].len(), 2);
    }

    #[test]
    fn in_batch_negatives() {
        let a = assignment(&[(0, &[1], &[]), (1, &[2], &[])]);
        let n = batch_negatives(&[(0, 1), (1, 2)], &a, NegativeMode::InBatch);
        assert_eq!(n, vec![vec![2], vec![1]]);
    }

    #[test]
    fn shared_positive_is_excluded() {
        let a = assignment(&[(0, &[1], &[]), (1, &[1], &[])]);
        let n = batch_negatives(&[(0, 1), (1, 1)], &a, NegativeMode::InBatch);
        assert_eq!(n, vec![Vec::<LabelId>::new(), vec![]]);

        // another document's choice that lies in the anchor's positive set
        let a = assignment(&[(0, &[1, 2], &[]), (1, &[2], &[]), (2, &[3], &[])]);
        let n = batch_negatives(&[(0, 1), (1, 2), (2, 3)], &a, NegativeMode::InBatch);
        assert_eq!(n[0], vec![3]);
        assert_eq!(n[1], vec![1, 3]);
    }

    #[test]
    fn hard_mode_appends_rejected() {
        let a = assignment(&[(0, &[1], &[20, 21]), (1, &[2], &[])]);
        let n = batch_negatives(&[(0, 1), (1, 2)], &a, NegativeMode::InBatchPlusTeacherHard);
        assert_eq!(n[0], vec![2, 20, 21]);
        assert_eq!(n[1], vec![1]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let d = TrainConfig::default();
        assert!(TrainConfig {
            batch_size: 1,
            ..d.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            shortlist_size: 0,
            ..d.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            margin: 0.0,
            ..d.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig { max_cycles: 0, ..d }.validate().is_ok());
    }

    #[test]
    fn default_hyperparameters() {
        let d = TrainConfig::default();
        assert_eq!((d.margin, d.lr, d.batch_size, d.shortlist_size), (0.3, 2e-4, 128, 10));
        assert_eq!((d.patience, d.dev_judge_k, d.epochs_per_cycle), (1, 5, 1));
    }

    #[test]
    fn negative_mode_names() {
        for m in [NegativeMode::InBatch, NegativeMode::InBatchPlusTeacherHard] {
            assert_eq!(m.to_string().parse::<NegativeMode>().unwrap(), m);
        }
    }
}
