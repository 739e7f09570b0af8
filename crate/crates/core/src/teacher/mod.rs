//! Relevance judgments for (document, shortlisted label) pairs.
//!
//! A [`Teacher`] answers one pair at a time. [`Judge`] wraps a teacher with a
//! prompt template and the [`JudgmentCache`]: every verdict is looked up by
//! `(doc id, label id, prompt hash)` first and stored after it is computed,
//! so a replay with a warm cache never reaches the teacher.

mod backends;
mod cache;
mod prompt;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DocId, Document, Label, LabelId, LabelSpace};
use crate::encoder::fnv1a64;
use crate::index::RankedList;

pub use backends::{
    parse_chat_reply, token_jaccard, LexicalTeacher, OracleTeacher, RemoteConfig, RemoteTeacher, TOKEN_ENV,
};
pub use cache::{summarize_cache_file, CacheKey, CacheStats, CacheSummary, JudgmentCache};
pub use prompt::{truncate_tokens, PromptTemplate, DEFAULT_MAX_DOC_TOKENS};

#[derive(Debug, Error)]
pub enum TeacherError {
    #[error("teacher endpoint unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("malformed teacher response: {0}")]
    RemoteMalformedResponse(String),
    #[error("invalid prompt template: {0}")]
    InvalidTemplate(String),
    #[error("invalid teacher configuration: {0}")]
    InvalidConfig(String),
    #[error("corrupt judgment cache at line {line}: {reason}")]
    CorruptCache { line: usize, reason: String },
    #[error("unknown document {0}")]
    UnknownDocument(DocId),
    #[error("cache i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relevance {
    Relevant,
    NotRelevant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Clean,
    Unparseable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub value: Relevance,
    pub parse_status: ParseStatus,
    pub raw: String,
}

impl Verdict {
    /// A verdict from a non-text backend, recorded as a plain yes/no reply.
    pub fn clean(value: Relevance) -> Self {
        let raw = match value {
            Relevance::Relevant => "yes",
            Relevance::NotRelevant => "no",
        };
        Self {
            value,
            parse_status: ParseStatus::Clean,
            raw: raw.to_string(),
        }
    }

    pub fn is_relevant(&self) -> bool {
        self.value == Relevance::Relevant
    }
}

/// Reads a yes/no reply. Leading whitespace and punctuation are ignored and
/// case is folded; the first word decides. Anything that does not start
/// with "yes" or "no" counts as not relevant and is marked unparseable.
pub fn parse_verdict(reply: &str) -> Verdict {
    let cleaned = reply
        .trim_start_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
        .to_lowercase();
    let first: String = cleaned.chars().take_while(|c| c.is_alphanumeric()).collect();
    let (value, parse_status) = match first.as_str() {
        "yes" => (Relevance::Relevant, ParseStatus::Clean),
        "no" => (Relevance::NotRelevant, ParseStatus::Clean),
        _ => (Relevance::NotRelevant, ParseStatus::Unparseable),
    };
    Verdict {
        value,
        parse_status,
        raw: reply.to_string(),
    }
}

/// One pair put to a teacher.
#[derive(Debug, Clone, Copy)]
pub struct JudgeRequest<'a> {
    pub doc_id: DocId,
    pub label_id: LabelId,
    pub doc_text: &'a str,
    pub label_text: &'a str,
    /// The rendered prompt (text backends send this).
    pub prompt: &'a str,
}

pub trait Teacher: Send + Sync {
    /// Describes the backend configuration; folded into the cache key so
    /// different teachers never share verdicts.
    fn identity(&self) -> String;

    fn judge(&self, req: &JudgeRequest<'_>) -> Result<Verdict, TeacherError>;

    /// Maximum concurrent judgments; 0 means no limit beyond the thread pool.
    fn concurrency(&self) -> usize {
        0
    }

    fn is_remote(&self) -> bool {
        false
    }
}

/// A teacher bound to a template and a cache.
pub struct Judge<'a> {
    teacher: &'a dyn Teacher,
    cache: &'a JudgmentCache,
    template: &'a PromptTemplate,
    identity: String,
    pool: Option<rayon::ThreadPool>,
}

impl<'a> Judge<'a> {
    pub fn new(teacher: &'a dyn Teacher, cache: &'a JudgmentCache, template: &'a PromptTemplate) -> Self {
        let pool = match teacher.concurrency() {
            0 => None,
            n => rayon::ThreadPoolBuilder::new().num_threads(n).build().ok(),
        };
        Self {
            teacher,
            cache,
            template,
            identity: teacher.identity(),
            pool,
        }
    }

    pub fn cache(&self) -> &JudgmentCache {
        self.cache
    }

    pub fn template(&self) -> &PromptTemplate {
        self.template
    }

    /// Hash of the teacher identity and the rendered prompt.
    pub fn prompt_hash(&self, prompt: &str) -> u64 {
        let mut bytes = Vec::with_capacity(self.identity.len() + 1 + prompt.len());
        bytes.extend_from_slice(self.identity.as_bytes());
        bytes.push(0x1f);
        bytes.extend_from_slice(prompt.as_bytes());
        fnv1a64(&bytes)
    }

    pub fn key(&self, doc: &Document, label: &Label) -> (CacheKey, String) {
        let prompt = self.template.render(&doc.text, &label.text);
        let key = CacheKey {
            doc_id: doc.id,
            label_id: label.id,
            prompt_hash: self.prompt_hash(&prompt),
        };
        (key, prompt)
    }

    pub fn judge(&self, doc: &Document, label: &Label) -> Result<Verdict, TeacherError> {
        let (key, prompt) = self.key(doc, label);
        if let Some(v) = self.cache.lookup(&key) {
            return Ok(v);
        }
        let req = JudgeRequest {
            doc_id: doc.id,
            label_id: label.id,
            doc_text: &doc.text,
            label_text: &label.text,
            prompt: &prompt,
        };
        let v = self.teacher.judge(&req)?;
        if v.parse_status == ParseStatus::Unparseable {
            log::warn!(
                "unparseable teacher reply for doc {} label {}: {:?}",
                doc.id,
                label.id,
                v.raw
            );
        }
        self.cache.insert(key, v)
    }

    /// Judges many pairs, concurrently up to the teacher's limit. Results
    /// are in input order; the first error aborts the batch.
    pub fn judge_pairs(&self, pairs: &[(&Document, &Label)]) -> Result<Vec<Verdict>, TeacherError> {
        let work = || {
            pairs
                .par_iter()
                .map(|(d, l)| self.judge(d, l))
                .collect::<Result<Vec<_>, _>>()
        };
        let out = match &self.pool {
            Some(pool) => pool.install(work),
            None => work(),
        };
        self.cache.flush()?;
        out
    }
}

/// Teacher-approved and rejected shortlist labels, each in shortlist order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Filtered {
    pub positives: Vec<LabelId>,
    pub rejected: Vec<LabelId>,
}

pub fn filter_shortlist(
    judge: &Judge<'_>,
    doc: &Document,
    shortlist: &RankedList,
    labels: &LabelSpace,
) -> Result<Filtered, TeacherError> {
    Ok(filter_shortlists(judge, &[(doc, shortlist)], labels)?
        .pop()
        .unwrap_or_default())
}

/// [`filter_shortlist`] over many documents, judging all distinct pairs in
/// one concurrent batch.
pub fn filter_shortlists(
    judge: &Judge<'_>,
    items: &[(&Document, &RankedList)],
    labels: &LabelSpace,
) -> Result<Vec<Filtered>, TeacherError> {
    let mut slot: HashMap<(DocId, LabelId), usize> = HashMap::new();
    let mut pairs = Vec::new();
    for (doc, list) in items {
        for id in list.ids() {
            slot.entry((doc.id, id)).or_insert_with(|| {
                pairs.push((*doc, labels.get(id).expect("shortlist ids come from the label space")));
                pairs.len() - 1
            });
        }
    }
    let verdicts = judge.judge_pairs(&pairs)?;
    Ok(items
        .iter()
        .map(|(doc, list)| {
            let mut f = Filtered::default();
            for id in list.ids() {
                if verdicts[slot[&(doc.id, id)]].is_relevant() {
                    f.positives.push(id);
                } else {
                    f.rejected.push(id);
                }
            }
            f
        })
        .collect())
}
