//! Seeded synthetic benchmark with known topic structure.
//!
//! Every topic owns a small vocabulary of invented words. Each of its labels
//! is two of those words; each of its documents mixes topic words, a few
//! words borrowed from other topics, and filler shared by all topics. All of
//! a topic's labels are relevant to all of its documents.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{write_ground_truth, write_label_space, CorpusError, Document, GroundTruth, LabelId, LabelSpace};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub topics: usize,
    pub docs_per_topic: usize,
    /// Of `docs_per_topic`, how many go to the test split.
    pub test_per_topic: usize,
    pub labels_per_topic: usize,
    pub words_per_topic: usize,
    pub filler_words: usize,
    pub topic_tokens: usize,
    pub confuser_tokens: usize,
    pub filler_tokens: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            topics: 50,
            docs_per_topic: 40,
            test_per_topic: 10,
            labels_per_topic: 4,
            words_per_topic: 12,
            filler_words: 300,
            topic_tokens: 5,
            confuser_tokens: 3,
            filler_tokens: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub labels: LabelSpace,
    pub train: Vec<Document>,
    pub train_truth: GroundTruth,
    pub test: Vec<Document>,
    pub test_truth: GroundTruth,
    /// Topic of each label.
    pub label_topic: Vec<usize>,
}

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr", "kl",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

fn invent_words(n: usize, rng: &mut impl Rng, taken: &mut HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..=3);
        let word: String = (0..syllables)
            .map(|_| {
                format!(
                    "{}{}",
                    ONSETS[rng.random_range(0..ONSETS.len())],
                    VOWELS[rng.random_range(0..VOWELS.len())]
                )
            })
            .collect();
        if taken.insert(word.clone()) {
            out.push(word);
        }
    }
    out
}

pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus, CorpusError> {
    let infeasible = |m: &str| Err(CorpusError::SpecInfeasible(m.to_string()));
    if spec.topics < 2 {
        return infeasible("need at least two topics");
    }
    if spec.labels_per_topic == 0 || 2 * spec.labels_per_topic > spec.words_per_topic {
        return infeasible("each label needs two distinct topic words");
    }
    if spec.test_per_topic >= spec.docs_per_topic {
        return infeasible("test_per_topic must leave training documents");
    }
    if spec.topic_tokens == 0 {
        return infeasible("documents need at least one topic word");
    }
    if spec.filler_tokens > 0 && spec.filler_words == 0 {
        return infeasible("filler tokens need a filler vocabulary");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut taken = HashSet::new();
    let vocab: Vec<Vec<String>> = (0..spec.topics)
        .map(|_| invent_words(spec.words_per_topic, &mut rng, &mut taken))
        .collect();
    let filler = invent_words(spec.filler_words, &mut rng, &mut taken);

    let mut label_texts = Vec::new();
    let mut label_topic = Vec::new();
    for (t, words) in vocab.iter().enumerate() {
        for k in 0..spec.labels_per_topic {
            label_texts.push(format!("{} {}", words[2 * k], words[2 * k + 1]));
            label_topic.push(t);
        }
    }
    let labels = LabelSpace::new(label_texts)?;

    let mut docs: Vec<(bool, usize, String)> = Vec::new();
    for (t, words) in vocab.iter().enumerate() {
        for i in 0..spec.docs_per_topic {
            let mut tokens: Vec<&str> = Vec::new();
            for _ in 0..spec.topic_tokens {
                tokens.push(&words[rng.random_range(0..words.len())]);
            }
            for _ in 0..spec.confuser_tokens {
                let mut other = rng.random_range(0..spec.topics - 1);
                if other >= t {
                    other += 1;
                }
                tokens.push(&vocab[other][rng.random_range(0..spec.words_per_topic)]);
            }
            for _ in 0..spec.filler_tokens {
                tokens.push(&filler[rng.random_range(0..filler.len())]);
            }
            tokens.shuffle(&mut rng);
            docs.push((i < spec.test_per_topic, t, tokens.join(" ")));
        }
    }
    docs.shuffle(&mut rng);

    let topic_labels = |t: usize| -> BTreeSet<LabelId> {
        (0..spec.labels_per_topic)
            .map(|k| (t * spec.labels_per_topic + k) as LabelId)
            .collect()
    };
    let split = |test: bool| -> Result<(Vec<Document>, GroundTruth), CorpusError> {
        let mut out = Vec::new();
        let mut truth = Vec::new();
        for (_, t, text) in docs.iter().filter(|d| d.0 == test) {
            out.push(Document {
                id: out.len() as u32,
                text: text.clone(),
            });
            truth.push(topic_labels(*t));
        }
        Ok((out, GroundTruth::new(truth, labels.len())?))
    };
    let (train, train_truth) = split(false)?;
    let (test, test_truth) = split(true)?;
    Ok(SynthCorpus {
        labels,
        train,
        train_truth,
        test,
        test_truth,
        label_topic,
    })
}

pub const TRAIN_DOCS: &str = "train.txt";
pub const TRAIN_TRUTH: &str = "train_truth.txt";
pub const TEST_DOCS: &str = "test.txt";
pub const TEST_TRUTH: &str = "test_truth.txt";
pub const LABELS: &str = "labels.txt";

impl SynthCorpus {
    /// Writes the corpus as raw-text documents, a label list, and
    /// comma-separated truth rows.
    pub fn write(&self, dir: &Path) -> Result<(), CorpusError> {
        std::fs::create_dir_all(dir).map_err(|source| CorpusError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        crate::corpus::write_documents(&dir.join(TRAIN_DOCS), &self.train)?;
        write_ground_truth(&dir.join(TRAIN_TRUTH), &self.train_truth)?;
        crate::corpus::write_documents(&dir.join(TEST_DOCS), &self.test)?;
        write_ground_truth(&dir.join(TEST_TRUTH), &self.test_truth)?;
        write_label_space(&dir.join(LABELS), &self.labels)
    }
}
