//! Flat `key = value` run configuration.
//!
//! One key per line, `#` starts a comment, later assignments win. Values
//! from `--set key=value` are applied after the file. An empty value clears
//! an optional key. [`RunConfig::render`] prints every key, and its output
//! parses back to the same configuration.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lmtx::corpus::{DocumentFormat, SplitSpec, TextField};
use lmtx::encoder::{DEFAULT_EMBED_DIM, DEFAULT_FEATURE_DIM};
use lmtx::eval::ReportFormat;
use lmtx::index::{HnswParams, IndexBackend, IndexConfig};
use lmtx::teacher::DEFAULT_MAX_DOC_TOKENS;
use lmtx::trainer::{NegativeMode, TrainConfig};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("value {value:?} for {key} is not a valid {expected}")]
    TypeMismatch {
        key: String,
        expected: &'static str,
        value: String,
    },
    #[error("missing required setting {0}")]
    MissingRequired(String),
    #[error("line {line}: expected key = value")]
    Syntax { line: usize },
    #[error("{key} points to {path}, which does not exist")]
    MissingFile { key: String, path: String },
    #[error("cannot read config {path}: {reason}")]
    Unreadable { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeaturizerKind {
    Hashed,
    Precomputed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeacherKind {
    Oracle,
    Lexical,
    Remote,
}

macro_rules! named_enum {
    ($ty:ty, $($variant:path => $name:literal),+) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(format!("unknown value {other:?}")),
                }
            }
        }
        impl Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(match self { $($variant => $name,)+ })
            }
        }
    };
}

named_enum!(FeaturizerKind, FeaturizerKind::Hashed => "hashed", FeaturizerKind::Precomputed => "precomputed");
named_enum!(TeacherKind, TeacherKind::Oracle => "oracle", TeacherKind::Lexical => "lexical", TeacherKind::Remote => "remote");

fn format_name(f: DocumentFormat) -> &'static str {
    match f {
        DocumentFormat::RawText => "raw",
        DocumentFormat::Tabular => "tabular",
        DocumentFormat::Records => "records",
    }
}

fn field_name(f: TextField) -> &'static str {
    match f {
        TextField::TitleAndDescription => "all",
        TextField::Title => "title",
        TextField::Description => "description",
    }
}

fn report_name(f: ReportFormat) -> &'static str {
    match f {
        ReportFormat::Table => "table",
        ReportFormat::Csv => "csv",
        ReportFormat::Records => "records",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub run_id: String,
    pub out_dir: PathBuf,
    pub threads: usize,
    pub seed: u64,
    /// Seeds the dev/train split independently of the training seed.
    pub split_seed: u64,

    pub train_docs: Option<PathBuf>,
    pub train_format: DocumentFormat,
    pub text_field: TextField,
    pub allow_empty_docs: bool,
    pub labels: Option<PathBuf>,
    pub train_truth: Option<PathBuf>,
    pub test_docs: Option<PathBuf>,
    pub test_format: DocumentFormat,
    pub test_truth: Option<PathBuf>,
    pub dev_size: usize,
    pub train_subsample: Option<usize>,
    pub ingest_dir: Option<PathBuf>,

    pub featurizer: FeaturizerKind,
    pub feature_file: Option<PathBuf>,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub init_from: Option<PathBuf>,

    pub index: IndexBackend,
    pub hnsw_m: usize,
    pub hnsw_ef_construction: usize,
    pub hnsw_ef_search: usize,

    pub teacher: TeacherKind,
    pub flip_noise: f64,
    pub lexical_threshold: f64,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub concurrency: usize,
    pub template: String,
    pub template_file: Option<PathBuf>,
    pub max_doc_tokens: usize,
    pub cache: Option<PathBuf>,

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

    pub checkpoint: Option<PathBuf>,
    pub top_m: usize,
    pub predictions: Option<PathBuf>,
    pub report_format: ReportFormat,
    pub report: Option<PathBuf>,
    pub sweep_shortlist: Vec<usize>,
    pub synth_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let split = SplitSpec::default();
        let hnsw = HnswParams::default();
        Self {
            run_id: "run".into(),
            out_dir: "runs".into(),
            threads: 0,
            seed: 0,
            split_seed: 0,
            train_docs: None,
            train_format: DocumentFormat::RawText,
            text_field: TextField::default(),
            allow_empty_docs: false,
            labels: None,
            train_truth: None,
            test_docs: None,
            test_format: DocumentFormat::RawText,
            test_truth: None,
            dev_size: split.dev_size,
            train_subsample: None,
            ingest_dir: None,
            featurizer: FeaturizerKind::Hashed,
            feature_file: None,
            feature_dim: DEFAULT_FEATURE_DIM,
            embed_dim: DEFAULT_EMBED_DIM,
            init_from: None,
            index: IndexBackend::Hnsw,
            hnsw_m: hnsw.m,
            hnsw_ef_construction: hnsw.ef_construction,
            hnsw_ef_search: hnsw.ef_search,
            teacher: TeacherKind::Oracle,
            flip_noise: 0.0,
            lexical_threshold: 0.5,
            endpoint: None,
            model: None,
            timeout_secs: 60,
            max_retries: 3,
            concurrency: 8,
            template: "eurlex".into(),
            template_file: None,
            max_doc_tokens: DEFAULT_MAX_DOC_TOKENS,
            cache: None,
            margin: train.margin,
            lr: train.lr,
            weight_decay: train.weight_decay,
            batch_size: train.batch_size,
            shortlist_size: train.shortlist_size,
            max_cycles: train.max_cycles,
            epochs_per_cycle: train.epochs_per_cycle,
            negative_mode: train.negative_mode,
            patience: train.patience,
            dev_judge_k: train.dev_judge_k,
            checkpoint: None,
            top_m: 10,
            predictions: None,
            report_format: ReportFormat::Table,
            report: None,
            sweep_shortlist: vec![5, 10, 20],
            synth_dir: "data/synth".into(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::TypeMismatch {
        key: key.to_string(),
        expected,
        value: value.to_string(),
    })
}

fn opt<T: FromStr>(key: &str, value: &str, expected: &'static str) -> Result<Option<T>, ConfigError> {
    if value.is_empty() {
        Ok(None)
    } else {
        parse(key, value, expected).map(Some)
    }
}

fn show<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

fn show_path(v: &Option<PathBuf>) -> String {
    v.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Applies one assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "run_id" => {
                if v.is_empty() || v.contains(['/', '\\']) {
                    return Err(ConfigError::TypeMismatch {
                        key: key.into(),
                        expected: "run name",
                        value: v.into(),
                    });
                }
                self.run_id = v.into();
            }
            "out_dir" => self.out_dir = parse(key, v, "path")?,
            "threads" => self.threads = parse(key, v, "count")?,
            "seed" => self.seed = parse(key, v, "64-bit integer")?,
            "split_seed" => self.split_seed = parse(key, v, "64-bit integer")?,
            "train_docs" => self.train_docs = opt(key, v, "path")?,
            "train_format" => self.train_format = parse(key, v, "document format")?,
            "text_field" => self.text_field = parse(key, v, "text field")?,
            "allow_empty_docs" => self.allow_empty_docs = parse(key, v, "boolean")?,
            "labels" => self.labels = opt(key, v, "path")?,
            "train_truth" => self.train_truth = opt(key, v, "path")?,
            "test_docs" => self.test_docs = opt(key, v, "path")?,
            "test_format" => self.test_format = parse(key, v, "document format")?,
            "test_truth" => self.test_truth = opt(key, v, "path")?,
            "dev_size" => self.dev_size = parse(key, v, "count")?,
            "train_subsample" => self.train_subsample = opt(key, v, "count")?,
            "ingest_dir" => self.ingest_dir = opt(key, v, "path")?,
            "featurizer" => self.featurizer = parse(key, v, "featurizer (hashed, precomputed)")?,
            "feature_file" => self.feature_file = opt(key, v, "path")?,
            "feature_dim" => self.feature_dim = parse(key, v, "count")?,
            "embed_dim" => self.embed_dim = parse(key, v, "count")?,
            "init_from" => self.init_from = opt(key, v, "path")?,
            "index" => self.index = parse(key, v, "index backend (hnsw, exact)")?,
            "hnsw_m" => self.hnsw_m = parse(key, v, "count")?,
            "hnsw_ef_construction" => self.hnsw_ef_construction = parse(key, v, "count")?,
            "hnsw_ef_search" => self.hnsw_ef_search = parse(key, v, "count")?,
            "teacher" => self.teacher = parse(key, v, "teacher (oracle, lexical, remote)")?,
            "flip_noise" => self.flip_noise = parse(key, v, "number")?,
            "lexical_threshold" => self.lexical_threshold = parse(key, v, "number")?,
            "endpoint" => self.endpoint = opt(key, v, "url")?,
            "model" => self.model = opt(key, v, "model name")?,
            "timeout_secs" => self.timeout_secs = parse(key, v, "count")?,
            "max_retries" => self.max_retries = parse(key, v, "count")?,
            "concurrency" => self.concurrency = parse(key, v, "count")?,
            "template" => self.template = v.into(),
            "template_file" => self.template_file = opt(key, v, "path")?,
            "max_doc_tokens" => self.max_doc_tokens = parse(key, v, "count")?,
            "cache" => self.cache = opt(key, v, "path")?,
            "margin" => self.margin = parse(key, v, "number")?,
            "lr" => self.lr = parse(key, v, "number")?,
            "weight_decay" => self.weight_decay = parse(key, v, "number")?,
            "batch_size" => self.batch_size = parse(key, v, "count")?,
            "shortlist_size" => self.shortlist_size = parse(key, v, "count")?,
            "max_cycles" => self.max_cycles = parse(key, v, "count")?,
            "epochs_per_cycle" => self.epochs_per_cycle = parse(key, v, "count")?,
            "negative_mode" => self.negative_mode = parse(key, v, "negative mode (in-batch, in-batch+teacher-hard)")?,
            "patience" => self.patience = parse(key, v, "count")?,
            "dev_judge_k" => self.dev_judge_k = parse(key, v, "count")?,
            "checkpoint" => self.checkpoint = opt(key, v, "path")?,
            "top_m" => self.top_m = parse(key, v, "count")?,
            "predictions" => self.predictions = opt(key, v, "path")?,
            "report_format" => self.report_format = parse(key, v, "report format (table, csv, records)")?,
            "report" => self.report = opt(key, v, "path")?,
            "sweep_shortlist" => {
                self.sweep_shortlist = v
                    .split(',')
                    .map(|s| parse(key, s.trim(), "comma-separated counts"))
                    .collect::<Result<_, _>>()?
            }
            "synth_dir" => self.synth_dir = parse(key, v, "path")?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Every key with its current value, in a stable order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("run_id", self.run_id.clone()),
            ("out_dir", self.out_dir.display().to_string()),
            ("threads", self.threads.to_string()),
            ("seed", self.seed.to_string()),
            ("split_seed", self.split_seed.to_string()),
            ("train_docs", show_path(&self.train_docs)),
            ("train_format", format_name(self.train_format).into()),
            ("text_field", field_name(self.text_field).into()),
            ("allow_empty_docs", self.allow_empty_docs.to_string()),
            ("labels", show_path(&self.labels)),
            ("train_truth", show_path(&self.train_truth)),
            ("test_docs", show_path(&self.test_docs)),
            ("test_format", format_name(self.test_format).into()),
            ("test_truth", show_path(&self.test_truth)),
            ("dev_size", self.dev_size.to_string()),
            ("train_subsample", show(&self.train_subsample)),
            ("ingest_dir", show_path(&self.ingest_dir)),
            ("featurizer", self.featurizer.to_string()),
            ("feature_file", show_path(&self.feature_file)),
            ("feature_dim", self.feature_dim.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("init_from", show_path(&self.init_from)),
            ("index", self.index.to_string()),
            ("hnsw_m", self.hnsw_m.to_string()),
            ("hnsw_ef_construction", self.hnsw_ef_construction.to_string()),
            ("hnsw_ef_search", self.hnsw_ef_search.to_string()),
            ("teacher", self.teacher.to_string()),
            ("flip_noise", self.flip_noise.to_string()),
            ("lexical_threshold", self.lexical_threshold.to_string()),
            ("endpoint", show(&self.endpoint)),
            ("model", show(&self.model)),
            ("timeout_secs", self.timeout_secs.to_string()),
            ("max_retries", self.max_retries.to_string()),
            ("concurrency", self.concurrency.to_string()),
            ("template", self.template.clone()),
            ("template_file", show_path(&self.template_file)),
            ("max_doc_tokens", self.max_doc_tokens.to_string()),
            ("cache", show_path(&self.cache)),
            ("margin", self.margin.to_string()),
            ("lr", self.lr.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("shortlist_size", self.shortlist_size.to_string()),
            ("max_cycles", self.max_cycles.to_string()),
            ("epochs_per_cycle", self.epochs_per_cycle.to_string()),
            ("negative_mode", self.negative_mode.to_string()),
            ("patience", self.patience.to_string()),
            ("dev_judge_k", self.dev_judge_k.to_string()),
            ("checkpoint", show_path(&self.checkpoint)),
            ("top_m", self.top_m.to_string()),
            ("predictions", show_path(&self.predictions)),
            ("report_format", report_name(self.report_format).into()),
            ("report", show_path(&self.report)),
            (
                "sweep_shortlist",
                self.sweep_shortlist
                    .iter()
                    .map(|j| j.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("synth_dir", self.synth_dir.display().to_string()),
        ]
    }

    pub fn render(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Applies the assignments in a config file body.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Defaults, then the file (if any), then `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Unreadable {
                path: p.display().to_string(),
                reason: e.to_string(),
            })?;
            cfg.apply_text(&text)?;
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::TypeMismatch {
                key: o.clone(),
                expected: "key=value override",
                value: o.clone(),
            })?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.run_id)
    }

    pub fn cache_path(&self) -> PathBuf {
        self.cache
            .clone()
            .unwrap_or_else(|| self.run_dir().join("judgments.jsonl"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.run_dir().join("best"))
    }

    pub fn predictions_path(&self) -> PathBuf {
        self.predictions
            .clone()
            .unwrap_or_else(|| self.run_dir().join("predictions.tsv"))
    }

    pub fn index_config(&self) -> IndexConfig {
        IndexConfig {
            backend: self.index,
            hnsw: HnswParams {
                m: self.hnsw_m,
                ef_construction: self.hnsw_ef_construction,
                ef_search: self.hnsw_ef_search,
            },
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            margin: self.margin,
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            shortlist_size: self.shortlist_size,
            max_cycles: self.max_cycles,
            epochs_per_cycle: self.epochs_per_cycle,
            negative_mode: self.negative_mode,
            patience: self.patience,
            dev_judge_k: self.dev_judge_k,
            seed: self.seed,
            index: self.index_config(),
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            dev_size: self.dev_size,
            train_subsample: self.train_subsample,
            seed: self.split_seed,
        }
    }

    /// The path stored under `key`, which must be set and exist.
    pub fn require_file(&self, key: &str, value: &Option<PathBuf>) -> Result<PathBuf, ConfigError> {
        let p = value
            .clone()
            .ok_or_else(|| ConfigError::MissingRequired(key.to_string()))?;
        if !p.exists() {
            return Err(ConfigError::MissingFile {
                key: key.to_string(),
                path: p.display().to_string(),
            });
        }
        Ok(p)
    }
}
