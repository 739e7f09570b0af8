//! The subcommands. Each returns a serializable summary; `run` prints it.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use lmtx::corpus::{
    load_documents, load_ground_truth, load_label_space, make_splits, write_documents, write_ground_truth,
    write_id_map, write_label_space, DocId, DocumentSet, GroundTruth, LabelSpace, LoadOptions,
};
use lmtx::encoder::{restore, save_checkpoint, EncoderParams, Featurizer, HashedFeaturizer, PrecomputedFeaturizer};
use lmtx::eval::{corpus_pseudo_label_quality, emit_report, evaluate, MetricsRow, ReportFormat};
use lmtx::index::{predict_topm, LabelIndex, RankedList};
use lmtx::synth::{generate, SynthSpec};
use lmtx::teacher::{
    summarize_cache_file, CacheSummary, Judge, JudgmentCache, LexicalTeacher, OracleTeacher, PromptTemplate,
    RemoteConfig, RemoteTeacher, Teacher,
};
use lmtx::trainer::{
    build_label_index, train, CycleReport, CycleView, FeaturizedDocs, FeaturizedLabels, TrainHooks, TrainState,
};
use serde::Serialize;

use crate::config::{ConfigError, FeaturizerKind, RunConfig, TeacherKind};
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Ingest,
    Train,
    Infer,
    Eval,
    CacheStats,
    Synth,
    Sweep,
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "ingest" => Self::Ingest,
            "train" => Self::Train,
            "infer" => Self::Infer,
            "eval" => Self::Eval,
            "cache-stats" => Self::CacheStats,
            "synth" => Self::Synth,
            "sweep" => Self::Sweep,
            other => return Err(format!("unknown command {other:?}")),
        })
    }
}

fn load_docs(cfg: &RunConfig, key: &str, path: &Option<PathBuf>, test: bool) -> Result<DocumentSet, CliError> {
    let path = cfg.require_file(key, path)?;
    let format = if test { cfg.test_format } else { cfg.train_format };
    let opts = LoadOptions {
        allow_empty: cfg.allow_empty_docs,
        field: cfg.text_field,
    };
    Ok(load_documents(&path, format, opts)?)
}

fn load_labels(cfg: &RunConfig) -> Result<LabelSpace, CliError> {
    Ok(load_label_space(&cfg.require_file("labels", &cfg.labels)?)?)
}

fn load_truth(path: &Path, labels: usize, rows: Option<usize>) -> Result<GroundTruth, CliError> {
    Ok(load_ground_truth(path, labels, rows)?)
}

pub fn make_featurizer(cfg: &RunConfig) -> Result<Box<dyn Featurizer>, CliError> {
    Ok(match cfg.featurizer {
        FeaturizerKind::Hashed => {
            if cfg.feature_dim == 0 {
                return Err(CliError::Usage("feature_dim must be positive".into()));
            }
            Box::new(HashedFeaturizer::new(cfg.feature_dim))
        }
        FeaturizerKind::Precomputed => Box::new(PrecomputedFeaturizer::load(
            &cfg.require_file("feature_file", &cfg.feature_file)?,
        )?),
    })
}

pub fn make_template(cfg: &RunConfig) -> Result<PromptTemplate, CliError> {
    match &cfg.template_file {
        Some(_) => {
            let path = cfg.require_file("template_file", &cfg.template_file)?;
            let text = fs::read_to_string(&path).map_err(CliError::io(path.display().to_string()))?;
            Ok(PromptTemplate::new(
                text.trim_end_matches(['\r', '\n']),
                cfg.max_doc_tokens,
            )?)
        }
        None => PromptTemplate::preset(&cfg.template)
            .map(|t| t.with_max_doc_tokens(cfg.max_doc_tokens))
            .ok_or_else(|| CliError::Usage(format!("unknown template preset {:?}", cfg.template))),
    }
}

/// Builds the configured teacher. The oracle needs the training truth.
pub fn make_teacher(cfg: &RunConfig, truth: Option<Arc<GroundTruth>>) -> Result<Box<dyn Teacher>, CliError> {
    Ok(match cfg.teacher {
        TeacherKind::Oracle => {
            let truth = truth.ok_or_else(|| ConfigError::MissingRequired("train_truth".into()))?;
            Box::new(OracleTeacher::new(truth, cfg.flip_noise, cfg.seed)?)
        }
        TeacherKind::Lexical => Box::new(LexicalTeacher::new(cfg.lexical_threshold)?),
        TeacherKind::Remote => {
            let endpoint = cfg
                .endpoint
                .clone()
                .ok_or_else(|| ConfigError::MissingRequired("endpoint".into()))?;
            let model = cfg
                .model
                .clone()
                .ok_or_else(|| ConfigError::MissingRequired("model".into()))?;
            let mut rc = RemoteConfig::new(endpoint, model);
            rc.timeout = std::time::Duration::from_secs(cfg.timeout_secs);
            rc.max_retries = cfg.max_retries;
            rc.concurrency = cfg.concurrency;
            Box::new(RemoteTeacher::new(rc)?)
        }
    })
}

fn initial_params(cfg: &RunConfig, feature_dim: usize) -> Result<EncoderParams, CliError> {
    let params = match &cfg.init_from {
        Some(_) => restore(&cfg.require_file("init_from", &cfg.init_from)?)?.0,
        None => EncoderParams::init(feature_dim, cfg.embed_dim, cfg.seed),
    };
    if params.feature_dim() != feature_dim {
        return Err(CliError::Usage(format!(
            "encoder expects {} features, featurizer produces {feature_dim}",
            params.feature_dim()
        )));
    }
    Ok(params)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub best_cycle: usize,
    pub best_dev_p1: f64,
    pub reports: Vec<CycleReport>,
}

/// Trains with the configured teacher.
pub fn train_cmd(cfg: &RunConfig) -> Result<TrainSummary, CliError> {
    train_with(cfg, None)
}

/// Trains with `teacher` in place of the configured one, when given.
pub fn train_with(cfg: &RunConfig, teacher: Option<&dyn Teacher>) -> Result<TrainSummary, CliError> {
    let docs = load_docs(cfg, "train_docs", &cfg.train_docs, false)?;
    let labels = load_labels(cfg)?;
    let truth = match &cfg.train_truth {
        Some(_) => Some(Arc::new(load_truth(
            &cfg.require_file("train_truth", &cfg.train_truth)?,
            labels.len(),
            Some(docs.len()),
        )?)),
        None => None,
    };
    let splits = make_splits(docs.len(), cfg.split_spec())?;
    let featurizer = make_featurizer(cfg)?;
    let template = make_template(cfg)?;
    let owned_teacher;
    let teacher: &dyn Teacher = match teacher {
        Some(t) => t,
        None => {
            owned_teacher = make_teacher(cfg, truth.clone())?;
            owned_teacher.as_ref()
        }
    };
    let train_cfg = cfg.train_config();

    let run_dir = cfg.run_dir();
    create_dir(&run_dir)?;
    fs::write(run_dir.join("config.txt"), cfg.render()).map_err(CliError::io("writing config.txt"))?;
    let cache = JudgmentCache::open(&cfg.cache_path())?;
    let judge = Judge::new(teacher, &cache, &template);

    let train_docs = FeaturizedDocs::new(
        featurizer.as_ref(),
        splits.train.iter().map(|&d| &docs.docs[d as usize]).collect(),
    )?;
    let dev_docs = FeaturizedDocs::new(
        featurizer.as_ref(),
        splits.dev.iter().map(|&d| &docs.docs[d as usize]).collect(),
    )?;
    let label_feats = FeaturizedLabels::new(featurizer.as_ref(), &labels)?;
    let params = initial_params(cfg, featurizer.dim())?;

    let log_path = run_dir.join("cycles.log");
    let mut log = BufWriter::new(File::create(&log_path).map_err(CliError::io("creating cycles.log"))?);
    let best_path = run_dir.join("best");
    let on_cycle = |report: &mut CycleReport, view: &CycleView<'_>| -> Result<(), lmtx::trainer::TrainError> {
        if let (Some(truth), Some(a)) = (&truth, view.assignment) {
            report.quality =
                corpus_pseudo_label_quality(a.docs.iter().map(|d| (d.doc_id, d.positives.as_slice())), truth);
        }
        let ckpt = run_dir.join(format!("ckpt-{}", report.cycle));
        save_checkpoint(&view.state.params, &view.state.opt, &ckpt)?;
        if view.is_best {
            fs::copy(&ckpt, &best_path)?;
        }
        writeln!(log, "{}", serde_json::to_string(report).expect("reports serialize"))?;
        log.flush()?;
        Ok(())
    };
    let hooks = TrainHooks {
        on_cycle: Some(Box::new(on_cycle)),
        ..Default::default()
    };
    let outcome = train(
        TrainState::new(params, &train_cfg),
        &train_docs,
        &dev_docs,
        &label_feats,
        &train_cfg,
        &judge,
        hooks,
    )?;
    cache.flush()?;
    let best_dev_p1 = outcome.reports[outcome.best_cycle].dev_p1;
    Ok(TrainSummary {
        run_dir,
        best_cycle: outcome.best_cycle,
        best_dev_p1,
        reports: outcome.reports,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct InferSummary {
    pub predictions: PathBuf,
    pub documents: usize,
    pub skipped: Vec<DocId>,
    pub index_reused: bool,
}

/// Loads a saved index when it matches the params and config, else builds
/// and saves a fresh one.
fn label_index(
    cfg: &RunConfig,
    params: &EncoderParams,
    labels: &FeaturizedLabels<'_>,
    size: usize,
) -> Result<(LabelIndex, bool), CliError> {
    let path = cfg.run_dir().join("labels.index");
    if path.exists() {
        match LabelIndex::load(&path) {
            Ok(idx) if idx.check_fresh(params).is_ok() && *idx.config() == cfg.index_config() && idx.len() == size => {
                return Ok((idx, true));
            }
            Ok(_) => log::info!("saved index is stale; rebuilding"),
            Err(e) => log::warn!("ignoring unreadable index {}: {e}", path.display()),
        }
    }
    let idx = build_label_index(params, labels, &cfg.index_config())?;
    create_dir(&cfg.run_dir())?;
    idx.save(&path)?;
    Ok((idx, false))
}

pub fn write_predictions(path: &Path, ranked: &[(DocId, RankedList)]) -> Result<(), CliError> {
    let ctx = || format!("writing {}", path.display());
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut out = BufWriter::new(File::create(path).map_err(CliError::io(ctx()))?);
    for (doc, list) in ranked {
        let cells: Vec<String> = list.entries().iter().map(|(l, s)| format!("{l}:{s}")).collect();
        writeln!(out, "{doc}\t{}", cells.join(",")).map_err(CliError::io(ctx()))?;
    }
    out.flush().map_err(CliError::io(ctx()))
}

pub fn read_predictions(path: &Path) -> Result<HashMap<DocId, RankedList>, CliError> {
    let file = File::open(path).map_err(CliError::io(format!("reading {}", path.display())))?;
    let mut out = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(CliError::io(format!("reading {}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |why: &str| CliError::Data(format!("{}:{}: {why}", path.display(), i + 1));
        let (doc, rest) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected doc_id<TAB>predictions"))?;
        let doc: DocId = doc.trim().parse().map_err(|_| bad("bad document id"))?;
        let mut entries = Vec::new();
        for cell in rest.split(',').filter(|c| !c.trim().is_empty()) {
            let (l, s) = cell.split_once(':').ok_or_else(|| bad("expected label:score"))?;
            let l = l.trim().parse().map_err(|_| bad("bad label id"))?;
            let s: f64 = s.trim().parse().map_err(|_| bad("bad score"))?;
            entries.push((l, s));
        }
        if out.insert(doc, RankedList::new(entries)).is_some() {
            return Err(bad("duplicate document id"));
        }
    }
    Ok(out)
}

pub fn infer_cmd(cfg: &RunConfig) -> Result<InferSummary, CliError> {
    let ckpt = cfg.checkpoint_path();
    if !ckpt.exists() {
        return Err(ConfigError::MissingRequired(format!("checkpoint (no file at {})", ckpt.display())).into());
    }
    let labels = load_labels(cfg)?;
    let docs = load_docs(cfg, "test_docs", &cfg.test_docs, true)?;
    let featurizer = make_featurizer(cfg)?;
    let (params, _) = restore(&ckpt)?;
    if params.feature_dim() != featurizer.dim() {
        return Err(CliError::Usage(format!(
            "checkpoint expects {} features, featurizer produces {}",
            params.feature_dim(),
            featurizer.dim()
        )));
    }
    let label_feats = FeaturizedLabels::new(featurizer.as_ref(), &labels)?;
    let (index, index_reused) = label_index(cfg, &params, &label_feats, labels.len())?;
    let queries: Vec<(DocId, &str)> = docs.docs.iter().map(|d| (d.id, d.text.as_str())).collect();
    let preds = predict_topm(&index, featurizer.as_ref(), &params, &queries, cfg.top_m)?;
    let path = cfg.predictions_path();
    write_predictions(&path, &preds.ranked)?;
    Ok(InferSummary {
        predictions: path,
        documents: preds.ranked.len(),
        skipped: preds.skipped,
        index_reused,
    })
}

/// Scores the predictions file against the test truth.
pub fn evaluate_cmd(cfg: &RunConfig) -> Result<MetricsRow, CliError> {
    let labels = load_labels(cfg)?;
    let truth = load_truth(&cfg.require_file("test_truth", &cfg.test_truth)?, labels.len(), None)?;
    let preds = read_predictions(&cfg.predictions_path())?;
    let docs: Vec<DocId> = (0..truth.len() as DocId).collect();
    Ok(evaluate(&preds, &truth, &docs)?)
}

pub fn cache_stats_cmd(cfg: &RunConfig) -> Result<CacheSummary, CliError> {
    Ok(summarize_cache_file(&cfg.cache_path())?)
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub dir: PathBuf,
    pub train_docs: usize,
    pub test_docs: usize,
    pub labels: usize,
}

pub fn synth_cmd(cfg: &RunConfig) -> Result<SynthSummary, CliError> {
    let corpus = generate(&SynthSpec {
        seed: cfg.seed,
        ..SynthSpec::default()
    })?;
    corpus.write(&cfg.synth_dir)?;
    Ok(SynthSummary {
        dir: cfg.synth_dir.clone(),
        train_docs: corpus.train.len(),
        test_docs: corpus.test.len(),
        labels: corpus.labels.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub dir: PathBuf,
    pub documents: usize,
    pub labels: usize,
    pub truth_rows: Option<usize>,
    pub empty_truth_rows: Option<usize>,
    pub test_documents: Option<usize>,
}

/// Validates the datasets and writes normalized copies.
pub fn ingest_cmd(cfg: &RunConfig) -> Result<IngestSummary, CliError> {
    let docs = load_docs(cfg, "train_docs", &cfg.train_docs, false)?;
    let labels = load_labels(cfg)?;
    let dir = cfg.ingest_dir.clone().unwrap_or_else(|| cfg.run_dir().join("data"));
    create_dir(&dir)?;
    write_documents(&dir.join("train.txt"), &docs.docs)?;
    if let Some(map) = &docs.id_map {
        write_id_map(&dir.join("train_ids.tsv"), map)?;
    }
    write_label_space(&dir.join("labels.txt"), &labels)?;
    let mut summary = IngestSummary {
        dir: dir.clone(),
        documents: docs.len(),
        labels: labels.len(),
        truth_rows: None,
        empty_truth_rows: None,
        test_documents: None,
    };
    if cfg.train_truth.is_some() {
        let truth = load_truth(
            &cfg.require_file("train_truth", &cfg.train_truth)?,
            labels.len(),
            Some(docs.len()),
        )?;
        write_ground_truth(&dir.join("train_truth.txt"), &truth)?;
        summary.truth_rows = Some(truth.len());
        summary.empty_truth_rows = Some(truth.empty_rows().len());
    }
    if cfg.test_docs.is_some() {
        let test = load_docs(cfg, "test_docs", &cfg.test_docs, true)?;
        write_documents(&dir.join("test.txt"), &test.docs)?;
        if let Some(map) = &test.id_map {
            write_id_map(&dir.join("test_ids.tsv"), map)?;
        }
        if cfg.test_truth.is_some() {
            let truth = load_truth(
                &cfg.require_file("test_truth", &cfg.test_truth)?,
                labels.len(),
                Some(test.len()),
            )?;
            write_ground_truth(&dir.join("test_truth.txt"), &truth)?;
        }
        summary.test_documents = Some(test.len());
    }
    Ok(summary)
}

/// Train, infer and evaluate once per shortlist size in `sweep_shortlist`.
/// Writes a csv of the final metrics and returns the rows.
pub fn sweep_cmd(cfg: &RunConfig) -> Result<(Vec<(String, MetricsRow)>, PathBuf), CliError> {
    if cfg.sweep_shortlist.is_empty() {
        return Err(ConfigError::MissingRequired("sweep_shortlist".into()).into());
    }
    let mut rows = Vec::new();
    for &j in &cfg.sweep_shortlist {
        let mut point = cfg.clone();
        point.shortlist_size = j;
        point.run_id = format!("{}-j{j}", cfg.run_id);
        point.checkpoint = None;
        point.predictions = None;
        log::info!("sweep point j={j}");
        train_cmd(&point)?;
        infer_cmd(&point)?;
        rows.push((format!("j={j}"), evaluate_cmd(&point)?));
    }
    let path = cfg
        .report
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join(format!("{}-sweep.csv", cfg.run_id)));
    create_dir(&cfg.out_dir)?;
    emit_report(&rows, ReportFormat::Csv, Some(&path))?;
    Ok((rows, path))
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).expect("summaries serialize"));
}

/// Runs one command and prints its result to standard output.
pub fn run(command: Command, cfg: &RunConfig) -> Result<(), CliError> {
    match command {
        Command::Ingest => print_json(&ingest_cmd(cfg)?),
        Command::Train => print_json(&train_cmd(cfg)?),
        Command::Infer => print_json(&infer_cmd(cfg)?),
        Command::Eval => {
            let row = evaluate_cmd(cfg)?;
            emit_report(&[(cfg.run_id.clone(), row)], cfg.report_format, cfg.report.as_deref())?;
        }
        Command::CacheStats => print_json(&cache_stats_cmd(cfg)?),
        Command::Synth => print_json(&synth_cmd(cfg)?),
        Command::Sweep => {
            let (rows, _) = sweep_cmd(cfg)?;
            emit_report(&rows, ReportFormat::Table, None)?;
        }
    }
    Ok(())
}
