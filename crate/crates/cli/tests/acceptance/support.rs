use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use lmtx::index::IndexBackend;
use lmtx::teacher::Teacher;
use lmtx::trainer::NegativeMode;
use lmtx_cli::commands::{evaluate_cmd, infer_cmd, synth_cmd, train_with, TrainSummary};
use lmtx_cli::RunConfig;

/// Writes the verdict line past the test harness's output capture.
pub fn report(id: &str, pass: bool, detail: &str) -> bool {
    let line = format!("{id} {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    pass
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn scratch() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

/// The synthetic benchmark, generated once per process.
pub fn corpus_dir() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let cfg = RunConfig {
            synth_dir: scratch().join("synth"),
            seed: 0,
            ..RunConfig::default()
        };
        synth_cmd(&cfg).expect("synthetic corpus");
        cfg.synth_dir
    })
}

/// Noiseless oracle run on the synthetic corpus with the exact index.
pub fn base_config(run_id: &str, seed: u64) -> RunConfig {
    let data = corpus_dir();
    RunConfig {
        run_id: run_id.into(),
        out_dir: scratch().join("runs"),
        seed,
        train_docs: Some(data.join("train.txt")),
        train_truth: Some(data.join("train_truth.txt")),
        test_docs: Some(data.join("test.txt")),
        test_truth: Some(data.join("test_truth.txt")),
        labels: Some(data.join("labels.txt")),
        dev_size: 400,
        feature_dim: 1 << 14,
        embed_dim: 128,
        index: IndexBackend::Exact,
        flip_noise: 0.0,
        shortlist_size: 10,
        batch_size: 128,
        max_cycles: 8,
        patience: 1,
        epochs_per_cycle: 4,
        negative_mode: NegativeMode::InBatch,
        ..RunConfig::default()
    }
}

pub fn fresh_run_dir(cfg: &RunConfig) {
    let dir = cfg.run_dir();
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
}

/// Test P@1 of one saved checkpoint.
pub fn test_p1(cfg: &RunConfig, checkpoint: &str) -> f64 {
    let mut c = cfg.clone();
    c.checkpoint = Some(cfg.run_dir().join(checkpoint));
    c.predictions = Some(cfg.run_dir().join(format!("predictions-{checkpoint}.tsv")));
    infer_cmd(&c).expect("infer");
    evaluate_cmd(&c).expect("eval").p1
}

pub struct Run {
    pub summary: TrainSummary,
    pub initial_p1: f64,
    pub final_p1: f64,
    pub secs: f64,
}

impl Run {
    /// Largest decrease of pseudo-label quality between consecutive cycles.
    pub fn max_quality_drop(&self) -> f64 {
        let q: Vec<f64> = self.summary.reports.iter().filter_map(|r| r.quality).collect();
        q.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
    }
}

/// Trains from a clean run directory and scores the cycle-0 and best checkpoints.
pub fn run(cfg: &RunConfig, teacher: Option<&dyn Teacher>) -> Run {
    fresh_run_dir(cfg);
    let t = std::time::Instant::now();
    let summary = train_with(cfg, teacher).expect("train");
    let secs = t.elapsed().as_secs_f64();
    Run {
        initial_p1: test_p1(cfg, "ckpt-0"),
        final_p1: test_p1(cfg, "best"),
        summary,
        secs,
    }
}
