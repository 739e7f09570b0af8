//! End-to-end training criteria on the synthetic corpus.

use std::collections::HashMap;
use std::fs;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use lmtx::corpus::load_ground_truth;
use lmtx::teacher::{JudgeRequest, OracleTeacher, Teacher, TeacherError, Verdict};
use lmtx::trainer::NegativeMode;
use lmtx_cli::commands::sweep_cmd;
use lmtx_cli::RunConfig;

use crate::support::{base_config, corpus_dir, median, report, run, Run};

const NOISE: f64 = 0.3;
const NOISY_SEEDS: u64 = 5;

fn a1() -> &'static (RunConfig, Run) {
    static A1: OnceLock<(RunConfig, Run)> = OnceLock::new();
    A1.get_or_init(|| {
        let cfg = base_config("a1", 0);
        let r = run(&cfg, None);
        (cfg, r)
    })
}

/// In-batch runs then teacher-hard runs, seeds 0..NOISY_SEEDS, at the A2 noise.
fn noisy_runs() -> &'static HashMap<(NegativeMode, u64), Run> {
    static RUNS: OnceLock<HashMap<(NegativeMode, u64), Run>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let mut out = HashMap::new();
        for mode in [NegativeMode::InBatch, NegativeMode::InBatchPlusTeacherHard] {
            for seed in 0..NOISY_SEEDS {
                let mut cfg = base_config(&format!("noisy-{mode}-{seed}"), seed);
                cfg.flip_noise = NOISE;
                cfg.negative_mode = mode;
                out.insert((mode, seed), run(&cfg, None));
            }
        }
        out
    })
}

#[test]
fn a1_noiseless_convergence() {
    let (_, r) = a1();
    let pass = r.final_p1 >= 0.9 && r.final_p1 > r.initial_p1 && r.secs < 300.0;
    let detail = format!(
        "test P@1 {:.4} (cycle 0: {:.4}), best cycle {}, {:.1}s",
        r.final_p1, r.initial_p1, r.summary.best_cycle, r.secs
    );
    assert!(report("A1", pass, &detail), "{detail}");
}

#[test]
fn a2_noise_robustness() {
    let runs = noisy_runs();
    let seeds: Vec<&Run> = (0..3).map(|s| &runs[&(NegativeMode::InBatch, s)]).collect();
    let deltas: Vec<f64> = seeds.iter().map(|r| r.final_p1 - r.initial_p1).collect();
    let drops: Vec<f64> = seeds.iter().map(|r| r.max_quality_drop()).collect();
    let (delta, drop) = (median(deltas.clone()), median(drops.clone()));
    let pass = delta >= 0.1 && drop <= 0.02;
    let detail = format!("median gain {delta:.4} {deltas:.4?}, median max quality drop {drop:.4} {drops:.4?}");
    assert!(report("A2", pass, &detail), "{detail}");
}

#[test]
fn a3_negative_sampling_ablation() {
    let runs = noisy_runs();
    let finals = |mode| (0..NOISY_SEEDS).map(|s| runs[&(mode, s)].final_p1).collect::<Vec<_>>();
    let (inb, hard) = (
        finals(NegativeMode::InBatch),
        finals(NegativeMode::InBatchPlusTeacherHard),
    );
    let (mi, mh) = (median(inb.clone()), median(hard.clone()));
    let detail = format!("median P@1 in-batch {mi:.4} {inb:.4?} vs teacher-hard {mh:.4} {hard:.4?}");
    assert!(report("A3", mi >= mh, &detail), "{detail}");
}

/// Forwards to an inner teacher and counts the verdicts it computes.
struct Counting {
    inner: OracleTeacher,
    calls: AtomicU64,
}

impl Teacher for Counting {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn judge(&self, req: &JudgeRequest<'_>) -> Result<Verdict, TeacherError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.judge(req)
    }
}

#[test]
fn a7_warm_cache_replay() {
    let (cold_cfg, cold) = a1();
    let mut cfg = base_config("a7-replay", 0);
    cfg.cache = Some(cold_cfg.cache_path());
    let data = corpus_dir();
    let truth = load_ground_truth(&data.join("train_truth.txt"), 200, None).unwrap();
    let teacher = Counting {
        inner: OracleTeacher::new(Arc::new(truth), 0.0, 0).unwrap(),
        calls: AtomicU64::new(0),
    };
    let warm = run(&cfg, Some(&teacher));
    let calls = teacher.calls.load(Ordering::Relaxed);
    let reported: u64 = warm.summary.reports.iter().map(|r| r.teacher_calls).sum();
    let cycles = cold.summary.reports.len();
    let identical = warm.summary.reports.len() == cycles
        && (0..cycles).all(|c| {
            let name = format!("ckpt-{c}");
            fs::read(cold_cfg.run_dir().join(&name)).unwrap() == fs::read(cfg.run_dir().join(&name)).unwrap()
        })
        && fs::read(cold_cfg.run_dir().join("best")).unwrap() == fs::read(cfg.run_dir().join("best")).unwrap();
    let pass = calls == 0 && reported == 0 && identical;
    let detail = format!("{calls} teacher computations on replay, {cycles} checkpoints bit-identical: {identical}");
    assert!(report("A7", pass, &detail), "{detail}");
}

#[test]
fn a9_shortlist_sweep() {
    let mut cfg = base_config("a9", 0);
    cfg.sweep_shortlist = vec![5, 10, 20];
    for j in &cfg.sweep_shortlist {
        crate::support::fresh_run_dir(&RunConfig {
            run_id: format!("a9-j{j}"),
            ..cfg.clone()
        });
    }
    let (rows, csv) = sweep_cmd(&cfg).expect("sweep");
    let lines = fs::read_to_string(&csv).unwrap().lines().count();
    let best = rows.iter().map(|(_, m)| m.p1).fold(f64::MIN, f64::max);
    let j10 = rows.iter().find(|(name, _)| name == "j=10").map(|(_, m)| m.p1).unwrap();
    let pass = lines == rows.len() + 1 && best - j10 <= 0.05;
    let points: Vec<String> = rows.iter().map(|(n, m)| format!("{n}: {:.4}", m.p1)).collect();
    let detail = format!("P@1 {}, j=10 is {:.4} below best", points.join(", "), best - j10);
    assert!(report("A9", pass, &detail), "{detail}");
}
