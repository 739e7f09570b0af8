//! Gradient, index and metric criteria checked against independent oracles.

use std::collections::{BTreeSet, HashMap};

use lmtx::corpus::{GroundTruth, LabelId};
use lmtx::encoder::{batch_loss_and_grad, AnchorTerm, EncoderParams, FeatureVector};
use lmtx::eval::{
    corpus_pseudo_label_quality, evaluate, precision_at, pseudo_label_quality, recall_at, render_report, MetricsRow,
    ReportFormat,
};
use lmtx::index::{build_index, exact_topk, IndexConfig, LabelMatrix, RankedList};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::support::report;

const MARGIN: f64 = 0.3;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense loss over a row-major `d × h` projection; also returns the
/// smallest distance of any hinge from its kink.
fn dense_loss(w: &[f64], h: usize, texts: &[Vec<f64>], terms: &[AnchorTerm]) -> (f64, f64) {
    let d = w.len() / h;
    let e: Vec<Vec<f64>> = texts
        .iter()
        .map(|x| {
            let u: Vec<f64> = (0..d).map(|r| dot(&w[r * h..(r + 1) * h], x)).collect();
            let n = dot(&u, &u).sqrt();
            u.into_iter().map(|v| v / n).collect()
        })
        .collect();
    let (mut total, mut gap) = (0.0, f64::INFINITY);
    for t in terms {
        for &n in &t.negatives {
            let hinge = MARGIN - dot(&e[t.anchor], &e[t.positive]) + dot(&e[t.anchor], &e[n]);
            gap = gap.min(hinge.abs());
            total += hinge.max(0.0);
        }
    }
    (total / terms.len() as f64, gap)
}

#[test]
fn a4_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst, mut instances) = (0.0f64, 0);
    while instances < 100 {
        let (h, d, n) = (
            rng.random_range(3..=10),
            rng.random_range(2..=6),
            rng.random_range(3..=7),
        );
        let w: Vec<f64> = (0..h * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let texts: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..h)
                    .map(|_| {
                        if rng.random_bool(0.6) {
                            rng.random_range(-1.0..1.0)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let terms: Vec<AnchorTerm> = (0..rng.random_range(1..=3))
            .map(|_| AnchorTerm {
                anchor: rng.random_range(0..n),
                positive: rng.random_range(0..n),
                negatives: (0..rng.random_range(0..=3)).map(|_| rng.random_range(0..n)).collect(),
            })
            .collect();
        if texts.iter().any(|x| x.iter().all(|&v| v == 0.0)) || dense_loss(&w, h, &texts, &terms).1 < 1e-3 {
            continue;
        }
        instances += 1;
        let params = EncoderParams::from_rows(d, h, &w).unwrap();
        let feats: Vec<FeatureVector> = texts.iter().map(|x| FeatureVector::dense(x).unwrap()).collect();
        let refs: Vec<&FeatureVector> = feats.iter().collect();
        let (_, grad) = batch_loss_and_grad(&params, &refs, &terms, MARGIN).unwrap();
        for i in 0..w.len() {
            let (r, c) = (i / h, i % h);
            let step = 1e-5;
            let mut wp = w.clone();
            wp[i] += step;
            let up = dense_loss(&wp, h, &texts, &terms).0;
            wp[i] -= 2.0 * step;
            let down = dense_loss(&wp, h, &texts, &terms).0;
            let numeric = (up - down) / (2.0 * step);
            let analytic = grad.get(r, c);
            worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6));
        }
    }
    let detail = format!("max relative error {worst:.2e} over {instances} instances");
    assert!(report("A4", worst <= 1e-4, &detail), "{detail}");
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let n = dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn full_sort(rows: &[Vec<f64>], q: &[f64], k: usize) -> Vec<(LabelId, f64)> {
    let mut all: Vec<(LabelId, f64)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (i as LabelId, dot(r, q)))
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

#[test]
fn a5_index_fidelity() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let d = rng.random_range(2..=12);
        let l = rng.random_range(1..=80);
        let k = rng.random_range(0..=l + 3);
        let mut rows: Vec<Vec<f64>> = (0..l).map(|_| unit(&mut rng, d)).collect();
        if l > 3 {
            rows[l - 2] = rows[1].clone();
        }
        let q = unit(&mut rng, d);
        let idx = build_index(LabelMatrix::from_rows(&rows).unwrap(), IndexConfig::exact(), 0).unwrap();
        if idx.query_topk(&q, k).entries() != full_sort(&rows, &q, k).as_slice() {
            mismatches += 1;
        }
    }

    let dim = 128;
    let rows: Vec<Vec<f64>> = (0..10_000).map(|_| unit(&mut rng, dim)).collect();
    let matrix = LabelMatrix::from_rows(&rows).unwrap();
    let hnsw = build_index(matrix.clone(), IndexConfig::default(), 0).unwrap();
    let mut hits = 0;
    for _ in 0..1000 {
        let q = unit(&mut rng, dim);
        let truth: Vec<LabelId> = exact_topk(&matrix, &q, 10).ids().collect();
        hits += hnsw.query_topk(&q, 10).ids().filter(|id| truth.contains(id)).count();
    }
    let recall = hits as f64 / 10_000.0;
    let pass = mismatches == 0 && recall >= 0.95;
    let detail = format!("exact mismatches {mismatches}/1000, hnsw recall@10 {recall:.4} (D={dim})");
    assert!(report("A5", pass, &detail), "{detail}");
}

fn set(ids: &[LabelId]) -> BTreeSet<LabelId> {
    ids.iter().copied().collect()
}

fn list(ids: &[LabelId]) -> RankedList {
    RankedList::new(
        ids.iter()
            .enumerate()
            .map(|(i, &l)| (l, 1.0 - i as f64 * 0.01))
            .collect(),
    )
}

fn fixtures() -> Vec<(&'static str, bool)> {
    let (a, b, c, d, e, x) = (0, 1, 2, 3, 4, 9);
    let mut checks = vec![
        (
            "P@3 truth {a,b} top [a,c,b]",
            precision_at(&list(&[a, c, b]), &set(&[a, b]), 3) == 2.0 / 3.0,
        ),
        ("P@1 relevant top", precision_at(&list(&[a]), &set(&[a]), 1) == 1.0),
        ("P@m empty truth", precision_at(&list(&[a, b]), &set(&[]), 2) == 0.0),
        ("R@m empty truth skipped", recall_at(&list(&[a]), &set(&[]), 1).is_err()),
        (
            "R@3 truth {a,b,c,d} top [a,b,x]",
            recall_at(&list(&[a, b, x]), &set(&[a, b, c, d]), 3).unwrap() == 0.5,
        ),
        (
            "R@3 truth {a,b} top [a,c,b]",
            recall_at(&list(&[a, c, b]), &set(&[a, b]), 3).unwrap() == 1.0,
        ),
        (
            "R@m all labels predicted",
            recall_at(&list(&[c, a, b]), &set(&[a, b, c]), 5).unwrap() == 1.0,
        ),
        (
            "quality 0.5",
            pseudo_label_quality(&[a, b, c], &set(&[b, c, d, e])).unwrap() == 0.5,
        ),
        (
            "quality superset",
            pseudo_label_quality(&[a, b, c, x], &set(&[a, c])).unwrap() == 1.0,
        ),
        (
            "quality disjoint",
            pseudo_label_quality(&[a], &set(&[b])).unwrap() == 0.0,
        ),
    ];

    let truth = GroundTruth::new(vec![set(&[0]), set(&[1])], 2).unwrap();
    let preds: HashMap<_, _> = [(0, list(&[0, 1])), (1, list(&[0, 1]))].into_iter().collect();
    checks.push(("corpus P@1 0.5", evaluate(&preds, &truth, &[0, 1]).unwrap().p1 == 0.5));

    let empty = GroundTruth::new(vec![set(&[]), set(&[])], 2).unwrap();
    let row = evaluate(&preds, &empty, &[0, 1]).unwrap();
    checks.push((
        "all-empty truth",
        row.skipped == 2 && row.recall().iter().all(Option::is_none),
    ));

    let row = evaluate(&preds, &truth, &[0, 1]).unwrap();
    let one = render_report(&[("r".into(), row)], ReportFormat::Csv).unwrap();
    let none = render_report(&[], ReportFormat::Csv).unwrap();
    checks.push(("csv lines", one.lines().count() == 2 && none.lines().count() == 1));
    checks
}

/// Per-document metrics computed directly from the definitions.
fn brute_force(preds: &[Vec<LabelId>], truth: &[BTreeSet<LabelId>]) -> [f64; 7] {
    let mut sums = [0.0; 7];
    let mut with_truth = 0.0;
    for (p, t) in preds.iter().zip(truth) {
        for (i, m) in [1usize, 3, 5].into_iter().enumerate() {
            sums[i] += p.iter().take(m).filter(|l| t.contains(l)).count() as f64 / m as f64;
        }
        if !t.is_empty() {
            with_truth += 1.0;
            for (i, m) in [1usize, 3, 5, 10].into_iter().enumerate() {
                sums[3 + i] += p.iter().take(m).filter(|l| t.contains(l)).count() as f64 / t.len() as f64;
            }
        }
    }
    let n = preds.len() as f64;
    let mut out = sums;
    out[..3].iter_mut().for_each(|v| *v /= n);
    out[3..].iter_mut().for_each(|v| *v /= with_truth);
    out
}

fn row_values(r: &MetricsRow) -> [f64; 7] {
    let [r1, r3, r5, r10] = r.recall();
    [r.p1, r.p3, r.p5, r1.unwrap(), r3.unwrap(), r5.unwrap(), r10.unwrap()]
}

#[test]
fn a6_metric_fixtures() {
    let failed: Vec<&str> = fixtures().into_iter().filter(|(_, ok)| !ok).map(|(n, _)| n).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst, mut worst_quality) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let l = rng.random_range(12..40);
        let ids: Vec<LabelId> = (0..l as LabelId).collect();
        let mut truth = Vec::new();
        let mut preds = Vec::new();
        let mut pseudo = Vec::new();
        for i in 0..100 {
            let k = if i == 0 { 1 } else { rng.random_range(0..6) };
            truth.push(ids.choose_multiple(&mut rng, k).copied().collect::<BTreeSet<_>>());
            let mut p = ids.clone();
            p.shuffle(&mut rng);
            preds.push(p[..10].to_vec());
            let np = rng.random_range(0..6);
            pseudo.push(ids.choose_multiple(&mut rng, np).copied().collect::<Vec<_>>());
        }
        let gt = GroundTruth::new(truth.clone(), l).unwrap();
        let map: HashMap<_, _> = preds.iter().enumerate().map(|(i, p)| (i as u32, list(p))).collect();
        let docs: Vec<u32> = (0..100).collect();
        let got = row_values(&evaluate(&map, &gt, &docs).unwrap());
        let want = brute_force(&preds, &truth);
        worst = got.iter().zip(&want).map(|(g, w)| (g - w).abs()).fold(worst, f64::max);

        let q = corpus_pseudo_label_quality(pseudo.iter().enumerate().map(|(i, p)| (i as u32, p.as_slice())), &gt);
        let nonempty: Vec<f64> = truth
            .iter()
            .zip(&pseudo)
            .filter(|(t, _)| !t.is_empty())
            .map(|(t, p)| p.iter().filter(|l| t.contains(l)).count() as f64 / t.len() as f64)
            .collect();
        let want_q = nonempty.iter().sum::<f64>() / nonempty.len() as f64;
        worst_quality = worst_quality.max((q.unwrap() - want_q).abs());
    }
    let pass = failed.is_empty() && worst <= 1e-12 && worst_quality <= 1e-12;
    let detail = format!(
        "fixtures failed {failed:?}, brute-force max deviation {worst:.1e} (metrics) {worst_quality:.1e} (quality)"
    );
    assert!(report("A6", pass, &detail), "{detail}");
}
