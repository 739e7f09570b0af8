//! Teacher contract (templates, verdict parsing) and early stopping.

use std::sync::{Arc, Mutex};

use lmtx::corpus::{Document, LabelSpace};
use lmtx::encoder::{EncoderParams, HashedFeaturizer};
use lmtx::index::IndexConfig;
use lmtx::teacher::{parse_verdict, Judge, JudgmentCache, LexicalTeacher, ParseStatus, PromptTemplate, Relevance};
use lmtx::trainer::{
    train, CycleReport, CycleView, FeaturizedDocs, FeaturizedLabels, TrainConfig, TrainHooks, TrainState,
};

use crate::support::report;

#[test]
fn a7_templates_and_parser() {
    let expected = [
        ("eurlex", "document = D. Is the tag L relevant to the document? answer yes or no"),
        ("wiki10", "document = D. Is the tag L relevant to the document? answer yes or no"),
        (
            "amazoncat",
            "document = D. The document is amazon product description, Is the tag L relevant to the document? answer yes or no",
        ),
        (
            "wikiseealso",
            "document = D. The document is the wikipedia page. Does another wikipedia page name \"L\" has the relation to the document? answer yes or no",
        ),
        (
            "wikipedia",
            "document = D, the document is the wikipedia page. Is the tag \"L\" relevant to the document? answer yes or no",
        ),
    ];
    let mut failures: Vec<String> = expected
        .iter()
        .filter(|(name, want)| PromptTemplate::preset(name).map(|t| t.render("D", "L")).as_deref() != Some(*want))
        .map(|(name, _)| format!("template {name}"))
        .collect();

    let long: Vec<String> = (0..1000).map(|i| format!("w{i}")).collect();
    let eurlex = PromptTemplate::preset("eurlex").unwrap();
    if eurlex.render(&long.join(" "), "L") != eurlex.render(&long[..430].join(" "), "L") {
        failures.push("truncation to 430 tokens".into());
    }

    let verdicts = [
        ("Yes", Relevance::Relevant, ParseStatus::Clean),
        ("no, it is not relevant.", Relevance::NotRelevant, ParseStatus::Clean),
        ("maybe?", Relevance::NotRelevant, ParseStatus::Unparseable),
    ];
    for (reply, value, status) in verdicts {
        let v = parse_verdict(reply);
        if v.value != value || v.parse_status != status {
            failures.push(format!("verdict {reply:?}"));
        }
    }
    let detail = format!(
        "{} templates, 3 verdict fixtures, failures {failures:?}",
        expected.len()
    );
    assert!(report("A7", failures.is_empty(), &detail), "{detail}");
}

#[test]
fn a8_early_stopping() {
    let docs: Vec<Document> = (0..8)
        .map(|i| Document {
            id: i,
            text: format!("topic{} word{} shared", i % 4, i),
        })
        .collect();
    let labels = LabelSpace::new((0..4).map(|t| format!("topic{t} shared")).collect()).unwrap();
    let featurizer = HashedFeaturizer::new(256);
    let train_docs = FeaturizedDocs::new(&featurizer, docs.iter().collect()).unwrap();
    let dev_docs = FeaturizedDocs::new(&featurizer, docs.iter().take(2).collect()).unwrap();
    let label_feats = FeaturizedLabels::new(&featurizer, &labels).unwrap();
    let cfg = TrainConfig {
        batch_size: 4,
        shortlist_size: 2,
        max_cycles: 8,
        patience: 1,
        index: IndexConfig::exact(),
        ..TrainConfig::default()
    };
    let teacher = LexicalTeacher::new(0.2).unwrap();
    let cache = JudgmentCache::in_memory();
    let template = PromptTemplate::default();
    let judge = Judge::new(&teacher, &cache, &template);

    let scripted = [0.2, 0.3, 0.3, 0.9, 0.9];
    let snapshots: Arc<Mutex<Vec<EncoderParams>>> = Arc::default();
    let seen = Arc::clone(&snapshots);
    let hooks = TrainHooks {
        dev_score: Some(Box::new(move |cycle, _| Ok(scripted[cycle]))),
        on_cycle: Some(Box::new(move |_: &mut CycleReport, view: &CycleView<'_>| {
            seen.lock().unwrap().push(view.state.params.clone());
            Ok(())
        })),
    };
    let initial = TrainState::new(EncoderParams::init(256, 16, 1), &cfg);
    let outcome = train(initial, &train_docs, &dev_docs, &label_feats, &cfg, &judge, hooks).unwrap();
    let snapshots = snapshots.lock().unwrap();
    let evaluations = outcome.reports.len();
    let pass = evaluations == 3
        && outcome.best_cycle == 1
        && outcome.best.params == snapshots[1]
        && outcome.best.params != snapshots[2];
    let scores: Vec<f64> = outcome.reports.iter().map(|r| r.dev_p1).collect();
    let detail = format!(
        "{evaluations} evaluations {scores:?}, returned cycle {}",
        outcome.best_cycle
    );
    assert!(report("A8", pass, &detail), "{detail}");
}
