use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use proptest::prelude::*;

use scengen_core::analyzer::{AnalyzerVerdict, RiskLevel};
use scengen_core::behaviors::{builtin, IntentLabel, SpecSource, BUILTIN_NAMES};
use scengen_core::llmio::{ChatClient, ChatRequest, ChatResponse, FinishReason, LlmError, Usage};
use scengen_core::membank::{resolve_planner, BankError, MemoryBank, MemoryEvent};

/// Answers every planner request with the same valid rule and counts the calls.
#[derive(Default)]
struct Planner {
    calls: AtomicUsize,
}

impl ChatClient for Planner {
    fn complete(&self, _request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(ChatResponse {
            content: "X: x + v * T\nY: y * 0.5\nHEADING: h\nSPEED: v + a * T\nACCEL_RANGE: -2, 3".into(),
            finish_reason: FinishReason::Stop,
            usage: Usage::default(),
        })
    }

    fn model(&self) -> &str {
        "stub"
    }
}

fn label(s: &str) -> IntentLabel {
    IntentLabel::new(s).unwrap()
}

fn verdict(intent: IntentLabel) -> AnalyzerVerdict {
    AnalyzerVerdict { intent, risk_level: RiskLevel::High, y_acc: 1.0, rationale: String::new(), novel: true }
}

fn spec_named(name: &str) -> scengen_core::behaviors::BehaviorSpec {
    let mut spec = builtin(BUILTIN_NAMES[0]).unwrap();
    spec.label = label(name);
    spec.source = SpecSource::Generated;
    spec.provenance = Some("test".into());
    spec
}

fn tokens(s: &str) -> BTreeSet<String> {
    s.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

fn jaccard_distance(a: &str, b: &str) -> f64 {
    let (ta, tb) = (tokens(a), tokens(b));
    1.0 - ta.intersection(&tb).count() as f64 / ta.union(&tb).count() as f64
}

const WORDS: [&str; 12] = [
    "emergency",
    "braking",
    "close",
    "following",
    "sudden",
    "merge",
    "swerve",
    "drift",
    "reverse",
    "blind",
    "stop",
    "zigzag",
];

fn intent() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS.to_vec()), 1..4).prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn retrieval_respects_the_threshold(queries in prop::collection::vec(intent(), 1..20), threshold in 0.0..1.0f64) {
        let mut bank = MemoryBank::seeded(threshold).unwrap();
        for q in &queries {
            let names = bank.labels();
            match bank.retrieve(&label(q)) {
                Some(e) => prop_assert!(jaccard_distance(q, e.label().display()) <= threshold + 1e-12),
                None => prop_assert!(names.iter().all(|n| jaccard_distance(q, n.display()) > threshold)),
            }
        }
    }

    #[test]
    fn generation_happens_once_per_novel_intent(queries in prop::collection::vec(intent(), 1..25)) {
        let mut bank = MemoryBank::seeded(0.4).unwrap();
        let planner = Planner::default();
        let mut known: Vec<String> = BUILTIN_NAMES.iter().map(|s| s.to_string()).collect();
        let mut expected = 0;
        for q in &queries {
            let novel = known.iter().all(|k| jaccard_distance(q, k) > 0.4);
            if novel {
                expected += 1;
                known.push(q.clone());
            }
            let (spec, event) = resolve_planner(&mut bank, &verdict(label(q)), Some(&planner), "ctx").unwrap();
            prop_assert_eq!(event, if novel { MemoryEvent::Generated } else { MemoryEvent::Hit });
            if novel {
                prop_assert_eq!(spec.source, SpecSource::Generated);
                prop_assert_eq!(spec.accel_range, (-2.0, 3.0));
            }
        }
        prop_assert_eq!(planner.calls.load(Ordering::SeqCst), expected);
        prop_assert_eq!(bank.len(), BUILTIN_NAMES.len() + expected);
    }

    #[test]
    fn store_round_trips(queries in prop::collection::vec(intent(), 0..10), used in 0usize..5) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.jsonl");
        let planner = Planner::default();
        let mut bank = MemoryBank::seeded(0.4).unwrap().with_store(&path);
        for q in &queries {
            resolve_planner(&mut bank, &verdict(label(q)), Some(&planner), "ctx").unwrap();
        }
        for _ in 0..used {
            bank.retrieve(&label("Emergency Braking"));
        }
        bank.mark_verified(&label("Close Car-following"));
        bank.save().unwrap();
        let loaded = MemoryBank::load(&path).unwrap();
        prop_assert_eq!(&loaded, &bank);
        prop_assert_eq!(loaded.to_store_string(), std::fs::read_to_string(&path).unwrap());
    }
}

#[test]
fn ties_go_to_the_oldest_entry() {
    let mut bank = MemoryBank::empty(0.6).unwrap();
    bank.insert_novel(spec_named("alpha beta")).unwrap();
    bank.insert_novel(spec_named("alpha gamma")).unwrap();
    let (i, d) = bank.nearest(&label("alpha")).unwrap();
    assert_eq!((i, d), (0, 0.5));
    assert_eq!(bank.retrieve(&label("alpha")).unwrap().label().display(), "alpha beta");
    assert_eq!(bank.entries[0].use_count, 1);
    assert_eq!(bank.entries.iter().map(|e| e.created_at).collect::<Vec<_>>(), [0, 1]);
}

#[test]
fn duplicates_and_bad_thresholds_are_rejected() {
    let mut bank = MemoryBank::seeded(0.4).unwrap();
    assert!(matches!(bank.insert_novel(spec_named("braking emergency")), Err(BankError::Duplicate { .. })));
    assert!(MemoryBank::empty(1.5).is_err());
    assert!(MemoryBank::empty(-0.1).is_err());
    let missing = resolve_planner(&mut bank, &verdict(label("Zigzag Drift")), None, "ctx");
    assert!(matches!(missing, Err(BankError::NoClient(_))));
    assert_eq!(bank.len(), BUILTIN_NAMES.len());
}

#[test]
fn interrupted_write_leaves_the_store_intact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bank.jsonl");
    let bank = MemoryBank::seeded(0.4).unwrap().with_store(&path);
    bank.save().unwrap();
    let before = std::fs::read(&path).unwrap();
    // what a crash between the temp write and the rename leaves behind
    std::fs::write(dir.path().join(".tmpCRASH"), &before[..before.len() / 3]).unwrap();
    assert_eq!(MemoryBank::load(&path).unwrap(), bank);
    assert_eq!(std::fs::read(&path).unwrap(), before);

    // a save that cannot complete never touches the existing file
    let blocked = MemoryBank::seeded(0.4).unwrap().with_store(dir.path().join("missing/bank.jsonl"));
    assert!(matches!(blocked.save(), Err(BankError::Io { .. })));
    assert_eq!(std::fs::read(&path).unwrap(), before);
}

#[test]
fn corrupt_store_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bank.jsonl");
    let mut text = MemoryBank::seeded(0.4).unwrap().to_store_string();
    let lines: Vec<&str> = text.lines().collect();
    let mut edited: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
    let cut = edited[3].len() - 5;
    edited[3].truncate(cut);
    text = edited.join("\n");
    std::fs::write(&path, text).unwrap();
    match MemoryBank::load(&path) {
        Err(BankError::Corrupt { line, .. }) => assert_eq!(line, 4),
        other => panic!("unexpected {other:?}"),
    }
}
