use halluscope::corpus::{
    load_completions, load_dataset, write_jsonl, Completion, Dataset, ResourceLimits, Task,
    TestCase, MIN_MEMORY_BYTES, MIN_WALL_TIME_MS,
};
use proptest::prelude::*;

fn test_case() -> impl Strategy<Value = TestCase> {
    // Whitespace-only expected outputs are rejected at ingestion.
    let expected = prop_oneof![Just(String::new()), "[a-z0-9 \\n]{0,12}[a-z0-9]"];
    ("[ -~\\n\u{e9}\u{4e2d}]{0,20}", expected).prop_map(|(i, o)| TestCase::new(i, o))
}

fn task(id: usize) -> impl Strategy<Value = Task> {
    (
        "[ -~]{0,40}",
        prop::collection::vec(test_case(), 1..5),
        MIN_WALL_TIME_MS..20_000,
        MIN_MEMORY_BYTES..(1u64 << 32),
    )
        .prop_map(move |(question, test_cases, wall, mem)| Task {
            task_id: format!("task-{id}"),
            question,
            test_cases,
            limits: ResourceLimits {
                wall_time_ms: wall,
                memory_bytes: mem,
            },
        })
}

fn dataset() -> impl Strategy<Value = Vec<Task>> {
    (0usize..8).prop_flat_map(|n| (0..n).map(task).collect::<Vec<_>>())
}

proptest! {
    #[test]
    fn dataset_round_trip(tasks in dataset()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bench.jsonl");
        let original = Dataset::new("bench", tasks).unwrap();
        original.write_jsonl(&path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        prop_assert_eq!(loaded, original);
    }

    #[test]
    fn completions_round_trip(
        rows in prop::collection::vec(("[a-c]", "[xy]", "[ -~\\n]{0,60}", any::<bool>()), 0..12)
    ) {
        let mut seen = std::collections::BTreeSet::new();
        let completions: Vec<Completion> = rows
            .into_iter()
            .filter(|(t, m, _, _)| seen.insert((t.clone(), m.clone())))
            .map(|(task_id, model_id, code, truncated)| Completion {
                task_id,
                model_id,
                sample_index: None,
                raw_response: format!("```python\n{code}\n```"),
                source_code: code,
                truncated,
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("completions.jsonl");
        write_jsonl(&path, &completions).unwrap();
        let loaded = load_completions(&path, None).unwrap();
        prop_assert_eq!(loaded.completions, completions);
        prop_assert!(loaded.unknown_tasks.is_empty());
    }
}

#[test]
fn fixture_corpus_loads() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus");
    let ds = load_dataset(&dir.join("tasks.jsonl")).unwrap();
    assert_eq!(ds.dataset_id, "tasks");
    assert_eq!(ds.len(), 12);
    let loaded = load_completions(&dir.join("completions.jsonl"), Some(&ds)).unwrap();
    assert_eq!(loaded.completions.len(), 36);
    assert!(loaded.unknown_tasks.is_empty());
    // Fenced replies are reduced to their code.
    assert!(loaded
        .completions
        .iter()
        .all(|c| !c.source_code.contains("```")));
}
