use std::collections::{BTreeMap, BTreeSet};

use halluscope::aggregate::{LabelCount, SampleProfile};
use halluscope::bench::{build, export_manifest, import_manifest, manifest_jsonl, summary_csv};
use halluscope::taxonomy::Subcategory;
use halluscope::Error;
use proptest::prelude::*;

fn profile(task: usize, model: usize, labels: &[(usize, u64)]) -> SampleProfile {
    let mut counts: BTreeMap<Subcategory, u64> = BTreeMap::new();
    for &(s, n) in labels {
        *counts.entry(Subcategory::ALL[s]).or_default() += n;
    }
    let test_count = 2 + task % 4;
    SampleProfile {
        task_id: format!("task{task:02}"),
        model_id: format!("model{model}"),
        sample_index: None,
        labels: counts
            .into_iter()
            .map(|(subcategory, count)| LabelCount {
                subcategory,
                cause: "c".into(),
                count,
            })
            .collect(),
        pass_count: 0,
        fault_count: 0,
        unmapped: BTreeMap::new(),
        test_count,
        executed: test_count,
        degenerate: false,
        top: Vec::new(),
    }
}

/// Profiles for at least two models, unique per (task, model).
fn profiles() -> impl Strategy<Value = Vec<SampleProfile>> {
    let labels = prop::collection::vec((0usize..8, 1u64..4), 0..4);
    prop::collection::vec((0usize..10, 0usize..3, labels), 0..40).prop_map(|raw| {
        let mut seen = BTreeSet::new();
        let mut out: Vec<SampleProfile> = raw
            .into_iter()
            .filter(|(t, m, _)| seen.insert((*t, *m)))
            .map(|(t, m, l)| profile(t, m, &l))
            .collect();
        out.push(profile(99, 0, &[]));
        out.push(profile(99, 1, &[]));
        out
    })
}

fn keys(ps: &[SampleProfile], k: u64) -> BTreeSet<(Subcategory, String)> {
    build(ps, k)
        .unwrap()
        .entries
        .into_iter()
        .map(|e| (e.target_subcategory, e.task_id))
        .collect()
}

proptest! {
    #[test]
    fn raising_k_only_removes_tasks(ps in profiles(), k in 1u64..6) {
        prop_assert!(keys(&ps, k + 1).is_subset(&keys(&ps, k)));
    }

    #[test]
    fn more_observations_only_add_tasks(ps in profiles(), extra in prop::collection::vec((0usize..10, 0usize..8, 1u64..4), 0..10), k in 1u64..4) {
        let before = keys(&ps, k);
        let mut more = ps.clone();
        for (i, (t, s, n)) in extra.into_iter().enumerate() {
            more.push(SampleProfile { model_id: format!("extra{i}"), ..profile(t, 0, &[(s, n)]) });
        }
        prop_assert!(before.is_subset(&keys(&more, k)));
    }

    #[test]
    fn input_order_is_irrelevant(
        (ps, shuffled) in profiles().prop_flat_map(|ps| (Just(ps.clone()), Just(ps).prop_shuffle())),
        k in 1u64..4,
    ) {
        let a = build(&ps, k).unwrap();
        let b = build(&shuffled, k).unwrap();
        prop_assert_eq!(manifest_jsonl(&a).unwrap(), manifest_jsonl(&b).unwrap());
        prop_assert_eq!(summary_csv(&a).unwrap(), summary_csv(&b).unwrap());
    }

    #[test]
    fn export_import_round_trip(ps in profiles(), k in 1u64..4) {
        let m = build(&ps, k).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("benchmark.jsonl");
        export_manifest(&m, &path).unwrap();
        prop_assert_eq!(import_manifest(&path).unwrap(), m);
    }

    #[test]
    fn entry_fields_agree(ps in profiles(), k in 1u64..4) {
        let m = build(&ps, k).unwrap();
        for e in &m.entries {
            prop_assert!(e.observed_frequency > k);
            prop_assert_eq!(e.per_model_frequency.values().sum::<u64>(), e.observed_frequency);
            let contributing: Vec<String> = e.per_model_frequency.keys().cloned().collect();
            prop_assert_eq!(&e.contributing_models, &contributing);
        }
    }
}

#[test]
fn tampered_summary_is_rejected() {
    let ps = vec![profile(1, 0, &[(2, 5)]), profile(1, 1, &[])];
    let m = build(&ps, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("benchmark.jsonl");
    let text = String::from_utf8(manifest_jsonl(&m).unwrap()).unwrap();
    for (from, to) in [
        ("\"total_samples\":3", "\"total_samples\":4"),
        ("\"tasks\":1", "\"tasks\":2"),
    ] {
        assert!(text.contains(from));
        std::fs::write(&path, text.replacen(from, to, 1)).unwrap();
        let err = import_manifest(&path).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err:?}");
        assert_eq!(err.exit_code(), 2);
    }
}

#[test]
fn summary_csv_layout() {
    let ps = vec![
        profile(1, 0, &[(0, 3)]),
        profile(1, 1, &[(1, 3)]),
        profile(2, 1, &[(0, 4)]),
    ];
    let m = build(&ps, 2).unwrap();
    let csv = String::from_utf8(summary_csv(&m).unwrap()).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "Category,#Tasks,#Samples,Sub-Category,#Tasks,#Samples"
    );
    assert_eq!(lines[1], "Mapping,3,10,DataCompliance,2,7");
    assert_eq!(lines[2], "Mapping,3,10,StructureAccess,1,3");
    assert_eq!(lines[9], "Total,2,10,,,");
}
