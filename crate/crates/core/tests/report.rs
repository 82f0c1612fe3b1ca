use std::collections::BTreeMap;

use halluscope::aggregate::{LabelCount, SampleProfile};
use halluscope::bench;
use halluscope::report::{
    evaluate, hallucination_rate, indicator, render_report, HrCell, HrReport, IndicatorMode,
    Weighting,
};
use halluscope::taxonomy::{Category, Subcategory};
use halluscope::{ExactRate, Scalar};
use proptest::prelude::*;

fn profile(task: &str, model: &str, subs: &[Subcategory]) -> SampleProfile {
    SampleProfile {
        task_id: task.into(),
        model_id: model.into(),
        sample_index: None,
        labels: subs
            .iter()
            .map(|&subcategory| LabelCount {
                subcategory,
                cause: "c".into(),
                count: 3,
            })
            .collect(),
        pass_count: 0,
        fault_count: 0,
        unmapped: BTreeMap::new(),
        test_count: 3,
        executed: 3 * subs.len().max(1),
        degenerate: false,
        top: Vec::new(),
    }
}

fn cells(model: &str, counts: &[(u64, u64)]) -> Vec<HrCell<ExactRate>> {
    Subcategory::ALL
        .iter()
        .zip(counts)
        .map(|(&s, &(h, n))| HrCell::from_counts(model, s, h.min(n), n).unwrap())
        .collect()
}

proptest! {
    #[test]
    fn rate_is_bounded_and_monotone(v in prop::collection::vec(0u8..=1, 1..200), flip in any::<prop::sample::Index>()) {
        let r: ExactRate = hallucination_rate(&v).unwrap();
        prop_assert!(r >= ExactRate::from_integer(0) && r <= ExactRate::from_integer(1));
        let mut more = v.clone();
        let i = flip.index(more.len());
        more[i] = 1;
        let r2: ExactRate = hallucination_rate(&more).unwrap();
        prop_assert!(r2 >= r);
        // Appending a clean sample never raises the rate.
        more.push(0);
        let r3: ExactRate = hallucination_rate(&more).unwrap();
        prop_assert!(r3 <= r2);
    }

    #[test]
    fn rows_sorted_by_overall(
        models in prop::collection::vec(prop::collection::vec((0u64..50, 1u64..50), 8), 1..6),
        uniform in any::<bool>(),
    ) {
        let weighting = if uniform { Weighting::Uniform } else { Weighting::Samples };
        let all: Vec<HrCell<ExactRate>> = models
            .iter()
            .enumerate()
            .flat_map(|(i, c)| cells(&format!("m{i}"), c))
            .collect();
        let report = HrReport::from_cells(all, weighting).unwrap();
        prop_assert_eq!(report.rows.len(), models.len());
        let overall: Vec<ExactRate> =
            report.rows.iter().map(|r| r.overall.get(weighting).unwrap()).collect();
        prop_assert!(overall.windows(2).all(|w| w[0] <= w[1]));
        for row in &report.rows {
            for (cat, avg) in &row.categories {
                let [a, b] = cat.subcategories();
                let (lo, hi) = {
                    let (x, y) = (row.cell(a).rate, row.cell(b).rate);
                    if x < y { (x, y) } else { (y, x) }
                };
                let w = avg.weighted.unwrap();
                prop_assert!(lo <= w && w <= hi);
            }
        }
    }

    #[test]
    fn any_mode_dominates_target(subs in prop::collection::vec(0usize..8, 0..4), target in 0usize..8) {
        let subs: Vec<Subcategory> = subs.into_iter().map(|s| Subcategory::ALL[s]).collect();
        let p = profile("t", "m", &subs);
        let t = Subcategory::ALL[target];
        prop_assert!(indicator(&p, t, IndicatorMode::Any) >= indicator(&p, t, IndicatorMode::Target));
    }
}

#[test]
fn equal_weights_make_averages_coincide() {
    let c = cells(
        "m",
        &[
            (1, 10),
            (3, 10),
            (0, 10),
            (10, 10),
            (2, 10),
            (5, 10),
            (9, 10),
            (4, 10),
        ],
    );
    let report = HrReport::from_cells(c, Weighting::Samples).unwrap();
    let row = &report.rows[0];
    for cat in Category::ALL {
        assert_eq!(row.category(cat).weighted, row.category(cat).uniform);
    }
    assert_eq!(row.overall.weighted, Some(ExactRate::new(34, 80)));
}

#[test]
fn empty_cells_render_dash_and_drop_out() {
    let c = cells(
        "m",
        &[
            (1, 4),
            (0, 0),
            (2, 4),
            (0, 0),
            (0, 0),
            (0, 0),
            (4, 4),
            (0, 0),
        ],
    );
    let (report, md) = render_report(c, Weighting::Samples).unwrap();
    let row = &report.rows[0];
    assert_eq!(
        row.category(Category::Mapping).weighted,
        Some(ExactRate::new(1, 4))
    );
    assert_eq!(row.category(Category::Resource).weighted, None);
    assert_eq!(row.overall.weighted, Some(ExactRate::new(7, 12)));
    let line = md.lines().find(|l| l.starts_with("| m |")).unwrap();
    assert_eq!(
        line,
        "| m | 25.00 | - | 25.00 | 50.00 | - | 50.00 | - | - | - | 100.00 | - | 100.00 | 58.33 | 58.33 |"
    );
}

#[test]
fn incomplete_or_duplicate_cells_rejected() {
    let mut c = cells("m", &[(0, 1); 8]);
    c.pop();
    assert!(HrReport::from_cells(c.clone(), Weighting::Samples).is_err());
    c.push(c[0].clone());
    c.push(c[0].clone());
    assert!(HrReport::from_cells(c, Weighting::Samples).is_err());
}

#[test]
fn half_even_rendering() {
    // 0.125% and 0.375% are exact ties; both go to the even digit.
    let c = HrCell::<ExactRate>::from_counts("m", Subcategory::Identity, 1, 800).unwrap();
    assert_eq!(c.hr_percent(), "0.12");
    let c = HrCell::<ExactRate>::from_counts("m", Subcategory::Identity, 3, 800).unwrap();
    assert_eq!(c.hr_percent(), "0.38");
    assert_eq!(ExactRate::new(1, 8).to_fixed(2), "0.12");
}

#[test]
fn evaluation_counts_profiles_on_benchmark_tasks() {
    let id = Subcategory::Identity;
    let mut faulty = profile("A", "m2", &[id]);
    faulty.fault_count = 1;
    let profiles = vec![
        profile("A", "m1", &[id]),
        faulty,
        profile("B", "m1", &[]),
        profile("B", "m2", &[id]),
        profile("C", "m1", &[Subcategory::LogicDeviation]),
    ];
    let manifest = bench::build(&profiles, 3).unwrap();
    let tasks: Vec<&str> = manifest
        .entries_for(id)
        .map(|e| e.task_id.as_str())
        .collect();
    assert_eq!(tasks, ["A"]);
    let e = evaluate::<ExactRate>(&manifest, &profiles, IndicatorMode::Target).unwrap();
    let cell = |m: &str, s: Subcategory| {
        e.cells
            .iter()
            .find(|c| c.model_id == m && c.subcategory == s)
            .unwrap()
            .clone()
    };
    assert_eq!(cell("m1", id).rate, ExactRate::from_integer(1));
    assert_eq!(cell("m1", id).total_samples, 1);
    // The faulty profile is not an evaluated sample.
    assert_eq!(cell("m2", id).total_samples, 0);
    assert_eq!(cell("m2", id).hr_percent(), "-");
    assert_eq!(e.missing, ["m2/A/Identity"]);
}

#[test]
fn float_and_exact_render_alike() {
    let counts = [
        (3, 7),
        (5, 11),
        (0, 13),
        (13, 13),
        (1, 3),
        (2, 9),
        (8, 17),
        (6, 19),
    ];
    let exact = HrReport::from_cells(cells("m", &counts), Weighting::Samples).unwrap();
    let float: Vec<HrCell<f64>> = Subcategory::ALL
        .iter()
        .zip(counts)
        .map(|(&s, (h, n))| HrCell::from_counts("m", s, h, n).unwrap())
        .collect();
    let float = HrReport::from_cells(float, Weighting::Samples).unwrap();
    assert_eq!(exact.to_markdown(), float.to_markdown());
}
