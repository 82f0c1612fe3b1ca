//! Per-sample label profiles, frequency lists and cross-hallucination
//! co-occurrence.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::degeneration::DegenerationVerdict;
use crate::error::{Error, Result};
use crate::sandbox::Status;
use crate::scalar::Scalar;
use crate::taxonomy::{Classification, HallucinationLabel, Subcategory};

pub const DEFAULT_TOP_M: usize = 3;

/// One classified (task, model, test) observation. Tests of a degenerate
/// completion are not executed; each carries the degeneration verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub task_id: String,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<u32>,
    pub test_index: usize,
    pub test_count: usize,
    #[serde(flatten)]
    pub classification: Classification,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<Status>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degeneration: Option<DegenerationVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exception_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exception_message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelCount {
    pub subcategory: Subcategory,
    pub cause: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubcategoryCount {
    pub subcategory: Subcategory,
    pub count: u64,
}

/// The multiset of labels one model produced on one task sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleProfile {
    pub task_id: String,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<u32>,
    /// Sorted by (subcategory, cause).
    pub labels: Vec<LabelCount>,
    pub pass_count: u64,
    pub fault_count: u64,
    /// Runtime failures whose exception has no subcategory, by name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub unmapped: BTreeMap<String, u64>,
    pub test_count: usize,
    /// Executions actually performed; zero for degenerate samples.
    pub executed: usize,
    pub degenerate: bool,
    /// The most frequent subcategories, count descending, ties in taxonomy order.
    pub top: Vec<SubcategoryCount>,
}

impl SampleProfile {
    pub fn label_total(&self) -> u64 {
        self.labels.iter().map(|l| l.count).sum()
    }

    pub fn unmapped_total(&self) -> u64 {
        self.unmapped.values().sum()
    }

    pub fn count(&self, subcategory: Subcategory) -> u64 {
        self.labels
            .iter()
            .filter(|l| l.subcategory == subcategory)
            .map(|l| l.count)
            .sum()
    }

    pub fn has(&self, subcategory: Subcategory) -> bool {
        self.count(subcategory) > 0
    }

    pub fn subcategories(&self) -> BTreeSet<Subcategory> {
        self.labels
            .iter()
            .filter(|l| l.count > 0)
            .map(|l| l.subcategory)
            .collect()
    }

    pub fn key(&self) -> (&str, &str, Option<u32>) {
        (&self.task_id, &self.model_id, self.sample_index)
    }

    pub fn is_consistent(&self) -> bool {
        if self.degenerate {
            self.label_total() == 1 && self.pass_count == 0 && self.executed == 0
        } else {
            self.label_total() + self.pass_count + self.fault_count + self.unmapped_total()
                == self.executed as u64
                && self.executed <= self.test_count
        }
    }
}

type ProfileKey = (String, String, Option<u32>);

#[derive(Debug, Clone, Default, PartialEq)]
struct Partial {
    labels: BTreeMap<HallucinationLabel, u64>,
    pass: u64,
    fault: u64,
    unmapped: BTreeMap<String, u64>,
    test_count: usize,
    executed: usize,
    /// The single label standing for a degenerate completion.
    degenerate: Option<HallucinationLabel>,
}

impl Partial {
    fn merge(&mut self, other: Partial) {
        for (l, c) in other.labels {
            *self.labels.entry(l).or_default() += c;
        }
        for (n, c) in other.unmapped {
            *self.unmapped.entry(n).or_default() += c;
        }
        self.pass += other.pass;
        self.fault += other.fault;
        self.test_count = self.test_count.max(other.test_count);
        self.executed += other.executed;
        self.degenerate = self.degenerate.take().or(other.degenerate);
    }
}

/// Fold of state records into profiles. Builders over disjoint record sets
/// can be merged in any order.
#[derive(Debug, Clone, Default)]
pub struct ProfileBuilder {
    partials: BTreeMap<ProfileKey, Partial>,
}

impl ProfileBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: &StateRecord) {
        let key = (
            record.task_id.clone(),
            record.model_id.clone(),
            record.sample_index,
        );
        let p = self.partials.entry(key).or_default();
        p.test_count = p.test_count.max(record.test_count);
        if record.degeneration.is_some() {
            if let Some(label) = record.classification.label() {
                p.degenerate = Some(label.clone());
            }
            return;
        }
        p.executed += 1;
        match &record.classification {
            Classification::Pass => p.pass += 1,
            Classification::Hallucination { label } => {
                *p.labels.entry(label.clone()).or_default() += 1;
            }
            Classification::Unmapped { cause } => {
                *p.unmapped.entry(cause.clone()).or_default() += 1;
            }
            Classification::HarnessFault { .. } => p.fault += 1,
        }
    }

    pub fn merge(mut self, other: ProfileBuilder) -> Self {
        for (k, p) in other.partials {
            self.partials.entry(k).or_default().merge(p);
        }
        self
    }

    pub fn finish(self, top_m: usize) -> Vec<SampleProfile> {
        self.partials
            .into_iter()
            .map(|((task_id, model_id, sample_index), mut p)| {
                let degenerate = p.degenerate.is_some();
                if let Some(label) = p.degenerate.take() {
                    *p.labels.entry(label).or_default() += 1;
                }
                let labels: Vec<LabelCount> = p
                    .labels
                    .into_iter()
                    .map(|(l, count)| LabelCount {
                        subcategory: l.subcategory,
                        cause: l.cause,
                        count,
                    })
                    .collect();
                let mut per_sub: BTreeMap<Subcategory, u64> = BTreeMap::new();
                for l in &labels {
                    *per_sub.entry(l.subcategory).or_default() += l.count;
                }
                let mut top: Vec<SubcategoryCount> = per_sub
                    .into_iter()
                    .map(|(subcategory, count)| SubcategoryCount { subcategory, count })
                    .collect();
                top.sort_by(|a, b| {
                    b.count
                        .cmp(&a.count)
                        .then(a.subcategory.cmp(&b.subcategory))
                });
                top.truncate(top_m);
                SampleProfile {
                    task_id,
                    model_id,
                    sample_index,
                    labels,
                    pass_count: p.pass,
                    fault_count: p.fault,
                    unmapped: p.unmapped,
                    test_count: p.test_count,
                    executed: p.executed,
                    degenerate,
                    top,
                }
            })
            .collect()
    }
}

/// One profile per (task, model, sample), ordered by that key.
pub fn build_profiles(records: &[StateRecord], top_m: usize) -> Vec<SampleProfile> {
    let mut builder = ProfileBuilder::new();
    for r in records {
        builder.push(r);
    }
    builder.finish(top_m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Subcategory,
    RawCause,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyEntry {
    pub key: String,
    pub count: u64,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyList {
    pub granularity: Granularity,
    pub total: u64,
    /// Count descending, ties by key.
    pub entries: Vec<FrequencyEntry>,
}

impl FrequencyList {
    pub fn count(&self, key: &str) -> u64 {
        self.entries
            .iter()
            .find(|e| e.key == key)
            .map_or(0, |e| e.count)
    }
}

pub fn frequency_list(profiles: &[SampleProfile], granularity: Granularity) -> FrequencyList {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for p in profiles {
        for l in &p.labels {
            let key = match granularity {
                Granularity::Subcategory => l.subcategory.name().to_string(),
                Granularity::RawCause => l.cause.clone(),
            };
            *counts.entry(key).or_default() += l.count;
        }
    }
    let total: u64 = counts.values().sum();
    let mut entries: Vec<FrequencyEntry> = counts
        .into_iter()
        .filter(|(_, c)| *c > 0)
        .map(|(key, count)| FrequencyEntry {
            key,
            count,
            share: count as f64 / total as f64,
        })
        .collect();
    entries.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.key.cmp(&b.key)));
    FrequencyList {
        granularity,
        total,
        entries,
    }
}

/// Task-level co-occurrence of subcategories for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cooccurrence {
    pub model_id: String,
    /// Indexed in taxonomy order. `matrix[i][i]` counts tasks showing
    /// subcategory `i` at all; `matrix[i][j]` tasks showing both.
    pub matrix: [[u64; 8]; 8],
    pub tasks_with_any: u64,
    pub tasks_with_multiple: u64,
    pub cross_task_rate: f64,
}

impl Cooccurrence {
    pub fn get(&self, a: Subcategory, b: Subcategory) -> u64 {
        self.matrix[a.index()][b.index()]
    }

    /// The rate as a percentage with two decimals, e.g. `1.07%`.
    pub fn rate_percent(&self) -> String {
        format_percent(self.tasks_with_multiple, self.tasks_with_any)
    }
}

/// `num / den` rendered as a percentage, computed exactly and rounded
/// half-to-even. `0.00%` when `den` is zero.
pub fn format_percent(num: u64, den: u64) -> String {
    use num_rational::Ratio;
    if den == 0 {
        return "0.00%".into();
    }
    let rate = Ratio::<i64>::from_counts(num, den) * Ratio::<i64>::hundred();
    format!("{}%", rate.to_fixed(2))
}

/// Co-occurrence over the profiles of a single model. All samples of a task
/// are pooled.
pub fn cooccurrence(profiles: &[SampleProfile]) -> Result<Cooccurrence> {
    let models: BTreeSet<&str> = profiles.iter().map(|p| p.model_id.as_str()).collect();
    if models.len() > 1 {
        return Err(Error::Validation(format!(
            "co-occurrence needs profiles of one model, got {}",
            models.len()
        )));
    }
    let model_id = models.into_iter().next().unwrap_or_default().to_string();
    let mut per_task: BTreeMap<&str, BTreeSet<Subcategory>> = BTreeMap::new();
    for p in profiles {
        per_task
            .entry(p.task_id.as_str())
            .or_default()
            .extend(p.subcategories());
    }
    let mut matrix = [[0u64; 8]; 8];
    let mut any = 0;
    let mut multiple = 0;
    for subs in per_task.values() {
        if !subs.is_empty() {
            any += 1;
        }
        if subs.len() >= 2 {
            multiple += 1;
        }
        for a in subs {
            for b in subs {
                matrix[a.index()][b.index()] += 1;
            }
        }
    }
    Ok(Cooccurrence {
        model_id,
        matrix,
        tasks_with_any: any,
        tasks_with_multiple: multiple,
        cross_task_rate: if any == 0 {
            0.0
        } else {
            multiple as f64 / any as f64
        },
    })
}

/// Co-occurrence for every model present, ordered by model id.
pub fn cooccurrence_by_model(profiles: &[SampleProfile]) -> Vec<Cooccurrence> {
    let mut by_model: BTreeMap<&str, Vec<SampleProfile>> = BTreeMap::new();
    for p in profiles {
        by_model.entry(&p.model_id).or_default().push(p.clone());
    }
    by_model
        .values()
        .map(|ps| cooccurrence(ps).expect("grouped by model"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::HallucinationLabel;

    fn record(task: &str, model: &str, test: usize, c: Classification) -> StateRecord {
        StateRecord {
            task_id: task.into(),
            model_id: model.into(),
            sample_index: None,
            test_index: test,
            test_count: 4,
            classification: c,
            status: None,
            degeneration: None,
            exception_name: None,
            exception_message: None,
        }
    }

    fn hall(sub: Subcategory, cause: &str) -> Classification {
        Classification::Hallucination {
            label: HallucinationLabel::new(sub, cause),
        }
    }

    #[test]
    fn pass_pass_identity_identity() {
        let recs = vec![
            record("t", "m", 0, Classification::Pass),
            record("t", "m", 1, Classification::Pass),
            record("t", "m", 2, hall(Subcategory::Identity, "NameError")),
            record("t", "m", 3, hall(Subcategory::Identity, "NameError")),
        ];
        let ps = build_profiles(&recs, DEFAULT_TOP_M);
        assert_eq!(ps.len(), 1);
        let p = &ps[0];
        assert_eq!(p.count(Subcategory::Identity), 2);
        assert_eq!(p.pass_count, 2);
        assert!(p.is_consistent());
        assert_eq!(
            p.top,
            vec![SubcategoryCount {
                subcategory: Subcategory::Identity,
                count: 2
            }]
        );
    }

    #[test]
    fn degenerate_profile() {
        let verdict = DegenerationVerdict {
            kind: crate::degeneration::DegenerationKind::Stuttering,
            evidence: "x = 1".into(),
            score: 1.0,
        };
        let recs: Vec<_> = (0..4)
            .map(|i| StateRecord {
                degeneration: Some(verdict.clone()),
                ..record("t", "m", i, hall(Subcategory::LogicBreakdown, "stuttering"))
            })
            .collect();
        let ps = build_profiles(&recs, 3);
        assert_eq!(ps.len(), 1);
        let p = &ps[0];
        assert!(p.degenerate);
        assert_eq!(p.label_total(), 1);
        assert_eq!(p.pass_count, 0);
        assert_eq!(p.executed, 0);
        assert_eq!(p.test_count, 4);
        assert!(p.is_consistent());
    }

    #[test]
    fn all_pass_profile() {
        let recs: Vec<_> = (0..4)
            .map(|i| record("t", "m", i, Classification::Pass))
            .collect();
        let p = &build_profiles(&recs, 3)[0];
        assert!(p.labels.is_empty());
        assert_eq!(p.pass_count as usize, p.test_count);
    }

    #[test]
    fn profiles_ordered_by_key() {
        let recs = vec![
            record("b", "m1", 0, Classification::Pass),
            record("a", "m2", 0, Classification::Pass),
            record("a", "m1", 0, Classification::Pass),
        ];
        let keys: Vec<_> = build_profiles(&recs, 3)
            .iter()
            .map(|p| (p.task_id.clone(), p.model_id.clone()))
            .collect();
        assert_eq!(
            keys,
            [("a", "m1"), ("a", "m2"), ("b", "m1")].map(|(a, b)| (a.to_string(), b.to_string()))
        );
    }

    #[test]
    fn frequency_example() {
        let recs = vec![
            record("t", "m", 0, hall(Subcategory::DataCompliance, "TypeError")),
            record("t", "m", 1, hall(Subcategory::DataCompliance, "TypeError")),
            record("t", "m", 2, hall(Subcategory::DataCompliance, "TypeError")),
            record("t", "m", 3, hall(Subcategory::Identity, "NameError")),
        ];
        let ps = build_profiles(&recs, 3);
        let f = frequency_list(&ps, Granularity::Subcategory);
        let got: Vec<_> = f
            .entries
            .iter()
            .map(|e| (e.key.as_str(), e.count, e.share))
            .collect();
        assert_eq!(got, [("DataCompliance", 3, 0.75), ("Identity", 1, 0.25)]);
        let raw = frequency_list(&ps, Granularity::RawCause);
        assert_eq!(raw.entries[0].key, "TypeError");
        let none = frequency_list(
            &build_profiles(&[record("t", "m", 0, Classification::Pass)], 3),
            Granularity::Subcategory,
        );
        assert!(none.entries.is_empty());
    }

    #[test]
    fn cooccurrence_example() {
        let recs = vec![
            record("A", "m", 0, hall(Subcategory::Identity, "NameError")),
            record("B", "m", 0, hall(Subcategory::Identity, "NameError")),
            record(
                "B",
                "m",
                1,
                hall(Subcategory::LogicDeviation, "output_mismatch"),
            ),
            record("C", "m", 0, Classification::Pass),
        ];
        let c = cooccurrence(&build_profiles(&recs, 3)).unwrap();
        assert_eq!(c.cross_task_rate, 0.5);
        assert_eq!(c.get(Subcategory::Identity, Subcategory::Identity), 2);
        assert_eq!(c.get(Subcategory::Identity, Subcategory::LogicDeviation), 1);
        assert_eq!(c.get(Subcategory::LogicDeviation, Subcategory::Identity), 1);
        assert_eq!(c.rate_percent(), "50.00%");
    }

    #[test]
    fn single_label_tasks_have_zero_rate() {
        let recs = vec![
            record("A", "m", 0, hall(Subcategory::Identity, "NameError")),
            record("B", "m", 0, hall(Subcategory::StructureAccess, "KeyError")),
        ];
        let c = cooccurrence(&build_profiles(&recs, 3)).unwrap();
        assert_eq!(c.cross_task_rate, 0.0);
        for i in 0..8 {
            for j in 0..8 {
                if i != j {
                    assert_eq!(c.matrix[i][j], 0);
                }
            }
        }
    }

    #[test]
    fn mixed_models_rejected() {
        let recs = vec![
            record("A", "m1", 0, Classification::Pass),
            record("A", "m2", 0, Classification::Pass),
        ];
        assert!(cooccurrence(&build_profiles(&recs, 3)).is_err());
        assert_eq!(cooccurrence_by_model(&build_profiles(&recs, 3)).len(), 2);
    }

    #[test]
    fn percent_rendering() {
        assert_eq!(format_percent(107, 10000), "1.07%");
        assert_eq!(format_percent(1, 3), "33.33%");
        assert_eq!(format_percent(0, 0), "0.00%");
        assert_eq!(format_percent(1, 8), "12.50%");
    }

    #[test]
    fn state_record_json() {
        let r = record("t", "m", 1, hall(Subcategory::Identity, "NameError"));
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains(r#""state":"hallucination""#), "{s}");
        let back: StateRecord = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
        let p = record("t", "m", 1, Classification::Pass);
        let back: StateRecord = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
