//! Benchmark construction: threshold cross-model hallucination frequencies
//! into typed task subsets.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregate::SampleProfile;
use crate::corpus::read_jsonl;
use crate::error::{Error, Result};
use crate::taxonomy::{Category, Subcategory};

pub const DEFAULT_THRESHOLD_K: u64 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkEntry {
    pub task_id: String,
    pub target_subcategory: Subcategory,
    /// Observations of the subcategory summed over every model and execution.
    pub observed_frequency: u64,
    /// Models that produced at least one observation, sorted.
    pub contributing_models: Vec<String>,
    pub per_model_frequency: BTreeMap<String, u64>,
    /// Test cases the task carries; each is one benchmark sample.
    pub samples: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubcategoryCounts {
    pub subcategory: Subcategory,
    pub tasks: u64,
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub category: Category,
    pub tasks: u64,
    pub samples: u64,
    pub subcategories: Vec<SubcategoryCounts>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub threshold_k: u64,
    pub models: Vec<String>,
    #[serde(default)]
    pub run_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub provenance: Provenance,
    /// Grouped by subcategory in taxonomy order; within a group by
    /// frequency descending, then task id.
    pub entries: Vec<BenchmarkEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Multi-membership statistics over the included tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overlap {
    pub distinct_tasks: u64,
    pub multi_membership_tasks: u64,
}

impl Overlap {
    pub fn rate(&self) -> f64 {
        if self.distinct_tasks == 0 {
            0.0
        } else {
            self.multi_membership_tasks as f64 / self.distinct_tasks as f64
        }
    }
}

impl BenchmarkManifest {
    pub fn entries_for(&self, subcategory: Subcategory) -> impl Iterator<Item = &BenchmarkEntry> {
        self.entries
            .iter()
            .filter(move |e| e.target_subcategory == subcategory)
    }

    pub fn subcategory_counts(&self, subcategory: Subcategory) -> SubcategoryCounts {
        let (tasks, samples) = self
            .entries_for(subcategory)
            .fold((0, 0), |(t, s), e| (t + 1, s + e.samples));
        SubcategoryCounts {
            subcategory,
            tasks,
            samples,
        }
    }

    /// Per-category counts; a category's totals are the sums of its two
    /// subcategories.
    pub fn summary(&self) -> Vec<CategoryCounts> {
        Category::ALL
            .iter()
            .map(|&category| {
                let subcategories: Vec<SubcategoryCounts> = category
                    .subcategories()
                    .iter()
                    .map(|&s| self.subcategory_counts(s))
                    .collect();
                CategoryCounts {
                    category,
                    tasks: subcategories.iter().map(|s| s.tasks).sum(),
                    samples: subcategories.iter().map(|s| s.samples).sum(),
                    subcategories,
                }
            })
            .collect()
    }

    pub fn overlap(&self) -> Overlap {
        let mut per_task: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &self.entries {
            *per_task.entry(&e.task_id).or_default() += 1;
        }
        Overlap {
            distinct_tasks: per_task.len() as u64,
            multi_membership_tasks: per_task.values().filter(|&&n| n > 1).count() as u64,
        }
    }

    pub fn total_samples(&self) -> u64 {
        self.entries.iter().map(|e| e.samples).sum()
    }

    fn check_sorted(&self) -> Result<()> {
        let key = |e: &BenchmarkEntry| {
            (
                e.target_subcategory,
                std::cmp::Reverse(e.observed_frequency),
            )
        };
        for pair in self.entries.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            let ordered = key(a) < key(b) || (key(a) == key(b) && a.task_id < b.task_id);
            if !ordered {
                return Err(Error::Validation(format!(
                    "manifest entries out of order at task `{}`",
                    b.task_id
                )));
            }
        }
        Ok(())
    }
}

/// Keeps, for every subcategory, the tasks whose cross-model frequency
/// strictly exceeds `threshold_k`.
pub fn build(profiles: &[SampleProfile], threshold_k: u64) -> Result<BenchmarkManifest> {
    if threshold_k == 0 {
        return Err(Error::Config(
            "threshold_k must be a positive integer".into(),
        ));
    }
    let models: BTreeSet<&str> = profiles.iter().map(|p| p.model_id.as_str()).collect();
    let mut warnings = Vec::new();
    if profiles.is_empty() {
        let msg = "no sample profiles; benchmark is empty".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    } else if models.len() < 2 {
        return Err(Error::Validation(format!(
            "benchmark construction needs profiles from at least 2 models, got {}",
            models.len()
        )));
    }

    let mut samples: BTreeMap<&str, u64> = BTreeMap::new();
    let mut freq: BTreeMap<(Subcategory, &str), BTreeMap<String, u64>> = BTreeMap::new();
    for p in profiles {
        let n = samples.entry(&p.task_id).or_default();
        *n = (*n).max(p.test_count as u64);
        for l in &p.labels {
            if l.count > 0 {
                *freq
                    .entry((l.subcategory, p.task_id.as_str()))
                    .or_default()
                    .entry(p.model_id.clone())
                    .or_default() += l.count;
            }
        }
    }

    let mut entries: Vec<BenchmarkEntry> = freq
        .into_iter()
        .filter_map(|((sub, task), per_model)| {
            let total: u64 = per_model.values().sum();
            (total > threshold_k).then(|| BenchmarkEntry {
                task_id: task.to_string(),
                target_subcategory: sub,
                observed_frequency: total,
                contributing_models: per_model.keys().cloned().collect(),
                per_model_frequency: per_model,
                samples: samples[task],
            })
        })
        .collect();
    entries.sort_by(|a, b| {
        a.target_subcategory
            .cmp(&b.target_subcategory)
            .then(b.observed_frequency.cmp(&a.observed_frequency))
            .then_with(|| a.task_id.cmp(&b.task_id))
    });

    Ok(BenchmarkManifest {
        provenance: Provenance {
            threshold_k,
            models: models.into_iter().map(String::from).collect(),
            run_ids: Vec::new(),
        },
        entries,
        warnings,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ManifestLine {
    Summary {
        #[serde(flatten)]
        provenance: Provenance,
        categories: Vec<CategoryCounts>,
        total_tasks: u64,
        total_samples: u64,
        overlap: Overlap,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        warnings: Vec<String>,
    },
    Entry(BenchmarkEntry),
}

/// Writes a summary header line followed by one line per entry.
pub fn export_manifest(manifest: &BenchmarkManifest, path: &Path) -> Result<()> {
    let bytes = manifest_jsonl(manifest)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// The exported manifest as bytes.
pub fn manifest_jsonl(manifest: &BenchmarkManifest) -> Result<Vec<u8>> {
    let overlap = manifest.overlap();
    let mut lines = vec![ManifestLine::Summary {
        provenance: manifest.provenance.clone(),
        categories: manifest.summary(),
        total_tasks: overlap.distinct_tasks,
        total_samples: manifest.total_samples(),
        overlap,
        warnings: manifest.warnings.clone(),
    }];
    lines.extend(manifest.entries.iter().cloned().map(ManifestLine::Entry));
    let mut bytes = Vec::new();
    for line in &lines {
        serde_json::to_writer(&mut bytes, line)?;
        bytes.push(b'\n');
    }
    Ok(bytes)
}

pub fn import_manifest(path: &Path) -> Result<BenchmarkManifest> {
    let lines: Vec<ManifestLine> = read_jsonl(path)?;
    let mut iter = lines.into_iter();
    let Some(ManifestLine::Summary {
        provenance,
        categories,
        total_tasks,
        total_samples,
        overlap,
        warnings,
    }) = iter.next()
    else {
        return Err(Error::Validation(format!(
            "{}: manifest must start with a summary record",
            path.display()
        )));
    };
    let entries = iter
        .map(|line| match line {
            ManifestLine::Entry(e) => Ok(e),
            ManifestLine::Summary { .. } => Err(Error::Validation(format!(
                "{}: more than one summary record",
                path.display()
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = BenchmarkManifest {
        provenance,
        entries,
        warnings,
    };
    manifest.check_sorted()?;
    if manifest.summary() != categories
        || manifest.overlap() != overlap
        || overlap.distinct_tasks != total_tasks
        || manifest.total_samples() != total_samples
    {
        return Err(Error::Validation(format!(
            "{}: summary counts disagree with entries",
            path.display()
        )));
    }
    Ok(manifest)
}

/// Spreadsheet-friendly counts: one row per subcategory plus a total row.
pub fn export_summary_csv(manifest: &BenchmarkManifest, path: &Path) -> Result<()> {
    let bytes = summary_csv(manifest)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn summary_csv(manifest: &BenchmarkManifest) -> Result<Vec<u8>> {
    let mut out = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Report(format!("csv: {e}"));
    out.write_record([
        "Category",
        "#Tasks",
        "#Samples",
        "Sub-Category",
        "#Tasks",
        "#Samples",
    ])
    .map_err(io)?;
    for c in manifest.summary() {
        for s in &c.subcategories {
            out.write_record([
                c.category.name().to_string(),
                c.tasks.to_string(),
                c.samples.to_string(),
                s.subcategory.name().to_string(),
                s.tasks.to_string(),
                s.samples.to_string(),
            ])
            .map_err(io)?;
        }
    }
    let overlap = manifest.overlap();
    out.write_record([
        "Total".to_string(),
        overlap.distinct_tasks.to_string(),
        manifest.total_samples().to_string(),
        String::new(),
        String::new(),
        String::new(),
    ])
    .map_err(io)?;
    out.into_inner()
        .map_err(|e| Error::Report(format!("csv: {e}")))
}
