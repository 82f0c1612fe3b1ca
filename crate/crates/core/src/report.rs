//! Hallucination-rate evaluation and table rendering.
//!
//! Rates are generic over [`Scalar`] so the same arithmetic runs in floating
//! point or exactly over rationals.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::aggregate::{SampleProfile, SubcategoryCount};
use crate::bench::BenchmarkManifest;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::taxonomy::{Category, Subcategory};

/// Which labels make a benchmark sample count as hallucinated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorMode {
    /// Only the sample's target subcategory.
    #[default]
    Target,
    /// Any hallucination label.
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Weight each subcategory by its sample count.
    #[default]
    Samples,
    Uniform,
}

pub fn indicator(profile: &SampleProfile, target: Subcategory, mode: IndicatorMode) -> u8 {
    let hit = match mode {
        IndicatorMode::Target => profile.has(target),
        IndicatorMode::Any => profile.label_total() > 0,
    };
    u8::from(hit)
}

/// Mean of 0/1 indicators.
pub fn hallucination_rate<T: Scalar>(indicators: &[u8]) -> Result<T> {
    if indicators.is_empty() {
        return Err(Error::UndefinedRate);
    }
    if let Some(bad) = indicators.iter().find(|&&i| i > 1) {
        return Err(Error::Validation(format!(
            "indicator must be 0 or 1, got {bad}"
        )));
    }
    let hits = indicators.iter().filter(|&&i| i == 1).count() as u64;
    Ok(T::from_counts(hits, indicators.len() as u64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HrCell<T> {
    pub model_id: String,
    pub subcategory: Subcategory,
    /// Unknown for cells built from published percentages.
    pub hallucinated_samples: Option<u64>,
    pub total_samples: u64,
    /// Fraction in [0, 1]; zero when `total_samples` is zero.
    pub rate: T,
}

impl<T: Scalar> HrCell<T> {
    pub fn from_counts(
        model_id: impl Into<String>,
        subcategory: Subcategory,
        hallucinated: u64,
        total: u64,
    ) -> Result<Self> {
        if hallucinated > total {
            return Err(Error::Report(format!(
                "{hallucinated} hallucinated samples exceed {total} total"
            )));
        }
        Ok(HrCell {
            model_id: model_id.into(),
            subcategory,
            hallucinated_samples: Some(hallucinated),
            total_samples: total,
            rate: if total == 0 {
                T::zero()
            } else {
                T::from_counts(hallucinated, total)
            },
        })
    }

    /// A cell from an already-computed percentage and its sample weight.
    pub fn from_percent(
        model_id: impl Into<String>,
        subcategory: Subcategory,
        percent: T,
        samples: u64,
    ) -> Self {
        HrCell {
            model_id: model_id.into(),
            subcategory,
            hallucinated_samples: None,
            total_samples: samples,
            rate: percent / T::hundred(),
        }
    }

    pub fn percent(&self) -> T {
        self.rate * T::hundred()
    }

    pub fn hr_percent(&self) -> String {
        if self.total_samples == 0 {
            "-".into()
        } else {
            self.percent().to_fixed(2)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Averages<T> {
    /// Sample-weighted; `None` when no cell has samples.
    pub weighted: Option<T>,
    /// Plain mean over the cells that have samples.
    pub uniform: Option<T>,
}

impl<T: Scalar> Averages<T> {
    fn over(cells: &[&HrCell<T>]) -> Self {
        let present: Vec<&&HrCell<T>> = cells.iter().filter(|c| c.total_samples > 0).collect();
        if present.is_empty() {
            return Averages {
                weighted: None,
                uniform: None,
            };
        }
        let weight = |n: u64| T::from_u64(n).expect("sample count fits the scalar");
        let total: u64 = present.iter().map(|c| c.total_samples).sum();
        let weighted = present
            .iter()
            .fold(T::zero(), |acc, c| acc + weight(c.total_samples) * c.rate)
            / weight(total);
        let uniform =
            present.iter().fold(T::zero(), |acc, c| acc + c.rate) / weight(present.len() as u64);
        Averages {
            weighted: Some(weighted),
            uniform: Some(uniform),
        }
    }

    pub fn get(&self, weighting: Weighting) -> Option<T> {
        match weighting {
            Weighting::Samples => self.weighted,
            Weighting::Uniform => self.uniform,
        }
    }
}

fn render_percent<T: Scalar>(rate: Option<T>) -> String {
    rate.map_or_else(|| "-".into(), |r| (r * T::hundred()).to_fixed(2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRow<T> {
    pub model_id: String,
    /// One cell per subcategory, taxonomy order.
    pub cells: Vec<HrCell<T>>,
    /// Taxonomy order.
    pub categories: Vec<(Category, Averages<T>)>,
    pub overall: Averages<T>,
}

impl<T: Scalar> ModelRow<T> {
    pub fn cell(&self, subcategory: Subcategory) -> &HrCell<T> {
        &self.cells[subcategory.index()]
    }

    pub fn category(&self, category: Category) -> &Averages<T> {
        &self.categories[category as usize].1
    }
}

/// Off-target labels seen on benchmark samples of one target subcategory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossHit {
    pub model_id: String,
    pub target: Subcategory,
    pub samples: u64,
    /// Samples showing each other subcategory; zero counts omitted.
    pub off_target: Vec<SubcategoryCount>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HrReport<T> {
    pub weighting: Weighting,
    /// Ordered by the selected overall average ascending, ties by model id.
    pub rows: Vec<ModelRow<T>>,
    pub cross_hits: Vec<CrossHit>,
}

impl<T: Scalar> HrReport<T> {
    /// Groups cells per model; every model needs exactly one cell per
    /// subcategory.
    pub fn from_cells(cells: Vec<HrCell<T>>, weighting: Weighting) -> Result<Self> {
        let mut per_model: BTreeMap<String, Vec<Option<HrCell<T>>>> = BTreeMap::new();
        for cell in cells {
            let slots = per_model
                .entry(cell.model_id.clone())
                .or_insert_with(|| vec![None; 8]);
            let slot = &mut slots[cell.subcategory.index()];
            if slot.is_some() {
                return Err(Error::Report(format!(
                    "model `{}` has two cells for {}",
                    cell.model_id,
                    cell.subcategory.name()
                )));
            }
            *slot = Some(cell);
        }
        let mut rows = Vec::with_capacity(per_model.len());
        for (model_id, slots) in per_model {
            let mut cells = Vec::with_capacity(8);
            for (slot, sub) in slots.into_iter().zip(Subcategory::ALL) {
                cells.push(slot.ok_or_else(|| {
                    Error::Report(format!("model `{model_id}` lacks a {} cell", sub.name()))
                })?);
            }
            let categories = Category::ALL
                .iter()
                .map(|&cat| {
                    let [a, b] = cat.subcategories();
                    (cat, Averages::over(&[&cells[a.index()], &cells[b.index()]]))
                })
                .collect();
            let overall = Averages::over(&cells.iter().collect::<Vec<_>>());
            rows.push(ModelRow {
                model_id,
                cells,
                categories,
                overall,
            });
        }
        rows.sort_by(|a, b| {
            let key = |r: &ModelRow<T>| r.overall.get(weighting).unwrap_or_else(T::zero);
            key(a)
                .partial_cmp(&key(b))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.model_id.cmp(&b.model_id))
        });
        Ok(HrReport {
            weighting,
            rows,
            cross_hits: Vec::new(),
        })
    }

    pub fn row(&self, model_id: &str) -> Option<&ModelRow<T>> {
        self.rows.iter().find(|r| r.model_id == model_id)
    }

    fn secondary(&self) -> (Weighting, &'static str) {
        match self.weighting {
            Weighting::Samples => (Weighting::Uniform, "Uniform Mean"),
            Weighting::Uniform => (Weighting::Samples, "Weighted Mean"),
        }
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["Model".to_string()];
        for cat in Category::ALL {
            for sub in cat.subcategories() {
                h.push(sub.abbrev().to_string());
            }
            h.push(format!("{} Avg", cat.name()));
        }
        h.push("Average".into());
        h.push(self.secondary().1.into());
        h
    }

    fn row_fields(&self, row: &ModelRow<T>) -> Vec<String> {
        let mut f = vec![row.model_id.clone()];
        for cat in Category::ALL {
            for sub in cat.subcategories() {
                f.push(row.cell(sub).hr_percent());
            }
            f.push(render_percent(row.category(cat).get(self.weighting)));
        }
        f.push(render_percent(row.overall.get(self.weighting)));
        f.push(render_percent(row.overall.get(self.secondary().0)));
        f
    }

    pub fn to_markdown(&self) -> String {
        let header = self.header();
        let mut out = String::from("# Hallucination rate (%)\n\n");
        out.push_str(&format!(
            "Averages: {}\n\n",
            match self.weighting {
                Weighting::Samples => "sample-weighted",
                Weighting::Uniform => "uniform",
            }
        ));
        out.push_str(&format!("| {} |\n", header.join(" | ")));
        out.push_str(&format!(
            "|{}\n",
            header
                .iter()
                .enumerate()
                .map(|(i, _)| if i == 0 { " --- |" } else { " ---: |" })
                .collect::<String>()
        ));
        for row in &self.rows {
            out.push_str(&format!("| {} |\n", self.row_fields(row).join(" | ")));
        }
        if !self.cross_hits.is_empty() {
            out.push_str("\n## Off-target hallucinations\n\n");
            out.push_str("| Model | Target | Samples | Off-target (samples) |\n");
            out.push_str("| --- | --- | ---: | --- |\n");
            for c in &self.cross_hits {
                let hits = if c.off_target.is_empty() {
                    "-".to_string()
                } else {
                    c.off_target
                        .iter()
                        .map(|h| format!("{} {}", h.subcategory.abbrev(), h.count))
                        .collect::<Vec<_>>()
                        .join(", ")
                };
                out.push_str(&format!(
                    "| {} | {} | {} | {} |\n",
                    c.model_id,
                    c.target.abbrev(),
                    c.samples,
                    hits
                ));
            }
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let err = |e: csv::Error| Error::Report(format!("csv: {e}"));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header()).map_err(err)?;
        for row in &self.rows {
            w.write_record(self.row_fields(row)).map_err(err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Report(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Report(e.to_string()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let avg = |a: &Averages<T>| {
            json!({
                "weighted": render_percent(a.weighted),
                "uniform": render_percent(a.uniform),
            })
        };
        let rows: Vec<_> = self
            .rows
            .iter()
            .map(|row| {
                let cells: Vec<_> = row
                    .cells
                    .iter()
                    .map(|c| {
                        json!({
                            "subcategory": c.subcategory,
                            "category": c.subcategory.category(),
                            "hallucinated_samples": c.hallucinated_samples,
                            "total_samples": c.total_samples,
                            "hr_percent": c.hr_percent(),
                        })
                    })
                    .collect();
                let categories: Vec<_> = row
                    .categories
                    .iter()
                    .map(|(cat, a)| json!({ "category": cat, "average": avg(a) }))
                    .collect();
                json!({
                    "model_id": row.model_id,
                    "cells": cells,
                    "categories": categories,
                    "overall": avg(&row.overall),
                })
            })
            .collect();
        json!({
            "weighting": self.weighting,
            "rows": rows,
            "cross_hits": self.cross_hits,
        })
    }
}

/// Builds the report and its markdown table.
pub fn render_report<T: Scalar>(
    cells: Vec<HrCell<T>>,
    weighting: Weighting,
) -> Result<(HrReport<T>, String)> {
    let report = HrReport::from_cells(cells, weighting)?;
    let text = report.to_markdown();
    Ok((report, text))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation<T> {
    pub cells: Vec<HrCell<T>>,
    pub cross_hits: Vec<CrossHit>,
    /// Benchmark samples a model has no usable profile for.
    pub missing: Vec<String>,
}

/// Scores every model's profiles against the benchmark. Each profile of a
/// model on a benchmark task is one evaluated sample; profiles with harness
/// faults are excluded.
pub fn evaluate<T: Scalar>(
    manifest: &BenchmarkManifest,
    profiles: &[SampleProfile],
    mode: IndicatorMode,
) -> Result<Evaluation<T>> {
    let models: BTreeSet<&str> = profiles.iter().map(|p| p.model_id.as_str()).collect();
    let mut by_key: BTreeMap<(&str, &str), Vec<&SampleProfile>> = BTreeMap::new();
    for p in profiles {
        by_key
            .entry((p.model_id.as_str(), p.task_id.as_str()))
            .or_default()
            .push(p);
    }
    let mut cells = Vec::new();
    let mut cross_hits = Vec::new();
    let mut missing = Vec::new();
    for &model in &models {
        for sub in Subcategory::ALL {
            let mut indicators = Vec::new();
            let mut off = [0u64; 8];
            for entry in manifest.entries_for(sub) {
                let usable: Vec<&&SampleProfile> = by_key
                    .get(&(model, entry.task_id.as_str()))
                    .map(|ps| ps.iter().filter(|p| p.fault_count == 0).collect())
                    .unwrap_or_default();
                if usable.is_empty() {
                    missing.push(format!("{model}/{}/{}", entry.task_id, sub.name()));
                }
                for p in usable {
                    indicators.push(indicator(p, sub, mode));
                    for other in p.subcategories() {
                        if other != sub {
                            off[other.index()] += 1;
                        }
                    }
                }
            }
            let total = indicators.len() as u64;
            let hits = indicators.iter().map(|&i| u64::from(i)).sum();
            cells.push(HrCell::from_counts(model, sub, hits, total)?);
            if total > 0 {
                cross_hits.push(CrossHit {
                    model_id: model.to_string(),
                    target: sub,
                    samples: total,
                    off_target: Subcategory::ALL
                        .iter()
                        .filter(|s| off[s.index()] > 0)
                        .map(|&subcategory| SubcategoryCount {
                            subcategory,
                            count: off[subcategory.index()],
                        })
                        .collect(),
                });
            }
        }
    }
    Ok(Evaluation {
        cells,
        cross_hits,
        missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::LabelCount;
    use num_rational::Ratio;

    fn profile(labels: &[(Subcategory, u64)], pass: u64) -> SampleProfile {
        SampleProfile {
            task_id: "t".into(),
            model_id: "m".into(),
            sample_index: None,
            labels: labels
                .iter()
                .map(|&(subcategory, count)| LabelCount {
                    subcategory,
                    cause: "c".into(),
                    count,
                })
                .collect(),
            pass_count: pass,
            fault_count: 0,
            unmapped: BTreeMap::new(),
            test_count: 4,
            executed: 4,
            degenerate: false,
            top: Vec::new(),
        }
    }

    #[test]
    fn indicators() {
        let p = profile(&[(Subcategory::Identity, 2)], 2);
        assert_eq!(
            indicator(&p, Subcategory::Identity, IndicatorMode::Target),
            1
        );
        let all_pass = profile(&[], 4);
        assert_eq!(
            indicator(
                &all_pass,
                Subcategory::LogicDeviation,
                IndicatorMode::Target
            ),
            0
        );
        let stray = profile(&[(Subcategory::StructureAccess, 1)], 3);
        assert_eq!(
            indicator(&stray, Subcategory::Identity, IndicatorMode::Target),
            0
        );
        assert_eq!(
            indicator(&stray, Subcategory::Identity, IndicatorMode::Any),
            1
        );
    }

    #[test]
    fn rates() {
        assert_eq!(hallucination_rate::<f64>(&[1, 0, 0, 0]).unwrap(), 0.25);
        assert_eq!(hallucination_rate::<f64>(&[0, 0]).unwrap(), 0.0);
        assert_eq!(
            hallucination_rate::<Ratio<i64>>(&[1, 0, 1]).unwrap(),
            Ratio::new(2, 3)
        );
        assert!(matches!(
            hallucination_rate::<f64>(&[]),
            Err(Error::UndefinedRate)
        ));
        assert!(hallucination_rate::<f64>(&[2]).is_err());
    }

    fn uniform_cells(model: &str, pct: f64, samples: u64) -> Vec<HrCell<f64>> {
        Subcategory::ALL
            .iter()
            .map(|&s| HrCell::from_percent(model, s, pct, samples))
            .collect()
    }

    #[test]
    fn all_zero_report() {
        let (report, text) =
            render_report(uniform_cells("m", 0.0, 10), Weighting::Samples).unwrap();
        let row = &report.rows[0];
        assert_eq!(render_percent(row.overall.weighted), "0.00");
        for cat in Category::ALL {
            assert_eq!(render_percent(row.category(cat).weighted), "0.00");
        }
        assert!(text.contains("| m | 0.00 |"));
    }

    #[test]
    fn equal_counts_weighting_degenerates() {
        let mut cells = uniform_cells("m", 0.0, 7);
        cells[0].rate = 0.30;
        cells[1].rate = 0.10;
        let report = HrReport::from_cells(cells, Weighting::Samples).unwrap();
        let mapping = report.rows[0].category(Category::Mapping);
        assert!((mapping.weighted.unwrap() - 0.20).abs() < 1e-12);
        assert_eq!(mapping.weighted, mapping.uniform);
    }

    #[test]
    fn missing_and_duplicate_cells() {
        let mut cells = uniform_cells("m", 1.0, 1);
        cells.pop();
        assert!(matches!(
            HrReport::from_cells(cells, Weighting::Samples),
            Err(Error::Report(_))
        ));
        let mut cells = uniform_cells("m", 1.0, 1);
        cells.push(cells[0].clone());
        assert!(matches!(
            HrReport::from_cells(cells, Weighting::Samples),
            Err(Error::Report(_))
        ));
    }

    #[test]
    fn rows_sorted_ascending() {
        let mut cells = uniform_cells("high", 50.0, 1);
        cells.extend(uniform_cells("low", 10.0, 1));
        let r = HrReport::from_cells(cells, Weighting::Samples).unwrap();
        let order: Vec<_> = r.rows.iter().map(|r| r.model_id.as_str()).collect();
        assert_eq!(order, ["low", "high"]);
        assert_eq!(r.to_csv().unwrap().lines().count(), 3);
    }

    #[test]
    fn cell_counts_validated() {
        assert!(HrCell::<f64>::from_counts("m", Subcategory::Identity, 3, 2).is_err());
        let c = HrCell::<Ratio<i64>>::from_counts("m", Subcategory::Identity, 1, 8).unwrap();
        assert_eq!(c.hr_percent(), "12.50");
        let empty = HrCell::<f64>::from_counts("m", Subcategory::Identity, 0, 0).unwrap();
        assert_eq!(empty.hr_percent(), "-");
    }
}
