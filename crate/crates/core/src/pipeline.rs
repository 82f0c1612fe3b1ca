//! Stage orchestration: validation, identification, benchmark construction
//! and evaluation over file-mediated artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{
    build_profiles, cooccurrence_by_model, frequency_list, Cooccurrence, FrequencyList,
    Granularity, SampleProfile, StateRecord,
};
use crate::corpus::{Completion, Dataset, Task};
use crate::degeneration::{DegenerationConfig, DegenerationVerdict, Detector};
use crate::error::{Error, Result};
use crate::report::{CrossHit, Evaluation, HrCell};
use crate::sandbox::{ExecutionOutcome, Sandbox, SandboxConfig, Status};
use crate::scalar::Scalar;
use crate::taxonomy::{classify, Classification, ClassificationTable, Subcategory};

pub const STATES: &str = "states.jsonl";
pub const TIMINGS: &str = "timings.jsonl";
pub const PROFILES: &str = "profiles.jsonl";
pub const FREQUENCIES: &str = "frequencies.json";
pub const COOCCURRENCE: &str = "cooccurrence.json";
pub const COOCCURRENCE_MD: &str = "cooccurrence.md";
pub const BENCHMARK: &str = "benchmark.jsonl";
pub const BENCHMARK_CSV: &str = "benchmark_summary.csv";
pub const CELLS: &str = "hr_cells.json";
pub const REPORT_MD: &str = "report.md";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";
pub const RUN: &str = "run.json";

#[derive(Debug, Clone)]
pub struct ValidateOptions {
    pub sandbox: SandboxConfig,
    pub detector: DegenerationConfig,
    pub table: ClassificationTable,
    pub wall_time_ms: Option<u64>,
    pub memory_bytes: Option<u64>,
    pub jobs: usize,
    /// Stop a completion's tests at the first non-passing one.
    pub fail_fast: bool,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            sandbox: SandboxConfig::default(),
            detector: DegenerationConfig::default(),
            table: ClassificationTable::default(),
            wall_time_ms: None,
            memory_bytes: None,
            jobs: default_jobs(),
            fail_fast: false,
        }
    }
}

pub fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Measured cost of one execution. Kept apart from the state records so
/// those stay reproducible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub task_id: String,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<u32>,
    pub test_index: usize,
    pub wall_time_ms: u64,
    pub peak_memory_bytes: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Validated {
    /// Ordered by completion input order, then test index.
    pub records: Vec<StateRecord>,
    pub timings: Vec<Timing>,
    pub skipped_unknown_tasks: usize,
}

impl Validated {
    pub fn harness_faults(&self) -> usize {
        self.records
            .iter()
            .filter(|r| matches!(r.classification, Classification::HarnessFault { .. }))
            .count()
    }
}

fn artifact_key(c: &Completion, test_index: usize) -> String {
    let sample = c.sample_index.map_or_else(String::new, |s| format!("-{s}"));
    format!("{}/{}{sample}/{test_index}", c.task_id, c.model_id)
}

fn record(
    c: &Completion,
    task: &Task,
    test_index: usize,
    classification: Classification,
    verdict: Option<&DegenerationVerdict>,
    outcome: Option<&ExecutionOutcome>,
) -> StateRecord {
    StateRecord {
        task_id: c.task_id.clone(),
        model_id: c.model_id.clone(),
        sample_index: c.sample_index,
        test_index,
        test_count: task.test_cases.len(),
        classification,
        status: outcome.map(|o| o.status),
        degeneration: verdict.filter(|v| v.is_degenerate()).cloned(),
        exception_name: outcome.and_then(|o| o.exception_name.clone()),
        exception_message: outcome.and_then(|o| o.exception_message.clone()),
    }
}

fn validate_one(
    c: &Completion,
    task: &Task,
    sandbox: &Sandbox,
    detector: &Detector,
    opts: &ValidateOptions,
) -> (Vec<StateRecord>, Vec<Timing>) {
    let verdict = detector.detect(&c.source_code, c.truncated);
    if verdict.is_degenerate() {
        let class = classify(&verdict, None, &opts.table);
        let records = (0..task.test_cases.len())
            .map(|i| record(c, task, i, class.clone(), Some(&verdict), None))
            .collect();
        return (records, Vec::new());
    }
    let limits = task
        .limits
        .with_overrides(opts.wall_time_ms, opts.memory_bytes);
    let mut records = Vec::with_capacity(task.test_cases.len());
    let mut timings = Vec::with_capacity(task.test_cases.len());
    let precheck = match limits.validate() {
        Err(m) => Some(ExecutionOutcome::sandbox_error(m)),
        Ok(()) => sandbox.check_syntax(&c.source_code, &limits),
    };
    for (i, test) in task.test_cases.iter().enumerate() {
        let outcome = match &precheck {
            Some(o) => o.clone(),
            None => {
                let key = artifact_key(c, i);
                sandbox.run_recorded(&c.source_code, test, &limits, Some(&key))
            }
        };
        let class = classify(&verdict, Some(&outcome), &opts.table);
        let failed = outcome.status != Status::Pass;
        if precheck.is_none() {
            timings.push(Timing {
                task_id: c.task_id.clone(),
                model_id: c.model_id.clone(),
                sample_index: c.sample_index,
                test_index: i,
                wall_time_ms: outcome.wall_time_ms,
                peak_memory_bytes: outcome.peak_memory_bytes,
            });
        }
        records.push(record(c, task, i, class, None, Some(&outcome)));
        if failed && opts.fail_fast {
            break;
        }
    }
    (records, timings)
}

/// Degeneration gate, execution and classification for every completion
/// whose task is in the dataset.
pub fn validate(
    dataset: &Dataset,
    completions: &[Completion],
    opts: &ValidateOptions,
) -> Result<Validated> {
    opts.detector.validate()?;
    opts.table.validate()?;
    let sandbox = Sandbox::new(opts.sandbox.clone());
    let detector = Detector::new(opts.detector);
    let known: Vec<(&Completion, &Task)> = completions
        .iter()
        .filter_map(|c| dataset.task(&c.task_id).map(|t| (c, t)))
        .collect();
    let skipped = completions.len() - known.len();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::Harness(e.to_string()))?;
    let per_completion: Vec<(Vec<StateRecord>, Vec<Timing>)> = pool.install(|| {
        known
            .par_iter()
            .map(|(c, t)| validate_one(c, t, &sandbox, &detector, opts))
            .collect()
    });
    let mut out = Validated {
        skipped_unknown_tasks: skipped,
        ..Validated::default()
    };
    for (r, t) in per_completion {
        out.records.extend(r);
        out.timings.extend(t);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frequencies {
    pub subcategory: FrequencyList,
    pub raw_cause: FrequencyList,
    pub per_model: BTreeMap<String, FrequencyList>,
    /// Runtime failures with no subcategory, by exception name.
    pub unmapped: BTreeMap<String, u64>,
    pub harness_faults: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Identification {
    pub profiles: Vec<SampleProfile>,
    pub frequencies: Frequencies,
    pub cooccurrence: Vec<Cooccurrence>,
}

pub fn identify(records: &[StateRecord], top_m: usize) -> Identification {
    let profiles = build_profiles(records, top_m);
    identify_profiles(profiles)
}

pub fn identify_profiles(profiles: Vec<SampleProfile>) -> Identification {
    let mut by_model: BTreeMap<String, Vec<SampleProfile>> = BTreeMap::new();
    let mut unmapped: BTreeMap<String, u64> = BTreeMap::new();
    let mut faults = 0;
    for p in &profiles {
        by_model
            .entry(p.model_id.clone())
            .or_default()
            .push(p.clone());
        for (name, n) in &p.unmapped {
            *unmapped.entry(name.clone()).or_default() += n;
        }
        faults += p.fault_count;
    }
    let frequencies = Frequencies {
        subcategory: frequency_list(&profiles, Granularity::Subcategory),
        raw_cause: frequency_list(&profiles, Granularity::RawCause),
        per_model: by_model
            .iter()
            .map(|(m, ps)| (m.clone(), frequency_list(ps, Granularity::Subcategory)))
            .collect(),
        unmapped,
        harness_faults: faults,
    };
    let cooccurrence = cooccurrence_by_model(&profiles);
    Identification {
        profiles,
        frequencies,
        cooccurrence,
    }
}

/// On-disk form of one report cell. Counts take precedence over a
/// percentage when both are present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRecord {
    pub model_id: String,
    pub subcategory: Subcategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hallucinated_samples: Option<u64>,
    pub total_samples: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hr_percent: Option<String>,
}

impl CellRecord {
    pub fn from_cell<T: Scalar>(cell: &HrCell<T>) -> Self {
        CellRecord {
            model_id: cell.model_id.clone(),
            subcategory: cell.subcategory,
            hallucinated_samples: cell.hallucinated_samples,
            total_samples: cell.total_samples,
            hr_percent: Some(cell.hr_percent()),
        }
    }

    pub fn to_cell<T: Scalar>(&self) -> Result<HrCell<T>> {
        if let Some(h) = self.hallucinated_samples {
            return HrCell::from_counts(
                self.model_id.clone(),
                self.subcategory,
                h,
                self.total_samples,
            );
        }
        let text = self.hr_percent.as_deref().ok_or_else(|| {
            Error::Report(format!(
                "cell {}/{} has neither counts nor a percentage",
                self.model_id,
                self.subcategory.name()
            ))
        })?;
        let percent = T::parse_decimal(text)
            .ok_or_else(|| Error::Report(format!("invalid percentage `{text}`")))?;
        Ok(HrCell::from_percent(
            self.model_id.clone(),
            self.subcategory,
            percent,
            self.total_samples,
        ))
    }
}

/// Contents of the evaluation artifact consumed by the report stage.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvaluationFile {
    pub cells: Vec<CellRecord>,
    #[serde(default)]
    pub cross_hits: Vec<CrossHit>,
    #[serde(default)]
    pub missing: Vec<String>,
}

impl EvaluationFile {
    pub fn from_evaluation<T: Scalar>(e: &Evaluation<T>) -> Self {
        EvaluationFile {
            cells: e.cells.iter().map(CellRecord::from_cell).collect(),
            cross_hits: e.cross_hits.clone(),
            missing: e.missing.clone(),
        }
    }
}

pub fn cooccurrence_markdown(items: &[Cooccurrence]) -> String {
    let mut out = String::from("# Cross-hallucination co-occurrence\n");
    for c in items {
        out.push_str(&format!(
            "\n## {}\n\nCross-task rate: {} ({} of {} hallucinating tasks)\n\n",
            c.model_id,
            c.rate_percent(),
            c.tasks_with_multiple,
            c.tasks_with_any
        ));
        out.push_str("| |");
        for s in Subcategory::ALL {
            out.push_str(&format!(" {} |", s.abbrev()));
        }
        out.push_str("\n| --- |");
        out.push_str(&" ---: |".repeat(8));
        out.push('\n');
        for a in Subcategory::ALL {
            out.push_str(&format!("| {} |", a.abbrev()));
            for b in Subcategory::ALL {
                out.push_str(&format!(" {} |", c.get(a, b)));
            }
            out.push('\n');
        }
    }
    out
}

/// Stable identifier of an input artifact: FNV-1a over its bytes.
pub fn content_id(bytes: &[u8]) -> String {
    let hash = bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    });
    format!("fnv1a64:{hash:016x}")
}

pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn jsonl_bytes<T: Serialize>(records: &[T]) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    for r in records {
        serde_json::to_writer(&mut bytes, r)?;
        bytes.push(b'\n');
    }
    Ok(bytes)
}

/// Output files are first written with a `.partial` suffix and renamed
/// only when the whole command succeeds.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    staged: Vec<(PathBuf, PathBuf)>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            staged: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn stage(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let target = self.dir.join(name);
        let partial = self.dir.join(format!("{name}.partial"));
        fs::write(&partial, bytes).map_err(|e| Error::io(&partial, e))?;
        self.staged.push((partial, target));
        Ok(())
    }

    pub fn commit(&mut self) -> Result<()> {
        for (partial, target) in self.staged.drain(..) {
            fs::rename(&partial, &target).map_err(|e| Error::io(&target, e))?;
        }
        Ok(())
    }
}
