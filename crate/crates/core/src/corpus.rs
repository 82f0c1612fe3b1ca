//! Task datasets and model completions.
//!
//! Both are JSON-lines files. Test-case inputs and expected outputs are kept
//! as raw text because outcomes are decided by comparing standard output.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::extract_code;

pub const DEFAULT_WALL_TIME_MS: u64 = 5000;
pub const DEFAULT_MEMORY_BYTES: u64 = 256 << 20;
pub const MIN_WALL_TIME_MS: u64 = 100;
pub const MIN_MEMORY_BYTES: u64 = 16 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub input: String,
    pub expected_output: String,
}

impl TestCase {
    pub fn new(input: impl Into<String>, expected_output: impl Into<String>) -> Self {
        TestCase {
            input: input.into(),
            expected_output: expected_output.into(),
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        // Whitespace-only is neither a real answer nor the explicit empty string.
        if !self.expected_output.is_empty() && self.expected_output.trim_end().is_empty() {
            return Err("expected_output is whitespace-only".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceLimits {
    #[serde(default = "default_wall")]
    pub wall_time_ms: u64,
    #[serde(default = "default_memory")]
    pub memory_bytes: u64,
}

fn default_wall() -> u64 {
    DEFAULT_WALL_TIME_MS
}

fn default_memory() -> u64 {
    DEFAULT_MEMORY_BYTES
}

impl Default for ResourceLimits {
    fn default() -> Self {
        ResourceLimits {
            wall_time_ms: DEFAULT_WALL_TIME_MS,
            memory_bytes: DEFAULT_MEMORY_BYTES,
        }
    }
}

impl ResourceLimits {
    pub fn new(wall_time_ms: u64, memory_bytes: u64) -> Result<Self> {
        let limits = ResourceLimits {
            wall_time_ms,
            memory_bytes,
        };
        limits.validate().map_err(Error::Validation)?;
        Ok(limits)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.wall_time_ms < MIN_WALL_TIME_MS {
            return Err(format!(
                "wall_time_ms {} is below the {MIN_WALL_TIME_MS} ms floor",
                self.wall_time_ms
            ));
        }
        if self.memory_bytes < MIN_MEMORY_BYTES {
            return Err(format!(
                "memory_bytes {} is below the {MIN_MEMORY_BYTES} byte floor",
                self.memory_bytes
            ));
        }
        Ok(())
    }

    /// Applies run-level overrides on top of per-task limits.
    pub fn with_overrides(self, wall_time_ms: Option<u64>, memory_bytes: Option<u64>) -> Self {
        ResourceLimits {
            wall_time_ms: wall_time_ms.unwrap_or(self.wall_time_ms),
            memory_bytes: memory_bytes.unwrap_or(self.memory_bytes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub question: String,
    pub test_cases: Vec<TestCase>,
    #[serde(default)]
    pub limits: ResourceLimits,
}

impl Task {
    pub fn validate(&self) -> Result<()> {
        if self.test_cases.is_empty() {
            return Err(Error::Validation(format!(
                "task `{}` has no test cases",
                self.task_id
            )));
        }
        self.limits
            .validate()
            .map_err(|m| Error::Validation(format!("task `{}`: {m}", self.task_id)))?;
        for (i, tc) in self.test_cases.iter().enumerate() {
            tc.validate().map_err(|m| {
                Error::Validation(format!("task `{}` test case {i}: {m}", self.task_id))
            })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub dataset_id: String,
    pub tasks: Vec<Task>,
}

impl Dataset {
    pub fn new(dataset_id: impl Into<String>, tasks: Vec<Task>) -> Result<Self> {
        let dataset = Dataset {
            dataset_id: dataset_id.into(),
            tasks,
        };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for task in &self.tasks {
            if !seen.insert(task.task_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate task_id `{}`",
                    task.task_id
                )));
            }
            task.validate()?;
        }
        Ok(())
    }

    pub fn task(&self, task_id: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Writes one task per line in the ingestion schema.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.tasks)
    }
}

/// One model's generated program for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub task_id: String,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<u32>,
    pub raw_response: String,
    pub source_code: String,
    /// The provider stopped generation at its length limit.
    #[serde(default)]
    pub truncated: bool,
}

impl Completion {
    pub fn from_response(
        task_id: impl Into<String>,
        model_id: impl Into<String>,
        raw_response: impl Into<String>,
    ) -> Self {
        let raw_response = raw_response.into();
        Completion {
            task_id: task_id.into(),
            model_id: model_id.into(),
            sample_index: None,
            source_code: extract_code(&raw_response),
            raw_response,
            truncated: false,
        }
    }
}

#[derive(Debug, Deserialize)]
struct CompletionRecord {
    task_id: String,
    model_id: String,
    #[serde(default)]
    sample_index: Option<u32>,
    raw_response: String,
    #[serde(default)]
    source_code: Option<String>,
    #[serde(default)]
    truncated: bool,
}

impl From<CompletionRecord> for Completion {
    fn from(r: CompletionRecord) -> Self {
        Completion {
            source_code: r
                .source_code
                .unwrap_or_else(|| extract_code(&r.raw_response)),
            task_id: r.task_id,
            model_id: r.model_id,
            sample_index: r.sample_index,
            raw_response: r.raw_response,
            truncated: r.truncated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadedCompletions {
    pub completions: Vec<Completion>,
    /// Indices into `completions` whose task_id is absent from the dataset.
    pub unknown_tasks: Vec<usize>,
}

/// Reads a JSON-lines file, skipping blank lines. Errors name the 1-based line.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(path, &text)
}

pub(crate) fn parse_jsonl<T: serde::de::DeserializeOwned>(
    path: &Path,
    text: &str,
) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::Ingest {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Loads a task file. The dataset id is the file stem.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let tasks: Vec<Task> = read_jsonl(path)?;
    let dataset_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(dataset_id, tasks)
}

/// Loads completions, extracting source code where the record does not
/// supply it. Records pointing at tasks missing from `dataset` are kept and
/// reported in [`LoadedCompletions::unknown_tasks`].
pub fn load_completions(path: &Path, dataset: Option<&Dataset>) -> Result<LoadedCompletions> {
    let records: Vec<CompletionRecord> = read_jsonl(path)?;
    let completions: Vec<Completion> = records.into_iter().map(Completion::from).collect();
    validate_completions(&completions)?;

    let mut unknown_tasks = Vec::new();
    if let Some(ds) = dataset {
        let known: HashSet<&str> = ds.tasks.iter().map(|t| t.task_id.as_str()).collect();
        for (i, c) in completions.iter().enumerate() {
            if !known.contains(c.task_id.as_str()) {
                log::warn!(
                    "completion {} for model `{}` references unknown task `{}`",
                    i,
                    c.model_id,
                    c.task_id
                );
                unknown_tasks.push(i);
            }
        }
    }
    Ok(LoadedCompletions {
        completions,
        unknown_tasks,
    })
}

/// A (task, model) pair may repeat only when every occurrence carries a
/// distinct sample index.
pub fn validate_completions(completions: &[Completion]) -> Result<()> {
    let mut seen: BTreeSet<(&str, &str, Option<u32>)> = BTreeSet::new();
    let mut unindexed: BTreeSet<(&str, &str)> = BTreeSet::new();
    let mut indexed: BTreeSet<(&str, &str)> = BTreeSet::new();
    for c in completions {
        let pair = (c.task_id.as_str(), c.model_id.as_str());
        if !seen.insert((pair.0, pair.1, c.sample_index)) {
            return Err(Error::Validation(format!(
                "duplicate completion for task `{}` model `{}`{}",
                pair.0,
                pair.1,
                c.sample_index
                    .map(|i| format!(" sample {i}"))
                    .unwrap_or_default()
            )));
        }
        match c.sample_index {
            None => unindexed.insert(pair),
            Some(_) => indexed.insert(pair),
        };
        if unindexed.contains(&pair) && indexed.contains(&pair) {
            return Err(Error::Validation(format!(
                "task `{}` model `{}` mixes indexed and unindexed samples",
                pair.0, pair.1
            )));
        }
    }
    Ok(())
}
