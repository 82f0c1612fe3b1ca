//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::aggregate::{Cooccurrence, SampleProfile, StateRecord, DEFAULT_TOP_M};
use crate::bench::{self, BenchmarkManifest, DEFAULT_THRESHOLD_K};
use crate::corpus::{load_completions, load_dataset, read_jsonl, Completion, Dataset};
use crate::degeneration::DegenerationConfig;
use crate::error::{Error, Result};
use crate::gateway::{fetch_all, ProviderConfig};
use crate::pipeline::{self, EvaluationFile, Outputs, ValidateOptions, Validated};
use crate::report::{self, HrReport, IndicatorMode, Weighting};
use crate::sandbox::{CompareMode, Interpreter, NetworkIsolation, SandboxConfig};
use crate::scalar::Scalar;
use crate::taxonomy::ClassificationTable;
use crate::ExactRate;

#[derive(Debug, Parser)]
#[command(
    name = "halluscope",
    version,
    about = "Detect, classify and measure hallucinations in generated code"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .map_err(|_| format!("unrecognized value `{s}`"))
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Parallel sandbox executions and provider requests.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Interpreter command line, e.g. `python3`.
    #[arg(long, global = true)]
    pub interpreter: Option<String>,
    #[arg(long = "limits.wall-ms", global = true)]
    pub wall_ms: Option<u64>,
    #[arg(long = "limits.mem-bytes", global = true)]
    pub mem_bytes: Option<u64>,
    #[arg(long, global = true)]
    pub threshold_k: Option<u64>,
    #[arg(long, global = true)]
    pub classification_table: Option<PathBuf>,
    /// Labels kept per sample profile.
    #[arg(long, global = true)]
    pub top_m: Option<usize>,
    #[arg(long, global = true)]
    pub fail_fast: bool,
    /// Omit timings and timestamps so repeated runs are byte-identical.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[arg(long, global = true, value_parser = parse_enum::<CompareMode>)]
    pub compare: Option<CompareMode>,
    #[arg(long, global = true, value_parser = parse_enum::<NetworkIsolation>)]
    pub network: Option<NetworkIsolation>,
    /// Keep stdin/stdout/stderr/outcome of every execution here.
    #[arg(long, global = true)]
    pub artifacts_dir: Option<PathBuf>,
    #[arg(long = "degeneration.repeat-count", global = true)]
    pub repeat_count: Option<usize>,
    #[arg(long = "degeneration.block-size", global = true)]
    pub block_size: Option<usize>,
    #[arg(long = "degeneration.enum-count", global = true)]
    pub enum_count: Option<usize>,
    #[arg(long = "degeneration.parse-valid-frac", global = true)]
    pub parse_valid_frac: Option<f64>,
    #[arg(long = "degeneration.window-frac", global = true)]
    pub window_frac: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub indicator: Option<IndicatorMode>,
    #[arg(long, global = true, value_enum)]
    pub weighting: Option<Weighting>,
    /// Rate arithmetic over exact rationals instead of f64.
    #[arg(long, global = true)]
    pub exact: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SourceArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Pre-generated completions (JSONL).
    #[arg(long, conflicts_with = "provider")]
    pub completions: Option<PathBuf>,
    /// Provider configuration (JSON) to fetch completions from.
    #[arg(long)]
    pub provider: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute and classify completions; writes states.jsonl.
    Validate(SourceArgs),
    /// Aggregate states into profiles, frequencies and co-occurrence.
    Identify {
        #[arg(long)]
        states: Option<PathBuf>,
    },
    /// Threshold profiles into a typed benchmark.
    BuildBench {
        #[arg(long)]
        profiles: Option<PathBuf>,
    },
    /// Score models against a benchmark and render the report.
    Evaluate {
        #[arg(long)]
        benchmark: Option<PathBuf>,
        /// Profiles of the models under evaluation.
        #[arg(long, conflicts_with_all = ["dataset", "completions", "provider"])]
        profiles: Option<PathBuf>,
        #[command(flatten)]
        source: SourceArgs,
    },
    /// Render evaluation cells and co-occurrence as tables.
    Report {
        #[arg(long)]
        cells: Option<PathBuf>,
        #[arg(long)]
        cooccurrence: Option<PathBuf>,
    },
    /// All stages in one run.
    Pipeline(SourceArgs),
}

/// Settings readable from `--config`. Paths are relative to the working
/// directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<PathBuf>,
    pub completions: Option<PathBuf>,
    pub provider: Option<ProviderConfig>,
    pub out_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub interpreter: Option<Interpreter>,
    pub limits: LimitOverrides,
    pub classification_table: Option<PathBuf>,
    pub threshold_k: Option<u64>,
    pub top_m: Option<usize>,
    pub degeneration: Option<DegenerationConfig>,
    pub indicator: Option<IndicatorMode>,
    pub weighting: Option<Weighting>,
    pub fail_fast: Option<bool>,
    pub deterministic: Option<bool>,
    pub compare: Option<CompareMode>,
    pub network: Option<NetworkIsolation>,
    pub artifacts_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitOverrides {
    pub wall_ms: Option<u64>,
    pub mem_bytes: Option<u64>,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub jobs: usize,
    pub sandbox: SandboxConfig,
    pub limits: LimitOverrides,
    pub classification_table: Option<PathBuf>,
    #[serde(skip)]
    pub table: ClassificationTable,
    pub threshold_k: u64,
    pub top_m: usize,
    pub degeneration: DegenerationConfig,
    pub indicator: IndicatorMode,
    pub weighting: Weighting,
    pub fail_fast: bool,
    pub deterministic: bool,
    pub exact: bool,
    #[serde(skip)]
    file: FileConfig,
}

impl RunConfig {
    pub fn resolve(g: &GlobalArgs) -> Result<Self> {
        let file: FileConfig = match &g.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };
        let interpreter = match (&g.interpreter, &file.interpreter) {
            (Some(line), _) => Interpreter::from_command_line(line)?,
            (None, Some(i)) => i.clone(),
            (None, None) => Interpreter::default(),
        };
        let classification_table = g
            .classification_table
            .clone()
            .or_else(|| file.classification_table.clone());
        let table = match &classification_table {
            Some(p) => ClassificationTable::load(p)?,
            None => ClassificationTable::default(),
        };
        let mut degeneration = file.degeneration.unwrap_or_default();
        if let Some(v) = g.repeat_count {
            degeneration.repeat_count = v;
        }
        if let Some(v) = g.block_size {
            degeneration.block_size = v;
        }
        if let Some(v) = g.enum_count {
            degeneration.enum_count = v;
        }
        if let Some(v) = g.parse_valid_frac {
            degeneration.parse_valid_frac = v;
        }
        if let Some(v) = g.window_frac {
            degeneration.window_frac = v;
        }
        degeneration.validate()?;
        let threshold_k = g
            .threshold_k
            .or(file.threshold_k)
            .unwrap_or(DEFAULT_THRESHOLD_K);
        if threshold_k == 0 {
            return Err(Error::Config(
                "threshold_k must be a positive integer".into(),
            ));
        }
        let jobs = g.jobs.or(file.jobs).unwrap_or_else(pipeline::default_jobs);
        if jobs == 0 {
            return Err(Error::Config("jobs must be positive".into()));
        }
        let top_m = g.top_m.or(file.top_m).unwrap_or(DEFAULT_TOP_M);
        if top_m == 0 {
            return Err(Error::Config("top_m must be positive".into()));
        }
        Ok(RunConfig {
            out_dir: g
                .out_dir
                .clone()
                .or_else(|| file.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from("out")),
            jobs,
            sandbox: SandboxConfig {
                interpreter,
                compare: g.compare.or(file.compare).unwrap_or_default(),
                network: g.network.or(file.network).unwrap_or_default(),
                artifact_dir: g
                    .artifacts_dir
                    .clone()
                    .or_else(|| file.artifacts_dir.clone()),
                ..SandboxConfig::default()
            },
            limits: LimitOverrides {
                wall_ms: g.wall_ms.or(file.limits.wall_ms),
                mem_bytes: g.mem_bytes.or(file.limits.mem_bytes),
            },
            classification_table,
            table,
            threshold_k,
            top_m,
            degeneration,
            indicator: g.indicator.or(file.indicator).unwrap_or_default(),
            weighting: g.weighting.or(file.weighting).unwrap_or_default(),
            fail_fast: g.fail_fast || file.fail_fast.unwrap_or(false),
            deterministic: g.deterministic || file.deterministic.unwrap_or(false),
            exact: g.exact,
            file,
        })
    }

    fn validate_options(&self) -> ValidateOptions {
        ValidateOptions {
            sandbox: self.sandbox.clone(),
            detector: self.degeneration,
            table: self.table.clone(),
            wall_time_ms: self.limits.wall_ms,
            memory_bytes: self.limits.mem_bytes,
            jobs: self.jobs,
            fail_fast: self.fail_fast,
        }
    }

    fn default_input(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out_dir.join(name))
    }
}

enum Source {
    Completions(PathBuf),
    Provider(Box<ProviderConfig>),
}

struct Inputs {
    dataset_path: PathBuf,
    dataset: Dataset,
    completions: Vec<Completion>,
    source: Source,
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{what} `{}` does not exist",
            path.display()
        )))
    }
}

fn load_inputs(cfg: &RunConfig, args: &SourceArgs) -> Result<Inputs> {
    let dataset_path = args
        .dataset
        .clone()
        .or_else(|| cfg.file.dataset.clone())
        .ok_or_else(|| Error::Config("no dataset given (--dataset)".into()))?;
    require_file(&dataset_path, "dataset")?;
    let dataset = load_dataset(&dataset_path)?;

    let from_flags = match (&args.completions, &args.provider) {
        (Some(c), None) => Some(Source::Completions(c.clone())),
        (None, Some(p)) => {
            require_file(p, "provider config")?;
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let provider: ProviderConfig = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            Some(Source::Provider(Box::new(provider)))
        }
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "--completions and --provider are exclusive".into(),
            ))
        }
        (None, None) => None,
    };
    let source = match from_flags {
        Some(s) => s,
        None => match (&cfg.file.completions, &cfg.file.provider) {
            (Some(c), None) => Source::Completions(c.clone()),
            (None, Some(p)) => Source::Provider(Box::new(p.clone())),
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "configuration names both completions and a provider".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "no completion source given (--completions or --provider)".into(),
                ))
            }
        },
    };
    let completions = match &source {
        Source::Completions(path) => {
            require_file(path, "completions")?;
            let loaded = load_completions(path, Some(&dataset))?;
            loaded.completions
        }
        Source::Provider(provider) => {
            let mut out = Vec::new();
            for c in fetch_all(&dataset.tasks, provider)? {
                out.push(c?);
            }
            out
        }
    };
    Ok(Inputs {
        dataset_path,
        dataset,
        completions,
        source,
    })
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

struct RunLog {
    command: &'static str,
    started_ms: u128,
    inputs: serde_json::Map<String, serde_json::Value>,
    counts: serde_json::Map<String, serde_json::Value>,
    warnings: Vec<String>,
}

impl RunLog {
    fn new(command: &'static str) -> Self {
        RunLog {
            command,
            started_ms: now_ms(),
            inputs: Default::default(),
            counts: Default::default(),
            warnings: Vec::new(),
        }
    }

    fn input(&mut self, key: &str, path: &Path) {
        self.inputs
            .insert(key.into(), json!(path.display().to_string()));
    }

    fn count(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.counts.insert(key.into(), value.into());
    }

    fn stage(
        self,
        cfg: &RunConfig,
        out: &mut Outputs,
        provider: Option<&ProviderConfig>,
    ) -> Result<()> {
        let mut run = json!({
            "tool": "halluscope",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "inputs": self.inputs,
            "config": cfg,
            "classification_table": cfg.table,
            "counts": self.counts,
            "warnings": self.warnings,
        });
        if let Some(p) = provider {
            run["provider"] = json!({
                "endpoint": p.endpoint,
                "model_id": p.model_id,
                "template": p.template,
                "sampling": p.sampling,
            });
        }
        if cfg.deterministic {
            // Host- and location-dependent settings would break byte equality.
            if let Some(c) = run["config"].as_object_mut() {
                c.remove("out_dir");
                c.remove("jobs");
            }
        } else {
            run["started_at_unix_ms"] = json!(self.started_ms as u64);
            run["finished_at_unix_ms"] = json!(now_ms() as u64);
        }
        out.stage(pipeline::RUN, &pipeline::json_bytes(&run)?)
    }
}

fn stage_validated(cfg: &RunConfig, out: &mut Outputs, v: &Validated) -> Result<()> {
    out.stage(pipeline::STATES, &pipeline::jsonl_bytes(&v.records)?)?;
    if !cfg.deterministic {
        out.stage(pipeline::TIMINGS, &pipeline::jsonl_bytes(&v.timings)?)?;
    }
    Ok(())
}

fn stage_identification(out: &mut Outputs, id: &pipeline::Identification) -> Result<()> {
    out.stage(pipeline::PROFILES, &pipeline::jsonl_bytes(&id.profiles)?)?;
    out.stage(
        pipeline::FREQUENCIES,
        &pipeline::json_bytes(&id.frequencies)?,
    )?;
    out.stage(
        pipeline::COOCCURRENCE,
        &pipeline::json_bytes(&id.cooccurrence)?,
    )?;
    Ok(())
}

fn stage_manifest(out: &mut Outputs, manifest: &BenchmarkManifest) -> Result<()> {
    out.stage(pipeline::BENCHMARK, &bench::manifest_jsonl(manifest)?)?;
    out.stage(pipeline::BENCHMARK_CSV, &bench::summary_csv(manifest)?)
}

fn render_into<T: Scalar>(
    out: &mut Outputs,
    file: &EvaluationFile,
    weighting: Weighting,
) -> Result<usize> {
    let cells = file
        .cells
        .iter()
        .map(|c| c.to_cell::<T>())
        .collect::<Result<Vec<_>>>()?;
    let mut report = HrReport::from_cells(cells, weighting)?;
    report.cross_hits = file.cross_hits.clone();
    out.stage(pipeline::REPORT_MD, report.to_markdown().as_bytes())?;
    out.stage(pipeline::REPORT_CSV, report.to_csv()?.as_bytes())?;
    out.stage(
        pipeline::REPORT_JSON,
        &pipeline::json_bytes(&report.to_json())?,
    )?;
    Ok(report.rows.len())
}

fn evaluate_into<T: Scalar>(
    cfg: &RunConfig,
    out: &mut Outputs,
    manifest: &BenchmarkManifest,
    profiles: &[SampleProfile],
    log: &mut RunLog,
) -> Result<()> {
    if manifest.entries.is_empty() {
        return Err(Error::Report("benchmark has no entries to evaluate".into()));
    }
    let evaluation = report::evaluate::<T>(manifest, profiles, cfg.indicator)?;
    if evaluation.cells.is_empty() {
        return Err(Error::Report("no profiles for any model".into()));
    }
    let file = EvaluationFile::from_evaluation(&evaluation);
    out.stage(pipeline::CELLS, &pipeline::json_bytes(&file)?)?;
    let rows = render_into::<T>(out, &file, cfg.weighting)?;
    log.count("models", rows);
    log.count("missing_samples", file.missing.len());
    if !file.missing.is_empty() {
        log.warnings.push(format!(
            "{} benchmark samples have no usable profile",
            file.missing.len()
        ));
    }
    Ok(())
}

fn evaluate_dispatch(
    cfg: &RunConfig,
    out: &mut Outputs,
    manifest: &BenchmarkManifest,
    profiles: &[SampleProfile],
    log: &mut RunLog,
) -> Result<()> {
    if cfg.exact {
        evaluate_into::<ExactRate>(cfg, out, manifest, profiles, log)
    } else {
        evaluate_into::<f64>(cfg, out, manifest, profiles, log)
    }
}

fn fault_check(faults: usize) -> Result<()> {
    if faults > 0 {
        Err(Error::Harness(format!(
            "{faults} executions ended in a sandbox error; the run is invalid"
        )))
    } else {
        Ok(())
    }
}

fn provider_of(inputs: &Inputs) -> Option<&ProviderConfig> {
    match &inputs.source {
        Source::Provider(p) => Some(p),
        Source::Completions(_) => None,
    }
}

fn log_inputs(log: &mut RunLog, inputs: &Inputs) {
    log.input("dataset", &inputs.dataset_path);
    if let Source::Completions(p) = &inputs.source {
        log.input("completions", p);
    }
    log.count("tasks", inputs.dataset.len());
    log.count("completions", inputs.completions.len());
}

fn run_validate(cfg: &RunConfig, args: &SourceArgs) -> Result<()> {
    let inputs = load_inputs(cfg, args)?;
    let mut out = Outputs::new(&cfg.out_dir)?;
    let mut log = RunLog::new("validate");
    log_inputs(&mut log, &inputs);
    let v = pipeline::validate(
        &inputs.dataset,
        &inputs.completions,
        &cfg.validate_options(),
    )?;
    log.count("records", v.records.len());
    log.count("harness_faults", v.harness_faults());
    stage_validated(cfg, &mut out, &v)?;
    log.stage(cfg, &mut out, provider_of(&inputs))?;
    out.commit()?;
    fault_check(v.harness_faults())
}

fn run_identify(cfg: &RunConfig, states: &Option<PathBuf>) -> Result<()> {
    let path = cfg.default_input(states, pipeline::STATES);
    require_file(&path, "states file")?;
    let records: Vec<StateRecord> = read_jsonl(&path)?;
    let id = pipeline::identify(&records, cfg.top_m);
    let mut out = Outputs::new(&cfg.out_dir)?;
    let mut log = RunLog::new("identify");
    log.input("states", &path);
    log.count("profiles", id.profiles.len());
    stage_identification(&mut out, &id)?;
    out.stage(
        pipeline::COOCCURRENCE_MD,
        pipeline::cooccurrence_markdown(&id.cooccurrence).as_bytes(),
    )?;
    log.stage(cfg, &mut out, None)?;
    out.commit()
}

fn run_build_bench(cfg: &RunConfig, profiles: &Option<PathBuf>) -> Result<()> {
    let path = cfg.default_input(profiles, pipeline::PROFILES);
    require_file(&path, "profiles file")?;
    let profiles: Vec<SampleProfile> = read_jsonl(&path)?;
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let mut manifest = bench::build(&profiles, cfg.threshold_k)?;
    manifest.provenance.run_ids = vec![pipeline::content_id(&bytes)];
    let mut out = Outputs::new(&cfg.out_dir)?;
    let mut log = RunLog::new("build-bench");
    log.input("profiles", &path);
    log.count("entries", manifest.entries.len());
    log.warnings.extend(manifest.warnings.iter().cloned());
    stage_manifest(&mut out, &manifest)?;
    log.stage(cfg, &mut out, None)?;
    out.commit()
}

fn run_evaluate(
    cfg: &RunConfig,
    benchmark: &Option<PathBuf>,
    profiles: &Option<PathBuf>,
    source: &SourceArgs,
) -> Result<()> {
    let bench_path = cfg.default_input(benchmark, pipeline::BENCHMARK);
    require_file(&bench_path, "benchmark")?;
    let manifest = bench::import_manifest(&bench_path)?;
    let mut out = Outputs::new(&cfg.out_dir)?;
    let mut log = RunLog::new("evaluate");
    log.input("benchmark", &bench_path);
    let has_source =
        source.dataset.is_some() || source.completions.is_some() || source.provider.is_some();
    let (profiles, faults, provider) = if has_source {
        let inputs = load_inputs(cfg, source)?;
        log_inputs(&mut log, &inputs);
        let wanted: std::collections::BTreeSet<&str> = manifest
            .entries
            .iter()
            .map(|e| e.task_id.as_str())
            .collect();
        let completions: Vec<Completion> = inputs
            .completions
            .iter()
            .filter(|c| wanted.contains(c.task_id.as_str()))
            .cloned()
            .collect();
        let v = pipeline::validate(&inputs.dataset, &completions, &cfg.validate_options())?;
        let profiles = crate::aggregate::build_profiles(&v.records, cfg.top_m);
        (profiles, v.harness_faults(), provider_of(&inputs).cloned())
    } else {
        let path = cfg.default_input(profiles, pipeline::PROFILES);
        require_file(&path, "profiles file")?;
        log.input("profiles", &path);
        (read_jsonl::<SampleProfile>(&path)?, 0, None)
    };
    evaluate_dispatch(cfg, &mut out, &manifest, &profiles, &mut log)?;
    log.stage(cfg, &mut out, provider.as_ref())?;
    out.commit()?;
    fault_check(faults)
}

fn run_report(cfg: &RunConfig, cells: &Option<PathBuf>, cooc: &Option<PathBuf>) -> Result<()> {
    let path = cfg.default_input(cells, pipeline::CELLS);
    require_file(&path, "cells file")?;
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file: EvaluationFile = serde_json::from_str(&text)?;
    let mut out = Outputs::new(&cfg.out_dir)?;
    let mut log = RunLog::new("report");
    log.input("cells", &path);
    let rows = if cfg.exact {
        render_into::<ExactRate>(&mut out, &file, cfg.weighting)?
    } else {
        render_into::<f64>(&mut out, &file, cfg.weighting)?
    };
    log.count("models", rows);
    let cooc_path = match cooc {
        Some(p) => {
            require_file(p, "co-occurrence file")?;
            Some(p.clone())
        }
        None => Some(cfg.out_dir.join(pipeline::COOCCURRENCE)).filter(|p| p.is_file()),
    };
    if let Some(p) = cooc_path {
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let items: Vec<Cooccurrence> = serde_json::from_str(&text)?;
        out.stage(
            pipeline::COOCCURRENCE_MD,
            pipeline::cooccurrence_markdown(&items).as_bytes(),
        )?;
        log.input("cooccurrence", &p);
    }
    log.stage(cfg, &mut out, None)?;
    out.commit()
}

fn run_pipeline(cfg: &RunConfig, args: &SourceArgs) -> Result<()> {
    let inputs = load_inputs(cfg, args)?;
    let mut out = Outputs::new(&cfg.out_dir)?;
    let mut log = RunLog::new("pipeline");
    log_inputs(&mut log, &inputs);
    let v = pipeline::validate(
        &inputs.dataset,
        &inputs.completions,
        &cfg.validate_options(),
    )?;
    log.count("records", v.records.len());
    log.count("harness_faults", v.harness_faults());
    stage_validated(cfg, &mut out, &v)?;
    let id = pipeline::identify(&v.records, cfg.top_m);
    stage_identification(&mut out, &id)?;
    out.stage(
        pipeline::COOCCURRENCE_MD,
        pipeline::cooccurrence_markdown(&id.cooccurrence).as_bytes(),
    )?;
    log.count("profiles", id.profiles.len());
    let mut manifest = bench::build(&id.profiles, cfg.threshold_k)?;
    manifest.provenance.run_ids = vec![pipeline::content_id(&pipeline::jsonl_bytes(&id.profiles)?)];
    log.count("entries", manifest.entries.len());
    log.warnings.extend(manifest.warnings.iter().cloned());
    stage_manifest(&mut out, &manifest)?;
    evaluate_dispatch(cfg, &mut out, &manifest, &id.profiles, &mut log)?;
    log.stage(cfg, &mut out, provider_of(&inputs))?;
    out.commit()?;
    fault_check(v.harness_faults())
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::resolve(&cli.global)?;
    match &cli.command {
        Command::Validate(args) => run_validate(&cfg, args),
        Command::Identify { states } => run_identify(&cfg, states),
        Command::BuildBench { profiles } => run_build_bench(&cfg, profiles),
        Command::Evaluate {
            benchmark,
            profiles,
            source,
        } => run_evaluate(&cfg, benchmark, profiles, source),
        Command::Report {
            cells,
            cooccurrence,
        } => run_report(&cfg, cells, cooccurrence),
        Command::Pipeline(args) => run_pipeline(&cfg, args),
    }
}

/// Machine-readable error record printed on stderr.
pub fn error_json(kind: &str, message: &str, exit_code: i32) -> String {
    json!({ "error": { "kind": kind, "message": message, "exit_code": exit_code } }).to_string()
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            eprintln!("{}", error_json("usage", e.to_string().trim(), 1));
            return 1;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("{}", error_json(e.kind(), &e.to_string(), code));
            code
        }
    }
}
