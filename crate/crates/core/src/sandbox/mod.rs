//! Isolated execution of one candidate program on one test case.
//!
//! Every run gets a fresh temporary working directory, an environment reduced
//! to an allowlist, an address-space cap, a CPU-time backstop, a wall-clock
//! timer that kills the whole process group, and (where the kernel permits) a
//! private network namespace. This is best-effort isolation for evaluating
//! model output, not a security boundary.

mod process;
mod traceback;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{ResourceLimits, TestCase};

pub use process::{network_isolation_available, resolve_program, NetworkIsolation};
pub use traceback::{
    classify_termination, parse_last_exception, ParsedException, ProcessExit, Stage, Termination,
    UNKNOWN_ERROR,
};

/// Slack allowed between the wall-clock limit and the measured time of a
/// killed program.
pub const ENFORCEMENT_SLACK_MS: u64 = 500;

pub const DEFAULT_MAX_OUTPUT_BYTES: usize = 16 << 20;

/// Outcome status, listed from highest to lowest precedence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Status {
    SandboxError,
    SyntaxFailure,
    MemoryLimitExceeded,
    TimeLimitExceeded,
    RuntimeFailure,
    WrongOutput,
    Pass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub status: Status,
    /// Standard output, kept for `Pass` and `WrongOutput`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actual_output: Option<String>,
    /// Set exactly when `status` is `RuntimeFailure`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exception_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exception_message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traceback: Option<String>,
    pub wall_time_ms: u64,
    #[serde(default)]
    pub peak_memory_bytes: Option<u64>,
}

impl ExecutionOutcome {
    pub fn with_status(status: Status) -> Self {
        ExecutionOutcome {
            status,
            actual_output: None,
            exception_name: None,
            exception_message: None,
            traceback: None,
            wall_time_ms: 0,
            peak_memory_bytes: None,
        }
    }

    pub fn runtime_failure(name: &str, message: &str) -> Self {
        ExecutionOutcome {
            exception_name: Some(name.to_string()),
            exception_message: Some(message.to_string()),
            ..Self::with_status(Status::RuntimeFailure)
        }
    }

    pub fn sandbox_error(message: impl Into<String>) -> Self {
        ExecutionOutcome {
            exception_message: Some(message.into()),
            ..Self::with_status(Status::SandboxError)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareMode {
    #[default]
    Exact,
    /// Decimal tokens compare within an absolute tolerance of 1e-6.
    Numeric,
}

pub const NUMERIC_TOLERANCE: f64 = 1e-6;

fn normalized_output(text: &str) -> Vec<&str> {
    let mut lines: Vec<&str> = text.lines().map(str::trim_end).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines
}

fn decimal(token: &str) -> Option<f64> {
    let body = token.strip_prefix(['-', '+']).unwrap_or(token);
    let (mantissa, exponent) = match body.split_once(['e', 'E']) {
        Some((m, e)) => (m, Some(e)),
        None => (body, None),
    };
    let digits_ok = {
        let (i, f) = mantissa.split_once('.').unwrap_or((mantissa, ""));
        !(i.is_empty() && f.is_empty())
            && i.bytes().all(|b| b.is_ascii_digit())
            && f.bytes().all(|b| b.is_ascii_digit())
    };
    let exp_ok = exponent.is_none_or(|e| {
        let e = e.strip_prefix(['-', '+']).unwrap_or(e);
        !e.is_empty() && e.bytes().all(|b| b.is_ascii_digit())
    });
    if digits_ok && exp_ok {
        token.parse().ok()
    } else {
        None
    }
}

/// Line-wise comparison after dropping trailing whitespace on every line and
/// trailing blank lines. Interior whitespace is significant in exact mode.
pub fn compare_output(actual: &str, expected: &str) -> bool {
    compare_output_with(actual, expected, CompareMode::Exact)
}

pub fn compare_output_with(actual: &str, expected: &str, mode: CompareMode) -> bool {
    let a = normalized_output(actual);
    let e = normalized_output(expected);
    if a.len() != e.len() {
        return false;
    }
    match mode {
        CompareMode::Exact => a == e,
        CompareMode::Numeric => a.iter().zip(&e).all(|(la, le)| {
            if la == le {
                return true;
            }
            let ta: Vec<&str> = la.split_whitespace().collect();
            let te: Vec<&str> = le.split_whitespace().collect();
            ta.len() == te.len()
                && ta.iter().zip(&te).all(|(x, y)| {
                    x == y
                        || matches!((decimal(x), decimal(y)), (Some(p), Some(q)) if (p - q).abs() <= NUMERIC_TOLERANCE)
                })
        }),
    }
}

/// How to run and syntax-check a program. `{file}` in an argv is replaced by
/// the program's file name (relative to the working directory); an argv
/// without `{file}` gets it appended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interpreter {
    pub run: Vec<String>,
    #[serde(default)]
    pub check: Option<Vec<String>>,
    #[serde(default = "default_file_name")]
    pub file_name: String,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
}

fn default_file_name() -> String {
    "solution.py".into()
}

const PYTHON_COMPILE_CHECK: &str =
    "import sys\nsrc = open(sys.argv[1], 'rb').read()\ncompile(src, sys.argv[1], 'exec')\n";

impl Default for Interpreter {
    fn default() -> Self {
        Interpreter::python("python3")
    }
}

impl Interpreter {
    /// A CPython interpreter with a compile-only pre-check.
    pub fn python(binary: &str) -> Self {
        let env = [
            ("PYTHONHASHSEED", "0"),
            ("PYTHONIOENCODING", "utf-8"),
            ("PYTHONDONTWRITEBYTECODE", "1"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        Interpreter {
            run: vec![binary.into(), "-s".into(), "{file}".into()],
            check: Some(vec![
                binary.into(),
                "-s".into(),
                "-c".into(),
                PYTHON_COMPILE_CHECK.into(),
                "{file}".into(),
            ]),
            file_name: default_file_name(),
            env,
        }
    }

    /// Parses a whitespace-separated command line. Commands whose program
    /// name starts with `python` get the CPython defaults.
    pub fn from_command_line(line: &str) -> crate::Result<Self> {
        let argv: Vec<String> = line.split_whitespace().map(String::from).collect();
        let Some(program) = argv.first() else {
            return Err(crate::Error::Config("empty interpreter command".into()));
        };
        let base = Path::new(program)
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut interp = if base.starts_with("python") {
            Interpreter::python(program)
        } else {
            Interpreter {
                run: Vec::new(),
                check: None,
                file_name: "solution".into(),
                env: BTreeMap::new(),
            }
        };
        if argv.len() > 1 || interp.check.is_none() {
            interp.run = argv;
        }
        Ok(interp)
    }

    fn argv(template: &[String], file: &str) -> Vec<String> {
        let mut argv: Vec<String> = template.iter().map(|a| a.replace("{file}", file)).collect();
        if !template.iter().any(|a| a.contains("{file}")) {
            argv.push(file.to_string());
        }
        argv
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxConfig {
    #[serde(default)]
    pub interpreter: Interpreter,
    #[serde(default)]
    pub compare: CompareMode,
    #[serde(default = "default_max_output")]
    pub max_output_bytes: usize,
    #[serde(default)]
    pub network: NetworkIsolation,
    /// When set, each execution's stdin/stdout/stderr/outcome is kept here.
    #[serde(default)]
    pub artifact_dir: Option<PathBuf>,
}

fn default_max_output() -> usize {
    DEFAULT_MAX_OUTPUT_BYTES
}

impl Default for SandboxConfig {
    fn default() -> Self {
        SandboxConfig {
            interpreter: Interpreter::default(),
            compare: CompareMode::Exact,
            max_output_bytes: DEFAULT_MAX_OUTPUT_BYTES,
            network: NetworkIsolation::BestEffort,
            artifact_dir: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sandbox {
    pub config: SandboxConfig,
}

struct Workspace {
    dir: tempfile::TempDir,
    env: BTreeMap<String, String>,
}

impl Sandbox {
    pub fn new(config: SandboxConfig) -> Self {
        Sandbox { config }
    }

    fn workspace(&self, source: &str) -> std::io::Result<Workspace> {
        let dir = tempfile::Builder::new().prefix("halluscope-").tempdir()?;
        fs::write(dir.path().join(&self.config.interpreter.file_name), source)?;
        let home = dir.path().to_string_lossy().into_owned();
        let mut env: BTreeMap<String, String> = [
            ("PATH", "/usr/local/bin:/usr/bin:/bin"),
            ("LANG", "C.UTF-8"),
            ("LC_ALL", "C.UTF-8"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        env.insert("HOME".into(), home.clone());
        env.insert("TMPDIR".into(), home);
        env.extend(self.config.interpreter.env.clone());
        Ok(Workspace { dir, env })
    }

    fn spawn(
        &self,
        ws: &Workspace,
        argv_template: &[String],
        stdin: &[u8],
        limits: &ResourceLimits,
        stage: Stage,
    ) -> std::io::Result<process::RawRun> {
        let argv = Interpreter::argv(argv_template, &self.config.interpreter.file_name);
        process::run(&process::ProcessSpec {
            argv: &argv,
            cwd: ws.dir.path(),
            env: &ws.env,
            stdin,
            wall_time_ms: limits.wall_time_ms,
            memory_bytes: limits.memory_bytes,
            max_output_bytes: self.config.max_output_bytes,
            network: self.config.network,
            stage,
        })
    }

    /// Compile-only check. `None` when the program parses (or the interpreter
    /// has no check command); otherwise the outcome every test would get.
    pub fn check_syntax(
        &self,
        source_code: &str,
        limits: &ResourceLimits,
    ) -> Option<ExecutionOutcome> {
        let check = self.config.interpreter.check.as_ref()?;
        let ws = match self.workspace(source_code) {
            Ok(ws) => ws,
            Err(e) => return Some(ExecutionOutcome::sandbox_error(format!("workspace: {e}"))),
        };
        let raw = match self.spawn(&ws, check, b"", limits, Stage::Compile) {
            Ok(raw) => raw,
            Err(e) => return Some(ExecutionOutcome::sandbox_error(e.to_string())),
        };
        let stderr = String::from_utf8_lossy(&raw.stderr);
        let term = classify_termination(&raw.exit, &stderr);
        if term.status == Status::Pass {
            return None;
        }
        Some(ExecutionOutcome {
            status: term.status,
            actual_output: None,
            exception_name: term.exception_name,
            exception_message: term.exception_message,
            traceback: term.traceback,
            wall_time_ms: raw.wall_time_ms,
            peak_memory_bytes: raw.exit.peak_rss_bytes,
        })
    }

    /// Runs the program on one test case without the compile pre-check.
    pub fn run(
        &self,
        source_code: &str,
        test: &TestCase,
        limits: &ResourceLimits,
    ) -> ExecutionOutcome {
        self.run_recorded(source_code, test, limits, None)
    }

    /// As [`run`](Self::run), storing artifacts under `artifact_key` when an
    /// artifact directory is configured.
    pub fn run_recorded(
        &self,
        source_code: &str,
        test: &TestCase,
        limits: &ResourceLimits,
        artifact_key: Option<&str>,
    ) -> ExecutionOutcome {
        let ws = match self.workspace(source_code) {
            Ok(ws) => ws,
            Err(e) => return ExecutionOutcome::sandbox_error(format!("workspace: {e}")),
        };
        let raw = match self.spawn(
            &ws,
            &self.config.interpreter.run,
            test.input.as_bytes(),
            limits,
            Stage::Run,
        ) {
            Ok(raw) => raw,
            Err(e) => return ExecutionOutcome::sandbox_error(e.to_string()),
        };
        let stdout = String::from_utf8_lossy(&raw.stdout).into_owned();
        let stderr = String::from_utf8_lossy(&raw.stderr).into_owned();
        let term = classify_termination(&raw.exit, &stderr);
        let (status, actual_output) = match term.status {
            Status::Pass
                if compare_output_with(&stdout, &test.expected_output, self.config.compare) =>
            {
                (Status::Pass, Some(stdout.clone()))
            }
            Status::Pass => (Status::WrongOutput, Some(stdout.clone())),
            other => (other, None),
        };
        let outcome = ExecutionOutcome {
            status,
            actual_output,
            exception_name: term.exception_name,
            exception_message: term.exception_message,
            traceback: term.traceback,
            wall_time_ms: raw.wall_time_ms,
            peak_memory_bytes: raw.exit.peak_rss_bytes,
        };
        if let (Some(dir), Some(key)) = (&self.config.artifact_dir, artifact_key) {
            if let Err(e) = write_artifacts(&dir.join(key), test, &stdout, &stderr, &outcome) {
                log::warn!("could not store artifacts for {key}: {e}");
            }
        }
        outcome
    }

    /// Compile check followed by the run: the full single-test execution.
    pub fn execute(
        &self,
        source_code: &str,
        test: &TestCase,
        limits: &ResourceLimits,
    ) -> ExecutionOutcome {
        if let Err(m) = limits.validate() {
            return ExecutionOutcome::sandbox_error(m);
        }
        if let Some(failed) = self.check_syntax(source_code, limits) {
            return failed;
        }
        self.run(source_code, test, limits)
    }
}

fn write_artifacts(
    dir: &Path,
    test: &TestCase,
    stdout: &str,
    stderr: &str,
    outcome: &ExecutionOutcome,
) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("stdin"), &test.input)?;
    fs::write(dir.join("stdout"), stdout)?;
    fs::write(dir.join("stderr"), stderr)?;
    let json = serde_json::to_string_pretty(outcome).map_err(std::io::Error::other)?;
    fs::write(dir.join("outcome.json"), json)
}

/// One-shot execution with default sandbox settings and the given interpreter.
pub fn execute(
    source_code: &str,
    test: &TestCase,
    limits: &ResourceLimits,
    interpreter: &Interpreter,
) -> ExecutionOutcome {
    Sandbox::new(SandboxConfig {
        interpreter: interpreter.clone(),
        ..SandboxConfig::default()
    })
    .execute(source_code, test, limits)
}
