//! Interpreter stderr parsing and termination classification.

use serde::{Deserialize, Serialize};

use super::Status;

pub const UNKNOWN_ERROR: &str = "UnknownError";

const SYNTAX_EXCEPTIONS: [&str; 3] = ["SyntaxError", "IndentationError", "TabError"];

const TRACEBACK_HEADER: &str = "Traceback (most recent call last):";

/// Which invocation produced the exit record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// Parse/compile only, before any input is fed.
    Compile,
    Run,
}

/// How a child process ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessExit {
    pub stage: Stage,
    pub exit_code: Option<i32>,
    pub signal: Option<i32>,
    /// The harness killed the process when its wall-clock budget ran out.
    pub timed_out: bool,
    pub peak_rss_bytes: Option<u64>,
    pub memory_limit_bytes: u64,
}

impl ProcessExit {
    pub fn clean(stage: Stage) -> Self {
        ProcessExit {
            stage,
            exit_code: Some(0),
            signal: None,
            timed_out: false,
            peak_rss_bytes: None,
            memory_limit_bytes: u64::MAX,
        }
    }

    pub fn succeeded(&self) -> bool {
        self.exit_code == Some(0) && self.signal.is_none() && !self.timed_out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedException {
    /// Unqualified exception class name.
    pub name: String,
    pub message: String,
    /// Text of the last traceback block, header through exception line.
    pub traceback: String,
    /// No traceback header: the interpreter rejected the file before running it.
    pub before_execution: bool,
}

fn exception_line(line: &str) -> Option<(String, String)> {
    if line.starts_with(char::is_whitespace) {
        return None;
    }
    let (head, message) = match line.split_once(':') {
        Some((h, m)) => (h, m.trim_start().to_string()),
        None => (line.trim_end(), String::new()),
    };
    let valid = !head.is_empty()
        && head.split('.').all(|part| {
            let mut chars = part.chars();
            chars
                .next()
                .is_some_and(|c| c == '_' || c.is_ascii_alphabetic())
                && chars.all(|c| c == '_' || c.is_ascii_alphanumeric())
        });
    if !valid {
        return None;
    }
    let name = head.rsplit('.').next().unwrap_or(head).to_string();
    Some((name, message))
}

/// Extracts the final exception from interpreter stderr. With chained
/// tracebacks the last block wins.
pub fn parse_last_exception(stderr: &str) -> Option<ParsedException> {
    let lines: Vec<&str> = stderr.lines().collect();
    if let Some(header) = lines.iter().rposition(|l| l.trim_end() == TRACEBACK_HEADER) {
        let (offset, (name, message)) = lines[header + 1..]
            .iter()
            .enumerate()
            .find_map(|(i, l)| exception_line(l).map(|e| (i, e)))?;
        let end = header + 1 + offset;
        return Some(ParsedException {
            name,
            message,
            traceback: lines[header..=end].join("\n"),
            before_execution: false,
        });
    }
    let (idx, (name, message)) = lines
        .iter()
        .enumerate()
        .rev()
        .filter(|(_, l)| !l.trim().is_empty())
        .find_map(|(i, l)| exception_line(l).map(|e| (i, e)))?;
    let start = lines[..idx]
        .iter()
        .rposition(|l| l.trim_start().starts_with("File \""))
        .unwrap_or(idx);
    Some(ParsedException {
        name,
        message,
        traceback: lines[start..=idx].join("\n"),
        before_execution: true,
    })
}

/// Status and exception fields derived from a finished process. A clean exit
/// is reported as `Pass`; the caller still has to compare the output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Termination {
    pub status: Status,
    pub exception_name: Option<String>,
    pub exception_message: Option<String>,
    pub traceback: Option<String>,
}

fn memory_evidence(raw: &ProcessExit, stderr: &str) -> bool {
    let near_cap = raw
        .peak_rss_bytes
        .is_some_and(|rss| rss.saturating_mul(10) >= raw.memory_limit_bytes.saturating_mul(9));
    let killed = raw.signal.is_some() && !raw.timed_out;
    let allocator_msg = ["Cannot allocate memory", "out of memory", "std::bad_alloc"]
        .iter()
        .any(|m| stderr.contains(m));
    (killed && near_cap) || allocator_msg
}

pub fn classify_termination(raw: &ProcessExit, stderr: &str) -> Termination {
    let parsed = parse_last_exception(stderr);
    let detail = |p: &Option<ParsedException>| {
        p.as_ref().map(|p| {
            if p.message.is_empty() {
                p.name.clone()
            } else {
                format!("{}: {}", p.name, p.message)
            }
        })
    };
    let other = |status: Status, p: &Option<ParsedException>| Termination {
        status,
        exception_name: None,
        exception_message: detail(p),
        traceback: p.as_ref().map(|p| p.traceback.clone()),
    };
    let name_is = |names: &[&str]| {
        parsed
            .as_ref()
            .is_some_and(|p| names.contains(&p.name.as_str()))
    };

    if raw.succeeded() {
        return other(Status::Pass, &None);
    }
    if name_is(&["MemoryError"]) || memory_evidence(raw, stderr) {
        return other(Status::MemoryLimitExceeded, &parsed);
    }
    if raw.timed_out || raw.signal == Some(libc::SIGXCPU) {
        return other(Status::TimeLimitExceeded, &parsed);
    }
    if raw.stage == Stage::Compile {
        return other(Status::SyntaxFailure, &parsed);
    }
    if name_is(&SYNTAX_EXCEPTIONS) && parsed.as_ref().is_some_and(|p| p.before_execution) {
        return other(Status::SyntaxFailure, &parsed);
    }
    match parsed {
        Some(p) => Termination {
            status: Status::RuntimeFailure,
            exception_name: Some(p.name),
            exception_message: Some(p.message),
            traceback: Some(p.traceback),
        },
        None => Termination {
            status: Status::RuntimeFailure,
            exception_name: Some(UNKNOWN_ERROR.to_string()),
            exception_message: Some(match (raw.exit_code, raw.signal) {
                (_, Some(sig)) => format!("terminated by signal {sig}"),
                (Some(code), None) => format!("exit status {code}"),
                (None, None) => "abnormal termination".to_string(),
            }),
            traceback: None,
        },
    }
}
