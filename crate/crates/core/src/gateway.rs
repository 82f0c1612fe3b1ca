//! Completion acquisition: prompt templating, stored or HTTP-served model
//! responses, and code extraction from free-form replies.
//!
//! The HTTP wire contract is deliberately small:
//! `POST {"model": str, "prompt": str}` answered by `{"text": str}`, with an
//! optional `"finish_reason"` (`"length"` marks a truncated generation).
//! Vendor-specific adapters are expected to sit in front of this contract.

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Completion, ResourceLimits, Task};
use crate::error::{Error, Result};

/// Harness-defined default instruction. The wording is ours; only the idea of
/// stating the resource budget in the instruction is carried over.
pub const DEFAULT_TEMPLATE: &str = "Write a complete Python 3 program that solves the problem below. \
Read all input from standard input and write the answer to standard output. \
The program must finish within {wall_time_ms} ms and use at most {memory_bytes} bytes of memory.\n\n\
{question}\n\n\
Reply with the program in a single fenced code block.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationInstruction {
    pub template: String,
    pub rendered: String,
}

/// Substitutes `{question}`, `{wall_time_ms}` and `{memory_bytes}`.
/// `{{` and `}}` produce literal braces; a brace pair around anything that is
/// not an identifier is copied through unchanged.
pub fn render_instruction(
    question: &str,
    limits: &ResourceLimits,
    template: &str,
) -> Result<GenerationInstruction> {
    let mut out = String::with_capacity(template.len() + question.len());
    let mut rest = template;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if tail.starts_with("{{") || tail.starts_with("}}") {
            out.push_str(&tail[..1]);
            rest = &tail[2..];
            continue;
        }
        if let Some(after) = tail.strip_prefix('}') {
            out.push('}');
            rest = after;
            continue;
        }
        let Some(close) = tail.find('}') else {
            out.push_str(tail);
            rest = "";
            break;
        };
        let name = &tail[1..close];
        let is_ident = !name.is_empty()
            && name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '-');
        if !is_ident {
            out.push('{');
            rest = &tail[1..];
            continue;
        }
        match name {
            "question" => out.push_str(question),
            "wall_time_ms" => out.push_str(&limits.wall_time_ms.to_string()),
            "memory_bytes" => out.push_str(&limits.memory_bytes.to_string()),
            other => return Err(Error::Template(other.to_string())),
        }
        rest = &tail[close + 1..];
    }
    out.push_str(rest);
    Ok(GenerationInstruction {
        template: template.to_string(),
        rendered: out,
    })
}

/// Returns the interior of the first fenced code block, or the input
/// unchanged when it has no fence. An unclosed fence runs to the end of the
/// text. Line-trailing whitespace is preserved.
pub fn extract_code(raw_response: &str) -> String {
    let lines: Vec<&str> = raw_response.split('\n').collect();
    let Some(open) = lines.iter().position(|l| l.trim_start().starts_with("```")) else {
        return raw_response.to_string();
    };
    let after_ticks = lines[open].trim_start().trim_start_matches('`');
    if let Some(end) = after_ticks.find("```") {
        // ```print(1)``` on a single line
        return after_ticks[..end].to_string();
    }
    let body = &lines[open + 1..];
    let close = body
        .iter()
        .position(|l| l.trim_start().starts_with("```"))
        .unwrap_or(body.len());
    body[..close].join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    /// An `http(s)://` URL, or `"file"` to serve stored responses from `path`.
    pub endpoint: String,
    #[serde(default)]
    pub path: Option<PathBuf>,
    pub model_id: String,
    #[serde(default)]
    pub auth_token_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub request_timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub retry_backoff_ms: u64,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub template: Option<String>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Sampling parameters as configured on the provider side; recorded in
    /// run metadata, never interpreted.
    #[serde(default)]
    pub sampling: serde_json::Value,
}

fn default_timeout() -> u64 {
    60_000
}
fn default_retries() -> u32 {
    2
}
fn default_backoff() -> u64 {
    250
}
fn default_in_flight() -> usize {
    4
}

impl ProviderConfig {
    pub fn file(path: impl Into<PathBuf>, model_id: impl Into<String>) -> Self {
        ProviderConfig {
            endpoint: "file".into(),
            path: Some(path.into()),
            ..Self::http("", model_id)
        }
    }

    pub fn http(endpoint: impl Into<String>, model_id: impl Into<String>) -> Self {
        ProviderConfig {
            endpoint: endpoint.into(),
            path: None,
            model_id: model_id.into(),
            auth_token_env: None,
            request_timeout_ms: default_timeout(),
            max_retries: default_retries(),
            retry_backoff_ms: default_backoff(),
            cache_dir: None,
            template: None,
            max_in_flight: default_in_flight(),
            sampling: serde_json::Value::Null,
        }
    }

    pub fn is_file(&self) -> bool {
        self.endpoint == "file"
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_id.is_empty() {
            return Err(Error::Config("provider model_id is empty".into()));
        }
        if self.is_file() {
            if self.path.is_none() {
                return Err(Error::Config("file provider requires `path`".into()));
            }
        } else if !(self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://")) {
            return Err(Error::Config(format!(
                "provider endpoint `{}` is neither `file` nor an http(s) URL",
                self.endpoint
            )));
        }
        if self.request_timeout_ms == 0 {
            return Err(Error::Config("request_timeout_ms must be positive".into()));
        }
        Ok(())
    }
}

/// On-disk form of one stored response, shared by the response cache and the
/// file provider: `<dir>/<model_id>/<task_id>.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredResponse {
    pub task_id: String,
    pub model_id: String,
    pub raw_response: String,
    #[serde(default)]
    pub truncated: bool,
}

fn file_component(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn stored_response_path(dir: &Path, model_id: &str, task_id: &str) -> PathBuf {
    dir.join(file_component(model_id))
        .join(format!("{}.json", file_component(task_id)))
}

fn read_stored(dir: &Path, model_id: &str, task_id: &str) -> Result<Option<StoredResponse>> {
    let path = stored_response_path(dir, model_id, task_id);
    match fs::read_to_string(&path) {
        Ok(text) => {
            let stored: StoredResponse = serde_json::from_str(&text)?;
            if stored.task_id != task_id || stored.model_id != model_id {
                return Err(Error::Validation(format!(
                    "{} holds a response for task `{}` model `{}`",
                    path.display(),
                    stored.task_id,
                    stored.model_id
                )));
            }
            Ok(Some(stored))
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

pub fn write_stored(dir: &Path, stored: &StoredResponse) -> Result<()> {
    let path = stored_response_path(dir, &stored.model_id, &stored.task_id);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(stored)?;
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    prompt: &'a str,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
}

fn completion_from(task: &Task, provider: &ProviderConfig, stored: StoredResponse) -> Completion {
    let mut c = Completion::from_response(&task.task_id, &provider.model_id, stored.raw_response);
    c.truncated = stored.truncated;
    c
}

/// Obtains one completion for `task`. HTTP transport failures, 429 and 5xx
/// responses are retried up to `max_retries` times; other statuses fail
/// immediately.
pub fn fetch_completion(
    task: &Task,
    provider: &ProviderConfig,
    instruction: &GenerationInstruction,
) -> Result<Completion> {
    provider.validate()?;
    if provider.is_file() {
        let dir = provider.path.as_deref().expect("validated");
        return match read_stored(dir, &provider.model_id, &task.task_id)? {
            Some(stored) => Ok(completion_from(task, provider, stored)),
            None => Err(Error::Provider {
                message: format!(
                    "no stored response for task `{}` model `{}` under {}",
                    task.task_id,
                    provider.model_id,
                    dir.display()
                ),
                status: None,
            }),
        };
    }

    if let Some(cache) = &provider.cache_dir {
        if let Some(stored) = read_stored(cache, &provider.model_id, &task.task_id)? {
            return Ok(completion_from(task, provider, stored));
        }
    }

    let token = match &provider.auth_token_env {
        Some(var) => Some(
            std::env::var(var)
                .map_err(|_| Error::Config(format!("auth token variable `{var}` is not set")))?,
        ),
        None => None,
    };
    let body = serde_json::to_string(&WireRequest {
        model: &provider.model_id,
        prompt: &instruction.rendered,
    })?;
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(provider.request_timeout_ms)))
        .http_status_as_error(false)
        .build()
        .into();

    let mut attempt = 0u32;
    let reply = loop {
        let mut request = agent
            .post(provider.endpoint.as_str())
            .header("Content-Type", "application/json");
        if let Some(token) = &token {
            request = request.header("Authorization", format!("Bearer {token}"));
        }
        let failure = match request.send(body.as_str()) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                if (200..300).contains(&status) {
                    let text = resp
                        .body_mut()
                        .read_to_string()
                        .map_err(|e| Error::Provider {
                            message: format!("reading response body: {e}"),
                            status: Some(status),
                        })?;
                    let reply: WireResponse =
                        serde_json::from_str(&text).map_err(|e| Error::Provider {
                            message: format!("malformed response body: {e}"),
                            status: Some(status),
                        })?;
                    break reply;
                }
                let err = Error::Provider {
                    message: format!("endpoint {} answered {status}", provider.endpoint),
                    status: Some(status),
                };
                if status != 429 && status < 500 {
                    return Err(err);
                }
                err
            }
            Err(e) => Error::Provider {
                message: format!("transport failure: {e}"),
                status: None,
            },
        };
        if attempt >= provider.max_retries {
            return Err(failure);
        }
        attempt += 1;
        log::debug!(
            "retrying task `{}` (attempt {attempt}): {failure}",
            task.task_id
        );
        if provider.retry_backoff_ms > 0 {
            thread::sleep(Duration::from_millis(
                provider.retry_backoff_ms * u64::from(attempt),
            ));
        }
    };

    let stored = StoredResponse {
        task_id: task.task_id.clone(),
        model_id: provider.model_id.clone(),
        raw_response: reply.text,
        truncated: reply.finish_reason.as_deref() == Some("length"),
    };
    if let Some(cache) = &provider.cache_dir {
        write_stored(cache, &stored)?;
    }
    Ok(completion_from(task, provider, stored))
}

/// Fetches completions for every task, at most `max_in_flight` at a time.
/// Results keep task order.
pub fn fetch_all(tasks: &[Task], provider: &ProviderConfig) -> Result<Vec<Result<Completion>>> {
    provider.validate()?;
    let template = provider.template.as_deref().unwrap_or(DEFAULT_TEMPLATE);
    let instructions = tasks
        .iter()
        .map(|t| render_instruction(&t.question, &t.limits, template))
        .collect::<Result<Vec<_>>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(provider.max_in_flight.max(1))
        .build()
        .map_err(|e| Error::Harness(e.to_string()))?;
    Ok(pool.install(|| {
        tasks
            .par_iter()
            .zip(instructions.par_iter())
            .map(|(task, instruction)| fetch_completion(task, provider, instruction))
            .collect()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn limits() -> ResourceLimits {
        ResourceLimits::new(2000, 64 << 20).unwrap()
    }

    #[test]
    fn renders_placeholders() {
        let gi = render_instruction(
            "add",
            &limits(),
            "Solve: {question} (time {wall_time_ms} ms)",
        )
        .unwrap();
        assert_eq!(gi.rendered, "Solve: add (time 2000 ms)");
        let gi = render_instruction("q", &limits(), "mem={memory_bytes}").unwrap();
        assert_eq!(gi.rendered, format!("mem={}", 64u64 << 20));
    }

    #[test]
    fn template_without_placeholders_is_identity() {
        let gi = render_instruction("q", &limits(), "just solve it").unwrap();
        assert_eq!(gi.rendered, "just solve it");
    }

    #[test]
    fn unknown_placeholder_is_named() {
        let err = render_instruction("q", &limits(), "x {walltime} y").unwrap_err();
        assert!(matches!(&err, Error::Template(p) if p == "walltime"));
    }

    #[test]
    fn braces_escape_and_pass_through() {
        let gi =
            render_instruction("q", &limits(), "{{question}} d = { 1: 2 } {question}").unwrap();
        assert_eq!(gi.rendered, "{question} d = { 1: 2 } q");
        // placeholders inside the question are not re-expanded
        let gi = render_instruction("{wall_time_ms}", &limits(), "{question}").unwrap();
        assert_eq!(gi.rendered, "{wall_time_ms}");
    }

    #[test]
    fn default_template_renders() {
        let gi = render_instruction("Print 1.", &limits(), DEFAULT_TEMPLATE).unwrap();
        assert!(gi.rendered.contains("2000 ms"));
        assert!(gi.rendered.contains("Print 1."));
    }

    #[test]
    fn extracts_fence_interior() {
        assert_eq!(
            extract_code("Here is code:\n```\nprint(1)\n```"),
            "print(1)"
        );
        assert_eq!(extract_code("print(1)"), "print(1)");
        assert_eq!(
            extract_code("a\n```python\nx = 1  \ny = 2\n```\nthen\n```\nz\n```"),
            "x = 1  \ny = 2"
        );
        assert_eq!(extract_code("```python\nf(1)\nf(2)\nf("), "f(1)\nf(2)\nf(");
        assert_eq!(
            extract_code("see ```print(2)``` ok"),
            "see ```print(2)``` ok"
        );
        assert_eq!(extract_code("```print(2)```"), "print(2)");
    }

    #[test]
    fn provider_validation() {
        assert!(ProviderConfig::file("/tmp", "m").validate().is_ok());
        let mut bad = ProviderConfig::file("/tmp", "m");
        bad.path = None;
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        assert!(ProviderConfig::http("ftp://x", "m").validate().is_err());
        assert!(ProviderConfig::http("http://127.0.0.1:1/v1", "m")
            .validate()
            .is_ok());
    }

    #[test]
    fn file_provider_lookup() {
        let dir = tempfile::tempdir().unwrap();
        write_stored(
            dir.path(),
            &StoredResponse {
                task_id: "t/1".into(),
                model_id: "m".into(),
                raw_response: "```\nprint(5)\n```".into(),
                truncated: true,
            },
        )
        .unwrap();
        let task = Task {
            task_id: "t/1".into(),
            question: "q".into(),
            test_cases: vec![crate::corpus::TestCase::new("", "5")],
            limits: limits(),
        };
        let before = task.clone();
        let provider = ProviderConfig::file(dir.path(), "m");
        let gi = render_instruction(&task.question, &task.limits, DEFAULT_TEMPLATE).unwrap();
        let c = fetch_completion(&task, &provider, &gi).unwrap();
        assert_eq!(c.raw_response, "```\nprint(5)\n```");
        assert_eq!(c.source_code, "print(5)");
        assert!(c.truncated);
        assert_eq!(task, before);

        let other = ProviderConfig::file(dir.path(), "absent");
        assert!(matches!(
            fetch_completion(&task, &other, &gi),
            Err(Error::Provider { status: None, .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn extraction_idempotent(text in "(```[a-z]{0,6}\n)?([a-z0-9 =()+\n]{0,40})(\n```)?([a-z \n]{0,20})") {
                let once = extract_code(&text);
                prop_assume!(!once.contains("```"));
                prop_assert_eq!(extract_code(&once), once);
            }
        }
    }
}
