//! Child process launch under resource limits.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{mpsc, OnceLock};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::traceback::{ProcessExit, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkIsolation {
    Off,
    /// Detach from the network when the kernel allows it.
    #[default]
    BestEffort,
    /// Refuse to run when a private network namespace cannot be created.
    Required,
}

pub(crate) struct ProcessSpec<'a> {
    pub argv: &'a [String],
    pub cwd: &'a Path,
    pub env: &'a BTreeMap<String, String>,
    pub stdin: &'a [u8],
    pub wall_time_ms: u64,
    pub memory_bytes: u64,
    pub max_output_bytes: usize,
    pub network: NetworkIsolation,
    pub stage: Stage,
}

#[derive(Debug)]
pub(crate) struct RawRun {
    pub exit: ProcessExit,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub wall_time_ms: u64,
}

/// Looks `program` up on the harness's own PATH.
pub fn resolve_program(program: &str) -> Option<PathBuf> {
    if program.contains('/') {
        let p = PathBuf::from(program);
        return p.is_file().then_some(p);
    }
    std::env::var_os("PATH").and_then(|paths| {
        std::env::split_paths(&paths)
            .map(|dir| dir.join(program))
            .find(|p| p.is_file())
    })
}

const FILE_SIZE_LIMIT: u64 = 64 << 20;

fn set_limit(resource: libc::__rlimit_resource_t, value: u64) -> io::Result<()> {
    let lim = libc::rlimit {
        rlim_cur: value as libc::rlim_t,
        rlim_max: value as libc::rlim_t,
    };
    // SAFETY: plain syscall on a stack value.
    if unsafe { libc::setrlimit(resource, &lim) } != 0 {
        return Err(io::Error::last_os_error());
    }
    Ok(())
}

fn unshare_network() -> bool {
    // SAFETY: unshare only affects the calling (child) process.
    unsafe {
        libc::unshare(libc::CLONE_NEWNET) == 0
            || libc::unshare(libc::CLONE_NEWUSER | libc::CLONE_NEWNET) == 0
    }
}

fn spawn_reader<R: Read + Send + 'static>(mut source: R, cap: usize) -> mpsc::Receiver<Vec<u8>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        loop {
            match source.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => {
                    let room = cap.saturating_sub(kept.len());
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(_) => break,
            }
        }
        let _ = tx.send(kept);
    });
    rx
}

fn kill_group(pid: i32) {
    // SAFETY: signalling a process group we created; ESRCH is harmless.
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
    }
}

/// Runs one child to completion. `Err` only for harness-side failures.
pub(crate) fn run(spec: &ProcessSpec<'_>) -> io::Result<RawRun> {
    let (program, args) = spec
        .argv
        .split_first()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "empty command"))?;
    let program_path = resolve_program(program).ok_or_else(|| {
        io::Error::new(
            io::ErrorKind::NotFound,
            format!("interpreter `{program}` not found"),
        )
    })?;

    let memory = spec.memory_bytes;
    let cpu_seconds = spec.wall_time_ms.div_ceil(1000) + 1;
    let network = spec.network;

    let mut cmd = Command::new(&program_path);
    cmd.args(args)
        .current_dir(spec.cwd)
        .env_clear()
        .envs(spec.env)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    // SAFETY: the closure runs between fork and exec and only issues
    // async-signal-safe syscalls.
    unsafe {
        cmd.pre_exec(move || {
            if libc::setpgid(0, 0) != 0 {
                return Err(io::Error::last_os_error());
            }
            if network != NetworkIsolation::Off
                && !unshare_network()
                && network == NetworkIsolation::Required
            {
                return Err(io::Error::last_os_error());
            }
            set_limit(libc::RLIMIT_AS, memory)?;
            set_limit(libc::RLIMIT_CPU, cpu_seconds)?;
            set_limit(libc::RLIMIT_CORE, 0)?;
            set_limit(libc::RLIMIT_FSIZE, FILE_SIZE_LIMIT)?;
            Ok(())
        });
    }

    let started = Instant::now();
    let mut child = cmd.spawn()?;
    let pid = child.id() as i32;

    let mut stdin = child.stdin.take().expect("piped");
    let input = spec.stdin.to_vec();
    let writer = thread::spawn(move || {
        // the program may exit without reading; EPIPE is expected then
        let _ = stdin.write_all(&input);
    });
    let stdout_rx = spawn_reader(child.stdout.take().expect("piped"), spec.max_output_bytes);
    let stderr_rx = spawn_reader(child.stderr.take().expect("piped"), spec.max_output_bytes);

    let deadline = started + Duration::from_millis(spec.wall_time_ms);
    let mut timed_out = false;
    let mut poll = Duration::from_micros(500);
    let (status, usage) = loop {
        let mut status = 0;
        // SAFETY: zeroed rusage is a valid out-parameter.
        let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
        // SAFETY: pid is our direct child; WNOHANG never blocks.
        let r = unsafe { libc::wait4(pid, &mut status, libc::WNOHANG, &mut usage) };
        if r == pid {
            break (status, usage);
        }
        if r < 0 {
            let err = io::Error::last_os_error();
            if err.kind() == io::ErrorKind::Interrupted {
                continue;
            }
            kill_group(pid);
            return Err(err);
        }
        if !timed_out && Instant::now() >= deadline {
            kill_group(pid);
            timed_out = true;
        }
        thread::sleep(poll);
        poll = (poll * 2).min(Duration::from_millis(5));
    };
    let wall_time_ms = started.elapsed().as_millis() as u64;
    // sweep anything the program left behind in its group
    kill_group(pid);
    let _ = writer.join();

    let grace = Duration::from_millis(500);
    let stdout = stdout_rx.recv_timeout(grace).unwrap_or_default();
    let stderr = stderr_rx.recv_timeout(grace).unwrap_or_default();

    let (exit_code, signal) = if libc::WIFEXITED(status) {
        (Some(libc::WEXITSTATUS(status)), None)
    } else if libc::WIFSIGNALED(status) {
        (None, Some(libc::WTERMSIG(status)))
    } else {
        (None, None)
    };
    let peak_rss_bytes = u64::try_from(usage.ru_maxrss).ok().map(|kb| kb * 1024);

    Ok(RawRun {
        exit: ProcessExit {
            stage: spec.stage,
            exit_code,
            signal,
            timed_out,
            peak_rss_bytes,
            memory_limit_bytes: spec.memory_bytes,
        },
        stdout,
        stderr,
        wall_time_ms,
    })
}

/// Whether this host lets an unprivileged child detach from the network.
pub fn network_isolation_available() -> bool {
    static AVAILABLE: OnceLock<bool> = OnceLock::new();
    *AVAILABLE.get_or_init(|| {
        let Some(true_bin) = resolve_program("true") else {
            return false;
        };
        let mut cmd = Command::new(true_bin);
        // SAFETY: as in `run`.
        unsafe {
            cmd.pre_exec(|| {
                if unshare_network() {
                    Ok(())
                } else {
                    Err(io::Error::last_os_error())
                }
            });
        }
        cmd.stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map(|s| s.success())
            .unwrap_or(false)
    })
}
