//! Running the `mlmon` binary and reading what it wrote.

#![allow(dead_code)]

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use mlmon_core::ec::Tick;
use mlmon_core::log::{read_log, LogHeader, LogRecord, RecordKind, Source};

pub fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))
}

pub const SHIPPED: [&str; 6] = ["nominal", "baud_attack", "gps_lockup", "stuck_value", "return_tamper", "firmware_corrupt"];

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
    pub elapsed: Duration,
}

pub fn mlmon(args: &[&str]) -> Output {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_mlmon"))
        .args(args)
        .env_remove("MLMON_LOG_DIR")
        .output()
        .expect("mlmon runs");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
        elapsed: start.elapsed(),
    }
}

/// Runs a shipped scenario into `dir` and returns the CLI output and log path.
pub fn run_scenario(name: &str, dir: &Path, tag: &str) -> (Output, PathBuf) {
    let log = dir.join(format!("{name}.{tag}.log"));
    let out = mlmon(&["run", scenario(name).to_str().unwrap(), "--out", log.to_str().unwrap()]);
    (out, log)
}

pub fn load(log: &Path) -> (LogHeader, Vec<LogRecord>) {
    read_log(BufReader::new(File::open(log).expect("log exists"))).expect("log parses")
}

pub fn what<'a>(recs: &'a [LogRecord], source: Source, name: &'a str) -> impl Iterator<Item = &'a LogRecord> + 'a {
    recs.iter().filter(move |r| r.source == source && r.get("what") == Some(name))
}

pub fn rejections(recs: &[LogRecord]) -> Vec<&LogRecord> {
    recs.iter().filter(|r| r.kind == RecordKind::Verdict && r.get("status") == Some("rejected")).collect()
}

pub fn frame_ends<'a>(recs: &'a [LogRecord], sensor: &'a str) -> impl Iterator<Item = &'a LogRecord> + 'a {
    recs.iter().filter(move |r| r.kind == RecordKind::Frame && r.get("phase") == Some("end") && r.get("sensor") == Some(sensor))
}

pub fn frame_starts<'a>(recs: &'a [LogRecord], sensor: &'a str) -> impl Iterator<Item = &'a LogRecord> + 'a {
    recs.iter().filter(move |r| r.kind == RecordKind::Frame && r.get("phase") == Some("start") && r.get("sensor") == Some(sensor))
}

pub fn injection_tick(recs: &[LogRecord], kind: &str) -> Option<Tick> {
    recs.iter().find(|r| r.kind == RecordKind::Injection && r.get("kind") == Some(kind)).map(|r| r.tick)
}

pub fn word(s: &str) -> u32 {
    u32::from_str_radix(s.trim_start_matches("0x"), 16).expect("hex word")
}
