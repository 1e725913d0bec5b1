//! `mlmon`: run scenarios, verify their logs, list attack kinds.
//!
//! Exit status: 0 when every verdict held (or a log verified clean), 2 when
//! a monitor rejected (or verification found a divergence), 1 on any
//! configuration, parse or I/O error.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use mlmon_core::attack::AttackKind;
use mlmon_core::log::LogWriter;
use mlmon_core::plant::builtin_firmware;
use mlmon_core::plant::program::ReferenceCfg;
use mlmon_core::scenario::Scenario;
use mlmon_core::sim::{log_header, RunSummary, Simulation};
use mlmon_core::verify::verify_log;

const SAFE: u8 = 0;
const CONFIG_ERROR: u8 = 1;
const DETECTION: u8 = 2;

#[derive(Parser)]
#[command(name = "mlmon", version, about = "Multilevel runtime monitor simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its log.
    Run {
        /// Scenario TOML file.
        scenario: PathBuf,
        /// Log file; defaults to <log dir>/<scenario name>.log.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for logs when --out is not given.
        #[arg(long, env = "MLMON_LOG_DIR", default_value = ".")]
        log_dir: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the scenario horizon.
        #[arg(long)]
        ticks: Option<u64>,
    },
    /// Replay a log and check it against a fresh run of the monitors.
    Verify {
        /// Log written by `run`.
        log: PathBuf,
    },
    /// One row per attack kind: layer, detecting monitor, target, parameters.
    ListAttacks,
    /// Write the built-in firmware image and reference control-flow table.
    Firmware {
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(CONFIG_ERROR)
        }
    }
}

fn dispatch(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Run { scenario, out, log_dir, seed, ticks } => run(&scenario, out, &log_dir, seed, ticks),
        Command::Verify { log } => verify(&log),
        Command::ListAttacks => {
            print!("{}", attack_table());
            Ok(SAFE)
        }
        Command::Firmware { out } => firmware(&out),
    }
}

fn run(path: &Path, out: Option<PathBuf>, log_dir: &Path, seed: Option<u64>, ticks: Option<u64>) -> Result<u8> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let dir = fs::canonicalize(dir).with_context(|| format!("resolving {}", dir.display()))?;
    let mut scenario = Scenario::parse(&text, Some(&dir)).with_context(|| format!("in {}", path.display()))?;
    if let Some(s) = seed {
        scenario.set_seed(s);
    }
    if let Some(h) = ticks {
        scenario.set_horizon(h).context("--ticks")?;
    }
    let out = out.unwrap_or_else(|| log_dir.join(format!("{}.log", scenario.name)));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut writer = LogWriter::new(BufWriter::new(file), &log_header(&scenario, &text, Some(&dir)))?;
    let summary = Simulation::new(scenario)?.run_logged(&mut writer)?;
    writer.finish()?;
    print!("{}", describe(&summary, &out));
    Ok(if summary.detected() { DETECTION } else { SAFE })
}

fn describe(s: &RunSummary, out: &Path) -> String {
    let mut text = format!(
        "scenario {} (seed {}): {} ticks, {} records, log {}\n",
        s.scenario,
        s.seed,
        s.horizon,
        s.records,
        out.display()
    );
    for (spec, t) in &s.injections.applied {
        text += &format!("injected {} on {} at tick {t}\n", spec.kind, spec.target);
    }
    if s.first_rejections.is_empty() {
        text += "all verdicts held\n";
    }
    let mut rejections: Vec<_> = s.first_rejections.iter().collect();
    rejections.sort_by_key(|(m, r)| (r.tick, m.as_str()));
    for (m, r) in rejections {
        text += &format!("{} rejected at tick {}: {}\n", m.to_uppercase(), r.tick, r.reasons.join(", "));
    }
    text
}

fn verify(path: &Path) -> Result<u8> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let report = verify_log(BufReader::new(file)).with_context(|| format!("verifying {}", path.display()))?;
    println!("{report}");
    Ok(if report.is_clean() { SAFE } else { DETECTION })
}

fn attack_table() -> String {
    let header = ["kind", "layer", "monitor", "target", "params"];
    let rows: Vec<[String; 5]> = AttackKind::ALL
        .iter()
        .map(|k| {
            [
                k.name().to_string(),
                k.layer().to_string(),
                k.layer().monitor().to_uppercase(),
                k.target_doc().to_string(),
                k.params_doc().to_string(),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[&str]| {
        let padded: Vec<String> = cells.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut text = line(&header);
    for r in &rows {
        text += &line(&r.each_ref().map(String::as_str));
    }
    text
}

fn firmware(dir: &Path) -> Result<u8> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let bin = dir.join("fcs.bin");
    let cfg = dir.join("fcs.cfg");
    fs::write(&bin, builtin_firmware().to_bytes()).with_context(|| format!("writing {}", bin.display()))?;
    fs::write(&cfg, ReferenceCfg::builtin().to_text()).with_context(|| format!("writing {}", cfg.display()))?;
    println!("wrote {} and {}", bin.display(), cfg.display());
    Ok(SAFE)
}
