//! Command-line front end: run scenarios, sweep seeds, audit traces.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tara::config::ScenarioConfig;
use tara::harness::linearizability::{Verdict, DEFAULT_BUDGET};
use tara::harness::{audit, scenario, sweep};

#[derive(Parser)]
#[command(
    name = "tara",
    about = "Deterministic simulator and verifier for a replicated key-value service"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and report metrics plus verification results.
    Run {
        /// TOML scenario file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the run length in ticks.
        #[arg(long)]
        duration: Option<u64>,
        /// Write the full event trace to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the throughput series (TSV) to this file.
        #[arg(long)]
        throughput: Option<PathBuf>,
        /// Print a machine-readable JSON summary instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Run many seeds in parallel, optionally with random tolerable faults.
    Sweep {
        /// TOML scenario file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// How many seeds to run.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// First seed of the range.
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        /// Inject a randomized tolerable fault schedule into every run.
        #[arg(long)]
        faults: bool,
    },
    /// Re-check safety properties from a previously written trace file.
    Audit {
        /// Trace file produced by `run --trace`.
        trace: PathBuf,
        /// Fault tolerance the trace was produced under.
        #[arg(long, default_value_t = 1)]
        f: u32,
    },
}

fn load_config(path: Option<&Path>) -> Result<ScenarioConfig, String> {
    match path {
        None => Ok(ScenarioConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| format!("cannot read {}: {e}", p.display()))?;
            let cfg: ScenarioConfig =
                toml::from_str(&text).map_err(|e| format!("cannot parse {}: {e}", p.display()))?;
            cfg.validate()
                .map_err(|e| format!("invalid {}: {e}", p.display()))?;
            Ok(cfg)
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), String> {
    std::fs::write(path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn run_cmd(
    config: Option<PathBuf>,
    seed: Option<u64>,
    duration: Option<u64>,
    trace: Option<PathBuf>,
    throughput: Option<PathBuf>,
    json: bool,
) -> Result<bool, String> {
    let mut cfg = load_config(config.as_deref())?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = duration {
        cfg.duration = d;
    }
    let report = scenario::run_scenario(&cfg).map_err(|e| format!("topology: {e}"))?;

    if let Some(path) = trace {
        let mut out = report.trace.join("\n");
        out.push('\n');
        write_file(&path, &out)?;
    }
    if let Some(path) = throughput {
        write_file(&path, &report.metrics.throughput_tsv())?;
    }

    if json {
        let m = &report.metrics;
        let lin = match &report.linearizability {
            Verdict::Linearizable { .. } => "linearizable",
            Verdict::Violation { .. } => "violation",
            Verdict::Inconclusive { .. } => "inconclusive",
        };
        let doc = serde_json::json!({
            "seed": report.config.seed,
            "final_tick": report.final_tick,
            "issued": m.issued,
            "completed": m.completed,
            "retransmits": m.retransmits,
            "executed_commands": m.executed_commands,
            "view_announcements": m.view_announcements,
            "max_view": m.max_view,
            "checkpoints": m.checkpoints_written,
            "stable_frontier": m.stable_frontier,
            "latency_p50": m.latency.as_ref().map(|l| l.p50),
            "latency_p99": m.latency.as_ref().map(|l| l.p99),
            "linearizability": lin,
            "safety_passed": report.safety.passed(),
            "healthy": report.healthy(),
        });
        println!("{}", serde_json::to_string_pretty(&doc).unwrap());
    } else {
        print!("{}", report.summary());
    }
    Ok(report.healthy())
}

fn sweep_cmd(
    config: Option<PathBuf>,
    seeds: u64,
    first_seed: u64,
    faults: bool,
) -> Result<bool, String> {
    let cfg = load_config(config.as_deref())?;
    let outcomes = sweep::sweep(&cfg, first_seed..first_seed + seeds, faults, DEFAULT_BUDGET);
    let mut ok = 0usize;
    for o in &outcomes {
        println!("{}", o.line());
        for failure in &o.failures {
            println!("      !! {failure}");
        }
        if o.healthy {
            ok += 1;
        }
    }
    println!("sweep: {ok}/{} healthy", outcomes.len());
    Ok(ok == outcomes.len())
}

fn audit_cmd(trace: PathBuf, f: u32) -> Result<bool, String> {
    let text = std::fs::read_to_string(&trace)
        .map_err(|e| format!("cannot read {}: {e}", trace.display()))?;
    let lines: Vec<String> = text.lines().map(|l| l.to_string()).collect();
    let report = audit::audit_trace(&lines, f);
    print!("{}", report.summary());
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run {
            config,
            seed,
            duration,
            trace,
            throughput,
            json,
        } => run_cmd(config, seed, duration, trace, throughput, json),
        Cmd::Sweep {
            config,
            seeds,
            first_seed,
            faults,
        } => sweep_cmd(config, seeds, first_seed, faults),
        Cmd::Audit { trace, f } => audit_cmd(trace, f),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
