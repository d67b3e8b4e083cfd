use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use causalmesh::server::{PropagationMode, ServerConfig};
use causalmesh::trace::Trace;
use causalmesh_cli::commands::{self, Mode, SimulateArgs};
use causalmesh_cli::net::{serve, ServeOptions};
use causalmesh_cli::runner::{run_client, ClientOptions};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "causalmesh", version, about = "Causal cache simulator, checker and TCP runner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the simulator and write trace.jsonl, snapshots.json and summary.json.
    Simulate {
        #[arg(long, default_value_t = 3)]
        servers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// micro3fn, write-then-read, random-dag, or a JSON file.
        #[arg(long, default_value = "micro3fn")]
        workload: String,
        #[arg(long, default_value_t = 1000)]
        requests: usize,
        /// Key pool size for preset workloads.
        #[arg(long, default_value_t = 10_000)]
        keys: usize,
        #[arg(long, value_enum, default_value_t = Mode::Causalmesh)]
        mode: Mode,
        /// JSON list of fault specs.
        #[arg(long)]
        faults: Option<PathBuf>,
        /// migrating-reader, stalled-link or a scenario JSON file; replaces --servers/--workload.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check a trace. Exit 0 when clean, 1 on violations, 2 on bad input.
    Check {
        trace: PathBuf,
        #[arg(long)]
        snapshots: Option<PathBuf>,
        /// Where to write the JSON report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Anomaly rate of a write-then-read workflow, baseline against causal.
    AnomalyRate {
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        servers: Vec<usize>,
        #[arg(long, default_value_t = 500)]
        requests: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Visibility window against cluster size under a fixed hop delay.
    Window {
        #[arg(long, value_delimiter = ',', default_value = "2,3,4,5,6,7,8")]
        servers: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        delay: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one server of a TCP cluster.
    Serve {
        #[arg(long)]
        id: usize,
        /// host:port of every server, in id order.
        #[arg(long, value_delimiter = ',', required = true)]
        peers: Vec<String>,
        #[arg(long, value_enum, default_value_t = Mode::Causalmesh)]
        mode: Mode,
        /// Append-only store log.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, default_value_t = 40)]
        connect_attempts: u32,
    },
    /// Drive a scripted workload against a TCP cluster and save its trace.
    Client {
        #[arg(long, value_delimiter = ',', required = true)]
        peers: Vec<String>,
        /// migrating-reader or a scenario/workload JSON file.
        #[arg(long)]
        script: String,
        #[arg(long, default_value = "trace.jsonl")]
        out: PathBuf,
        /// Milliseconds per logical time unit in the script.
        #[arg(long, default_value_t = 10)]
        tick_ms: u64,
    },
}

fn write_or_print(out: &Option<PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn load_script(name: &str) -> anyhow::Result<causalmesh::workload::Workload> {
    if let Ok(sc) = commands::load_scenario(name) {
        return Ok(sc.workload);
    }
    let text = std::fs::read_to_string(name).with_context(|| format!("read {name}"))?;
    serde_json::from_str(&text).with_context(|| format!("parse {name}"))
}

fn run(cmd: Cmd) -> anyhow::Result<ExitCode> {
    match cmd {
        Cmd::Simulate {
            servers,
            seed,
            workload,
            requests,
            keys,
            mode,
            faults,
            scenario,
            out,
        } => {
            let s = commands::simulate(&SimulateArgs {
                servers,
                seed,
                workload,
                requests,
                keys,
                mode,
                faults,
                scenario,
                out: out.clone(),
            })?;
            println!(
                "{} workflows, {} committed, {} steps, {} state findings -> {}",
                s.stats.workflows,
                s.stats.committed,
                s.stats.steps,
                s.state_violations.len(),
                out.display()
            );
        }
        Cmd::Check { trace, snapshots, report } => {
            let t = match Trace::load(&trace) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("bad trace: {e}");
                    return Ok(ExitCode::from(2));
                }
            };
            let snaps = match snapshots.as_deref().map(commands::load_snapshots).transpose() {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("bad snapshots: {e:#}");
                    return Ok(ExitCode::from(2));
                }
            };
            let r = commands::check(&t, snaps.as_ref());
            print!("{}", commands::human_summary(&r));
            if let Some(p) = report {
                std::fs::write(p, serde_json::to_vec_pretty(&r)?)?;
            }
            return Ok(ExitCode::from(if r.clean { 0 } else { 1 }));
        }
        Cmd::AnomalyRate {
            servers,
            requests,
            seed,
            out,
        } => write_or_print(&out, &commands::anomaly_rate_csv(&servers, requests, seed)?)?,
        Cmd::Window { servers, delay, out } => write_or_print(&out, &commands::window_csv(&servers, delay)?)?,
        Cmd::Serve {
            id,
            peers,
            mode,
            store,
            connect_attempts,
        } => {
            let propagation_mode = match mode {
                Mode::Buggy => PropagationMode::SingleRoundBuggy,
                _ => PropagationMode::TwoRound,
            };
            if mode == Mode::Baseline {
                anyhow::bail!("the baseline exists only in the simulator");
            }
            serve(ServeOptions {
                id,
                peers,
                config: ServerConfig {
                    propagation_mode,
                    ..ServerConfig::default()
                },
                tcc: mode == Mode::Tcc,
                store,
                connect_attempts,
            })?;
        }
        Cmd::Client {
            peers,
            script,
            out,
            tick_ms,
        } => {
            let workload = load_script(&script)?;
            let opts = ClientOptions {
                tick: Duration::from_millis(tick_ms),
                ..ClientOptions::new(peers)
            };
            let trace = run_client(&workload, &opts)?;
            trace.save(&out)?;
            println!("{} events -> {}", trace.len(), out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CAUSALMESH_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
