//! Offline commands: simulate, check and the two CSV experiments.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use causalmesh::cache::CacheDump;
use causalmesh::checker::{
    check_atomic_visibility, check_convergence, check_cut_coverage, check_repeatable_reads, check_requests,
    check_sessions, check_state, minimize_witness, trace_width, Divergence, PvcTracker, Violation,
};
use causalmesh::server::PropagationMode;
use causalmesh::sim::{self, anomaly_rate, measure_visibility, scripts, BaselineMode, FaultSpec, SimConfig, Snapshots};
use causalmesh::trace::{Event, Trace};
use causalmesh::workload::{FunctionSpec, Op, Shape, Workload, WorkloadSpec, WorkflowDag};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Causalmesh,
    Tcc,
    Buggy,
    Baseline,
}

impl Mode {
    pub fn apply(self, cfg: &mut SimConfig, workload: &mut Workload) {
        cfg.propagation_mode = match self {
            Mode::Buggy => PropagationMode::SingleRoundBuggy,
            _ => PropagationMode::TwoRound,
        };
        cfg.baseline_mode = match self {
            Mode::Baseline => BaselineMode::EventualBaseline,
            _ => BaselineMode::CausalMesh,
        };
        if self == Mode::Tcc {
            workload.tcc = true;
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub servers: usize,
    pub seed: u64,
    pub workload: String,
    pub requests: usize,
    pub keys: usize,
    pub mode: Mode,
    pub faults: Option<PathBuf>,
    pub scenario: Option<String>,
    pub out: PathBuf,
}

/// Loads a scenario by name (`migrating-reader`, `stalled-link`) or from a JSON file.
pub fn load_scenario(name: &str) -> anyhow::Result<scripts::Scenario> {
    Ok(match name {
        "migrating-reader" => scripts::migrating_reader(),
        "stalled-link" => scripts::stalled_link(PropagationMode::TwoRound),
        path => serde_json::from_str(&fs::read_to_string(path).with_context(|| format!("read {path}"))?)
            .with_context(|| format!("parse scenario {path}"))?,
    })
}

/// A preset shape name, a `WorkloadSpec` file or a full `Workload` file.
pub fn load_workload(name: &str, requests: usize, keys: usize, seed: u64) -> anyhow::Result<Workload> {
    let shape = match name {
        "micro3fn" => Some(Shape::Micro3Fn),
        "write-then-read" => Some(Shape::WriteThenRead2Fn),
        "random-dag" => Some(Shape::RandomDag),
        _ => None,
    };
    if let Some(shape) = shape {
        return Ok(WorkloadSpec {
            shape,
            requests,
            key_pool_size: keys,
            seed,
            ..WorkloadSpec::default()
        }
        .build()?);
    }
    let text = fs::read_to_string(name).with_context(|| format!("read workload {name}"))?;
    if let Ok(w) = serde_json::from_str::<Workload>(&text) {
        return Ok(w);
    }
    let spec: WorkloadSpec = serde_json::from_str(&text).with_context(|| format!("parse workload {name}"))?;
    Ok(spec.build()?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VisibilitySummary {
    pub measured: usize,
    pub mean_hops: f64,
    pub max_hops: usize,
    pub mean_latency: f64,
    pub max_latency: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub config: SimConfig,
    pub stats: sim::SimStats,
    pub state_violations: Vec<Violation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visibility: Option<VisibilitySummary>,
}

/// Writes measured for the summary; measuring is linear in the trace.
const VISIBILITY_SAMPLE: usize = 200;

fn visibility_summary(trace: &Trace) -> Option<VisibilitySummary> {
    let vis: Vec<_> = trace
        .iter()
        .enumerate()
        .filter(|(_, e)| matches!(e.event, Event::ClientWriteReply { .. }))
        .take(VISIBILITY_SAMPLE)
        .filter_map(|(i, _)| measure_visibility(trace, i).ok())
        .collect();
    if vis.is_empty() {
        return None;
    }
    let k = vis.len() as f64;
    Some(VisibilitySummary {
        measured: vis.len(),
        mean_hops: vis.iter().map(|v| v.hops as f64).sum::<f64>() / k,
        max_hops: vis.iter().map(|v| v.hops).max().unwrap_or(0),
        mean_latency: vis.iter().map(|v| v.latency as f64).sum::<f64>() / k,
        max_latency: vis.iter().map(|v| v.latency).max().unwrap_or(0),
    })
}

pub fn simulate(args: &SimulateArgs) -> anyhow::Result<Summary> {
    let (mut cfg, mut workload) = match &args.scenario {
        Some(name) => {
            let sc = load_scenario(name)?;
            (sc.config, sc.workload)
        }
        None => (
            SimConfig {
                n: args.servers,
                seed: args.seed,
                ..SimConfig::default()
            },
            load_workload(&args.workload, args.requests, args.keys, args.seed)?,
        ),
    };
    if cfg.n == 0 {
        bail!("--servers must be at least 1");
    }
    args.mode.apply(&mut cfg, &mut workload);
    if let Some(path) = &args.faults {
        let faults: Vec<FaultSpec> = serde_json::from_str(&fs::read_to_string(path)?).context("parse faults")?;
        cfg.faults.extend(faults);
    }
    let out = sim::run(&cfg, &workload)?;
    fs::create_dir_all(&args.out)?;
    out.trace.save(args.out.join("trace.jsonl"))?;
    fs::write(args.out.join("snapshots.json"), serde_json::to_vec_pretty(&out.snapshots)?)?;
    let summary = Summary {
        config: cfg,
        visibility: visibility_summary(&out.trace),
        stats: out.stats,
        state_violations: out.state_violations,
    };
    fs::write(args.out.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;
    Ok(summary)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Report {
    pub clean: bool,
    pub events: usize,
    pub violations: Vec<Violation>,
    pub divergences: Vec<Divergence>,
}

/// Reported violations beyond this many are not minimized.
const MINIMIZE_LIMIT: usize = 20;

type Check = fn(&Trace) -> Vec<Violation>;

/// Runs every trace check, and the snapshot checks when `snapshots` is given.
pub fn check(trace: &Trace, snapshots: Option<&Snapshots>) -> Report {
    let mut checks: Vec<Check> = vec![
        check_sessions,
        check_cut_coverage,
        check_atomic_visibility,
        check_repeatable_reads,
    ];
    let propagated = trace.iter().any(|e| matches!(e.event, Event::TailIntegrate { .. }));
    if propagated {
        checks.push(check_requests);
    }
    let mut violations = Vec::new();
    for c in checks {
        for mut v in c(trace) {
            if violations.len() < MINIMIZE_LIMIT {
                v.witness = minimize_witness(trace, &v, c);
            }
            violations.push(v);
        }
    }
    let mut divergences = Vec::new();
    if let Some(s) = snapshots {
        let n = trace_width(trace).or_else(|| s.servers.first().map(|_| s.servers.len()));
        if let (Some(n), true) = (n, propagated) {
            let mut pvc = PvcTracker::new(n);
            for e in trace.iter() {
                pvc.observe(&e.event);
            }
            violations.extend(check_state(&s.servers, &pvc.pvc));
        }
        divergences = check_convergence(&s.servers, &s.store);
    }
    Report {
        clean: violations.is_empty() && divergences.is_empty(),
        events: trace.len(),
        violations,
        divergences,
    }
}

pub fn load_snapshots(path: &Path) -> anyhow::Result<Snapshots> {
    let text = fs::read_to_string(path)?;
    if let Ok(s) = serde_json::from_str::<Snapshots>(&text) {
        return Ok(s);
    }
    let servers: Vec<CacheDump> = serde_json::from_str(&text).context("parse snapshots")?;
    Ok(Snapshots {
        servers,
        ..Snapshots::default()
    })
}

pub fn human_summary(r: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} events, {} violations, {} divergences", r.events, r.violations.len(), r.divergences.len());
    for v in r.violations.iter().take(10) {
        let _ = writeln!(s, "  {:?} at {:?}: {} (witness {:?})", v.kind, v.at, v.detail, v.witness);
    }
    if r.violations.len() > 10 {
        let _ = writeln!(s, "  ...");
    }
    for d in r.divergences.iter().take(10) {
        let _ = writeln!(s, "  divergence on {} at {:?}", d.key, d.server);
    }
    s
}

pub const ANOMALY_HEADER: &str = "servers,mode,anomaly_rate";
pub const WINDOW_HEADER: &str = "servers,hops,latency,marginal";

/// Write-then-read workflows under both modes for each server count.
pub fn anomaly_rate_csv(servers: &[usize], requests: usize, seed: u64) -> anyhow::Result<String> {
    let workload = WorkloadSpec {
        shape: Shape::WriteThenRead2Fn,
        requests,
        key_pool_size: 100,
        seed,
        ..WorkloadSpec::default()
    }
    .build()?;
    let mut csv = format!("{ANOMALY_HEADER}\n");
    for &n in servers {
        for (mode, name) in [(BaselineMode::EventualBaseline, "baseline"), (BaselineMode::CausalMesh, "causalmesh")] {
            let cfg = SimConfig {
                n,
                seed,
                baseline_mode: mode,
                state_check_every: None,
                ..SimConfig::default()
            };
            let out = sim::run(&cfg, &workload)?;
            writeln!(csv, "{n},{name},{:.6}", anomaly_rate(&out.trace))?;
        }
    }
    Ok(csv)
}

/// One write per server count under a fixed per-hop delay.
pub fn window_csv(servers: &[usize], delay: u64) -> anyhow::Result<String> {
    let mut csv = format!("{WINDOW_HEADER}\n");
    let mut prev: Option<u64> = None;
    for &n in servers {
        let workload = Workload {
            tcc: false,
            preload: Vec::new(),
            workflows: vec![WorkflowDag::linear(vec![FunctionSpec::new(vec![Op::Write {
                key: "w".into(),
                value: "v".into(),
            }])
            .on(0)])],
        };
        let cfg = SimConfig {
            n,
            delay_range: (delay, delay),
            arrival_interval: 0,
            state_check_every: None,
            ..SimConfig::default()
        };
        let out = sim::run(&cfg, &workload)?;
        let at = out
            .trace
            .iter()
            .position(|e| matches!(e.event, Event::ClientWriteReply { .. }))
            .context("write never completed")?;
        let v = measure_visibility(&out.trace, at)?;
        let marginal = prev.map(|p| (v.latency as i64 - p as i64).to_string()).unwrap_or_default();
        writeln!(csv, "{n},{},{},{marginal}", v.hops, v.latency)?;
        prev = Some(v.latency);
    }
    Ok(csv)
}
