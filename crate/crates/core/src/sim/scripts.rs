//! Scripted scenarios with pinned placements and fixed unit delays.

use serde::{Deserialize, Serialize};

use super::{FaultKind, FaultSpec, SimConfig};
use crate::server::PropagationMode;
use crate::workload::{FunctionSpec, Op, Workload, WorkflowDag};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: SimConfig,
    pub workload: Workload,
}

fn write(key: &str, value: &str) -> Op {
    Op::Write {
        key: key.into(),
        value: value.into(),
    }
}

fn read(key: &str) -> Op {
    Op::Read { key: key.into() }
}

fn scripted(n: usize) -> SimConfig {
    SimConfig {
        n,
        delay_range: (1, 1),
        arrival_interval: 0,
        state_check_every: Some(1),
        ..SimConfig::default()
    }
}

/// Three servers. `c1` writes x then y at S0. `c2` waits at S2 until y is
/// visible, then moves to S1 and reads x, which forces S1 to integrate x.
/// Later `c1` reads x back at S0, where it may still be pending.
pub fn migrating_reader() -> Scenario {
    let c1 = WorkflowDag::linear(vec![
        FunctionSpec::new(vec![write("x", "x1"), write("y", "y1")]).on(0),
        FunctionSpec::new(vec![read("x")]).on(0).not_before(40),
    ]);
    let c2 = WorkflowDag::linear(vec![
        FunctionSpec::new(vec![Op::ReadUntil {
            key: "y".into(),
            value: Some("y1".into()),
        }])
        .on(2)
        .not_before(1),
        FunctionSpec::new(vec![read("x")]).on(1),
    ]);
    Scenario {
        config: scripted(3),
        workload: Workload {
            tcc: false,
            preload: Vec::new(),
            workflows: vec![c1, c2],
        },
    }
}

/// Three servers with the S0 to S1 link stalled. C1 writes x0 then y1 at
/// S0; C2 writes y2 then z3 at S1. With a single propagation round, S0
/// integrates y2 and drags in y1 and x0, which S1 has not seen.
pub fn stalled_link(mode: PropagationMode) -> Scenario {
    let c1 = WorkflowDag::linear(vec![FunctionSpec::new(vec![write("x", "x0"), write("y", "y1")]).on(0)]);
    let c2 = WorkflowDag::linear(vec![FunctionSpec::new(vec![write("y", "y2"), write("z", "z3")])
        .on(1)
        .not_before(5)]);
    Scenario {
        config: SimConfig {
            propagation_mode: mode,
            faults: vec![FaultSpec {
                kind: FaultKind::LinkStall,
                link: (0, 1),
                start: 0,
                duration: 60,
            }],
            ..scripted(3)
        },
        workload: Workload {
            tcc: false,
            preload: Vec::new(),
            workflows: vec![c1, c2],
        },
    }
}
