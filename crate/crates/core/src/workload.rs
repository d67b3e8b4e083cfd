//! Workflow shapes and key generators.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::version::{Key, Value};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    Read { key: Key },
    Write { key: Key, value: Value },
    /// Read-only transaction over several keys. Under TCC it becomes a
    /// sequence of transactional reads.
    ReadTxn { keys: Vec<Key> },
    /// Polls `key` until it returns `value` (or anything, if `None`).
    ReadUntil {
        key: Key,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        value: Option<Value>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub ops: Vec<Op>,
    /// Run on this server instead of consulting the roaming policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server: Option<usize>,
    /// Earliest logical start time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub not_before: Option<u64>,
}

impl FunctionSpec {
    pub fn new(ops: Vec<Op>) -> Self {
        FunctionSpec {
            ops,
            ..FunctionSpec::default()
        }
    }

    pub fn on(mut self, server: usize) -> Self {
        self.server = Some(server);
        self
    }

    pub fn not_before(mut self, t: u64) -> Self {
        self.not_before = Some(t);
        self
    }
}

/// Functions connected by edges `(from, to)`. Edges must point from a lower
/// to a higher index, function 0 is the only entry and there is exactly one
/// sink.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowDag {
    pub functions: Vec<FunctionSpec>,
    #[serde(default)]
    pub edges: Vec<(usize, usize)>,
}

impl WorkflowDag {
    /// Functions run one after another.
    pub fn linear(functions: Vec<FunctionSpec>) -> Self {
        let edges = (1..functions.len()).map(|i| (i - 1, i)).collect();
        WorkflowDag { functions, edges }
    }

    pub fn successors(&self, f: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.0 == f).map(|e| e.1).collect()
    }

    pub fn predecessors(&self, f: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.1 == f).map(|e| e.0).collect()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        let n = self.functions.len();
        if n == 0 {
            return bad("workflow has no functions".into());
        }
        let mut seen = BTreeSet::new();
        for &(a, b) in &self.edges {
            if a >= b || b >= n {
                return bad(format!("edge ({a}, {b}) is not forward within {n} functions"));
            }
            if !seen.insert((a, b)) {
                return bad(format!("duplicate edge ({a}, {b})"));
            }
        }
        if (1..n).any(|f| self.predecessors(f).is_empty()) {
            return bad("every function but the first needs a predecessor".into());
        }
        let sinks = (0..n).filter(|&f| self.successors(f).is_empty()).count();
        if sinks != 1 {
            return bad(format!("workflow has {sinks} sinks, expected one"));
        }
        Ok(())
    }

    pub fn op_count(&self) -> usize {
        self.functions.iter().map(|f| f.ops.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    WriteThenRead2Fn,
    Micro3Fn,
    RandomDag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub key_pool_size: usize,
    pub zipf_theta: f64,
    pub value_size: usize,
    pub shape: Shape,
    pub requests: usize,
    pub tcc: bool,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            key_pool_size: 10_000,
            zipf_theta: 1.0,
            value_size: 8,
            shape: Shape::RandomDag,
            requests: 1_000,
            tcc: false,
            seed: 0,
        }
    }
}

/// Everything a simulation run executes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    #[serde(default)]
    pub tcc: bool,
    /// Store contents before the run, at the zero clock.
    #[serde(default)]
    pub preload: Vec<(Key, Value)>,
    pub workflows: Vec<WorkflowDag>,
}

pub fn key_name(rank: usize) -> Key {
    format!("k{rank}")
}

/// Zipf sampler over the key pool: rank `r` (1-based) is drawn with
/// probability proportional to `r^-theta`.
pub struct KeyGen {
    zipf: Zipf<f64>,
}

impl KeyGen {
    pub fn new(spec: &WorkloadSpec) -> Result<Self, SimError> {
        let zipf = Zipf::new(spec.key_pool_size.max(1) as f64, spec.zipf_theta)
            .map_err(|e| SimError::Config(format!("zipf: {e}")))?;
        Ok(KeyGen { zipf })
    }

    pub fn rank(&self, rng: &mut impl Rng) -> usize {
        self.zipf.sample(rng) as usize
    }

    pub fn key(&self, rng: &mut impl Rng) -> Key {
        key_name(self.rank(rng))
    }
}

pub fn gen_zipf_key(spec: &WorkloadSpec, rng: &mut impl Rng) -> Key {
    KeyGen::new(spec).expect("valid zipf parameters").key(rng)
}

/// A value of exactly `size` bytes, distinct per `(workflow, seq)` as far
/// as the size allows.
pub fn make_value(size: usize, workflow: usize, seq: usize) -> Value {
    let mut s = format!("{workflow:x}.{seq:x}");
    if s.len() < size {
        s.extend(std::iter::repeat_n('_', size - s.len()));
    } else {
        s.truncate(size);
    }
    Value::from(s)
}

struct Builder<'a> {
    spec: &'a WorkloadSpec,
    keys: KeyGen,
    rng: ChaCha8Rng,
    workflow: usize,
    seq: usize,
}

impl Builder<'_> {
    fn key(&mut self) -> Key {
        self.keys.key(&mut self.rng)
    }

    fn distinct_keys(&mut self, count: usize) -> Vec<Key> {
        let want = count.min(self.spec.key_pool_size);
        let mut out: Vec<Key> = Vec::with_capacity(want);
        while out.len() < want {
            let k = self.key();
            if !out.contains(&k) {
                out.push(k);
            }
        }
        out
    }

    fn write(&mut self, key: Key) -> Op {
        self.seq += 1;
        Op::Write {
            key,
            value: make_value(self.spec.value_size, self.workflow, self.seq),
        }
    }

    fn micro3fn(&mut self) -> WorkflowDag {
        let r1 = self.distinct_keys(3);
        let r2 = self.distinct_keys(3);
        let w = self.key();
        let w = self.write(w);
        WorkflowDag::linear(vec![
            FunctionSpec::new(r1.into_iter().map(|key| Op::Read { key }).collect()),
            FunctionSpec::new(r2.into_iter().map(|key| Op::Read { key }).collect()),
            FunctionSpec::new(vec![w]),
        ])
    }

    fn write_then_read(&mut self) -> WorkflowDag {
        let k = self.key();
        let w = self.write(k.clone());
        WorkflowDag::linear(vec![FunctionSpec::new(vec![w]), FunctionSpec::new(vec![Op::Read { key: k }])])
    }

    fn random_function(&mut self) -> FunctionSpec {
        let count = self.rng.random_range(1..=4);
        let ops = (0..count)
            .map(|_| match self.rng.random_range(0..10) {
                0..5 => Op::Read { key: self.key() },
                5..8 => {
                    let k = self.key();
                    self.write(k)
                }
                _ => {
                    let n = self.rng.random_range(2..=3);
                    Op::ReadTxn {
                        keys: self.distinct_keys(n),
                    }
                }
            })
            .collect();
        FunctionSpec::new(ops)
    }

    /// Either a chain of one to four functions or a diamond (fan-out to two
    /// branches that join again).
    fn random_dag(&mut self) -> WorkflowDag {
        if self.rng.random_bool(0.25) {
            let functions = (0..4).map(|_| self.random_function()).collect();
            WorkflowDag {
                functions,
                edges: vec![(0, 1), (0, 2), (1, 3), (2, 3)],
            }
        } else {
            let len = self.rng.random_range(1..=4);
            WorkflowDag::linear((0..len).map(|_| self.random_function()).collect())
        }
    }
}

impl WorkloadSpec {
    pub fn build(&self) -> Result<Workload, SimError> {
        if self.key_pool_size == 0 {
            return Err(SimError::Config("key pool is empty".into()));
        }
        let mut b = Builder {
            spec: self,
            keys: KeyGen::new(self)?,
            rng: ChaCha8Rng::seed_from_u64(self.seed),
            workflow: 0,
            seq: 0,
        };
        let mut workflows = Vec::with_capacity(self.requests);
        for w in 0..self.requests {
            b.workflow = w;
            b.seq = 0;
            workflows.push(match self.shape {
                Shape::WriteThenRead2Fn => b.write_then_read(),
                Shape::Micro3Fn => b.micro3fn(),
                Shape::RandomDag => b.random_dag(),
            });
        }
        let preload = (1..=self.key_pool_size).map(|r| (key_name(r), Value::from("init"))).collect();
        Ok(Workload {
            tcc: self.tcc,
            preload,
            workflows,
        })
    }
}

pub fn build_micro3fn(spec: &WorkloadSpec) -> Result<WorkflowDag, SimError> {
    let spec = WorkloadSpec {
        shape: Shape::Micro3Fn,
        requests: 1,
        ..spec.clone()
    };
    Ok(spec.build()?.workflows.remove(0))
}

pub fn build_write_then_read(spec: &WorkloadSpec) -> Result<WorkflowDag, SimError> {
    let spec = WorkloadSpec {
        shape: Shape::WriteThenRead2Fn,
        requests: 1,
        ..spec.clone()
    };
    Ok(spec.build()?.workflows.remove(0))
}
