//! Brute-force reference implementations and drivers that compare them
//! against the real ones on many small random instances.

use std::collections::{BTreeMap, BTreeSet};

use causalmesh::cache::{integrate, integrate_tcc, CCache, ClosureRule, ICache, TccCCache, VisibleCache};
use causalmesh::checker::check_sessions;
use causalmesh::trace::{Event, Trace};
use causalmesh::{resolve, Deps, Value, VectorClock, Version, VersionedValue};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KEYS: [&str; 5] = ["a", "b", "c", "d", "e"];

fn rand_clock(rng: &mut impl Rng, n: usize, max: u64) -> VectorClock {
    VectorClock::from((0..n).map(|_| rng.random_range(0..=max)).collect::<Vec<_>>())
}

fn leq(a: &[u64], b: &[u64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y)
}

fn join(a: &[u64], b: &[u64]) -> Vec<u64> {
    a.iter().zip(b).map(|(x, y)| *x.max(y)).collect()
}

struct Instance {
    n: usize,
    icache: ICache,
    visible: Vec<Version>,
    deps: Deps,
}

fn instance(rng: &mut impl Rng) -> Instance {
    let n = rng.random_range(1..=3);
    let nkeys = rng.random_range(1..=KEYS.len());
    let keys = &KEYS[..nkeys];
    let mut pool: Vec<(String, VectorClock)> = Vec::new();
    let mut icache = ICache::new();
    for k in keys {
        for i in 0..rng.random_range(0..=4) {
            let vc = rand_clock(rng, n, 3);
            let mut deps = Deps::new();
            for _ in 0..rng.random_range(0..=2) {
                let dk = *keys.choose(rng).unwrap();
                let dc = match pool.choose(rng) {
                    Some((pk, pc)) if rng.random_bool(0.6) => {
                        deps.add(pk.clone(), pc);
                        continue;
                    }
                    _ => rand_clock(rng, n, 2),
                };
                deps.add(dk, &dc);
            }
            pool.push((k.to_string(), vc.clone()));
            icache.insert(Version::new(*k, format!("{k}{i}"), vc, deps));
        }
    }
    let mut visible = Vec::new();
    for k in keys {
        if rng.random_bool(0.4) {
            visible.push(Version::new(*k, format!("{k}v"), rand_clock(rng, n, 2), Deps::new()));
        }
    }
    let mut deps = Deps::new();
    for _ in 0..rng.random_range(1..=3) {
        match pool.choose(rng) {
            Some((k, c)) if rng.random_bool(0.7) => deps.add(k.clone(), c),
            _ => deps.add(*keys.choose(rng).unwrap(), &rand_clock(rng, n, 2)),
        }
    }
    Instance { n, icache, visible, deps }
}

/// Least fixpoint of "a pending version is pulled when some requirement on
/// its key dominates it; a pulled version's deps become requirements".
fn oracle_closure(inst: &Instance) -> (BTreeSet<(String, Vec<u64>)>, BTreeSet<(String, Vec<u64>)>) {
    let mut reqs: BTreeSet<(String, Vec<u64>)> =
        inst.deps.iter().map(|(k, c)| (k.clone(), c.entries().to_vec())).collect();
    let mut pulled: BTreeSet<(String, Vec<u64>)> = BTreeSet::new();
    loop {
        let mut grew = false;
        for v in inst.icache.iter() {
            let id = (v.key.clone(), v.vc.entries().to_vec());
            if pulled.contains(&id) {
                continue;
            }
            if reqs.iter().any(|(k, c)| k == &v.key && leq(v.vc.entries(), c)) {
                pulled.insert(id);
                for (k, c) in v.deps.iter() {
                    reqs.insert((k.clone(), c.entries().to_vec()));
                }
                grew = true;
            }
        }
        if !grew {
            return (reqs, pulled);
        }
    }
}

/// Fold of a set of versions: join of clocks, value of the write with the
/// lexicographically largest (origin, value).
fn oracle_fold(vs: &[&Version]) -> (Vec<u64>, Value) {
    let mut vc = vs[0].vc.entries().to_vec();
    for v in vs {
        vc = join(&vc, v.vc.entries());
    }
    let best = vs
        .iter()
        .max_by(|a, b| (a.origin().entries(), &a.value).cmp(&(b.origin().entries(), &b.value)))
        .unwrap();
    (vc, best.value.clone())
}

struct Expected {
    ok: bool,
    heads: BTreeMap<String, (Vec<u64>, Value)>,
    remaining: BTreeSet<(String, Vec<u64>)>,
    gvc: Vec<u64>,
    moved: BTreeSet<(String, Vec<u64>)>,
}

fn oracle(inst: &Instance, gvc0: &[u64]) -> Expected {
    let (reqs, pulled) = oracle_closure(inst);
    let mut heads = BTreeMap::new();
    for k in KEYS {
        let mut vs: Vec<&Version> = inst.visible.iter().filter(|v| v.key == k).collect();
        vs.extend(
            inst.icache
                .iter()
                .filter(|v| v.key == k && pulled.contains(&(v.key.clone(), v.vc.entries().to_vec()))),
        );
        if !vs.is_empty() {
            heads.insert(k.to_string(), oracle_fold(&vs));
        }
    }
    let ok = reqs
        .iter()
        .all(|(k, c)| heads.get(k).is_some_and(|(h, _)| leq(c, h)));
    let mut gvc = gvc0.to_vec();
    for (_, c) in reqs.iter().chain(&pulled) {
        gvc = join(&gvc, c);
    }
    let all: BTreeSet<_> = inst.icache.iter().map(|v| (v.key.clone(), v.vc.entries().to_vec())).collect();
    Expected {
        ok,
        heads,
        remaining: all.difference(&pulled).cloned().collect(),
        gvc,
        moved: pulled,
    }
}

fn ids(vs: &[Version]) -> BTreeSet<(String, Vec<u64>)> {
    vs.iter().map(|v| (v.key.clone(), v.vc.entries().to_vec())).collect()
}

fn ids_icache(ic: &ICache) -> BTreeSet<(String, Vec<u64>)> {
    ic.iter().map(|v| (v.key.clone(), v.vc.entries().to_vec())).collect()
}

/// Returns how many instances integrated successfully.
pub fn integrate_cases(seed: u64, cases: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut successes = 0;
    for case in 0..cases {
        let inst = instance(&mut rng);
        let mut cc = CCache::new();
        for v in &inst.visible {
            cc.fold(v);
        }
        let gvc0 = rand_clock(&mut rng, inst.n, 1);
        let want = oracle(&inst, gvc0.entries());

        let mut ic = inst.icache.clone();
        let mut gvc = gvc0.clone();
        let before = (ic.clone(), cc.clone(), gvc.clone());
        let got = integrate(&mut ic, &mut cc, &mut gvc, &inst.deps, ClosureRule::Dominated);
        assert_eq!(got.is_ok(), want.ok, "case {case}");
        match got {
            Err(_) => assert_eq!((ic, cc, gvc), before, "case {case}: failed integration mutated state"),
            Ok(moved) => {
                successes += 1;
                assert_eq!(ids(&moved), want.moved, "case {case}");
                assert_eq!(ids_icache(&ic), want.remaining, "case {case}");
                assert_eq!(gvc.entries(), want.gvc.as_slice(), "case {case}");
                let heads: BTreeMap<_, _> = cc
                    .iter()
                    .map(|(k, v)| (k.clone(), (v.vc.entries().to_vec(), v.value.clone())))
                    .collect();
                assert_eq!(heads, want.heads, "case {case}");
            }
        }
    }
    successes
}

pub fn integrate_tcc_cases(seed: u64, cases: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let inst = instance(&mut rng);
        let cap = rng.random_range(1..=3);
        let mut cc = TccCCache::new(cap);
        for v in &inst.visible {
            cc.append_merged(&v.key.clone(), vec![v.clone()]);
        }
        let old: BTreeMap<String, Vec<Version>> =
            cc.rings().iter().map(|(k, r)| (k.clone(), r.iter().cloned().collect())).collect();
        let gvc0 = VectorClock::zero(inst.n);
        let want = oracle(&inst, gvc0.entries());

        let mut ic = inst.icache.clone();
        let mut gvc = gvc0.clone();
        let got = integrate_tcc(&mut ic, &mut cc, &mut gvc, &inst.deps, ClosureRule::Dominated);
        assert_eq!(got.is_ok(), want.ok, "case {case}");
        let Ok(moved) = got else { continue };
        assert_eq!(ids(&moved), want.moved, "case {case}");
        assert_eq!(ids_icache(&ic), want.remaining, "case {case}");
        assert_eq!(gvc.entries(), want.gvc.as_slice(), "case {case}");
        for (k, (vc, value)) in &want.heads {
            let head = cc.head(k).unwrap();
            assert_eq!((head.vc.entries(), &head.value), (vc.as_slice(), value), "case {case} key {k}");
            let gained = want.moved.iter().any(|(mk, _)| mk == k);
            let mut ring: Vec<Version> = cc.ring(k).cloned().collect();
            let prev = old.get(k).cloned().unwrap_or_default();
            if gained && prev.last() != Some(head) {
                // One merged entry appended, carrying every folded dep.
                let mut expect = prev.clone();
                expect.push(head.clone());
                let skip = expect.len().saturating_sub(cap);
                assert_eq!(ring, expect[skip..].to_vec(), "case {case} key {k}");
                let mut deps = Deps::new();
                for v in inst.icache.iter().filter(|v| &v.key == k) {
                    if want.moved.contains(&(k.clone(), v.vc.entries().to_vec())) {
                        deps.merge(&v.deps);
                    }
                }
                assert!(head.deps.covers(&deps), "case {case} key {k}");
            } else {
                ring.truncate(prev.len());
                assert_eq!(ring, prev, "case {case} key {k}");
            }
        }
        let visible: Vec<Version> = cc.visible_versions();
        assert_eq!(visible.len(), cc.rings().values().map(|r| r.len()).sum::<usize>());
    }
}

fn all_clocks(width: usize) -> Vec<VectorClock> {
    let mut out = vec![vec![]];
    for _ in 0..width {
        out = out
            .into_iter()
            .flat_map(|p: Vec<u64>| (0..=2).map(move |x| [p.clone(), vec![x]].concat()))
            .collect();
    }
    out.into_iter().map(VectorClock::from).collect()
}

/// Every ordering of every triple of values on clocks of width up to 3
/// with entries up to 2.
pub fn resolve_exhaustive() {
    for width in 1..=3 {
        let vals: Vec<VersionedValue> = all_clocks(width)
            .into_iter()
            .flat_map(|c| ["p", "q"].map(|v| VersionedValue::new(v, c.clone())))
            .collect();
        for a in &vals {
            for b in &vals {
                assert_eq!(resolve(a, b), resolve(b, a));
                for c in &vals {
                    let orders = [
                        [a, b, c],
                        [a, c, b],
                        [b, a, c],
                        [b, c, a],
                        [c, a, b],
                        [c, b, a],
                    ];
                    let first = resolve(&resolve(a, b), c);
                    for [x, y, z] in orders {
                        assert_eq!(resolve(&resolve(x, y), z), first);
                        assert_eq!(resolve(x, &resolve(y, z)), first);
                    }
                    let (vc, value) = {
                        let vc = join(&join(a.vc.entries(), b.vc.entries()), c.vc.entries());
                        let best = [a, b, c]
                            .into_iter()
                            .max_by(|p, q| (p.vc.entries(), &p.value).cmp(&(q.vc.entries(), &q.value)))
                            .unwrap();
                        (vc, best.value.clone())
                    };
                    assert_eq!((first.vc.entries(), &first.value), (vc.as_slice(), &value));
                }
            }
        }
    }
}

#[derive(Clone)]
enum Op {
    W { s: u64, key: &'static str, vc: VectorClock },
    R { s: u64, key: &'static str, vc: Option<VectorClock>, served: Option<VectorClock> },
}

impl Op {
    fn session(&self) -> u64 {
        match self {
            Op::W { s, .. } | Op::R { s, .. } => *s,
        }
    }
    fn key(&self) -> &'static str {
        match self {
            Op::W { key, .. } | Op::R { key, .. } => key,
        }
    }
    fn clock(&self) -> Option<&VectorClock> {
        match self {
            Op::W { vc, .. } => Some(vc),
            Op::R { vc, .. } => vc.as_ref(),
        }
    }
}

fn history(rng: &mut impl Rng) -> Vec<Op> {
    let len = rng.random_range(1..=12);
    let sessions = rng.random_range(1..=3);
    (0..len)
        .map(|_| {
            let s = rng.random_range(0..sessions);
            let key = *["x", "y"].choose(rng).unwrap();
            if rng.random_bool(0.45) {
                Op::W { s, key, vc: rand_clock(rng, 2, 3) }
            } else if rng.random_bool(0.1) {
                Op::R { s, key, vc: None, served: None }
            } else {
                let served = rng.random_bool(0.8).then(|| rand_clock(rng, 2, 3));
                let own = rand_clock(rng, 2, 2);
                let vc = match &served {
                    Some(c) if rng.random_bool(0.5) => c.merge(&own).unwrap(),
                    Some(c) => c.clone(),
                    None => own,
                };
                Op::R { s, key, vc: Some(vc), served }
            }
        })
        .collect()
}

/// Full happens-before closure: session order plus an edge from every write
/// to each later read whose cache-hit clock dominates it. A read must return
/// at least every same-key clock in the causal past of its session
/// predecessors.
fn exhaustive(ops: &[Op]) -> BTreeSet<usize> {
    let m = ops.len();
    let mut hb = vec![vec![false; m]; m];
    for j in 0..m {
        for i in 0..j {
            let po = ops[i].session() == ops[j].session();
            let rf = match (&ops[i], &ops[j]) {
                (Op::W { key: kw, vc, .. }, Op::R { key, served: Some(c), .. }) => kw == key && vc.dominated_by(c),
                _ => false,
            };
            hb[i][j] = po || rf;
        }
    }
    for k in 0..m {
        for i in 0..m {
            for j in 0..m {
                if hb[i][k] && hb[k][j] {
                    hb[i][j] = true;
                }
            }
        }
    }
    let mut bad = BTreeSet::new();
    for (r, op) in ops.iter().enumerate() {
        let Op::R { vc, .. } = op else { continue };
        let mut past = BTreeSet::new();
        for p in 0..r {
            if ops[p].session() != op.session() {
                continue;
            }
            past.insert(p);
            past.extend((0..m).filter(|&e| hb[e][p]));
        }
        let required: Vec<&VectorClock> = past
            .iter()
            .filter(|&&e| ops[e].key() == op.key())
            .filter_map(|&e| ops[e].clock())
            .collect();
        if required.iter().any(|c| !vc.as_ref().is_some_and(|v| c.dominated_by(v))) {
            bad.insert(r);
        }
    }
    bad
}

fn to_trace(ops: &[Op]) -> Trace {
    let mut t = Trace::new();
    for (i, op) in ops.iter().enumerate() {
        let e = match op.clone() {
            Op::W { s, key, vc } => Event::ClientWriteReply { session: s, server: 0, key: key.into(), vc },
            Op::R { s, key, vc, served } => Event::ClientReadReply {
                session: s,
                server: 0,
                key: key.into(),
                value: None,
                vc,
                served,
                fetched: false,
            },
        };
        t.push(i as u64, e);
    }
    t
}

/// Returns how many histories had at least one violating read.
pub fn session_cases(seed: u64, cases: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flagged = 0;
    for case in 0..cases {
        let ops = history(&mut rng);
        let want = exhaustive(&ops);
        let got: BTreeSet<usize> = check_sessions(&to_trace(&ops)).iter().filter_map(|v| v.at).collect();
        assert_eq!(got, want, "case {case}");
        flagged += usize::from(!want.is_empty());
    }
    flagged
}
