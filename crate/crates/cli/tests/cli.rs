use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::Duration;

use causalmesh_cli::wire::{self, WireMessage};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_causalmesh"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn simulate(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--servers", "3", "--seed", "4", "--requests", "60", "--keys", "50"];
    args.extend_from_slice(extra);
    args.extend_from_slice(&["--out", out]);
    run(&args, dir)
}

#[test]
fn same_seed_same_trace() {
    let dir = tempfile::tempdir().unwrap();
    assert!(simulate(dir.path(), "a", &[]).status.success());
    assert!(simulate(dir.path(), "b", &[]).status.success());
    let a = std::fs::read(dir.path().join("a/trace.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("b/trace.jsonl")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn simulated_trace_checks_clean() {
    let dir = tempfile::tempdir().unwrap();
    assert!(simulate(dir.path(), "o", &["--workload", "random-dag"]).status.success());
    let out = run(&["check", "o/trace.jsonl", "--snapshots", "o/snapshots.json"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn single_server_is_clean() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["simulate", "--servers", "1", "--requests", "50", "--keys", "20", "--workload", "random-dag", "--out", "o"],
        dir.path(),
    );
    assert!(out.status.success());
    assert_eq!(run(&["check", "o/trace.jsonl", "--snapshots", "o/snapshots.json"], dir.path()).status.code(), Some(0));
}

#[test]
fn single_round_trace_fails_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--scenario", "stalled-link", "--mode", "buggy", "--out", "o"], dir.path());
    assert!(out.status.success());
    let out = run(&["check", "o/trace.jsonl", "--report", "r.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report["clean"], false);
}

#[test]
fn malformed_trace_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.jsonl"), "{\"t\":0,\"type\":\"Nope\"}\n").unwrap();
    assert_eq!(run(&["check", "bad.jsonl"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["check", "missing.jsonl"], dir.path()).status.code(), Some(2));
}

#[test]
fn csv_headers() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["anomaly-rate", "--servers", "1,2", "--requests", "40"], dir.path());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("servers,mode,anomaly_rate"));
    assert_eq!(lines.count(), 4);

    let out = run(&["window", "--servers", "2,3", "--delay", "3"], dir.path());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text, "servers,hops,latency,marginal\n2,3,9,\n3,5,15,6\n");
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn garbage_frame_drops_connection() {
    let addr = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().to_string()
    };
    let _server = Server(
        bin()
            .args(["serve", "--id", "0", "--peers", &addr])
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let mut stream = (0..100)
        .find_map(|_| {
            TcpStream::connect(&addr).ok().or_else(|| {
                std::thread::sleep(Duration::from_millis(50));
                None
            })
        })
        .expect("server came up");
    stream.set_read_timeout(Some(Duration::from_secs(10))).unwrap();

    // A well-formed request is answered.
    let req = WireMessage::ClientWrite {
        key: "k".into(),
        value: "v".into(),
        deps: Default::default(),
        local: Default::default(),
    };
    wire::write_frame(&mut stream, &req).unwrap();
    let reply: WireMessage = wire::read_frame(&mut stream).unwrap().unwrap();
    assert!(matches!(reply, WireMessage::WriteReply { .. }), "{reply:?}");

    // A frame with a JSON-garbage body ends the connection.
    let body = b"\x00\xffnot json";
    stream.write_all(&(body.len() as u32).to_be_bytes()).unwrap();
    stream.write_all(body).unwrap();
    let mut buf = [0u8; 64];
    let n = stream.read(&mut buf).unwrap_or(0);
    assert_eq!(n, 0, "connection stayed open");
}
