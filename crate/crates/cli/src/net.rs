//! TCP runner: one server state machine per process, peers connected by one
//! ordered connection each way.

use std::io::{BufReader, BufWriter};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::thread;
use std::time::Duration;

use anyhow::{bail, Context};
use causalmesh::client::Endpoint;
use causalmesh::server::{Effects, ReadReply, Server, ServerConfig, ServerEvent, TccServer};
use causalmesh::store::Store;
use causalmesh::tcc::{ReadSet, TccReadReply};
use causalmesh::{Deps, Key, SessionError, Value, VectorClock};

use crate::wire::{read_frame, write_frame, WireMessage};

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub id: usize,
    pub peers: Vec<String>,
    pub config: ServerConfig,
    pub tcc: bool,
    pub store: Option<PathBuf>,
    pub connect_attempts: u32,
}

enum Node {
    Mesh(Server),
    Tcc(TccServer),
}

struct Job {
    msg: WireMessage,
    reply: Option<Sender<WireMessage>>,
}

/// Connects to `addr`, retrying with exponential backoff.
pub fn connect(addr: &str, attempts: u32) -> anyhow::Result<TcpStream> {
    let mut wait = Duration::from_millis(20);
    for i in 0..attempts.max(1) {
        match TcpStream::connect(addr) {
            Ok(s) => {
                s.set_nodelay(true)?;
                return Ok(s);
            }
            Err(e) if i + 1 < attempts => {
                log::debug!("connect {addr}: {e}; retrying in {wait:?}");
                thread::sleep(wait);
                wait = (wait * 2).min(Duration::from_millis(500));
            }
            Err(e) => return Err(e).with_context(|| format!("peer {addr} unreachable")),
        }
    }
    unreachable!()
}

/// Runs one server until the process is killed. Returns early only on
/// startup failure.
pub fn serve(opts: ServeOptions) -> anyhow::Result<()> {
    let n = opts.peers.len();
    if opts.id >= n {
        bail!("server id {} out of range for {} peers", opts.id, n);
    }
    let listener = TcpListener::bind(&opts.peers[opts.id]).with_context(|| format!("bind {}", opts.peers[opts.id]))?;
    log::info!("server {} listening on {}", opts.id, opts.peers[opts.id]);

    let (jobs, inbox) = channel::<Job>();
    let mut links: Vec<Option<Sender<WireMessage>>> = Vec::with_capacity(n);
    let mut ready = Vec::new();
    for (j, addr) in opts.peers.iter().enumerate() {
        if j == opts.id {
            links.push(None);
            continue;
        }
        let (tx, rx) = channel::<WireMessage>();
        links.push(Some(tx));
        let (addr, attempts) = (addr.clone(), opts.connect_attempts);
        let (ok_tx, ok_rx) = channel();
        ready.push(ok_rx);
        thread::spawn(move || peer_writer(&addr, attempts, rx, ok_tx));
    }

    {
        let jobs = jobs.clone();
        thread::spawn(move || {
            for conn in listener.incoming() {
                match conn {
                    Ok(stream) => {
                        let jobs = jobs.clone();
                        thread::spawn(move || connection(stream, jobs));
                    }
                    Err(e) => log::warn!("accept: {e}"),
                }
            }
        });
    }

    for r in ready {
        if let Ok(Err(e)) | Err(e) = r.recv().map_err(anyhow::Error::from) {
            bail!(e);
        }
    }
    log::info!("server {} connected to all peers", opts.id);

    let store = match &opts.store {
        Some(p) => Store::open(p)?,
        None => Store::new(),
    };
    execute(opts, store, inbox, jobs, links);
    Ok(())
}

fn peer_writer(addr: &str, attempts: u32, rx: Receiver<WireMessage>, ok: Sender<anyhow::Result<()>>) {
    let stream = match connect(addr, attempts) {
        Ok(s) => {
            let _ = ok.send(Ok(()));
            s
        }
        Err(e) => {
            let _ = ok.send(Err(e));
            return;
        }
    };
    let mut w = BufWriter::new(stream);
    for msg in rx {
        if let Err(e) = write_frame(&mut w, &msg) {
            // Losing a peer message would break ordering guarantees.
            log::error!("peer {addr}: {e}");
            std::process::exit(1);
        }
    }
}

fn connection(stream: TcpStream, jobs: Sender<Job>) {
    let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
    let _ = stream.set_nodelay(true);
    let Ok(write_half) = stream.try_clone() else { return };
    let mut r = BufReader::new(stream);
    let mut w = BufWriter::new(write_half);
    loop {
        let msg = match read_frame(&mut r) {
            Ok(Some(m)) => m,
            Ok(None) => return,
            Err(e) => {
                log::warn!("dropping connection from {peer}: {e}");
                return;
            }
        };
        if matches!(msg, WireMessage::ServerWrite { .. }) {
            if jobs.send(Job { msg, reply: None }).is_err() {
                return;
            }
            continue;
        }
        let (tx, rx) = channel();
        if jobs.send(Job { msg, reply: Some(tx) }).is_err() {
            return;
        }
        let Ok(reply) = rx.recv() else { return };
        if write_frame(&mut w, &reply).is_err() {
            return;
        }
    }
}

fn execute(opts: ServeOptions, mut store: Store, inbox: Receiver<Job>, me: Sender<Job>, links: Vec<Option<Sender<WireMessage>>>) {
    let n = opts.peers.len();
    let mut node = if opts.tcc {
        Node::Tcc(TccServer::new_tcc(opts.id, n, opts.config))
    } else {
        Node::Mesh(Server::new(opts.id, n, opts.config))
    };
    for job in inbox {
        let (reply, fx) = handle(&mut node, &store, job.msg);
        for v in &fx.store_writes {
            if let Err(e) = store.put(v.clone()) {
                log::error!("store: {e}");
            }
        }
        for ev in &fx.events {
            match ev {
                ServerEvent::TailIntegrate { version, hop } => {
                    log::debug!("server {} tail-integrated {}@{} at hop {hop}", opts.id, version.key, version.vc)
                }
                ServerEvent::MissFetch { key, vc, .. } => log::debug!("server {} fetched {key}@{vc}", opts.id),
                ServerEvent::Integrated { versions } => log::trace!("server {} integrated {versions:?}", opts.id),
            }
        }
        for out in fx.outgoing {
            let msg = WireMessage::ServerWrite { from: out.from, msg: out.msg };
            match &links[out.to] {
                Some(tx) => {
                    let _ = tx.send(msg);
                }
                None => {
                    let _ = me.send(Job { msg, reply: None });
                }
            }
        }
        if let (Some(tx), Some(r)) = (job.reply, reply) {
            let _ = tx.send(r);
        }
    }
}

fn err(e: impl std::fmt::Display) -> WireMessage {
    WireMessage::Error { message: e.to_string() }
}

fn handle(node: &mut Node, store: &Store, msg: WireMessage) -> (Option<WireMessage>, Effects) {
    use WireMessage as M;
    let none = Effects::default();
    match (node, msg) {
        (Node::Mesh(s), M::ServerWrite { msg, .. }) => match s.handle_peer(msg) {
            Ok(fx) => (None, fx),
            Err(e) => {
                log::error!("server {}: {e}", s.id());
                (None, none)
            }
        },
        (Node::Tcc(s), M::ServerWrite { msg, .. }) => match s.handle_peer(msg) {
            Ok(fx) => (None, fx),
            Err(e) => {
                log::error!("server {}: {e}", s.id());
                (None, none)
            }
        },
        (Node::Mesh(s), M::ClientWrite { key, value, deps, local }) => {
            let (vc, fx) = s.handle_client_write(&key, value, &deps, &local);
            (Some(M::WriteReply { vc }), fx)
        }
        (Node::Tcc(s), M::ClientWrite { key, value, deps, local }) => {
            let (vc, fx) = s.handle_client_write(&key, value, &deps, &local);
            (Some(M::WriteReply { vc }), fx)
        }
        (Node::Mesh(s), M::ClientRead { key, deps }) => match s.handle_client_read(&key, &deps, store) {
            Ok((reply, fx)) => (Some(M::ReadReply { reply }), fx),
            Err(e) => (Some(err(e)), none),
        },
        (Node::Mesh(s), M::ClientReadTxn { keys, deps }) => match s.handle_client_read_txn(&keys, &deps, store) {
            Ok((replies, fx)) => (Some(M::ReadTxnReply { replies }), fx),
            Err(e) => (Some(err(e)), none),
        },
        (Node::Tcc(s), M::TccRead { key, deps, readset }) => match s.handle_client_read_tcc(&key, &deps, &readset, store) {
            Ok((reply, fx)) => (Some(M::TccReadReply { reply }), fx),
            Err(e) => (Some(err(e)), none),
        },
        (Node::Mesh(s), M::TccBatchWrite { batch, deps, local }) => match s.handle_batch_write(&batch, &deps, &local) {
            Ok((clocks, fx)) => (Some(M::BatchReply { clocks }), fx),
            Err(e) => (Some(err(e)), none),
        },
        (Node::Tcc(s), M::TccBatchWrite { batch, deps, local }) => match s.handle_batch_write(&batch, &deps, &local) {
            Ok((clocks, fx)) => (Some(M::BatchReply { clocks }), fx),
            Err(e) => (Some(err(e)), none),
        },
        (_, other) => (Some(err(format!("unexpected request {other:?}"))), none),
    }
}

/// Client side of one server connection.
pub struct TcpEndpoint {
    id: usize,
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

fn transport(e: impl std::fmt::Display) -> SessionError {
    SessionError::Transport(e.to_string())
}

impl TcpEndpoint {
    pub fn connect(id: usize, addr: &str, attempts: u32) -> anyhow::Result<Self> {
        let s = connect(addr, attempts)?;
        Ok(TcpEndpoint {
            id,
            reader: BufReader::new(s.try_clone()?),
            writer: BufWriter::new(s),
        })
    }

    pub fn call(&mut self, msg: &WireMessage) -> Result<WireMessage, SessionError> {
        write_frame(&mut self.writer, msg).map_err(transport)?;
        match read_frame(&mut self.reader).map_err(transport)? {
            Some(WireMessage::Error { message }) => Err(SessionError::Transport(message)),
            Some(m) => Ok(m),
            None => Err(transport("connection closed")),
        }
    }
}

fn unexpected(m: WireMessage) -> SessionError {
    transport(format!("unexpected reply {m:?}"))
}

impl Endpoint for TcpEndpoint {
    fn server_id(&self) -> usize {
        self.id
    }

    fn write(&mut self, key: &str, value: Value, deps: &Deps, local: &Deps) -> Result<VectorClock, SessionError> {
        match self.call(&WireMessage::ClientWrite {
            key: key.into(),
            value,
            deps: deps.clone(),
            local: local.clone(),
        })? {
            WireMessage::WriteReply { vc } => Ok(vc),
            m => Err(unexpected(m)),
        }
    }

    fn read(&mut self, key: &str, deps: &Deps) -> Result<ReadReply, SessionError> {
        match self.call(&WireMessage::ClientRead {
            key: key.into(),
            deps: deps.clone(),
        })? {
            WireMessage::ReadReply { reply } => Ok(reply),
            m => Err(unexpected(m)),
        }
    }

    fn read_txn(&mut self, keys: &[Key], deps: &Deps) -> Result<Vec<(Key, ReadReply)>, SessionError> {
        match self.call(&WireMessage::ClientReadTxn {
            keys: keys.to_vec(),
            deps: deps.clone(),
        })? {
            WireMessage::ReadTxnReply { replies } => Ok(replies),
            m => Err(unexpected(m)),
        }
    }

    fn read_tcc(&mut self, key: &str, deps: &Deps, readset: &ReadSet) -> Result<TccReadReply, SessionError> {
        match self.call(&WireMessage::TccRead {
            key: key.into(),
            deps: deps.clone(),
            readset: readset.clone(),
        })? {
            WireMessage::TccReadReply { reply } => Ok(reply),
            m => Err(unexpected(m)),
        }
    }

    fn batch_write(&mut self, batch: &[(Key, Value)], deps: &Deps, local: &Deps) -> Result<Vec<VectorClock>, SessionError> {
        match self.call(&WireMessage::TccBatchWrite {
            batch: batch.to_vec(),
            deps: deps.clone(),
            local: local.clone(),
        })? {
            WireMessage::BatchReply { clocks } => Ok(clocks),
            m => Err(unexpected(m)),
        }
    }
}
