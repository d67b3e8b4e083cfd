//! Frames: 4-byte big-endian body length, then a JSON body.

use std::io::{self, Read, Write};

use causalmesh::server::{PeerMessage, ReadReply};
use causalmesh::tcc::{ReadSet, TccReadReply};
use causalmesh::{Deps, Key, Value, VectorClock};
use serde::{Deserialize, Serialize};

/// Frames larger than this are rejected without reading the body.
pub const MAX_FRAME: u32 = 16 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum WireMessage {
    ClientRead { key: Key, deps: Deps },
    ClientWrite { key: Key, value: Value, deps: Deps, local: Deps },
    ClientReadTxn { keys: Vec<Key>, deps: Deps },
    TccRead { key: Key, deps: Deps, readset: ReadSet },
    TccBatchWrite { batch: Vec<(Key, Value)>, deps: Deps, local: Deps },
    /// Server to server. Never answered.
    ServerWrite { from: usize, msg: PeerMessage },
    ReadReply { reply: ReadReply },
    WriteReply { vc: VectorClock },
    ReadTxnReply { replies: Vec<(Key, ReadReply)> },
    TccReadReply { reply: TccReadReply },
    BatchReply { clocks: Vec<VectorClock> },
    Error { message: String },
}

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(u32),
    #[error("bad frame body: {0}")]
    Body(#[from] serde_json::Error),
}

pub fn encode(msg: &WireMessage) -> Vec<u8> {
    let body = serde_json::to_vec(msg).expect("wire messages serialize");
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn write_frame(w: &mut impl Write, msg: &WireMessage) -> io::Result<()> {
    w.write_all(&encode(msg))?;
    w.flush()
}

/// `Ok(None)` on a clean end of stream before a frame starts.
pub fn read_frame(r: &mut impl Read) -> Result<Option<WireMessage>, FrameError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            k => got += k,
        }
    }
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME {
        return Err(FrameError::TooLarge(len));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    Ok(Some(serde_json::from_slice(&body)?))
}
