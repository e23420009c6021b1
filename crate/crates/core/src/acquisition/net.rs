use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use super::capture::{run_sequence, CaptureError, CaptureSequence, FrameSource};
use super::codec::{
    encode, parse_frame_payload, DecodeEvent, DropReason, ErrorBody, MessageType, SequenceEnd, SequenceStart,
    StreamDecoder,
};
use crate::radiometry::RawFrame;

/// Consecutive not-ready polls tolerated per capture state.
pub const DEFAULT_MAX_IDLE_POLLS: usize = 10_000;

/// Runs one capture sequence over an accepted connection.
pub fn serve_connection(
    stream: &mut TcpStream,
    source: &mut dyn FrameSource,
    sequence_id: &str,
) -> Result<CaptureSequence, CaptureError> {
    let mut send = |m| stream.write_all(&encode(&m));
    let r = run_sequence(source, sequence_id, DEFAULT_MAX_IDLE_POLLS, &mut send);
    let _ = stream.flush();
    r
}

/// Accepts connections forever, or `max_connections` of them, running an
/// isolated capture sequence per connection on its own thread.
pub fn serve<S, F>(listener: TcpListener, make_source: F, max_connections: Option<usize>) -> JoinHandle<()>
where
    S: FrameSource + 'static,
    F: Fn() -> S + Send + Sync + 'static,
{
    let make_source = Arc::new(make_source);
    let counter = Arc::new(AtomicU64::new(0));
    thread::spawn(move || {
        let mut workers = Vec::new();
        for (accepted, conn) in listener.incoming().enumerate() {
            let Ok(mut stream) = conn else { continue };
            let make_source = Arc::clone(&make_source);
            let id = counter.fetch_add(1, Ordering::Relaxed);
            workers.push(thread::spawn(move || {
                let mut source = make_source();
                let _ = serve_connection(&mut stream, &mut source, &format!("seq-{id}"));
            }));
            if max_connections.is_some_and(|m| accepted + 1 >= m) {
                break;
            }
        }
        for w in workers {
            let _ = w.join();
        }
    })
}

/// What a client saw on one connection.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReceivedSequence {
    pub start: Option<SequenceStart>,
    pub frames: Vec<RawFrame>,
    pub end: Option<SequenceEnd>,
    pub error: Option<ErrorBody>,
    pub dropped: Vec<DropReason>,
    /// Frame messages whose payload did not parse.
    pub malformed: usize,
}

impl ReceivedSequence {
    pub fn is_complete(&self) -> bool {
        self.end.is_some() && self.error.is_none()
    }

    pub fn apply(&mut self, event: DecodeEvent) {
        match event {
            DecodeEvent::Dropped(r) => self.dropped.push(r),
            DecodeEvent::Message(m) => match m.kind {
                MessageType::Frame => match parse_frame_payload(&m.payload) {
                    Ok(f) => self.frames.push(f),
                    Err(_) => self.malformed += 1,
                },
                MessageType::SequenceStart => self.start = serde_json::from_slice(&m.payload).ok(),
                MessageType::SequenceEnd => self.end = serde_json::from_slice(&m.payload).ok(),
                MessageType::Error => self.error = serde_json::from_slice(&m.payload).ok(),
            },
        }
    }
}

/// Reads until end of stream, decoding as bytes arrive.
pub fn receive(reader: &mut dyn Read) -> std::io::Result<ReceivedSequence> {
    let mut decoder = StreamDecoder::new();
    let mut out = ReceivedSequence::default();
    let mut buf = [0u8; 8192];
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            break;
        }
        for e in decoder.push(&buf[..n]) {
            out.apply(e);
        }
    }
    Ok(out)
}

pub fn fetch_sequence(addr: impl ToSocketAddrs) -> std::io::Result<ReceivedSequence> {
    let mut stream = TcpStream::connect(addr)?;
    receive(&mut stream)
}
