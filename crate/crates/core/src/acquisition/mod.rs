//! Simulated capture device: a plantar view followed by four periphery views
//! from the rotating arm, streamed to the analysis host over a framed
//! byte-stream protocol.

pub mod capture;
pub mod codec;
pub mod net;

pub use capture::{
    run_sequence, CaptureError, CaptureSequence, CaptureState, FrameSource, PhantomSource, Readiness, RecordedSource,
    SEQUENCE_FRAMES,
};
pub use codec::{decode_stream, encode, DecodeEvent, DropReason, MessageType, StreamDecoder, WireMessage};
pub use net::{fetch_sequence, receive, serve, ReceivedSequence};
