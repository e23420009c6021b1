use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::codec::{frame_payload, json_message, ErrorBody, MessageType, SequenceEnd, SequenceStart, WireMessage};
use crate::phantom::{generate, generate_periphery, PhantomError, PhantomSpec};
use crate::radiometry::{RawFrame, View};

/// Frames in a complete sequence: one plantar, four periphery.
pub const SEQUENCE_FRAMES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum CaptureState {
    Idle,
    PlantarCapture,
    PeripheryCapture { angle: u16 },
    Complete,
}

impl CaptureState {
    pub const ORDER: [CaptureState; 7] = [
        CaptureState::Idle,
        CaptureState::PlantarCapture,
        CaptureState::PeripheryCapture { angle: 0 },
        CaptureState::PeripheryCapture { angle: 90 },
        CaptureState::PeripheryCapture { angle: 180 },
        CaptureState::PeripheryCapture { angle: 270 },
        CaptureState::Complete,
    ];

    pub fn next(self) -> Option<CaptureState> {
        let i = Self::ORDER.iter().position(|s| *s == self)?;
        Self::ORDER.get(i + 1).copied()
    }

    /// View captured in this state, if it captures one.
    pub fn view(self) -> Option<View> {
        match self {
            CaptureState::PlantarCapture => Some(View::Plantar),
            CaptureState::PeripheryCapture { angle } => Some(View::Periphery { angle }),
            _ => None,
        }
    }
}

/// Answer of a frame source when asked for a view.
#[derive(Clone, Debug, PartialEq)]
pub enum Readiness {
    Ready(RawFrame),
    /// Try again later, e.g. the arm is still moving.
    NotReady,
    Exhausted,
}

pub trait FrameSource {
    fn poll(&mut self, view: View) -> Readiness;
}

/// Synthesises every view from a phantom spec, optionally giving out after
/// `limit` frames.
#[derive(Clone, Debug)]
pub struct PhantomSource {
    pub spec: PhantomSpec,
    pub seed: u64,
    pub limit: Option<usize>,
    served: usize,
}

impl PhantomSource {
    pub fn new(spec: PhantomSpec, seed: u64) -> Result<Self, PhantomError> {
        // fail early rather than mid-sequence
        generate(&spec, seed)?;
        Ok(Self {
            spec,
            seed,
            limit: None,
            served: 0,
        })
    }

    pub fn with_limit(mut self, limit: usize) -> Self {
        self.limit = Some(limit);
        self
    }
}

impl FrameSource for PhantomSource {
    fn poll(&mut self, view: View) -> Readiness {
        if self.limit.is_some_and(|l| self.served >= l) {
            return Readiness::Exhausted;
        }
        let frame = match view {
            View::Plantar => generate(&self.spec, self.seed).map(|p| p.frame),
            View::Periphery { angle } => generate_periphery(&self.spec, angle),
        };
        match frame {
            Ok(f) => {
                self.served += 1;
                Readiness::Ready(f)
            }
            Err(_) => Readiness::Exhausted,
        }
    }
}

/// Replays recorded frames in order.
#[derive(Clone, Debug, Default)]
pub struct RecordedSource {
    frames: VecDeque<RawFrame>,
}

impl RecordedSource {
    pub fn new(frames: impl IntoIterator<Item = RawFrame>) -> Self {
        Self {
            frames: frames.into_iter().collect(),
        }
    }
}

impl FrameSource for RecordedSource {
    fn poll(&mut self, _view: View) -> Readiness {
        match self.frames.pop_front() {
            Some(f) => Readiness::Ready(f),
            None => Readiness::Exhausted,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CaptureError {
    #[error("source exhausted after {frames_sent} frame(s)")]
    SourceExhausted { frames_sent: usize },
    #[error("source stayed not-ready for {polls} polls")]
    SourceStalled { polls: usize },
    #[error("expected a {expected:?} frame, source produced {got:?}")]
    ViewMismatch { expected: View, got: View },
    #[error("transport: {0}")]
    Transport(String),
}

impl CaptureError {
    fn code(&self) -> &'static str {
        match self {
            CaptureError::SourceExhausted { .. } => "source_exhausted",
            CaptureError::SourceStalled { .. } => "source_stalled",
            CaptureError::ViewMismatch { .. } => "view_mismatch",
            CaptureError::Transport(_) => "transport",
        }
    }
}

/// States visited and frames emitted by a finished sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptureSequence {
    pub sequence_id: String,
    pub states: Vec<CaptureState>,
    pub frame_ids: Vec<String>,
}

/// Steps Idle -> plantar -> periphery 0/90/180/270 -> Complete, sending a
/// sequence-start, one frame message per capture state and a sequence-end.
/// On failure an error message is sent and the sequence aborted.
/// `max_idle_polls` bounds consecutive not-ready answers for one state.
pub fn run_sequence(
    source: &mut dyn FrameSource,
    sequence_id: &str,
    max_idle_polls: usize,
    send: &mut dyn FnMut(WireMessage) -> std::io::Result<()>,
) -> Result<CaptureSequence, CaptureError> {
    let transport = |e: std::io::Error| CaptureError::Transport(e.to_string());
    let mut seq = CaptureSequence {
        sequence_id: sequence_id.to_string(),
        states: vec![CaptureState::Idle],
        frame_ids: Vec::new(),
    };
    send(json_message(
        MessageType::SequenceStart,
        &SequenceStart {
            sequence_id: sequence_id.to_string(),
            expected_frames: SEQUENCE_FRAMES,
        },
    ))
    .map_err(transport)?;

    let mut state = CaptureState::Idle;
    while let Some(next) = state.next() {
        state = next;
        seq.states.push(state);
        let Some(view) = state.view() else { continue };
        let outcome = capture_one(source, view, max_idle_polls, seq.frame_ids.len());
        match outcome {
            Ok(frame) => {
                send(WireMessage {
                    kind: MessageType::Frame,
                    payload: frame_payload(&frame),
                })
                .map_err(transport)?;
                seq.frame_ids.push(frame.frame_id);
            }
            Err(err) => {
                let body = ErrorBody {
                    code: err.code().into(),
                    message: err.to_string(),
                    frames_sent: seq.frame_ids.len(),
                };
                send(json_message(MessageType::Error, &body)).map_err(transport)?;
                return Err(err);
            }
        }
    }
    send(json_message(
        MessageType::SequenceEnd,
        &SequenceEnd {
            sequence_id: sequence_id.to_string(),
            frames_sent: seq.frame_ids.len(),
        },
    ))
    .map_err(transport)?;
    Ok(seq)
}

fn capture_one(
    source: &mut dyn FrameSource,
    view: View,
    max_idle_polls: usize,
    sent: usize,
) -> Result<RawFrame, CaptureError> {
    let mut idle = 0;
    loop {
        match source.poll(view) {
            Readiness::Ready(frame) if frame.view == view => return Ok(frame),
            Readiness::Ready(frame) => {
                return Err(CaptureError::ViewMismatch {
                    expected: view,
                    got: frame.view,
                })
            }
            Readiness::Exhausted => return Err(CaptureError::SourceExhausted { frames_sent: sent }),
            Readiness::NotReady => {
                idle += 1;
                if idle > max_idle_polls {
                    return Err(CaptureError::SourceStalled { polls: idle });
                }
                std::thread::yield_now();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::codec::parse_frame_payload;
    use proptest::prelude::*;

    fn collect(source: &mut dyn FrameSource) -> (Result<CaptureSequence, CaptureError>, Vec<WireMessage>) {
        let mut out = Vec::new();
        let r = run_sequence(source, "seq", 1000, &mut |m| {
            out.push(m);
            Ok(())
        });
        (r, out)
    }

    #[test]
    fn order_is_fixed() {
        let mut s = CaptureState::Idle;
        let mut seen = vec![s];
        while let Some(n) = s.next() {
            seen.push(n);
            s = n;
        }
        assert_eq!(seen, CaptureState::ORDER);
    }

    #[test]
    fn phantom_sequence_emits_five_frames_in_order() {
        let mut src = PhantomSource::new(PhantomSpec::default(), 3).unwrap();
        let (r, msgs) = collect(&mut src);
        let seq = r.unwrap();
        assert_eq!(seq.states, CaptureState::ORDER);
        assert_eq!(msgs.len(), 7);
        assert_eq!(msgs[0].kind, MessageType::SequenceStart);
        assert_eq!(msgs[6].kind, MessageType::SequenceEnd);
        let views: Vec<View> = msgs[1..6]
            .iter()
            .map(|m| parse_frame_payload(&m.payload).unwrap().view)
            .collect();
        assert_eq!(
            views,
            [
                View::Plantar,
                View::Periphery { angle: 0 },
                View::Periphery { angle: 90 },
                View::Periphery { angle: 180 },
                View::Periphery { angle: 270 }
            ]
        );
    }

    #[test]
    fn three_frame_source_aborts_after_third() {
        let mut src = PhantomSource::new(PhantomSpec::default(), 3).unwrap().with_limit(3);
        let (r, msgs) = collect(&mut src);
        assert_eq!(r.unwrap_err(), CaptureError::SourceExhausted { frames_sent: 3 });
        let kinds: Vec<MessageType> = msgs.iter().map(|m| m.kind).collect();
        assert_eq!(
            kinds,
            [
                MessageType::SequenceStart,
                MessageType::Frame,
                MessageType::Frame,
                MessageType::Frame,
                MessageType::Error
            ]
        );
        let body: ErrorBody = serde_json::from_slice(&msgs[4].payload).unwrap();
        assert_eq!(body.code, "source_exhausted");
    }

    #[test]
    fn recorded_source_must_match_views() {
        let spec = PhantomSpec::default();
        let wrong = generate_periphery(&spec, 90).unwrap();
        let (r, _) = collect(&mut RecordedSource::new([wrong]));
        assert!(matches!(r, Err(CaptureError::ViewMismatch { .. })));
    }

    /// Serves frames only when the scripted readiness says so.
    struct Flaky {
        inner: PhantomSource,
        script: Vec<bool>,
        i: usize,
    }

    impl FrameSource for Flaky {
        fn poll(&mut self, view: View) -> Readiness {
            let ready = self.script.get(self.i).copied().unwrap_or(true);
            self.i += 1;
            if ready {
                self.inner.poll(view)
            } else {
                Readiness::NotReady
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn readiness_interleaving_never_skips_or_repeats(script in prop::collection::vec(any::<bool>(), 0..40)) {
            let inner = PhantomSource::new(PhantomSpec::default(), 1).unwrap();
            let mut src = Flaky { inner, script, i: 0 };
            let (r, msgs) = collect(&mut src);
            let seq = r.unwrap();
            prop_assert_eq!(&seq.states[..], &CaptureState::ORDER[..]);
            prop_assert_eq!(msgs.iter().filter(|m| m.kind == MessageType::Frame).count(), SEQUENCE_FRAMES);
        }
    }

    #[test]
    fn stalled_source_reports_error() {
        struct Never;
        impl FrameSource for Never {
            fn poll(&mut self, _: View) -> Readiness {
                Readiness::NotReady
            }
        }
        let mut out = Vec::new();
        let r = run_sequence(&mut Never, "s", 5, &mut |m| {
            out.push(m);
            Ok(())
        });
        assert_eq!(r.unwrap_err(), CaptureError::SourceStalled { polls: 6 });
        assert_eq!(out.last().unwrap().kind, MessageType::Error);
    }
}
