//! Frame-by-frame streaming inference with carried recurrent state, replay
//! sources and a raw-frame pipe protocol.

use std::fmt;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, SyncSender, TrySendError};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use image::RgbImage;
use serde::Serialize;

use crate::data::{frame_file_name, preprocess_frame_at, read_frame, NeedleState};
use crate::error::{Error, Result, StreamError};
use crate::eval::{per_video_accuracy, transitions, Transition};
use crate::layers::LstmState;
use crate::model::Model;

/// Frames buffered between a replay producer and the consumer.
pub const CHANNEL_CAPACITY: usize = 8;

/// Largest frame side accepted from the pipe.
pub const MAX_PIPE_SIDE: u32 = 8192;

pub const RECORD_HEADER: &str = "frame_index,label,p_no,p_fist,p_infil,latency_ms";

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Latency {
    pub preprocess_ms: f64,
    pub network_ms: f64,
}

impl Latency {
    pub fn total_ms(&self) -> f64 {
        self.preprocess_ms + self.network_ms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamOutput {
    pub frame_index: usize,
    pub state: NeedleState,
    pub probs: [f32; 3],
    pub latency: Latency,
}

impl StreamOutput {
    /// One `frame_index,label,p_no,p_fist,p_infil,latency_ms` line.
    pub fn record(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.3}",
            self.frame_index,
            self.state.name(),
            self.probs[0],
            self.probs[1],
            self.probs[2],
            self.latency.total_ms()
        )
    }
}

/// A model plus the recurrent state and bookkeeping of one live stream.
pub struct StreamSession {
    model: Model,
    state: Option<LstmState<f32>>,
    side: usize,
    frames: usize,
    latencies: Vec<Latency>,
    closed: bool,
}

impl StreamSession {
    pub fn new(model: Model) -> Self {
        let (state, side) = match &model {
            Model::LightCnn(m) => (None, m.spec().input_side()),
            Model::Crnn(m) => (Some(m.zero_state()), m.spec().base.input_side()),
        };
        Self {
            model,
            state,
            side,
            frames: 0,
            latencies: Vec::new(),
            closed: false,
        }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn frames_seen(&self) -> usize {
        self.frames
    }

    pub fn latencies(&self) -> &[Latency] {
        &self.latencies
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    /// Zeroes the recurrent state and the counters and reopens the session.
    pub fn reset(&mut self) {
        if let Model::Crnn(m) = &self.model {
            self.state = Some(m.zero_state());
        }
        self.frames = 0;
        self.latencies.clear();
        self.closed = false;
    }

    pub fn infer(&mut self, frame: &RgbImage) -> Result<StreamOutput> {
        if self.closed {
            return Err(StreamError::Closed.into());
        }
        let t0 = Instant::now();
        let x = preprocess_frame_at(frame, self.side);
        let t1 = Instant::now();
        let probs = match (&self.model, &mut self.state) {
            (Model::LightCnn(m), _) => m.predict(&x)?,
            (Model::Crnn(m), Some(state)) => m.step_frame(state, &x)?,
            (Model::Crnn(_), None) => unreachable!("crnn sessions always hold a state"),
        };
        let t2 = Instant::now();
        let latency = Latency {
            preprocess_ms: (t1 - t0).as_secs_f64() * 1e3,
            network_ms: (t2 - t1).as_secs_f64() * 1e3,
        };
        let out = StreamOutput {
            frame_index: self.frames,
            state: NeedleState::argmax(&probs),
            probs: [probs[0], probs[1], probs[2]],
            latency,
        };
        self.frames += 1;
        self.latencies.push(latency);
        Ok(out)
    }
}

/// Runs one frame through the session.
pub fn stream_infer(session: &mut StreamSession, frame: &RgbImage) -> Result<StreamOutput> {
    session.infer(frame)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePacket {
    pub index: usize,
    pub image: RgbImage,
}

/// Frames produced on a background thread and delivered through a bounded
/// channel.
pub struct Replay {
    receiver: Receiver<Result<FramePacket>>,
    dropped: Arc<AtomicUsize>,
    handle: Option<JoinHandle<()>>,
}

impl Replay {
    /// Frames the producer discarded because the consumer fell behind.
    pub fn dropped(&self) -> usize {
        self.dropped.load(Ordering::Relaxed)
    }
}

impl Iterator for Replay {
    type Item = Result<FramePacket>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.receiver.recv() {
            Ok(item) => Some(item),
            Err(_) => {
                if let Some(h) = self.handle.take() {
                    let _ = h.join();
                }
                None
            }
        }
    }
}

enum Source {
    Frames(Vec<RgbImage>),
    Directory { dir: PathBuf, count: usize },
}

impl Source {
    fn len(&self) -> usize {
        match self {
            Source::Frames(f) => f.len(),
            Source::Directory { count, .. } => *count,
        }
    }

    fn load(&self, index: usize) -> Result<RgbImage> {
        match self {
            Source::Frames(f) => Ok(f[index].clone()),
            Source::Directory { dir, .. } => {
                let path = dir.join(frame_file_name(index));
                if !path.is_file() {
                    return Err(StreamError::MissingFrame {
                        index,
                        reason: format!("{} does not exist", path.display()),
                    }
                    .into());
                }
                read_frame(&path).map_err(|e| {
                    StreamError::MissingFrame {
                        index,
                        reason: e.to_string(),
                    }
                    .into()
                })
            }
        }
    }
}

fn spawn(source: Source, fps: f64) -> Result<Replay> {
    if !(fps >= 0.0 && fps.is_finite()) {
        return Err(Error::InvalidArgument(format!("fps must be finite and non-negative, got {fps}")));
    }
    let (tx, rx): (SyncSender<Result<FramePacket>>, _) = mpsc::sync_channel(CHANNEL_CAPACITY);
    let dropped = Arc::new(AtomicUsize::new(0));
    let counter = dropped.clone();
    let handle = std::thread::spawn(move || {
        let period = (fps > 0.0).then(|| Duration::from_secs_f64(1.0 / fps));
        let start = Instant::now();
        for index in 0..source.len() {
            if let Some(p) = period {
                let due = start + p.mul_f64(index as f64);
                if let Some(wait) = due.checked_duration_since(Instant::now()) {
                    std::thread::sleep(wait);
                }
            }
            let item = source.load(index).map(|image| FramePacket { index, image });
            let failed = item.is_err();
            if period.is_some() && !failed {
                match tx.try_send(item) {
                    Ok(()) => {}
                    Err(TrySendError::Full(_)) => {
                        counter.fetch_add(1, Ordering::Relaxed);
                    }
                    Err(TrySendError::Disconnected(_)) => return,
                }
            } else if tx.send(item).is_err() {
                return;
            }
            if failed {
                return;
            }
        }
    });
    Ok(Replay {
        receiver: rx,
        dropped,
        handle: Some(handle),
    })
}

/// Replays in-memory frames at `fps` frames per second; `0` means as fast as
/// the consumer reads. Paced replay drops frames when the buffer is full.
pub fn replay_frames(frames: Vec<RgbImage>, fps: f64) -> Result<Replay> {
    spawn(Source::Frames(frames), fps)
}

/// Replays `frame_NNNNNN.png` files from a clip directory. The clip length is
/// one past the highest frame index present; gaps surface as
/// [`StreamError::MissingFrame`].
pub fn replay_dir(dir: &Path, fps: f64) -> Result<Replay> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut count = 0;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(i) = name
            .strip_prefix("frame_")
            .and_then(|s| s.strip_suffix(".png"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            count = count.max(i + 1);
        }
    }
    if count == 0 {
        return Err(StreamError::MissingFrame {
            index: 0,
            reason: format!("no frames in {}", dir.display()),
        }
        .into());
    }
    spawn(
        Source::Directory {
            dir: dir.to_path_buf(),
            count,
        },
        fps,
    )
}

/// Writes one frame as a 12-byte little-endian header (width, height,
/// index) followed by the RGB bytes.
pub fn write_packet(w: &mut impl Write, packet: &FramePacket) -> io::Result<()> {
    let index = u32::try_from(packet.index).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame index too large"))?;
    w.write_all(&packet.image.width().to_le_bytes())?;
    w.write_all(&packet.image.height().to_le_bytes())?;
    w.write_all(&index.to_le_bytes())?;
    w.write_all(packet.image.as_raw())
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Reads the next frame; `None` at a clean end of stream.
pub fn read_packet(r: &mut impl Read) -> Result<Option<FramePacket>> {
    let mut header = [0u8; 12];
    let got = read_full(r, &mut header).map_err(|e| StreamError::BadHeader(e.to_string()))?;
    if got == 0 {
        return Ok(None);
    }
    if got < header.len() {
        return Err(StreamError::BadHeader(format!("{got} of 12 header bytes")).into());
    }
    let field = |i: usize| u32::from_le_bytes(header[i * 4..i * 4 + 4].try_into().unwrap());
    let (width, height, index) = (field(0), field(1), field(2) as usize);
    if width == 0 || height == 0 || width > MAX_PIPE_SIDE || height > MAX_PIPE_SIDE {
        return Err(StreamError::BadHeader(format!("frame {index} has size {width}×{height}")).into());
    }
    let mut bytes = vec![0u8; width as usize * height as usize * 3];
    let got = read_full(r, &mut bytes).map_err(|e| StreamError::MissingFrame {
        index,
        reason: e.to_string(),
    })?;
    if got < bytes.len() {
        return Err(StreamError::MissingFrame {
            index,
            reason: format!("stream ended after {got} of {} bytes", bytes.len()),
        }
        .into());
    }
    let image = RgbImage::from_raw(width, height, bytes).expect("length matches header");
    Ok(Some(FramePacket { index, image }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionReport {
    pub frames: usize,
    pub dropped: usize,
    pub accuracy: Option<f64>,
    pub latency_p50_ms: f64,
    pub latency_p95_ms: f64,
    pub latency_mean_ms: f64,
    /// Frames per second of inference time alone.
    pub fps: f64,
    /// Predicted state changes with the frame index they take effect at.
    pub transitions: Vec<Transition>,
}

/// Nearest-rank percentile of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn session_report(outputs: &[StreamOutput], labels: Option<&[NeedleState]>, dropped: usize) -> Result<SessionReport> {
    let totals: Vec<f64> = outputs.iter().map(|o| o.latency.total_ms()).collect();
    let states: Vec<NeedleState> = outputs.iter().map(|o| o.state).collect();
    let accuracy = match labels {
        Some(l) => Some(per_video_accuracy(&states, l)?),
        None => None,
    };
    let mean = if totals.is_empty() {
        f64::NAN
    } else {
        totals.iter().sum::<f64>() / totals.len() as f64
    };
    Ok(SessionReport {
        frames: outputs.len(),
        dropped,
        accuracy,
        latency_p50_ms: percentile(&totals, 50.0),
        latency_p95_ms: percentile(&totals, 95.0),
        latency_mean_ms: mean,
        fps: 1e3 / mean,
        transitions: transitions(&states),
    })
}

impl fmt::Display for SessionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "frames: {} (dropped {})", self.frames, self.dropped)?;
        if let Some(a) = self.accuracy {
            writeln!(f, "accuracy: {a:.4}")?;
        }
        writeln!(
            f,
            "latency ms: p50 {:.2} p95 {:.2} mean {:.2}",
            self.latency_p50_ms, self.latency_p95_ms, self.latency_mean_ms
        )?;
        writeln!(f, "throughput: {:.1} fps", self.fps)?;
        writeln!(f, "transitions: {}", self.transitions.len())?;
        for t in &self.transitions {
            writeln!(f, "  frame {}: {} -> {}", t.index, t.from, t.to)?;
        }
        Ok(())
    }
}
