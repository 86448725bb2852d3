//! Real-time inference runtime.
//!
//! Two execution contexts share an engine:
//!
//! * the audio callback ([`AudioSide::render`]), highest priority, called once
//!   per block. It pushes input frames into a fixed ring buffer, plays back the
//!   freshest prediction and, every `buffer_blocks` blocks, signals the worker.
//!   It never locks, never allocates and never waits.
//! * the worker ([`WorkerSide`]), lower priority. On a signal it drains the
//!   ring into its input window, runs the predictor and publishes the result.
//!
//! A trigger that arrives while the worker is still busy (or has not picked
//! up the previous one) is dropped and counted in
//! [`EngineStats::inferences_missed`]; triggers never queue.
//!
//! A prediction published for the window ending at absolute frame `s` covers
//! frames `s, s + 1, …`. Frame `n` of the output is sample `n - s` of the
//! freshest prediction, or silence once that runs out or before any exists.
//!
//! Everything is allocated in [`setup`].

mod ring;
mod slots;

use std::sync::atomic::{AtomicBool, AtomicU64, AtomicU8, Ordering};
use std::sync::{Arc, OnceLock};
use std::thread::{self, JoinHandle, Thread};
use std::time::{Duration, Instant};

use thiserror::Error;

pub use ring::{ring_buffer, Consumer, Popped, Producer};
pub use slots::{prediction_slots, SlotReader, SlotWriter};

use crate::dataset::ChannelStats;
use crate::model::{forward, InferenceScratch, ModelBundle};

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("invalid engine config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Something the worker can run on an input window.
pub trait Predictor: Send {
    /// Channels per input frame.
    fn input_channels(&self) -> usize;
    /// Frames per input window.
    fn window_len(&self) -> usize;
    /// Samples per prediction.
    fn output_len(&self) -> usize;
    /// `window` is `window_len × input_channels`, timestep-major, in raw
    /// sensor units; `out` has `output_len` samples.
    fn predict(&mut self, window: &[f32], out: &mut [f32]);
}

/// The trained LSTM with its normalization, ready for allocation-free use.
pub struct LstmPredictor {
    bundle: Arc<ModelBundle>,
    scratch: InferenceScratch<f32>,
    normalized: Vec<f32>,
}

impl LstmPredictor {
    pub fn new(bundle: Arc<ModelBundle>) -> Self {
        let cfg = bundle.config;
        Self {
            scratch: InferenceScratch::new(&cfg),
            normalized: vec![0.0; cfg.seq_len * cfg.input_dim],
            bundle,
        }
    }
}

impl Predictor for LstmPredictor {
    fn input_channels(&self) -> usize {
        self.bundle.config.input_dim
    }

    fn window_len(&self) -> usize {
        self.bundle.config.seq_len
    }

    fn output_len(&self) -> usize {
        self.bundle.config.output_dim
    }

    fn predict(&mut self, window: &[f32], out: &mut [f32]) {
        let ch = self.bundle.config.input_dim;
        for (i, (dst, &x)) in self.normalized.iter_mut().zip(window).enumerate() {
            let s: &ChannelStats = &self.bundle.input_stats[i % ch];
            *dst = ((x as f64 - s.mean) / s.std) as f32;
        }
        let target = self.bundle.target_stats;
        match forward(&self.bundle.params, &self.bundle.config, &self.normalized, &mut self.scratch) {
            Ok(y) => {
                for (o, &z) in out.iter_mut().zip(y) {
                    *o = (z as f64 * target.std + target.mean) as f32;
                }
            }
            // Shapes are fixed at setup; unreachable unless the bundle is inconsistent.
            Err(_) => out.fill(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    /// Frames per audio callback.
    pub block_size: usize,
    /// Blocks between inference triggers.
    pub buffer_blocks: usize,
    pub sample_rate_hz: f64,
    /// Time each render call and count the ones slower than a block.
    pub measure_deadlines: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            block_size: 16,
            buffer_blocks: 2,
            sample_rate_hz: 1000.0,
            measure_deadlines: false,
        }
    }
}

impl EngineConfig {
    pub fn block_duration(&self) -> Duration {
        Duration::from_secs_f64(self.block_size as f64 / self.sample_rate_hz)
    }
}

/// Counter snapshot. All counters only grow.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub blocks_processed: u64,
    pub inferences_completed: u64,
    /// Triggers dropped because the worker had not finished the previous one.
    pub inferences_missed: u64,
    /// Input frames overwritten before the worker read them.
    pub buffer_overflows: u64,
    pub max_inference_duration: Duration,
    /// Render calls that took longer than one block (only when measured).
    pub underruns: u64,
}

const IDLE: u8 = 0;
const TRIGGERED: u8 = 1;
const BUSY: u8 = 2;

#[derive(Default)]
struct Counters {
    blocks: AtomicU64,
    completed: AtomicU64,
    missed: AtomicU64,
    max_inference_ns: AtomicU64,
    underruns: AtomicU64,
    overflows: AtomicU64,
}

struct Shared {
    state: AtomicU8,
    shutdown: AtomicBool,
    worker: OnceLock<Thread>,
    counters: Counters,
}

impl Shared {
    fn stats(&self) -> EngineStats {
        let c = &self.counters;
        EngineStats {
            blocks_processed: c.blocks.load(Ordering::Relaxed),
            inferences_completed: c.completed.load(Ordering::Relaxed),
            inferences_missed: c.missed.load(Ordering::Relaxed),
            buffer_overflows: c.overflows.load(Ordering::Relaxed),
            max_inference_duration: Duration::from_nanos(c.max_inference_ns.load(Ordering::Relaxed)),
            underruns: c.underruns.load(Ordering::Relaxed),
        }
    }
}

/// The audio-callback half of an engine.
pub struct AudioSide {
    config: EngineConfig,
    channels: usize,
    producer: Producer,
    reader: SlotReader,
    shared: Arc<Shared>,
    frames: u64,
    blocks: u64,
    deadline: Duration,
}

/// The worker half of an engine.
pub struct WorkerSide<P> {
    predictor: P,
    consumer: Consumer,
    writer: SlotWriter,
    shared: Arc<Shared>,
    /// Most recent `window_len` frames, oldest first.
    window: Vec<f32>,
    /// Frames seen so far, capped at `window_len`.
    filled: usize,
    drain: Vec<f32>,
    latest: Vec<f32>,
    latest_stamp: u64,
}

/// Allocates every buffer the engine will use and splits it into its two
/// execution contexts.
///
/// The ring holds exactly one input window (`window_len` frames), so a
/// trigger period of `block_size * buffer_blocks` frames must fit in it.
pub fn setup<P: Predictor>(config: EngineConfig, predictor: P) -> Result<(AudioSide, WorkerSide<P>), EngineError> {
    if config.block_size == 0 {
        return Err(EngineError::Config("block size must be at least one frame".into()));
    }
    if config.buffer_blocks == 0 {
        return Err(EngineError::Config("buffer must span at least one block".into()));
    }
    if !(config.sample_rate_hz.is_finite() && config.sample_rate_hz > 0.0) {
        return Err(EngineError::Config(format!("bad sample rate {}", config.sample_rate_hz)));
    }
    let (channels, window_len, out_len) =
        (predictor.input_channels(), predictor.window_len(), predictor.output_len());
    if channels == 0 || window_len == 0 || out_len == 0 {
        return Err(EngineError::Config("predictor has an empty shape".into()));
    }
    let period = config.block_size * config.buffer_blocks;
    if period > window_len {
        return Err(EngineError::Config(format!(
            "{} blocks of {} frames overflow the {window_len}-frame input window",
            config.buffer_blocks, config.block_size
        )));
    }

    let (producer, consumer) = ring_buffer(window_len, channels);
    let (writer, reader) = prediction_slots(out_len);
    let shared = Arc::new(Shared {
        state: AtomicU8::new(IDLE),
        shutdown: AtomicBool::new(false),
        worker: OnceLock::new(),
        counters: Counters::default(),
    });
    Ok((
        AudioSide {
            config,
            channels,
            producer,
            reader,
            shared: shared.clone(),
            frames: 0,
            blocks: 0,
            deadline: config.block_duration(),
        },
        WorkerSide {
            predictor,
            consumer,
            writer,
            shared,
            window: vec![0.0; window_len * channels],
            filled: 0,
            drain: vec![0.0; window_len * channels],
            latest: vec![0.0; out_len],
            latest_stamp: 0,
        },
    ))
}

impl AudioSide {
    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// One audio callback.
    ///
    /// `input` holds `block_size` interleaved frames; `output` receives
    /// `block_size` samples. Short slices are processed as far as they go.
    pub fn render(&mut self, input: &[f32], output: &mut [f32]) {
        let started = self.config.measure_deadlines.then(Instant::now);
        let n = self.config.block_size.min(input.len() / self.channels);

        for frame in input.chunks_exact(self.channels).take(n) {
            self.producer.push_frame(frame);
        }

        self.reader.refresh();
        let (has, stamp, len) = (self.reader.has_data(), self.reader.stamp(), self.reader.len() as u64);
        for (i, out) in output.iter_mut().take(self.config.block_size).enumerate() {
            let frame = self.frames + i as u64;
            *out = if has && frame >= stamp && frame - stamp < len {
                self.reader.get((frame - stamp) as usize)
            } else {
                0.0
            };
        }

        self.frames += n as u64;
        self.blocks += 1;
        let c = &self.shared.counters;
        c.blocks.store(self.blocks, Ordering::Relaxed);
        c.overflows.store(self.producer.overflows(), Ordering::Relaxed);
        if self.blocks % self.config.buffer_blocks as u64 == 0 {
            self.trigger();
        }

        if let Some(t0) = started {
            if t0.elapsed() > self.deadline {
                c.underruns.fetch_add(1, Ordering::Relaxed);
            }
        }
    }

    fn trigger(&self) {
        let s = &*self.shared;
        match s
            .state
            .compare_exchange(IDLE, TRIGGERED, Ordering::AcqRel, Ordering::Relaxed)
        {
            Ok(_) => {
                if let Some(worker) = s.worker.get() {
                    worker.unpark();
                }
            }
            Err(_) => {
                s.counters.missed.fetch_add(1, Ordering::Relaxed);
            }
        }
    }

    /// Frames rendered so far.
    pub fn frames(&self) -> u64 {
        self.frames
    }

    /// True when no trigger is pending or being served.
    pub fn worker_idle(&self) -> bool {
        self.shared.state.load(Ordering::Acquire) == IDLE
    }

    pub fn stats(&self) -> EngineStats {
        self.shared.stats()
    }

    /// Asks a running [`WorkerSide::worker_loop`] to return.
    pub fn shutdown_handle(&self) -> ShutdownHandle {
        ShutdownHandle {
            shared: self.shared.clone(),
        }
    }
}

#[derive(Clone)]
pub struct ShutdownHandle {
    shared: Arc<Shared>,
}

impl ShutdownHandle {
    pub fn shutdown(&self) {
        self.shared.shutdown.store(true, Ordering::Release);
        if let Some(worker) = self.shared.worker.get() {
            worker.unpark();
        }
    }
}

impl<P: Predictor> WorkerSide<P> {
    /// Serves a pending trigger, if any, without blocking. Returns whether
    /// a prediction was published.
    pub fn run_pending(&mut self) -> bool {
        if self
            .shared
            .state
            .compare_exchange(TRIGGERED, BUSY, Ordering::AcqRel, Ordering::Relaxed)
            .is_err()
        {
            return false;
        }
        self.absorb_input();
        let s = &*self.shared;
        let published = self.filled == self.predictor.window_len();
        if published {
            let t0 = Instant::now();
            self.predictor.predict(&self.window, &mut self.latest);
            let ns = t0.elapsed().as_nanos().min(u64::MAX as u128) as u64;
            self.latest_stamp = self.consumer.position();
            self.writer.publish(&self.latest, self.latest_stamp);
            s.counters.max_inference_ns.fetch_max(ns, Ordering::Relaxed);
            s.counters.completed.fetch_add(1, Ordering::Relaxed);
        }
        s.state.store(IDLE, Ordering::Release);
        published
    }

    fn absorb_input(&mut self) {
        let ch = self.consumer.channels();
        let total = self.window.len();
        loop {
            let got = self.consumer.pop_into(&mut self.drain);
            if got.frames == 0 {
                break;
            }
            let fresh = got.frames * ch;
            self.window.copy_within(fresh.., 0);
            self.window[total - fresh..].copy_from_slice(&self.drain[..fresh]);
            self.filled = (self.filled + got.frames).min(self.predictor.window_len());
        }
    }

    /// Blocks serving triggers until shut down.
    pub fn worker_loop(mut self) -> Self {
        let _ = self.shared.worker.set(thread::current());
        loop {
            if self.shared.shutdown.load(Ordering::Acquire) {
                return self;
            }
            if !self.run_pending() {
                thread::park();
            }
        }
    }

    /// Runs [`worker_loop`](Self::worker_loop) on a new thread.
    pub fn spawn(self) -> JoinHandle<Self>
    where
        P: 'static,
    {
        thread::Builder::new()
            .name("inference-worker".into())
            .spawn(move || self.worker_loop())
            .expect("failed to spawn inference worker")
    }

    /// Last prediction this worker published.
    pub fn latest(&self) -> &[f32] {
        &self.latest
    }

    /// First frame the last prediction covers.
    pub fn latest_stamp(&self) -> u64 {
        self.latest_stamp
    }

    pub fn predictor(&self) -> &P {
        &self.predictor
    }

    pub fn stats(&self) -> EngineStats {
        self.shared.stats()
    }
}

/// Result of replaying a recording through the engine.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineRun {
    /// One row per published prediction.
    pub predictions: Vec<Vec<f32>>,
    /// First frame each prediction covers.
    pub stamps: Vec<u64>,
    /// Everything the audio callback emitted.
    pub output: Vec<f32>,
    pub stats: EngineStats,
}

/// Replays `signal` (one row per input channel) block by block on the
/// calling thread, serving every trigger before the next block.
///
/// A trailing partial block is not rendered.
pub fn offline_run<P: Predictor>(
    config: EngineConfig,
    predictor: P,
    signal: &[Vec<f32>],
) -> Result<OfflineRun, EngineError> {
    let channels = predictor.input_channels();
    if signal.len() != channels {
        return Err(EngineError::Shape(format!(
            "signal has {} rows, predictor takes {channels} channels",
            signal.len()
        )));
    }
    let n_frames = signal.first().map_or(0, Vec::len);
    if signal.iter().any(|r| r.len() != n_frames) {
        return Err(EngineError::Shape("signal rows differ in length".into()));
    }
    let (mut audio, mut worker) = setup(config, predictor)?;
    let bs = config.block_size;
    let mut block = vec![0.0; bs * channels];
    let mut out = vec![0.0; bs];
    let mut run = OfflineRun {
        predictions: Vec::new(),
        stamps: Vec::new(),
        output: Vec::with_capacity(n_frames),
        stats: EngineStats::default(),
    };
    for start in (0..n_frames / bs).map(|b| b * bs) {
        for (i, frame) in block.chunks_exact_mut(channels).enumerate() {
            for (c, v) in frame.iter_mut().enumerate() {
                *v = signal[c][start + i];
            }
        }
        audio.render(&block, &mut out);
        run.output.extend_from_slice(&out);
        if worker.run_pending() {
            run.predictions.push(worker.latest().to_vec());
            run.stamps.push(worker.latest_stamp());
        }
    }
    run.stats = audio.stats();
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Predicts `window[last frame, channel 0] + k` for `k = 0..len`.
    struct Ramp {
        window: usize,
        len: usize,
    }

    impl Predictor for Ramp {
        fn input_channels(&self) -> usize {
            1
        }
        fn window_len(&self) -> usize {
            self.window
        }
        fn output_len(&self) -> usize {
            self.len
        }
        fn predict(&mut self, window: &[f32], out: &mut [f32]) {
            let last = window[window.len() - 1];
            for (k, o) in out.iter_mut().enumerate() {
                *o = last + k as f32;
            }
        }
    }

    fn cfg(block_size: usize, buffer_blocks: usize) -> EngineConfig {
        EngineConfig {
            block_size,
            buffer_blocks,
            ..EngineConfig::default()
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let ramp = || Ramp { window: 8, len: 4 };
        assert!(matches!(setup(cfg(0, 2), ramp()), Err(EngineError::Config(_))));
        assert!(matches!(setup(cfg(4, 0), ramp()), Err(EngineError::Config(_))));
        assert!(matches!(setup(cfg(4, 3), ramp()), Err(EngineError::Config(_))));
        assert!(setup(cfg(4, 2), ramp()).is_ok());
    }

    #[test]
    fn silent_until_first_prediction() {
        let (mut audio, mut worker) = setup(cfg(4, 2), Ramp { window: 8, len: 12 }).unwrap();
        let mut out = [1.0; 4];
        audio.render(&[1.0; 4], &mut out);
        assert_eq!(out, [0.0; 4]);
        assert!(audio.worker_idle());
        audio.render(&[2.0; 4], &mut out);
        assert_eq!(out, [0.0; 4]);
        assert!(!audio.worker_idle(), "worker signaled at the end of block 2");
        assert!(worker.run_pending());
        assert_eq!(worker.latest_stamp(), 8);
        audio.render(&[3.0; 4], &mut out);
        assert_eq!(out, [2.0, 3.0, 4.0, 5.0]);
        audio.render(&[3.0; 4], &mut out);
        assert_eq!(out, [6.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn missed_trigger_is_counted_and_prediction_runs_out() {
        let (mut audio, mut worker) = setup(cfg(4, 2), Ramp { window: 8, len: 6 }).unwrap();
        let mut out = [0.0; 4];
        for _ in 0..2 {
            audio.render(&[1.0; 4], &mut out);
        }
        worker.run_pending();
        // Worker stalls from here on: later triggers find it not idle.
        for _ in 0..3 {
            audio.render(&[1.0; 4], &mut out);
        }
        assert_eq!(out, [0.0; 4], "6-sample prediction exhausted after frame 13");
        for _ in 0..3 {
            audio.render(&[1.0; 4], &mut out);
        }
        let stats = audio.stats();
        assert_eq!(stats.inferences_completed, 1);
        assert_eq!(stats.inferences_missed, 2);
        assert_eq!(stats.blocks_processed, 8);
        assert!(stats.buffer_overflows > 0);
    }

    #[test]
    fn offline_short_signal_has_no_predictions() {
        let run = offline_run(cfg(4, 1), Ramp { window: 8, len: 4 }, &[vec![0.5; 7]]).unwrap();
        assert!(run.predictions.is_empty());
        assert_eq!(run.stats.inferences_completed, 0);
        assert_eq!(run.output.len(), 4);
    }

    #[test]
    fn offline_stamps_follow_trigger_cadence() {
        let signal = vec![(0..64).map(|i| i as f32).collect::<Vec<_>>()];
        let run = offline_run(cfg(4, 2), Ramp { window: 8, len: 3 }, &signal).unwrap();
        assert_eq!(run.stamps, vec![8, 16, 24, 32, 40, 48, 56, 64]);
        assert_eq!(run.predictions[0], vec![7.0, 8.0, 9.0]);
        assert_eq!(&run.output[8..12], &[7.0, 8.0, 9.0, 0.0]);
        assert_eq!(run.stats.inferences_missed, 0);
    }

    #[test]
    fn offline_rejects_wrong_channel_count() {
        let r = offline_run(cfg(4, 2), Ramp { window: 8, len: 3 }, &[vec![0.0; 8], vec![0.0; 8]]);
        assert!(matches!(r, Err(EngineError::Shape(_))));
    }
}
