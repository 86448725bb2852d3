//! Synthetic multi-device recording sessions with known ground truth.
//!
//! Device 0 is the transmitter and defines the reference timebase. Receiver
//! `d` starts recording `start_offset_frames[d]` frames before TX frame 0 and
//! runs its clock `drift_ppm[d]` parts per million fast, so TX time `t` lands
//! on local frame `round((t + offset) * (1 + drift_ppm * 1e-6))`, rounding
//! half away from zero.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64(seed)`. Each consumer gets its own stream via `set_stream`:
//! stream `0x1_0000 + device` draws the pulse jitter of that device, stream
//! `(device << 16) | channel` draws that channel's white noise. A channel can
//! therefore be regenerated on its own.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::logfmt::{LogHeader, Role, SensorLog, SyncEvent};
use crate::npy::NpyArray;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid session config: {0}")]
    Config(String),
}

/// What a synthetic sensor channel records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignalSpec {
    /// `exp(-decay * t) * sin(2π f t)`, like an accelerometer on a released
    /// pendulum.
    DampedSine { freq_hz: f64, decay_per_s: f64 },
    /// Single-sample spikes `rate_hz` times per second, like a piezo on a
    /// drumstick.
    ImpulseTrain { rate_hz: f64, amplitude: f64 },
    /// Uniform noise in `[-amplitude, amplitude]`.
    WhiteNoise { amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    /// Device 0 transmits; the rest receive.
    pub n_devices: usize,
    pub channels_per_device: usize,
    pub n_frames: usize,
    pub sample_rate_hz: f64,
    pub pulse_period_frames: u64,
    /// Number of pulses to emit. `None` emits as many as fit on every device.
    pub n_pulses: Option<usize>,
    /// Frames each device has recorded before TX frame 0. Entry 0 must be 0.
    pub start_offset_frames: Vec<u64>,
    /// Clock-rate deviation per device. Entry 0 must be 0.
    pub drift_ppm: Vec<f64>,
    /// Maximum uniform jitter on RX pulse observations.
    pub pulse_jitter_frames: u64,
    /// Either one spec per channel (shared by all devices) or one per
    /// device-channel pair, device-major.
    pub signals: Vec<SignalSpec>,
    pub seed: u64,
}

impl SessionConfig {
    /// Two devices with one sensor each: a slowly decaying pendulum on the TX
    /// board and a drumstick piezo on the RX board.
    pub fn pendulum() -> Self {
        Self {
            n_devices: 2,
            channels_per_device: 1,
            n_frames: 40_000,
            sample_rate_hz: 1000.0,
            pulse_period_frames: 1000,
            n_pulses: None,
            start_offset_frames: vec![0, 237],
            drift_ppm: vec![0.0, 0.0],
            pulse_jitter_frames: 0,
            signals: vec![
                SignalSpec::DampedSine {
                    freq_hz: 7.0,
                    decay_per_s: 0.02,
                },
                SignalSpec::ImpulseTrain {
                    rate_hz: 2.0,
                    amplitude: 0.8,
                },
            ],
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |msg: String| Err(SynthError::Config(msg));
        if self.n_devices == 0 {
            return fail("need at least one device".into());
        }
        if self.channels_per_device == 0 {
            return fail("need at least one channel per device".into());
        }
        if self.n_frames == 0 {
            return fail("session must have at least one frame".into());
        }
        if self.n_devices > u16::MAX as usize || self.channels_per_device > u16::MAX as usize {
            return fail("too many devices or channels".into());
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return fail(format!("sample rate must be positive, got {}", self.sample_rate_hz));
        }
        if self.pulse_period_frames == 0 {
            return fail("pulse period must be at least one frame".into());
        }
        if self.start_offset_frames.len() != self.n_devices {
            return fail(format!(
                "{} start offsets for {} devices",
                self.start_offset_frames.len(),
                self.n_devices
            ));
        }
        if self.drift_ppm.len() != self.n_devices {
            return fail(format!(
                "{} drift values for {} devices",
                self.drift_ppm.len(),
                self.n_devices
            ));
        }
        if self.start_offset_frames[0] != 0 || self.drift_ppm[0] != 0.0 {
            return fail("the TX device (0) must have zero offset and zero drift".into());
        }
        if let Some(d) = self.drift_ppm.iter().find(|d| !d.is_finite() || **d <= -1e6) {
            return fail(format!("drift {d} ppm is not a usable clock rate"));
        }
        if self.pulse_period_frames <= 2 * self.pulse_jitter_frames {
            return fail(format!(
                "pulse period {} must exceed twice the jitter {}",
                self.pulse_period_frames, self.pulse_jitter_frames
            ));
        }
        let per_channel = self.channels_per_device;
        let per_pair = self.n_devices * self.channels_per_device;
        if self.signals.len() != per_channel && self.signals.len() != per_pair {
            return fail(format!(
                "{} signal specs; expected {per_channel} (per channel) or {per_pair} (per device-channel)",
                self.signals.len()
            ));
        }
        Ok(())
    }

    pub fn signal(&self, device: usize, channel: usize) -> SignalSpec {
        if self.signals.len() == self.channels_per_device {
            self.signals[channel]
        } else {
            self.signals[device * self.channels_per_device + channel]
        }
    }

    fn rate_scale(&self, device: usize) -> f64 {
        1.0 + self.drift_ppm[device] * 1e-6
    }

    /// Continuous TX-time position of local frame `frame` on `device`.
    pub fn tx_time(&self, device: usize, frame: f64) -> f64 {
        frame / self.rate_scale(device) - self.start_offset_frames[device] as f64
    }

    /// Local frame on `device` that records TX frame `tx_frame`.
    pub fn local_frame(&self, device: usize, tx_frame: i64) -> i64 {
        ((tx_frame as f64 + self.start_offset_frames[device] as f64) * self.rate_scale(device)).round()
            as i64
    }

    fn pulse_count(&self) -> Result<usize, SynthError> {
        let jitter = self.pulse_jitter_frames as i64;
        let fits = |k: usize| {
            (0..self.n_devices).all(|d| {
                let clean = self.local_frame(d, k as i64 * self.pulse_period_frames as i64);
                clean + jitter < self.n_frames as i64
            })
        };
        match self.n_pulses {
            Some(n) => Ok(n),
            None => {
                let n = (0..).take_while(|&k| fits(k)).count();
                if n == 0 {
                    return Err(SynthError::Config(
                        "session too short to carry a single sync pulse".into(),
                    ));
                }
                Ok(n)
            }
        }
    }
}

/// The clean alignment the generator used, for checking a synchronizer.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `offsets[device][k]` = clean (pre-jitter) RX frame of pulse `k` minus
    /// its TX frame. Row 0 is all zeros.
    pub offsets: Vec<Vec<i64>>,
    config: SessionConfig,
}

impl GroundTruth {
    pub fn offset(&self, device: usize, pulse_index: usize) -> i64 {
        self.offsets[device][pulse_index]
    }

    /// Local frame on `device` that records TX frame `tx_frame`.
    pub fn local_frame(&self, device: usize, tx_frame: i64) -> i64 {
        self.config.local_frame(device, tx_frame)
    }

    pub fn n_pulses(&self) -> usize {
        self.offsets.first().map_or(0, Vec::len)
    }

    /// Offsets as an `n_devices × n_pulses` integer array.
    pub fn to_npy(&self) -> NpyArray<i64> {
        NpyArray::new(
            vec![self.offsets.len(), self.n_pulses()],
            self.offsets.iter().flatten().copied().collect(),
        )
        .expect("offset table is rectangular")
    }
}

fn channel_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Samples one device channel. Deterministic in `(config, device, channel)`.
pub fn generate_channel(config: &SessionConfig, device: usize, channel: usize) -> Vec<f32> {
    let sr = config.sample_rate_hz;
    match config.signal(device, channel) {
        SignalSpec::DampedSine {
            freq_hz,
            decay_per_s,
        } => (0..config.n_frames)
            .map(|f| {
                let t = config.tx_time(device, f as f64) / sr;
                ((-decay_per_s * t).exp() * (std::f64::consts::TAU * freq_hz * t).sin()) as f32
            })
            .collect(),
        SignalSpec::ImpulseTrain { rate_hz, amplitude } => {
            let spacing = sr / rate_hz;
            (0..config.n_frames)
                .map(|f| {
                    let start = config.tx_time(device, f as f64);
                    let end = config.tx_time(device, f as f64 + 1.0);
                    let next = (start / spacing).ceil() * spacing;
                    if next < end {
                        amplitude as f32
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        SignalSpec::WhiteNoise { amplitude } => {
            let mut rng = channel_rng(config.seed, ((device as u64) << 16) | channel as u64);
            (0..config.n_frames)
                .map(|_| (amplitude * rng.random_range(-1.0..=1.0)) as f32)
                .collect()
        }
    }
}

/// Generates one log per device plus the alignment used to create them.
pub fn generate_session(config: &SessionConfig) -> Result<(Vec<SensorLog>, GroundTruth), SynthError> {
    config.validate()?;
    let n_pulses = config.pulse_count()?;
    let period = config.pulse_period_frames as i64;
    let jitter = config.pulse_jitter_frames as i64;

    let mut logs = Vec::with_capacity(config.n_devices);
    let mut offsets = Vec::with_capacity(config.n_devices);
    for device in 0..config.n_devices {
        let mut rng = channel_rng(config.seed, 0x1_0000 + device as u64);
        let mut events = Vec::with_capacity(n_pulses);
        let mut device_offsets = Vec::with_capacity(n_pulses);
        for k in 0..n_pulses {
            let tx = k as i64 * period;
            let clean = config.local_frame(device, tx);
            let noise = if device == 0 || jitter == 0 {
                0
            } else {
                rng.random_range(-jitter..=jitter)
            };
            // An observation cannot precede the start of the recording.
            let observed = (clean + noise).max(0);
            if observed >= config.n_frames as i64 {
                return Err(SynthError::Config(format!(
                    "pulse {k} lands on frame {observed} of device {device}, past the {} recorded frames",
                    config.n_frames
                )));
            }
            device_offsets.push(clean - tx);
            events.push(SyncEvent {
                pulse_index: k as u64,
                frame_index: observed as u64,
            });
        }

        let samples = (0..config.channels_per_device)
            .map(|c| generate_channel(config, device, c))
            .collect();
        let header = LogHeader {
            device_id: device as u16,
            role: if device == 0 { Role::Tx } else { Role::Rx },
            sample_rate_hz: config.sample_rate_hz,
            channel_labels: (0..config.channels_per_device).map(|c| format!("ch{c}")).collect(),
            pulse_period_frames: config.pulse_period_frames,
            session_id: config.seed,
        };
        let log = SensorLog::new(header, samples, events)
            .map_err(|e| SynthError::Config(format!("device {device}: {e}")))?;
        logs.push(log);
        offsets.push(device_offsets);
    }

    Ok((
        logs,
        GroundTruth {
            offsets,
            config: config.clone(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_devices(offset: u64) -> SessionConfig {
        SessionConfig {
            n_devices: 2,
            channels_per_device: 1,
            n_frames: 3000,
            sample_rate_hz: 1000.0,
            pulse_period_frames: 1000,
            n_pulses: Some(3),
            start_offset_frames: vec![0, offset],
            drift_ppm: vec![0.0, 0.0],
            pulse_jitter_frames: 0,
            signals: vec![SignalSpec::WhiteNoise { amplitude: 1.0 }],
            seed: 1,
        }
    }

    fn pulse_frames(log: &SensorLog) -> Vec<u64> {
        log.sync_events().iter().map(|e| e.frame_index).collect()
    }

    #[test]
    fn identity_configuration_matches_tx() {
        let (logs, truth) = generate_session(&two_devices(0)).unwrap();
        assert_eq!(pulse_frames(&logs[0]), pulse_frames(&logs[1]));
        assert_eq!(truth.offsets[1], vec![0, 0, 0]);
    }

    #[test]
    fn offset_pulses() {
        let (logs, truth) = generate_session(&two_devices(50)).unwrap();
        assert_eq!(pulse_frames(&logs[0]), vec![0, 1000, 2000]);
        assert_eq!(pulse_frames(&logs[1]), vec![50, 1050, 2050]);
        assert_eq!(logs[0].header().role, Role::Tx);
        assert_eq!(logs[1].header().role, Role::Rx);
        assert_eq!(truth.offsets, vec![vec![0, 0, 0], vec![50, 50, 50]]);
    }

    #[test]
    fn too_short_session_is_rejected() {
        let mut cfg = two_devices(1000);
        cfg.n_frames = 2500;
        assert!(matches!(generate_session(&cfg), Err(SynthError::Config(_))));
        cfg.n_pulses = None;
        cfg.n_frames = 900;
        assert!(generate_session(&cfg).is_err());
    }

    #[test]
    fn derived_pulse_count_fits_every_device() {
        let mut cfg = two_devices(700);
        cfg.n_pulses = None;
        cfg.pulse_jitter_frames = 2;
        let (logs, truth) = generate_session(&cfg).unwrap();
        // RX pulse k sits at 700 + 1000k (+-2); k = 2 would need frame 2702 < 3000.
        assert_eq!(truth.n_pulses(), 3);
        assert_eq!(logs[0].sync_events().len(), logs[1].sync_events().len());
    }

    #[test]
    fn deterministic_for_a_seed() {
        let mut cfg = two_devices(10);
        cfg.pulse_jitter_frames = 3;
        let (a, _) = generate_session(&cfg).unwrap();
        let (b, _) = generate_session(&cfg).unwrap();
        assert_eq!(a, b);
        cfg.seed = 2;
        let (c, _) = generate_session(&cfg).unwrap();
        assert_ne!(a[1].channel(0), c[1].channel(0));
    }

    #[test]
    fn drift_makes_offsets_grow() {
        let mut cfg = two_devices(0);
        cfg.drift_ppm = vec![0.0, 1000.0];
        cfg.n_frames = 3100;
        let (_, truth) = generate_session(&cfg).unwrap();
        // round(1000 * 1.001) - 1000 = 1, round(2000 * 1.001) - 2000 = 2
        assert_eq!(truth.offsets[1], vec![0, 1, 2]);
    }

    #[test]
    fn channels_regenerate_independently() {
        let mut cfg = two_devices(5);
        cfg.channels_per_device = 2;
        cfg.signals = vec![
            SignalSpec::WhiteNoise { amplitude: 0.5 },
            SignalSpec::DampedSine {
                freq_hz: 3.0,
                decay_per_s: 0.1,
            },
        ];
        let (logs, _) = generate_session(&cfg).unwrap();
        for d in 0..2 {
            for c in 0..2 {
                assert_eq!(logs[d].channel(c), generate_channel(&cfg, d, c).as_slice());
            }
        }
    }

    #[test]
    fn impulse_train_spacing() {
        let mut cfg = two_devices(0);
        cfg.signals = vec![SignalSpec::ImpulseTrain {
            rate_hz: 4.0,
            amplitude: 0.9,
        }];
        let (logs, _) = generate_session(&cfg).unwrap();
        let hits: Vec<usize> = logs[0]
            .channel(0)
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(hits, (0..12).map(|k| k * 250).collect::<Vec<_>>());
    }

    #[test]
    fn rx_signal_is_shifted_tx_signal() {
        let mut cfg = two_devices(37);
        cfg.signals = vec![SignalSpec::DampedSine {
            freq_hz: 5.0,
            decay_per_s: 0.3,
        }];
        let (logs, _) = generate_session(&cfg).unwrap();
        for t in 0..500 {
            assert_eq!(logs[0].channel(0)[t], logs[1].channel(0)[t + 37]);
        }
    }

    #[test]
    fn rejects_inconsistent_config() {
        let mut cfg = two_devices(0);
        cfg.start_offset_frames = vec![3, 0];
        assert!(generate_session(&cfg).is_err());
        let mut cfg = two_devices(0);
        cfg.pulse_jitter_frames = 500;
        assert!(generate_session(&cfg).is_err());
        let mut cfg = two_devices(0);
        cfg.signals.clear();
        assert!(generate_session(&cfg).is_err());
    }

    #[test]
    fn ground_truth_table_shape() {
        let (_, truth) = generate_session(&two_devices(50)).unwrap();
        let arr = truth.to_npy();
        assert_eq!(arr.shape, vec![2, 3]);
        assert_eq!(arr.data, vec![0, 0, 0, 50, 50, 50]);
    }
}
