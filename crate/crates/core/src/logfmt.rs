//! The `.bslog` binary sensor-log format.
//!
//! One file holds one device's session. All integers are little-endian.
//!
//! | offset | size | field                 |
//! |--------|------|-----------------------|
//! | 0      | 4    | magic `BSLG`          |
//! | 4      | 1    | version (`1`)         |
//! | 5      | 2    | device id (u16)       |
//! | 7      | 1    | role (0 = TX, 1 = RX) |
//! | 8      | 8    | sample rate, Hz (f64) |
//! | 16     | 4    | channel count (u32)   |
//! | 20     | 8    | pulse period (u64)    |
//! | 28     | 8    | session id (u64)      |
//! | 36     | 8    | frame count (u64)     |
//! | 44     | 8    | sync event count (u64)|
//! | 52     | ...  | per channel: u16 label length + UTF-8 bytes |
//!
//! The payload follows: one block of `n_frames` f32 samples per channel
//! (channel-major), then `(pulse_index u64, frame_index u64)` per sync event.
//! Nothing may follow the last event.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::bytes::{Cursor, Short};

pub const MAGIC: [u8; 4] = *b"BSLG";
pub const VERSION: u8 = 1;
pub const EXTENSION: &str = "bslog";

/// Size of the fixed part of the header, before the channel labels.
pub const FIXED_HEADER_LEN: usize = 52;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("I/O error after writing {written} bytes")]
    Io {
        written: u64,
        #[source]
        source: io::Error,
    },
    #[error("I/O error while reading log")]
    Read(#[from] io::Error),
    #[error("malformed log: {0}")]
    Format(String),
    #[error("truncated log: expected {expected} bytes, got {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("invalid log: {0}")]
    Validation(String),
}

/// Which side of the sync link a device was on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    /// Sends the pulses; its frame counter is the reference clock.
    Tx,
    /// Observes the pulses.
    Rx,
}

impl Role {
    fn to_byte(self) -> u8 {
        match self {
            Role::Tx => 0,
            Role::Rx => 1,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Role::Tx),
            1 => Some(Role::Rx),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogHeader {
    pub device_id: u16,
    pub role: Role,
    pub sample_rate_hz: f64,
    /// One label per channel; the channel count is `channel_labels.len()`.
    pub channel_labels: Vec<String>,
    /// Frames between sync pulses, as configured on the TX device.
    pub pulse_period_frames: u64,
    pub session_id: u64,
}

impl LogHeader {
    pub fn n_channels(&self) -> usize {
        self.channel_labels.len()
    }

    fn validate(&self) -> Result<(), LogError> {
        if self.channel_labels.is_empty() {
            return Err(LogError::Validation("log has no channels".into()));
        }
        if self.channel_labels.len() > u32::MAX as usize {
            return Err(LogError::Validation("too many channels".into()));
        }
        if let Some(l) = self
            .channel_labels
            .iter()
            .find(|l| l.len() > u16::MAX as usize)
        {
            return Err(LogError::Validation(format!(
                "channel label of {} bytes exceeds the u16 length prefix",
                l.len()
            )));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(LogError::Validation(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if self.pulse_period_frames == 0 {
            return Err(LogError::Validation("pulse period must be at least one frame".into()));
        }
        Ok(())
    }
}

/// A sync pulse as seen by one device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SyncEvent {
    /// Ordinal of the pulse within the session.
    pub pulse_index: u64,
    /// Local frame at which the pulse was sent (TX) or observed (RX).
    pub frame_index: u64,
}

/// One device's recorded session.
///
/// Construction validates every invariant, so a `SensorLog` in hand is always
/// writable and always survives a round trip.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorLog {
    header: LogHeader,
    samples: Vec<Vec<f32>>,
    sync_events: Vec<SyncEvent>,
}

impl SensorLog {
    pub fn new(
        header: LogHeader,
        samples: Vec<Vec<f32>>,
        sync_events: Vec<SyncEvent>,
    ) -> Result<Self, LogError> {
        header.validate()?;
        if samples.len() != header.n_channels() {
            return Err(LogError::Validation(format!(
                "{} sample channels for {} labels",
                samples.len(),
                header.n_channels()
            )));
        }
        let n_frames = samples[0].len();
        if let Some((i, ch)) = samples.iter().enumerate().find(|(_, ch)| ch.len() != n_frames) {
            return Err(LogError::Validation(format!(
                "channel {i} has {} frames, channel 0 has {n_frames}",
                ch.len()
            )));
        }
        validate_events(&sync_events, n_frames as u64)?;
        Ok(Self {
            header,
            samples,
            sync_events,
        })
    }

    pub fn header(&self) -> &LogHeader {
        &self.header
    }

    pub fn n_channels(&self) -> usize {
        self.samples.len()
    }

    pub fn n_frames(&self) -> usize {
        self.samples[0].len()
    }

    /// Samples of one channel, indexed by local frame.
    pub fn channel(&self, index: usize) -> &[f32] {
        &self.samples[index]
    }

    pub fn samples(&self) -> &[Vec<f32>] {
        &self.samples
    }

    pub fn sync_events(&self) -> &[SyncEvent] {
        &self.sync_events
    }

    pub fn into_parts(self) -> (LogHeader, Vec<Vec<f32>>, Vec<SyncEvent>) {
        (self.header, self.samples, self.sync_events)
    }

    /// Exact size of the encoded file.
    pub fn encoded_len(&self) -> u64 {
        let labels: u64 = self
            .header
            .channel_labels
            .iter()
            .map(|l| 2 + l.len() as u64)
            .sum();
        FIXED_HEADER_LEN as u64
            + labels
            + 4 * (self.n_channels() * self.n_frames()) as u64
            + 16 * self.sync_events.len() as u64
    }
}

fn validate_events(events: &[SyncEvent], n_frames: u64) -> Result<(), LogError> {
    for (i, ev) in events.iter().enumerate() {
        if ev.frame_index >= n_frames {
            return Err(LogError::Validation(format!(
                "sync event {i} at frame {} is past the last frame ({n_frames} frames)",
                ev.frame_index
            )));
        }
        if i > 0 {
            let prev = events[i - 1];
            if ev.pulse_index <= prev.pulse_index || ev.frame_index <= prev.frame_index {
                return Err(LogError::Validation(format!(
                    "sync events {} and {i} are not strictly increasing",
                    i - 1
                )));
            }
        }
    }
    Ok(())
}

struct CountingWriter<W> {
    inner: W,
    written: u64,
}

impl<W: Write> Write for CountingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.written += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Serializes `log` into `sink`, returning the number of bytes written.
pub fn write_log<W: Write>(log: &SensorLog, sink: W) -> Result<u64, LogError> {
    let mut out = CountingWriter {
        inner: sink,
        written: 0,
    };
    match write_into(log, &mut out) {
        Ok(()) => Ok(out.written),
        Err(source) => Err(LogError::Io {
            written: out.written,
            source,
        }),
    }
}

fn write_into<W: Write>(log: &SensorLog, out: &mut W) -> io::Result<()> {
    let h = &log.header;
    let mut head = Vec::with_capacity(FIXED_HEADER_LEN + 16 * h.n_channels());
    head.extend_from_slice(&MAGIC);
    head.push(VERSION);
    head.extend_from_slice(&h.device_id.to_le_bytes());
    head.push(h.role.to_byte());
    head.extend_from_slice(&h.sample_rate_hz.to_le_bytes());
    head.extend_from_slice(&(h.n_channels() as u32).to_le_bytes());
    head.extend_from_slice(&h.pulse_period_frames.to_le_bytes());
    head.extend_from_slice(&h.session_id.to_le_bytes());
    head.extend_from_slice(&(log.n_frames() as u64).to_le_bytes());
    head.extend_from_slice(&(log.sync_events.len() as u64).to_le_bytes());
    for label in &h.channel_labels {
        head.extend_from_slice(&(label.len() as u16).to_le_bytes());
        head.extend_from_slice(label.as_bytes());
    }
    out.write_all(&head)?;

    let mut block = Vec::with_capacity(4 * log.n_frames());
    for channel in &log.samples {
        block.clear();
        block.extend(channel.iter().flat_map(|s| s.to_le_bytes()));
        out.write_all(&block)?;
    }

    block.clear();
    for ev in &log.sync_events {
        block.extend_from_slice(&ev.pulse_index.to_le_bytes());
        block.extend_from_slice(&ev.frame_index.to_le_bytes());
    }
    out.write_all(&block)?;
    out.flush()
}

/// Reads a whole log from `source`.
pub fn read_log<R: Read>(mut source: R) -> Result<SensorLog, LogError> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    parse_log(&buf)
}

fn truncated(s: Short) -> LogError {
    LogError::Truncated {
        expected: (s.offset + s.needed) as u64,
        actual: (s.offset + s.available) as u64,
    }
}

/// Parses an encoded log.
///
/// Declared sizes are checked against the input length before anything is
/// allocated for them.
pub fn parse_log(bytes: &[u8]) -> Result<SensorLog, LogError> {
    let mut cur = Cursor::new(bytes);

    let magic = cur.take(4).map_err(truncated)?;
    if magic != MAGIC {
        return Err(LogError::Format(format!("bad magic {magic:02x?}")));
    }
    let version = cur.u8().map_err(truncated)?;
    if version != VERSION {
        return Err(LogError::Format(format!("unsupported version {version}")));
    }
    let device_id = cur.u16().map_err(truncated)?;
    let role_byte = cur.u8().map_err(truncated)?;
    let role = Role::from_byte(role_byte)
        .ok_or_else(|| LogError::Format(format!("unknown role byte {role_byte}")))?;
    let sample_rate_hz = cur.f64().map_err(truncated)?;
    let n_channels = cur.u32().map_err(truncated)? as u64;
    let pulse_period_frames = cur.u64().map_err(truncated)?;
    let session_id = cur.u64().map_err(truncated)?;
    let n_frames = cur.u64().map_err(truncated)?;
    let n_events = cur.u64().map_err(truncated)?;

    if n_channels == 0 {
        return Err(LogError::Validation("log has no channels".into()));
    }
    // Every label costs at least its two length bytes.
    if n_channels.saturating_mul(2) > cur.remaining() as u64 {
        return Err(LogError::Truncated {
            expected: (cur.position() as u64).saturating_add(n_channels.saturating_mul(2)),
            actual: bytes.len() as u64,
        });
    }
    let mut channel_labels = Vec::with_capacity(n_channels as usize);
    for i in 0..n_channels {
        let len = cur.u16().map_err(truncated)? as usize;
        let raw = cur.take(len).map_err(truncated)?;
        let label = std::str::from_utf8(raw)
            .map_err(|_| LogError::Format(format!("label of channel {i} is not UTF-8")))?;
        channel_labels.push(label.to_owned());
    }

    let payload = n_channels
        .checked_mul(n_frames)
        .and_then(|s| s.checked_mul(4))
        .and_then(|s| n_events.checked_mul(16).and_then(|e| s.checked_add(e)))
        .ok_or_else(|| LogError::Format("declared payload size overflows".into()))?;
    let expected = (cur.position() as u64).saturating_add(payload);
    let actual = bytes.len() as u64;
    if expected > actual {
        return Err(LogError::Truncated { expected, actual });
    }
    if expected < actual {
        return Err(LogError::Format(format!(
            "{} trailing bytes after the last sync event",
            actual - expected
        )));
    }

    let header = LogHeader {
        device_id,
        role,
        sample_rate_hz,
        channel_labels,
        pulse_period_frames,
        session_id,
    };
    header.validate()?;

    let n_frames = n_frames as usize;
    let mut samples = Vec::with_capacity(n_channels as usize);
    for _ in 0..n_channels {
        let raw = cur.take(4 * n_frames).map_err(truncated)?;
        samples.push(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect::<Vec<_>>(),
        );
    }
    let mut sync_events = Vec::with_capacity(n_events as usize);
    for _ in 0..n_events {
        let pulse_index = cur.u64().map_err(truncated)?;
        let frame_index = cur.u64().map_err(truncated)?;
        sync_events.push(SyncEvent {
            pulse_index,
            frame_index,
        });
    }

    SensorLog::new(header, samples, sync_events)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(labels: &[&str]) -> LogHeader {
        LogHeader {
            device_id: 3,
            role: Role::Rx,
            sample_rate_hz: 22050.0,
            channel_labels: labels.iter().map(|s| s.to_string()).collect(),
            pulse_period_frames: 2,
            session_id: 0x0102_0304_0506_0708,
        }
    }

    /// Two channels, four frames, one pulse at frame 2, assembled field by
    /// field from the format table.
    fn reference_bytes() -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"BSLG");
        b.push(1);
        b.extend_from_slice(&[0x03, 0x00]); // device 3
        b.push(0x01); // RX
        b.extend_from_slice(&[0x00, 0x00, 0x00, 0x00, 0x80, 0x88, 0xd5, 0x40]); // 22050.0
        b.extend_from_slice(&[0x02, 0x00, 0x00, 0x00]); // 2 channels
        b.extend_from_slice(&[0x02, 0, 0, 0, 0, 0, 0, 0]); // pulse period 2
        b.extend_from_slice(&[0x08, 0x07, 0x06, 0x05, 0x04, 0x03, 0x02, 0x01]); // session
        b.extend_from_slice(&[0x04, 0, 0, 0, 0, 0, 0, 0]); // 4 frames
        b.extend_from_slice(&[0x01, 0, 0, 0, 0, 0, 0, 0]); // 1 event
        b.extend_from_slice(&[0x01, 0x00, b'a']);
        b.extend_from_slice(&[0x02, 0x00, b's', b'2']);
        // channel "a": 0.0, 0.5, -1.0, 1.0
        b.extend_from_slice(&[0x00, 0x00, 0x00, 0x00]);
        b.extend_from_slice(&[0x00, 0x00, 0x00, 0x3f]);
        b.extend_from_slice(&[0x00, 0x00, 0x80, 0xbf]);
        b.extend_from_slice(&[0x00, 0x00, 0x80, 0x3f]);
        // channel "s2": 0.25, -0.25, 2.0, -0.0
        b.extend_from_slice(&[0x00, 0x00, 0x80, 0x3e]);
        b.extend_from_slice(&[0x00, 0x00, 0x80, 0xbe]);
        b.extend_from_slice(&[0x00, 0x00, 0x00, 0x40]);
        b.extend_from_slice(&[0x00, 0x00, 0x00, 0x80]);
        // pulse 0 at frame 2
        b.extend_from_slice(&[0, 0, 0, 0, 0, 0, 0, 0]);
        b.extend_from_slice(&[0x02, 0, 0, 0, 0, 0, 0, 0]);
        b
    }

    fn reference_log() -> SensorLog {
        SensorLog::new(
            header(&["a", "s2"]),
            vec![vec![0.0, 0.5, -1.0, 1.0], vec![0.25, -0.25, 2.0, -0.0]],
            vec![SyncEvent {
                pulse_index: 0,
                frame_index: 2,
            }],
        )
        .unwrap()
    }

    #[test]
    fn writes_reference_bytes() {
        let mut out = Vec::new();
        let n = write_log(&reference_log(), &mut out).unwrap();
        assert_eq!(out, reference_bytes());
        assert_eq!(n as usize, out.len());
        assert_eq!(reference_log().encoded_len(), n);
    }

    #[test]
    fn parses_reference_bytes() {
        let log = parse_log(&reference_bytes()).unwrap();
        assert_eq!(log, reference_log());
        // -0.0 == 0.0 under PartialEq, so check the sign bit explicitly.
        assert_eq!(log.channel(1)[3].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn empty_log_is_header_only() {
        let log = SensorLog::new(header(&[""]), vec![vec![]], vec![]).unwrap();
        let mut out = Vec::new();
        let n = write_log(&log, &mut out).unwrap();
        assert_eq!(n, FIXED_HEADER_LEN as u64 + 2);
        assert_eq!(parse_log(&out).unwrap(), log);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut b = reference_bytes();
        b[0] = b'X';
        assert!(matches!(parse_log(&b), Err(LogError::Format(_))));
    }

    #[test]
    fn rejects_unknown_version_and_role() {
        let mut b = reference_bytes();
        b[4] = 2;
        assert!(matches!(parse_log(&b), Err(LogError::Format(_))));
        let mut b = reference_bytes();
        b[7] = 9;
        assert!(matches!(parse_log(&b), Err(LogError::Format(_))));
    }

    #[test]
    fn reports_truncation_mid_samples() {
        let b = reference_bytes();
        let cut = &b[..b.len() - 16 - 6];
        match parse_log(cut) {
            Err(LogError::Truncated { expected, actual }) => {
                assert_eq!(expected, b.len() as u64);
                assert_eq!(actual, cut.len() as u64);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn reports_truncation_in_header() {
        let b = reference_bytes();
        assert!(matches!(
            parse_log(&b[..30]),
            Err(LogError::Truncated { expected: 36, actual: 30 })
        ));
    }

    #[test]
    fn rejects_non_monotonic_events() {
        let mut b = reference_bytes();
        // declare two events, both pulse 0 at frame 2
        b[44] = 2;
        let tail: Vec<u8> = b[b.len() - 16..].to_vec();
        b.extend_from_slice(&tail);
        assert!(matches!(parse_log(&b), Err(LogError::Validation(_))));
    }

    #[test]
    fn rejects_event_past_end() {
        let mut b = reference_bytes();
        let n = b.len();
        b[n - 8] = 4;
        assert!(matches!(parse_log(&b), Err(LogError::Validation(_))));
    }

    #[test]
    fn rejects_trailing_bytes() {
        let mut b = reference_bytes();
        b.push(0);
        assert!(matches!(parse_log(&b), Err(LogError::Format(_))));
    }

    #[test]
    fn hostile_sizes_do_not_allocate() {
        let mut b = reference_bytes();
        b[36..44].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(parse_log(&b).is_err());
        let mut b = reference_bytes();
        b[16..20].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(parse_log(&b), Err(LogError::Truncated { .. })));
    }

    #[test]
    fn constructor_enforces_invariants() {
        assert!(SensorLog::new(header(&[]), vec![], vec![]).is_err());
        assert!(SensorLog::new(header(&["a", "b"]), vec![vec![0.0], vec![]], vec![]).is_err());
        let mut h = header(&["a"]);
        h.sample_rate_hz = 0.0;
        assert!(SensorLog::new(h, vec![vec![0.0]], vec![]).is_err());
        let mut h = header(&["a"]);
        h.pulse_period_frames = 0;
        assert!(SensorLog::new(h, vec![vec![0.0]], vec![]).is_err());
    }

    #[test]
    fn write_error_reports_progress() {
        struct Limited(usize);
        impl Write for Limited {
            fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
                if self.0 == 0 {
                    return Err(io::Error::other("full"));
                }
                let n = buf.len().min(self.0);
                self.0 -= n;
                Ok(n)
            }
            fn flush(&mut self) -> io::Result<()> {
                Ok(())
            }
        }
        match write_log(&reference_log(), Limited(60)) {
            Err(LogError::Io { written, .. }) => assert_eq!(written, 60),
            other => panic!("expected I/O error, got {other:?}"),
        }
    }
}
