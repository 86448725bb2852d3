//! Sample-level alignment of several device logs through their shared sync
//! pulses.
//!
//! For every receiver and every pulse `k` the offset `o_k = rx_frame(k) -
//! tx_frame(k)` is measured. Local frame `f` in pulse segment `k` (from pulse
//! `k` up to pulse `k + 1`; frames before the first pulse belong to segment 0)
//! moves to TX frame `f - o_k`. Nothing is interpolated: every output sample
//! is a raw input sample.
//!
//! When the offset changes between segments two frames can land on the same
//! TX column (the later segment wins) or a column can be left empty (it
//! repeats the previous column's sample). Both are counted in
//! [`SegmentDiagnostics`].

use thiserror::Error;

use crate::logfmt::{Role, SensorLog};

#[derive(Debug, Error, PartialEq)]
pub enum SyncError {
    #[error("expected exactly one TX log, found {0}")]
    Topology(usize),
    #[error("device {device_id} saw {rx_count} pulses, the TX device sent {tx_count}")]
    PulseMismatch {
        device_id: u16,
        tx_count: usize,
        rx_count: usize,
    },
    #[error("device {device_id} logged pulse {rx_pulse} where the TX logged pulse {tx_pulse}")]
    PulseOrdinal {
        device_id: u16,
        tx_pulse: u64,
        rx_pulse: u64,
    },
    #[error("no sync pulses to align device {0} with")]
    NoPulses(u16),
    #[error("logs disagree on {0}")]
    SessionMismatch(String),
    #[error("the devices share no common frames")]
    NoOverlap,
    #[error("alignment solution does not fit the logs: {0}")]
    Internal(String),
}

/// Pulse-by-pulse offsets of one device relative to the TX.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceAlignment {
    pub device_id: u16,
    pub role: Role,
    /// `(pulse_index, rx_frame - tx_frame)` per matched pulse; empty for the TX.
    pub offsets: Vec<(u64, i64)>,
    /// Largest `|o_{k+1} - o_k|`; non-zero means drift or jitter.
    pub max_offset_step: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentSolution {
    /// One entry per input log, in input order.
    pub devices: Vec<DeviceAlignment>,
    /// Common TX-frame range `[start, end)`.
    pub overlap: (i64, i64),
}

impl AlignmentSolution {
    pub fn overlap_len(&self) -> usize {
        (self.overlap.1 - self.overlap.0) as usize
    }
}

/// Boundary effects of piecewise-constant shifting for one device.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SegmentDiagnostics {
    /// Columns that repeat the previous sample because no frame mapped there.
    pub gap_fills: usize,
    /// Frames discarded because a later segment claimed their column.
    pub overwritten: usize,
}

/// Channels of all devices on the TX timebase.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedMatrix {
    /// One row per channel, devices in input order.
    pub data: Vec<Vec<f32>>,
    /// `"device:channel"` per row.
    pub row_labels: Vec<String>,
    pub sample_rate_hz: f64,
    /// Device id of the TX log.
    pub timebase: u16,
    /// TX frame of column 0.
    pub start_frame: i64,
    /// Per input log.
    pub diagnostics: Vec<SegmentDiagnostics>,
}

impl AlignedMatrix {
    pub fn n_rows(&self) -> usize {
        self.data.len()
    }

    pub fn n_timesteps(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }
}

fn tx_position(logs: &[SensorLog]) -> Result<usize, SyncError> {
    let tx: Vec<usize> = logs
        .iter()
        .enumerate()
        .filter(|(_, l)| l.header().role == Role::Tx)
        .map(|(i, _)| i)
        .collect();
    match tx.as_slice() {
        [i] => Ok(*i),
        _ => Err(SyncError::Topology(tx.len())),
    }
}

/// Measures per-pulse offsets and the common frame range.
pub fn estimate_offsets(logs: &[SensorLog]) -> Result<AlignmentSolution, SyncError> {
    let tx_at = tx_position(logs)?;
    let tx = &logs[tx_at];
    for log in logs {
        let (a, b) = (log.header(), tx.header());
        if a.session_id != b.session_id {
            return Err(SyncError::SessionMismatch(format!(
                "session id ({:#x} vs {:#x})",
                a.session_id, b.session_id
            )));
        }
        if a.sample_rate_hz != b.sample_rate_hz {
            return Err(SyncError::SessionMismatch(format!(
                "sample rate ({} vs {})",
                a.sample_rate_hz, b.sample_rate_hz
            )));
        }
    }

    let tx_events = tx.sync_events();
    let mut start = 0i64;
    let mut end = tx.n_frames() as i64;
    let mut devices = Vec::with_capacity(logs.len());
    for (i, log) in logs.iter().enumerate() {
        let device_id = log.header().device_id;
        if i == tx_at {
            devices.push(DeviceAlignment {
                device_id,
                role: Role::Tx,
                offsets: Vec::new(),
                max_offset_step: 0,
            });
            continue;
        }
        let rx_events = log.sync_events();
        if rx_events.len() != tx_events.len() {
            return Err(SyncError::PulseMismatch {
                device_id,
                tx_count: tx_events.len(),
                rx_count: rx_events.len(),
            });
        }
        if rx_events.is_empty() {
            return Err(SyncError::NoPulses(device_id));
        }
        let mut offsets = Vec::with_capacity(rx_events.len());
        for (t, r) in tx_events.iter().zip(rx_events) {
            if t.pulse_index != r.pulse_index {
                return Err(SyncError::PulseOrdinal {
                    device_id,
                    tx_pulse: t.pulse_index,
                    rx_pulse: r.pulse_index,
                });
            }
            offsets.push((t.pulse_index, r.frame_index as i64 - t.frame_index as i64));
        }
        let max_offset_step = offsets
            .windows(2)
            .map(|w| (w[1].1 - w[0].1).abs())
            .max()
            .unwrap_or(0);

        let first = offsets[0].1;
        let last = offsets[offsets.len() - 1].1;
        start = start.max(-first);
        end = end.min(log.n_frames() as i64 - last);
        devices.push(DeviceAlignment {
            device_id,
            role: Role::Rx,
            offsets,
            max_offset_step,
        });
    }

    if logs.len() > 1 && start >= end {
        return Err(SyncError::NoOverlap);
    }
    Ok(AlignmentSolution {
        devices,
        overlap: (start, end.max(start)),
    })
}

/// For each TX column of `overlap`, the local frame of `log` that fills it.
///
/// Sources never decrease; they repeat only at counted gap fills.
pub fn source_frames(
    log: &SensorLog,
    alignment: &DeviceAlignment,
    overlap: (i64, i64),
) -> Result<(Vec<usize>, SegmentDiagnostics), SyncError> {
    let (start, end) = overlap;
    let width = (end - start).max(0) as usize;
    if alignment.role == Role::Tx {
        if start < 0 || end > log.n_frames() as i64 {
            return Err(SyncError::Internal(format!(
                "overlap {start}..{end} exceeds the TX log's {} frames",
                log.n_frames()
            )));
        }
        return Ok(((start as usize..end as usize).collect(), SegmentDiagnostics::default()));
    }
    if alignment.offsets.len() != log.sync_events().len() {
        return Err(SyncError::Internal(format!(
            "device {} has {} offsets for {} pulses",
            alignment.device_id,
            alignment.offsets.len(),
            log.sync_events().len()
        )));
    }

    const EMPTY: usize = usize::MAX;
    let mut sources = vec![EMPTY; width];
    let mut diag = SegmentDiagnostics::default();
    let pulses = log.sync_events();
    let mut segment = 0usize;
    for f in 0..log.n_frames() {
        while segment + 1 < pulses.len() && f as u64 >= pulses[segment + 1].frame_index {
            segment += 1;
        }
        let t = f as i64 - alignment.offsets[segment].1;
        if t < start || t >= end {
            continue;
        }
        let slot = &mut sources[(t - start) as usize];
        if *slot != EMPTY {
            diag.overwritten += 1;
        }
        *slot = f;
    }

    let Some(first) = sources.iter().copied().find(|&s| s != EMPTY) else {
        if width == 0 {
            return Ok((sources, diag));
        }
        return Err(SyncError::Internal(format!(
            "no frame of device {} maps into the overlap",
            alignment.device_id
        )));
    };
    let mut previous = first;
    for s in sources.iter_mut() {
        if *s == EMPTY {
            *s = previous;
            diag.gap_fills += 1;
        } else {
            previous = *s;
        }
    }
    Ok((sources, diag))
}

/// Builds the aligned matrix, trimmed to the solution's overlap.
pub fn align(logs: &[SensorLog], solution: &AlignmentSolution) -> Result<AlignedMatrix, SyncError> {
    if solution.devices.len() != logs.len() {
        return Err(SyncError::Internal(format!(
            "{} device alignments for {} logs",
            solution.devices.len(),
            logs.len()
        )));
    }
    let tx_at = tx_position(logs)?;
    let mut data = Vec::new();
    let mut row_labels = Vec::new();
    let mut diagnostics = Vec::with_capacity(logs.len());
    for (log, device) in logs.iter().zip(&solution.devices) {
        if device.device_id != log.header().device_id || device.role != log.header().role {
            return Err(SyncError::Internal(format!(
                "alignment for device {} paired with log of device {}",
                device.device_id,
                log.header().device_id
            )));
        }
        let (sources, diag) = source_frames(log, device, solution.overlap)?;
        for (c, label) in log.header().channel_labels.iter().enumerate() {
            let channel = log.channel(c);
            data.push(sources.iter().map(|&f| channel[f]).collect());
            row_labels.push(format!("{}:{label}", device.device_id));
        }
        diagnostics.push(diag);
    }
    Ok(AlignedMatrix {
        data,
        row_labels,
        sample_rate_hz: logs[tx_at].header().sample_rate_hz,
        timebase: logs[tx_at].header().device_id,
        start_frame: solution.overlap.0,
        diagnostics,
    })
}

/// `estimate_offsets` followed by `align`.
pub fn synchronize(logs: &[SensorLog]) -> Result<AlignedMatrix, SyncError> {
    let solution = estimate_offsets(logs)?;
    align(logs, &solution)
}
