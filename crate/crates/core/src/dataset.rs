//! Supervised windows cut from an aligned matrix, and matrix export.
//!
//! A pair starting at column `s` takes columns `[s, s + input_len)` of the
//! input channels as the model input and columns
//! `[s + input_len, s + input_len + output_len)` of the target channel as the
//! prediction target. With the defaults that is 32 frames of two sensors in
//! and the next three 32-frame windows (96 frames) of the first sensor out.

use std::io::{self, Write};

use thiserror::Error;

use crate::npy::{self, NpyArray, NpyError};

/// Floor for the standard deviation used in z-scoring.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("matrix has {n_timesteps} timesteps; a pair needs {needed}")]
    Empty { n_timesteps: usize, needed: usize },
    #[error("channel {index} out of range for a matrix with {rows} rows")]
    Index { index: usize, rows: usize },
    #[error("invalid window spec: {0}")]
    Spec(String),
    #[error("matrix is not rectangular")]
    Ragged,
    #[error(transparent)]
    Npy(#[from] NpyError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowSpec {
    pub input_len: usize,
    pub output_len: usize,
    pub hop: usize,
    /// Matrix rows fed to the model, in order.
    pub input_channels: Vec<usize>,
    pub target_channel: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            input_len: 32,
            output_len: 96,
            hop: 32,
            input_channels: vec![0, 1],
            target_channel: 0,
        }
    }
}

impl WindowSpec {
    /// Number of pairs a matrix of `n_timesteps` columns yields.
    pub fn pair_count(&self, n_timesteps: usize) -> usize {
        let span = self.input_len + self.output_len;
        if n_timesteps < span || self.hop == 0 {
            0
        } else {
            (n_timesteps - span) / self.hop + 1
        }
    }
}

/// Mean and (floored) standard deviation of one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

impl ChannelStats {
    pub const IDENTITY: ChannelStats = ChannelStats { mean: 0.0, std: 1.0 };

    pub fn of(values: &[f32]) -> Self {
        if values.is_empty() {
            return Self::IDENTITY;
        }
        let n = values.len() as f64;
        let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt().max(STD_FLOOR),
        }
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Normalized input/target pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub n_pairs: usize,
    pub input_len: usize,
    pub output_len: usize,
    pub n_input_channels: usize,
    /// `n_pairs × input_len × n_input_channels`, C-order.
    pub inputs: Vec<f32>,
    /// `n_pairs × output_len`, C-order.
    pub targets: Vec<f32>,
    pub input_stats: Vec<ChannelStats>,
    pub target_stats: ChannelStats,
    /// Start column of each pair; empty for a dataset loaded from NPY.
    pub starts: Vec<usize>,
}

impl WindowedDataset {
    /// Input window of pair `i`, timestep-major (`input_len × n_input_channels`).
    pub fn input(&self, i: usize) -> &[f32] {
        let w = self.input_len * self.n_input_channels;
        &self.inputs[i * w..(i + 1) * w]
    }

    pub fn target(&self, i: usize) -> &[f32] {
        &self.targets[i * self.output_len..(i + 1) * self.output_len]
    }

    /// Pairs `range` as a new dataset sharing the same statistics.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        let w = self.input_len * self.n_input_channels;
        Self {
            n_pairs: range.len(),
            inputs: self.inputs[range.start * w..range.end * w].to_vec(),
            targets: self.targets[range.start * self.output_len..range.end * self.output_len].to_vec(),
            starts: self.starts.get(range).map(<[usize]>::to_vec).unwrap_or_default(),
            ..self.clone()
        }
    }

    pub fn inputs_npy(&self) -> NpyArray<f32> {
        NpyArray {
            shape: vec![self.n_pairs, self.input_len, self.n_input_channels],
            data: self.inputs.clone(),
        }
    }

    pub fn targets_npy(&self) -> NpyArray<f32> {
        NpyArray {
            shape: vec![self.n_pairs, self.output_len],
            data: self.targets.clone(),
        }
    }

    /// `(n_input_channels + 1) × 2` table of `(mean, std)`; the last row is
    /// the target channel.
    pub fn stats_npy(&self) -> NpyArray<f64> {
        let data = self
            .input_stats
            .iter()
            .chain(std::iter::once(&self.target_stats))
            .flat_map(|s| [s.mean, s.std])
            .collect();
        NpyArray {
            shape: vec![self.n_input_channels + 1, 2],
            data,
        }
    }

    /// Rebuilds a dataset from the three exported arrays.
    pub fn from_npy(
        inputs: NpyArray<f32>,
        targets: NpyArray<f32>,
        stats: NpyArray<f64>,
    ) -> Result<Self, DatasetError> {
        let [n_pairs, input_len, n_input_channels] = inputs.shape[..] else {
            return Err(DatasetError::Spec(format!("inputs have shape {:?}", inputs.shape)));
        };
        let [t_pairs, output_len] = targets.shape[..] else {
            return Err(DatasetError::Spec(format!("targets have shape {:?}", targets.shape)));
        };
        if t_pairs != n_pairs {
            return Err(DatasetError::Spec(format!(
                "{n_pairs} input windows but {t_pairs} target windows"
            )));
        }
        if stats.shape != [n_input_channels + 1, 2] {
            return Err(DatasetError::Spec(format!("stats have shape {:?}", stats.shape)));
        }
        let mut all: Vec<ChannelStats> = stats
            .data
            .chunks(2)
            .map(|c| ChannelStats { mean: c[0], std: c[1] })
            .collect();
        let target_stats = all.pop().unwrap();
        Ok(Self {
            n_pairs,
            input_len,
            output_len,
            n_input_channels,
            inputs: inputs.data,
            targets: targets.data,
            input_stats: all,
            target_stats,
            starts: Vec::new(),
        })
    }
}

/// Cuts `matrix` (one row per channel) into normalized windows.
pub fn make_windows(matrix: &[Vec<f32>], spec: &WindowSpec) -> Result<WindowedDataset, DatasetError> {
    if spec.input_len == 0 || spec.output_len == 0 || spec.hop == 0 {
        return Err(DatasetError::Spec(
            "input_len, output_len and hop must all be at least 1".into(),
        ));
    }
    if spec.input_channels.is_empty() {
        return Err(DatasetError::Spec("no input channels".into()));
    }
    let rows = matrix.len();
    for &index in spec.input_channels.iter().chain(std::iter::once(&spec.target_channel)) {
        if index >= rows {
            return Err(DatasetError::Index { index, rows });
        }
    }
    let n_timesteps = matrix[0].len();
    if matrix.iter().any(|r| r.len() != n_timesteps) {
        return Err(DatasetError::Ragged);
    }
    let n_pairs = spec.pair_count(n_timesteps);
    if n_pairs == 0 {
        return Err(DatasetError::Empty {
            n_timesteps,
            needed: spec.input_len + spec.output_len,
        });
    }

    let input_stats: Vec<ChannelStats> = spec
        .input_channels
        .iter()
        .map(|&c| ChannelStats::of(&matrix[c]))
        .collect();
    let target_stats = ChannelStats::of(&matrix[spec.target_channel]);
    let n_ch = spec.input_channels.len();

    let starts: Vec<usize> = (0..n_pairs).map(|i| i * spec.hop).collect();
    let mut inputs = Vec::with_capacity(n_pairs * spec.input_len * n_ch);
    let mut targets = Vec::with_capacity(n_pairs * spec.output_len);
    for &s in &starts {
        for t in s..s + spec.input_len {
            for (stats, &c) in input_stats.iter().zip(&spec.input_channels) {
                inputs.push(stats.normalize(matrix[c][t] as f64) as f32);
            }
        }
        let first = s + spec.input_len;
        targets.extend(
            matrix[spec.target_channel][first..first + spec.output_len]
                .iter()
                .map(|&v| target_stats.normalize(v as f64) as f32),
        );
    }

    Ok(WindowedDataset {
        n_pairs,
        input_len: spec.input_len,
        output_len: spec.output_len,
        n_input_channels: n_ch,
        inputs,
        targets,
        input_stats,
        target_stats,
        starts,
    })
}

/// Writes a row-per-channel matrix as NPY, `<f4` or (with `wide`) `<f8`.
pub fn export_npy<W: Write>(matrix: &[Vec<f32>], wide: bool, sink: W) -> Result<u64, DatasetError> {
    let array = NpyArray::from_rows(matrix)?;
    let written = if wide {
        let wide = NpyArray {
            shape: array.shape,
            data: array.data.into_iter().map(f64::from).collect(),
        };
        npy::write_npy(&wide, sink)?
    } else {
        npy::write_npy(&array, sink)?
    };
    Ok(written)
}

/// Writes one comma-separated line per row with shortest round-trip decimals.
pub fn export_csv<W: Write>(matrix: &[Vec<f32>], mut sink: W) -> Result<u64, DatasetError> {
    let mut line = String::new();
    let mut written = 0u64;
    for row in matrix {
        line.clear();
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&v.to_string());
        }
        line.push('\n');
        sink.write_all(line.as_bytes())?;
        written += line.len() as u64;
    }
    sink.flush()?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_matrix(rows: usize, cols: usize) -> Vec<Vec<f32>> {
        (0..rows)
            .map(|r| (0..cols).map(|c| (r * 1000 + c) as f32).collect())
            .collect()
    }

    #[test]
    fn default_geometry() {
        let spec = WindowSpec::default();
        let ds = make_windows(&ramp_matrix(2, 160), &spec).unwrap();
        assert_eq!(ds.n_pairs, 2);
        assert_eq!(ds.starts, vec![0, 32]);
        assert_eq!(ds.input(0).len(), 64);
        assert_eq!(ds.target(1).len(), 96);
    }

    #[test]
    fn exact_fit_gives_one_pair() {
        let spec = WindowSpec {
            hop: 1,
            ..WindowSpec::default()
        };
        let ds = make_windows(&ramp_matrix(2, 128), &spec).unwrap();
        assert_eq!(ds.starts, vec![0]);
    }

    #[test]
    fn windows_pick_the_right_columns() {
        let m = ramp_matrix(3, 20);
        let spec = WindowSpec {
            input_len: 3,
            output_len: 2,
            hop: 4,
            input_channels: vec![2, 0],
            target_channel: 1,
        };
        let ds = make_windows(&m, &spec).unwrap();
        let (s2, s0, s1) = (ds.input_stats[0], ds.input_stats[1], ds.target_stats);
        let i1 = ds.input(1);
        // pair 1 starts at column 4; timestep-major, channel 2 then 0
        assert_eq!(i1[0] as f64, s2.normalize(2004.0) as f32 as f64);
        assert_eq!(i1[1] as f64, s0.normalize(4.0) as f32 as f64);
        assert_eq!(i1[5] as f64, s0.normalize(6.0) as f32 as f64);
        assert_eq!(ds.target(1)[0], s1.normalize(1007.0) as f32);
        assert_eq!(ds.target(1)[1], s1.normalize(1008.0) as f32);
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let m = vec![vec![3.5f32; 200], (0..200).map(|i| i as f32).collect()];
        let ds = make_windows(&m, &WindowSpec::default()).unwrap();
        assert_eq!(ds.input_stats[0].std, STD_FLOOR);
        assert!(ds.targets.iter().all(|&v| v == 0.0));
        assert!(ds.inputs.iter().step_by(2).all(|&v| v == 0.0));
    }

    #[test]
    fn errors() {
        let spec = WindowSpec::default();
        assert!(matches!(
            make_windows(&ramp_matrix(2, 127), &spec),
            Err(DatasetError::Empty { n_timesteps: 127, needed: 128 })
        ));
        assert!(matches!(
            make_windows(&ramp_matrix(1, 200), &spec),
            Err(DatasetError::Index { index: 1, rows: 1 })
        ));
        let zero_hop = WindowSpec { hop: 0, ..spec };
        assert!(matches!(make_windows(&ramp_matrix(2, 200), &zero_hop), Err(DatasetError::Spec(_))));
    }

    #[test]
    fn csv_rendering() {
        let mut out = Vec::new();
        export_csv(&[vec![0.5]], &mut out).unwrap();
        assert_eq!(out, b"0.5\n");
        out.clear();
        export_csv(&[vec![1.0, 0.0], vec![0.0, 1.0]], &mut out).unwrap();
        assert_eq!(out, b"1,0\n0,1\n");
        out.clear();
        export_csv(&[vec![0.1f32, 1.0e-30, -3.4028235e38]], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let back: Vec<f32> = text.trim().split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(back, vec![0.1f32, 1.0e-30, -3.4028235e38]);
    }

    #[test]
    fn npy_export_round_trips() {
        let m = ramp_matrix(2, 3);
        let mut out = Vec::new();
        export_npy(&m, false, &mut out).unwrap();
        assert_eq!(npy::parse_npy::<f32>(&out).unwrap().to_rows().unwrap(), m);
        out.clear();
        export_npy(&m, true, &mut out).unwrap();
        let wide = npy::parse_npy::<f64>(&out).unwrap();
        assert_eq!(wide.shape, vec![2, 3]);
        assert_eq!(wide.data[4], 1001.0);
    }

    #[test]
    fn dataset_npy_round_trip() {
        let ds = make_windows(&ramp_matrix(2, 300), &WindowSpec::default()).unwrap();
        let back = WindowedDataset::from_npy(ds.inputs_npy(), ds.targets_npy(), ds.stats_npy()).unwrap();
        assert_eq!(back.inputs, ds.inputs);
        assert_eq!(back.targets, ds.targets);
        assert_eq!(back.input_stats, ds.input_stats);
        assert_eq!(back.target_stats, ds.target_stats);
    }
}
