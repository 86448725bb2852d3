//! The `.bsnn` weight file.
//!
//! Little-endian throughout: magic `BSNN`, version byte `1`, then
//! `input_dim`, `hidden_dim`, `output_dim`, `seq_len` as u32. Normalization
//! statistics follow as f32 `(mean, std)` pairs, one per input channel and
//! then one for the target channel. Last come `W_ih`, `W_hh`, `b`, `W_out`,
//! `b_out` as row-major f32.

use std::io::{Read, Write};

use super::{LstmParams, ModelConfig, ModelError};
use crate::bytes::{Cursor, Short};
use crate::dataset::ChannelStats;

pub const MAGIC: [u8; 4] = *b"BSNN";
pub const VERSION: u8 = 1;
pub const EXTENSION: &str = "bsnn";

const HEADER_LEN: usize = 4 + 1 + 16;

/// Everything inference needs: dimensions, weights and the normalization
/// that was applied to the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub params: LstmParams<f32>,
    pub input_stats: Vec<ChannelStats>,
    pub target_stats: ChannelStats,
}

fn stored(stats: ChannelStats) -> ChannelStats {
    ChannelStats {
        mean: stats.mean as f32 as f64,
        std: stats.std as f32 as f64,
    }
}

impl ModelBundle {
    /// Statistics are rounded to `f32`, the precision they are stored at.
    pub fn new(
        config: ModelConfig,
        params: LstmParams<f32>,
        input_stats: Vec<ChannelStats>,
        target_stats: ChannelStats,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        params.check_shape(&config)?;
        if input_stats.len() != config.input_dim {
            return Err(ModelError::Shape(format!(
                "{} input statistics for {} input channels",
                input_stats.len(),
                config.input_dim
            )));
        }
        Ok(Self {
            config,
            params,
            input_stats: input_stats.into_iter().map(stored).collect(),
            target_stats: stored(target_stats),
        })
    }

    pub fn encoded_len(&self) -> u64 {
        (HEADER_LEN + 8 * (self.config.input_dim + 1) + 4 * self.params.param_count()) as u64
    }
}

pub fn save_weights<W: Write>(bundle: &ModelBundle, mut sink: W) -> Result<u64, ModelError> {
    let cfg = &bundle.config;
    let mut buf = Vec::with_capacity(bundle.encoded_len() as usize);
    buf.extend_from_slice(&MAGIC);
    buf.push(VERSION);
    for dim in [cfg.input_dim, cfg.hidden_dim, cfg.output_dim, cfg.seq_len] {
        let dim = u32::try_from(dim).map_err(|_| ModelError::Format(format!("dimension {dim} exceeds u32")))?;
        buf.extend_from_slice(&dim.to_le_bytes());
    }
    for s in bundle.input_stats.iter().chain(std::iter::once(&bundle.target_stats)) {
        buf.extend_from_slice(&(s.mean as f32).to_le_bytes());
        buf.extend_from_slice(&(s.std as f32).to_le_bytes());
    }
    for tensor in bundle.params.tensors() {
        for v in tensor {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(buf.len() as u64)
}

pub fn load_weights<R: Read>(mut source: R) -> Result<ModelBundle, ModelError> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    parse_weights(&buf)
}

fn truncated(s: Short) -> ModelError {
    ModelError::Truncated {
        expected: (s.offset + s.needed) as u64,
        actual: (s.offset + s.available) as u64,
    }
}

pub fn parse_weights(bytes: &[u8]) -> Result<ModelBundle, ModelError> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.take(4).map_err(truncated)?;
    if magic != MAGIC {
        return Err(ModelError::Format(format!("bad magic {magic:02x?}")));
    }
    let version = cur.u8().map_err(truncated)?;
    if version != VERSION {
        return Err(ModelError::Format(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        *d = cur.u32().map_err(truncated)? as usize;
    }
    let config = ModelConfig {
        input_dim: dims[0],
        hidden_dim: dims[1],
        output_dim: dims[2],
        seq_len: dims[3],
    };
    config
        .validate()
        .map_err(|_| ModelError::Format(format!("dimensions must be positive: {config:?}")))?;

    let (i, h, o) = (dims[0] as u128, dims[1] as u128, dims[2] as u128);
    let values = 4 * h * (i + h + 1) + o * (h + 1) + 2 * (i + 1);
    let expected = u64::try_from(HEADER_LEN as u128 + 4 * values).unwrap_or(u64::MAX);
    let actual = bytes.len() as u64;
    if expected > actual {
        return Err(ModelError::Truncated { expected, actual });
    }
    if expected < actual {
        return Err(ModelError::Format(format!("{} trailing bytes", actual - expected)));
    }

    let mut stats = Vec::with_capacity(config.input_dim + 1);
    for _ in 0..=config.input_dim {
        let mean = cur.f32().map_err(truncated)?;
        let std = cur.f32().map_err(truncated)?;
        if !mean.is_finite() || !(std.is_finite() && std > 0.0) {
            return Err(ModelError::Format(format!("bad normalization ({mean}, {std})")));
        }
        stats.push(ChannelStats {
            mean: mean as f64,
            std: std as f64,
        });
    }
    let target_stats = stats.pop().unwrap();

    let mut params = LstmParams::<f32>::zeros(&config);
    for tensor in params.tensors_mut() {
        for v in tensor.iter_mut() {
            *v = cur.f32().map_err(truncated)?;
        }
    }
    if !params.is_finite() {
        return Err(ModelError::Format("non-finite weight".into()));
    }
    ModelBundle::new(config, params, stats, target_stats)
}
