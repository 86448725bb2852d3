//! Stage parameters from a flat `key = value` config file, overridden by flags.
//!
//! Every key has a flag of the same name (`pulse_period` ↔ `--pulse-period`).
//! Each stage reads only its own group of keys, so one file can drive the
//! whole pipeline.

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use sensorpipe::dataset::WindowSpec;
use sensorpipe::model::{ModelConfig, TrainHyper};
use sensorpipe::rtengine::EngineConfig;
use sensorpipe::schedsim::SimConfig;
use sensorpipe::synthgen::{SessionConfig, SignalSpec};

use crate::UsageError;

pub const DEFAULT_SEED: u64 = 7;

/// Session generator keys.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct SessionArgs {
    /// Number of boards; board 0 transmits the sync pulse.
    #[arg(long)]
    pub devices: Option<usize>,
    #[arg(long)]
    pub channels_per_device: Option<usize>,
    /// Frames recorded by the TX board.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub sample_rate_hz: Option<f64>,
    /// Frames between sync pulses.
    #[arg(long)]
    pub pulse_period: Option<u64>,
    /// Frames each board recorded before the first pulse, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub offsets: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub drift_ppm: Option<Vec<f64>>,
    /// Maximum pulse observation jitter on RX boards, in frames.
    #[arg(long)]
    pub jitter: Option<u64>,
    /// Signal per channel, or per device-channel pair device-major:
    /// `damped_sine:FREQ:DECAY`, `impulse_train:RATE:AMP` or `white_noise:AMP`.
    /// A single spec is used for every channel.
    #[arg(long, value_delimiter = ',')]
    pub signals: Option<Vec<String>>,
}

/// Windowing keys.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct WindowArgs {
    #[arg(long)]
    pub input_len: Option<usize>,
    #[arg(long)]
    pub output_len: Option<usize>,
    #[arg(long)]
    pub hop: Option<usize>,
    /// Matrix rows fed to the model, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub input_channels: Option<Vec<usize>>,
    #[arg(long)]
    pub target_channel: Option<usize>,
}

/// Training keys.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Fraction of windows, taken from the end, kept out of training.
    #[arg(long)]
    pub holdout: Option<f64>,
}

/// Inference engine keys.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct EngineArgs {
    /// Frames per audio callback.
    #[arg(long)]
    pub block_size: Option<usize>,
    /// Blocks between inference triggers.
    #[arg(long)]
    pub buffer_blocks: Option<usize>,
}

/// Scheduler simulation keys.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub ticks_per_block: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub callback_cost: Option<usize>,
    #[arg(long)]
    pub inference_cost: Option<usize>,
    #[arg(long)]
    pub trigger_every: Option<usize>,
    /// Run inference inside the audio callback instead of a worker thread.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub on_audio_thread: Option<bool>,
}

/// Keys of every group plus `seed`.
fn known_keys() -> Vec<String> {
    #[derive(Parser)]
    struct All {
        #[command(flatten)]
        a: SessionArgs,
        #[command(flatten)]
        b: WindowArgs,
        #[command(flatten)]
        c: TrainArgs,
        #[command(flatten)]
        d: EngineArgs,
        #[command(flatten)]
        e: ScheduleArgs,
    }
    let mut keys: Vec<String> = All::command()
        .get_arguments()
        .filter_map(|a| a.get_long())
        .map(|l| l.replace('-', "_"))
        .collect();
    keys.push("seed".into());
    keys
}

/// Merged key-value settings: config file first, then flags.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    table: toml::Table,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let table: toml::Table = text.parse().with_context(|| format!("parsing config {}", path.display()))?;
        let known = known_keys();
        if let Some(bad) = table.keys().find(|k| !known.contains(k)) {
            return Err(UsageError(format!("unknown key `{bad}` in {}", path.display())).into());
        }
        Ok(Self { table })
    }

    /// Overrides file values with every flag that was given.
    pub fn apply<T: Serialize>(&mut self, flags: &T) -> Result<()> {
        let t = toml::Table::try_from(flags).context("encoding flags")?;
        self.table.extend(t);
        Ok(())
    }

    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.table.insert("seed".into(), toml::Value::Integer(s as i64));
        }
    }

    fn group<T: DeserializeOwned>(&self) -> Result<T> {
        Ok(self.table.clone().try_into()?)
    }

    pub fn seed(&self) -> Result<u64> {
        match self.table.get("seed") {
            None => Ok(DEFAULT_SEED),
            Some(v) => v
                .as_integer()
                .and_then(|i| u64::try_from(i).ok())
                .with_context(|| format!("seed must be a non-negative integer, got {v}")),
        }
    }

    /// Session keys with defaults filled in.
    pub fn session(&self) -> Result<SessionArgs> {
        let g: SessionArgs = self.group()?;
        let base = SessionConfig::pendulum();
        let devices = g.devices.unwrap_or(base.n_devices);
        let offsets = g.offsets.unwrap_or_else(|| {
            if devices == base.n_devices {
                base.start_offset_frames.clone()
            } else {
                vec![0; devices]
            }
        });
        let channels = g.channels_per_device.unwrap_or(base.channels_per_device);
        let signals = match g.signals {
            Some(list) if list.len() == 1 => vec![list[0].clone(); channels],
            Some(list) => list,
            None => base
                .signals
                .iter()
                .cycle()
                .take(devices * channels)
                .map(|s| format_signal(*s))
                .collect(),
        };
        Ok(SessionArgs {
            devices: Some(devices),
            channels_per_device: Some(channels),
            frames: Some(g.frames.unwrap_or(base.n_frames)),
            sample_rate_hz: Some(g.sample_rate_hz.unwrap_or(base.sample_rate_hz)),
            pulse_period: Some(g.pulse_period.unwrap_or(base.pulse_period_frames)),
            offsets: Some(offsets),
            drift_ppm: Some(g.drift_ppm.unwrap_or_else(|| vec![0.0; devices])),
            jitter: Some(g.jitter.unwrap_or(base.pulse_jitter_frames)),
            signals: Some(signals),
        })
    }

    pub fn session_config(&self) -> Result<SessionConfig> {
        let g = self.session()?;
        let signals = g
            .signals
            .unwrap()
            .iter()
            .map(|s| parse_signal(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(SessionConfig {
            n_devices: g.devices.unwrap(),
            channels_per_device: g.channels_per_device.unwrap(),
            n_frames: g.frames.unwrap(),
            sample_rate_hz: g.sample_rate_hz.unwrap(),
            pulse_period_frames: g.pulse_period.unwrap(),
            n_pulses: None,
            start_offset_frames: g.offsets.unwrap(),
            drift_ppm: g.drift_ppm.unwrap(),
            pulse_jitter_frames: g.jitter.unwrap(),
            signals,
            seed: self.seed()?,
        })
    }

    pub fn window(&self) -> Result<WindowArgs> {
        let g: WindowArgs = self.group()?;
        let d = WindowSpec::default();
        Ok(WindowArgs {
            input_len: Some(g.input_len.unwrap_or(d.input_len)),
            output_len: Some(g.output_len.unwrap_or(d.output_len)),
            hop: Some(g.hop.unwrap_or(d.hop)),
            input_channels: Some(g.input_channels.unwrap_or(d.input_channels)),
            target_channel: Some(g.target_channel.unwrap_or(d.target_channel)),
        })
    }

    pub fn window_spec(&self) -> Result<WindowSpec> {
        let g = self.window()?;
        Ok(WindowSpec {
            input_len: g.input_len.unwrap(),
            output_len: g.output_len.unwrap(),
            hop: g.hop.unwrap(),
            input_channels: g.input_channels.unwrap(),
            target_channel: g.target_channel.unwrap(),
        })
    }

    pub fn train(&self) -> Result<TrainArgs> {
        let g: TrainArgs = self.group()?;
        let h = TrainHyper::default();
        let holdout = g.holdout.unwrap_or(0.2);
        if !(0.0..1.0).contains(&holdout) {
            bail!("holdout must be in [0, 1), got {holdout}");
        }
        Ok(TrainArgs {
            hidden_dim: Some(g.hidden_dim.unwrap_or(ModelConfig::default().hidden_dim)),
            lr: Some(g.lr.unwrap_or(h.lr)),
            epochs: Some(g.epochs.unwrap_or(h.epochs)),
            batch_size: Some(g.batch_size.unwrap_or(h.batch_size)),
            holdout: Some(holdout),
        })
    }

    pub fn train_hyper(&self) -> Result<TrainHyper> {
        let g = self.train()?;
        Ok(TrainHyper {
            lr: g.lr.unwrap(),
            epochs: g.epochs.unwrap(),
            batch_size: g.batch_size.unwrap(),
            seed: self.seed()?,
        })
    }

    pub fn engine(&self) -> Result<EngineArgs> {
        let g: EngineArgs = self.group()?;
        let d = EngineConfig::default();
        Ok(EngineArgs {
            block_size: Some(g.block_size.unwrap_or(d.block_size)),
            buffer_blocks: Some(g.buffer_blocks.unwrap_or(d.buffer_blocks)),
        })
    }

    pub fn engine_config(&self, sample_rate_hz: f64) -> Result<EngineConfig> {
        let g = self.engine()?;
        Ok(EngineConfig {
            block_size: g.block_size.unwrap(),
            buffer_blocks: g.buffer_blocks.unwrap(),
            sample_rate_hz,
            measure_deadlines: false,
        })
    }

    pub fn schedule(&self) -> Result<ScheduleArgs> {
        let g: ScheduleArgs = self.group()?;
        let d = SimConfig::REFERENCE;
        Ok(ScheduleArgs {
            ticks_per_block: Some(g.ticks_per_block.unwrap_or(d.ticks_per_block)),
            blocks: Some(g.blocks.unwrap_or(d.n_blocks)),
            callback_cost: Some(g.callback_cost.unwrap_or(d.callback_cost_ticks)),
            inference_cost: Some(g.inference_cost.unwrap_or(d.inference_cost_ticks)),
            trigger_every: Some(g.trigger_every.unwrap_or(d.trigger_every_blocks)),
            on_audio_thread: Some(g.on_audio_thread.unwrap_or(d.inference_on_audio_thread)),
        })
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let g = self.schedule()?;
        Ok(SimConfig {
            ticks_per_block: g.ticks_per_block.unwrap(),
            n_blocks: g.blocks.unwrap(),
            callback_cost_ticks: g.callback_cost.unwrap(),
            inference_cost_ticks: g.inference_cost.unwrap(),
            trigger_every_blocks: g.trigger_every.unwrap(),
            inference_on_audio_thread: g.on_audio_thread.unwrap(),
        })
    }
}

pub fn parse_signal(text: &str) -> Result<SignalSpec> {
    let parts: Vec<&str> = text.split(':').collect();
    let num = |s: &str| -> Result<f64> { s.trim().parse().with_context(|| format!("bad number `{s}` in signal `{text}`")) };
    Ok(match parts[..] {
        ["damped_sine", f, d] => SignalSpec::DampedSine {
            freq_hz: num(f)?,
            decay_per_s: num(d)?,
        },
        ["impulse_train", r, a] => SignalSpec::ImpulseTrain {
            rate_hz: num(r)?,
            amplitude: num(a)?,
        },
        ["white_noise", a] => SignalSpec::WhiteNoise { amplitude: num(a)? },
        _ => bail!("unrecognized signal `{text}`"),
    })
}

pub fn format_signal(spec: SignalSpec) -> String {
    match spec {
        SignalSpec::DampedSine { freq_hz, decay_per_s } => format!("damped_sine:{freq_hz}:{decay_per_s}"),
        SignalSpec::ImpulseTrain { rate_hz, amplitude } => format!("impulse_train:{rate_hz}:{amplitude}"),
        SignalSpec::WhiteNoise { amplitude } => format!("white_noise:{amplitude}"),
    }
}
