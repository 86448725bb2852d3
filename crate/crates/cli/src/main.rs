//! `sensorpipe`: generate, synchronize, window, train, infer and simulate.
//!
//! Exit status is 0 on success, 1 for usage errors and 2 when the input data
//! or parameters are rejected.

mod manifest;
mod pipeline;
mod settings;
mod stages;

use std::fmt;
use std::ops::RangeInclusive;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use sensorpipe::schedsim::{sweep, sweep_csv, SweepRanges};

use settings::{EngineArgs, ScheduleArgs, SessionArgs, Settings, TrainArgs, WindowArgs};
use stages::{InferMode, Report};

/// Bad invocation rather than bad data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "sensorpipe", version, about = "Multi-device sensor sessions from recording to real-time inference")]
struct Cli {
    /// Seed for session generation and weight initialization.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print per-stage metrics to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    /// Key-value config file; flags override its entries.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize one `.bslog` per device and the ground-truth offsets.
    Generate {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        session: SessionArgs,
    },
    /// Align logs into a channels × timesteps NPY matrix.
    Sync {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the matrix as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Cut an aligned matrix into inputs.npy, targets.npy and stats.npy.
    Window {
        aligned: PathBuf,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        #[command(flatten)]
        window: WindowArgs,
    },
    /// Train on a windowed dataset and save the model.
    Train {
        /// Directory written by `window`.
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch training loss as CSV.
        #[arg(long)]
        losses: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Replay a signal through the real-time engine.
    Infer {
        /// `.bslog` or channels × timesteps `.npy`.
        signal: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Plain-text engine counters.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Signal rows fed to the model, comma separated.
        #[arg(long, value_delimiter = ',')]
        input_channels: Option<Vec<usize>>,
        /// Run the audio loop and worker on separate threads; writes the audio
        /// output stream instead of the prediction windows.
        #[arg(long)]
        live: bool,
        /// Pacing for `--live` as a multiple of real time; 0 runs unpaced.
        #[arg(long, default_value_t = 1.0, requires = "live")]
        speed: f64,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Simulate the audio and inference threads tick by tick.
    Simulate {
        #[command(flatten)]
        schedule: ScheduleArgs,
        /// Write the chart here instead of stdout.
        #[arg(long)]
        gantt: Option<PathBuf>,
        /// Per-tick occupancy and events as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Sweep callback cost over `LO..=HI`.
        #[arg(long, value_parser = parse_range, value_name = "RANGE")]
        sweep_callback_cost: Option<RangeInclusive<usize>>,
        #[arg(long, value_parser = parse_range, value_name = "RANGE")]
        sweep_inference_cost: Option<RangeInclusive<usize>>,
        #[arg(long, value_parser = parse_range, value_name = "RANGE")]
        sweep_ticks_per_block: Option<RangeInclusive<usize>>,
        #[arg(long, value_parser = parse_range, value_name = "RANGE")]
        sweep_trigger_every: Option<RangeInclusive<usize>>,
        /// Write the sweep table here instead of stdout.
        #[arg(long)]
        sweep_csv: Option<PathBuf>,
    },
    /// Run every stage into one directory and write manifest.json.
    Pipeline {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        session: SessionArgs,
        #[command(flatten)]
        window: WindowArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        engine: EngineArgs,
        #[command(flatten)]
        schedule: ScheduleArgs,
    },
}

/// `N` or `LO..=HI`.
fn parse_range(s: &str) -> Result<RangeInclusive<usize>, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    let range = match s.split_once("..=") {
        Some((lo, hi)) => num(lo)?..=num(hi)?,
        None => num(s)?..=num(s)?,
    };
    if range.is_empty() {
        return Err(format!("empty range `{s}`"));
    }
    Ok(range)
}

fn report(verbose: bool, name: &str, r: &Report) {
    if verbose {
        for (k, v) in &r.metrics {
            eprintln!("{name}.{k}: {v}");
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut settings = Settings::load(cli.config.as_deref())?;
    settings.apply_seed(cli.seed);
    let verbose = cli.verbose;
    match cli.command {
        Command::Generate { out, session } => {
            settings.apply(&session)?;
            report(verbose, "generate", &stages::generate(&settings, &out)?);
        }
        Command::Sync { logs, out, csv } => {
            report(verbose, "sync", &stages::sync(&logs, &out, csv.as_deref())?);
        }
        Command::Window { aligned, out_dir, window } => {
            settings.apply(&window)?;
            report(verbose, "window", &stages::window(&settings, &aligned, &out_dir)?);
        }
        Command::Train {
            dataset,
            out,
            losses,
            train,
        } => {
            settings.apply(&train)?;
            let r = stages::train(&settings, &dataset, &out, losses.as_deref())?;
            if let (Some(mse), Some(base)) = (r.metrics.get("test_mse"), r.metrics.get("baseline_mse")) {
                println!("test_mse {mse} baseline_mse {base}");
            }
            report(verbose, "train", &r);
        }
        Command::Infer {
            signal,
            model,
            out,
            stats,
            input_channels,
            live,
            speed,
            engine,
        } => {
            settings.apply(&engine)?;
            settings.apply(&WindowArgs {
                input_channels,
                ..WindowArgs::default()
            })?;
            let mode = if live { InferMode::Live { speed } } else { InferMode::Offline };
            report(verbose, "infer", &stages::infer(&settings, &signal, &model, &out, stats.as_deref(), mode)?);
        }
        Command::Simulate {
            schedule,
            gantt,
            csv,
            sweep_callback_cost,
            sweep_inference_cost,
            sweep_ticks_per_block,
            sweep_trigger_every,
            sweep_csv: sweep_out,
        } => {
            settings.apply(&schedule)?;
            let sweeping = sweep_callback_cost.is_some()
                || sweep_inference_cost.is_some()
                || sweep_ticks_per_block.is_some()
                || sweep_trigger_every.is_some();
            let echo = !sweeping && gantt.is_none() && csv.is_none();
            report(verbose, "simulate", &stages::simulate_stage(&settings, gantt.as_deref(), csv.as_deref(), echo)?);
            if sweeping {
                let base = settings.sim_config()?;
                let at = SweepRanges::at(&base);
                let ranges = SweepRanges {
                    callback_cost_ticks: sweep_callback_cost.unwrap_or(at.callback_cost_ticks),
                    inference_cost_ticks: sweep_inference_cost.unwrap_or(at.inference_cost_ticks),
                    ticks_per_block: sweep_ticks_per_block.unwrap_or(at.ticks_per_block),
                    trigger_every_blocks: sweep_trigger_every.unwrap_or(at.trigger_every_blocks),
                };
                let table = sweep_csv(&sweep(&base, &ranges)?);
                match sweep_out {
                    Some(path) => std::fs::write(&path, table)?,
                    None => print!("{table}"),
                }
            }
        }
        Command::Pipeline {
            out,
            session,
            window,
            train,
            engine,
            schedule,
        } => {
            settings.apply(&session)?;
            settings.apply(&window)?;
            settings.apply(&train)?;
            settings.apply(&engine)?;
            settings.apply(&schedule)?;
            let m = pipeline::run(&settings, &out, verbose)?;
            println!("{} stages, manifest at {}", m.stages.len(), out.join(manifest::FILE_NAME).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.chain().any(|c| c.is::<UsageError>());
            ExitCode::from(if usage { 1 } else { 2 })
        }
    }
}
