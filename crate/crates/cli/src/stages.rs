//! The pipeline stages, each reading and writing files.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use serde_json::{json, Map, Value};

use sensorpipe::dataset::{export_csv, export_npy, make_windows, WindowedDataset};
use sensorpipe::logfmt::{self, read_log, write_log, SensorLog};
use sensorpipe::model::train::evaluate;
use sensorpipe::model::{self, load_weights, save_weights, ModelBundle, ModelConfig};
use sensorpipe::npy::{parse_npy, write_npy, NpyArray};
use sensorpipe::rtengine::{offline_run, setup, EngineConfig, EngineStats, LstmPredictor};
use sensorpipe::schedsim::{render_gantt, simulate, to_csv, EventKind};
use sensorpipe::syncer::synchronize;
use sensorpipe::synthgen::generate_session;

use crate::settings::Settings;

pub const GROUND_TRUTH: &str = "ground_truth.npy";
pub const INPUTS: &str = "inputs.npy";
pub const TARGETS: &str = "targets.npy";
pub const STATS: &str = "stats.npy";

/// What a stage did, for the manifest and the terminal.
#[derive(Debug, Default)]
pub struct Report {
    pub params: Value,
    pub outputs: Vec<PathBuf>,
    pub metrics: Map<String, Value>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let mut w = create(path)?;
    f(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    Ok(())
}

fn write_npy_file<T: sensorpipe::npy::Element>(path: &Path, array: &NpyArray<T>) -> Result<()> {
    write_with(path, |w| Ok(write_npy(array, w).map(drop)?))
}

fn read_npy_file<T: sensorpipe::npy::Element>(path: &Path) -> Result<NpyArray<T>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_npy(&bytes).with_context(|| format!("parsing {}", path.display()))
}

pub fn log_file_name(device: usize) -> String {
    format!("device{device}.{}", logfmt::EXTENSION)
}

/// Synthesizes one log per device plus the ground-truth pulse offsets.
pub fn generate(settings: &Settings, out_dir: &Path) -> Result<Report> {
    let config = settings.session_config()?;
    let (logs, truth) = generate_session(&config)?;
    let mut outputs = Vec::new();
    for (d, log) in logs.iter().enumerate() {
        let path = out_dir.join(log_file_name(d));
        write_with(&path, |w| Ok(write_log(log, w).map(drop)?))?;
        outputs.push(path);
    }
    let path = out_dir.join(GROUND_TRUTH);
    write_npy_file(&path, &truth.to_npy())?;
    outputs.push(path);

    let mut params = serde_json::to_value(settings.session()?)?;
    params["seed"] = json!(config.seed);
    Ok(Report {
        params,
        outputs,
        metrics: Map::from_iter([("pulses".into(), json!(truth.n_pulses()))]),
    })
}

pub fn load_log(path: &Path) -> Result<SensorLog> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_log(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

/// Aligns logs into one channels × timesteps matrix.
pub fn sync(logs: &[PathBuf], out: &Path, csv: Option<&Path>) -> Result<Report> {
    ensure!(!logs.is_empty(), "no logs given");
    let logs = logs.iter().map(|p| load_log(p)).collect::<Result<Vec<_>>>()?;
    let matrix = synchronize(&logs)?;
    write_with(out, |w| Ok(export_npy(&matrix.data, false, w).map(drop)?))?;
    let mut outputs = vec![out.to_path_buf()];
    if let Some(csv) = csv {
        write_with(csv, |w| Ok(export_csv(&matrix.data, w).map(drop)?))?;
        outputs.push(csv.to_path_buf());
    }
    let gap_fills: usize = matrix.diagnostics.iter().map(|d| d.gap_fills).sum();
    let overwritten: usize = matrix.diagnostics.iter().map(|d| d.overwritten).sum();
    Ok(Report {
        params: json!({ "logs": logs.len() }),
        outputs,
        metrics: Map::from_iter([
            ("rows".into(), json!(matrix.n_rows())),
            ("timesteps".into(), json!(matrix.n_timesteps())),
            ("row_labels".into(), json!(matrix.row_labels)),
            ("start_frame".into(), json!(matrix.start_frame)),
            ("gap_fills".into(), json!(gap_fills)),
            ("overwritten".into(), json!(overwritten)),
        ]),
    })
}

fn load_matrix(path: &Path) -> Result<Vec<Vec<f32>>> {
    let a: NpyArray<f32> = read_npy_file(path)?;
    match a.shape.len() {
        1 => Ok(vec![a.data]),
        2 => Ok(a.to_rows()?),
        _ => bail!("{} has shape {:?}; expected channels × timesteps", path.display(), a.shape),
    }
}

/// Cuts an aligned matrix into normalized input/target windows.
pub fn window(settings: &Settings, aligned: &Path, out_dir: &Path) -> Result<Report> {
    let matrix = load_matrix(aligned)?;
    let ds = make_windows(&matrix, &settings.window_spec()?)?;
    let outputs = vec![out_dir.join(INPUTS), out_dir.join(TARGETS), out_dir.join(STATS)];
    write_npy_file(&outputs[0], &ds.inputs_npy())?;
    write_npy_file(&outputs[1], &ds.targets_npy())?;
    write_npy_file(&outputs[2], &ds.stats_npy())?;
    Ok(Report {
        params: serde_json::to_value(settings.window()?)?,
        outputs,
        metrics: Map::from_iter([("pairs".into(), json!(ds.n_pairs))]),
    })
}

pub fn load_dataset(dir: &Path) -> Result<WindowedDataset> {
    Ok(WindowedDataset::from_npy(
        read_npy_file(&dir.join(INPUTS))?,
        read_npy_file(&dir.join(TARGETS))?,
        read_npy_file(&dir.join(STATS))?,
    )?)
}

/// Trains on the leading windows, scores the held-out tail, and saves the model.
pub fn train(settings: &Settings, dataset_dir: &Path, out: &Path, losses: Option<&Path>) -> Result<Report> {
    let ds = load_dataset(dataset_dir)?;
    let args = settings.train()?;
    let hyper = settings.train_hyper()?;
    let held = (ds.n_pairs as f64 * args.holdout.unwrap()).round() as usize;
    let split = ds.n_pairs - held;
    ensure!(split > 0, "holdout leaves no training windows out of {}", ds.n_pairs);
    let config = ModelConfig {
        input_dim: ds.n_input_channels,
        hidden_dim: args.hidden_dim.unwrap(),
        output_dim: ds.output_len,
        seq_len: ds.input_len,
    };
    let (train_set, test_set) = (ds.slice(0..split), ds.slice(split..ds.n_pairs));
    let outcome = model::train(&train_set, &config, &hyper)?;

    let bundle = ModelBundle::new(config, outcome.params.to_f32(), ds.input_stats.clone(), ds.target_stats)?;
    write_with(out, |w| Ok(save_weights(&bundle, w).map(drop)?))?;
    let mut outputs = vec![out.to_path_buf()];
    if let Some(path) = losses {
        write_with(path, |w| {
            writeln!(w, "epoch,loss")?;
            for (e, l) in outcome.losses.iter().enumerate() {
                writeln!(w, "{},{l}", e + 1)?;
            }
            Ok(())
        })?;
        outputs.push(path.to_path_buf());
    }

    let mut metrics = Map::new();
    metrics.insert("train_pairs".into(), json!(split));
    metrics.insert("test_pairs".into(), json!(held));
    metrics.insert("final_train_loss".into(), json!(outcome.losses.last().copied()));
    if held > 0 {
        let mse = evaluate(&outcome.params, &config, &test_set)?;
        // Targets are z-scored, so predicting zero predicts the mean.
        let baseline =
            test_set.targets.iter().map(|&t| (t as f64).powi(2)).sum::<f64>() / test_set.targets.len() as f64;
        metrics.insert("test_mse".into(), json!(mse));
        metrics.insert("baseline_mse".into(), json!(baseline));
    }
    let mut params = serde_json::to_value(args)?;
    params["seed"] = json!(hyper.seed);
    Ok(Report {
        params,
        outputs,
        metrics,
    })
}

/// Rows of a `.bslog` or channels × timesteps `.npy` file, plus its sample rate
/// when the file records one.
pub fn load_signal(path: &Path) -> Result<(Vec<Vec<f32>>, Option<f64>)> {
    if path.extension().is_some_and(|e| e == logfmt::EXTENSION) {
        let log = load_log(path)?;
        let rate = log.header().sample_rate_hz;
        Ok((log.into_parts().1, Some(rate)))
    } else {
        Ok((load_matrix(path)?, None))
    }
}

/// How `infer` drives the engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InferMode {
    /// Single-threaded replay; predictions are deterministic.
    Offline,
    /// Audio loop on this thread, worker on another, paced at `speed` times
    /// real time (0 for as fast as possible).
    Live { speed: f64 },
}

/// Replays a signal through the real-time engine.
///
/// Offline mode writes one row per published prediction. Live mode writes the
/// audio output stream as a single row, since which windows get published
/// depends on thread timing.
pub fn infer(
    settings: &Settings,
    signal: &Path,
    model_path: &Path,
    out: &Path,
    stats_path: Option<&Path>,
    mode: InferMode,
) -> Result<Report> {
    let bundle = load_weights(BufReader::new(
        File::open(model_path).with_context(|| format!("opening {}", model_path.display()))?,
    ))
    .with_context(|| format!("reading {}", model_path.display()))?;
    let (rows, rate) = load_signal(signal)?;
    let channels = settings.window()?.input_channels.unwrap();
    let selected = channels
        .iter()
        .map(|&c| {
            rows.get(c)
                .cloned()
                .with_context(|| format!("{} has {} rows; channel {c} requested", signal.display(), rows.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let sample_rate = match rate {
        Some(r) => r,
        None => settings.session()?.sample_rate_hz.unwrap(),
    };
    let config = settings.engine_config(sample_rate)?;
    let predictor = LstmPredictor::new(Arc::new(bundle));

    let mut metrics = Map::new();
    let stats = match mode {
        InferMode::Offline => {
            let run = offline_run(config, predictor, &selected)?;
            let width = run.predictions.first().map_or(0, Vec::len);
            let data: Vec<f32> = run.predictions.concat();
            let array = NpyArray::new(vec![run.predictions.len(), width], data)?;
            write_npy_file(out, &array)?;
            metrics.insert("predictions".into(), json!(run.predictions.len()));
            metrics.insert("first_stamp".into(), json!(run.stamps.first()));
            run.stats
        }
        InferMode::Live { speed } => {
            ensure!(speed >= 0.0 && speed.is_finite(), "speed must be a non-negative number");
            let (output, stats) = run_live(config, predictor, &selected, speed)?;
            let array = NpyArray::new(vec![1, output.len()], output)?;
            write_npy_file(out, &array)?;
            stats
        }
    };
    let mut outputs = vec![out.to_path_buf()];
    if let Some(path) = stats_path {
        let live = matches!(mode, InferMode::Live { .. });
        write_with(path, |w| Ok(w.write_all(stats_text(&stats, &metrics, live).as_bytes())?))?;
        outputs.push(path.to_path_buf());
    }
    for (k, v) in [
        ("blocks_processed", stats.blocks_processed),
        ("inferences_completed", stats.inferences_completed),
        ("inferences_missed", stats.inferences_missed),
        ("buffer_overflows", stats.buffer_overflows),
    ] {
        metrics.insert(k.into(), json!(v));
    }
    let mut params = serde_json::to_value(settings.engine()?)?;
    params["input_channels"] = json!(channels);
    params["sample_rate_hz"] = json!(sample_rate);
    Ok(Report {
        params,
        outputs,
        metrics,
    })
}

fn stats_text(stats: &EngineStats, metrics: &Map<String, Value>, live: bool) -> String {
    let mut s = format!(
        "blocks_processed: {}\ninferences_completed: {}\ninferences_missed: {}\nbuffer_overflows: {}\n",
        stats.blocks_processed, stats.inferences_completed, stats.inferences_missed, stats.buffer_overflows
    );
    for (k, v) in metrics {
        s += &format!("{k}: {v}\n");
    }
    if live {
        s += &format!(
            "underruns: {}\nmax_inference_us: {}\n",
            stats.underruns,
            stats.max_inference_duration.as_micros()
        );
    }
    s
}

fn run_live(
    mut config: EngineConfig,
    predictor: LstmPredictor,
    signal: &[Vec<f32>],
    speed: f64,
) -> Result<(Vec<f32>, EngineStats)> {
    config.measure_deadlines = speed > 0.0;
    let channels = signal.len();
    let n_frames = signal.first().map_or(0, Vec::len);
    let (mut audio, worker) = setup(config, predictor)?;
    let stop = audio.shutdown_handle();
    let handle = worker.spawn();

    let bs = config.block_size;
    let mut block = vec![0.0; bs * channels];
    let mut out = vec![0.0; bs];
    let mut played = Vec::with_capacity(n_frames);
    let period = (speed > 0.0).then(|| config.block_duration().div_f64(speed));
    let started = Instant::now();
    for (b, start) in (0..n_frames / bs).map(|b| (b, b * bs)) {
        for (i, frame) in block.chunks_exact_mut(channels).enumerate() {
            for (c, v) in frame.iter_mut().enumerate() {
                *v = signal[c][start + i];
            }
        }
        audio.render(&block, &mut out);
        played.extend_from_slice(&out);
        match period {
            Some(p) => {
                let due = started + p * (b as u32 + 1);
                thread::sleep(due.saturating_duration_since(Instant::now()));
            }
            None => thread::sleep(Duration::ZERO),
        }
    }
    stop.shutdown();
    handle.join().map_err(|_| anyhow::anyhow!("inference worker panicked"))?;
    Ok((played, audio.stats()))
}

/// Runs the scheduler simulation, printing the chart to stdout when `echo` is
/// set.
pub fn simulate_stage(settings: &Settings, gantt: Option<&Path>, csv: Option<&Path>, echo: bool) -> Result<Report> {
    let config = settings.sim_config()?;
    let trace = simulate(&config)?;
    let chart = render_gantt(&trace);
    let mut outputs = Vec::new();
    if let Some(path) = gantt {
        write_with(path, |w| Ok(w.write_all(chart.as_bytes())?))?;
        outputs.push(path.to_path_buf());
    }
    if let Some(path) = csv {
        write_with(path, |w| Ok(w.write_all(to_csv(&trace).as_bytes())?))?;
        outputs.push(path.to_path_buf());
    }
    if echo {
        print!("{chart}");
    }
    Ok(Report {
        params: serde_json::to_value(settings.schedule()?)?,
        outputs,
        metrics: Map::from_iter([
            ("underruns".into(), json!(trace.count(EventKind::Underrun))),
            ("missed_triggers".into(), json!(trace.count(EventKind::MissedTrigger))),
            ("max_latency_ticks".into(), json!(trace.max_latency())),
        ]),
    })
}
