//! All stages in order into one directory, recorded in a manifest.
//!
//! Layout under the output directory:
//!
//! ```text
//! logs/device{N}.bslog, logs/ground_truth.npy   generate
//! aligned.npy                                   sync
//! dataset/{inputs,targets,stats}.npy            window
//! model.bsnn, losses.csv                        train
//! predictions.npy, infer_stats.txt              infer
//! schedule.txt, schedule.csv                    simulate
//! manifest.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::manifest::{Artifact, PipelineManifest, Stage};
use crate::settings::Settings;
use crate::stages::{self, InferMode, Report};

pub const LOGS: &str = "logs";
pub const ALIGNED: &str = "aligned.npy";
pub const DATASET: &str = "dataset";
pub const MODEL: &str = "model.bsnn";
pub const LOSSES: &str = "losses.csv";
pub const PREDICTIONS: &str = "predictions.npy";
pub const INFER_STATS: &str = "infer_stats.txt";
pub const GANTT: &str = "schedule.txt";
pub const SCHEDULE_CSV: &str = "schedule.csv";

fn record(root: &Path, name: &str, report: Report, verbose: bool) -> Result<Stage> {
    if verbose {
        eprintln!("{name}: {}", serde_json::Value::Object(report.metrics.clone()));
    }
    let artifacts = report
        .outputs
        .iter()
        .map(|p| {
            let rel = p.strip_prefix(root).with_context(|| format!("{} is outside {}", p.display(), root.display()))?;
            let rel: Vec<_> = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect();
            Artifact::digest(root, &rel.join("/"))
        })
        .collect::<Result<_>>()?;
    Ok(Stage {
        name: name.into(),
        params: report.params,
        artifacts,
        metrics: report.metrics,
    })
}

pub fn run(settings: &Settings, root: &Path, verbose: bool) -> Result<PipelineManifest> {
    fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    let at = |rel: &str| root.join(rel);
    let mut done = Vec::new();

    let n_devices = settings.session_config()?.n_devices;
    done.push(record(root, "generate", stages::generate(settings, &at(LOGS))?, verbose)?);

    let logs: Vec<PathBuf> = (0..n_devices).map(|d| at(LOGS).join(stages::log_file_name(d))).collect();
    done.push(record(root, "sync", stages::sync(&logs, &at(ALIGNED), None)?, verbose)?);

    done.push(record(root, "window", stages::window(settings, &at(ALIGNED), &at(DATASET))?, verbose)?);

    let train = stages::train(settings, &at(DATASET), &at(MODEL), Some(&at(LOSSES)))?;
    done.push(record(root, "train", train, verbose)?);

    let infer = stages::infer(
        settings,
        &at(ALIGNED),
        &at(MODEL),
        &at(PREDICTIONS),
        Some(&at(INFER_STATS)),
        InferMode::Offline,
    )?;
    done.push(record(root, "infer", infer, verbose)?);

    let sim = stages::simulate_stage(settings, Some(&at(GANTT)), Some(&at(SCHEDULE_CSV)), false)?;
    done.push(record(root, "simulate", sim, verbose)?);

    let manifest = PipelineManifest {
        seed: settings.seed()?,
        stages: done,
    };
    manifest.write(root)?;
    Ok(manifest)
}
