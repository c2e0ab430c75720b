//! The `run` subcommand: train, evaluate, and write artifacts.
//!
//! Artifacts in the output directory:
//! - `config.toml`: the fully resolved configuration
//! - `metrics.jsonl`: one record per epoch
//! - `summary.csv`: one row for the run
//! - `checkpoint.json` / `checkpoint.bin`: state after the last epoch
//! - `histograms.jsonl`: log2-magnitude histograms (with `--histograms`)
//! - `run.log`: wall-clock timestamps, the only non-deterministic file

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{checkpoint, NetworkState};
use crate::trainer::{self, Histogram, TrainSummary};

/// The `summary.csv` row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scheme: String,
    pub rounding: String,
    pub seed: u64,
    pub epochs: usize,
    pub final_accuracy: f64,
    pub epochs_to_target: Option<usize>,
    pub final_train_loss: Option<f64>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_line(w: &mut impl Write, path: &Path, line: &str) -> Result<()> {
    writeln!(w, "{line}").map_err(|e| Error::io(path, e))
}

fn unix_seconds() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Fresh state, or the checkpoint in `cfg.resume` converted to the
/// configured scheme when it differs.
pub fn initial_state(cfg: &ExperimentConfig, train: &Dataset) -> Result<NetworkState> {
    let scheme = cfg.resolve_scheme()?;
    let mut state = match &cfg.resume {
        Some(stem) => {
            let s = checkpoint::load(stem)?;
            let mut s = if s.scheme() != &scheme {
                checkpoint::load_with_scheme(stem, scheme)?
            } else {
                s
            };
            s.set_rounding(cfg.rounding);
            s
        }
        None => {
            let topology = cfg.resolve_topology(train.image_shape(), train.classes)?;
            NetworkState::new(topology, scheme, cfg.rounding, cfg.seed)?
        }
    };
    state.set_kernel_mode(cfg.kernel);
    if state.input_len() != train.image_len() || state.classes() != train.classes {
        return Err(Error::Topology(format!(
            "network takes {} values into {} classes, data has {} values and {} classes",
            state.input_len(),
            state.classes(),
            train.image_len(),
            train.classes
        )));
    }
    Ok(state)
}

fn batch_histograms(state: &NetworkState, train: &Dataset, batch: usize) -> Result<Vec<Histogram>> {
    let idx: Vec<usize> = (0..batch.min(train.len())).collect();
    let (x, y) = train.gather(&idx);
    trainer::histograms(state, &x, &y)
}

/// Runs one experiment and writes its artifacts into `cfg.output`.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let out = cfg.output.as_path();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log_path = out.join("run.log");
    let mut log = create(&log_path)?;
    let started = Instant::now();
    write_line(&mut log, &log_path, &format!("start {:.3}", unix_seconds()))?;

    let config_path = out.join("config.toml");
    fs::write(&config_path, cfg.to_toml()?).map_err(|e| Error::io(&config_path, e))?;

    let (train, test) = cfg.load_data()?;
    write_line(
        &mut log,
        &log_path,
        &format!(
            "data train={} test={} elapsed={:.3}s",
            train.len(),
            test.len(),
            started.elapsed().as_secs_f64()
        ),
    )?;
    let mut state = initial_state(cfg, &train)?;

    let metrics_path = out.join("metrics.jsonl");
    let mut metrics = create(&metrics_path)?;
    let hist_path = out.join("histograms.jsonl");
    let mut hist = if cfg.histograms {
        Some(create(&hist_path)?)
    } else {
        None
    };
    if let Some(h) = hist.as_mut() {
        for r in batch_histograms(&state, &train, cfg.train.batch_size)? {
            write_line(h, &hist_path, &serde_json::to_string(&r)?)?;
        }
    }
    let stem = out.join("checkpoint");
    let summary = trainer::train(&mut state, &train, &test, &cfg.train, |s, m| {
        write_line(&mut metrics, &metrics_path, &serde_json::to_string(m)?)?;
        checkpoint::save(s, &stem)?;
        if let Some(h) = hist.as_mut() {
            for r in batch_histograms(s, &train, cfg.train.batch_size)? {
                write_line(h, &hist_path, &serde_json::to_string(&r)?)?;
            }
        }
        write_line(
            &mut log,
            &log_path,
            &format!(
                "epoch {} at {:.3} elapsed={:.3}s",
                m.epoch,
                unix_seconds(),
                started.elapsed().as_secs_f64()
            ),
        )
    })?;
    if summary.epochs.is_empty() {
        checkpoint::save(&state, &stem)?;
    }
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
    if let Some(mut h) = hist {
        h.flush().map_err(|e| Error::io(&hist_path, e))?;
    }

    let row = RunSummary {
        scheme: cfg.resolve_scheme()?.name,
        rounding: cfg.rounding.to_string(),
        seed: cfg.seed,
        epochs: state.epoch(),
        final_accuracy: summary.final_accuracy,
        epochs_to_target: summary.epochs_to_target,
        final_train_loss: summary.epochs.last().map(|m| m.train_loss),
    };
    let summary_path = out.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_path).map_err(|e| Error::Config(e.to_string()))?;
    w.serialize(&row).map_err(|e| Error::Config(e.to_string()))?;
    w.flush().map_err(|e| Error::io(&summary_path, e))?;

    write_line(
        &mut log,
        &log_path,
        &format!(
            "end {:.3} elapsed={:.3}s",
            unix_seconds(),
            started.elapsed().as_secs_f64()
        ),
    )?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    Ok(summary)
}
