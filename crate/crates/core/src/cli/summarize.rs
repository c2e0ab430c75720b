//! The `summarize` subcommand: multi-seed runs folded into mean ± std rows.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::experiment::RunSummary;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub scheme: String,
    pub rounding: String,
    pub runs: usize,
    pub accuracy_mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub accuracy_std: f64,
    /// Runs that reached the target accuracy.
    pub reached_target: usize,
    /// Mean epochs-to-target over the runs that reached it.
    pub epochs_to_target_mean: Option<f64>,
}

/// Accepts run directories or `summary.csv` files directly.
pub fn read_summaries(paths: &[PathBuf]) -> Result<Vec<RunSummary>> {
    let mut out = Vec::new();
    for p in paths {
        let file = if p.is_dir() { p.join("summary.csv") } else { p.clone() };
        let mut r = csv::Reader::from_path(&file).map_err(|e| csv_error(&file, e))?;
        for row in r.deserialize() {
            out.push(row.map_err(|e| csv_error(&file, e))?);
        }
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups by `(scheme, rounding)` in sorted order.
pub fn summarize(runs: &[RunSummary]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String), Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        groups
            .entry((r.scheme.clone(), r.rounding.clone()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((scheme, rounding), rs)| {
            let acc: Vec<f64> = rs.iter().map(|r| r.final_accuracy).collect();
            let (accuracy_mean, accuracy_std) = mean_std(&acc);
            let reached: Vec<f64> = rs.iter().filter_map(|r| r.epochs_to_target.map(|e| e as f64)).collect();
            SummaryRow {
                scheme,
                rounding,
                runs: rs.len(),
                accuracy_mean,
                accuracy_std,
                reached_target: reached.len(),
                epochs_to_target_mean: (!reached.is_empty()).then(|| mean_std(&reached).0),
            }
        })
        .collect()
}

pub fn to_csv(rows: &[SummaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(scheme: &str, seed: u64, acc: f64, target: Option<usize>) -> RunSummary {
        RunSummary {
            scheme: scheme.into(),
            rounding: "stochastic".into(),
            seed,
            epochs: 5,
            final_accuracy: acc,
            epochs_to_target: target,
            final_train_loss: Some(1.0),
        }
    }

    #[test]
    fn groups_and_moments() {
        let rows = summarize(&[
            run("float12", 1, 70.0, Some(4)),
            run("float12", 2, 74.0, None),
            run("pot", 1, 60.0, None),
        ]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].runs, 2);
        assert_eq!(rows[0].accuracy_mean, 72.0);
        assert!((rows[0].accuracy_std - 8f64.sqrt()).abs() < 1e-12);
        assert_eq!(rows[0].epochs_to_target_mean, Some(4.0));
        assert_eq!(rows[1].accuracy_std, 0.0);
        assert_eq!(rows[1].epochs_to_target_mean, None);
        assert!(to_csv(&rows).unwrap().starts_with("scheme,rounding,runs"));
    }
}
