//! CSV and JSON outputs.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! value parses back to the exact `f64` in memory. Output is always
//! dot-decimal with LF line endings.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::purity::PurityAssessment;
use crate::sim::ExperimentResult;

/// One line of `rounds.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    pub selected_count: usize,
    pub id_selected: usize,
    pub precision: f64,
    pub test_accuracy: f64,
    pub tau: Option<f64>,
    pub fallback_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub aubc: f64,
    pub final_accuracy: f64,
    pub early_exhaustion: bool,
    pub rounds_completed: usize,
    pub initial_pool_size: usize,
    pub seed: u64,
    pub config: ExperimentConfig,
}

/// One line of `aggregate.csv`: population mean and standard deviation
/// across the seeds that reached `round`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub round: usize,
    pub n_seeds: usize,
    pub selected_count_mean: f64,
    pub id_selected_mean: f64,
    pub id_selected_std: f64,
    pub precision_mean: f64,
    pub precision_std: f64,
    pub test_accuracy_mean: f64,
    pub test_accuracy_std: f64,
}

/// One line of a score dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub index: usize,
    pub p_ood: f64,
    pub max_p_id: f64,
    pub indicator: u8,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Manifest(format!("{}: malformed CSV: {other:?}", path.display())),
    }
}

pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

pub fn round_rows(result: &ExperimentResult) -> Vec<RoundRow> {
    result
        .logs
        .iter()
        .map(|l| RoundRow {
            round: l.round,
            selected_count: l.selected.len(),
            id_selected: l.id_selected,
            precision: l.precision,
            test_accuracy: l.test_accuracy,
            tau: l.tau,
            fallback_used: l.fallback_used,
        })
        .collect()
}

pub fn summary(result: &ExperimentResult, config: &ExperimentConfig) -> Summary {
    Summary {
        aubc: result.aubc,
        final_accuracy: result.final_accuracy,
        early_exhaustion: result.early_exhaustion,
        rounds_completed: result.logs.len(),
        initial_pool_size: result.initial_pool_size,
        seed: config.seed,
        config: config.clone(),
    }
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Write `rounds.csv` and `summary.json` into `dir`.
pub fn write_run_outputs(dir: impl AsRef<Path>, result: &ExperimentResult, config: &ExperimentConfig) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(dir.join("rounds.csv"), &round_rows(result))?;
    write_json(dir.join("summary.json"), &summary(result, config))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-round statistics over several runs' `rounds.csv` rows.
pub fn aggregate(runs: &[Vec<RoundRow>]) -> Vec<AggregateRow> {
    let max_rounds = runs.iter().map(Vec::len).max().unwrap_or(0);
    (0..max_rounds)
        .map(|round| {
            let rows: Vec<&RoundRow> = runs.iter().filter_map(|r| r.get(round)).collect();
            let col = |f: fn(&RoundRow) -> f64| mean_std(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (selected_count_mean, _) = col(|r| r.selected_count as f64);
            let (id_selected_mean, id_selected_std) = col(|r| r.id_selected as f64);
            let (precision_mean, precision_std) = col(|r| r.precision);
            let (test_accuracy_mean, test_accuracy_std) = col(|r| r.test_accuracy);
            AggregateRow {
                round: rows[0].round,
                n_seeds: rows.len(),
                selected_count_mean,
                id_selected_mean,
                id_selected_std,
                precision_mean,
                precision_std,
                test_accuracy_mean,
                test_accuracy_std,
            }
        })
        .collect()
}

pub fn score_rows(assessment: &PurityAssessment) -> Vec<ScoreRow> {
    let s = &assessment.scores;
    assessment
        .indices
        .iter()
        .enumerate()
        .map(|(i, &index)| ScoreRow {
            index,
            p_ood: s.p_ood[i],
            max_p_id: s.max_p_id(i),
            indicator: u8::from(s.indicator[i]),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(round: usize, precision: f64, acc: f64) -> RoundRow {
        RoundRow {
            round,
            selected_count: 10,
            id_selected: (precision / 10.0) as usize,
            precision,
            test_accuracy: acc,
            tau: if round == 0 { None } else { Some(0.108) },
            fallback_used: 0,
        }
    }

    #[test]
    fn single_run_aggregate_has_zero_std() {
        let run = vec![row(0, 60.0, 0.5), row(1, 90.0, 0.7)];
        let agg = aggregate(&[run]);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[1].precision_mean, 90.0);
        assert_eq!(agg[1].precision_std, 0.0);
        assert_eq!(agg[1].test_accuracy_std, 0.0);
    }

    #[test]
    fn aggregate_handles_truncated_runs() {
        let agg = aggregate(&[vec![row(0, 50.0, 0.4), row(1, 100.0, 0.6)], vec![row(0, 70.0, 0.6)]]);
        assert_eq!(agg[0].n_seeds, 2);
        assert_eq!(agg[0].precision_mean, 60.0);
        assert_eq!(agg[0].precision_std, 10.0);
        assert_eq!(agg[1].n_seeds, 1);
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(p in 0.0f64..100.0, a in 0.0f64..1.0, tau in proptest::option::of(1e-3f64..1.0)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("r.csv");
            let rows = vec![RoundRow { tau, ..row(3, p, a) }];
            write_csv(&path, &rows).unwrap();
            let text = std::fs::read_to_string(&path).unwrap();
            prop_assert!(!text.contains('\r'));
            prop_assert!(text.starts_with("round,selected_count,id_selected,precision,test_accuracy,tau,fallback_used\n"));
            let back: Vec<RoundRow> = read_csv(&path).unwrap();
            prop_assert_eq!(back, rows);
        }
    }
}
