//! Side-by-side summary of several result directories.

use std::path::{Path, PathBuf};

use crate::runner::{fmt_f64, RunError};

pub const COMPARE_HEADER: [&str; 10] = [
    "label",
    "rounds",
    "final_train_loss",
    "final_test_accuracy",
    "mean_train_loss",
    "mean_test_accuracy",
    "mean_selected",
    "mean_local_updates",
    "delta_final_train_loss",
    "delta_final_test_accuracy",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub label: String,
    pub rounds: usize,
    pub final_loss: f64,
    pub final_accuracy: Option<f64>,
    pub mean_loss: f64,
    pub mean_accuracy: Option<f64>,
    pub mean_selected: f64,
    pub mean_local_updates: f64,
}

fn read_rows(path: &Path) -> Result<Vec<csv::StringRecord>, RunError> {
    let csv_err = |source| RunError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.records().collect::<Result<_, _>>().map_err(csv_err)
}

fn num(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<Option<f64>, RunError> {
    let s = rec.get(i).unwrap_or("");
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| RunError::Other(format!("{}: bad number {s:?}", path.display())))
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn summarize(dir: &Path) -> Result<Summary, RunError> {
    let results = dir.join("results.csv");
    let rows = read_rows(&results)?;
    if rows.is_empty() {
        return Err(RunError::Other(format!("{}: no rounds", results.display())));
    }
    let mut losses = Vec::new();
    let mut accs = Vec::new();
    let mut selected = Vec::new();
    for r in &rows {
        losses.push(num(r, 5, &results)?.unwrap_or(f64::NAN));
        if let Some(a) = num(r, 6, &results)? {
            accs.push(a);
        }
        selected.push(num(r, 1, &results)?.unwrap_or(0.0));
    }
    let last = rows.last().expect("non-empty");
    let trace = dir.join("schedule_trace.csv");
    let taus: Vec<f64> = read_rows(&trace)?
        .iter()
        .map(|r| num(r, 2, &trace).map(|v| v.unwrap_or(0.0)))
        .collect::<Result<_, _>>()?;
    Ok(Summary {
        label: dir
            .file_name()
            .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned()),
        rounds: rows.len(),
        final_loss: num(last, 5, &results)?.unwrap_or(f64::NAN),
        final_accuracy: num(last, 6, &results)?,
        mean_loss: mean(&losses),
        mean_accuracy: (!accs.is_empty()).then(|| mean(&accs)),
        mean_selected: mean(&selected),
        mean_local_updates: if taus.is_empty() { 0.0 } else { mean(&taus) },
    })
}

/// One row per directory, in the given order. Differences are relative to
/// the first directory.
pub fn compare(dirs: &[PathBuf]) -> Result<Vec<Vec<String>>, RunError> {
    if dirs.len() < 2 {
        return Err(RunError::Other("compare needs at least two result directories".into()));
    }
    let sums: Vec<Summary> = dirs.iter().map(|d| summarize(d)).collect::<Result<_, _>>()?;
    let base = &sums[0];
    if let Some(bad) = sums.iter().find(|s| s.rounds != base.rounds) {
        return Err(RunError::Other(format!(
            "round counts differ: {} has {}, {} has {}",
            base.label, base.rounds, bad.label, bad.rounds
        )));
    }
    let opt = |v: Option<f64>| v.map_or_else(String::new, fmt_f64);
    Ok(sums
        .iter()
        .map(|s| {
            vec![
                s.label.clone(),
                s.rounds.to_string(),
                fmt_f64(s.final_loss),
                opt(s.final_accuracy),
                fmt_f64(s.mean_loss),
                opt(s.mean_accuracy),
                fmt_f64(s.mean_selected),
                fmt_f64(s.mean_local_updates),
                fmt_f64(s.final_loss - base.final_loss),
                opt(s.final_accuracy.zip(base.final_accuracy).map(|(a, b)| a - b)),
            ]
        })
        .collect())
}

pub fn render_csv(rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COMPARE_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}
