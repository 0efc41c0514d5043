use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::{Check, Result};

/// One long-format result: every command also writes these to
/// `<experiment>-results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: String,
    pub seed: u64,
    pub step: u64,
    pub metric: String,
    pub value: f64,
}

impl ResultRow {
    pub fn new(experiment: &str, seed: u64, step: u64, metric: impl Into<String>, value: f64) -> Self {
        Self { experiment: experiment.to_string(), seed, step, metric: metric.into(), value }
    }
}

/// Planner evaluation rows, shared by `plan` and `minipacman`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReturnRow {
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub planner: String,
    pub model_kind: String,
    pub seed: u64,
}

/// Writes rows with a header line. Empty tables still get the header.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::WriterBuilder::new().has_headers(!rows.is_empty()).from_path(path)?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_results(dir: &Path, experiment: &str, rows: &[ResultRow]) -> Result<()> {
    write_csv(&dir.join(format!("{experiment}-results.csv")), rows, &["experiment", "seed", "step", "metric", "value"])
}

#[derive(Serialize)]
struct SummaryFile<'a, S: Serialize> {
    experiment: &'a str,
    seed: u64,
    checks: &'a [Check],
    summary: &'a S,
}

pub fn write_summary<S: Serialize>(dir: &Path, experiment: &str, seed: u64, checks: &[Check], summary: &S) -> Result<()> {
    fs::create_dir_all(dir)?;
    let file = SummaryFile { experiment, seed, checks, summary };
    fs::write(dir.join(format!("{experiment}-summary.json")), serde_json::to_string_pretty(&file)? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_then_rows() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![ResultRow::new("x", 1, 0, "m", 0.5)];
        write_results(dir.path(), "x", &rows).unwrap();
        let text = fs::read_to_string(dir.path().join("x-results.csv")).unwrap();
        assert_eq!(text, "experiment,seed,step,metric,value\nx,1,0,m,0.5\n");
        write_results(dir.path(), "y", &[]).unwrap();
        let text = fs::read_to_string(dir.path().join("y-results.csv")).unwrap();
        assert_eq!(text, "experiment,seed,step,metric,value\n");
    }

    #[test]
    fn return_column_is_named_return() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let row = ReturnRow { episode: 0, episode_return: 0.6, planner: "mcts".into(), model_kind: "cpm".into(), seed: 3 };
        write_csv(&path, &[row], &[]).unwrap();
        assert!(fs::read_to_string(path).unwrap().starts_with("episode,return,planner,model_kind,seed\n"));
    }
}
