//! Row types for the evaluation CSV files, shared by the writers in
//! `evaluate` and the readers in `report`.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{at_path, Error, Result};

pub const SUMMARY_CSV: &str = "summary.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const ROC_CSV: &str = "roc.csv";
pub const HIST_CSV: &str = "hist.csv";
pub const EMBEDDING_CSV: &str = "embedding.csv";
pub const TOP_ANOMALIES_CSV: &str = "top_anomalies.csv";
pub const OVERLAY_CSV: &str = "overlay.csv";
pub const TRAIN_LOG_CSV: &str = "train_log.csv";

/// Raw-sample statistics of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub n: usize,
    pub trace_len: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub scenario: String,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistRow {
    pub dataset: String,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub dataset: String,
    pub trace_id: usize,
    pub pc1: f64,
    pub pc2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyRow {
    pub rank: usize,
    pub dataset: String,
    pub trace_id: usize,
    pub score: f64,
}

/// Mean normalized window of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayRow {
    pub dataset: String,
    pub sample: usize,
    pub mean: f64,
}

pub fn write_records<T: Serialize>(rows: &[T], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(at_path(path))?;
    write_records_to(rows, std::io::BufWriter::new(file))
}

/// The header comes from the first row, so an empty slice writes nothing.
pub fn write_records_to<T: Serialize, W: std::io::Write>(rows: &[T], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(at_path(path))?;
    let mut r = csv::Reader::from_reader(file);
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Data(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roc_rows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(ROC_CSV);
        let rows = vec![
            RocPoint { scenario: "delay".into(), fpr: 0.0, tpr: 0.0 },
            RocPoint { scenario: "delay".into(), fpr: 0.125, tpr: 0.1 + 0.2 },
        ];
        write_records(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("scenario,fpr,tpr\n"));
        assert_eq!(read_records::<RocPoint>(&path).unwrap(), rows);
    }

    #[test]
    fn malformed_rows_are_data_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "scenario,fpr,tpr\ndelay,x,0\n").unwrap();
        assert!(matches!(read_records::<RocPoint>(&path), Err(Error::Data(_))));
    }
}
