//! Run artifacts: metrics CSV, aggregation audit JSONL, and run comparison.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Algorithm;
use crate::error::{Error, Result};
use crate::server::LayerAudit;
use crate::sim::{RoundRecord, RoundSink};

pub const METRICS_COLUMNS: [&str; 10] = [
    "round",
    "algorithm",
    "seed",
    "test_acc",
    "macro_f1",
    "mean_train_loss",
    "mean_grad_sq",
    "n_sampled",
    "trusted_min",
    "trusted_max",
];

/// One row of a metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: u64,
    pub algorithm: String,
    pub seed: u64,
    pub test_acc: f64,
    pub macro_f1: f64,
    pub mean_train_loss: f64,
    pub mean_grad_sq: f64,
    pub n_sampled: usize,
    pub trusted_min: usize,
    pub trusted_max: usize,
}

impl MetricsRow {
    pub fn from_record(record: &RoundRecord, algorithm: Algorithm, seed: u64) -> Self {
        Self {
            round: record.round,
            algorithm: algorithm.as_str().to_string(),
            seed,
            test_acc: record.test_acc,
            macro_f1: record.macro_f1,
            mean_train_loss: record.mean_train_loss,
            mean_grad_sq: record.mean_grad_sq,
            n_sampled: record.sampled.len(),
            trusted_min: record.trusted_min(),
            trusted_max: record.trusted_max(),
        }
    }
}

#[derive(Serialize)]
struct AuditLine<'a> {
    round: u64,
    layer: usize,
    deviations: &'a [(usize, f64)],
    trusted: &'a [usize],
}

/// Streams metrics rows and audit lines to disk, flushing after every round so
/// that an interrupted run keeps every completed round.
pub struct RunWriter {
    metrics: csv::Writer<File>,
    audit: BufWriter<File>,
    algorithm: Algorithm,
    seed: u64,
}

impl RunWriter {
    pub fn create(metrics_path: &Path, audit_path: &Path, algorithm: Algorithm, seed: u64) -> Result<Self> {
        let mut metrics = csv::WriterBuilder::new().has_headers(false).from_path(metrics_path)?;
        metrics.write_record(METRICS_COLUMNS)?;
        metrics.flush()?;
        Ok(Self {
            metrics,
            audit: BufWriter::new(File::create(audit_path)?),
            algorithm,
            seed,
        })
    }
}

impl RoundSink for RunWriter {
    fn record(&mut self, record: &RoundRecord, audit: &[LayerAudit]) -> Result<()> {
        self.metrics
            .serialize(MetricsRow::from_record(record, self.algorithm, self.seed))?;
        self.metrics.flush()?;
        for a in audit {
            let line = AuditLine {
                round: record.round,
                layer: a.layer,
                deviations: &a.deviations,
                trusted: &a.trusted,
            };
            serde_json::to_writer(&mut self.audit, &line)?;
            self.audit.write_all(b"\n")?;
        }
        self.audit.flush()?;
        Ok(())
    }
}

/// Reads a metrics CSV, naming the first missing column on schema mismatch.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let parse = |row: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if let Some(missing) = METRICS_COLUMNS.iter().find(|c| !headers.iter().any(|h| h == **c)) {
        return Err(parse(1, format!("missing column `{missing}`")));
    }
    reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| parse(i + 2, e.to_string())))
        .collect()
}

/// Final-round summary of one run, with its accuracy drop against the first run.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub label: String,
    pub algorithm: String,
    pub round: u64,
    pub test_acc: f64,
    pub macro_f1: f64,
    pub drop: f64,
}

pub fn compare_runs(runs: &[(String, Vec<MetricsRow>)]) -> Result<Vec<Comparison>> {
    if runs.len() < 2 {
        return Err(Error::param("runs", "need at least two metrics files"));
    }
    let finals = runs
        .iter()
        .map(|(label, rows)| {
            rows.last()
                .map(|r| (label, r))
                .ok_or_else(|| Error::param("runs", format!("{label} holds no rounds")))
        })
        .collect::<Result<Vec<_>>>()?;
    let reference = finals[0].1.test_acc;
    Ok(finals
        .into_iter()
        .map(|(label, r)| Comparison {
            label: label.clone(),
            algorithm: r.algorithm.clone(),
            round: r.round,
            test_acc: r.test_acc,
            macro_f1: r.macro_f1,
            drop: reference - r.test_acc,
        })
        .collect())
}

/// Plain-text table of a comparison, accuracies in percent.
pub fn render_comparison(rows: &[Comparison]) -> String {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(3).max(3);
    let mut out = format!(
        "{:<width$}  {:<15}  {:>6}  {:>8}  {:>8}  {:>7}\n",
        "run", "algorithm", "round", "acc(%)", "f1(%)", "drop"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:<15}  {:>6}  {:>8.2}  {:>8.2}  {:>7.2}\n",
            r.label,
            r.algorithm,
            r.round,
            100.0 * r.test_acc,
            100.0 * r.macro_f1,
            100.0 * r.drop
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(round: u64, acc: f64) -> RoundRecord {
        RoundRecord {
            round,
            sampled: vec![1, 4],
            test_acc: acc,
            macro_f1: acc / 2.0,
            global_acc: acc,
            global_f1: acc / 2.0,
            personalized_acc: 0.0,
            personalized_f1: 0.0,
            mean_train_loss: 0.25,
            mean_grad_sq: 1e-3,
            trusted_sizes: vec![2, 1],
        }
    }

    #[test]
    fn writes_exact_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let (m, a) = (dir.path().join("m.csv"), dir.path().join("a.jsonl"));
        let mut w = RunWriter::create(&m, &a, Algorithm::Fedmlac, 9).unwrap();
        let audit = vec![LayerAudit {
            layer: 0,
            deviations: vec![(4, 0.5), (1, 2.0)],
            trusted: vec![4],
        }];
        w.record(&record(1, 0.5), &audit).unwrap();
        w.record(&record(2, 0.75), &[]).unwrap();
        let text = std::fs::read_to_string(&m).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "round,algorithm,seed,test_acc,macro_f1,mean_train_loss,mean_grad_sq,n_sampled,trusted_min,trusted_max"
        );
        assert_eq!(lines.next().unwrap(), "1,fedmlac,9,0.5,0.25,0.25,0.001,2,1,2");
        let jsonl = std::fs::read_to_string(&a).unwrap();
        assert_eq!(
            jsonl.trim(),
            r#"{"round":1,"layer":0,"deviations":[[4,0.5],[1,2.0]],"trusted":[4]}"#
        );
        let rows = read_metrics(&m).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].test_acc, 0.75);
    }

    #[test]
    fn missing_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "round,algorithm,seed,test_acc\n1,fedavg,0,0.5\n").unwrap();
        let err = read_metrics(&p).unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("`macro_f1`"), "{err}");
    }

    #[test]
    fn drop_against_first_run() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let mut w = RunWriter::create(&p, &dir.path().join("a"), Algorithm::Fedavg, 0).unwrap();
        w.record(&record(1, 0.9), &[]).unwrap();
        let clean = read_metrics(&p).unwrap();
        let mut noisy = clean.clone();
        noisy[0].test_acc = 0.7125;
        let same = compare_runs(&[("a".into(), clean.clone()), ("a".into(), clean.clone())]).unwrap();
        assert_eq!(same[1].drop, 0.0);
        let cmp = compare_runs(&[("clean".into(), clean), ("snr20".into(), noisy)]).unwrap();
        assert!((cmp[1].drop - (0.9 - 0.7125)).abs() < 1e-9);
        assert!(render_comparison(&cmp).contains("18.75"));
    }
}
