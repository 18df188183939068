//! Evaluation runs and the SVG report bundle built from their CSV output.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::records::*;
use crate::metrics::svg::{Chart, Mark, Series};
use crate::metrics::{
    histogram, pca_embed_with, pooled_range, rank_top_anomalies, roc_auc, scenario_report, ScenarioRow,
    DEFAULT_BINS,
};
use crate::model::{LossRecord, ScreeningModel};
use crate::scoring::calibrate_threshold;
use crate::trace::{summarize, TraceSet};

pub const EVALUATION_JSON: &str = "evaluation.json";
pub const REPORT_SVGS: [&str; 5] = ["roc.svg", "hist.svg", "overlay.svg", "embedding.svg", "curves.svg"];

/// Traces per dataset that enter the embedding.
const EMBED_PER_SET: usize = 200;
const TOP_K: usize = 10;
const BENIGN: &str = "benign";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationMeta {
    pub benign_val_n: usize,
    /// Thresholds recalibrated on the benign validation file.
    pub tau_at_1: Option<f64>,
    pub tau_at_5: Option<f64>,
    /// Thresholds stored in the model at enrollment.
    pub model_thresholds: BTreeMap<String, f64>,
    pub embedding_method: String,
    pub embedding_variances: Vec<f64>,
    pub datasets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<ScenarioRow>,
    pub meta: EvaluationMeta,
}

/// Dataset names for scenario files: the shared label when there is one,
/// otherwise `fallback`, with `#2`, `#3`, ... appended on repeats.
pub fn dataset_names(sets: &[(&TraceSet, String)]) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    sets.iter()
        .map(|(set, fallback)| {
            let labels = set.labels();
            let base = match labels.first() {
                Some(first) if labels.iter().all(|l| l == first) => first.to_string(),
                _ => fallback.clone(),
            };
            let count = seen.entry(base.clone()).or_insert(0);
            *count += 1;
            if *count == 1 {
                base
            } else {
                format!("{base}#{count}")
            }
        })
        .collect()
}

/// Scores every dataset and writes the evaluation CSVs and
/// `evaluation.json` into `out_dir`.
pub fn evaluate(
    model: &ScreeningModel,
    benign_val: &TraceSet,
    scenarios: &[(String, TraceSet)],
    out_dir: &Path,
) -> Result<Evaluation> {
    benign_val.ensure_benign()?;
    if scenarios.is_empty() {
        return Err(Error::EmptyInput("no scenario trace files"));
    }
    fs::create_dir_all(out_dir)?;

    let mut datasets: Vec<(&str, &TraceSet)> = vec![(BENIGN, benign_val)];
    datasets.extend(scenarios.iter().map(|(n, s)| (n.as_str(), s)));
    let scores: Vec<Vec<f64>> = datasets
        .iter()
        .map(|(_, s)| model.scores(s))
        .collect::<Result<_>>()?;
    let benign_scores = &scores[0];

    let scored: Vec<(String, Vec<f64>)> = scenarios
        .iter()
        .zip(&scores[1..])
        .map(|((n, _), s)| (n.clone(), s.clone()))
        .collect();
    let rows = scenario_report(benign_scores, &scored)?;
    write_records(&rows, out_dir.join(METRICS_CSV))?;

    let mut roc = Vec::new();
    for (name, s) in &scored {
        for (fpr, tpr) in roc_auc(benign_scores, s)?.curve {
            roc.push(RocPoint { scenario: name.clone(), fpr, tpr });
        }
    }
    write_records(&roc, out_dir.join(ROC_CSV))?;

    let all: Vec<&[f64]> = scores.iter().map(|s| s.as_slice()).collect();
    let range = pooled_range(&all);
    let mut hist = Vec::new();
    for ((name, _), s) in datasets.iter().zip(&scores) {
        let h = histogram(s, DEFAULT_BINS, Some(range))?;
        for (i, &count) in h.counts.iter().enumerate() {
            hist.push(HistRow {
                dataset: name.to_string(),
                bin_lo: h.edges[i],
                bin_hi: h.edges[i + 1],
                count,
            });
        }
    }
    write_records(&hist, out_dir.join(HIST_CSV))?;

    let mut summary = Vec::new();
    for (name, set) in &datasets {
        let s = summarize(set)?;
        summary.push(SummaryRow {
            dataset: name.to_string(),
            n: set.len(),
            trace_len: set.trace_len(),
            mean: s.mean,
            std: s.std,
            min: s.min,
            max: s.max,
        });
    }
    write_records(&summary, out_dir.join(SUMMARY_CSV))?;

    let mut top = Vec::new();
    for ((name, _), s) in datasets.iter().zip(&scores) {
        for (rank, (trace_id, score)) in rank_top_anomalies(s, TOP_K).into_iter().enumerate() {
            top.push(AnomalyRow {
                rank: rank + 1,
                dataset: name.to_string(),
                trace_id,
                score,
            });
        }
    }
    write_records(&top, out_dir.join(TOP_ANOMALIES_CSV))?;

    let mut overlay = Vec::new();
    for (name, set) in &datasets {
        let prepared = model.prepare(set)?;
        let len = prepared.trace_len();
        let mut mean = vec![0.0; len];
        for t in prepared.traces() {
            mean.iter_mut().zip(t.samples()).for_each(|(m, &x)| *m += x);
        }
        for (sample, m) in mean.into_iter().enumerate() {
            overlay.push(OverlayRow {
                dataset: name.to_string(),
                sample,
                mean: m / prepared.len() as f64,
            });
        }
    }
    write_records(&overlay, out_dir.join(OVERLAY_CSV))?;

    let mut features = Vec::new();
    let mut owners = Vec::new();
    for (name, set) in &datasets {
        let take: Vec<usize> = (0..set.len().min(EMBED_PER_SET)).collect();
        features.extend(model.features(&set.select(&take))?);
        owners.extend(take.into_iter().map(|i| (name.to_string(), i)));
    }
    let embedding = pca_embed_with(&features, owners.len(), 2, 1e-10, 2000)?;
    let emb_rows: Vec<EmbeddingRow> = owners
        .into_iter()
        .zip(embedding.coords.chunks_exact(2))
        .map(|((dataset, trace_id), c)| EmbeddingRow {
            dataset,
            trace_id,
            pc1: c[0],
            pc2: c[1],
        })
        .collect();
    write_records(&emb_rows, out_dir.join(EMBEDDING_CSV))?;

    write_records(&model.history, out_dir.join(TRAIN_LOG_CSV))?;

    let tau = |f: f64| calibrate_threshold(benign_scores, f).ok().map(|t| t.tau);
    let meta = EvaluationMeta {
        benign_val_n: benign_val.len(),
        tau_at_1: tau(0.01),
        tau_at_5: tau(0.05),
        model_thresholds: model
            .thresholds
            .iter()
            .map(|t| (t.target_fpr.to_string(), t.tau))
            .collect(),
        embedding_method: "PCA of the flattened penultimate critic activations".into(),
        embedding_variances: embedding.variances,
        datasets: datasets.iter().map(|(n, _)| n.to_string()).collect(),
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(out_dir.join(EVALUATION_JSON), json + "\n")?;
    Ok(Evaluation { rows, meta })
}

/// Groups rows by dataset, keeping first-appearance order.
fn group<T>(rows: Vec<T>, key: impl Fn(&T) -> &str) -> Vec<(String, Vec<T>)> {
    let mut out: Vec<(String, Vec<T>)> = Vec::new();
    for row in rows {
        let k = key(&row).to_string();
        match out.iter_mut().find(|(name, _)| *name == k) {
            Some((_, v)) => v.push(row),
            None => out.push((k, vec![row])),
        }
    }
    out
}

fn required<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> Result<Vec<T>> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(Error::Data(format!("{} is missing {name}", dir.display())));
    }
    let rows = read_records(&path)?;
    if rows.is_empty() {
        return Err(Error::Data(format!("{} has no rows", path.display())));
    }
    Ok(rows)
}

/// Renders the SVG figures from an evaluation directory and copies its CSV
/// and JSON files next to them. Rerunning overwrites with identical output.
pub fn render_report(eval_dir: &Path, out_dir: &Path) -> Result<Vec<String>> {
    let has_any = eval_dir.is_dir()
        && fs::read_dir(eval_dir)?.any(|e| e.map(|e| e.path().is_file()).unwrap_or(false));
    if !has_any {
        return Err(Error::EmptyInput("evaluation directory is missing or empty"));
    }
    let roc: Vec<RocPoint> = required(eval_dir, ROC_CSV)?;
    let hist: Vec<HistRow> = required(eval_dir, HIST_CSV)?;
    let overlay: Vec<OverlayRow> = required(eval_dir, OVERLAY_CSV)?;
    let embedding: Vec<EmbeddingRow> = required(eval_dir, EMBEDDING_CSV)?;
    let curves: Vec<LossRecord> = required(eval_dir, TRAIN_LOG_CSV)?;
    let metrics: Vec<ScenarioRow> = required(eval_dir, METRICS_CSV)?;
    fs::create_dir_all(out_dir)?;

    let auc: BTreeMap<&str, f64> = metrics.iter().map(|r| (r.scenario.as_str(), r.auc)).collect();
    let mut c = Chart::new("ROC by scenario", "false-positive rate", "true-positive rate", Mark::Line);
    c.x_range = Some((0.0, 1.0));
    c.y_range = Some((0.0, 1.0));
    c.diagonal = true;
    for (name, pts) in group(roc, |r| &r.scenario) {
        let label = match auc.get(name.as_str()) {
            Some(a) => format!("{name} ({a:.3})"),
            None => name.clone(),
        };
        c.series.push(Series::new(label, pts.iter().map(|p| (p.fpr, p.tpr)).collect()));
    }
    let mut files = vec![("roc.svg", c.render())];

    let mut c = Chart::new("Anomaly score distributions", "score", "count", Mark::Line);
    for (name, bins) in group(hist, |r| &r.dataset) {
        let mut edges: Vec<f64> = bins.iter().map(|b| b.bin_lo).collect();
        edges.extend(bins.last().map(|b| b.bin_hi));
        let counts: Vec<f64> = bins.iter().map(|b| b.count as f64).collect();
        c.series.push(Series::steps(name, &edges, &counts));
    }
    files.push(("hist.svg", c.render()));

    let mut c = Chart::new("Mean normalized trace", "sample in window", "normalized level", Mark::Line);
    for (name, rows) in group(overlay, |r| &r.dataset) {
        c.series.push(Series::new(name, rows.iter().map(|r| (r.sample as f64, r.mean)).collect()));
    }
    files.push(("overlay.svg", c.render()));

    let mut c = Chart::new("Critic feature embedding", "PC 1", "PC 2", Mark::Points);
    for (name, rows) in group(embedding, |r| &r.dataset) {
        c.series.push(Series::new(name, rows.iter().map(|r| (r.pc1, r.pc2)).collect()));
    }
    files.push(("embedding.svg", c.render()));

    let mut c = Chart::new("Training losses", "epoch", "loss", Mark::Line);
    let per_epoch = |f: fn(&LossRecord) -> f64| curves.iter().map(|r| (r.epoch as f64, f(r))).collect();
    c.series.push(Series::new("critic", per_epoch(|r| r.critic_loss)));
    c.series.push(Series::new("generator", per_epoch(|r| r.generator_loss)));
    c.series.push(Series::new("gradient penalty", per_epoch(|r| r.gradient_penalty)));
    c.series.push(Series::new("wasserstein", per_epoch(|r| r.wasserstein)));
    files.push(("curves.svg", c.render()));

    let mut written = Vec::new();
    for (name, svg) in files {
        fs::write(out_dir.join(name), svg)?;
        written.push(name.to_string());
    }
    if fs::canonicalize(eval_dir)? != fs::canonicalize(out_dir)? {
        for name in [
            SUMMARY_CSV,
            METRICS_CSV,
            ROC_CSV,
            HIST_CSV,
            EMBEDDING_CSV,
            TOP_ANOMALIES_CSV,
            OVERLAY_CSV,
            TRAIN_LOG_CSV,
            EVALUATION_JSON,
        ] {
            let src = eval_dir.join(name);
            if src.is_file() {
                fs::copy(&src, out_dir.join(name))?;
                written.push(name.to_string());
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{PowerTrace, Scenario};

    fn set(label: Scenario, n: usize) -> TraceSet {
        let traces = (0..n).map(|i| PowerTrace::new(vec![i as f64; 4]).unwrap()).collect();
        TraceSet::new(traces, vec![label; n], BTreeMap::new()).unwrap()
    }

    #[test]
    fn names_from_labels() {
        let a = set(Scenario::Delay, 2);
        let b = set(Scenario::Delay, 2);
        let mut mixed = set(Scenario::Trojan, 1).concat(&set(Scenario::Benign, 1)).unwrap();
        mixed.meta.clear();
        let names = dataset_names(&[(&a, "x".into()), (&b, "y".into()), (&mixed, "mix".into())]);
        assert_eq!(names, vec!["delay", "delay#2", "mix"]);
    }

    #[test]
    fn report_rejects_empty_dir() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        assert!(matches!(
            render_report(dir.path(), &out),
            Err(Error::EmptyInput(_))
        ));
        assert!(render_report(&dir.path().join("nope"), &out).is_err());
    }
}
