//! Power traces, trace sets, and the preprocessing applied before modeling.

mod container;
mod csv;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

pub use container::{read_traceset, read_traceset_from, write_traceset, write_traceset_to, MAGIC};
pub use csv::{format_sig9, write_csv, write_csv_to};

/// Class tag carried by every trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Benign,
    Trojan,
    Bitflip,
    Delay,
    Backdoor,
    Composite,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Benign,
        Scenario::Trojan,
        Scenario::Bitflip,
        Scenario::Delay,
        Scenario::Backdoor,
        Scenario::Composite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Benign => "benign",
            Scenario::Trojan => "trojan",
            Scenario::Bitflip => "bitflip",
            Scenario::Delay => "delay",
            Scenario::Backdoor => "backdoor",
            Scenario::Composite => "composite",
        }
    }

    pub fn is_benign(self) -> bool {
        self == Scenario::Benign
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| {
                let valid: Vec<_> = Scenario::ALL.iter().map(|s| s.name()).collect();
                Error::Config(format!(
                    "unknown scenario `{s}` (valid: {})",
                    valid.join(", ")
                ))
            })
    }
}

/// One sampled power waveform. Samples are always finite and non-empty.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTrace {
    samples: Vec<f64>,
}

impl PowerTrace {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("trace has no samples"));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::Data(format!("sample {i} is not finite")));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Equal-length traces with one label each plus provenance metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceSet {
    traces: Vec<PowerTrace>,
    labels: Vec<Scenario>,
    pub meta: BTreeMap<String, String>,
}

impl TraceSet {
    pub fn new(
        traces: Vec<PowerTrace>,
        labels: Vec<Scenario>,
        meta: BTreeMap<String, String>,
    ) -> Result<Self> {
        if traces.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} traces",
                labels.len(),
                traces.len()
            )));
        }
        if let Some(first) = traces.first() {
            let n = first.len();
            if let Some(i) = traces.iter().position(|t| t.len() != n) {
                return Err(Error::Shape(format!(
                    "trace {i} has {} samples, expected {n}",
                    traces[i].len()
                )));
            }
        }
        Ok(Self {
            traces,
            labels,
            meta,
        })
    }

    pub fn traces(&self) -> &[PowerTrace] {
        &self.traces
    }

    pub fn labels(&self) -> &[Scenario] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    /// Samples per trace; zero for an empty set.
    pub fn trace_len(&self) -> usize {
        self.traces.first().map_or(0, PowerTrace::len)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PowerTrace, Scenario)> {
        self.traces.iter().zip(self.labels.iter().copied())
    }

    fn samples(&self) -> impl Iterator<Item = f64> + '_ {
        self.traces.iter().flat_map(|t| t.samples.iter().copied())
    }

    /// Fails with [`Error::Leakage`] on the first non-benign label.
    pub fn ensure_benign(&self) -> Result<()> {
        match self.labels.iter().position(|l| !l.is_benign()) {
            Some(index) => Err(Error::Leakage {
                label: self.labels[index].to_string(),
                index,
            }),
            None => Ok(()),
        }
    }

    /// Subset in the given index order.
    pub fn select(&self, indices: &[usize]) -> TraceSet {
        TraceSet {
            traces: indices.iter().map(|&i| self.traces[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Traces of `other` appended after these. Lengths must agree.
    pub fn concat(&self, other: &TraceSet) -> Result<TraceSet> {
        let mut traces = self.traces.clone();
        traces.extend(other.traces.iter().cloned());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        TraceSet::new(traces, labels, self.meta.clone())
    }

    fn map_traces(&self, f: impl Fn(&PowerTrace) -> Result<PowerTrace>) -> Result<TraceSet> {
        Ok(TraceSet {
            traces: self.traces.iter().map(f).collect::<Result<_>>()?,
            labels: self.labels.clone(),
            meta: self.meta.clone(),
        })
    }
}

/// Global normalization statistics (population convention).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mu: f64,
    pub sigma: f64,
}

impl NormStats {
    fn check(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.mu.is_finite() || !self.sigma.is_finite() {
            return Err(Error::Degenerate(format!(
                "cannot normalize with sigma = {}",
                self.sigma
            )));
        }
        Ok(())
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mu) / self.sigma
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.sigma + self.mu
    }
}

/// Crop window and validation split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    pub crop_start: usize,
    pub crop_end: usize,
    pub val_fraction: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            crop_start: 500,
            crop_end: 2000,
            val_fraction: 0.2,
        }
    }
}

impl PreprocessConfig {
    pub fn window_len(&self) -> usize {
        self.crop_end.saturating_sub(self.crop_start)
    }

    pub fn validate(&self, raw_len: usize) -> Result<()> {
        if self.crop_start >= self.crop_end || self.crop_end > raw_len {
            return Err(Error::Config(format!(
                "crop window [{}, {}) does not fit raw length {raw_len}",
                self.crop_start, self.crop_end
            )));
        }
        check_fraction(self.val_fraction)
    }
}

fn check_fraction(f: f64) -> Result<()> {
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::Config(format!(
            "validation fraction {f} must lie strictly between 0 and 1"
        )));
    }
    Ok(())
}

/// Pooled summary statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

pub fn crop_trace(trace: &PowerTrace, start: usize, end: usize) -> Result<PowerTrace> {
    let len = trace.len();
    if end > len {
        return Err(Error::Bounds { index: end, len });
    }
    if start >= end {
        return Err(Error::Bounds { index: start, len });
    }
    Ok(PowerTrace {
        samples: trace.samples[start..end].to_vec(),
    })
}

pub fn crop_set(set: &TraceSet, start: usize, end: usize) -> Result<TraceSet> {
    set.map_traces(|t| crop_trace(t, start, end))
}

/// Mean and population variance over the pooled samples, accumulated in
/// trace order.
fn pooled_moments(set: &TraceSet) -> Result<(usize, f64, f64)> {
    let n = set.len() * set.trace_len();
    if n == 0 {
        return Err(Error::EmptyInput("trace set has no samples"));
    }
    let mean = set.samples().sum::<f64>() / n as f64;
    let var = set.samples().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    Ok((n, mean, var))
}

pub fn compute_norm_stats(set: &TraceSet) -> Result<NormStats> {
    let (_, mu, var) = pooled_moments(set)?;
    let stats = NormStats {
        mu,
        sigma: var.sqrt(),
    };
    stats.check()?;
    Ok(stats)
}

pub fn normalize(set: &TraceSet, stats: &NormStats) -> Result<TraceSet> {
    stats.check()?;
    set.map_traces(|t| {
        Ok(PowerTrace {
            samples: t.samples.iter().map(|&x| stats.apply(x)).collect(),
        })
    })
}

pub fn denormalize(set: &TraceSet, stats: &NormStats) -> Result<TraceSet> {
    stats.check()?;
    set.map_traces(|t| {
        Ok(PowerTrace {
            samples: t.samples.iter().map(|&z| stats.invert(z)).collect(),
        })
    })
}

/// Seeded Fisher-Yates partition into `(train, validation)`.
///
/// The training side gets `round(n * (1 - val_fraction))` traces. Both sides
/// keep the original relative order of their members.
pub fn split_train_val(set: &TraceSet, val_fraction: f64, seed: u64) -> Result<(TraceSet, TraceSet)> {
    check_fraction(val_fraction)?;
    let n = set.len();
    if n < 2 {
        return Err(Error::Config(format!("cannot split {n} traces")));
    }
    let n_train = (n as f64 * (1.0 - val_fraction)).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Config(format!(
            "validation fraction {val_fraction} leaves an empty side for {n} traces"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Stream::new(seed).shuffle(&mut order);
    let (train, val) = order.split_at_mut(n_train);
    train.sort_unstable();
    val.sort_unstable();
    Ok((set.select(train), set.select(val)))
}

pub fn summarize(set: &TraceSet) -> Result<Summary> {
    let (_, mean, var) = pooled_moments(set)?;
    let (min, max) = set
        .samples()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            (lo.min(x), hi.max(x))
        });
    Ok(Summary {
        min,
        max,
        mean,
        std: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set_of(rows: &[&[f64]]) -> TraceSet {
        let traces = rows
            .iter()
            .map(|r| PowerTrace::new(r.to_vec()).unwrap())
            .collect::<Vec<_>>();
        let labels = vec![Scenario::Benign; traces.len()];
        TraceSet::new(traces, labels, BTreeMap::new()).unwrap()
    }

    #[test]
    fn crop_examples() {
        let t = PowerTrace::new((0..5).map(f64::from).collect()).unwrap();
        assert_eq!(crop_trace(&t, 1, 4).unwrap().samples(), &[1.0, 2.0, 3.0]);
        assert_eq!(crop_trace(&t, 0, 5).unwrap(), t);

        let long = PowerTrace::new(vec![0.5; 3000]).unwrap();
        assert_eq!(crop_trace(&long, 500, 2000).unwrap().len(), 1500);
    }

    #[test]
    fn crop_bounds_errors_name_index() {
        let t = PowerTrace::new(vec![0.0; 10]).unwrap();
        match crop_trace(&t, 2, 11) {
            Err(Error::Bounds { index: 11, len: 10 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match crop_trace(&t, 7, 7) {
            Err(Error::Bounds { index: 7, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trace_rejects_non_finite() {
        assert!(PowerTrace::new(vec![1.0, f64::NAN]).is_err());
        assert!(PowerTrace::new(vec![]).is_err());
    }

    #[test]
    fn norm_stats_closed_form() {
        let s = compute_norm_stats(&set_of(&[&[1.0, 3.0], &[5.0, 7.0]])).unwrap();
        assert_eq!(s.mu, 4.0);
        assert!((s.sigma - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_data_is_degenerate() {
        let set = set_of(&[&[2.0, 2.0], &[2.0, 2.0]]);
        assert!(matches!(compute_norm_stats(&set), Err(Error::Degenerate(_))));
        let zero = NormStats { mu: 2.0, sigma: 0.0 };
        assert!(matches!(normalize(&set, &zero), Err(Error::Degenerate(_))));
    }

    #[test]
    fn empty_set_errors() {
        let empty = TraceSet::default();
        assert!(matches!(compute_norm_stats(&empty), Err(Error::EmptyInput(_))));
        assert!(matches!(summarize(&empty), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn normalize_identity_and_shift() {
        let set = set_of(&[&[0.25, -1.5, 3.0]]);
        let id = NormStats { mu: 0.0, sigma: 1.0 };
        assert_eq!(normalize(&set, &id).unwrap(), set);

        let stats = NormStats { mu: 0.3, sigma: 2.0 };
        let shifted = set_of(&[&[0.75, -1.0, 3.5]]);
        let a = normalize(&set, &stats).unwrap();
        let b = normalize(&shifted, &stats).unwrap();
        for (x, y) in a.traces()[0].samples().iter().zip(b.traces()[0].samples()) {
            assert!((y - x - 0.5 / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let set = set_of(&refs);
        let (a, b) = split_train_val(&set, 0.5, 9).unwrap();
        assert_eq!((a.len(), b.len()), (5, 5));
        let mut all: Vec<f64> = a.iter().chain(b.iter()).map(|(t, _)| t.samples()[0]).collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..10).map(f64::from).collect::<Vec<_>>());
        assert_eq!(split_train_val(&set, 0.5, 9).unwrap(), (a, b));
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let set = set_of(&[&[1.0], &[2.0], &[3.0]]);
        for f in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(split_train_val(&set, f, 0), Err(Error::Config(_))));
        }
    }

    #[test]
    fn summarize_constant_trace() {
        let s = summarize(&set_of(&[&[2.0, 2.0, 2.0]])).unwrap();
        assert_eq!((s.min, s.max, s.mean, s.std), (2.0, 2.0, 2.0, 0.0));
    }

    #[test]
    fn guard_reports_first_tampered_label() {
        let mut set = set_of(&[&[1.0], &[2.0], &[3.0]]);
        assert!(set.ensure_benign().is_ok());
        set.labels[1] = Scenario::Delay;
        match set.ensure_benign() {
            Err(Error::Leakage { label, index: 1 }) => assert_eq!(label, "delay"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scenario_names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
        }
        let err = "rootkit".parse::<Scenario>().unwrap_err().to_string();
        assert!(err.contains("benign") && err.contains("composite"));
    }
}
