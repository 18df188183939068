//! Anomaly scores, FPR-targeted thresholds and Approve/Flag decisions.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{at_path, Error, Result};
use crate::nn::{Critic, Discriminator};
use crate::trace::{PowerTrace, Scenario, TraceSet};

/// Traces per critic forward pass when scoring large sets.
const SCORE_CHUNK: usize = 256;

/// `s(x) = -D(x)`; higher is more anomalous.
pub fn anomaly_score(critic: &Discriminator<f32>, trace: &PowerTrace) -> Result<f64> {
    let x: Vec<f32> = trace.samples().iter().map(|&v| v as f32).collect();
    Ok(-(critic.scores(&x, 1)?[0] as f64))
}

/// Scores for every trace of an already normalized set, in order.
pub fn anomaly_scores(critic: &Discriminator<f32>, set: &TraceSet) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(set.len());
    for chunk in set.traces().chunks(SCORE_CHUNK) {
        let x: Vec<f32> = chunk
            .iter()
            .flat_map(|t| t.samples().iter().map(|&v| v as f32))
            .collect();
        if x.len() != chunk.len() * critic.input_len() {
            return Err(Error::Shape(format!(
                "critic expects traces of length {}, got {}",
                critic.input_len(),
                chunk[0].len()
            )));
        }
        out.extend(critic.scores(&x, chunk.len())?.into_iter().map(|d| -(d as f64)));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub tau: f64,
    pub target_fpr: f64,
    pub calibration_size: usize,
}

/// Threshold flagging `floor(target_fpr * n)` of the calibration scores.
///
/// With `k` flagged scores the cut sits halfway between the `(n-k)`-th and
/// `(n-k+1)`-th order statistics. `k = 0` puts it one above the maximum and
/// `k = n` at the minimum.
pub fn calibrate_threshold(benign_val_scores: &[f64], target_fpr: f64) -> Result<Threshold> {
    if !(target_fpr > 0.0 && target_fpr <= 1.0) {
        return Err(Error::Config(format!("target FPR {target_fpr} outside (0, 1]")));
    }
    if let Some(i) = benign_val_scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Data(format!("calibration score {i} is not finite")));
    }
    let n = benign_val_scores.len();
    // Tolerate representation error in products like 0.01 * 100.
    let expected = target_fpr * n as f64;
    if expected + 1e-9 < 1.0 {
        return Err(Error::Resolution { n, target_fpr });
    }
    let k = ((expected + 1e-9).floor() as usize).min(n);
    let mut sorted = benign_val_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tau = if k == 0 {
        sorted[n - 1] + 1.0
    } else if k == n {
        sorted[0]
    } else {
        0.5 * (sorted[n - k - 1] + sorted[n - k])
    };
    Ok(Threshold {
        tau,
        target_fpr,
        calibration_size: n,
    })
}

/// Calibration from a labeled score sequence; any non-benign label is
/// evaluation leakage and is rejected.
pub fn calibrate_labeled(scores: &[f64], labels: &[Scenario], target_fpr: f64) -> Result<Threshold> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(index) = labels.iter().position(|l| !l.is_benign()) {
        return Err(Error::Leakage {
            label: labels[index].to_string(),
            index,
        });
    }
    calibrate_threshold(scores, target_fpr)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Approve,
    Flag,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Approve => "approve",
            Outcome::Flag => "flag",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningDecision {
    pub score: f64,
    pub tau: f64,
    pub outcome: Outcome,
}

/// Flag iff `score >= tau`.
pub fn decide(score: f64, tau: f64) -> ScreeningDecision {
    let outcome = if score >= tau { Outcome::Flag } else { Outcome::Approve };
    ScreeningDecision { score, tau, outcome }
}

pub fn decide_all(scores: &[f64], tau: f64) -> Vec<ScreeningDecision> {
    scores.iter().map(|&s| decide(s, tau)).collect()
}

/// `trace_id,score,tau,outcome`
pub fn write_decisions_to<W: Write>(decisions: &[ScreeningDecision], mut w: W) -> Result<()> {
    writeln!(w, "trace_id,score,tau,outcome")?;
    for (id, d) in decisions.iter().enumerate() {
        writeln!(w, "{id},{},{},{}", d.score, d.tau, d.outcome)?;
    }
    Ok(())
}

pub fn write_decisions(decisions: &[ScreeningDecision], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = io::BufWriter::new(fs::File::create(path).map_err(at_path(path))?);
    write_decisions_to(decisions, &mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_to(n: usize) -> Vec<f64> {
        (1..=n).map(|i| i as f64).collect()
    }

    fn flagged(scores: &[f64], tau: f64) -> usize {
        scores.iter().filter(|&&s| s >= tau).count()
    }

    #[test]
    fn order_statistic_examples() {
        let s = one_to(100);
        let t5 = calibrate_threshold(&s, 0.05).unwrap();
        assert_eq!(t5.tau, 95.5);
        assert_eq!(flagged(&s, t5.tau), 5);
        let t1 = calibrate_threshold(&s, 0.01).unwrap();
        assert_eq!(t1.tau, 99.5);
        assert_eq!(flagged(&s, t1.tau), 1);
        assert_eq!(t1.calibration_size, 100);
    }

    #[test]
    fn four_hundred_at_one_percent_flags_four() {
        // Shuffled distinct scores so sorting matters.
        let s: Vec<f64> = (0..400).map(|i| ((i * 263) % 400) as f64 * 0.37 - 20.0).collect();
        let t = calibrate_threshold(&s, 0.01).unwrap();
        assert_eq!(flagged(&s, t.tau), 4);
    }

    #[test]
    fn edge_rules() {
        let s = [3.0, 1.0, 2.0];
        assert_eq!(calibrate_threshold(&s, 1.0).unwrap().tau, 1.0);
        assert!(matches!(
            calibrate_threshold(&s, 0.2),
            Err(Error::Resolution { n: 3, .. })
        ));
        assert!(matches!(calibrate_threshold(&[], 0.5), Err(Error::Resolution { .. })));
        assert!(matches!(calibrate_threshold(&[1.0, f64::NAN], 0.5), Err(Error::Data(_))));
        assert!(calibrate_threshold(&s, 0.0).is_err());
        assert!(calibrate_threshold(&s, 1.5).is_err());
    }

    #[test]
    fn boundary_is_inclusive() {
        assert_eq!(decide(2.0, 2.0).outcome, Outcome::Flag);
        assert_eq!(decide(1.999, 2.0).outcome, Outcome::Approve);
    }

    #[test]
    fn raising_tau_never_adds_flags() {
        let s: Vec<f64> = (0..50).map(|i| ((i * 17) % 23) as f64).collect();
        let mut last = usize::MAX;
        for tau in (-5..30).map(|t| t as f64 * 0.9) {
            let n = decide_all(&s, tau).iter().filter(|d| d.outcome == Outcome::Flag).count();
            assert!(n <= last);
            last = n;
        }
    }

    #[test]
    fn leakage_guard() {
        let labels = [Scenario::Benign, Scenario::Delay, Scenario::Benign];
        match calibrate_labeled(&[1.0, 2.0, 3.0], &labels, 0.5) {
            Err(Error::Leakage { label, index }) => {
                assert_eq!(label, "delay");
                assert_eq!(index, 1);
            }
            other => panic!("expected leakage error, got {other:?}"),
        }
        let backdoor = [Scenario::Backdoor; 2];
        assert!(calibrate_labeled(&[1.0, 2.0], &backdoor, 0.5).is_err());
        assert!(calibrate_labeled(&[1.0, 2.0], &[Scenario::Benign; 2], 0.5).is_ok());
    }

    #[test]
    fn decisions_csv() {
        let d = decide_all(&[0.5, 2.0], 1.0);
        let mut out = Vec::new();
        write_decisions_to(&d, &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "trace_id,score,tau,outcome\n0,0.5,1,approve\n1,2,1,flag\n"
        );
    }
}
