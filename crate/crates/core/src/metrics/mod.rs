//! Detection metrics and the figure data behind the evaluation report.

pub mod records;
pub mod svg;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::scoring::{calibrate_threshold, Outcome, ScreeningDecision, Threshold};
use crate::trace::Scenario;

pub use records::{read_records, write_records};

pub const DEFAULT_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub auc: f64,
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub curve: Vec<(f64, f64)>,
}

fn check_scores(scores: &[f64], what: &'static str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::EmptyInput(what));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Data(format!("{what}: score {i} is not finite")));
    }
    Ok(())
}

/// Mann-Whitney AUC: the probability that a tampered score exceeds a benign
/// one, ties counting one half.
pub fn roc_auc(benign: &[f64], tampered: &[f64]) -> Result<RocResult> {
    check_scores(benign, "benign scores")?;
    check_scores(tampered, "tampered scores")?;
    let (nb, nt) = (benign.len(), tampered.len());

    // Pooled ascending order; tampered entries carry `true`.
    let mut pooled: Vec<(f64, bool)> = benign
        .iter()
        .map(|&s| (s, false))
        .chain(tampered.iter().map(|&s| (s, true)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Twice the tampered rank sum, using midranks for ties, keeps every
    // intermediate an exact integer.
    let mut twice_rank_sum = 0u128;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let twice_midrank = (i + 1 + j) as u128; // ranks i+1..=j
        let tied_tampered = pooled[i..j].iter().filter(|p| p.1).count() as u128;
        twice_rank_sum += twice_midrank * tied_tampered;
        i = j;
    }
    let nt128 = nt as u128;
    let twice_u = twice_rank_sum - nt128 * (nt128 + 1);
    let auc = twice_u as f64 / (2 * nb * nt) as f64;

    // Sweep thresholds from high to low.
    let mut curve = vec![(0.0, 0.0)];
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut k = pooled.len();
    while k > 0 {
        let v = pooled[k - 1].0;
        while k > 0 && pooled[k - 1].0 == v {
            if pooled[k - 1].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k -= 1;
        }
        curve.push((fp as f64 / nb as f64, tp as f64 / nt as f64));
    }
    Ok(RocResult { auc, curve })
}

/// True-positive rate at the threshold calibrated on `benign` for `target_fpr`.
pub fn tpr_at_fpr(benign: &[f64], tampered: &[f64], target_fpr: f64) -> Result<(f64, Threshold)> {
    check_scores(tampered, "tampered scores")?;
    let t = calibrate_threshold(benign, target_fpr)?;
    let hits = tampered.iter().filter(|&&s| s >= t.tau).count();
    Ok((hits as f64 / tampered.len() as f64, t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Tampered labels are positives; a flag is a positive prediction.
pub fn confusion(decisions: &[ScreeningDecision], labels: &[Scenario]) -> Result<ConfusionMatrix> {
    if decisions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} decisions but {} labels",
            decisions.len(),
            labels.len()
        )));
    }
    let mut m = ConfusionMatrix::default();
    for (d, l) in decisions.iter().zip(labels) {
        match (l.is_benign(), d.outcome) {
            (false, Outcome::Flag) => m.tp += 1,
            (false, Outcome::Approve) => m.fn_ += 1,
            (true, Outcome::Flag) => m.fp += 1,
            (true, Outcome::Approve) => m.tn += 1,
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` ascending edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Uniform bins over `range`, or over the data's min/max when `None`. The
/// last bin is closed; values outside the range are not counted.
pub fn histogram(scores: &[f64], n_bins: usize, range: Option<(f64, f64)>) -> Result<Histogram> {
    if n_bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let (lo, hi) = match range {
        Some((lo, hi)) if lo.is_finite() && hi.is_finite() && lo < hi => (lo, hi),
        Some((lo, hi)) => return Err(Error::Config(format!("invalid histogram range [{lo}, {hi}]"))),
        None => data_range(scores),
    };
    let width = (hi - lo) / n_bins as f64;
    let edges: Vec<f64> = (0..=n_bins)
        .map(|i| if i == n_bins { hi } else { lo + i as f64 * width })
        .collect();
    let mut counts = vec![0usize; n_bins];
    for &s in scores {
        if !(lo..=hi).contains(&s) {
            continue;
        }
        let bin = (((s - lo) / width) as usize).min(n_bins - 1);
        counts[bin] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Finite min/max, widened when degenerate.
fn data_range(scores: &[f64]) -> (f64, f64) {
    let finite = scores.iter().copied().filter(|s| s.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Pooled range of several score sets, for histograms that share bins.
pub fn pooled_range(sets: &[&[f64]]) -> (f64, f64) {
    let all: Vec<f64> = sets.iter().flat_map(|s| s.iter().copied()).collect();
    data_range(&all)
}

/// The `k` highest scores as `(trace_id, score)`, ties broken by lower id.
pub fn rank_top_anomalies(scores: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.into_iter().take(k).map(|i| (i, scores[i])).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub n: usize,
    pub dims: usize,
    /// Row-major `n x dims` coordinates.
    pub coords: Vec<f64>,
    /// Covariance eigenvalues, descending.
    pub variances: Vec<f64>,
    /// Row-major `dims x features` unit components.
    pub components: Vec<f64>,
}

const PCA_MAX_ITERS: usize = 20_000;
const PCA_TOL: f64 = 1e-14;

/// PCA by power iteration with deflation on the implicit covariance
/// `Xc^T Xc / (n - 1)`, never forming the `features x features` matrix.
///
/// Each component's largest-magnitude loading is made positive.
pub fn pca_embed(features: &[f64], n: usize, dims: usize) -> Result<Embedding> {
    pca_embed_with(features, n, dims, PCA_TOL, PCA_MAX_ITERS)
}

/// [`pca_embed`] with an explicit stopping rule: iteration stops once
/// successive unit iterates differ by less than `tol` (up to sign) or after
/// `max_iters` steps.
pub fn pca_embed_with(features: &[f64], n: usize, dims: usize, tol: f64, max_iters: usize) -> Result<Embedding> {
    if n < 2 {
        return Err(Error::EmptyInput("embedding needs at least two rows"));
    }
    if features.len() % n != 0 || features.is_empty() {
        return Err(Error::Shape(format!(
            "{} feature values do not split into {n} rows",
            features.len()
        )));
    }
    let f = features.len() / n;
    if dims == 0 || dims > f {
        return Err(Error::Config(format!("cannot embed {f} features into {dims} dims")));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite feature value".into()));
    }

    let mut mean = vec![0.0; f];
    for row in features.chunks_exact(f) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<f64> = features
        .chunks_exact(f)
        .flat_map(|row| row.iter().zip(&mean).map(|(&v, &m)| v - m))
        .collect();

    // v -> Xc^T Xc v / (n - 1)
    let apply = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; f];
        for row in centered.chunks_exact(f) {
            let p: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
            for (o, &a) in out.iter_mut().zip(row) {
                *o += p * a;
            }
        }
        out.iter_mut().for_each(|o| *o /= (n - 1) as f64);
        out
    };

    // Below this the deflated operator has nothing left; rounding alone
    // can otherwise lead the iteration back to an earlier component.
    let total_variance: f64 = centered.iter().map(|x| x * x).sum::<f64>() / (n - 1) as f64;
    let floor = 1e-12 * total_variance;

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(dims);
    let mut variances = Vec::with_capacity(dims);
    let mut start = Stream::new(0x5eed_0fca);
    for _ in 0..dims {
        let mut v: Vec<f64> = (0..f).map(|_| start.uniform_range(-1.0, 1.0)).collect();
        orthonormalize(&mut v, &components);
        let mut lambda = 0.0;
        for _ in 0..max_iters.max(1) {
            let mut w = apply(&v);
            let before = norm(&w);
            let after = project_out(&mut w, &components);
            if after <= floor || after <= 1e-10 * before {
                lambda = 0.0;
                break;
            }
            w.iter_mut().for_each(|x| *x /= after);
            lambda = dot(&w, &apply(&w));
            let diff = w
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let diff_flipped = w
                .iter()
                .zip(&v)
                .map(|(a, b)| (a + b) * (a + b))
                .sum::<f64>()
                .sqrt();
            v = w;
            if diff.min(diff_flipped) < tol {
                break;
            }
        }
        fix_sign(&mut v);
        components.push(v);
        variances.push(lambda.max(0.0));
    }

    let mut coords = vec![0.0; n * dims];
    for (row, out) in centered.chunks_exact(f).zip(coords.chunks_exact_mut(dims)) {
        for (o, c) in out.iter_mut().zip(&components) {
            *o = dot(row, c);
        }
    }
    Ok(Embedding {
        n,
        dims,
        coords,
        variances,
        components: components.concat(),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Removes the span of `basis` twice, for stability, and returns the
/// remaining norm.
fn project_out(v: &mut [f64], basis: &[Vec<f64>]) -> f64 {
    for _ in 0..2 {
        for b in basis {
            let p = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
    }
    norm(v)
}

/// Unit vector orthogonal to `basis`; falls back to the first unit axis
/// outside the span when `v` has nothing left.
fn orthonormalize(v: &mut [f64], basis: &[Vec<f64>]) {
    let before = norm(v);
    let len = project_out(v, basis);
    if len > 1e-8 * before {
        v.iter_mut().for_each(|x| *x /= len);
        return;
    }
    for axis in 0..v.len() {
        v.iter_mut().for_each(|x| *x = 0.0);
        v[axis] = 1.0;
        let len = project_out(v, basis);
        if len > 1e-6 {
            v.iter_mut().for_each(|x| *x /= len);
            return;
        }
    }
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario: String,
    pub n: usize,
    pub auc: f64,
    pub tpr_at_1: f64,
    pub tpr_at_5: f64,
}

/// One row per scenario: AUC against the benign validation scores and TPR at
/// the 1% and 5% thresholds calibrated on them.
pub fn scenario_report(benign_val: &[f64], scenarios: &[(String, Vec<f64>)]) -> Result<Vec<ScenarioRow>> {
    scenarios
        .iter()
        .map(|(name, scores)| {
            Ok(ScenarioRow {
                scenario: name.clone(),
                n: scores.len(),
                auc: roc_auc(benign_val, scores)?.auc,
                tpr_at_1: tpr_at_fpr(benign_val, scores, 0.01)?.0,
                tpr_at_5: tpr_at_fpr(benign_val, scores, 0.05)?.0,
            })
        })
        .collect()
}
