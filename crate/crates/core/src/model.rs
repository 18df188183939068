//! Enrolled screening model: networks, normalization, crop window and
//! calibrated thresholds, plus the `PSCM` model file.
//!
//! File layout: `"PSCM"` | u16 version = 1 | u32 manifest_len | JSON manifest |
//! f32 little-endian tensor blobs in manifest order. All integers are
//! little-endian.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{at_path, Error, FormatError, Result};
use crate::nn::{train_with, Critic, CriticArch, Discriminator, EpochLog, Generator, TrainConfig, Tensor, GENERATOR_HIDDEN};
use crate::rng::substream_seed;
use crate::scoring::{anomaly_scores, calibrate_threshold, decide_all, ScreeningDecision, Threshold};
use crate::trace::{
    compute_norm_stats, crop_set, normalize, split_train_val, NormStats, PreprocessConfig, TraceSet,
};

pub const MAGIC: [u8; 4] = *b"PSCM";
pub const VERSION: u16 = 1;

/// Substream tag under the training seed for the train/validation split.
const SPLIT_STREAM: u64 = 4;

/// One epoch of loss history as stored in the model file (no wall time, so
/// identical training runs give identical files).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub critic_loss: f64,
    pub generator_loss: f64,
    pub gradient_penalty: f64,
    pub wasserstein: f64,
}

impl From<&EpochLog> for LossRecord {
    fn from(e: &EpochLog) -> Self {
        Self {
            epoch: e.epoch,
            critic_loss: e.critic_loss,
            generator_loss: e.generator_loss,
            gradient_penalty: e.gradient_penalty,
            wasserstein: e.wasserstein,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningModel {
    pub generator: Generator<f32>,
    pub critic: Discriminator<f32>,
    pub norm: NormStats,
    pub preprocess: PreprocessConfig,
    pub thresholds: Vec<Threshold>,
    pub train: TrainConfig,
    pub history: Vec<LossRecord>,
}

impl ScreeningModel {
    pub fn trace_len(&self) -> usize {
        self.critic.input_len()
    }

    /// Threshold calibrated for `target_fpr`, if one was stored.
    pub fn threshold(&self, target_fpr: f64) -> Option<&Threshold> {
        self.thresholds
            .iter()
            .find(|t| (t.target_fpr - target_fpr).abs() < 1e-12)
    }

    /// Crops raw traces to the enrollment window (traces already at window
    /// length pass through) and normalizes with the stored statistics.
    pub fn prepare(&self, set: &TraceSet) -> Result<TraceSet> {
        if !(self.norm.sigma > 0.0 && self.norm.sigma.is_finite() && self.norm.mu.is_finite()) {
            return Err(Error::CorruptModel(format!(
                "stored normalization sigma {} cannot normalize",
                self.norm.sigma
            )));
        }
        if set.is_empty() {
            return Ok(set.clone());
        }
        let window = self.preprocess.window_len();
        let cropped = if set.trace_len() == window {
            set.clone()
        } else if set.trace_len() >= self.preprocess.crop_end {
            crop_set(set, self.preprocess.crop_start, self.preprocess.crop_end)?
        } else {
            return Err(Error::Shape(format!(
                "traces of length {} fit neither the {window}-sample window nor its raw crop [{}, {})",
                set.trace_len(),
                self.preprocess.crop_start,
                self.preprocess.crop_end
            )));
        };
        normalize(&cropped, &self.norm)
    }

    /// Anomaly scores for raw or window-length traces.
    pub fn scores(&self, set: &TraceSet) -> Result<Vec<f64>> {
        anomaly_scores(&self.critic, &self.prepare(set)?)
    }

    /// Decisions for every trace against `tau`, in input order.
    pub fn batch_screen(&self, set: &TraceSet, tau: f64) -> Result<Vec<ScreeningDecision>> {
        Ok(decide_all(&self.scores(set)?, tau))
    }

    /// Flattened penultimate critic activations, row-major `n x feature_len`.
    pub fn features(&self, set: &TraceSet) -> Result<Vec<f64>> {
        let prepared = self.prepare(set)?;
        let mut out = Vec::with_capacity(set.len() * self.critic.feature_len());
        for chunk in prepared.traces().chunks(256) {
            let x: Vec<f32> = chunk
                .iter()
                .flat_map(|t| t.samples().iter().map(|&v| v as f32))
                .collect();
            let x = Tensor::new(vec![chunk.len(), 1, self.trace_len()], x)?;
            let (_, feat) = self.critic.forward(&x)?;
            out.extend(feat.data().iter().map(|&v| v as f64));
        }
        Ok(out)
    }

    fn tensor_specs(&self) -> Vec<TensorSpec> {
        self.generator
            .tensor_specs()
            .into_iter()
            .chain(self.critic.tensor_specs())
            .map(|(name, shape)| TensorSpec { name, shape })
            .collect()
    }

    fn manifest(&self) -> Manifest {
        Manifest {
            architecture: Architecture {
                latent_dim: self.generator.latent_dim(),
                trace_len: self.trace_len(),
                generator_hidden: GENERATOR_HIDDEN,
                critic: self.critic.arch(),
            },
            tensors: self.tensor_specs(),
            norm: self.norm,
            preprocess: self.preprocess,
            thresholds: self.thresholds.clone(),
            seed: self.train.seed,
            train: self.train.clone(),
            history: self.history.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Architecture {
    latent_dim: usize,
    trace_len: usize,
    generator_hidden: [usize; 2],
    critic: CriticArch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorSpec {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    architecture: Architecture,
    tensors: Vec<TensorSpec>,
    norm: NormStats,
    preprocess: PreprocessConfig,
    thresholds: Vec<Threshold>,
    train: TrainConfig,
    seed: u64,
    history: Vec<LossRecord>,
}

pub fn write_model_to<W: Write>(model: &ScreeningModel, mut w: W) -> Result<()> {
    let manifest = serde_json::to_vec(&model.manifest()).map_err(FormatError::Json)?;
    let len = u32::try_from(manifest.len())
        .map_err(|_| Error::Config("model manifest exceeds 4 GiB".into()))?;
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&manifest)?;
    for p in model.generator.params().into_iter().chain(model.critic.params()) {
        for v in p {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_model(model: &ScreeningModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = io::BufWriter::new(fs::File::create(path).map_err(at_path(path))?);
    write_model_to(model, &mut w)?;
    w.flush()?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8], FormatError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                section,
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

pub fn read_model_from(bytes: &[u8]) -> Result<ScreeningModel> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            expected: MAGIC,
            found: magic,
        }
        .into());
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let len = u32::from_le_bytes(r.take(4, "manifest length")?.try_into().unwrap()) as usize;
    let raw = r.take(len, "manifest")?;
    let text = std::str::from_utf8(raw).map_err(|_| FormatError::Utf8)?;
    let m: Manifest = serde_json::from_str(text).map_err(FormatError::Json)?;

    let arch = &m.architecture;
    if arch.generator_hidden != GENERATOR_HIDDEN {
        return Err(FormatError::ManifestMismatch(format!(
            "generator hidden sizes {:?} are not supported",
            arch.generator_hidden
        ))
        .into());
    }
    let mut generator = Generator::<f32>::zeros(arch.latent_dim, arch.trace_len);
    let mut critic = Discriminator::<f32>::zeros(arch.trace_len, &arch.critic)
        .map_err(|e| FormatError::ManifestMismatch(e.to_string()))?;
    let expected: Vec<TensorSpec> = generator
        .tensor_specs()
        .into_iter()
        .chain(critic.tensor_specs())
        .map(|(name, shape)| TensorSpec { name, shape })
        .collect();
    if expected != m.tensors {
        return Err(FormatError::ManifestMismatch(
            "tensor list does not match the declared architecture".into(),
        )
        .into());
    }
    for p in generator.params_mut().into_iter().chain(critic.params_mut()) {
        let blob = r.take(4 * p.len(), "tensor data")?;
        for (v, b) in p.iter_mut().zip(blob.chunks_exact(4)) {
            *v = f32::from_le_bytes(b.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::CorruptModel("non-finite parameter".into()));
            }
        }
    }
    let rest = bytes.len() - r.pos;
    if rest != 0 {
        return Err(FormatError::TrailingBytes(rest).into());
    }
    if !(m.norm.sigma > 0.0) {
        return Err(Error::CorruptModel(format!(
            "normalization sigma {} is not positive",
            m.norm.sigma
        )));
    }
    if m.preprocess.window_len() != arch.trace_len {
        return Err(FormatError::ManifestMismatch(format!(
            "crop window of {} samples does not match trace length {}",
            m.preprocess.window_len(),
            arch.trace_len
        ))
        .into());
    }
    Ok(ScreeningModel {
        generator,
        critic,
        norm: m.norm,
        preprocess: m.preprocess,
        thresholds: m.thresholds,
        train: m.train,
        history: m.history,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ScreeningModel> {
    let path = path.as_ref();
    read_model_from(&fs::read(path).map_err(at_path(path))?)
}

/// Enrollment result: the model plus the validation scores its thresholds
/// were calibrated on.
pub struct Enrollment {
    pub model: ScreeningModel,
    pub val_scores: Vec<f64>,
    pub train_size: usize,
    /// Full per-epoch log including wall time.
    pub log: Vec<EpochLog>,
}

/// Crop, split, normalize with training statistics, train, then calibrate
/// one threshold per target FPR on the held-out benign scores.
pub fn enroll(
    benign_raw: &TraceSet,
    preprocess: &PreprocessConfig,
    train: &TrainConfig,
    target_fprs: &[f64],
    on_epoch: impl FnMut(&EpochLog),
) -> Result<Enrollment> {
    benign_raw.ensure_benign()?;
    if benign_raw.is_empty() {
        return Err(Error::EmptyInput("no enrollment traces"));
    }
    preprocess.validate(benign_raw.trace_len())?;
    train.validate()?;
    let cropped = crop_set(benign_raw, preprocess.crop_start, preprocess.crop_end)?;
    let (train_set, val_set) = split_train_val(
        &cropped,
        preprocess.val_fraction,
        substream_seed(train.seed, SPLIT_STREAM),
    )?;
    let norm = compute_norm_stats(&train_set)?;
    let trained = train_with(&normalize(&train_set, &norm)?, train, on_epoch)?;
    let val_scores = anomaly_scores(&trained.critic, &normalize(&val_set, &norm)?)?;
    let thresholds = target_fprs
        .iter()
        .map(|&f| calibrate_threshold(&val_scores, f))
        .collect::<Result<Vec<_>>>()?;
    let history = trained.log.epochs.iter().map(LossRecord::from).collect();
    Ok(Enrollment {
        model: ScreeningModel {
            generator: trained.generator,
            critic: trained.critic,
            norm,
            preprocess: *preprocess,
            thresholds,
            train: train.clone(),
            history,
        },
        val_scores,
        train_size: train_set.len(),
        log: trained.log.epochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use crate::trace::{PowerTrace, Scenario};

    fn tiny_arch() -> CriticArch {
        CriticArch {
            filters: [2, 3, 4],
            kernel: 3,
            stride: 2,
            padding: 1,
            leaky_slope: 0.2,
        }
    }

    fn tiny_model(seed: u64) -> ScreeningModel {
        let mut s = Stream::new(seed);
        let train = TrainConfig {
            seed,
            kernel: 3,
            padding: 1,
            ..TrainConfig::default()
        };
        ScreeningModel {
            generator: Generator::init(4, 16, &mut s),
            critic: Discriminator::init(16, &tiny_arch(), &mut s).unwrap(),
            norm: NormStats { mu: -0.01, sigma: 0.07 },
            preprocess: PreprocessConfig {
                crop_start: 4,
                crop_end: 20,
                val_fraction: 0.2,
            },
            thresholds: vec![Threshold {
                tau: 0.25,
                target_fpr: 0.05,
                calibration_size: 40,
            }],
            train,
            history: vec![LossRecord {
                epoch: 0,
                critic_loss: 1.5,
                generator_loss: -0.25,
                gradient_penalty: 0.1,
                wasserstein: 0.3,
            }],
        }
    }

    fn bytes(m: &ScreeningModel) -> Vec<u8> {
        let mut out = Vec::new();
        write_model_to(m, &mut out).unwrap();
        out
    }

    fn random_set(n: usize, len: usize, seed: u64) -> TraceSet {
        let mut s = Stream::new(seed);
        let traces = (0..n)
            .map(|_| PowerTrace::new((0..len).map(|_| s.normal() * 0.05).collect()).unwrap())
            .collect();
        TraceSet::new(traces, vec![Scenario::Benign; n], Default::default()).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = tiny_model(3);
        let b = bytes(&m);
        let back = read_model_from(&b).unwrap();
        assert_eq!(back, m);
        assert_eq!(bytes(&back), b);
        let x = random_set(100, 24, 9);
        let before = m.scores(&x).unwrap();
        let after = back.scores(&x).unwrap();
        assert!(before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn blob_accounting() {
        let m = tiny_model(4);
        let b = bytes(&m);
        let len = u32::from_le_bytes(b[6..10].try_into().unwrap()) as usize;
        let manifest: serde_json::Value = serde_json::from_slice(&b[10..10 + len]).unwrap();
        let params: usize = manifest["tensors"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| t["shape"].as_array().unwrap().iter().map(|d| d.as_u64().unwrap() as usize).product::<usize>())
            .sum();
        assert_eq!(b.len() - 10 - len, 4 * params);
    }

    #[test]
    fn format_errors() {
        let good = bytes(&tiny_model(5));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(read_model_from(&bad), Err(Error::Format(FormatError::BadMagic { .. }))));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(
            read_model_from(&bad),
            Err(Error::Format(FormatError::UnsupportedVersion(2)))
        ));
        assert!(matches!(
            read_model_from(&good[..good.len() - 3]),
            Err(Error::Format(FormatError::Truncated { section: "tensor data", .. }))
        ));
        assert!(matches!(
            read_model_from(&good[..12]),
            Err(Error::Format(FormatError::Truncated { section: "manifest", .. }))
        ));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(read_model_from(&long), Err(Error::Format(FormatError::TrailingBytes(1)))));
    }

    #[test]
    fn manifest_shape_mismatch() {
        let good = bytes(&tiny_model(6));
        let len = u32::from_le_bytes(good[6..10].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&good[10..10 + len]).unwrap();
        let edited = text.replacen("[2,1,3]", "[2,1,4]", 1);
        assert_ne!(edited, text);
        let mut b = good[..6].to_vec();
        b.extend_from_slice(&(edited.len() as u32).to_le_bytes());
        b.extend_from_slice(edited.as_bytes());
        b.extend_from_slice(&good[10 + len..]);
        assert!(matches!(
            read_model_from(&b),
            Err(Error::Format(FormatError::ManifestMismatch(_)))
        ));
    }

    #[test]
    fn prepare_crops_raw_and_accepts_window() {
        let m = tiny_model(7);
        let raw = random_set(3, 30, 1);
        let cropped = crop_set(&raw, 4, 20).unwrap();
        assert_eq!(m.scores(&raw).unwrap(), m.scores(&cropped).unwrap());
        assert!(matches!(m.scores(&random_set(2, 10, 1)), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_sigma_is_corrupt() {
        let mut m = tiny_model(8);
        m.norm.sigma = 0.0;
        assert!(matches!(m.scores(&random_set(1, 16, 2)), Err(Error::CorruptModel(_))));
    }

    #[test]
    fn threshold_lookup() {
        let m = tiny_model(9);
        assert_eq!(m.threshold(0.05).unwrap().tau, 0.25);
        assert!(m.threshold(0.01).is_none());
    }
}
