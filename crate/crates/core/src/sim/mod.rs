//! Synthetic device under test.
//!
//! A trace is laid out as
//!
//! ```text
//! | idle lead-in | 11 x 16 AES state bytes | 16 ciphertext output bytes | idle tail |
//! ```
//!
//! with every byte operation occupying `samples_per_op` samples at
//! `base_offset + hw_gain * HW(byte)`. Gaussian noise comes from a substream
//! keyed by `(seed, trace_index)`; tamper payloads add their activity on top
//! of the benign template.

pub mod aes;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use aes::{aes128_encrypt, hamming_weight, AesKey, Block};

use crate::error::{Error, Result};
use crate::rng::{substream_seed, Stream};
use crate::trace::{PowerTrace, Scenario, TraceSet};

pub const SIMULATOR_VERSION: &str = "1";

const AES_OPS: usize = 11 * 16;
const OUTPUT_OPS: usize = 16;
const PLAINTEXT_STREAM: u64 = 0x7074; // "pt"

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaintextMode {
    Fixed,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub raw_len: usize,
    /// Idle samples before the first AES operation.
    pub lead_in: usize,
    pub samples_per_op: usize,
    pub base_offset: f64,
    /// Amplitude per Hamming-weight unit. Negative: current draw shows up as a voltage dip.
    pub hw_gain: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Pre-loaded AES key, 32 hex digits.
    pub key: String,
    pub plaintext_mode: PlaintextMode,
    /// Plaintext used in fixed mode, 32 hex digits.
    pub fixed_plaintext: String,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            raw_len: 3000,
            lead_in: 500,
            samples_per_op: 7,
            base_offset: 0.040,
            hw_gain: -0.0296,
            noise_sigma: 0.0156,
            seed: 1,
            key: "2b7e151628aed2a6abf7158809cf4f3c".into(),
            plaintext_mode: PlaintextMode::Random,
            fixed_plaintext: "00112233445566778899aabbccddeeff".into(),
        }
    }
}

impl SimConfig {
    pub fn aes_start(&self) -> usize {
        self.lead_in
    }

    /// First sample after round 10.
    pub fn aes_end(&self) -> usize {
        self.lead_in + AES_OPS * self.samples_per_op
    }

    /// End of the ciphertext output segment.
    pub fn output_end(&self) -> usize {
        self.aes_end() + OUTPUT_OPS * self.samples_per_op
    }

    pub fn aes_key(&self) -> Result<AesKey> {
        AesKey::from_hex(&self.key)
            .ok_or_else(|| Error::Config(format!("sim.key `{}` is not 32 hex digits", self.key)))
    }

    pub fn plaintext(&self) -> Result<Block> {
        aes::parse_hex16(&self.fixed_plaintext).ok_or_else(|| {
            Error::Config(format!(
                "sim.fixed_plaintext `{}` is not 32 hex digits",
                self.fixed_plaintext
            ))
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_per_op == 0 {
            return Err(Error::Config("sim.samples_per_op must be positive".into()));
        }
        if self.output_end() > self.raw_len {
            return Err(Error::Config(format!(
                "AES activity ends at sample {} but sim.raw_len is {}",
                self.output_end(),
                self.raw_len
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "sim.noise_sigma {} must be finite and non-negative",
                self.noise_sigma
            )));
        }
        if !self.base_offset.is_finite() || !self.hw_gain.is_finite() {
            return Err(Error::Config("sim offsets must be finite".into()));
        }
        self.aes_key()?;
        self.plaintext()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrojanParams {
    pub trigger_byte: u8,
    pub trigger_rate: f64,
    pub extra_amplitude: f64,
    pub extra_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BitFlipParams {
    pub perturb_amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayParams {
    pub amplitude: f64,
    pub length: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PayloadKind {
    Benign,
    ConditionalTrojan(TrojanParams),
    BitFlip(BitFlipParams),
    DelayLoop(DelayParams),
    /// Never executes under the profiled workload; generates benign traces.
    Backdoor,
    /// Trojan, bit flip and delay loop active together.
    Composite {
        trojan: TrojanParams,
        bitflip: BitFlipParams,
        delay: DelayParams,
    },
}

/// Default parameters for every payload, as stored in the toolkit config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayloadDefaults {
    pub trigger_byte: u8,
    pub trigger_rate: f64,
    pub trojan_amplitude: f64,
    pub trojan_len: usize,
    pub bitflip_amplitude: f64,
    pub delay_amplitude: f64,
    pub delay_len: usize,
}

impl Default for PayloadDefaults {
    fn default() -> Self {
        Self {
            trigger_byte: 0x42,
            trigger_rate: 1.0,
            trojan_amplitude: 0.06,
            trojan_len: 96,
            bitflip_amplitude: 0.0078,
            delay_amplitude: 0.04,
            delay_len: 96,
        }
    }
}

impl PayloadDefaults {
    fn trojan(&self) -> TrojanParams {
        TrojanParams {
            trigger_byte: self.trigger_byte,
            trigger_rate: self.trigger_rate,
            extra_amplitude: self.trojan_amplitude,
            extra_len: self.trojan_len,
        }
    }

    fn bitflip(&self) -> BitFlipParams {
        BitFlipParams {
            perturb_amplitude: self.bitflip_amplitude,
        }
    }

    fn delay(&self) -> DelayParams {
        DelayParams {
            amplitude: self.delay_amplitude,
            length: self.delay_len,
        }
    }

    pub fn payload(&self, scenario: Scenario) -> PayloadKind {
        match scenario {
            Scenario::Benign => PayloadKind::Benign,
            Scenario::Trojan => PayloadKind::ConditionalTrojan(self.trojan()),
            Scenario::Bitflip => PayloadKind::BitFlip(self.bitflip()),
            Scenario::Delay => PayloadKind::DelayLoop(self.delay()),
            Scenario::Backdoor => PayloadKind::Backdoor,
            Scenario::Composite => PayloadKind::Composite {
                trojan: self.trojan(),
                bitflip: self.bitflip(),
                delay: self.delay(),
            },
        }
    }
}

impl PayloadKind {
    pub fn scenario(&self) -> Scenario {
        match self {
            PayloadKind::Benign => Scenario::Benign,
            PayloadKind::ConditionalTrojan(_) => Scenario::Trojan,
            PayloadKind::BitFlip(_) => Scenario::Bitflip,
            PayloadKind::DelayLoop(_) => Scenario::Delay,
            PayloadKind::Backdoor => Scenario::Backdoor,
            PayloadKind::Composite { .. } => Scenario::Composite,
        }
    }

    fn parts(&self) -> (Option<&TrojanParams>, Option<&BitFlipParams>, Option<&DelayParams>) {
        match self {
            PayloadKind::ConditionalTrojan(t) => (Some(t), None, None),
            PayloadKind::BitFlip(b) => (None, Some(b), None),
            PayloadKind::DelayLoop(d) => (None, None, Some(d)),
            PayloadKind::Composite {
                trojan,
                bitflip,
                delay,
            } => (Some(trojan), Some(bitflip), Some(delay)),
            PayloadKind::Benign | PayloadKind::Backdoor => (None, None, None),
        }
    }

    pub fn validate(&self, cfg: &SimConfig) -> Result<()> {
        let positive = |x: f64, what: &str| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must be finite and positive, got {x}")))
            }
        };
        let fits = |start: usize, len: usize, what: &str| {
            if len == 0 || start + len > cfg.raw_len {
                Err(Error::Config(format!(
                    "{what} segment [{start}, {}) does not fit raw length {}",
                    start + len,
                    cfg.raw_len
                )))
            } else {
                Ok(())
            }
        };
        let (trojan, bitflip, delay) = self.parts();
        if let Some(t) = trojan {
            positive(t.extra_amplitude, "trojan amplitude")?;
            if !(0.0..=1.0).contains(&t.trigger_rate) {
                return Err(Error::Config(format!(
                    "trojan trigger rate {} outside [0, 1]",
                    t.trigger_rate
                )));
            }
            fits(cfg.aes_end(), t.extra_len, "trojan burst")?;
        }
        if let Some(b) = bitflip {
            positive(b.perturb_amplitude, "bit-flip amplitude")?;
        }
        if let Some(d) = delay {
            positive(d.amplitude, "delay amplitude")?;
            fits(cfg.output_end(), d.length, "delay loop")?;
        }
        Ok(())
    }

    fn describe(&self, meta: &mut BTreeMap<String, String>) {
        let (trojan, bitflip, delay) = self.parts();
        if let Some(t) = trojan {
            meta.insert("payload.trigger_byte".into(), t.trigger_byte.to_string());
            meta.insert("payload.trigger_rate".into(), t.trigger_rate.to_string());
            meta.insert("payload.trojan_amplitude".into(), t.extra_amplitude.to_string());
            meta.insert("payload.trojan_len".into(), t.extra_len.to_string());
        }
        if let Some(b) = bitflip {
            meta.insert("payload.bitflip_amplitude".into(), b.perturb_amplitude.to_string());
        }
        if let Some(d) = delay {
            meta.insert("payload.delay_amplitude".into(), d.amplitude.to_string());
            meta.insert("payload.delay_len".into(), d.length.to_string());
        }
    }
}

/// Noiseless benign leakage for one encryption.
fn leakage_template(cfg: &SimConfig, round_states: &[Block; 11], output: &Block) -> Vec<f64> {
    let mut out = vec![cfg.base_offset; cfg.raw_len];
    let bytes = round_states.iter().flatten().chain(output.iter());
    for (op, &b) in bytes.enumerate() {
        let start = cfg.aes_start() + op * cfg.samples_per_op;
        let level = cfg.base_offset + cfg.hw_gain * hamming_weight(b) as f64;
        out[start..start + cfg.samples_per_op].fill(level);
    }
    out
}

fn add_plateau(samples: &mut [f64], start: usize, len: usize, amplitude: f64) {
    for x in &mut samples[start..start + len] {
        *x += amplitude;
    }
}

/// One trace for `(key, pt)` under `payload`.
///
/// The per-trace stream is consumed in a fixed order (trigger draw, flipped
/// bit, then one normal per sample) whatever the payload, so matched
/// `(seed, trace_index)` pairs share their noise realization across payloads.
pub fn simulate_trace(
    cfg: &SimConfig,
    key: &AesKey,
    pt: &Block,
    payload: &PayloadKind,
    trace_index: u64,
) -> Result<PowerTrace> {
    cfg.validate()?;
    payload.validate(cfg)?;

    let mut stream = Stream::substream(cfg.seed, trace_index);
    let trigger_draw = stream.uniform();
    let flip_bit = stream.below(128) as usize;

    let (ct, states) = aes128_encrypt(key, pt);
    let (trojan, bitflip, delay) = payload.parts();

    let mut output = ct;
    if bitflip.is_some() {
        output[flip_bit / 8] ^= 1 << (flip_bit % 8);
    }
    let mut samples = leakage_template(cfg, &states, &output);

    // Extra switching activity moves the trace the same way data leakage
    // does; the delay loop is modeled as a raised plateau instead.
    let activity = if cfg.hw_gain < 0.0 { -1.0 } else { 1.0 };
    if let Some(t) = trojan {
        if trigger_draw < t.trigger_rate || pt[0] == t.trigger_byte {
            add_plateau(&mut samples, cfg.aes_end(), t.extra_len, activity * t.extra_amplitude);
        }
    }
    if let Some(b) = bitflip {
        let start = cfg.aes_end();
        add_plateau(&mut samples, start, cfg.output_end() - start, activity * b.perturb_amplitude);
    }
    if let Some(d) = delay {
        add_plateau(&mut samples, cfg.output_end(), d.length, d.amplitude);
    }

    for x in &mut samples {
        let noisy = *x + cfg.noise_sigma * stream.normal();
        // Captures are stored as 32-bit floats.
        *x = noisy as f32 as f64;
    }
    PowerTrace::new(samples)
}

fn plaintext_for(cfg: &SimConfig, trace_index: u64) -> Result<Block> {
    match cfg.plaintext_mode {
        PlaintextMode::Fixed => cfg.plaintext(),
        PlaintextMode::Random => {
            let mut s = Stream::substream(substream_seed(cfg.seed, PLAINTEXT_STREAM), trace_index);
            let mut pt = [0u8; 16];
            pt.iter_mut().for_each(|b| *b = s.byte());
            Ok(pt)
        }
    }
}

/// `n` traces of one scenario. Trace `i` uses substream `i`, so any subset
/// can be regenerated independently of the others.
pub fn generate_dataset(cfg: &SimConfig, n: usize, payload: &PayloadKind) -> Result<TraceSet> {
    if n == 0 {
        return Err(Error::EmptyInput("requested zero traces"));
    }
    cfg.validate()?;
    payload.validate(cfg)?;
    let key = cfg.aes_key()?;
    let traces = (0..n as u64)
        .map(|i| simulate_trace(cfg, &key, &plaintext_for(cfg, i)?, payload, i))
        .collect::<Result<Vec<_>>>()?;

    let mut meta = BTreeMap::new();
    meta.insert("simulator".into(), SIMULATOR_VERSION.into());
    meta.insert("scenario".into(), payload.scenario().to_string());
    meta.insert("seed".into(), cfg.seed.to_string());
    meta.insert("sim.raw_len".into(), cfg.raw_len.to_string());
    meta.insert("sim.lead_in".into(), cfg.lead_in.to_string());
    meta.insert("sim.samples_per_op".into(), cfg.samples_per_op.to_string());
    meta.insert("sim.base_offset".into(), cfg.base_offset.to_string());
    meta.insert("sim.hw_gain".into(), cfg.hw_gain.to_string());
    meta.insert("sim.noise_sigma".into(), cfg.noise_sigma.to_string());
    meta.insert("sim.key".into(), cfg.key.clone());
    meta.insert(
        "sim.plaintext_mode".into(),
        match cfg.plaintext_mode {
            PlaintextMode::Fixed => "fixed".into(),
            PlaintextMode::Random => "random".into(),
        },
    );
    payload.describe(&mut meta);

    TraceSet::new(traces, vec![payload.scenario(); n], meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SimConfig {
        SimConfig {
            raw_len: 600,
            lead_in: 100,
            samples_per_op: 2,
            ..SimConfig::default()
        }
    }

    fn pt() -> Block {
        [0x10; 16]
    }

    #[test]
    fn noiseless_benign_is_template() {
        let cfg = SimConfig {
            noise_sigma: 0.0,
            ..small_cfg()
        };
        let key = cfg.aes_key().unwrap();
        let t = simulate_trace(&cfg, &key, &pt(), &PayloadKind::Benign, 3).unwrap();
        let (ct, states) = aes128_encrypt(&key, &pt());
        let expected = leakage_template(&cfg, &states, &ct);
        for (a, b) in t.samples().iter().zip(&expected) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert_eq!(t.samples()[0], cfg.base_offset as f32 as f64);
    }

    #[test]
    fn backdoor_matches_benign_bitwise() {
        let cfg = small_cfg();
        let a = generate_dataset(&cfg, 20, &PayloadKind::Benign).unwrap();
        let b = generate_dataset(&cfg, 20, &PayloadKind::Backdoor).unwrap();
        assert_eq!(a.traces(), b.traces());
        assert_eq!(b.labels()[0], Scenario::Backdoor);
    }

    #[test]
    fn delay_adds_exact_plateau() {
        let cfg = SimConfig {
            noise_sigma: 0.0,
            ..small_cfg()
        };
        let key = cfg.aes_key().unwrap();
        let d = DelayParams {
            amplitude: 0.05,
            length: 40,
        };
        let benign = simulate_trace(&cfg, &key, &pt(), &PayloadKind::Benign, 0).unwrap();
        let delayed = simulate_trace(&cfg, &key, &pt(), &PayloadKind::DelayLoop(d), 0).unwrap();
        let start = cfg.output_end();
        let window = start..start + d.length;
        let mean = |t: &PowerTrace| t.samples()[window.clone()].iter().sum::<f64>() / d.length as f64;
        assert!((mean(&delayed) - mean(&benign) - 0.05).abs() < 1e-7);
        assert_eq!(delayed.samples()[..start], benign.samples()[..start]);
    }

    #[test]
    fn delay_amplitude_monotone() {
        let cfg = SimConfig {
            noise_sigma: 0.0,
            ..small_cfg()
        };
        let key = cfg.aes_key().unwrap();
        let tail = |a: f64| {
            let p = PayloadKind::DelayLoop(DelayParams {
                amplitude: a,
                length: 50,
            });
            let t = simulate_trace(&cfg, &key, &pt(), &p, 0).unwrap();
            t.samples()[cfg.output_end()..].iter().sum::<f64>()
        };
        let means: Vec<f64> = [0.01, 0.02, 0.04, 0.08].iter().map(|&a| tail(a)).collect();
        assert!(means.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn trojan_trigger_conditions() {
        let cfg = SimConfig {
            noise_sigma: 0.0,
            ..small_cfg()
        };
        let key = cfg.aes_key().unwrap();
        let t = TrojanParams {
            trigger_byte: 0x42,
            trigger_rate: 0.0,
            extra_amplitude: 0.1,
            extra_len: 30,
        };
        let benign = |p: &Block| simulate_trace(&cfg, &key, p, &PayloadKind::Benign, 0).unwrap();
        let troj = |p: &Block, t: TrojanParams| {
            simulate_trace(&cfg, &key, p, &PayloadKind::ConditionalTrojan(t), 0).unwrap()
        };
        // Dormant: rate 0 and non-matching first byte.
        assert_eq!(troj(&pt(), t), benign(&pt()));
        // Plaintext trigger.
        let mut hot = pt();
        hot[0] = 0x42;
        assert_ne!(troj(&hot, t), benign(&hot));
        // Always-on rate.
        let always = TrojanParams { trigger_rate: 1.0, ..t };
        let on = troj(&pt(), always);
        let off = benign(&pt());
        let s = cfg.aes_end();
        // Default gain is negative, so the burst dips like data activity.
        assert!((on.samples()[s] - off.samples()[s] + 0.1).abs() < 1e-7);
    }

    #[test]
    fn bitflip_changes_output_segment_only() {
        let cfg = SimConfig {
            noise_sigma: 0.0,
            ..small_cfg()
        };
        let key = cfg.aes_key().unwrap();
        let p = PayloadKind::BitFlip(BitFlipParams {
            perturb_amplitude: 0.01,
        });
        let a = simulate_trace(&cfg, &key, &pt(), &PayloadKind::Benign, 5).unwrap();
        let b = simulate_trace(&cfg, &key, &pt(), &p, 5).unwrap();
        assert_eq!(a.samples()[..cfg.aes_end()], b.samples()[..cfg.aes_end()]);
        assert_eq!(a.samples()[cfg.output_end()..], b.samples()[cfg.output_end()..]);
        let diff: f64 = (cfg.aes_end()..cfg.output_end())
            .map(|i| b.samples()[i] - a.samples()[i])
            .sum();
        // The perturbation plus one flipped bit worth of Hamming weight.
        let spo = cfg.samples_per_op as f64;
        let base = -0.01 * 32.0;
        let flip = cfg.hw_gain.abs() * spo;
        assert!(((diff - base).abs() - flip).abs() < 1e-6, "diff {diff}");
    }

    #[test]
    fn dataset_is_deterministic_and_labelled() {
        let cfg = small_cfg();
        let a = generate_dataset(&cfg, 5, &PayloadKind::Benign).unwrap();
        let b = generate_dataset(&cfg, 5, &PayloadKind::Benign).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert_eq!(a.trace_len(), 600);
        assert_eq!(a.meta["scenario"], "benign");
        let other = generate_dataset(&SimConfig { seed: 2, ..cfg }, 5, &PayloadKind::Benign).unwrap();
        assert_ne!(a.traces(), other.traces());
    }

    #[test]
    fn errors() {
        let cfg = small_cfg();
        assert!(matches!(
            generate_dataset(&cfg, 0, &PayloadKind::Benign),
            Err(Error::EmptyInput(_))
        ));
        let too_long = PayloadKind::DelayLoop(DelayParams {
            amplitude: 0.1,
            length: 1000,
        });
        assert!(matches!(generate_dataset(&cfg, 1, &too_long), Err(Error::Config(_))));
        let short = SimConfig {
            raw_len: 300,
            ..small_cfg()
        };
        assert!(matches!(short.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn default_benign_summary_matches_reference_capture() {
        // Pooled statistics of the reference benign capture set.
        let set = generate_dataset(&SimConfig::default(), 3000, &PayloadKind::Benign).unwrap();
        let s = crate::trace::summarize(&set).unwrap();
        assert!((s.mean - -0.013).abs() <= 0.01, "{s:?}");
        assert!((s.std - 0.067).abs() <= 0.01, "{s:?}");
        assert!((s.min - -0.253).abs() <= 0.05, "{s:?}");
        assert!((s.max - 0.118).abs() <= 0.05, "{s:?}");
    }
}
