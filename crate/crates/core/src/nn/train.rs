use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::critic::{Critic, CriticArch, Discriminator};
use super::generator::Generator;
use super::penalty::gradient_penalty;
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::trace::TraceSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_gp: f64,
    pub n_critic: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub batch: usize,
    pub latent_dim: usize,
    pub seed: u64,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub leaky_slope: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_gp: 10.0,
            n_critic: 5,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            epochs: 400,
            batch: 128,
            latent_dim: super::LATENT_DIM,
            seed: 1,
            kernel: 5,
            stride: 2,
            padding: 2,
            leaky_slope: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn critic_arch(&self) -> CriticArch {
        CriticArch::canonical(self.kernel, self.stride, self.padding, self.leaky_slope)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("train.{what} is out of range")));
        if !(self.lambda_gp > 0.0) {
            return bad("lambda_gp");
        }
        if !(self.lr > 0.0) {
            return bad("lr");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            return bad("beta1");
        }
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta2");
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad("leaky_slope");
        }
        for (v, name) in [
            (self.n_critic, "n_critic"),
            (self.epochs, "epochs"),
            (self.batch, "batch"),
            (self.latent_dim, "latent_dim"),
            (self.kernel, "kernel"),
            (self.stride, "stride"),
        ] {
            if v == 0 {
                return bad(name);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over critic updates of `mean D(fake) - mean D(real) + penalty`.
    pub critic_loss: f64,
    /// Mean over generator updates of `-mean D(fake)`.
    pub generator_loss: f64,
    pub gradient_penalty: f64,
    /// Mean `mean D(real) - mean D(fake)` over critic updates.
    pub wasserstein: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

pub struct TrainedModel {
    pub generator: Generator<f32>,
    pub critic: Discriminator<f32>,
    pub log: TrainLog,
}

// Substream tags under the training seed.
const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

fn draw_latents(stream: &mut Stream, n: usize) -> Vec<f32> {
    (0..n).map(|_| stream.normal() as f32).collect()
}

pub fn train(benign_train: &TraceSet, cfg: &TrainConfig) -> Result<TrainedModel> {
    train_with(benign_train, cfg, |_| {})
}

/// One-class WGAN-GP training.
///
/// Each full batch of real traces drives `n_critic` critic updates (fresh
/// fakes and interpolation weights each time) followed by one generator
/// update. The trailing partial batch of an epoch is dropped and the batch
/// order is reshuffled every epoch.
pub fn train_with(
    benign_train: &TraceSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainedModel> {
    cfg.validate()?;
    benign_train.ensure_benign()?;
    let n = benign_train.len();
    let len = benign_train.trace_len();
    if n == 0 {
        return Err(Error::EmptyInput("no training traces"));
    }
    if cfg.batch > n {
        return Err(Error::Config(format!(
            "batch size {} exceeds the {n} training traces",
            cfg.batch
        )));
    }
    let data: Vec<f32> = benign_train
        .traces()
        .iter()
        .flat_map(|t| t.samples().iter().map(|&x| x as f32))
        .collect();

    let mut init = Stream::substream(cfg.seed, INIT_STREAM);
    let mut generator = Generator::<f32>::init(cfg.latent_dim, len, &mut init);
    let mut critic = Discriminator::<f32>::init(len, &cfg.critic_arch(), &mut init)?;
    let mut shuffle = Stream::substream(cfg.seed, SHUFFLE_STREAM);
    let mut noise = Stream::substream(cfg.seed, NOISE_STREAM);

    let mut opt_g = Adam::new(&generator.params(), cfg.lr, cfg.beta1, cfg.beta2);
    let mut opt_d = Adam::new(&critic.params(), cfg.lr, cfg.beta1, cfg.beta2);

    let b = cfg.batch;
    let inv_b = 1.0 / b as f32;
    let mut order: Vec<usize> = (0..n).collect();
    let mut real = vec![0f32; b * len];
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        shuffle.shuffle(&mut order);
        let (mut c_sum, mut gp_sum, mut w_sum, mut c_count) = (0f64, 0f64, 0f64, 0usize);
        let (mut g_sum, mut g_count) = (0f64, 0usize);

        for chunk in order.chunks_exact(b) {
            for (slot, &i) in chunk.iter().enumerate() {
                real[slot * len..(slot + 1) * len].copy_from_slice(&data[i * len..(i + 1) * len]);
            }

            let mut both = Vec::with_capacity(2 * b * len);
            for _ in 0..cfg.n_critic {
                // Critic update: minimize mean D(fake) - mean D(real) + GP.
                let z = draw_latents(&mut noise, b * cfg.latent_dim);
                let (fake, _) = generator.forward_raw(&z, b)?;
                let eps: Vec<f32> = (0..b).map(|_| noise.uniform() as f32).collect();

                both.clear();
                both.extend_from_slice(&real);
                both.extend_from_slice(&fake);
                let (scores, tape) = critic.forward_tape(&both, 2 * b)?;
                let mean_real = scores[..b].iter().map(|&s| s as f64).sum::<f64>() / b as f64;
                let mean_fake = scores[b..].iter().map(|&s| s as f64).sum::<f64>() / b as f64;
                let dscore: Vec<f32> = (0..2 * b).map(|i| if i < b { -inv_b } else { inv_b }).collect();

                let mut grad_d = critic.zeros_like();
                critic.backward_tape(&tape, &dscore, Some(&mut grad_d), false);
                let gp = gradient_penalty(&critic, &real, &fake, &eps, b, cfg.lambda_gp, Some(&mut grad_d))?;
                opt_d.step(critic.params_mut(), grad_d.params());

                let gp_value = gp.value as f64;
                c_sum += mean_fake - mean_real + gp_value;
                gp_sum += gp_value;
                w_sum += mean_real - mean_fake;
                c_count += 1;
            }

            // Generator update: maximize mean D(G(z)).
            let z = draw_latents(&mut noise, b * cfg.latent_dim);
            let (fake, gen_tape) = generator.forward_raw(&z, b)?;
            let (scores, tape) = critic.forward_tape(&fake, b)?;
            let dscore = vec![-inv_b; b];
            let dfake = critic
                .backward_tape(&tape, &dscore, None, true)
                .expect("input gradient requested");
            let mut grad_g = generator.zeros_like();
            generator.backward(&gen_tape, &dfake, &mut grad_g);
            opt_g.step(generator.params_mut(), grad_g.params());
            g_sum += -scores.iter().map(|&s| s as f64).sum::<f64>() / b as f64;
            g_count += 1;
        }

        let mean = |s: f64, c: usize| if c == 0 { 0.0 } else { s / c as f64 };
        let entry = EpochLog {
            epoch,
            critic_loss: mean(c_sum, c_count),
            generator_loss: mean(g_sum, g_count),
            gradient_penalty: mean(gp_sum, c_count),
            wasserstein: mean(w_sum, c_count),
            seconds: started.elapsed().as_secs_f64(),
        };
        for (value, what) in [
            (entry.critic_loss, "critic loss"),
            (entry.generator_loss, "generator loss"),
            (entry.gradient_penalty, "gradient penalty"),
        ] {
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, what });
            }
        }
        on_epoch(&entry);
        log.epochs.push(entry);
    }

    Ok(TrainedModel {
        generator,
        critic,
        log,
    })
}
