use super::layers::{relu, relu_grad, Dense};
use super::{Real, Tensor, GENERATOR_HIDDEN, LATENT_DIM};
use crate::error::{Error, Result};
use crate::rng::Stream;

/// `latent -> 256 -> ReLU -> 512 -> ReLU -> L`, linear output reshaped to `(1, L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    pub dense1: Dense<T>,
    pub dense2: Dense<T>,
    pub dense_out: Dense<T>,
}

/// Activations kept for the backward pass.
pub struct GenTape<T> {
    z: Vec<T>,
    pre1: Vec<T>,
    h1: Vec<T>,
    pre2: Vec<T>,
    h2: Vec<T>,
    batch: usize,
}

impl<T: Real> Generator<T> {
    pub fn zeros(latent_dim: usize, trace_len: usize) -> Self {
        let [h1, h2] = GENERATOR_HIDDEN;
        Self {
            dense1: Dense::zeros(latent_dim, h1),
            dense2: Dense::zeros(h1, h2),
            dense_out: Dense::zeros(h2, trace_len),
        }
    }

    pub fn init(latent_dim: usize, trace_len: usize, stream: &mut Stream) -> Self {
        let [h1, h2] = GENERATOR_HIDDEN;
        Self {
            dense1: Dense::init(latent_dim, h1, stream),
            dense2: Dense::init(h1, h2, stream),
            dense_out: Dense::init(h2, trace_len, stream),
        }
    }

    pub fn canonical(trace_len: usize, stream: &mut Stream) -> Self {
        Self::init(LATENT_DIM, trace_len, stream)
    }

    pub fn latent_dim(&self) -> usize {
        self.dense1.input
    }

    pub fn trace_len(&self) -> usize {
        self.dense_out.output
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.latent_dim(), self.trace_len())
    }

    pub fn params(&self) -> Vec<&[T]> {
        vec![
            &self.dense1.weight,
            &self.dense1.bias,
            &self.dense2.weight,
            &self.dense2.bias,
            &self.dense_out.weight,
            &self.dense_out.bias,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            &mut self.dense1.weight,
            &mut self.dense1.bias,
            &mut self.dense2.weight,
            &mut self.dense2.bias,
            &mut self.dense_out.weight,
            &mut self.dense_out.bias,
        ]
    }

    /// Named tensors in serialization order.
    pub fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (name, d) in [("dense1", &self.dense1), ("dense2", &self.dense2), ("dense_out", &self.dense_out)] {
            out.push((format!("generator.{name}.weight"), vec![d.output, d.input]));
            out.push((format!("generator.{name}.bias"), vec![d.output]));
        }
        out
    }

    /// Flat `[batch, latent]` latents to flat `[batch, L]` traces.
    pub fn forward_raw(&self, z: &[T], batch: usize) -> Result<(Vec<T>, GenTape<T>)> {
        if z.len() != batch * self.latent_dim() {
            return Err(Error::Shape(format!(
                "generator expects {batch} x {} latents, got {}",
                self.latent_dim(),
                z.len()
            )));
        }
        let pre1 = self.dense1.forward_unchecked(z, batch, true);
        let h1: Vec<T> = pre1.iter().map(|&x| relu(x)).collect();
        let pre2 = self.dense2.forward_unchecked(&h1, batch, true);
        let h2: Vec<T> = pre2.iter().map(|&x| relu(x)).collect();
        let out = self.dense_out.forward_unchecked(&h2, batch, true);
        let tape = GenTape {
            z: z.to_vec(),
            pre1,
            h1,
            pre2,
            h2,
            batch,
        };
        Ok((out, tape))
    }

    /// `[batch, latent]` to `[batch, 1, L]`.
    pub fn forward(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        if z.shape().len() != 2 || z.shape()[1] != self.latent_dim() {
            return Err(Error::Shape(format!(
                "latent tensor {:?} does not match latent dimension {}",
                z.shape(),
                self.latent_dim()
            )));
        }
        let batch = z.batch();
        let (out, _) = self.forward_raw(z.data(), batch)?;
        Tensor::new(vec![batch, 1, self.trace_len()], out)
    }

    /// Accumulates parameter gradients for the upstream gradient `dout` (`[batch, L]`).
    pub fn backward(&self, tape: &GenTape<T>, dout: &[T], grad: &mut Generator<T>) {
        let batch = tape.batch;
        let mut dh2 = self
            .dense_out
            .backward(&tape.h2, dout, batch, Some(&mut grad.dense_out), true, true)
            .unwrap();
        for (d, &p) in dh2.iter_mut().zip(&tape.pre2) {
            *d *= relu_grad(p);
        }
        let mut dh1 = self
            .dense2
            .backward(&tape.h1, &dh2, batch, Some(&mut grad.dense2), true, true)
            .unwrap();
        for (d, &p) in dh1.iter_mut().zip(&tape.pre1) {
            *d *= relu_grad(p);
        }
        self.dense1.backward(&tape.z, &dh1, batch, Some(&mut grad.dense1), true, false);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_params_give_zero_traces() {
        let g = Generator::<f32>::zeros(LATENT_DIM, 16);
        let mut s = Stream::new(1);
        let z: Vec<f32> = (0..3 * LATENT_DIM).map(|_| s.normal() as f32).collect();
        let out = g.forward(&Tensor::new(vec![3, LATENT_DIM], z).unwrap()).unwrap();
        assert_eq!(out.shape(), &[3, 1, 16]);
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn canonical_output_shape() {
        let g = Generator::<f32>::canonical(1500, &mut Stream::new(2));
        let z = Tensor::zeros(vec![128, LATENT_DIM]);
        assert_eq!(g.forward(&z).unwrap().shape(), &[128, 1, 1500]);
    }

    #[test]
    fn batch_consistency() {
        let g = Generator::<f64>::init(LATENT_DIM, 12, &mut Stream::new(3));
        let mut s = Stream::new(4);
        let z: Vec<f64> = (0..2 * LATENT_DIM).map(|_| s.normal()).collect();
        let (both, _) = g.forward_raw(&z, 2).unwrap();
        let (a, _) = g.forward_raw(&z[..LATENT_DIM], 1).unwrap();
        let (b, _) = g.forward_raw(&z[LATENT_DIM..], 1).unwrap();
        assert_eq!(both, [a, b].concat());
    }

    #[test]
    fn latent_mismatch() {
        let g = Generator::<f32>::zeros(LATENT_DIM, 8);
        assert!(matches!(g.forward(&Tensor::zeros(vec![2, 99])), Err(Error::Shape(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut s = Stream::new(8);
        let g = Generator::<f64>::init(4, 3, &mut s);
        let batch = 2;
        let z: Vec<f64> = (0..batch * 4).map(|_| s.normal()).collect();
        let r: Vec<f64> = (0..batch * 3).map(|_| s.normal()).collect();
        let loss = |g: &Generator<f64>| -> f64 {
            g.forward_raw(&z, batch).unwrap().0.iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let (_, tape) = g.forward_raw(&z, batch).unwrap();
        let mut grad = g.zeros_like();
        g.backward(&tape, &r, &mut grad);
        let analytic: Vec<f64> = grad.params().concat();
        let h = 1e-4;
        let n = analytic.len();
        for i in (0..n).step_by(7) {
            let bump = |delta: f64| {
                let mut p = g.clone();
                let mut flat = 0;
                for slice in p.params_mut() {
                    if i < flat + slice.len() {
                        slice[i - flat] += delta;
                        break;
                    }
                    flat += slice.len();
                }
                loss(&p)
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            let a = analytic[i];
            assert!((a - fd).abs() / a.abs().max(fd.abs()).max(1e-8) < 1e-5, "param {i}: {a} vs {fd}");
        }
    }
}
