use super::critic::Critic;
use super::{cast, dot, Real};
use crate::error::{Error, Result};

/// Below this input-gradient norm, `d||g|| / dg` is taken as zero.
pub const NORM_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientPenalty<T> {
    /// `lambda * mean_i (||g_i|| - 1)^2`
    pub value: T,
    pub mean_norm: T,
}

/// WGAN-GP penalty at per-sample interpolates `eps * real + (1 - eps) * fake`.
///
/// The input gradient comes from one backward pass. When `grad` is given,
/// the penalty's parameter gradient is accumulated into it by
/// differentiating that backward pass once more with the activation pattern
/// of each interpolate held fixed.
#[allow(clippy::too_many_arguments)]
pub fn gradient_penalty<T: Real, C: Critic<T>>(
    critic: &C,
    real: &[T],
    fake: &[T],
    eps: &[T],
    batch: usize,
    lambda: f64,
    grad: Option<&mut C>,
) -> Result<GradientPenalty<T>> {
    let len = critic.input_len();
    if real.len() != batch * len || fake.len() != batch * len || eps.len() != batch {
        return Err(Error::Shape(format!(
            "penalty needs {batch} real/fake traces of length {len} and {batch} mixing weights"
        )));
    }
    let mut mixed = vec![T::zero(); batch * len];
    for b in 0..batch {
        let e = eps[b];
        let r = &real[b * len..(b + 1) * len];
        let f = &fake[b * len..(b + 1) * len];
        for ((m, &xr), &xf) in mixed[b * len..(b + 1) * len].iter_mut().zip(r).zip(f) {
            *m = e * xr + (T::one() - e) * xf;
        }
    }

    let (_, tape) = critic.forward_tape(&mixed, batch)?;
    let ones = vec![T::one(); batch];
    let g = critic
        .backward_tape(&tape, &ones, None, true)
        .expect("input gradient requested");

    let lambda_t = cast::<T>(lambda);
    let n = cast::<T>(batch as f64);
    let guard = cast::<T>(NORM_GUARD);
    let mut value = T::zero();
    let mut norm_sum = T::zero();
    let mut v = vec![T::zero(); batch * len];
    for b in 0..batch {
        let gb = &g[b * len..(b + 1) * len];
        let norm = dot(gb, gb).sqrt();
        let gap = norm - T::one();
        value += gap * gap;
        norm_sum += norm;
        if norm >= guard {
            // d/dg of lambda/B * (||g|| - 1)^2
            let scale = cast::<T>(2.0) * lambda_t / n * gap / norm;
            for (vi, &gi) in v[b * len..(b + 1) * len].iter_mut().zip(gb) {
                *vi = scale * gi;
            }
        }
    }
    if let Some(grad) = grad {
        critic.directional_backward(&tape, &v, &ones, grad);
    }
    Ok(GradientPenalty {
        value: lambda_t * value / n,
        mean_norm: norm_sum / n,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng::Stream;

    /// `D(x) = <w, x> + b`.
    #[derive(Clone)]
    pub(crate) struct LinearCritic {
        pub w: Vec<f64>,
        pub b: Vec<f64>,
    }

    impl Critic<f64> for LinearCritic {
        type Tape = (Vec<f64>, usize);

        fn input_len(&self) -> usize {
            self.w.len()
        }

        fn zeros_like(&self) -> Self {
            Self {
                w: vec![0.0; self.w.len()],
                b: vec![0.0],
            }
        }

        fn params(&self) -> Vec<&[f64]> {
            vec![&self.w, &self.b]
        }

        fn params_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.w, &mut self.b]
        }

        fn forward_tape(&self, x: &[f64], batch: usize) -> Result<(Vec<f64>, Self::Tape)> {
            let n = self.w.len();
            let s = (0..batch).map(|i| dot(&self.w, &x[i * n..(i + 1) * n]) + self.b[0]).collect();
            Ok((s, (x.to_vec(), batch)))
        }

        fn backward_tape(
            &self,
            tape: &Self::Tape,
            dscore: &[f64],
            grad: Option<&mut Self>,
            want_input: bool,
        ) -> Option<Vec<f64>> {
            let n = self.w.len();
            if let Some(g) = grad {
                for (i, &d) in dscore.iter().enumerate() {
                    for j in 0..n {
                        g.w[j] += d * tape.0[i * n + j];
                    }
                    g.b[0] += d;
                }
            }
            want_input.then(|| dscore.iter().flat_map(|&d| self.w.iter().map(move |w| d * w)).collect())
        }

        fn directional_backward(&self, _tape: &Self::Tape, v: &[f64], dout: &[f64], grad: &mut Self) {
            let n = self.w.len();
            for (i, &d) in dout.iter().enumerate() {
                for j in 0..n {
                    grad.w[j] += d * v[i * n + j];
                }
            }
        }
    }

    fn random_batch(s: &mut Stream, batch: usize, len: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let real = (0..batch * len).map(|_| s.normal()).collect();
        let fake = (0..batch * len).map(|_| s.normal()).collect();
        let eps = (0..batch).map(|_| s.uniform()).collect();
        (real, fake, eps)
    }

    #[test]
    fn unit_norm_linear_critic_has_zero_penalty() {
        let len = 4;
        let c = LinearCritic {
            w: vec![0.5; len],
            b: vec![0.3],
        };
        let mut s = Stream::new(1);
        let (r, f, e) = random_batch(&mut s, 3, len);
        let mut g = c.zeros_like();
        let p = gradient_penalty(&c, &r, &f, &e, 3, 10.0, Some(&mut g)).unwrap();
        assert!(p.value.abs() < 1e-24);
        assert!((p.mean_norm - 1.0).abs() < 1e-15);
        assert!(g.w.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn scaled_sum_critic_closed_form() {
        let len = 9;
        let c = LinearCritic {
            w: vec![2.0; len],
            b: vec![0.0],
        };
        let mut s = Stream::new(2);
        let (r, f, e) = random_batch(&mut s, 2, len);
        let p = gradient_penalty(&c, &r, &f, &e, 2, 10.0, None).unwrap();
        let expected = 10.0 * (2.0 * (len as f64).sqrt() - 1.0).powi(2);
        assert!((p.value - expected).abs() < 1e-9);
    }

    #[test]
    fn linear_critic_penalty_gradient_closed_form() {
        // P = lambda (||w|| - 1)^2, dP/dw = 2 lambda (||w|| - 1) w / ||w||.
        let c = LinearCritic {
            w: vec![0.3, -1.2, 0.8],
            b: vec![0.0],
        };
        let mut s = Stream::new(3);
        let (r, f, e) = random_batch(&mut s, 4, 3);
        let mut g = c.zeros_like();
        gradient_penalty(&c, &r, &f, &e, 4, 10.0, Some(&mut g)).unwrap();
        let norm = dot(&c.w, &c.w).sqrt();
        for (gi, wi) in g.w.iter().zip(&c.w) {
            assert!((gi - 20.0 * (norm - 1.0) * wi / norm).abs() < 1e-12);
        }
        assert_eq!(g.b[0], 0.0);
    }

    #[test]
    fn zero_gradient_uses_guard() {
        let c = LinearCritic {
            w: vec![0.0; 5],
            b: vec![1.0],
        };
        let mut s = Stream::new(4);
        let (r, f, e) = random_batch(&mut s, 2, 5);
        let mut g = c.zeros_like();
        let p = gradient_penalty(&c, &r, &f, &e, 2, 10.0, Some(&mut g)).unwrap();
        assert_eq!(p.value, 10.0);
        assert!(g.w.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn shape_errors() {
        let c = LinearCritic {
            w: vec![1.0; 3],
            b: vec![0.0],
        };
        assert!(gradient_penalty(&c, &[0.0; 6], &[0.0; 6], &[0.5], 2, 10.0, None).is_err());
    }
}
