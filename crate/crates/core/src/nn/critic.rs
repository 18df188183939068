use super::layers::{conv_out_len, leaky_relu_grad, leaky_relu_vec, Conv1d, Dense};
use serde::{Deserialize, Serialize};

use super::{cast, Real, Tensor, CRITIC_FILTERS};
use crate::error::{Error, Result};
use crate::rng::Stream;

/// A scalar-valued network whose input gradient can be differentiated again
/// with respect to its parameters.
///
/// All implementors are piecewise linear in their input, so the parameter
/// gradient of `<v, grad_x D(x)>` is taken through the network with its
/// activation pattern frozen at `x`.
pub trait Critic<T: Real>: Sized {
    type Tape;

    /// Samples per input trace.
    fn input_len(&self) -> usize;

    /// Same architecture with every parameter zero; used as a gradient buffer.
    fn zeros_like(&self) -> Self;

    fn params(&self) -> Vec<&[T]>;

    fn params_mut(&mut self) -> Vec<&mut [T]>;

    /// Scores for a flat `[batch, input_len]` input.
    fn forward_tape(&self, x: &[T], batch: usize) -> Result<(Vec<T>, Self::Tape)>;

    /// Backpropagates `dscore`. Parameter gradients accumulate into `grad`;
    /// the input gradient is returned when `want_input` is set.
    fn backward_tape(
        &self,
        tape: &Self::Tape,
        dscore: &[T],
        grad: Option<&mut Self>,
        want_input: bool,
    ) -> Option<Vec<T>>;

    /// Accumulates into `grad` the parameter gradient of
    /// `sum_i dout[i] * <v_i, grad_x D(x_i)>`, activations frozen at `tape`.
    fn directional_backward(&self, tape: &Self::Tape, v: &[T], dout: &[T], grad: &mut Self);
}

/// Three stride-2 conv + LeakyReLU blocks, flatten, and a linear scalar head.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T> {
    pub conv: [Conv1d<T>; 3],
    pub dense_out: Dense<T>,
    pub trace_len: usize,
    pub slope: f64,
}

/// Per-layer patches and pre-activations from one forward pass.
pub struct CriticTape<T> {
    batch: usize,
    lens: [usize; 4],
    cols: [Vec<T>; 3],
    pre: [Vec<T>; 3],
    feat: Vec<T>,
}

impl<T> CriticTape<T> {
    /// Flattened output of the last conv block, `[batch, features]`.
    pub fn features(&self) -> &[T] {
        &self.feat
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Shape hyperparameters of a [`Discriminator`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticArch {
    pub filters: [usize; 3],
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub leaky_slope: f64,
}

impl CriticArch {
    pub fn canonical(kernel: usize, stride: usize, padding: usize, leaky_slope: f64) -> Self {
        Self {
            filters: CRITIC_FILTERS,
            kernel,
            stride,
            padding,
            leaky_slope,
        }
    }

    /// Per-block output lengths for an input of `trace_len` samples.
    pub fn out_lens(&self, trace_len: usize) -> Result<[usize; 3]> {
        let mut lens = [0; 3];
        let mut len = trace_len;
        for l in &mut lens {
            len = conv_out_len(len, self.kernel, self.stride, self.padding)?;
            *l = len;
        }
        Ok(lens)
    }

    pub fn feature_len(&self, trace_len: usize) -> Result<usize> {
        Ok(self.filters[2] * self.out_lens(trace_len)?[2])
    }

    fn channels(&self) -> [(usize, usize); 3] {
        let f = self.filters;
        [(1, f[0]), (f[0], f[1]), (f[1], f[2])]
    }
}

impl<T: Real> Discriminator<T> {
    pub fn zeros(trace_len: usize, arch: &CriticArch) -> Result<Self> {
        let features = arch.feature_len(trace_len)?;
        let conv = arch
            .channels()
            .map(|(i, o)| Conv1d::zeros(i, o, arch.kernel, arch.stride, arch.padding));
        Ok(Self {
            conv,
            dense_out: Dense::zeros(features, 1),
            trace_len,
            slope: arch.leaky_slope,
        })
    }

    /// Conv weights in layer order, then the head, all from `stream`.
    pub fn init(trace_len: usize, arch: &CriticArch, stream: &mut Stream) -> Result<Self> {
        let features = arch.feature_len(trace_len)?;
        let conv = arch
            .channels()
            .map(|(i, o)| Conv1d::init(i, o, arch.kernel, arch.stride, arch.padding, stream));
        Ok(Self {
            conv,
            dense_out: Dense::init(features, 1, stream),
            trace_len,
            slope: arch.leaky_slope,
        })
    }

    pub fn arch(&self) -> CriticArch {
        CriticArch {
            filters: [self.conv[0].out_ch, self.conv[1].out_ch, self.conv[2].out_ch],
            kernel: self.conv[0].kernel,
            stride: self.conv[0].stride,
            padding: self.conv[0].padding,
            leaky_slope: self.slope,
        }
    }

    /// Signs of every pre-activation (`true` for the identity branch), in
    /// layer-major order. Changes in this pattern mark the kinks of `D`.
    pub fn activation_pattern(&self, x: &[T], batch: usize) -> Result<Vec<bool>> {
        self.check_input(x, batch)?;
        let tape = self.run(x, batch, None);
        Ok(tape.pre.iter().flatten().map(|&z| z >= T::zero()).collect())
    }

    /// Length of the flattened penultimate feature vector.
    pub fn feature_len(&self) -> usize {
        self.dense_out.input
    }

    pub fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, c) in self.conv.iter().enumerate() {
            out.push((format!("critic.conv{}.weight", i + 1), vec![c.out_ch, c.in_ch, c.kernel]));
            out.push((format!("critic.conv{}.bias", i + 1), vec![c.out_ch]));
        }
        out.push(("critic.dense_out.weight".into(), vec![1, self.dense_out.input]));
        out.push(("critic.dense_out.bias".into(), vec![1]));
        out
    }

    fn run(&self, x: &[T], batch: usize, masks: Option<&CriticTape<T>>) -> CriticTape<T> {
        let with_bias = masks.is_none();
        let slope = cast::<T>(self.slope);
        let mut lens = [self.trace_len, 0, 0, 0];
        let mut cols: [Vec<T>; 3] = Default::default();
        let mut pre: [Vec<T>; 3] = Default::default();
        let mut act = x.to_vec();
        for (i, conv) in self.conv.iter().enumerate() {
            let out_len = conv.out_len(lens[i]).expect("validated at construction");
            lens[i + 1] = out_len;
            cols[i] = conv.im2col(&act, batch, lens[i], out_len);
            pre[i] = conv.forward_cols(&cols[i], batch, out_len, with_bias);
            act = match masks {
                None => leaky_relu_vec(&pre[i], self.slope),
                Some(m) => pre[i]
                    .iter()
                    .zip(&m.pre[i])
                    .map(|(&t, &z)| t * leaky_relu_grad(z, slope))
                    .collect(),
            };
        }
        CriticTape {
            batch,
            lens,
            cols,
            pre,
            feat: act,
        }
    }

    /// Backward through the network using `inputs` for the layer inputs and
    /// `masks` for the activation slopes.
    fn backward_with(
        &self,
        inputs: &CriticTape<T>,
        masks: &CriticTape<T>,
        dscore: &[T],
        mut grad: Option<&mut Self>,
        with_bias: bool,
        want_input: bool,
    ) -> Option<Vec<T>> {
        let batch = inputs.batch;
        let slope = cast::<T>(self.slope);
        let mut d = self
            .dense_out
            .backward(
                &inputs.feat,
                dscore,
                batch,
                grad.as_deref_mut().map(|g| &mut g.dense_out),
                with_bias,
                true,
            )
            .unwrap();
        for i in (0..3).rev() {
            for (di, &z) in d.iter_mut().zip(&masks.pre[i]) {
                *di *= leaky_relu_grad(z, slope);
            }
            let need_dx = i > 0 || want_input;
            let next = self.conv[i].backward_cols(
                &inputs.cols[i],
                &d,
                batch,
                inputs.lens[i],
                inputs.lens[i + 1],
                grad.as_deref_mut().map(|g| &mut g.conv[i]),
                with_bias,
                need_dx,
            );
            match next {
                Some(dx) => d = dx,
                None => return None,
            }
        }
        Some(d)
    }

    fn check_input(&self, x: &[T], batch: usize) -> Result<()> {
        if x.len() != batch * self.trace_len {
            return Err(Error::Shape(format!(
                "critic expects {batch} traces of length {}, got {} samples",
                self.trace_len,
                x.len()
            )));
        }
        Ok(())
    }

    /// Scores and penultimate features for a `[batch, 1, L]` input.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let shape = x.shape();
        if shape.len() != 3 || shape[1] != 1 || shape[2] != self.trace_len {
            return Err(Error::Shape(format!(
                "critic expects [batch, 1, {}], got {shape:?}",
                self.trace_len
            )));
        }
        let batch = x.batch();
        let (scores, tape) = self.forward_tape(x.data(), batch)?;
        let f = self.feature_len();
        Ok((
            Tensor::new(vec![batch], scores)?,
            Tensor::new(vec![batch, f], tape.feat)?,
        ))
    }

    /// Scores only, for flat `[batch, L]` input.
    pub fn scores(&self, x: &[T], batch: usize) -> Result<Vec<T>> {
        Ok(self.forward_tape(x, batch)?.0)
    }
}

impl<T: Real> Critic<T> for Discriminator<T> {
    type Tape = CriticTape<T>;

    fn input_len(&self) -> usize {
        self.trace_len
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.trace_len, &self.arch())
            .expect("same shape as an existing critic")
    }

    fn params(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::with_capacity(8);
        for c in &self.conv {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        out.push(&self.dense_out.weight);
        out.push(&self.dense_out.bias);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::with_capacity(8);
        for c in &mut self.conv {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.push(&mut self.dense_out.weight);
        out.push(&mut self.dense_out.bias);
        out
    }

    fn forward_tape(&self, x: &[T], batch: usize) -> Result<(Vec<T>, CriticTape<T>)> {
        self.check_input(x, batch)?;
        let tape = self.run(x, batch, None);
        let scores = self.dense_out.forward_unchecked(&tape.feat, batch, true);
        Ok((scores, tape))
    }

    fn backward_tape(
        &self,
        tape: &CriticTape<T>,
        dscore: &[T],
        grad: Option<&mut Self>,
        want_input: bool,
    ) -> Option<Vec<T>> {
        self.backward_with(tape, tape, dscore, grad, true, want_input)
    }

    fn directional_backward(&self, tape: &CriticTape<T>, v: &[T], dout: &[T], grad: &mut Self) {
        // Tangent pass: the mask-frozen network is linear and bias-free in v.
        let tangent = self.run(v, tape.batch, Some(tape));
        self.backward_with(&tangent, tape, dout, Some(grad), false, false);
    }
}
