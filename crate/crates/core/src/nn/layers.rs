use super::{cast, gemm, glorot_uniform, Mat, Real};
use crate::error::{Error, Result};
use crate::rng::Stream;

pub fn relu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

pub fn relu_grad<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

pub fn leaky_relu<T: Real>(x: T, slope: T) -> T {
    if x >= T::zero() {
        x
    } else {
        slope * x
    }
}

/// Subgradient at zero is 1.
pub fn leaky_relu_grad<T: Real>(x: T, slope: T) -> T {
    if x >= T::zero() {
        T::one()
    } else {
        slope
    }
}

/// Fully connected layer, `y = W x + b` with `W` stored `[output, input]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub input: usize,
    pub output: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            input,
            output,
            weight: vec![T::zero(); input * output],
            bias: vec![T::zero(); output],
        }
    }

    pub fn init(input: usize, output: usize, stream: &mut Stream) -> Self {
        let mut layer = Self::zeros(input, output);
        glorot_uniform(stream, input, output, &mut layer.weight);
        layer
    }

    pub fn from_parts(input: usize, output: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weight.len() != input * output || bias.len() != output {
            return Err(Error::Shape(format!(
                "dense {input}->{output} needs {} weights and {output} biases, got {} and {}",
                input * output,
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            input,
            output,
            weight,
            bias,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input, self.output)
    }

    fn check_input(&self, x: &[T], batch: usize) -> Result<()> {
        if x.len() != batch * self.input {
            return Err(Error::Shape(format!(
                "dense layer expects {batch} x {} inputs, got {}",
                self.input,
                x.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T], batch: usize) -> Result<Vec<T>> {
        self.check_input(x, batch)?;
        Ok(self.forward_unchecked(x, batch, true))
    }

    pub(crate) fn forward_unchecked(&self, x: &[T], batch: usize, with_bias: bool) -> Vec<T> {
        let mut y = vec![T::zero(); batch * self.output];
        if with_bias {
            for yb in y.chunks_exact_mut(self.output) {
                yb.copy_from_slice(&self.bias);
            }
        }
        gemm(
            Mat::new(x, batch, self.input),
            Mat::t(&self.weight, self.output, self.input),
            T::one(),
            &mut y,
        );
        y
    }

    /// Backward pass for `y = forward(x)`. Parameter gradients are
    /// accumulated into `grad`; the input gradient is returned when asked for.
    pub fn backward(
        &self,
        x: &[T],
        dy: &[T],
        batch: usize,
        grad: Option<&mut Dense<T>>,
        with_bias: bool,
        want_dx: bool,
    ) -> Option<Vec<T>> {
        debug_assert_eq!(dy.len(), batch * self.output);
        if let Some(g) = grad {
            gemm(
                Mat::t(dy, batch, self.output),
                Mat::new(x, batch, self.input),
                T::one(),
                &mut g.weight,
            );
            if with_bias {
                for dyb in dy.chunks_exact(self.output) {
                    for (gb, &d) in g.bias.iter_mut().zip(dyb) {
                        *gb += d;
                    }
                }
            }
        }
        want_dx.then(|| {
            let mut dx = vec![T::zero(); batch * self.input];
            gemm(
                Mat::new(dy, batch, self.output),
                Mat::new(&self.weight, self.output, self.input),
                T::zero(),
                &mut dx,
            );
            dx
        })
    }
}

/// 1-D cross-correlation with zero padding. Weights are `[out_ch, in_ch, kernel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv1d<T> {
    pub fn zeros(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            weight: vec![T::zero(); out_ch * in_ch * kernel],
            bias: vec![T::zero(); out_ch],
        }
    }

    pub fn init(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        stream: &mut Stream,
    ) -> Self {
        let mut layer = Self::zeros(in_ch, out_ch, kernel, stride, padding);
        glorot_uniform(stream, in_ch * kernel, out_ch * kernel, &mut layer.weight);
        layer
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_ch, self.out_ch, self.kernel, self.stride, self.padding)
    }

    fn patch(&self) -> usize {
        self.in_ch * self.kernel
    }

    /// `floor((in_len + 2 * padding - kernel) / stride) + 1`
    pub fn out_len(&self, in_len: usize) -> Result<usize> {
        conv_out_len(in_len, self.kernel, self.stride, self.padding)
    }

    /// Patches `[batch, out_len, in_ch * kernel]` of a `[batch, in_ch, in_len]` input.
    pub(crate) fn im2col(&self, x: &[T], batch: usize, in_len: usize, out_len: usize) -> Vec<T> {
        let patch = self.patch();
        let mut cols = vec![T::zero(); batch * out_len * patch];
        for b in 0..batch {
            let xb = &x[b * self.in_ch * in_len..(b + 1) * self.in_ch * in_len];
            for t in 0..out_len {
                let row = &mut cols[(b * out_len + t) * patch..(b * out_len + t + 1) * patch];
                let origin = (t * self.stride) as isize - self.padding as isize;
                if origin >= 0 && origin as usize + self.kernel <= in_len {
                    let o = origin as usize;
                    for (c, dst) in row.chunks_exact_mut(self.kernel).enumerate() {
                        dst.copy_from_slice(&xb[c * in_len + o..c * in_len + o + self.kernel]);
                    }
                    continue;
                }
                for c in 0..self.in_ch {
                    for k in 0..self.kernel {
                        let i = origin + k as isize;
                        if i >= 0 && (i as usize) < in_len {
                            row[c * self.kernel + k] = xb[c * in_len + i as usize];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &[T], batch: usize, in_len: usize, out_len: usize) -> Vec<T> {
        let patch = self.patch();
        let mut dx = vec![T::zero(); batch * self.in_ch * in_len];
        for b in 0..batch {
            let dxb = &mut dx[b * self.in_ch * in_len..(b + 1) * self.in_ch * in_len];
            for t in 0..out_len {
                let row = &dcols[(b * out_len + t) * patch..(b * out_len + t + 1) * patch];
                let origin = (t * self.stride) as isize - self.padding as isize;
                if origin >= 0 && origin as usize + self.kernel <= in_len {
                    let o = origin as usize;
                    for (c, src) in row.chunks_exact(self.kernel).enumerate() {
                        for (d, &v) in dxb[c * in_len + o..c * in_len + o + self.kernel].iter_mut().zip(src) {
                            *d += v;
                        }
                    }
                    continue;
                }
                for c in 0..self.in_ch {
                    for k in 0..self.kernel {
                        let i = origin + k as isize;
                        if i >= 0 && (i as usize) < in_len {
                            dxb[c * in_len + i as usize] += row[c * self.kernel + k];
                        }
                    }
                }
            }
        }
        dx
    }

    pub(crate) fn forward_cols(&self, cols: &[T], batch: usize, out_len: usize, with_bias: bool) -> Vec<T> {
        let patch = self.patch();
        let mut y = vec![T::zero(); batch * self.out_ch * out_len];
        let w = Mat::new(&self.weight, self.out_ch, patch);
        for (cb, yb) in cols
            .chunks_exact(out_len * patch)
            .zip(y.chunks_exact_mut(self.out_ch * out_len))
        {
            if with_bias {
                for (yo, &b) in yb.chunks_exact_mut(out_len).zip(&self.bias) {
                    yo.fill(b);
                }
            }
            gemm(w, Mat::t(cb, out_len, patch), T::one(), yb);
        }
        y
    }

    /// Forward pass over a `[batch, in_ch, in_len]` input.
    pub fn forward(&self, x: &[T], batch: usize, in_len: usize) -> Result<Vec<T>> {
        if x.len() != batch * self.in_ch * in_len {
            return Err(Error::Shape(format!(
                "conv expects {batch} x {} x {in_len} inputs, got {}",
                self.in_ch,
                x.len()
            )));
        }
        let out_len = self.out_len(in_len)?;
        let cols = self.im2col(x, batch, in_len, out_len);
        Ok(self.forward_cols(&cols, batch, out_len, true))
    }

    /// Backward pass given the forward patches. Parameter gradients are
    /// accumulated into `grad`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward_cols(
        &self,
        cols: &[T],
        dy: &[T],
        batch: usize,
        in_len: usize,
        out_len: usize,
        grad: Option<&mut Conv1d<T>>,
        with_bias: bool,
        want_dx: bool,
    ) -> Option<Vec<T>> {
        let patch = self.patch();
        let block = self.out_ch * out_len;
        if let Some(g) = grad {
            for (cb, dyb) in cols.chunks_exact(out_len * patch).zip(dy.chunks_exact(block)) {
                gemm(
                    Mat::new(dyb, self.out_ch, out_len),
                    Mat::new(cb, out_len, patch),
                    T::one(),
                    &mut g.weight,
                );
                if with_bias {
                    for (gb, dyo) in g.bias.iter_mut().zip(dyb.chunks_exact(out_len)) {
                        *gb += dyo.iter().copied().sum::<T>();
                    }
                }
            }
        }
        want_dx.then(|| {
            let mut dcols = vec![T::zero(); batch * out_len * patch];
            let w = Mat::new(&self.weight, self.out_ch, patch);
            for (dcb, dyb) in dcols.chunks_exact_mut(out_len * patch).zip(dy.chunks_exact(block)) {
                gemm(Mat::t(dyb, self.out_ch, out_len), w, T::zero(), dcb);
            }
            self.col2im(&dcols, batch, in_len, out_len)
        })
    }

    /// Backward pass from the raw input.
    pub fn backward(
        &self,
        x: &[T],
        dy: &[T],
        batch: usize,
        in_len: usize,
        grad: Option<&mut Conv1d<T>>,
        want_dx: bool,
    ) -> Result<Option<Vec<T>>> {
        let out_len = self.out_len(in_len)?;
        let cols = self.im2col(x, batch, in_len, out_len);
        Ok(self.backward_cols(&cols, dy, batch, in_len, out_len, grad, true, want_dx))
    }
}

pub fn conv_out_len(in_len: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = in_len + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return Err(Error::Shape(format!(
            "kernel {kernel} (stride {stride}) does not fit padded length {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Applies `leaky_relu` to a whole buffer.
pub(crate) fn leaky_relu_vec<T: Real>(z: &[T], slope: f64) -> Vec<T> {
    let s = cast::<T>(slope);
    z.iter().map(|&x| leaky_relu(x, s)).collect()
}
