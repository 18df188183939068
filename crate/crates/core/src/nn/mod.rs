//! From-scratch network core: layers with exact gradients, Adam, and the
//! one-class WGAN-GP trainer.
//!
//! Everything is generic over [`Real`] so that gradient checks can run in
//! `f64` while training and inference run in `f32`.

mod adam;
mod critic;
mod generator;
mod layers;
mod penalty;
mod tensor;
mod train;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

pub use adam::{adam_step, Adam, AdamState};
pub use critic::{Critic, CriticArch, CriticTape, Discriminator};
pub use generator::{GenTape, Generator};
pub use layers::{leaky_relu, leaky_relu_grad, relu, relu_grad, Conv1d, Dense};
pub use penalty::{gradient_penalty, GradientPenalty, NORM_GUARD};
pub use tensor::Tensor;
pub use train::{train, train_with, EpochLog, TrainConfig, TrainLog, TrainedModel};

pub const LATENT_DIM: usize = 100;
pub const GENERATOR_HIDDEN: [usize; 2] = [256, 512];
pub const CRITIC_FILTERS: [usize; 3] = [32, 64, 128];

pub trait Real:
    Float + FromPrimitive + Sum + AddAssign + SubAssign + MulAssign + Debug + Default + Send + Sync + 'static
{
    /// Strided `C = alpha * A B + beta * C` with `A: m x k`, `B: k x n`.
    ///
    /// # Safety
    /// Every index reachable through the given shapes and strides must be in
    /// bounds of the corresponding slice.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// A dense matrix view: slice plus `(rows, cols)` and whether it is read
/// transposed from row-major storage.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, T> Mat<'a, T> {
    /// Row-major `rows x cols`.
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, transposed: false }
    }

    /// Transpose of a row-major `rows x cols` buffer, so the view is `cols x rows`.
    pub fn t(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self { data, rows: cols, cols: rows, transposed: true }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.rows as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c (row-major m x n) = a b + beta * c`.
pub(crate) fn gemm<T: Real>(a: Mat<T>, b: Mat<T>, beta: T, c: &mut [T]) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(k, b.rows, "inner dimensions differ");
    assert!(a.data.len() >= m * k && b.data.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the asserts above bound every strided index by the slice lengths.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

pub(crate) fn cast<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("finite constant")
}

/// Sum of products with eight independent lanes, reduced in a fixed order.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Symmetric uniform init in `±sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot_uniform<T: Real>(
    stream: &mut crate::rng::Stream,
    fan_in: usize,
    fan_out: usize,
    out: &mut [T],
) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for w in out {
        *w = cast(stream.uniform_range(-limit, limit));
    }
}
