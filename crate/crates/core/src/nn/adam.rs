use super::{cast, Real};

/// First/second moment accumulators mirroring a parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn for_params(params: &[&[T]]) -> Self {
        Self {
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<T: Real>(
    params: Vec<&mut [T]>,
    grads: Vec<&[T]>,
    state: &mut AdamState<T>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cast::<T>(beta1), cast::<T>(beta2));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    let lr = cast::<T>(lr);
    let eps = cast::<T>(eps);
    for (((p, g), m), v) in params
        .into_iter()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        assert_eq!(p.len(), g.len());
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + one_b1 * gi;
            v[i] = b2 * v[i] + one_b2 * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Adam with fixed hyperparameters and its own state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: AdamState<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &[&[T]], lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            state: AdamState::for_params(params),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [T]>, grads: Vec<&[T]>) {
        adam_step(params, grads, &mut self.state, self.lr, self.beta1, self.beta2, self.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut p = vec![1.0f64, -2.0, 0.5];
        let g = vec![3.0, -0.01, 250.0];
        let mut st = AdamState::for_params(&[&p]);
        adam_step(vec![&mut p], vec![&g], &mut st, 1e-3, 0.5, 0.9, 1e-8);
        let expected = [1.0 - 1e-3, -2.0 + 1e-3, 0.5 - 1e-3];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.25f32, -4.0];
        let g = vec![0.0; 2];
        let mut st = AdamState::for_params(&[&p]);
        for _ in 0..50 {
            adam_step(vec![&mut p], vec![&g], &mut st, 0.1, 0.5, 0.9, 1e-8);
        }
        assert_eq!(p, vec![0.25, -4.0]);
        assert_eq!(st.step, 50);
    }

    #[test]
    fn two_steps_match_scalar_recurrence() {
        // Independent scalar recurrence of the textbook update.
        let (lr, b1, b2, eps) = (0.1f64, 0.5f64, 0.9f64, 1e-8f64);
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * 1.0;
            v = b2 * v + (1.0 - b2) * 1.0;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        // Both bias-corrected ratios are exactly one here.
        assert!((x + 0.2 / (1.0 + eps)).abs() < 1e-15);

        let mut p = vec![0.0f64];
        let mut opt = Adam::new(&[&p], lr, b1, b2);
        for _ in 0..2 {
            opt.step(vec![&mut p], vec![&[1.0]]);
        }
        assert!((p[0] - x).abs() < 1e-15);
    }
}
