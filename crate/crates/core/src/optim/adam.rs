//! Adam with bias correction, per-group learning rates and a log-linear
//! position schedule.

use crate::real::{lit, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

/// First and second moments of one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Rebuilds the moments for a resized group: `sources[i]` names the old
    /// slot (of width `stride`) that new slot `i` inherits, `None` starts fresh.
    pub fn remap(&mut self, sources: &[Option<usize>], stride: usize) {
        let mut m = vec![T::zero(); sources.len() * stride];
        let mut v = vec![T::zero(); sources.len() * stride];
        for (i, s) in sources.iter().enumerate() {
            if let Some(j) = s {
                m[i * stride..(i + 1) * stride]
                    .copy_from_slice(&self.m[j * stride..(j + 1) * stride]);
                v[i * stride..(i + 1) * stride]
                    .copy_from_slice(&self.v[j * stride..(j + 1) * stride]);
            }
        }
        self.m = m;
        self.v = v;
    }
}

/// One Adam step over a parameter group. Entries with a non-finite gradient
/// are left untouched; entries with an exactly zero gradient only decay their
/// moments. Returns the number of skipped entries.
pub fn adam_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    lr: T,
    cfg: &AdamConfig,
) -> usize {
    assert_eq!(params.len(), grads.len());
    assert_eq!(
        params.len(),
        state.len(),
        "optimizer state does not match the parameter group"
    );
    state.step += 1;
    let (b1, b2): (T, T) = (lit(cfg.beta1), lit(cfg.beta2));
    let eps: T = lit(cfg.eps);
    let t = state.step as i32;
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let mut skipped = 0;
    for i in 0..params.len() {
        let g = grads[i];
        if !g.is_finite() {
            skipped += 1;
            continue;
        }
        let m = b1 * state.m[i] + (T::one() - b1) * g;
        let v = b2 * state.v[i] + (T::one() - b2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        if g != T::zero() {
            params[i] -= lr * (m / c1) / ((v / c2).sqrt() + eps);
        }
    }
    skipped
}

/// `lr_init → lr_final` log-linearly over `max_steps`, constant afterwards.
pub fn exponential_lr(lr_init: f64, lr_final: f64, step: usize, max_steps: usize) -> f64 {
    if max_steps == 0 {
        return lr_final;
    }
    let r = (step as f64 / max_steps as f64).clamp(0.0, 1.0);
    (lr_init.ln() * (1.0 - r) + lr_final.ln() * r).exp()
}
