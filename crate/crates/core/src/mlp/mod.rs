//! Deformation network: frequency encoding, a deep rectifier MLP with a
//! reference and a fused execution path, and the raw-output decoding.

pub mod bench;
mod encoding;
mod fused;

pub use bench::{bench, write_bench_csv, BenchRow};
pub use encoding::{encode, encode_backward, encode_into, EncodingConfig, SceneNormalizer};
pub use fused::{forward_fused, Activations, PackedNetwork};

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::linalg::{normalize_backward, Quat, Vec3};
use crate::real::{lit, Real};
use crate::surfel::{DeformationDelta, DeltaGrad};

pub const ENCODED_WIDTH: usize = 72;
pub const HIDDEN_WIDTH: usize = 128;
pub const HIDDEN_LAYERS: usize = 11;
pub const OUTPUT_WIDTH: usize = 10;

/// Dense affine layer, `rows` outputs by `cols` inputs, weights row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Real> Layer<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![T::zero(); rows * cols],
            biases: vec![T::zero(); rows],
        }
    }

    #[inline]
    pub fn row(&self, o: usize) -> &[T] {
        &self.weights[o * self.cols..(o + 1) * self.cols]
    }

    pub fn cast<U: Real>(&self) -> Layer<U> {
        Layer {
            rows: self.rows,
            cols: self.cols,
            weights: self.weights.iter().map(|w| w.cast()).collect(),
            biases: self.biases.iter().map(|w| w.cast()).collect(),
        }
    }
}

/// Rectifier MLP; every layer but the last is followed by `max(0, ·)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationNetwork<T> {
    pub layers: Vec<Layer<T>>,
}

#[inline(always)]
pub(crate) fn relu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

impl<T: Real> DeformationNetwork<T> {
    /// All-zero network with layer widths `widths[0] → … → widths[n]`.
    pub fn zeros_with_widths(widths: &[usize]) -> Self {
        assert!(widths.len() >= 2, "need input and output widths");
        Self {
            layers: widths
                .windows(2)
                .map(|w| Layer::zeros(w[1], w[0]))
                .collect(),
        }
    }

    pub fn default_widths() -> Vec<usize> {
        let mut w = vec![ENCODED_WIDTH];
        w.extend([HIDDEN_WIDTH; HIDDEN_LAYERS]);
        w.push(OUTPUT_WIDTH);
        w
    }

    pub fn zeros() -> Self {
        Self::zeros_with_widths(&Self::default_widths())
    }

    /// Kaiming-uniform hidden weights, zero biases, zero output layer.
    pub fn init(widths: &[usize], rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros_with_widths(widths);
        let n = net.layers.len();
        for l in &mut net.layers[..n - 1] {
            let bound = (6.0 / l.cols as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for w in &mut l.weights {
                *w = lit(dist.sample(rng));
            }
        }
        net
    }

    /// Every weight and bias drawn from `U(-scale, scale)`; test helper.
    pub fn random(widths: &[usize], scale: f64, rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros_with_widths(widths);
        for l in &mut net.layers {
            for w in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *w = lit(rng.random_range(-scale..=scale));
            }
        }
        net
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().rows
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].rows != pair[1].cols {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i} emits {} values but layer {} takes {}",
                    pair[0].rows,
                    i + 1,
                    pair[1].cols
                )));
            }
        }
        for l in &self.layers {
            if l.weights.len() != l.rows * l.cols || l.biases.len() != l.rows {
                return Err(Error::DimensionMismatch("layer buffer size".into()));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> DeformationNetwork<U> {
        DeformationNetwork {
            layers: self.layers.iter().map(Layer::cast).collect(),
        }
    }

    fn batch_of(&self, input: &[T]) -> usize {
        let w = self.input_width();
        assert_eq!(input.len() % w, 0, "input length is not a multiple of {w}");
        input.len() / w
    }

    /// Layer-by-layer evaluation with one dot product per output.
    pub fn forward_reference(&self, input: &[T]) -> Vec<T> {
        let batch = self.batch_of(input);
        let mut out = Vec::with_capacity(batch * self.output_width());
        for x in input.chunks_exact(self.input_width()) {
            out.extend(self.reference_sample(x).pop().unwrap());
        }
        out
    }

    /// Post-activation values of every layer for one sample.
    fn reference_sample(&self, x: &[T]) -> Vec<Vec<T>> {
        let last = self.layers.len() - 1;
        let mut acts: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        for (li, l) in self.layers.iter().enumerate() {
            let prev = if li == 0 { x } else { &acts[li - 1] };
            let mut y = Vec::with_capacity(l.rows);
            for o in 0..l.rows {
                let mut z = l.biases[o];
                for (w, a) in l.row(o).iter().zip(prev) {
                    z += *w * *a;
                }
                y.push(if li == last { z } else { relu(z) });
            }
            acts.push(y);
        }
        acts
    }

    /// Plain reverse-mode pass over each sample in turn.
    pub fn backward_reference(&self, input: &[T], d_output: &[T]) -> (NetworkGrad<T>, Vec<T>) {
        let batch = self.batch_of(input);
        assert_eq!(d_output.len(), batch * self.output_width());
        let mut grad = NetworkGrad::zeros_like(self);
        let mut d_input = Vec::with_capacity(input.len());
        let iw = self.input_width();
        for (s, x) in input.chunks_exact(iw).enumerate() {
            let acts = self.reference_sample(x);
            let mut d: Vec<T> =
                d_output[s * self.output_width()..(s + 1) * self.output_width()].to_vec();
            for li in (0..self.layers.len()).rev() {
                let l = &self.layers[li];
                let prev = if li == 0 { x } else { &acts[li - 1] };
                let g = &mut grad.layers[li];
                for o in 0..l.rows {
                    g.biases[o] += d[o];
                    for i in 0..l.cols {
                        g.weights[o * l.cols + i] += d[o] * prev[i];
                    }
                }
                let mut dp = vec![T::zero(); l.cols];
                for (i, v) in dp.iter_mut().enumerate() {
                    let mut acc = T::zero();
                    for o in 0..l.rows {
                        acc += l.weights[o * l.cols + i] * d[o];
                    }
                    *v = if li > 0 && prev[i] <= T::zero() {
                        T::zero()
                    } else {
                        acc
                    };
                }
                d = dp;
            }
            d_input.extend(d);
        }
        (grad, d_input)
    }
}

/// Gradients for every layer, same shapes as the network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGrad<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> NetworkGrad<T> {
    pub fn zeros_like(net: &DeformationNetwork<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Layer::zeros(l.rows, l.cols))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, o: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&o.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += *y;
            }
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x += *y;
            }
        }
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        let mut m = T::zero();
        for (a, b) in self.layers.iter().zip(&o.layers) {
            for (x, y) in a
                .weights
                .iter()
                .chain(&a.biases)
                .zip(b.weights.iter().chain(&b.biases))
            {
                m = m.max((*x - *y).abs());
            }
        }
        m
    }
}

/// Splits one raw output row into position, rotation and scale updates.
pub fn decode_delta<T: Real>(raw: &[T]) -> DeformationDelta<T> {
    assert!(raw.len() >= OUTPUT_WIDTH);
    DeformationDelta {
        d_position: Vec3::new(raw[0], raw[1], raw[2]),
        d_rotation: Quat::new(T::one() + raw[3], raw[4], raw[5], raw[6]).normalize(),
        d_scale: [raw[7].exp(), raw[8].exp(), raw[9].exp()],
    }
}

/// Gradient of [`decode_delta`] with respect to the raw row.
pub fn decode_delta_backward<T: Real>(raw: &[T], g: &DeltaGrad<T>) -> [T; OUTPUT_WIDTH] {
    let q = Quat::new(T::one() + raw[3], raw[4], raw[5], raw[6]);
    let dq = normalize_backward(q, g.d_rotation);
    let mut out = [T::zero(); OUTPUT_WIDTH];
    out[..3].copy_from_slice(&g.d_position.to_array());
    out[3..7].copy_from_slice(&dq.to_array());
    for k in 0..3 {
        out[7 + k] = g.d_scale[k] * raw[7 + k].exp();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn topology() {
        let net = DeformationNetwork::<f32>::zeros();
        assert_eq!(net.layers.len(), HIDDEN_LAYERS + 1);
        assert_eq!(net.input_width(), 72);
        assert_eq!(net.output_width(), 10);
        assert_eq!(net.layers.iter().filter(|l| l.rows == 128).count(), 11);
        net.validate().unwrap();
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = DeformationNetwork::<f64>::zeros();
        let out = net.forward_reference(&[0.7; 144]);
        assert_eq!(out, vec![0.0; 20]);
    }

    #[test]
    fn init_zero_output_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net =
            DeformationNetwork::<f32>::init(&DeformationNetwork::<f32>::default_widths(), &mut rng);
        assert!(net.layers.last().unwrap().weights.iter().all(|&w| w == 0.0));
        assert!(net.layers[0].weights.iter().any(|&w| w != 0.0));
        let out = net.forward_reference(&[0.3; 72]);
        assert_eq!(out, vec![0.0; 10]);
    }

    #[test]
    fn identity_layer_passes_through() {
        let mut net = DeformationNetwork::<f64>::zeros_with_widths(&[4, 4]);
        for i in 0..4 {
            net.layers[0].weights[i * 4 + i] = 1.0;
        }
        let x = [0.5, -1.0, 2.0, 0.0];
        assert_eq!(net.forward_reference(&x), x.to_vec());
    }

    #[test]
    fn hand_rolled_single_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DeformationNetwork::<f64>::random(&[3, 4, 2], 1.0, &mut rng);
        let x = [0.2, -0.4, 0.9];
        let (l0, l1) = (&net.layers[0], &net.layers[1]);
        let h: Vec<f64> = (0..4)
            .map(|o| {
                (l0.biases[o] + (0..3).map(|i| l0.weights[o * 3 + i] * x[i]).sum::<f64>()).max(0.0)
            })
            .collect();
        let y: Vec<f64> = (0..2)
            .map(|o| l1.biases[o] + (0..4).map(|i| l1.weights[o * 4 + i] * h[i]).sum::<f64>())
            .collect();
        let got = net.forward_reference(&x);
        for k in 0..2 {
            assert!((got[k] - y[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_zero_is_identity() {
        let d = decode_delta(&[0.0f64; 10]);
        assert_eq!(d, DeformationDelta::identity());
    }

    #[test]
    fn decode_scale() {
        let mut raw = [0.0f64; 10];
        raw[7] = 2f64.ln();
        let d = decode_delta(&raw);
        assert!((d.d_scale[0] - 2.0).abs() < 1e-15);
        assert_eq!(&d.d_scale[1..], &[1.0, 1.0]);
    }

    #[test]
    fn decode_backward_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let raw: Vec<f64> = (0..10).map(|_| rng.random_range(-0.5..0.5)).collect();
        let g = DeltaGrad {
            d_position: Vec3::new(0.3, -0.2, 0.5),
            d_scale: [0.7, -0.1, 0.4],
            d_rotation: Quat::new(0.2, -0.6, 0.1, 0.9),
        };
        let f = |r: &[f64]| {
            let d = decode_delta(r);
            d.d_position.dot(g.d_position)
                + d.d_rotation.dot(g.d_rotation)
                + (0..3).map(|k| d.d_scale[k] * g.d_scale[k]).sum::<f64>()
        };
        let ana = decode_delta_backward(&raw, &g);
        for k in 0..10 {
            let mut p = raw.clone();
            let mut m = raw.clone();
            p[k] += 1e-6;
            m[k] -= 1e-6;
            let num = (f(&p) - f(&m)) / 2e-6;
            assert!((num - ana[k]).abs() < 1e-8, "{k}");
        }
    }
}
