//! Batched execution: samples are processed in fixed panels that stay in
//! cache while every layer is applied, with weights transposed so the inner
//! loop is a contiguous multiply-add over output units.

use rayon::prelude::*;

use super::{relu, DeformationNetwork, Layer, NetworkGrad};
use crate::real::Real;

/// Samples evaluated together per layer.
pub const PANEL: usize = 16;
/// Samples whose weight gradients share one accumulator before the ordered merge.
pub const GRAD_CHUNK: usize = 256;

/// Network with a transposed copy of each weight matrix.
#[derive(Clone, Debug)]
pub struct PackedNetwork<'a, T> {
    pub net: &'a DeformationNetwork<T>,
    transposed: Vec<Vec<T>>,
}

/// Post-activation values of every layer, stored panel by panel.
#[derive(Clone, Debug)]
pub struct Activations<T> {
    pub batch: usize,
    panels: Vec<Vec<Vec<T>>>,
}

impl<T: Real> DeformationNetwork<T> {
    pub fn pack(&self) -> PackedNetwork<'_, T> {
        let transposed = self
            .layers
            .iter()
            .map(|l| {
                let mut t = vec![T::zero(); l.weights.len()];
                for o in 0..l.rows {
                    for i in 0..l.cols {
                        t[i * l.rows + o] = l.weights[o * l.cols + i];
                    }
                }
                t
            })
            .collect();
        PackedNetwork {
            net: self,
            transposed,
        }
    }
}

/// `y[s] += x · w` for every sample of the panel.
#[inline(always)]
fn axpy<T: Real>(y: &mut [T], x: T, w: &[T]) {
    for (a, b) in y.iter_mut().zip(w) {
        *a += x * *b;
    }
}

fn layer_forward<T: Real>(l: &Layer<T>, wt: &[T], input: &[T], rows: usize, last: bool) -> Vec<T> {
    let p = input.len() / l.cols;
    let mut out = Vec::with_capacity(p * rows);
    for _ in 0..p {
        out.extend_from_slice(&l.biases);
    }
    for i in 0..l.cols {
        let w = &wt[i * rows..(i + 1) * rows];
        for (s, y) in out.chunks_exact_mut(rows).enumerate() {
            let x = input[s * l.cols + i];
            if x != T::zero() {
                axpy(y, x, w);
            }
        }
    }
    if !last {
        for v in &mut out {
            *v = relu(*v);
        }
    }
    out
}

impl<T: Real> PackedNetwork<'_, T> {
    fn panel_forward(&self, input: &[T]) -> Vec<Vec<T>> {
        let n = self.net.layers.len();
        let mut acts: Vec<Vec<T>> = Vec::with_capacity(n);
        for (li, l) in self.net.layers.iter().enumerate() {
            let prev = if li == 0 { input } else { &acts[li - 1] };
            let y = layer_forward(l, &self.transposed[li], prev, l.rows, li + 1 == n);
            acts.push(y);
        }
        acts
    }

    pub fn forward(&self, input: &[T]) -> Vec<T> {
        let iw = self.net.input_width();
        assert_eq!(input.len() % iw, 0);
        let ow = self.net.output_width();
        let mut out = vec![T::zero(); input.len() / iw * ow];
        input
            .par_chunks(PANEL * iw)
            .zip(out.par_chunks_mut(PANEL * ow))
            .for_each(|(x, y)| {
                let acts = self.panel_forward(x);
                y.copy_from_slice(acts.last().unwrap());
            });
        out
    }

    /// Forward pass that keeps every activation for [`Self::backward`].
    pub fn forward_train(&self, input: &[T]) -> (Vec<T>, Activations<T>) {
        let iw = self.net.input_width();
        assert_eq!(input.len() % iw, 0);
        let panels: Vec<Vec<Vec<T>>> = input
            .par_chunks(PANEL * iw)
            .map(|x| self.panel_forward(x))
            .collect();
        let mut out = Vec::with_capacity(input.len() / iw * self.net.output_width());
        for p in &panels {
            out.extend_from_slice(p.last().unwrap());
        }
        (
            out,
            Activations {
                batch: input.len() / iw,
                panels,
            },
        )
    }

    fn panel_backward(
        &self,
        input: &[T],
        acts: &[Vec<T>],
        d_out: &[T],
        grad: &mut NetworkGrad<T>,
    ) -> Vec<T> {
        let layers = &self.net.layers;
        let mut d = d_out.to_vec();
        for li in (0..layers.len()).rev() {
            let l = &layers[li];
            let prev: &[T] = if li == 0 { input } else { &acts[li - 1] };
            let p = prev.len() / l.cols;
            let g = &mut grad.layers[li];
            for o in 0..l.rows {
                let row = &mut g.weights[o * l.cols..(o + 1) * l.cols];
                for s in 0..p {
                    let c = d[s * l.rows + o];
                    if c != T::zero() {
                        g.biases[o] += c;
                        axpy(row, c, &prev[s * l.cols..(s + 1) * l.cols]);
                    }
                }
            }
            let mut dp = vec![T::zero(); p * l.cols];
            for o in 0..l.rows {
                let w = l.row(o);
                for (s, y) in dp.chunks_exact_mut(l.cols).enumerate() {
                    let c = d[s * l.rows + o];
                    if c != T::zero() {
                        axpy(y, c, w);
                    }
                }
            }
            if li > 0 {
                for (v, a) in dp.iter_mut().zip(prev) {
                    if *a <= T::zero() {
                        *v = T::zero();
                    }
                }
            }
            d = dp;
        }
        d
    }

    /// Weight, bias and input gradients; per-chunk sums merged in chunk order.
    pub fn backward(
        &self,
        input: &[T],
        acts: &Activations<T>,
        d_output: &[T],
    ) -> (NetworkGrad<T>, Vec<T>) {
        let iw = self.net.input_width();
        let ow = self.net.output_width();
        assert_eq!(input.len(), acts.batch * iw);
        assert_eq!(d_output.len(), acts.batch * ow);
        let per_chunk = GRAD_CHUNK / PANEL;
        let chunks: Vec<(NetworkGrad<T>, Vec<T>)> = acts
            .panels
            .par_chunks(per_chunk)
            .enumerate()
            .map(|(c, panels)| {
                let mut grad = NetworkGrad::zeros_like(self.net);
                let mut d_in = Vec::new();
                for (k, a) in panels.iter().enumerate() {
                    let s0 = (c * per_chunk + k) * PANEL;
                    let p = a.last().unwrap().len() / ow;
                    let x = &input[s0 * iw..(s0 + p) * iw];
                    let dy = &d_output[s0 * ow..(s0 + p) * ow];
                    d_in.extend(self.panel_backward(x, a, dy, &mut grad));
                }
                (grad, d_in)
            })
            .collect();
        let mut iter = chunks.into_iter();
        let (mut grad, mut d_input) = iter
            .next()
            .unwrap_or_else(|| (NetworkGrad::zeros_like(self.net), Vec::new()));
        for (g, d) in iter {
            grad.add_assign(&g);
            d_input.extend(d);
        }
        (grad, d_input)
    }
}

pub fn forward_fused<T: Real>(net: &DeformationNetwork<T>, input: &[T]) -> Vec<T> {
    net.pack().forward(input)
}
