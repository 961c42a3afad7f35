//! Gradient-driven split/clone and opacity/size pruning.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::Vec3;
use crate::loss::NeighborGraph;
use crate::raster::GradientBuffer;
use crate::real::{lit, sigmoid, Real};
use crate::surfel::GaussianSurfel;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensifyConfig {
    /// Mean positional gradient per touched pixel that triggers densification.
    pub grad_threshold: f64,
    /// Split instead of clone above this fraction of the scene diagonal.
    pub size_fraction: f64,
    pub min_opacity: f64,
    /// Prune surfels larger than this fraction of the scene diagonal.
    pub max_scale_fraction: f64,
    pub split_factor: f64,
    pub interval: usize,
    pub warmup: usize,
    pub k: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            grad_threshold: 2e-4,
            size_fraction: 0.01,
            min_opacity: 0.005,
            max_scale_fraction: 0.1,
            split_factor: 1.6,
            interval: 100,
            warmup: 500,
            k: crate::loss::DEFAULT_K,
        }
    }
}

impl DensifyConfig {
    pub fn due(&self, iteration: usize) -> bool {
        self.interval > 0 && iteration > self.warmup && iteration.is_multiple_of(self.interval)
    }
}

/// Screen-gradient statistics accumulated between densification events.
#[derive(Clone, Debug, PartialEq)]
pub struct DensifyStats<T> {
    pub homo_grad: Vec<T>,
    pub touch_count: Vec<u64>,
}

impl<T: Real> DensifyStats<T> {
    pub fn new(n: usize) -> Self {
        Self {
            homo_grad: vec![T::zero(); n],
            touch_count: vec![0; n],
        }
    }

    pub fn accumulate(&mut self, g: &GradientBuffer<T>) {
        for i in 0..self.homo_grad.len() {
            self.homo_grad[i] += g.homo_grad[i];
            self.touch_count[i] += g.touch_count[i] as u64;
        }
    }

    pub fn mean(&self, i: usize) -> T {
        if self.touch_count[i] == 0 {
            T::zero()
        } else {
            self.homo_grad[i] / lit(self.touch_count[i] as f64)
        }
    }
}

/// Where each surfel of a densified set came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Kept(usize),
    Cloned(usize),
    Split(usize),
}

impl Origin {
    /// Old index whose optimizer state carries over.
    pub fn inherited(&self) -> Option<usize> {
        match *self {
            Origin::Kept(i) => Some(i),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DensifyOutcome<T> {
    pub surfels: Vec<GaussianSurfel<T>>,
    pub origins: Vec<Origin>,
    pub graph: NeighborGraph,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

pub fn densify_and_prune<T: Real>(
    surfels: &[GaussianSurfel<T>],
    stats: &DensifyStats<T>,
    cfg: &DensifyConfig,
    scene_diagonal: T,
    rng: &mut impl Rng,
) -> DensifyOutcome<T> {
    assert_eq!(stats.homo_grad.len(), surfels.len());
    let threshold: T = lit(cfg.grad_threshold);
    let big = scene_diagonal * lit(cfg.size_fraction);
    let shrink = (T::one() / lit(cfg.split_factor)).ln();
    let mut grown: Vec<(GaussianSurfel<T>, Origin)> =
        Vec::with_capacity(surfels.len() + surfels.len() / 4);
    let (mut cloned, mut split) = (0, 0);
    for (i, s) in surfels.iter().enumerate() {
        if stats.mean(i) <= threshold {
            grown.push((s.clone(), Origin::Kept(i)));
            continue;
        }
        let [su, sv] = s.scales();
        if su.max(sv) > big {
            split += 1;
            let f = s.frame();
            for _ in 0..2 {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                let mut c = s.clone();
                c.position = s.position + f.t_u * (su * lit(a)) + f.t_v * (sv * lit(b));
                c.log_scales = [s.log_scales[0] + shrink, s.log_scales[1] + shrink];
                grown.push((c, Origin::Split(i)));
            }
        } else {
            cloned += 1;
            grown.push((s.clone(), Origin::Kept(i)));
            grown.push((s.clone(), Origin::Cloned(i)));
        }
    }
    let max_scale = scene_diagonal * lit(cfg.max_scale_fraction);
    let min_opacity: T = lit(cfg.min_opacity);
    let before = grown.len();
    grown.retain(|(s, _)| {
        let [su, sv] = s.scales();
        sigmoid(s.opacity_logit) >= min_opacity && su.max(sv) <= max_scale
    });
    let pruned = before - grown.len();
    let (surfels, origins): (Vec<_>, Vec<_>) = grown.into_iter().unzip();
    let positions: Vec<Vec3<T>> = surfels.iter().map(|s| s.position).collect();
    DensifyOutcome {
        graph: NeighborGraph::build(&positions, cfg.k),
        surfels,
        origins,
        cloned,
        split,
        pruned,
    }
}
