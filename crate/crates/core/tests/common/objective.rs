//! Finite-difference harness for the full objective: canonical surfels,
//! deformation network and every loss term.

use rand::Rng;
use sgs_core::camera::CameraModel;
use sgs_core::image::{Image, Mask};
use sgs_core::loss::{GradientPyramid, LossTerms, LossWeights, NeighborGraph};
use sgs_core::mlp::{encode, DeformationNetwork, EncodingConfig};
use sgs_core::model::{evaluate, ModelGrad, Objective, SceneModel};
use sgs_core::pimi::FrameBundle;
use sgs_core::raster::{render, RenderSettings};

use super::{random_scene, Param};

pub const COMPONENTS: [&str; 7] = ["photo", "tv", "pos", "cov", "per", "depth", "normal"];

pub fn component(t: &LossTerms, name: &str) -> f64 {
    match name {
        "photo" => t.photo,
        "tv" => t.tv,
        "pos" => t.pos,
        "cov" => t.cov,
        "per" => t.per,
        "depth" => t.depth,
        "normal" => t.normal,
        _ => t.total,
    }
}

/// Weights that keep only `name`, with unit coefficient.
pub fn one_hot(name: &str) -> LossWeights {
    let d = LossWeights::default();
    let mut w = LossWeights {
        photo: 0.0,
        smooth: 0.0,
        pos: 0.0,
        cov: 0.0,
        per: 0.0,
        depth: 0.0,
        normal: 0.0,
        ..d
    };
    match name {
        "photo" => w.photo = 1.0,
        "tv" => w.smooth = 1.0,
        "pos" => w.pos = 1.0,
        "cov" => w.cov = 1.0,
        "per" => w.per = 1.0,
        "depth" => w.depth = 1.0,
        "normal" => w.normal = 1.0,
        _ => return d,
    }
    w
}

#[derive(Clone, Copy, Debug)]
pub enum ModelParam {
    Surfel(Param),
    Weight(usize, usize),
    Bias(usize, usize),
}

impl ModelParam {
    pub fn all(model: &SceneModel<f64>) -> Vec<ModelParam> {
        let mut v: Vec<ModelParam> = Param::all(&model.surfels)
            .into_iter()
            .map(ModelParam::Surfel)
            .collect();
        for (l, layer) in model.network.layers.iter().enumerate() {
            v.extend((0..layer.weights.len()).map(|k| ModelParam::Weight(l, k)));
            v.extend((0..layer.biases.len()).map(|k| ModelParam::Bias(l, k)));
        }
        v
    }

    pub fn group(&self) -> &'static str {
        match self {
            ModelParam::Surfel(p) => p.group(),
            ModelParam::Weight(..) => "mlp_weight",
            ModelParam::Bias(..) => "mlp_bias",
        }
    }

    pub fn nudge(&self, m: &mut SceneModel<f64>, h: f64) {
        match *self {
            ModelParam::Surfel(p) => p.nudge(&mut m.surfels, h),
            ModelParam::Weight(l, k) => m.network.layers[l].weights[k] += h,
            ModelParam::Bias(l, k) => m.network.layers[l].biases[k] += h,
        }
    }

    pub fn read(&self, g: &ModelGrad<f64>) -> f64 {
        match *self {
            ModelParam::Surfel(p) => p.read(&g.surfels),
            ModelParam::Weight(l, k) => g.network.layers[l].weights[k],
            ModelParam::Bias(l, k) => g.network.layers[l].biases[k],
        }
    }
}

/// A tiny supervised view with everything the objective touches.
pub struct Setup {
    pub model: SceneModel<f64>,
    pub frame: FrameBundle<f64>,
    pub cam: CameraModel<f64>,
    pub graph: NeighborGraph,
    pub extractor: GradientPyramid,
}

impl Setup {
    pub fn random(rng: &mut impl Rng, n: usize, size: usize, hidden: &[usize]) -> Setup {
        let (surfels, cam) = random_scene(rng, n, size, size, 1);
        let enc = EncodingConfig::default();
        let mut widths = vec![enc.width()];
        widths.extend_from_slice(hidden);
        widths.push(10);
        let mut net = DeformationNetwork::<f64>::init(&widths, rng);
        let last = net.layers.last_mut().unwrap();
        for w in last.weights.iter_mut().chain(last.biases.iter_mut()) {
            *w = rng.random_range(-0.05..0.05);
        }
        for l in &mut net.layers {
            for b in &mut l.biases {
                *b += rng.random_range(-0.1..0.1);
            }
        }
        let model = SceneModel::from_cloud(surfels, net, enc).unwrap();
        let px = size * size;
        let depth = (0..px)
            .map(|_| {
                if rng.random_bool(0.05) {
                    f64::NAN
                } else {
                    rng.random_range(2.0..4.0)
                }
            })
            .collect();
        let frame = FrameBundle {
            image: Image::from_vec(
                size,
                size,
                3,
                (0..3 * px).map(|_| rng.random_range(0.0..1.0)).collect(),
            )
            .unwrap(),
            depth: Image::from_vec(size, size, 1, depth).unwrap(),
            tool_mask: Mask {
                width: size,
                height: size,
                data: (0..px).map(|_| rng.random_bool(0.1)).collect(),
            },
            timestamp: rng.random_range(0.0..1.0),
        };
        let graph = NeighborGraph::build(
            &model.surfels.iter().map(|s| s.position).collect::<Vec<_>>(),
            5,
        );
        Setup {
            model,
            frame,
            cam,
            graph,
            extractor: GradientPyramid::default(),
        }
    }

    pub fn objective(&self, weights: LossWeights) -> Objective<'_, f64> {
        Objective {
            weights,
            settings: RenderSettings::default(),
            graph: &self.graph,
            extractor: Some(&self.extractor),
        }
    }

    pub fn terms(&self, model: &SceneModel<f64>) -> LossTerms {
        evaluate(
            model,
            &self.frame,
            &self.cam,
            &self.objective(LossWeights::default()),
            false,
        )
        .unwrap()
        .terms
    }

    pub fn grad(&self, weights: LossWeights) -> ModelGrad<f64> {
        evaluate(
            &self.model,
            &self.frame,
            &self.cam,
            &self.objective(weights),
            true,
        )
        .unwrap()
        .grad
        .unwrap()
    }

    /// Every discrete switch the objective depends on: contributor sets,
    /// SH clamps, ReLU patterns, encoder clamps, loss masks and the signs
    /// inside absolute values.
    pub fn kinks(&self, model: &SceneModel<f64>) -> Vec<i64> {
        let mut sig = Vec::new();
        let t = self.frame.timestamp;
        for s in &model.surfels {
            let (p, inside) = model.normalizer.apply(s.position);
            sig.extend(inside.iter().map(|&b| b as i64));
            let mut a = encode(&model.encoding, p, t);
            let last = model.network.layers.len() - 1;
            for (li, l) in model.network.layers.iter().enumerate() {
                let z: Vec<f64> = (0..l.rows)
                    .map(|o| {
                        l.biases[o]
                            + l.weights[o * l.cols..(o + 1) * l.cols]
                                .iter()
                                .zip(&a)
                                .map(|(w, x)| w * x)
                                .sum::<f64>()
                    })
                    .collect();
                if li < last {
                    sig.extend(z.iter().map(|&v| (v > 0.0) as i64));
                    a = z.into_iter().map(|v| v.max(0.0)).collect();
                }
            }
        }
        let def = model.deform(t, false);
        for (k, list) in super::support_signature(&def.surfels, &self.cam)
            .into_iter()
            .enumerate()
        {
            sig.push(-(k as i64) - 1);
            sig.extend(list.into_iter().map(|i| i as i64));
        }
        let out = render(&def.surfels, &self.cam, &RenderSettings::default());
        sig.extend(
            super::clamp_signature(&def.surfels, &self.cam)
                .into_iter()
                .map(|b| b as i64),
        );
        let sign = |v: f64| {
            if v > 0.0 {
                1
            } else if v < 0.0 {
                -1
            } else {
                0
            }
        };
        let (w, h) = (self.cam.width, self.cam.height);
        for (a, b) in out.color.data.iter().zip(&self.frame.image.data) {
            sig.push(sign(a - b));
        }
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                for c in 0..3 {
                    let v = out.color.data[3 * p + c];
                    if x > 0 {
                        sig.push(sign(v - out.color.data[3 * (p - 1) + c]));
                    }
                    if y > 0 {
                        sig.push(sign(v - out.color.data[3 * (p - w) + c]));
                    }
                }
                sig.push((out.alpha.data[p] > 0.5) as i64);
                sig.push(sign(out.depth.data[p] - self.frame.depth.data[p]));
            }
        }
        let canon: Vec<_> = model
            .surfels
            .iter()
            .map(|s| (s.position.to_array(), s.scales()))
            .collect();
        let deformed: Vec<_> = def
            .surfels
            .iter()
            .map(|s| (s.position.to_array(), s.scales()))
            .collect();
        for (i, j) in self.graph.edges() {
            let l1 = |a: &[f64], b: &[f64], sig: &mut Vec<i64>| {
                let mut d = 0.0;
                for (x, y) in a.iter().zip(b) {
                    sig.push(sign(x - y));
                    d += (x - y).abs();
                }
                d
            };
            let pc = l1(&canon[i].0, &canon[j].0, &mut sig);
            let pd = l1(&deformed[i].0, &deformed[j].0, &mut sig);
            let sc = l1(&canon[i].1, &canon[j].1, &mut sig);
            let sd = l1(&deformed[i].1, &deformed[j].1, &mut sig);
            // roundoff-level gaps count as ties
            let gap = |a: f64, b: f64| {
                if (a - b).abs() <= 1e-12 * (a + b) {
                    0
                } else {
                    sign(a - b)
                }
            };
            sig.push(gap(pc, pd));
            sig.push(gap(sc, sd));
        }
        sig
    }
}

/// Central differences of every loss term along `param`; the step shrinks
/// while the probes straddle a kink.  Returns the step used and the
/// derivative of each term.
pub fn term_derivatives(setup: &Setup, param: ModelParam, eps: f64) -> (f64, LossTerms) {
    let base = setup.kinks(&setup.model);
    let mut h = eps;
    loop {
        let mut plus = setup.model.clone();
        param.nudge(&mut plus, h);
        let mut minus = setup.model.clone();
        param.nudge(&mut minus, -h);
        let same = setup.kinks(&plus) == base && setup.kinks(&minus) == base;
        if same || h < eps * 1e-3 {
            let (a, b) = (setup.terms(&plus), setup.terms(&minus));
            let d = |x: f64, y: f64| (x - y) / (2.0 * h);
            return (
                h,
                LossTerms {
                    photo: d(a.photo, b.photo),
                    tv: d(a.tv, b.tv),
                    pos: d(a.pos, b.pos),
                    cov: d(a.cov, b.cov),
                    per: d(a.per, b.per),
                    depth: d(a.depth, b.depth),
                    normal: d(a.normal, b.normal),
                    total: d(a.total, b.total),
                },
            );
        }
        h *= 0.1;
    }
}

/// Worst relative error per term over every parameter of the setup.
pub struct FdReport {
    pub worst: Vec<(String, f64, String)>,
    pub checked: usize,
}

pub fn check_all(setup: &Setup, eps: f64, atol: f64) -> FdReport {
    let mut names: Vec<&str> = COMPONENTS.to_vec();
    names.push("total");
    let grads: Vec<ModelGrad<f64>> = names.iter().map(|n| setup.grad(one_hot(n))).collect();
    let params = ModelParam::all(&setup.model);
    let mut worst: Vec<(String, f64, String)> = names
        .iter()
        .map(|n| (n.to_string(), 0.0, String::new()))
        .collect();
    for p in &params {
        // smaller step for positions
        let step = if matches!(p, ModelParam::Surfel(Param::Position(..))) {
            eps * 1e-2
        } else {
            eps
        };
        let (_, fd) = term_derivatives(setup, *p, step);
        for (k, n) in names.iter().enumerate() {
            let a = p.read(&grads[k]);
            let num = component(&fd, n);
            let e = super::rel_err(a, num, atol);
            if e > worst[k].1 {
                worst[k] = (
                    n.to_string(),
                    e,
                    format!("{p:?} analytic {a:e} numeric {num:e}"),
                );
            }
        }
    }
    FdReport {
        worst,
        checked: params.len(),
    }
}
