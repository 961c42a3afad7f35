//! The optimization loop: random training view per step, full objective,
//! Adam per parameter group, periodic densification, logs and checkpoints.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{debug, error, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::checkpoint::write_checkpoint;
use crate::io::dataset::Dataset;
use crate::loss::{GradientPyramid, LossTerms, LossWeights, NeighborGraph};
use crate::metrics::{cap_psnr, psnr};
use crate::mlp::{DeformationNetwork, EncodingConfig};
use crate::model::{evaluate, ModelGrad, Objective, SceneModel};
use crate::optim::{
    adam_step, densify_and_prune, exponential_lr, AdamConfig, AdamState, DensifyConfig,
    DensifyStats,
};
use crate::pimi::{aggregate, build_cloud, DEFAULT_STRIDE};
use crate::raster::RenderSettings;
use crate::sh::{num_coeffs, MAX_SH_DEGREE};

pub const LOG_HEADER: &str =
    "iteration,l_photo,l_tv,l_pos,l_cov,l_per,l_depth,l_normal,total,psnr_holdout";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    pub position_init: f64,
    pub position_final: f64,
    pub rotation: f64,
    pub log_scale: f64,
    pub opacity: f64,
    pub sh: f64,
    pub mlp: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position_init: 1.6e-4,
            position_final: 1.6e-6,
            rotation: 1e-3,
            log_scale: 5e-3,
            opacity: 5e-2,
            sh: 2.5e-3,
            mlp: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub seed: u64,
    pub deterministic: bool,
    pub weights: LossWeights,
    pub lr: LearningRates,
    pub adam: AdamConfig,
    pub densify: DensifyConfig,
    /// Last iteration at which densification may run.
    pub densify_until: usize,
    /// Growth stops once the cloud reaches this size; pruning continues.
    pub max_surfels: usize,
    pub sh_degree: usize,
    pub init_stride: usize,
    pub tile_size: usize,
    pub log_interval: usize,
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            seed: 0,
            deterministic: false,
            weights: LossWeights::default(),
            lr: LearningRates::default(),
            adam: AdamConfig::default(),
            densify: DensifyConfig::default(),
            densify_until: 2500,
            max_surfels: 20_000,
            sh_degree: 0,
            init_stride: DEFAULT_STRIDE,
            tile_size: crate::raster::DEFAULT_TILE_SIZE,
            log_interval: 100,
            checkpoint_interval: 1000,
        }
    }
}

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+),* $(,)?) => {
        impl TrainConfig {
            /// Every recognized key, in file order.
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => self.$($field).+ = parse(key, value)?,)*
                    _ => return Err(Error::Config(format!("unknown key {key:?}"))),
                }
                Ok(())
            }

            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $(let _ = writeln!(s, "{} = {}", $key, self.$($field).+);)*
                s
            }
        }
    };
}

config_keys! {
    "iterations" => iterations,
    "seed" => seed,
    "deterministic" => deterministic,
    "lambda_photo" => weights.photo,
    "lambda_ssim" => weights.ssim,
    "lambda_smooth" => weights.smooth,
    "lambda_pos" => weights.pos,
    "lambda_cov" => weights.cov,
    "lambda_per" => weights.per,
    "lambda_depth" => weights.depth,
    "lambda_normal" => weights.normal,
    "alpha_n" => weights.alpha_n,
    "beta_n" => weights.beta_n,
    "lr_position_init" => lr.position_init,
    "lr_position_final" => lr.position_final,
    "lr_rotation" => lr.rotation,
    "lr_log_scale" => lr.log_scale,
    "lr_opacity" => lr.opacity,
    "lr_sh" => lr.sh,
    "lr_mlp" => lr.mlp,
    "adam_beta1" => adam.beta1,
    "adam_beta2" => adam.beta2,
    "adam_eps" => adam.eps,
    "densify_grad_threshold" => densify.grad_threshold,
    "densify_size_fraction" => densify.size_fraction,
    "prune_min_opacity" => densify.min_opacity,
    "prune_max_scale_fraction" => densify.max_scale_fraction,
    "split_factor" => densify.split_factor,
    "densify_interval" => densify.interval,
    "densify_warmup" => densify.warmup,
    "densify_until" => densify_until,
    "knn_k" => densify.k,
    "max_surfels" => max_surfels,
    "sh_degree" => sh_degree,
    "init_stride" => init_stride,
    "tile_size" => tile_size,
    "log_interval" => log_interval,
    "checkpoint_interval" => checkpoint_interval,
}

impl TrainConfig {
    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected key = value, found {raw:?}",
                    n + 1
                ))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let lr = &self.lr;
        let rates = [
            lr.position_init,
            lr.position_final,
            lr.rotation,
            lr.log_scale,
            lr.opacity,
            lr.sh,
            lr.mlp,
        ];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0)
            || lr.position_init <= 0.0
            || lr.position_final <= 0.0
        {
            return Err(Error::Config(
                "learning rates must be finite and non-negative, position rates positive".into(),
            ));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::Config(
                "Adam betas must lie in [0, 1) and epsilon must be positive".into(),
            ));
        }
        if self.sh_degree > MAX_SH_DEGREE {
            return Err(Error::Config(format!(
                "sh_degree must be at most {MAX_SH_DEGREE}"
            )));
        }
        if self.init_stride == 0 || self.tile_size == 0 || self.densify.k == 0 {
            return Err(Error::Config(
                "init_stride, tile_size and knn_k must be positive".into(),
            ));
        }
        if self.densify.split_factor <= 1.0 {
            return Err(Error::Config("split_factor must exceed 1".into()));
        }
        Ok(())
    }

    pub fn render_settings(&self) -> RenderSettings<f32> {
        RenderSettings {
            tile_size: self.tile_size,
            deterministic: self.deterministic,
            ..RenderSettings::default()
        }
    }
}

/// PIMI cloud from the training frames plus a freshly initialized network.
pub fn initialize(data: &Dataset<f32>, cfg: &TrainConfig) -> Result<SceneModel<f32>> {
    let frames: Vec<_> = data.train_frames().cloned().collect();
    let agg = aggregate(&frames)?;
    let mut cloud = build_cloud(&agg, &data.camera, cfg.init_stride)?;
    let n = num_coeffs(cfg.sh_degree);
    for s in &mut cloud {
        s.sh.resize(n, 0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let network = DeformationNetwork::init(&DeformationNetwork::<f32>::default_widths(), &mut rng);
    info!(
        "initialized {} surfels from {} frames",
        cloud.len(),
        frames.len()
    );
    SceneModel::from_cloud(cloud, network, EncodingConfig::default())
}

/// Adam moments for every parameter group.
#[derive(Clone, Debug)]
struct Optimizer {
    position: AdamState<f32>,
    rotation: AdamState<f32>,
    log_scale: AdamState<f32>,
    opacity: AdamState<f32>,
    sh: AdamState<f32>,
    mlp: AdamState<f32>,
    skipped: usize,
}

impl Optimizer {
    fn new(model: &SceneModel<f32>) -> Self {
        let n = model.len();
        let sh = model.surfels.first().map_or(0, |s| s.sh.len());
        Self {
            position: AdamState::new(3 * n),
            rotation: AdamState::new(4 * n),
            log_scale: AdamState::new(2 * n),
            opacity: AdamState::new(n),
            sh: AdamState::new(sh * n),
            mlp: AdamState::new(model.network.param_count()),
            skipped: 0,
        }
    }

    /// Carries moments over to a densified cloud; `sources[i]` is the old index
    /// surfel `i` inherits from.
    fn remap(&mut self, sources: &[Option<usize>], sh_len: usize) {
        self.position.remap(sources, 3);
        self.rotation.remap(sources, 4);
        self.log_scale.remap(sources, 2);
        self.opacity.remap(sources, 1);
        self.sh.remap(sources, sh_len);
    }
}

fn step_group(
    params: &mut [f32],
    grads: &[f32],
    st: &mut AdamState<f32>,
    lr: f64,
    cfg: &AdamConfig,
) -> usize {
    adam_step(params, grads, st, lr as f32, cfg)
}

fn flat_network(net: &DeformationNetwork<f32>) -> Vec<f32> {
    net.layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
        .collect()
}

fn unflatten_network(net: &mut DeformationNetwork<f32>, flat: &[f32]) {
    let mut k = 0;
    for l in &mut net.layers {
        for w in l.weights.iter_mut().chain(l.biases.iter_mut()) {
            *w = flat[k];
            k += 1;
        }
    }
}

fn apply_updates(
    model: &mut SceneModel<f32>,
    grad: &ModelGrad<f32>,
    opt: &mut Optimizer,
    cfg: &TrainConfig,
    it: usize,
) {
    let n = model.len();
    let g = &grad.surfels;
    let a = &cfg.adam;
    let lr = &cfg.lr;
    let pos_lr = exponential_lr(lr.position_init, lr.position_final, it, cfg.iterations);

    let mut p: Vec<f32> = model
        .surfels
        .iter()
        .flat_map(|s| s.position.to_array())
        .collect();
    let d: Vec<f32> = g.d_position.iter().flat_map(|v| v.to_array()).collect();
    let mut skipped = step_group(&mut p, &d, &mut opt.position, pos_lr, a);
    for (s, c) in model.surfels.iter_mut().zip(p.chunks_exact(3)) {
        s.position = crate::linalg::Vec3::new(c[0], c[1], c[2]);
    }

    let mut p: Vec<f32> = model
        .surfels
        .iter()
        .flat_map(|s| s.rotation.to_array())
        .collect();
    let d: Vec<f32> = g.d_rotation.iter().flat_map(|q| q.to_array()).collect();
    skipped += step_group(&mut p, &d, &mut opt.rotation, lr.rotation, a);
    for (s, c) in model.surfels.iter_mut().zip(p.chunks_exact(4)) {
        s.rotation = crate::linalg::Quat::from_array([c[0], c[1], c[2], c[3]]);
    }

    let mut p: Vec<f32> = model.surfels.iter().flat_map(|s| s.log_scales).collect();
    let d: Vec<f32> = g.d_log_scales.iter().flatten().copied().collect();
    skipped += step_group(&mut p, &d, &mut opt.log_scale, lr.log_scale, a);
    for (s, c) in model.surfels.iter_mut().zip(p.chunks_exact(2)) {
        s.log_scales = [c[0], c[1]];
    }

    let mut p: Vec<f32> = model.surfels.iter().map(|s| s.opacity_logit).collect();
    skipped += step_group(&mut p, &g.d_opacity, &mut opt.opacity, lr.opacity, a);
    for (s, v) in model.surfels.iter_mut().zip(p) {
        s.opacity_logit = v;
    }

    let sh_len = g.sh_len;
    let mut p: Vec<f32> = model
        .surfels
        .iter()
        .flat_map(|s| s.sh.iter().copied())
        .collect();
    skipped += step_group(&mut p, &g.d_sh[..n * sh_len], &mut opt.sh, lr.sh, a);
    for (s, c) in model.surfels.iter_mut().zip(p.chunks_exact(sh_len.max(1))) {
        s.sh.copy_from_slice(c);
    }

    let mut p = flat_network(&model.network);
    let d = flat_network(&DeformationNetwork {
        layers: grad.network.layers.clone(),
    });
    skipped += step_group(&mut p, &d, &mut opt.mlp, lr.mlp, a);
    unflatten_network(&mut model.network, &p);

    if skipped > 0 {
        debug!("iteration {it}: skipped {skipped} non-finite gradient entries");
    }
    opt.skipped += skipped;
}

/// Per-iteration record, one per logged row.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub terms: LossTerms,
    pub psnr_holdout: f64,
}

impl LogRow {
    pub fn csv(&self) -> String {
        let t = &self.terms;
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            t.photo,
            t.tv,
            t.pos,
            t.cov,
            t.per,
            t.depth,
            t.normal,
            t.total,
            self.psnr_holdout
        )
    }
}

pub struct Trainer<'a> {
    pub model: SceneModel<f32>,
    pub iteration: usize,
    pub graph: NeighborGraph,
    data: &'a Dataset<f32>,
    cfg: TrainConfig,
    extractor: GradientPyramid,
    opt: Optimizer,
    stats: DensifyStats<f32>,
    rng: ChaCha8Rng,
}

fn stats_line(name: &str, v: impl Iterator<Item = f32>) -> String {
    let (mut lo, mut hi, mut sum, mut n, mut bad) =
        (f32::INFINITY, f32::NEG_INFINITY, 0.0f64, 0usize, 0usize);
    for x in v {
        if !x.is_finite() {
            bad += 1;
            continue;
        }
        lo = lo.min(x);
        hi = hi.max(x);
        sum += x as f64;
        n += 1;
    }
    format!(
        "{name}: min {lo} max {hi} mean {} non-finite {bad}\n",
        sum / n.max(1) as f64
    )
}

impl<'a> Trainer<'a> {
    pub fn new(model: SceneModel<f32>, data: &'a Dataset<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if data.train.is_empty() {
            return Err(Error::InvalidParameter(
                "dataset has no training frames".into(),
            ));
        }
        let positions: Vec<_> = model.surfels.iter().map(|s| s.position).collect();
        Ok(Self {
            graph: NeighborGraph::build(&positions, cfg.densify.k),
            opt: Optimizer::new(&model),
            stats: DensifyStats::new(model.len()),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005E_ED0F_7A1E),
            extractor: GradientPyramid::default(),
            iteration: 0,
            model,
            data,
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Mean held-out PSNR over unmasked pixels, capped for logging.
    pub fn holdout_psnr(&self) -> f64 {
        let st = self.cfg.render_settings();
        let vals: Vec<f64> = self
            .data
            .test_frames()
            .filter_map(|f| {
                let out = self.model.render_at(&self.data.camera, f.timestamp, &st);
                psnr(&out.color, &f.image, Some(&f.tool_mask)).map(cap_psnr)
            })
            .collect();
        if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }

    fn diagnostic(&self, frame: usize, terms: &LossTerms) -> String {
        let f = &self.data.frames[frame];
        let s = &self.model.surfels;
        let mut d = format!(
            "iteration {} frame {frame} (t = {}) produced a non-finite loss\nterms: {terms:?}\nsurfels: {}\n",
            self.iteration,
            f.timestamp,
            s.len()
        );
        d += &stats_line("position", s.iter().flat_map(|s| s.position.to_array()));
        d += &stats_line("rotation", s.iter().flat_map(|s| s.rotation.to_array()));
        d += &stats_line("log_scale", s.iter().flat_map(|s| s.log_scales));
        d += &stats_line("opacity_logit", s.iter().map(|s| s.opacity_logit));
        d += &stats_line("sh", s.iter().flat_map(|s| s.sh.iter().copied()));
        d += &stats_line("mlp", flat_network(&self.model.network).into_iter());
        d += &stats_line("frame_image", f.image.data.iter().copied());
        d += &stats_line("frame_depth", f.depth.data.iter().copied());
        d
    }

    /// One optimization step on a random training frame.
    pub fn step(&mut self) -> Result<LossTerms> {
        let frame = self.data.train[self.rng.random_range(0..self.data.train.len())];
        let obj = Objective {
            weights: self.cfg.weights,
            settings: self.cfg.render_settings(),
            graph: &self.graph,
            extractor: Some(&self.extractor),
        };
        let ev = evaluate(
            &self.model,
            &self.data.frames[frame],
            &self.data.camera,
            &obj,
            true,
        )?;
        if !ev.terms.is_finite() {
            return Err(Error::NonFinite(self.diagnostic(frame, &ev.terms)));
        }
        let grad = ev.grad.expect("gradient requested");
        self.stats.accumulate(&grad.surfels);
        apply_updates(
            &mut self.model,
            &grad,
            &mut self.opt,
            &self.cfg,
            self.iteration,
        );
        self.iteration += 1;
        if self.cfg.densify.due(self.iteration) && self.iteration <= self.cfg.densify_until {
            self.densify();
        }
        Ok(ev.terms)
    }

    fn densify(&mut self) {
        let mut dc = self.cfg.densify;
        if self.model.len() >= self.cfg.max_surfels {
            dc.grad_threshold = f64::INFINITY;
        }
        let peak = (0..self.model.len())
            .map(|i| self.stats.mean(i))
            .fold(0.0f32, f32::max);
        debug!(
            "iteration {}: peak mean view-space gradient {peak:e}",
            self.iteration
        );
        let out = densify_and_prune(
            &self.model.surfels,
            &self.stats,
            &dc,
            self.model.scene_diagonal,
            &mut self.rng,
        );
        info!(
            "iteration {}: cloned {} split {} pruned {} -> {} surfels",
            self.iteration,
            out.cloned,
            out.split,
            out.pruned,
            out.surfels.len()
        );
        let sources: Vec<Option<usize>> = out.origins.iter().map(|o| o.inherited()).collect();
        let sh_len = self.model.surfels.first().map_or(0, |s| s.sh.len());
        self.opt.remap(&sources, sh_len);
        self.model.surfels = out.surfels;
        self.graph = out.graph;
        self.stats = DensifyStats::new(self.model.len());
    }

    /// Runs to `iterations`, logging to `log` and checkpointing under `out`.
    pub fn run(&mut self, out: Option<&Path>, log: &mut dyn Write) -> Result<Vec<LogRow>> {
        let io_err = |e: std::io::Error| {
            Error::io(
                out.map_or_else(|| PathBuf::from("<log>"), |p| p.to_path_buf()),
                e,
            )
        };
        writeln!(log, "{LOG_HEADER}").map_err(io_err)?;
        let mut rows = Vec::new();
        while self.iteration < self.cfg.iterations {
            let terms = match self.step() {
                Ok(t) => t,
                Err(Error::NonFinite(msg)) => {
                    error!("{msg}");
                    if let Some(dir) = out {
                        let p = dir.join("nan_dump.txt");
                        std::fs::write(&p, &msg).map_err(|e| Error::io(&p, e))?;
                    }
                    return Err(Error::NonFinite(msg));
                }
                Err(e) => return Err(e),
            };
            let it = self.iteration;
            let last = it == self.cfg.iterations;
            if (self.cfg.log_interval > 0 && it.is_multiple_of(self.cfg.log_interval)) || last {
                let row = LogRow {
                    iteration: it,
                    terms,
                    psnr_holdout: self.holdout_psnr(),
                };
                writeln!(log, "{}", row.csv()).map_err(io_err)?;
                info!(
                    "iteration {it}: total {:.5} holdout PSNR {:.2} dB, {} surfels",
                    terms.total,
                    row.psnr_holdout,
                    self.model.len()
                );
                rows.push(row);
            }
            if let Some(dir) = out {
                if self.cfg.checkpoint_interval > 0
                    && it.is_multiple_of(self.cfg.checkpoint_interval)
                    && !last
                {
                    write_checkpoint(
                        &dir.join(format!("ckpt_{it:06}")),
                        &self.model,
                        &self.data.camera,
                        it,
                    )?;
                }
            }
        }
        log.flush().map_err(io_err)?;
        if let Some(dir) = out {
            write_checkpoint(
                &dir.join("final"),
                &self.model,
                &self.data.camera,
                self.iteration,
            )?;
        }
        Ok(rows)
    }
}
