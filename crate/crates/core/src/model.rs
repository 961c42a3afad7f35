//! Canonical surfels plus the deformation network, and the full
//! differentiable objective for one supervised view.

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::linalg::Vec3;
use crate::loss::{
    loss_depth, loss_locality, loss_normal, loss_perceptual, loss_photometric, loss_tv,
    FeatureExtractor, LossTerms, LossWeights, NeighborGraph,
};
use crate::mlp::{
    decode_delta, decode_delta_backward, encode_backward, encode_into, Activations,
    DeformationNetwork, EncodingConfig, NetworkGrad, SceneNormalizer,
};
use crate::pimi::FrameBundle;
use crate::raster::{
    render, render_backward, GradientBuffer, RenderGrad, RenderOutput, RenderSettings,
};
use crate::real::{lit, Real};
use crate::surfel::{
    apply_deformation, apply_deformation_backward, DeformationDelta, GaussianSurfel, GeometryGrad,
};

/// Relative padding of the encoder box around the initial cloud.
pub const NORMALIZER_MARGIN: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneModel<T> {
    pub surfels: Vec<GaussianSurfel<T>>,
    pub network: DeformationNetwork<T>,
    pub encoding: EncodingConfig,
    pub normalizer: SceneNormalizer<T>,
    /// Bounding-box diagonal of the initial cloud; densification thresholds scale with it.
    pub scene_diagonal: T,
}

/// Surfels deformed to one timestamp, with what the backward pass needs.
#[derive(Clone, Debug)]
pub struct DeformedScene<T> {
    pub surfels: Vec<GaussianSurfel<T>>,
    pub deltas: Vec<DeformationDelta<T>>,
    pub timestamp: T,
    raw: Vec<T>,
    encoded: Vec<T>,
    normalized: Vec<Vec3<T>>,
    inside: Vec<[bool; 3]>,
    activations: Option<Activations<T>>,
}

pub fn bbox_diagonal<T: Real>(points: impl IntoIterator<Item = Vec3<T>>) -> T {
    let mut lo = Vec3::new(T::infinity(), T::infinity(), T::infinity());
    let mut hi = -lo;
    let mut any = false;
    for p in points {
        any = true;
        lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
        hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
    }
    if any {
        (hi - lo).norm()
    } else {
        T::zero()
    }
}

impl<T: Real> SceneModel<T> {
    /// Wraps an initial cloud; the encoder box and scene diagonal come from its extent.
    pub fn from_cloud(
        surfels: Vec<GaussianSurfel<T>>,
        network: DeformationNetwork<T>,
        encoding: EncodingConfig,
    ) -> Result<Self> {
        if network.input_width() != encoding.width() {
            return Err(Error::DimensionMismatch(format!(
                "network takes {} inputs, encoding emits {}",
                network.input_width(),
                encoding.width()
            )));
        }
        if network.output_width() < crate::mlp::OUTPUT_WIDTH {
            return Err(Error::DimensionMismatch(
                "network must emit 10 values".into(),
            ));
        }
        let normalizer =
            SceneNormalizer::fit(surfels.iter().map(|s| s.position), lit(NORMALIZER_MARGIN));
        let scene_diagonal = bbox_diagonal(surfels.iter().map(|s| s.position));
        Ok(Self {
            surfels,
            network,
            encoding,
            normalizer,
            scene_diagonal,
        })
    }

    pub fn len(&self) -> usize {
        self.surfels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfels.is_empty()
    }

    pub fn deform(&self, t: T, keep_activations: bool) -> DeformedScene<T> {
        let n = self.surfels.len();
        let ew = self.encoding.width();
        let mut encoded = vec![T::zero(); n * ew];
        let mut normalized = Vec::with_capacity(n);
        let mut inside = Vec::with_capacity(n);
        for (s, e) in self.surfels.iter().zip(encoded.chunks_exact_mut(ew)) {
            let (p, ins) = self.normalizer.apply(s.position);
            encode_into(&self.encoding, p, t, e);
            normalized.push(p);
            inside.push(ins);
        }
        let packed = self.network.pack();
        let (raw, activations) = if keep_activations {
            let (r, a) = packed.forward_train(&encoded);
            (r, Some(a))
        } else {
            (packed.forward(&encoded), None)
        };
        let ow = self.network.output_width();
        let deltas: Vec<DeformationDelta<T>> = raw.chunks_exact(ow).map(decode_delta).collect();
        let surfels = self
            .surfels
            .iter()
            .zip(&deltas)
            .map(|(s, d)| apply_deformation(s, d))
            .collect();
        DeformedScene {
            surfels,
            deltas,
            timestamp: t,
            raw,
            encoded,
            normalized,
            inside,
            activations,
        }
    }

    pub fn render_at(
        &self,
        cam: &CameraModel<T>,
        t: T,
        settings: &RenderSettings<T>,
    ) -> RenderOutput<T> {
        render(&self.deform(t, false).surfels, cam, settings)
    }
}

/// Camera-space normal of each pixel's dominant surfel; zero where uncovered.
pub fn top_normals<T: Real>(
    out: &RenderOutput<T>,
    surfels: &[GaussianSurfel<T>],
    cam: &CameraModel<T>,
) -> Image<T> {
    let mut img = Image::new(out.width(), out.height(), 3);
    for (p, t) in out.top_surfel.iter().enumerate() {
        if let Some(i) = t {
            let n = cam.rotation.mul_vec(surfels[*i as usize].normal());
            img.data[3 * p..3 * p + 3].copy_from_slice(&n.to_array());
        }
    }
    img
}

/// Everything that shapes the objective except the model itself.
pub struct Objective<'a, T: Real> {
    pub weights: LossWeights,
    pub settings: RenderSettings<T>,
    pub graph: &'a NeighborGraph,
    pub extractor: Option<&'a dyn FeatureExtractor<T>>,
}

#[derive(Clone, Debug)]
pub struct ModelGrad<T> {
    /// Gradients of the canonical surfel parameters; the view-space statistics
    /// (`homo_grad`, `touch_count`) refer to the deformed render.
    pub surfels: GradientBuffer<T>,
    pub network: NetworkGrad<T>,
}

pub struct Evaluation<T> {
    pub terms: LossTerms,
    pub render: RenderOutput<T>,
    pub grad: Option<ModelGrad<T>>,
}

fn supervision_mask<T: Real>(frame: &FrameBundle<T>) -> Mask {
    let mut m = frame.tool_mask.invert();
    for (v, d) in m.data.iter_mut().zip(&frame.depth.data) {
        *v = *v && d.is_finite() && *d > T::zero();
    }
    m
}

/// Loss of the model against one frame and, if asked, its full gradient.
pub fn evaluate<T: Real>(
    model: &SceneModel<T>,
    frame: &FrameBundle<T>,
    cam: &CameraModel<T>,
    obj: &Objective<'_, T>,
    want_grad: bool,
) -> Result<Evaluation<T>> {
    let w = &obj.weights;
    if w.per > 0.0 && obj.extractor.is_none() {
        return Err(Error::Config(
            "perceptual weight is positive but no feature extractor is set".into(),
        ));
    }
    frame.validate()?;
    if frame.width() != cam.width || frame.height() != cam.height {
        return Err(Error::DimensionMismatch(
            "frame and camera sizes differ".into(),
        ));
    }
    let n = model.len();
    let def = model.deform(frame.timestamp, want_grad);
    let out = render(&def.surfels, cam, &obj.settings);
    let tool = &frame.tool_mask;
    let lw = |x: f64| -> T { lit(x) };

    let photo = loss_photometric(&out.color, &frame.image, Some(tool), lw(w.ssim));
    let tv = loss_tv(&out.color, Some(tool));
    let canon_pos: Vec<Vec3<T>> = model.surfels.iter().map(|s| s.position).collect();
    let def_pos: Vec<Vec3<T>> = def.surfels.iter().map(|s| s.position).collect();
    let canon_scale: Vec<[T; 2]> = model.surfels.iter().map(|s| s.scales()).collect();
    let def_scale: Vec<[T; 2]> = def.surfels.iter().map(|s| s.scales()).collect();
    let loc = loss_locality(&canon_pos, &def_pos, &canon_scale, &def_scale, obj.graph);
    let depth = loss_depth(
        &out.depth,
        &frame.depth,
        &out.alpha,
        &supervision_mask(frame),
    );
    let top = top_normals(&out, &def.surfels, cam);
    let normal = loss_normal(
        &out.normal,
        &out.depth,
        &out.alpha,
        &top,
        cam,
        Some(tool),
        lw(w.alpha_n),
        lw(w.beta_n),
    );
    let per = match obj.extractor {
        Some(ex) if w.per > 0.0 => Some(loss_perceptual(&out.color, &frame.image, Some(tool), ex)),
        _ => None,
    };

    let mut terms = LossTerms {
        photo: photo.value.as_f64(),
        tv: tv.value.as_f64(),
        pos: loc.l_pos.as_f64(),
        cov: loc.l_cov.as_f64(),
        per: per.as_ref().map_or(0.0, |p| p.value.as_f64()),
        depth: depth.value.as_f64(),
        normal: normal.value.as_f64(),
        total: 0.0,
    };
    let total = lw(w.photo) * photo.value
        + lw(w.smooth) * tv.value
        + lw(w.pos) * loc.l_pos
        + lw(w.cov) * loc.l_cov
        + lw(w.per) * per.as_ref().map_or(T::zero(), |p| p.value)
        + lw(w.depth) * depth.value
        + lw(w.normal) * normal.value;
    terms.total = total.as_f64();
    if !want_grad {
        return Ok(Evaluation {
            terms,
            render: out,
            grad: None,
        });
    }

    // upstream image gradients
    let (ww, hh) = (cam.width, cam.height);
    let mut rg = RenderGrad::zeros(ww, hh);
    for (i, g) in rg.color.data.iter_mut().enumerate() {
        *g = lw(w.photo) * photo.grad.data[i]
            + lw(w.smooth) * tv.grad.data[i]
            + per
                .as_ref()
                .map_or(T::zero(), |p| lw(w.per) * p.grad.data[i]);
    }
    for (i, g) in rg.depth.data.iter_mut().enumerate() {
        *g = lw(w.depth) * depth.grad.data[i] + lw(w.normal) * normal.d_depth.data[i];
    }
    for (i, g) in rg.normal.data.iter_mut().enumerate() {
        *g = lw(w.normal) * normal.d_normal.data[i];
    }
    for (i, g) in rg.top_normal.data.iter_mut().enumerate() {
        *g = lw(w.normal) * normal.d_top.data[i];
    }
    let mut gb = render_backward(&def.surfels, cam, &obj.settings, &out, &rg);

    let ow = model.network.output_width();
    let mut d_raw = vec![T::zero(); n * ow];
    for i in 0..n {
        let mut dlog = gb.d_log_scales[i];
        for k in 0..2 {
            dlog[k] += lw(w.cov) * loc.d_deformed_scales[i][k] * def_scale[i][k];
        }
        let g = GeometryGrad {
            position: gb.d_position[i] + loc.d_deformed_positions[i] * lw(w.pos),
            rotation: gb.d_rotation[i],
            log_scales: dlog,
        };
        let (geo, dd) = apply_deformation_backward(&model.surfels[i], &def.deltas[i], &g);
        d_raw[i * ow..i * ow + crate::mlp::OUTPUT_WIDTH]
            .copy_from_slice(&decode_delta_backward(&def.raw[i * ow..(i + 1) * ow], &dd));
        gb.d_position[i] = geo.position + loc.d_canonical_positions[i] * lw(w.pos);
        gb.d_rotation[i] = geo.rotation;
        for k in 0..2 {
            gb.d_log_scales[i][k] =
                geo.log_scales[k] + lw(w.cov) * loc.d_canonical_scales[i][k] * canon_scale[i][k];
        }
    }
    let acts = def
        .activations
        .as_ref()
        .expect("activations kept for the backward pass");
    let (net_grad, d_enc) = model.network.pack().backward(&def.encoded, acts, &d_raw);
    let ew = model.encoding.width();
    for i in 0..n {
        let (dp, _) = encode_backward(
            &model.encoding,
            def.normalized[i],
            def.timestamp,
            &d_enc[i * ew..(i + 1) * ew],
        );
        gb.d_position[i] += model.normalizer.backward(def.inside[i], dp);
    }
    Ok(Evaluation {
        terms,
        render: out,
        grad: Some(ModelGrad {
            surfels: gb,
            network: net_grad,
        }),
    })
}
