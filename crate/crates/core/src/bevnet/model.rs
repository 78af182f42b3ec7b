//! The assembled network: camera branch (fixed image encoder, learned view
//! transform, planar warp into the ego BEV, multi-camera mean), LiDAR branch
//! (pillars), and the shared decoder.

use std::path::Path;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::bevnet::decoder::{decode_backward, decode_forward, DecoderOutput, DecoderParams, DecoderTrace, HeadSizes};
use crate::bevnet::labels::LabelPack;
use crate::bevnet::losses::{direction_loss, discriminative_loss, segmentation_loss, LossWeights};
use crate::bevnet::view::{view_backward, view_forward, ViewTransformParams};
use crate::error::{Error, Result};
use crate::geometry::warp::valid_counts;
use crate::geometry::{fuse_cameras, planar_plan, BevConfig, GroundPose, Interp, MaskedGrid, RigCamera, SamplePlan};
use crate::io::json::{read_json, write_json};
use crate::io::{read_grid, write_bytes, write_grid};
use crate::map::MapClass;
use crate::numerics::{pool2d, softmax_in_place, Activation, DenseNetParams, ForwardTrace, Grid2D, NetGradients, PoolMode};
use crate::pillars::{aggregate_pillars_traced, backward_pillars, voxelize_dynamic, PillarFeatures, PillarIndex, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Camera,
    Lidar,
    Fusion,
}

impl Modality {
    pub fn uses_camera(self) -> bool {
        matches!(self, Modality::Camera | Modality::Fusion)
    }

    pub fn uses_lidar(self) -> bool {
        matches!(self, Modality::Lidar | Modality::Fusion)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub modality: Modality,
    /// Raster each camera's view transform writes, in that camera's ground
    /// frame (+x along its heading).
    pub topdown: BevConfig,
    pub view_hidden: usize,
    pub image_channels: usize,
    /// Per-point values after `x, y, z`.
    pub point_extra: usize,
    pub pillar_hidden: usize,
    pub pillar_width: usize,
    pub decoder_width: usize,
    pub decoder_layers: usize,
    pub embed_dim: usize,
    pub n_dir: usize,
    pub loss: LossWeights,
    /// Camera tilt, radians, above which the planar warp logs a warning.
    pub max_tilt: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            modality: Modality::Fusion,
            topdown: BevConfig {
                x_min: 0.0,
                x_max: 14.0,
                y_min: -7.0,
                y_max: 7.0,
                pitch: 0.5,
            },
            view_hidden: 256,
            image_channels: 3,
            point_extra: 1,
            pillar_hidden: 32,
            pillar_width: 16,
            decoder_width: 32,
            decoder_layers: 3,
            embed_dim: 16,
            n_dir: 36,
            loss: LossWeights::default(),
            max_tilt: 1.2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.topdown.validate()?;
        self.loss.validate()?;
        let sizes = [
            self.view_hidden,
            self.image_channels,
            self.pillar_hidden,
            self.pillar_width,
            self.decoder_width,
            self.embed_dim,
        ];
        if sizes.contains(&0) {
            return Err(Error::InvalidArgument("model widths must be positive".into()));
        }
        if self.n_dir == 0 || self.n_dir % 2 != 0 {
            return Err(Error::InvalidArgument(format!("n_dir must be even, got {}", self.n_dir)));
        }
        Ok(())
    }

    pub fn heads(&self) -> HeadSizes {
        HeadSizes {
            seg: MapClass::ALL.len() + 1,
            emb: self.embed_dim,
            dir: self.n_dir,
        }
    }

    /// Channels of the fixed image encoder: raw values and a 3×3 mean.
    pub fn encoded_channels(&self) -> usize {
        2 * self.image_channels
    }

    pub fn feature_channels(&self) -> usize {
        let mut ch = 0;
        if self.modality.uses_camera() {
            ch += self.encoded_channels();
        }
        if self.modality.uses_lidar() {
            ch += self.pillar_width;
        }
        ch
    }
}

/// Fixed perspective-view encoder.
pub fn encode_image(img: &Grid2D) -> Result<Grid2D> {
    let smooth = pool2d(img, 3, 3, PoolMode::Avg)?;
    Grid2D::concat_channels(&[img, &smooth])
}

/// Sensor inputs of one scene, preprocessed for the model.
#[derive(Debug, Clone)]
pub struct SceneInput {
    pub features: Vec<Grid2D>,
    pub pillars: PillarIndex,
    pub points: PointCloud,
}

impl SceneInput {
    pub fn new(images: &[Grid2D], points: &PointCloud, bev: &BevConfig) -> Result<Self> {
        Ok(Self {
            features: images.iter().map(encode_image).collect::<Result<_>>()?,
            pillars: voxelize_dynamic(points, bev),
            points: points.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub bev: BevConfig,
    pub rig: Vec<RigCamera>,
    pub view: Option<ViewTransformParams>,
    pub pillar_net: Option<DenseNetParams>,
    pub decoder: DecoderParams,
    plans: Vec<SamplePlan>,
}

/// Gradient buffers shaped like a [`Model`].
#[derive(Debug, Clone)]
pub struct ModelGradients {
    pub view: Vec<NetGradients>,
    pub pillar: Option<NetGradients>,
    pub decoder: Vec<NetGradients>,
}

impl ModelGradients {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.view.iter().flat_map(NetGradients::tensors).collect();
        if let Some(p) = &self.pillar {
            out.extend(p.tensors());
        }
        out.extend(self.decoder.iter().flat_map(NetGradients::tensors));
        out
    }
}

pub struct ModelTrace {
    views: Vec<(ForwardTrace, Vec<bool>)>,
    counts: Vec<usize>,
    pillars: Option<PillarFeatures>,
    decoder: DecoderTrace,
}

/// Loss values of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub seg: f64,
    pub emb: f64,
    pub dir: f64,
    pub total: f64,
}

/// Probabilities and embeddings a trained model predicts for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub seg: Grid2D,
    pub emb: Grid2D,
    pub dir: Grid2D,
}

impl Prediction {
    /// One binary mask per map class from the per-cell argmax.
    pub fn class_masks(&self) -> Grid2D {
        let (h, w) = (self.seg.height(), self.seg.width());
        let classes: Vec<usize> = self
            .seg
            .data()
            .chunks_exact(self.seg.channels())
            .map(argmax)
            .collect();
        crate::bevnet::labels::class_masks_from_labels(&classes, h, w)
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &x)| if x > b.1 { (i, x) } else { b })
        .0
}

fn softmax_channels(g: &Grid2D) -> Grid2D {
    let mut out = g.clone();
    let ch = g.channels();
    out.data_mut().chunks_exact_mut(ch).for_each(softmax_in_place);
    out
}

impl Model {
    pub fn init(config: ModelConfig, bev: BevConfig, rig: Vec<RigCamera>, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        bev.validate()?;
        let (view, pillar_net) = (
            if config.modality.uses_camera() {
                let persp = rig_image_size(&rig)?;
                let td = (config.topdown.rows(), config.topdown.cols());
                Some(ViewTransformParams::init(rig.len(), persp, td, config.view_hidden, rng)?)
            } else {
                None
            },
            if config.modality.uses_lidar() {
                Some(DenseNetParams::init(
                    &[config.point_extra + 5, config.pillar_hidden, config.pillar_width],
                    &[Activation::Relu, Activation::Relu],
                    rng,
                )?)
            } else {
                None
            },
        );
        let decoder = DecoderParams::init(
            config.feature_channels(),
            config.decoder_width,
            config.decoder_layers,
            config.heads(),
            rng,
        )?;
        let plans = if view.is_some() { build_plans(&config, &bev, &rig) } else { Vec::new() };
        Ok(Self {
            config,
            bev,
            rig,
            view,
            pillar_net,
            decoder,
            plans,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Every parameter tensor, with a stable name, in optimizer order.
    pub fn named_tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = Vec::new();
        if let Some(v) = &self.view {
            for (cam, net) in self.rig.iter().zip(&v.nets) {
                push_net(format!("view.{}", cam.name), net, &mut out);
            }
        }
        if let Some(p) = &self.pillar_net {
            push_net("pillar".into(), p, &mut out);
        }
        for (i, l) in self.decoder.layers().enumerate() {
            push_net(format!("decoder.{i}"), &l.net, &mut out);
        }
        out
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.named_tensors().into_iter().map(|t| t.2).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        if let Some(v) = &mut self.view {
            for net in &mut v.nets {
                out.extend(net.tensors_mut());
            }
        }
        if let Some(p) = &mut self.pillar_net {
            out.extend(p.tensors_mut());
        }
        for l in self.decoder.layers_mut() {
            out.extend(l.net.tensors_mut());
        }
        out
    }

    pub fn zero_gradients(&self) -> ModelGradients {
        ModelGradients {
            view: self
                .view
                .as_ref()
                .map(|v| v.nets.iter().map(DenseNetParams::zero_gradients).collect())
                .unwrap_or_default(),
            pillar: self.pillar_net.as_ref().map(DenseNetParams::zero_gradients),
            decoder: self.decoder.layers().map(|l| l.net.zero_gradients()).collect(),
        }
    }

    pub fn prepare(&self, images: &[Grid2D], points: &PointCloud) -> Result<SceneInput> {
        if self.config.modality.uses_camera() && images.len() != self.rig.len() {
            return Err(Error::Shape(format!(
                "{} images for a {}-camera rig",
                images.len(),
                self.rig.len()
            )));
        }
        if self.config.modality.uses_lidar() && points.extra() != self.config.point_extra {
            return Err(Error::Shape(format!(
                "points carry {} extra values, model expects {}",
                points.extra(),
                self.config.point_extra
            )));
        }
        SceneInput::new(images, points, &self.bev)
    }

    pub fn forward(&self, input: &SceneInput) -> Result<(DecoderOutput, ModelTrace)> {
        let mut parts = Vec::new();
        let mut views = Vec::new();
        let mut counts = Vec::new();
        if let Some(vt) = &self.view {
            let mut warped = Vec::with_capacity(vt.nets.len());
            for ((net, feat), plan) in vt.nets.iter().zip(&input.features).zip(&self.plans) {
                let (td, trace) = view_forward(feat, net, vt.topdown)?;
                let m: MaskedGrid = plan.apply(&td)?;
                views.push((trace, m.mask.clone()));
                warped.push(m);
            }
            counts = valid_counts(&warped);
            parts.push(fuse_cameras(&warped)?);
        }
        let mut pillars = None;
        if let Some(pn) = &self.pillar_net {
            let f = aggregate_pillars_traced(&input.pillars, &input.points, pn)?;
            parts.push(f.grid.clone());
            pillars = Some(f);
        }
        let refs: Vec<&Grid2D> = parts.iter().collect();
        let features = Grid2D::concat_channels(&refs)?;
        let (out, decoder) = decode_forward(&features, &self.decoder)?;
        Ok((
            out,
            ModelTrace {
                views,
                counts,
                pillars,
                decoder,
            },
        ))
    }

    /// Accumulates parameter gradients for the output gradient `dout`.
    pub fn backward(&self, trace: &ModelTrace, dout: &DecoderOutput, grads: &mut ModelGradients) -> Result<()> {
        let dfeat = decode_backward(&self.decoder, &trace.decoder, dout, &mut grads.decoder)?;
        let mut rest = dfeat;
        if let Some(vt) = &self.view {
            let (dcam, r) = rest.split_channels(self.config.encoded_channels());
            rest = r;
            let ch = dcam.channels();
            for (i, ((net, (vtrace, mask)), plan)) in vt.nets.iter().zip(&trace.views).zip(&self.plans).enumerate() {
                let mut dm = Grid2D::zeros(dcam.height(), dcam.width(), ch);
                for (cell, &valid) in mask.iter().enumerate() {
                    if valid {
                        let inv = 1.0 / trace.counts[cell] as f64;
                        let src = &dcam.data()[cell * ch..(cell + 1) * ch];
                        for (d, s) in dm.data_mut()[cell * ch..(cell + 1) * ch].iter_mut().zip(src) {
                            *d = s * inv;
                        }
                    }
                }
                let dtd = plan.apply_transpose(&dm)?;
                view_backward(net, vtrace, &dtd, &mut grads.view[i])?;
            }
        }
        if let (Some(pn), Some(f), Some(g)) = (&self.pillar_net, &trace.pillars, &mut grads.pillar) {
            backward_pillars(pn, f, &rest, g)?;
        }
        Ok(())
    }

    pub fn predict(&self, input: &SceneInput) -> Result<Prediction> {
        let (out, _) = self.forward(input)?;
        Ok(Prediction {
            seg: softmax_channels(&out.seg),
            emb: out.emb,
            dir: softmax_channels(&out.dir),
        })
    }

    /// Writes one BVG1 grid per tensor plus `manifest.json` and `rig.json`.
    pub fn save(&self, dir: &Path, extra: serde_json::Value) -> Result<()> {
        let mut entries = Vec::new();
        for (name, (rows, cols), data) in self.named_tensors() {
            let file = format!("{name}.bvg");
            write_grid(&dir.join(&file), &Grid2D::from_vec(rows, cols, 1, data.to_vec())?)?;
            entries.push(TensorEntry {
                name,
                file,
                shape: [rows, cols],
            });
        }
        let manifest = BundleManifest {
            config: self.config.clone(),
            bev: self.bev,
            tensors: entries,
            extra,
        };
        write_bytes(&dir.join("rig.json"), crate::geometry::rig_to_json(&self.rig).as_bytes())?;
        write_json(&dir.join("manifest.json"), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest.json");
        let manifest: BundleManifest = read_json(&mpath)?;
        let rig = crate::dataset::read_rig(&dir.join("rig.json"))?;
        // Structure comes from the config; values from the tensor files.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = Self::init(manifest.config, manifest.bev, rig, &mut rng)?;
        let expected: Vec<(String, (usize, usize))> =
            model.named_tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        if expected.len() != manifest.tensors.len() {
            return Err(Error::Shape(format!(
                "{}: lists {} tensors, the config needs {}",
                mpath.display(),
                manifest.tensors.len(),
                expected.len()
            )));
        }
        let mut values = Vec::with_capacity(expected.len());
        for ((name, shape), entry) in expected.iter().zip(&manifest.tensors) {
            let path = dir.join(&entry.file);
            let g = read_grid(&path)?;
            if *name != entry.name || (g.height(), g.width(), g.channels()) != (shape.0, shape.1, 1) {
                return Err(Error::Shape(format!(
                    "{}: expected tensor {name} of shape {}x{}",
                    path.display(),
                    shape.0,
                    shape.1
                )));
            }
            values.push(g.into_data());
        }
        for (t, v) in model.tensors_mut().into_iter().zip(values) {
            t.copy_from_slice(&v);
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    file: String,
    shape: [usize; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BundleManifest {
    config: ModelConfig,
    bev: BevConfig,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    extra: serde_json::Value,
}

type NamedTensor<'a> = (String, (usize, usize), &'a [f64]);

fn push_net<'a>(prefix: String, net: &'a DenseNetParams, out: &mut Vec<NamedTensor<'a>>) {
    for (i, l) in net.layers().iter().enumerate() {
        out.push((format!("{prefix}.{i}.weight"), (l.outputs, l.inputs), &l.weight[..]));
        out.push((format!("{prefix}.{i}.bias"), (1, l.outputs), &l.bias[..]));
    }
}

fn rig_image_size(rig: &[RigCamera]) -> Result<(usize, usize)> {
    let first = rig
        .first()
        .ok_or_else(|| Error::InvalidArgument("camera modality needs at least one camera".into()))?;
    if rig.iter().any(|c| (c.height, c.width) != (first.height, first.width)) {
        return Err(Error::Shape("all rig cameras must share one image size".into()));
    }
    Ok((first.height, first.width))
}

fn build_plans(config: &ModelConfig, bev: &BevConfig, rig: &[RigCamera]) -> Vec<SamplePlan> {
    rig.iter()
        .map(|cam| {
            let pose = GroundPose::from_camera(&cam.model);
            if pose.tilt > config.max_tilt {
                log::warn!(
                    "camera {} tilt {:.3} rad exceeds {:.3}; using its ground-plane projection",
                    cam.name,
                    pose.tilt,
                    config.max_tilt
                );
            }
            planar_plan(&pose, &config.topdown, bev, Interp::Bilinear)
        })
        .collect()
}

/// Segmentation + embedding + direction losses and the gradient of their
/// unit-weighted sum with respect to the decoder outputs.
pub fn model_losses(out: &DecoderOutput, labels: &LabelPack, w: &LossWeights) -> Result<(LossBreakdown, DecoderOutput)> {
    let seg = segmentation_loss(&out.seg, &labels.semantic)?;
    let emb = discriminative_loss(&out.emb, &labels.instance, w)?;
    let dir = direction_loss(&out.dir, &labels.direction)?;
    let b = LossBreakdown {
        seg: seg.loss,
        emb: emb.total.loss,
        dir: dir.loss,
        total: seg.loss + emb.total.loss + dir.loss,
    };
    Ok((
        b,
        DecoderOutput {
            seg: seg.grad,
            emb: emb.total.grad,
            dir: dir.grad,
        },
    ))
}
