//! Seeded synthetic road scenes: ground-truth maps, labels, camera
//! renderings and LiDAR-like point clouds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bevnet::labels::{rasterize_vector_map, LabelPack};
use crate::error::{Error, Result};
use crate::geometry::{ipm_pixel_to_ground, BevConfig, RigCamera};
use crate::map::{MapClass, Polyline, VectorMap};
use crate::numerics::Grid2D;
use crate::pillars::PointCloud;
use crate::raster::Thickness;

/// Distribution of generated scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    /// Lanes per travel direction are drawn from `1..=max_lanes`.
    pub max_lanes: usize,
    /// Signed curvature range, 1/m.
    pub curvature: [f64; 2],
    pub lane_width: f64,
    pub crossing_prob: f64,
    /// LiDAR returns per square meter.
    pub density: f64,
    /// Curb height at a boundary, m.
    pub bump_height: f64,
    pub z_noise: f64,
    pub intensity_noise: f64,
    pub image_noise: f64,
    /// Road heading is drawn from `±heading_jitter` radians.
    pub heading_jitter: f64,
    /// Road center is shifted laterally by up to this many meters.
    pub offset_jitter: f64,
    /// Half width of painted markings seen by the LiDAR intensity channel, m.
    pub marking_half_width: f64,
    /// Subsamples per pixel side when rendering cameras.
    pub supersample: usize,
    pub thickness: Thickness,
    pub n_dir: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            max_lanes: 2,
            curvature: [-0.02, 0.02],
            lane_width: 3.5,
            crossing_prob: 0.5,
            density: 8.0,
            bump_height: 0.15,
            z_noise: 0.02,
            intensity_noise: 0.05,
            image_noise: 0.05,
            heading_jitter: 0.15,
            offset_jitter: 1.5,
            marking_half_width: 0.15,
            supersample: 3,
            thickness: Thickness::default(),
            n_dir: 36,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("scene spec: {m}")));
        if self.max_lanes == 0 {
            return bad("max_lanes must be at least 1");
        }
        if !(self.lane_width > 0.0) || !(self.density > 0.0) {
            return bad("lane width and density must be positive");
        }
        if !(self.curvature[0] <= self.curvature[1]) || !(0.0..=1.0).contains(&self.crossing_prob) {
            return bad("invalid curvature range or crossing probability");
        }
        let nonneg = [
            self.bump_height,
            self.z_noise,
            self.intensity_noise,
            self.image_noise,
            self.heading_jitter,
            self.offset_jitter,
            self.marking_half_width,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("noise levels and jitters must be non-negative");
        }
        if self.supersample == 0 || self.n_dir == 0 || self.n_dir % 2 != 0 {
            return bad("supersample must be ≥ 1 and n_dir even");
        }
        Ok(())
    }
}

/// Parameters actually drawn for one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub seed: u64,
    pub lanes_left: usize,
    pub lanes_right: usize,
    pub curvature: f64,
    pub heading: f64,
    pub offset: f64,
    pub crossing: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub map: VectorMap,
    pub labels: LabelPack,
    /// One per rig camera, `height × width × 3` class coverage plus noise.
    pub images: Vec<Grid2D>,
    /// `x, y, z, intensity`.
    pub points: PointCloud,
    pub meta: SceneMeta,
}

/// Constant-curvature reference line through `(0, offset)` with heading `heading`.
#[derive(Debug, Clone, Copy)]
struct Road {
    kappa: f64,
    heading: f64,
    offset: f64,
}

impl Road {
    /// Point at arc length `s` along the reference, shifted `d` to its left.
    fn at(&self, s: f64, d: f64) -> [f64; 2] {
        let p0 = [0.0, self.offset];
        if self.kappa.abs() < 1e-9 {
            let (sn, cs) = self.heading.sin_cos();
            return [p0[0] + s * cs - d * sn, p0[1] + s * sn + d * cs];
        }
        let n0 = [-self.heading.sin(), self.heading.cos()];
        let center = [p0[0] + n0[0] / self.kappa, p0[1] + n0[1] / self.kappa];
        let th = self.heading + self.kappa * s;
        let n = [-th.sin(), th.cos()];
        let r = 1.0 / self.kappa - d;
        [center[0] - r * n[0], center[1] - r * n[1]]
    }
}

/// Clips a polyline to the box, returning the pieces inside.
pub fn clip_polyline(points: &[[f64; 2]], bev: &BevConfig) -> Vec<Vec<[f64; 2]>> {
    // Pull the far edges in slightly so clipped endpoints bin inside the raster.
    let eps = 1e-6 * bev.pitch;
    let (x0, x1, y0, y1) = (bev.x_min, bev.x_max - eps, bev.y_min, bev.y_max - eps);
    let mut pieces: Vec<Vec<[f64; 2]>> = Vec::new();
    let mut open = false;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let d = [b[0] - a[0], b[1] - a[1]];
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        let mut inside = true;
        for (p, q) in [(-d[0], a[0] - x0), (d[0], x1 - a[0]), (-d[1], a[1] - y0), (d[1], y1 - a[1])] {
            if p == 0.0 {
                if q < 0.0 {
                    inside = false;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
            }
        }
        if !inside || t0 > t1 {
            open = false;
            continue;
        }
        let pa = [a[0] + t0 * d[0], a[1] + t0 * d[1]];
        let pb = [a[0] + t1 * d[0], a[1] + t1 * d[1]];
        if !(open && t0 == 0.0) {
            pieces.push(vec![pa]);
        }
        pieces.last_mut().expect("piece started").push(pb);
        open = t1 == 1.0;
    }
    pieces
        .into_iter()
        .map(|mut p| {
            p.dedup();
            p
        })
        .filter(|p| p.len() >= 2)
        .collect()
}

/// Shortest clipped piece kept as a map element.
pub fn min_element_length(bev: &BevConfig) -> f64 {
    (8.0 * bev.pitch).max(1.0)
}

fn sample_line(road: &Road, d: f64, s0: f64, s1: f64, step: f64) -> Vec<[f64; 2]> {
    let n = ((s1 - s0) / step).ceil().max(1.0) as usize;
    (0..=n).map(|i| road.at(s0 + (s1 - s0) * i as f64 / n as f64, d)).collect()
}

/// Scene map before clipping (used for rendering beyond the BEV) and after.
fn layout(spec: &SceneSpec, bev: &BevConfig, rng: &mut ChaCha8Rng) -> (Vec<Polyline>, SceneMeta) {
    let lanes_left = rng.random_range(1..=spec.max_lanes);
    let lanes_right = rng.random_range(1..=spec.max_lanes);
    let kappa = if spec.curvature[0] < spec.curvature[1] {
        rng.random_range(spec.curvature[0]..=spec.curvature[1])
    } else {
        spec.curvature[0]
    };
    let heading = if spec.heading_jitter > 0.0 {
        rng.random_range(-spec.heading_jitter..=spec.heading_jitter)
    } else {
        0.0
    };
    let offset = if spec.offset_jitter > 0.0 {
        rng.random_range(-spec.offset_jitter..=spec.offset_jitter)
    } else {
        0.0
    };
    let road = Road { kappa, heading, offset };
    let reach = bev.diagonal() / 2.0 + 10.0;
    let w = spec.lane_width;
    let mut lines = Vec::new();
    // Crossing first so lane lines drawn later keep their cells.
    let crossing = (rng.random::<f64>() < spec.crossing_prob).then(|| {
        let half = (bev.x_max - bev.x_min) / 3.0;
        rng.random_range(-half..=half)
    });
    if let Some(sc) = crossing {
        let d0 = -(lanes_right as f64) * w;
        let d1 = lanes_left as f64 * w;
        lines.push(Polyline {
            class: MapClass::PedCrossing,
            points: vec![road.at(sc, d0), road.at(sc, d1)],
            confidence: 1.0,
        });
    }
    let right = -(lanes_right as i64);
    let left = lanes_left as i64;
    for k in right..=left {
        let class = if k == right || k == left {
            MapClass::Boundary
        } else {
            MapClass::Divider
        };
        lines.push(Polyline {
            class,
            points: sample_line(&road, k as f64 * w, -reach, reach, 1.0),
            confidence: 1.0,
        });
    }
    let meta = SceneMeta {
        seed: spec.seed,
        lanes_left,
        lanes_right,
        curvature: kappa,
        heading,
        offset,
        crossing,
    };
    (lines, meta)
}

/// Extent used for rendering sensors, covering what the cameras can see.
fn render_extent(bev: &BevConfig, margin: f64) -> BevConfig {
    BevConfig {
        x_min: bev.x_min - margin,
        x_max: bev.x_max + margin,
        y_min: bev.y_min - margin,
        y_max: bev.y_max + margin,
        pitch: bev.pitch,
    }
}

pub fn gen_scene(spec: &SceneSpec, bev: &BevConfig, rig: &[RigCamera]) -> Result<Scene> {
    spec.validate()?;
    bev.validate()?;
    if (bev.y_max - bev.y_min).min(bev.x_max - bev.x_min) < spec.lane_width {
        return Err(Error::InvalidArgument(format!(
            "BEV extent is too small for a {} m lane",
            spec.lane_width
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lines, meta) = layout(spec, bev, &mut rng);

    let min_len = min_element_length(bev);
    let mut map = VectorMap::new(*bev);
    for l in &lines {
        for piece in clip_polyline(&l.points, bev) {
            let p = Polyline {
                class: l.class,
                points: piece,
                confidence: 1.0,
            };
            if p.length() >= min_len {
                map.elements.push(p);
            }
        }
    }
    let labels = rasterize_vector_map(&map, bev, &spec.thickness, spec.n_dir)?;

    let full = render_extent(bev, 20.0);
    let full_map = VectorMap {
        bev: full,
        elements: lines.iter().flat_map(|l| clip_polyline(&l.points, &full).into_iter().map(|p| Polyline {
            class: l.class,
            points: p,
            confidence: 1.0,
        })).collect(),
    };
    let render_labels = rasterize_vector_map(&full_map, &full, &spec.thickness, spec.n_dir)?;
    let classes = render_labels.classes();

    let mut images = Vec::with_capacity(rig.len());
    let image_noise = Normal::new(0.0, spec.image_noise.max(1e-300)).expect("valid sigma");
    for cam in rig {
        let mut img = render_camera(cam, &full, &classes, spec.supersample);
        if spec.image_noise > 0.0 {
            img.data_mut().iter_mut().for_each(|v| *v += image_noise.sample(&mut rng));
        }
        images.push(img);
    }

    let points = sample_points(spec, bev, &lines, &mut rng)?;
    Ok(Scene {
        map,
        labels,
        images,
        points,
        meta,
    })
}

/// Per-pixel class coverage: the fraction of subsample rays whose ground
/// hit lands in a cell of each class.
pub fn render_camera(cam: &RigCamera, extent: &BevConfig, classes: &[usize], supersample: usize) -> Grid2D {
    let d = MapClass::ALL.len();
    let s = supersample.max(1);
    let w = 1.0 / (s * s) as f64;
    let cols = extent.cols();
    let mut img = Grid2D::zeros(cam.height, cam.width, d);
    for v in 0..cam.height {
        for u in 0..cam.width {
            for i in 0..s {
                for j in 0..s {
                    let pv = v as f64 + (i as f64 + 0.5) / s as f64 - 0.5;
                    let pu = u as f64 + (j as f64 + 0.5) / s as f64 - 0.5;
                    let Some([x, y]) = ipm_pixel_to_ground(&cam.model, pu, pv) else {
                        continue;
                    };
                    if let Some((r, c)) = extent.cell_of(x, y) {
                        let k = classes[r * cols + c];
                        if k > 0 {
                            img.cell_mut(v, u)[k - 1] += w;
                        }
                    }
                }
            }
        }
    }
    img
}

fn sample_points(spec: &SceneSpec, bev: &BevConfig, lines: &[Polyline], rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    let margin = 2.0;
    let (x0, x1) = (bev.x_min - margin, bev.x_max + margin);
    let (y0, y1) = (bev.y_min - margin, bev.y_max + margin);
    let n = (spec.density * (x1 - x0) * (y1 - y0)).round() as usize;
    let z_noise = Normal::new(0.0, spec.z_noise.max(1e-300)).expect("valid sigma");
    let i_noise = Normal::new(0.0, spec.intensity_noise.max(1e-300)).expect("valid sigma");
    let crossing_half = 1.5 * bev.pitch;
    let mut pc = PointCloud::new(1);
    for _ in 0..n {
        let x = rng.random_range(x0..x1);
        let y = rng.random_range(y0..y1);
        let mut z = 0.0;
        let mut painted = false;
        for l in lines {
            let d = l.distance_to([x, y]);
            match l.class {
                MapClass::Boundary => z += spec.bump_height * (1.0 - d / 0.4).max(0.0),
                MapClass::Divider => painted |= d < spec.marking_half_width,
                MapClass::PedCrossing => painted |= d < crossing_half,
            }
        }
        let zn = if spec.z_noise > 0.0 { z_noise.sample(rng) } else { 0.0 };
        let inn = if spec.intensity_noise > 0.0 { i_noise.sample(rng) } else { 0.0 };
        let intensity = if painted { 1.0 } else { 0.1 };
        pc.push(&[x, y, z + zn, intensity + inn])?;
    }
    Ok(pc)
}

/// Network outputs a perfect model would produce for `labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdealGrids {
    /// One-hot class probabilities.
    pub seg: Grid2D,
    /// Instance `i` sits at `2δ_d·e_{(i−1) mod E}`, a simplex vertex.
    pub emb: Grid2D,
    /// Two-hot labels normalized to 0.5 / 0.5.
    pub dir: Grid2D,
}

pub fn ideal_grids(labels: &LabelPack, embed_dim: usize, delta_d: f64) -> IdealGrids {
    let (h, w) = (labels.rows(), labels.cols());
    let mut emb = Grid2D::zeros(h, w, embed_dim);
    for (i, &id) in labels.instance.iter().enumerate() {
        if id != 0 {
            emb.data_mut()[i * embed_dim + (id as usize - 1) % embed_dim] = 2.0 * delta_d;
        }
    }
    let dir = labels.direction.map(|v| v * 0.5);
    IdealGrids {
        seg: labels.semantic.clone(),
        emb,
        dir,
    }
}

/// Scene seed `index` of a dataset generated from `base`.
pub fn scene_seed(base: u64, index: usize) -> u64 {
    // splitmix64 finalizer over the pair.
    let mut z = base ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
