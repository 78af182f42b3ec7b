//! Resampling between rasters: perspective → BEV by inverse perspective
//! mapping, camera ground frame → ego BEV by the planar part of the
//! extrinsics, and the multi-camera average.
//!
//! Every warp is first compiled into a [`SamplePlan`]: a fixed list of
//! interpolation taps per destination cell. Because the plan is linear in
//! the source values, the same plan also gives the exact transpose used to
//! push gradients back through a warp during training.

use crate::error::{Error, Result};
use crate::geometry::bev::BevConfig;
use crate::geometry::camera::{project_ego_to_pixel, CameraModel};
use crate::numerics::Grid2D;

const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interp {
    #[default]
    Bilinear,
    /// For label rasters, where blending class ids makes no sense.
    Nearest,
}

/// A grid paired with a per-cell validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedGrid {
    pub grid: Grid2D,
    pub mask: Vec<bool>,
}

impl MaskedGrid {
    pub fn new(grid: Grid2D, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != grid.cells() {
            return Err(Error::Shape(format!(
                "mask has {} cells, grid has {}",
                mask.len(),
                grid.cells()
            )));
        }
        Ok(Self { grid, mask })
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Taps {
    idx: [usize; 4],
    weight: [f64; 4],
}

/// Precomputed interpolation taps from a source raster to a destination raster.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlan {
    src: (usize, usize),
    dst: (usize, usize),
    taps: Vec<Option<Taps>>,
}

impl SamplePlan {
    /// Builds a plan by asking `locate(row, col)` for the continuous source
    /// coordinates of each destination cell (`None` when it has none).
    pub fn build(
        src: (usize, usize),
        dst: (usize, usize),
        interp: Interp,
        mut locate: impl FnMut(usize, usize) -> Option<[f64; 2]>,
    ) -> Self {
        let mut taps = Vec::with_capacity(dst.0 * dst.1);
        for r in 0..dst.0 {
            for c in 0..dst.1 {
                taps.push(locate(r, c).and_then(|p| taps_at(src, p[0], p[1], interp)));
            }
        }
        Self { src, dst, taps }
    }

    pub fn src_shape(&self) -> (usize, usize) {
        self.src
    }

    pub fn dst_shape(&self) -> (usize, usize) {
        self.dst
    }

    pub fn mask(&self) -> Vec<bool> {
        self.taps.iter().map(Option::is_some).collect()
    }

    pub fn apply(&self, src: &Grid2D) -> Result<MaskedGrid> {
        if (src.height(), src.width()) != self.src {
            return Err(Error::Shape(format!(
                "plan expects a {:?} source, got {}x{}",
                self.src,
                src.height(),
                src.width()
            )));
        }
        let ch = src.channels();
        let mut out = Grid2D::zeros(self.dst.0, self.dst.1, ch);
        let s = src.data();
        let o = out.data_mut();
        for (cell, t) in self.taps.iter().enumerate() {
            if let Some(t) = t {
                let dst = &mut o[cell * ch..(cell + 1) * ch];
                for (&i, &w) in t.idx.iter().zip(&t.weight) {
                    if w != 0.0 {
                        for (d, v) in dst.iter_mut().zip(&s[i * ch..(i + 1) * ch]) {
                            *d += w * v;
                        }
                    }
                }
            }
        }
        MaskedGrid::new(out, self.mask())
    }

    /// Adjoint of [`SamplePlan::apply`]: scatters destination values back
    /// onto the source raster with the same weights.
    pub fn apply_transpose(&self, dst: &Grid2D) -> Result<Grid2D> {
        if (dst.height(), dst.width()) != self.dst {
            return Err(Error::Shape("transpose input does not match plan destination".into()));
        }
        let ch = dst.channels();
        let mut out = Grid2D::zeros(self.src.0, self.src.1, ch);
        let d = dst.data();
        let o = out.data_mut();
        for (cell, t) in self.taps.iter().enumerate() {
            if let Some(t) = t {
                let g = &d[cell * ch..(cell + 1) * ch];
                for (&i, &w) in t.idx.iter().zip(&t.weight) {
                    if w != 0.0 {
                        for (acc, v) in o[i * ch..(i + 1) * ch].iter_mut().zip(g) {
                            *acc += w * v;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP {
        r
    } else {
        v
    }
}

fn taps_at(src: (usize, usize), row: f64, col: f64, interp: Interp) -> Option<Taps> {
    let (h, w) = src;
    if h == 0 || w == 0 || !row.is_finite() || !col.is_finite() {
        return None;
    }
    let (row, col) = (snap(row), snap(col));
    if row < 0.0 || col < 0.0 || row > (h - 1) as f64 || col > (w - 1) as f64 {
        return None;
    }
    match interp {
        Interp::Nearest => {
            let i = row.round() as usize * w + col.round() as usize;
            Some(Taps {
                idx: [i; 4],
                weight: [1.0, 0.0, 0.0, 0.0],
            })
        }
        Interp::Bilinear => {
            let r0 = row.floor() as usize;
            let c0 = col.floor() as usize;
            let (fr, fc) = (row - r0 as f64, col - c0 as f64);
            let r1 = (r0 + 1).min(h - 1);
            let c1 = (c0 + 1).min(w - 1);
            Some(Taps {
                idx: [r0 * w + c0, r0 * w + c1, r1 * w + c0, r1 * w + c1],
                weight: [
                    (1.0 - fr) * (1.0 - fc),
                    (1.0 - fr) * fc,
                    fr * (1.0 - fc),
                    fr * fc,
                ],
            })
        }
    }
}

/// Plan that samples an `h × w` perspective image at the projection of each
/// BEV cell center on the ground plane.
pub fn ipm_plan(cam: &CameraModel, image: (usize, usize), bev: &BevConfig, interp: Interp) -> SamplePlan {
    SamplePlan::build(image, (bev.rows(), bev.cols()), interp, |r, c| {
        let [x, y] = bev.cell_center(r, c);
        let px = project_ego_to_pixel(cam, &[x, y, 0.0]);
        px.in_front.then_some([px.v, px.u])
    })
}

/// Projects a perspective-view grid onto the BEV ground plane `z = 0`.
pub fn ipm_warp_grid(cam: &CameraModel, persp: &Grid2D, bev: &BevConfig) -> Result<MaskedGrid> {
    if persp.cells() == 0 {
        return Err(Error::InvalidArgument("empty perspective grid".into()));
    }
    ipm_plan(cam, (persp.height(), persp.width()), bev, Interp::Bilinear).apply(persp)
}

/// Planar pose of a camera's ground frame in the ego frame: origin under the
/// camera, +x along the horizontal heading of the optical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundPose {
    pub yaw: f64,
    pub x: f64,
    pub y: f64,
    /// Angle between the optical axis and the ground plane, radians.
    pub tilt: f64,
}

impl GroundPose {
    pub const IDENTITY: GroundPose = GroundPose {
        yaw: 0.0,
        x: 0.0,
        y: 0.0,
        tilt: 0.0,
    };

    pub fn from_camera(cam: &CameraModel) -> Self {
        let f = cam.forward_axis();
        let horiz = f[0].hypot(f[1]);
        let heading = if horiz > 1e-9 {
            [f[0], f[1]]
        } else {
            // Looking straight up or down: use image-up as the heading.
            let up = cam.camera_to_ego_dir(&[0.0, -1.0, 0.0]);
            [up[0], up[1]]
        };
        Self {
            yaw: heading[1].atan2(heading[0]),
            x: cam.translation[0],
            y: cam.translation[1],
            tilt: (-f[2]).atan2(horiz).abs(),
        }
    }

    /// Ego-frame point to this ground frame.
    pub fn to_local(&self, x: f64, y: f64) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (x - self.x, y - self.y);
        [c * dx + s * dy, -s * dx + c * dy]
    }

    pub fn inverse(&self) -> GroundPose {
        let (s, c) = self.yaw.sin_cos();
        GroundPose {
            yaw: -self.yaw,
            x: -(c * self.x + s * self.y),
            y: -(-s * self.x + c * self.y),
            tilt: self.tilt,
        }
    }
}

/// Plan resampling a raster laid out in a ground frame (`src_cfg`, posed by
/// `pose`) into the ego BEV raster `dst`.
pub fn planar_plan(pose: &GroundPose, src_cfg: &BevConfig, dst: &BevConfig, interp: Interp) -> SamplePlan {
    SamplePlan::build((src_cfg.rows(), src_cfg.cols()), (dst.rows(), dst.cols()), interp, |r, c| {
        let [x, y] = dst.cell_center(r, c);
        let [lx, ly] = pose.to_local(x, y);
        Some(src_cfg.continuous_index(lx, ly))
    })
}

/// Moves a camera-frame top-down grid into the ego BEV using the planar
/// (yaw + translation) part of the extrinsics.
///
/// Roll and pitch are dropped; a warning is logged when the optical axis is
/// tilted more than `max_tilt` radians from the ground plane.
pub fn camera_frame_to_bev(
    cam: &CameraModel,
    cam_topdown: &Grid2D,
    topdown_cfg: &BevConfig,
    bev: &BevConfig,
    max_tilt: f64,
) -> Result<MaskedGrid> {
    if (cam_topdown.height(), cam_topdown.width()) != (topdown_cfg.rows(), topdown_cfg.cols()) {
        return Err(Error::Shape(format!(
            "top-down grid {}x{} does not match its extent {}x{}",
            cam_topdown.height(),
            cam_topdown.width(),
            topdown_cfg.rows(),
            topdown_cfg.cols()
        )));
    }
    let pose = GroundPose::from_camera(cam);
    if pose.tilt > max_tilt {
        log::warn!(
            "camera tilt {:.3} rad exceeds {:.3}; using its ground-plane projection",
            pose.tilt,
            max_tilt
        );
    }
    planar_plan(&pose, topdown_cfg, bev, Interp::Bilinear).apply(cam_topdown)
}

/// Per-cell mean over the views whose mask is set; zero where none is.
pub fn fuse_cameras(views: &[MaskedGrid]) -> Result<Grid2D> {
    let first = views
        .first()
        .ok_or_else(|| Error::InvalidArgument("no camera views to fuse".into()))?;
    let shape = first.grid.shape();
    if views.iter().any(|v| v.grid.shape() != shape) {
        return Err(Error::Shape("camera views differ in shape".into()));
    }
    let (h, w, ch) = shape;
    let mut out = Grid2D::zeros(h, w, ch);
    let counts = valid_counts(views);
    for view in views {
        for (cell, &valid) in view.mask.iter().enumerate() {
            if valid {
                let inv = 1.0 / counts[cell] as f64;
                let src = &view.grid.data()[cell * ch..(cell + 1) * ch];
                for (o, v) in out.data_mut()[cell * ch..(cell + 1) * ch].iter_mut().zip(src) {
                    *o += v * inv;
                }
            }
        }
    }
    Ok(out)
}

/// Number of valid views per cell.
pub fn valid_counts(views: &[MaskedGrid]) -> Vec<usize> {
    let cells = views.first().map_or(0, |v| v.mask.len());
    let mut counts = vec![0usize; cells];
    for v in views {
        for (c, &m) in counts.iter_mut().zip(&v.mask) {
            *c += m as usize;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn cam() -> CameraModel {
        CameraModel::from_heading(3.0, 3.0, 1.5, 1.5, 0.0, 0.35, [0.0, 0.0, 1.5]).unwrap()
    }

    #[test]
    fn constant_perspective_gives_constant_valid_cells() {
        let bev = BevConfig::new(0.0, 12.0, -4.0, 4.0, 0.5).unwrap();
        let persp = Grid2D::filled(4, 4, 2, 0.75);
        let out = ipm_warp_grid(&cam(), &persp, &bev).unwrap();
        assert!(out.valid_count() > 0);
        for (cell, &m) in out.mask.iter().enumerate() {
            let v = &out.grid.data()[cell * 2..cell * 2 + 2];
            if m {
                assert!(v.iter().all(|x| (x - 0.75).abs() < 1e-12));
            } else {
                assert!(v.iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn cell_on_integer_pixel_copies_it() {
        // Straight down-looking camera with unit focal length over a 1 m grid:
        // the BEV cell under the camera lands on the principal point.
        let cam = CameraModel::from_heading(1.0, 1.0, 1.0, 1.0, 0.0, FRAC_PI_2, [0.5, 0.5, 1.0]).unwrap();
        let persp = Grid2D::from_fn(3, 3, 1, |r, c, _| (r * 3 + c) as f64);
        let bev = BevConfig::new(0.0, 1.0, 0.0, 1.0, 1.0).unwrap();
        let out = ipm_warp_grid(&cam, &persp, &bev).unwrap();
        assert!(out.mask[0]);
        assert!((out.grid.get(0, 0, 0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn identity_pose_is_identity_warp() {
        let cfg = BevConfig::new(-2.0, 2.0, -1.0, 1.5, 0.25).unwrap();
        let g = Grid2D::from_fn(cfg.rows(), cfg.cols(), 2, |r, c, k| (r * 7 + c * 3 + k) as f64 * 0.1);
        let out = planar_plan(&GroundPose::IDENTITY, &cfg, &cfg, Interp::Bilinear).apply(&g).unwrap();
        assert!(out.mask.iter().all(|&m| m));
        assert!(out.grid.max_abs_diff(&g) < 1e-12);
    }

    #[test]
    fn level_forward_camera_at_origin_has_identity_pose() {
        let cam = CameraModel::from_heading(5.0, 5.0, 2.0, 2.0, 0.0, 0.0, [0.0, 0.0, 1.2]).unwrap();
        let cfg = BevConfig::new(-2.0, 2.0, -2.0, 2.0, 0.5).unwrap();
        let g = Grid2D::from_fn(8, 8, 1, |r, c, _| (r + 2 * c) as f64);
        let out = camera_frame_to_bev(&cam, &g, &cfg, &cfg, 0.5).unwrap();
        assert!(out.mask.iter().all(|&m| m));
        assert!(out.grid.max_abs_diff(&g) < 1e-9);
    }

    #[test]
    fn quarter_turn_rotates_grid() {
        // Square, centered extent so a 90° yaw maps cell centers onto cell centers.
        let cfg = BevConfig::new(-2.0, 2.0, -2.0, 2.0, 0.5).unwrap();
        let n = cfg.rows();
        let g = Grid2D::from_fn(n, n, 1, |r, c, _| (r * n + c) as f64);
        let pose = GroundPose {
            yaw: FRAC_PI_2,
            ..GroundPose::IDENTITY
        };
        let out = planar_plan(&pose, &cfg, &cfg, Interp::Bilinear).apply(&g).unwrap();
        assert!(out.mask.iter().all(|&m| m));
        // Ego (x, y) reads local (y, -x): ego cell (r, c) ← local (c, n-1-r).
        for r in 0..n {
            for c in 0..n {
                assert!((out.grid.get(r, c, 0) - g.get(c, n - 1 - r, 0)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn transpose_is_adjoint() {
        let bev = BevConfig::new(0.0, 8.0, -3.0, 3.0, 0.5).unwrap();
        let plan = ipm_plan(&cam(), (4, 5), &bev, Interp::Bilinear);
        let x = Grid2D::from_fn(4, 5, 2, |r, c, k| ((r * 5 + c) as f64 * 0.3 + k as f64).sin());
        let y = Grid2D::from_fn(bev.rows(), bev.cols(), 2, |r, c, k| ((r + 3 * c + k) as f64 * 0.17).cos());
        let ax = plan.apply(&x).unwrap().grid;
        let aty = plan.apply_transpose(&y).unwrap();
        let lhs: f64 = ax.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(aty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn fuse_examples() {
        let mk = |vals: [f64; 2], mask: [bool; 2]| {
            MaskedGrid::new(Grid2D::from_vec(1, 2, 1, vals.to_vec()).unwrap(), mask.to_vec()).unwrap()
        };
        let a = mk([2.0, 5.0], [true, false]);
        let b = mk([4.0, 1.0], [true, true]);
        let fused = fuse_cameras(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(fused.data(), &[3.0, 1.0]);
        assert_eq!(fuse_cameras(&[b.clone(), a.clone()]).unwrap(), fused);
        assert_eq!(fuse_cameras(&[a.clone()]).unwrap().data(), &[2.0, 0.0]);
        assert_eq!(fuse_cameras(&[a.clone(), a.clone()]).unwrap().data(), &[2.0, 0.0]);
        assert!(fuse_cameras(&[]).is_err());
    }
}
