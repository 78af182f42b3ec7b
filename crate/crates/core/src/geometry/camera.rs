use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

/// Pinhole camera with a rigid camera-to-ego transform.
///
/// Camera frame: +z along the optical axis, +x right, +y down.
/// Ego frame: +x forward, +y left, +z up. A point maps as
/// `p_ego = rotation · p_cam + translation`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

/// Result of projecting an ego-frame point into the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelProjection {
    /// Horizontal pixel coordinate (column axis).
    pub u: f64,
    /// Vertical pixel coordinate (row axis).
    pub v: f64,
    pub in_front: bool,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, rotation: Mat3, translation: Vec3) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidArgument(format!("focal lengths must be positive, got {fx}, {fy}")));
        }
        if [fx, fy, cx, cy].iter().chain(rotation.iter().flatten()).chain(&translation).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("camera parameters".into()));
        }
        check_rotation(&rotation)?;
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
        })
    }

    /// Camera whose optical axis has heading `yaw` (radians, counter-clockwise
    /// from ego +x) and is tilted `pitch_down` radians below the horizon,
    /// with no roll.
    pub fn from_heading(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        yaw: f64,
        pitch_down: f64,
        translation: Vec3,
    ) -> Result<Self> {
        let (sy, cyaw) = yaw.sin_cos();
        let (sp, cp) = pitch_down.sin_cos();
        let z = [cp * cyaw, cp * sy, -sp];
        let x = [sy, -cyaw, 0.0];
        let y = cross(&z, &x);
        let rotation = [[x[0], y[0], z[0]], [x[1], y[1], z[1]], [x[2], y[2], z[2]]];
        Self::new(fx, fy, cx, cy, rotation, translation)
    }

    pub fn ego_to_camera(&self, p: &Vec3) -> Vec3 {
        let d = [
            p[0] - self.translation[0],
            p[1] - self.translation[1],
            p[2] - self.translation[2],
        ];
        let r = &self.rotation;
        [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ]
    }

    pub fn camera_to_ego_dir(&self, d: &Vec3) -> Vec3 {
        mat_vec(&self.rotation, d)
    }

    /// Optical axis expressed in the ego frame.
    pub fn forward_axis(&self) -> Vec3 {
        self.camera_to_ego_dir(&[0.0, 0.0, 1.0])
    }
}

pub fn project_ego_to_pixel(cam: &CameraModel, point: &Vec3) -> PixelProjection {
    let pc = cam.ego_to_camera(point);
    let in_front = pc[2] > 0.0;
    // Keep the arithmetic defined for points on the camera plane.
    let z = if pc[2] == 0.0 { f64::MIN_POSITIVE } else { pc[2] };
    PixelProjection {
        u: cam.fx * pc[0] / z + cam.cx,
        v: cam.fy * pc[1] / z + cam.cy,
        in_front,
    }
}

/// Intersects the viewing ray through pixel `(u, v)` with the ground plane
/// `z = 0`, returning the ego-frame `(x, y)`. `None` when the ray is parallel
/// to the plane or points away from it.
pub fn ipm_pixel_to_ground(cam: &CameraModel, u: f64, v: f64) -> Option<[f64; 2]> {
    let ray_cam = [(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0];
    let ray = cam.camera_to_ego_dir(&ray_cam);
    let norm = (ray[0] * ray[0] + ray[1] * ray[1] + ray[2] * ray[2]).sqrt();
    if ray[2].abs() <= 1e-12 * norm {
        return None;
    }
    let s = -cam.translation[2] / ray[2];
    if s <= 0.0 {
        return None;
    }
    Some([cam.translation[0] + s * ray[0], cam.translation[1] + s * ray[1]])
}

fn check_rotation(r: &Mat3) -> Result<()> {
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            if (dot - want).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "rotation is not orthonormal (column {i}·{j} = {dot})"
                )));
            }
        }
    }
    let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
        - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    if (det - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("rotation determinant is {det}, expected +1")));
    }
    Ok(())
}

fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn mat_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// A named camera plus the pixel size of the images it produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RigCamera {
    pub name: String,
    pub model: CameraModel,
    pub width: usize,
    pub height: usize,
}

/// JSON form of one rig entry. `width`/`height` default to an image centered
/// on the principal point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraJson {
    pub name: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigJson {
    pub cameras: Vec<CameraJson>,
}

impl TryFrom<&CameraJson> for RigCamera {
    type Error = Error;

    fn try_from(j: &CameraJson) -> Result<Self> {
        let r = &j.rotation;
        let model = CameraModel::new(
            j.fx,
            j.fy,
            j.cx,
            j.cy,
            [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
            j.translation,
        )?;
        let width = j.width.unwrap_or((2.0 * j.cx).round() as usize + 1);
        let height = j.height.unwrap_or((2.0 * j.cy).round() as usize + 1);
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!("camera {} has an empty image", j.name)));
        }
        Ok(RigCamera {
            name: j.name.clone(),
            model,
            width,
            height,
        })
    }
}

impl From<&RigCamera> for CameraJson {
    fn from(c: &RigCamera) -> Self {
        let r = &c.model.rotation;
        CameraJson {
            name: c.name.clone(),
            fx: c.model.fx,
            fy: c.model.fy,
            cx: c.model.cx,
            cy: c.model.cy,
            rotation: [
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ],
            translation: c.model.translation,
            width: Some(c.width),
            height: Some(c.height),
        }
    }
}

/// Parses a rig document `{"cameras": [...]}`.
pub fn parse_rig(text: &str) -> Result<Vec<RigCamera>> {
    let rig: RigJson = crate::io::json::from_str(text)?;
    let cams = rig.cameras.iter().map(RigCamera::try_from).collect::<Result<Vec<_>>>()?;
    let mut names: Vec<&str> = cams.iter().map(|c| c.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("camera names must be unique".into()));
    }
    Ok(cams)
}

pub fn rig_to_json(cams: &[RigCamera]) -> String {
    let rig = RigJson {
        cameras: cams.iter().map(CameraJson::from).collect(),
    };
    serde_json::to_string_pretty(&rig).expect("rig serializes")
}

/// Surround rig of `count` evenly spaced cameras mounted `height` meters up,
/// each pitched `pitch_down` radians and producing `width × height_px`
/// images with a `hfov` horizontal field of view.
pub fn surround_rig(
    count: usize,
    width: usize,
    height_px: usize,
    hfov: f64,
    mount_height: f64,
    mount_radius: f64,
    pitch_down: f64,
) -> Vec<RigCamera> {
    const NAMES: [&str; 6] = ["front", "front_left", "back_left", "back", "back_right", "front_right"];
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height_px as f64 - 1.0) / 2.0;
    let f = (width as f64 / 2.0) / (hfov / 2.0).tan();
    (0..count)
        .map(|i| {
            let yaw = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            let name = if count == 6 {
                NAMES[i].to_string()
            } else {
                format!("cam{i}")
            };
            let t = [mount_radius * yaw.cos(), mount_radius * yaw.sin(), mount_height];
            RigCamera {
                name,
                model: CameraModel::from_heading(f, f, cx, cy, yaw, pitch_down, t).expect("valid rig"),
                width,
                height: height_px,
            }
        })
        .collect()
}
