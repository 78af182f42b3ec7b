//! Dense training targets derived from a vector map.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::geometry::BevConfig;
use crate::map::{MapClass, VectorMap};
use crate::numerics::Grid2D;
use crate::raster::{polyline_cells, Thickness};

/// Co-registered semantic, instance and direction targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPack {
    /// One-hot over background plus the map classes.
    pub semantic: Grid2D,
    /// Row-major instance ids, 0 for background.
    pub instance: Vec<u32>,
    /// Two-hot over direction bins on element cells, zero elsewhere.
    pub direction: Grid2D,
}

impl LabelPack {
    pub fn rows(&self) -> usize {
        self.semantic.height()
    }

    pub fn cols(&self) -> usize {
        self.semantic.width()
    }

    pub fn n_dir(&self) -> usize {
        self.direction.channels()
    }

    /// Semantic label index of each cell, row-major.
    pub fn classes(&self) -> Vec<usize> {
        let ch = self.semantic.channels();
        self.semantic
            .data()
            .chunks_exact(ch)
            .map(|c| c.iter().position(|&v| v > 0.5).unwrap_or(0))
            .collect()
    }

    /// One binary channel per map class, for IoU.
    pub fn class_masks(&self) -> Grid2D {
        class_masks_from_labels(&self.classes(), self.rows(), self.cols())
    }

    /// Packs into three channels: class index, instance id, and the lower of
    /// the two direction bins (-1 where there is none).
    pub fn to_grid(&self) -> Grid2D {
        let classes = self.classes();
        let nd = self.n_dir();
        Grid2D::from_fn(self.rows(), self.cols(), 3, |r, c, k| {
            let i = r * self.cols() + c;
            match k {
                0 => classes[i] as f64,
                1 => self.instance[i] as f64,
                _ => self
                    .direction
                    .cell(r, c)
                    .iter()
                    .take(nd / 2)
                    .position(|&v| v > 0.5)
                    .map_or(-1.0, |b| b as f64),
            }
        })
    }

    pub fn from_grid(g: &Grid2D, n_dir: usize) -> Result<Self> {
        if g.channels() != 3 || n_dir % 2 != 0 || n_dir == 0 {
            return Err(Error::Shape(format!("label grid needs 3 channels, has {}", g.channels())));
        }
        let d = MapClass::ALL.len() + 1;
        let (h, w) = (g.height(), g.width());
        let mut semantic = Grid2D::zeros(h, w, d);
        let mut direction = Grid2D::zeros(h, w, n_dir);
        let mut instance = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let v = g.cell(r, c);
                let class = v[0].round();
                if !(0.0..d as f64).contains(&class) || v[1] < 0.0 {
                    return Err(Error::InvalidArgument(format!("bad label at ({r}, {c})")));
                }
                semantic.set(r, c, class as usize, 1.0);
                instance.push(v[1].round() as u32);
                if v[2] >= 0.0 {
                    let b = v[2].round() as usize;
                    if b >= n_dir / 2 {
                        return Err(Error::InvalidArgument(format!("direction bin {b} out of range")));
                    }
                    direction.set(r, c, b, 1.0);
                    direction.set(r, c, b + n_dir / 2, 1.0);
                }
            }
        }
        Ok(Self {
            semantic,
            instance,
            direction,
        })
    }
}

pub fn class_masks_from_labels(classes: &[usize], rows: usize, cols: usize) -> Grid2D {
    let d = MapClass::ALL.len();
    let mut g = Grid2D::zeros(rows, cols, d);
    for (i, &k) in classes.iter().enumerate() {
        if k > 0 && k <= d {
            g.data_mut()[i * d + k - 1] = 1.0;
        }
    }
    g
}

/// Bin of angle `theta` (radians): `⌊θ·N/2π + 0.5⌋ mod N`.
pub fn direction_bin(theta: f64, n_dir: usize) -> usize {
    let b = (theta * n_dir as f64 / TAU + 0.5).floor() as i64;
    b.rem_euclid(n_dir as i64) as usize
}

/// Unit direction of the center of bin `b`, in ego `(x, y)`.
pub fn bin_direction(b: usize, n_dir: usize) -> [f64; 2] {
    let t = b as f64 * TAU / n_dir as f64;
    [t.cos(), t.sin()]
}

/// Tangent at the vertex nearest `q`, by central difference (one-sided at
/// the ends).
pub fn tangent_at(points: &[[f64; 2]], q: [f64; 2]) -> [f64; 2] {
    let i = points
        .iter()
        .enumerate()
        .min_by(|a, b| {
            let da = (a.1[0] - q[0]).hypot(a.1[1] - q[1]);
            let db = (b.1[0] - q[0]).hypot(b.1[1] - q[1]);
            da.total_cmp(&db)
        })
        .map_or(0, |(i, _)| i);
    let lo = i.saturating_sub(1);
    let hi = (i + 1).min(points.len() - 1);
    [points[hi][0] - points[lo][0], points[hi][1] - points[lo][1]]
}

/// Draws `vm` in element order; later elements win shared cells. Instance
/// id of element `i` is `i + 1`.
pub fn rasterize_vector_map(vm: &VectorMap, bev: &BevConfig, thickness: &Thickness, n_dir: usize) -> Result<LabelPack> {
    if n_dir == 0 || n_dir % 2 != 0 {
        return Err(Error::InvalidArgument(format!("direction bins must be even, got {n_dir}")));
    }
    if thickness.line == 0 || thickness.crossing == 0 {
        return Err(Error::InvalidArgument("thickness must be at least 1".into()));
    }
    let (rows, cols) = (bev.rows(), bev.cols());
    let mut owner: Vec<Option<usize>> = vec![None; rows * cols];
    for (i, e) in vm.elements.iter().enumerate() {
        let cells = polyline_cells(&e.points, bev, thickness.of(e.class));
        if cells.is_empty() {
            log::warn!("element {i} ({}) lies outside the BEV extent; skipped", e.class);
        }
        for (r, c) in cells {
            owner[r * cols + c] = Some(i);
        }
    }
    let d = MapClass::ALL.len() + 1;
    let mut semantic = Grid2D::zeros(rows, cols, d);
    let mut direction = Grid2D::zeros(rows, cols, n_dir);
    let mut instance = vec![0u32; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let cell = r * cols + c;
            match owner[cell] {
                None => semantic.set(r, c, 0, 1.0),
                Some(i) => {
                    let e = &vm.elements[i];
                    semantic.set(r, c, e.class.label(), 1.0);
                    instance[cell] = i as u32 + 1;
                    let t = tangent_at(&e.points, bev.cell_center(r, c));
                    let b = direction_bin(t[1].atan2(t[0]), n_dir);
                    direction.set(r, c, b, 1.0);
                    direction.set(r, c, (b + n_dir / 2) % n_dir, 1.0);
                }
            }
        }
    }
    Ok(LabelPack {
        semantic,
        instance,
        direction,
    })
}

/// Direction targets alone.
pub fn make_direction_labels(vm: &VectorMap, bev: &BevConfig, n_dir: usize, thickness: &Thickness) -> Result<Grid2D> {
    Ok(rasterize_vector_map(vm, bev, thickness, n_dir)?.direction)
}
