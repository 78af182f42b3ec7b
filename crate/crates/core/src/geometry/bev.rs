use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metric extent and resolution of a bird's-eye-view raster.
///
/// Rows run along ego +x and columns along ego +y: cell `(r, c)` covers
/// `[x_min + r·pitch, x_min + (r+1)·pitch) × [y_min + c·pitch, y_min + (c+1)·pitch)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub pitch: f64,
}

impl Default for BevConfig {
    fn default() -> Self {
        Self {
            x_min: -30.0,
            x_max: 30.0,
            y_min: -15.0,
            y_max: 15.0,
            pitch: 0.15,
        }
    }
}

impl BevConfig {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, pitch: f64) -> Result<Self> {
        let cfg = Self {
            x_min,
            x_max,
            y_min,
            y_max,
            pitch,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.x_min, self.x_max, self.y_min, self.y_max, self.pitch];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("BEV config".into()));
        }
        if !(self.x_max > self.x_min && self.y_max > self.y_min && self.pitch > 0.0) {
            return Err(Error::InvalidArgument(format!("degenerate BEV config {self:?}")));
        }
        if self.rows() == 0 || self.cols() == 0 {
            return Err(Error::InvalidArgument("BEV extent smaller than one pitch".into()));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        ((self.x_max - self.x_min) / self.pitch).round() as usize
    }

    pub fn cols(&self) -> usize {
        ((self.y_max - self.y_min) / self.pitch).round() as usize
    }

    pub fn cells(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn diagonal(&self) -> f64 {
        (self.x_max - self.x_min).hypot(self.y_max - self.y_min)
    }

    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            self.x_min + (row as f64 + 0.5) * self.pitch,
            self.y_min + (col as f64 + 0.5) * self.pitch,
        ]
    }

    /// Continuous cell coordinates of a metric point; integer values fall on
    /// cell centers.
    pub fn continuous_index(&self, x: f64, y: f64) -> [f64; 2] {
        [
            (x - self.x_min) / self.pitch - 0.5,
            (y - self.y_min) / self.pitch - 0.5,
        ]
    }

    /// Metric point of continuous cell coordinates, inverse of [`Self::continuous_index`].
    pub fn point_at(&self, row: f64, col: f64) -> [f64; 2] {
        [
            self.x_min + (row + 0.5) * self.pitch,
            self.y_min + (col + 0.5) * self.pitch,
        ]
    }

    /// Cell containing `(x, y)` under half-open binning, or `None` outside.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let r = ((x - self.x_min) / self.pitch).floor();
        let c = ((y - self.y_min) / self.pitch).floor();
        if r < 0.0 || c < 0.0 || !r.is_finite() || !c.is_finite() {
            return None;
        }
        let (r, c) = (r as usize, c as usize);
        (r < self.rows() && c < self.cols()).then_some((r, c))
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.cell_of(x, y).is_some()
    }
}
