use crate::error::{Error, Result};

/// Dense `height × width × channels` field, row-major and channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Grid2D {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "grid {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("grid value at flat index {i}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds a grid by evaluating `f(row, col, channel)` at every entry.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for k in 0..channels {
                    data.push(f(r, c, k));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn same_shape(&self, other: &Grid2D) -> bool {
        self.shape() == other.shape()
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        debug_assert!(row < self.height && col < self.width && ch < self.channels);
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.index(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        let i = self.index(row, col, ch);
        self.data[i] = value;
    }

    /// Channel vector of one cell.
    #[inline]
    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    #[inline]
    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let start = (row * self.width + col) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Copies one channel out as a single-channel grid.
    pub fn channel(&self, ch: usize) -> Grid2D {
        Grid2D::from_fn(self.height, self.width, 1, |r, c, _| self.get(r, c, ch))
    }

    /// Stacks grids of equal spatial shape along the channel axis.
    pub fn concat_channels(parts: &[&Grid2D]) -> Result<Grid2D> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("no grids to concatenate".into()))?;
        let (h, w) = (first.height, first.width);
        if parts.iter().any(|g| g.height != h || g.width != w) {
            return Err(Error::Shape("concatenated grids differ in spatial shape".into()));
        }
        let channels: usize = parts.iter().map(|g| g.channels).sum();
        let mut data = Vec::with_capacity(h * w * channels);
        for cell in 0..h * w {
            for g in parts {
                data.extend_from_slice(&g.data[cell * g.channels..(cell + 1) * g.channels]);
            }
        }
        Ok(Grid2D {
            height: h,
            width: w,
            channels,
            data,
        })
    }

    /// Splits the channel axis at `at`, inverse of [`Grid2D::concat_channels`].
    pub fn split_channels(&self, at: usize) -> (Grid2D, Grid2D) {
        let a = Grid2D::from_fn(self.height, self.width, at, |r, c, k| self.get(r, c, k));
        let b = Grid2D::from_fn(self.height, self.width, self.channels - at, |r, c, k| {
            self.get(r, c, at + k)
        });
        (a, b)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid2D {
        Grid2D {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Grid2D) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "cannot add {:?} to {:?}",
                other.shape(),
                self.shape()
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Grid2D) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length_and_finiteness() {
        assert!(Grid2D::from_vec(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Grid2D::from_vec(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(Grid2D::from_vec(1, 2, 2, vec![1.0; 4]).is_ok());
    }

    #[test]
    fn concat_then_split_restores_parts() {
        let a = Grid2D::from_fn(3, 2, 2, |r, c, k| (r * 10 + c * 2 + k) as f64);
        let b = Grid2D::from_fn(3, 2, 1, |r, c, _| -((r + c) as f64));
        let ab = Grid2D::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(ab.channels(), 3);
        assert_eq!(ab.get(2, 1, 2), -3.0);
        let (a2, b2) = ab.split_channels(2);
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }
}
