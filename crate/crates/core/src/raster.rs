//! Drawing polylines into BEV cells.

use serde::{Deserialize, Serialize};

use crate::geometry::BevConfig;
use crate::map::MapClass;

/// Stroke widths in cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thickness {
    pub line: usize,
    pub crossing: usize,
}

impl Default for Thickness {
    fn default() -> Self {
        Self { line: 1, crossing: 3 }
    }
}

impl Thickness {
    pub fn uniform(t: usize) -> Self {
        Self { line: t, crossing: t }
    }

    pub fn of(&self, class: MapClass) -> usize {
        match class {
            MapClass::PedCrossing => self.crossing,
            _ => self.line,
        }
    }
}

/// Cells crossed by the segment `a → b`, given in continuous cell units
/// where cell `(r, c)` covers `[r, r+1) × [c, c+1)`. When the segment passes
/// exactly through a cell corner both side cells are included, so the result
/// is 4-connected. Cells outside `rows × cols` are dropped.
pub fn supercover(a: [f64; 2], b: [f64; 2], rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut push = |r: i64, c: i64| {
        if r >= 0 && c >= 0 && (r as usize) < rows && (c as usize) < cols {
            let cell = (r as usize, c as usize);
            if out.last() != Some(&cell) && !out.contains(&cell) {
                out.push(cell);
            }
        }
    };
    let (mut r, mut c) = (a[0].floor() as i64, a[1].floor() as i64);
    let (er, ec) = (b[0].floor() as i64, b[1].floor() as i64);
    let (dr, dc) = (b[0] - a[0], b[1] - a[1]);
    let sr: i64 = if dr > 0.0 { 1 } else { -1 };
    let sc: i64 = if dc > 0.0 { 1 } else { -1 };
    let t_delta_r = if dr != 0.0 { 1.0 / dr.abs() } else { f64::INFINITY };
    let t_delta_c = if dc != 0.0 { 1.0 / dc.abs() } else { f64::INFINITY };
    let next_boundary = |x: f64, d: f64| if d > 0.0 { x.floor() + 1.0 - x } else { x - x.floor() };
    let mut t_r = if dr != 0.0 { next_boundary(a[0], dr) * t_delta_r } else { f64::INFINITY };
    let mut t_c = if dc != 0.0 { next_boundary(a[1], dc) * t_delta_c } else { f64::INFINITY };
    // A start exactly on a boundary moving in the negative direction crosses
    // it immediately.
    if dr < 0.0 && t_r == 0.0 {
        t_r = t_delta_r;
        push(r, c);
        r -= 1;
    }
    if dc < 0.0 && t_c == 0.0 {
        t_c = t_delta_c;
        push(r, c);
        c -= 1;
    }
    let limit = (er - r).abs() + (ec - c).abs() + 4;
    for _ in 0..=limit {
        push(r, c);
        if (r, c) == (er, ec) || (t_r > 1.0 && t_c > 1.0) {
            break;
        }
        const TIE: f64 = 1e-12;
        if (t_r - t_c).abs() <= TIE {
            push(r + sr, c);
            push(r, c + sc);
            r += sr;
            c += sc;
            t_r += t_delta_r;
            t_c += t_delta_c;
        } else if t_r < t_c {
            r += sr;
            t_r += t_delta_r;
        } else {
            c += sc;
            t_c += t_delta_c;
        }
    }
    out
}

/// Cells covered by a polyline of ego-frame points drawn `thickness` cells
/// wide (odd thickness dilates by a square of that side).
pub fn polyline_cells(points: &[[f64; 2]], bev: &BevConfig, thickness: usize) -> Vec<(usize, usize)> {
    let (rows, cols) = (bev.rows(), bev.cols());
    let to_cell = |p: &[f64; 2]| [(p[0] - bev.x_min) / bev.pitch, (p[1] - bev.y_min) / bev.pitch];
    let mut core = Vec::new();
    for w in points.windows(2) {
        core.extend(supercover(to_cell(&w[0]), to_cell(&w[1]), rows, cols));
    }
    let rad = (thickness.max(1) - 1) as i64 / 2;
    let mut seen = vec![false; rows * cols];
    let mut out = Vec::new();
    for (r, c) in core {
        for dr in -rad..=rad {
            for dc in -rad..=rad {
                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                if rr >= 0 && cc >= 0 && (rr as usize) < rows && (cc as usize) < cols {
                    let i = rr as usize * cols + cc as usize;
                    if !seen[i] {
                        seen[i] = true;
                        out.push((rr as usize, cc as usize));
                    }
                }
            }
        }
    }
    out
}
