use crate::error::{Error, Result};
use crate::numerics::Grid2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

/// Stride-1, shape-preserving pooling with a centered `kernel_h × kernel_w`
/// window, applied to every channel independently.
///
/// Out-of-bounds cells are ignored: they never win a max and are not counted
/// in the average denominator.
pub fn pool2d(grid: &Grid2D, kernel_h: usize, kernel_w: usize, mode: PoolMode) -> Result<Grid2D> {
    for (name, k) in [("kernel_h", kernel_h), ("kernel_w", kernel_w)] {
        if k == 0 || k % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "{name} must be odd and >= 1, got {k}"
            )));
        }
    }
    let (h, w, ch) = grid.shape();
    let (rh, rw) = ((kernel_h / 2) as isize, (kernel_w / 2) as isize);
    let mut out = Grid2D::zeros(h, w, ch);
    for r in 0..h {
        let r0 = (r as isize - rh).max(0) as usize;
        let r1 = ((r as isize + rh) as usize).min(h - 1);
        for c in 0..w {
            let c0 = (c as isize - rw).max(0) as usize;
            let c1 = ((c as isize + rw) as usize).min(w - 1);
            for k in 0..ch {
                let value = match mode {
                    PoolMode::Max => {
                        let mut m = f64::NEG_INFINITY;
                        for rr in r0..=r1 {
                            for cc in c0..=c1 {
                                m = m.max(grid.get(rr, cc, k));
                            }
                        }
                        m
                    }
                    PoolMode::Avg => {
                        let mut s = 0.0;
                        for rr in r0..=r1 {
                            for cc in c0..=c1 {
                                s += grid.get(rr, cc, k);
                            }
                        }
                        s / ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64
                    }
                };
                out.set(r, c, k, value);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g3() -> Grid2D {
        Grid2D::from_vec(3, 3, 1, (1..=9).map(f64::from).collect()).unwrap()
    }

    /// Window scan written independently of the implementation above.
    fn scan_max(g: &Grid2D, kh: usize, kw: usize, r: usize, c: usize) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for dr in -(kh as i64 / 2)..=(kh as i64 / 2) {
            for dc in -(kw as i64 / 2)..=(kw as i64 / 2) {
                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                if rr >= 0 && cc >= 0 && (rr as usize) < g.height() && (cc as usize) < g.width() {
                    best = best.max(g.get(rr as usize, cc as usize, 0));
                }
            }
        }
        best
    }

    #[test]
    fn unit_kernel_is_identity() {
        for mode in [PoolMode::Max, PoolMode::Avg] {
            assert_eq!(pool2d(&g3(), 1, 1, mode).unwrap(), g3());
        }
    }

    #[test]
    fn horizontal_max_on_center_row() {
        let out = pool2d(&g3(), 1, 3, PoolMode::Max).unwrap();
        let row: Vec<f64> = (0..3).map(|c| out.get(1, c, 0)).collect();
        let oracle: Vec<f64> = (0..3).map(|c| scan_max(&g3(), 1, 3, 1, c)).collect();
        assert_eq!(row, oracle);
        assert_eq!(row, vec![5.0, 6.0, 6.0]);
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(pool2d(&g3(), 2, 1, PoolMode::Max).is_err());
        assert!(pool2d(&g3(), 1, 4, PoolMode::Avg).is_err());
        assert!(pool2d(&g3(), 0, 1, PoolMode::Avg).is_err());
    }

    #[test]
    fn avg_of_constant_is_constant() {
        let g = Grid2D::filled(5, 7, 2, 3.25);
        let out = pool2d(&g, 5, 9, PoolMode::Avg).unwrap();
        assert!(out.data().iter().all(|&v| (v - 3.25).abs() < 1e-12));
    }

    #[test]
    fn edge_average_counts_in_bounds_cells_only() {
        // Corner of 3x3 with a 3x3 kernel covers 4 cells: 1,2,4,5.
        let out = pool2d(&g3(), 3, 3, PoolMode::Avg).unwrap();
        assert!((out.get(0, 0, 0) - 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn max_pool_dominates_input_and_matches_scan(
            h in 1usize..7, w in 1usize..7, kh in 0usize..3, kw in 0usize..3,
            seed in proptest::collection::vec(-5.0f64..5.0, 49)
        ) {
            let (kh, kw) = (2 * kh + 1, 2 * kw + 1);
            let g = Grid2D::from_fn(h, w, 1, |r, c, _| seed[r * 7 + c]);
            let out = pool2d(&g, kh, kw, PoolMode::Max).unwrap();
            for r in 0..h {
                for c in 0..w {
                    prop_assert!(out.get(r, c, 0) >= g.get(r, c, 0));
                    prop_assert_eq!(out.get(r, c, 0), scan_max(&g, kh, kw, r, c));
                }
            }
        }
    }
}
