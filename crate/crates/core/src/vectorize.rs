//! Dense predictions to polylines: embedding clustering, directional
//! non-maximum suppression, and direction-guided greedy connection.

use std::collections::VecDeque;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BevConfig;
use crate::map::{MapClass, Polyline, VectorMap};
use crate::numerics::{pool2d, Grid2D, PoolMode};

#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundPoint {
    pub row: usize,
    pub col: usize,
    pub confidence: f64,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VectorizeParams {
    /// Class probability above which a cell is foreground.
    pub threshold: f64,
    pub eps: f64,
    pub min_pts: usize,
    /// Connection step, pixels.
    pub delta_step: f64,
    /// Largest accepted jump between consecutive vertices, pixels.
    pub dist_threshold: f64,
}

impl Default for VectorizeParams {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            eps: 1.0,
            min_pts: 3,
            delta_step: 4.0,
            dist_threshold: 8.0,
        }
    }
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// DBSCAN under L1 distance, scanning points in the given order. Returns a
/// cluster id per point, `None` for noise.
pub fn dbscan(points: &[ForegroundPoint], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let neighbors = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| l1(&points[i].embedding, &points[j].embedding) <= eps)
            .collect()
    };
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut next = 0;
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let nb = neighbors(i);
        if nb.len() < min_pts {
            continue;
        }
        let id = next;
        next += 1;
        label[i] = Some(id);
        let mut queue: VecDeque<usize> = nb.into();
        while let Some(j) = queue.pop_front() {
            if label[j].is_none() {
                label[j] = Some(id);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let nbj = neighbors(j);
            if nbj.len() >= min_pts {
                queue.extend(nbj);
            }
        }
    }
    label
}

/// Keeps the points that are maxima across the local line direction.
///
/// Kernels are `(height, width)`: the average pools `(5, 9)` and `(9, 5)`
/// decide whether the line runs along columns or rows, then a point must
/// equal the max of `(5, 1)` or `(1, 5)` respectively. Ties survive. Returns
/// indices into `cluster`.
pub fn directional_nms(cluster: &[ForegroundPoint], rows: usize, cols: usize) -> Vec<usize> {
    if cluster.is_empty() {
        return Vec::new();
    }
    const MARGIN: usize = 4;
    let r0 = cluster.iter().map(|p| p.row).min().unwrap_or(0).saturating_sub(MARGIN);
    let c0 = cluster.iter().map(|p| p.col).min().unwrap_or(0).saturating_sub(MARGIN);
    let r1 = (cluster.iter().map(|p| p.row).max().unwrap_or(0) + MARGIN + 1).min(rows);
    let c1 = (cluster.iter().map(|p| p.col).max().unwrap_or(0) + MARGIN + 1).min(cols);
    // The crop keeps every window the full grid would see: it extends past
    // each point by the largest kernel radius or stops at the real border.
    let mut g = Grid2D::zeros(r1 - r0, c1 - c0, 1);
    for p in cluster {
        g.set(p.row - r0, p.col - c0, 0, p.confidence);
    }
    let pool = |kh, kw, mode| pool2d(&g, kh, kw, mode).expect("odd kernels");
    let mp_vertical = pool(1, 5, PoolMode::Max);
    let mp_horizontal = pool(5, 1, PoolMode::Max);
    let ap_vertical = pool(5, 9, PoolMode::Avg);
    let ap_horizontal = pool(9, 5, PoolMode::Avg);
    cluster
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let (r, c) = (p.row - r0, p.col - c0);
            let v = g.get(r, c, 0);
            if ap_vertical.get(r, c, 0) > ap_horizontal.get(r, c, 0) {
                mp_horizontal.get(r, c, 0) == v
            } else {
                mp_vertical.get(r, c, 0) == v
            }
        })
        .map(|(i, _)| i)
        .collect()
}

/// The two opposite unit directions `(d_row, d_col)` a cell predicts: its
/// most likely bin and the bin half a turn away.
pub fn cell_directions(dir: &Grid2D, row: usize, col: usize) -> [[f64; 2]; 2] {
    let probs = dir.cell(row, col);
    let n = probs.len();
    let b = probs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0;
    let unit = |k: usize| {
        let t = k as f64 * TAU / n as f64;
        [t.cos(), t.sin()]
    };
    [unit(b), unit((b + n / 2) % n)]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Walk state shared by the two walks of one cluster.
pub struct WalkPool<'a> {
    points: &'a [ForegroundPoint],
    alive: Vec<bool>,
    taken: Vec<[bool; 2]>,
}

impl<'a> WalkPool<'a> {
    pub fn new(points: &'a [ForegroundPoint]) -> Self {
        Self {
            points,
            alive: vec![true; points.len()],
            taken: vec![[false; 2]; points.len()],
        }
    }

    pub fn remaining(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    fn pos(&self, i: usize) -> [f64; 2] {
        [self.points[i].row as f64, self.points[i].col as f64]
    }
}

/// Greedy walk from `start` (an index into the pool) following predicted
/// directions. The returned list begins with `start`.
pub fn connect_one_direction(
    start: usize,
    pool: &mut WalkPool,
    dir: &Grid2D,
    delta_step: f64,
    dist_threshold: f64,
) -> Vec<usize> {
    let mut line = vec![start];
    let mut p = start;
    while pool.remaining() > 0 {
        let (pr, pc) = (pool.points[p].row, pool.points[p].col);
        let dirs = cell_directions(dir, pr, pc);
        let Some(k) = (0..2).find(|&k| !pool.taken[p][k]) else {
            break;
        };
        pool.taken[p][k] = true;
        let pd = dirs[k];
        let here = pool.pos(p);
        let target = [here[0] + pd[0] * delta_step, here[1] + pd[1] * delta_step];
        for i in 0..pool.points.len() {
            if pool.alive[i] && dist(here, pool.pos(i)) < delta_step - 1.0 {
                pool.alive[i] = false;
            }
        }
        let next = (0..pool.points.len())
            .filter(|&i| pool.alive[i])
            .map(|i| (i, dist(pool.pos(i), target)))
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if bd <= d => best,
                _ => Some((i, d)),
            });
        let Some((q, _)) = next else { break };
        let there = pool.pos(q);
        if dist(here, there) > dist_threshold {
            break;
        }
        line.push(q);
        // Mark the direction of q that points back toward p.
        let back = [here[0] - there[0], here[1] - there[1]];
        let qd = cell_directions(dir, pool.points[q].row, pool.points[q].col);
        let dot = |d: [f64; 2]| d[0] * back[0] + d[1] * back[1];
        let arrival = if dot(qd[0]) >= dot(qd[1]) { 0 } else { 1 };
        pool.taken[q][arrival] = true;
        p = q;
    }
    line
}

/// Deterministic start: highest confidence, then nearest the centroid,
/// then row-major.
pub fn seed_point(points: &[ForegroundPoint]) -> Option<usize> {
    if points.is_empty() {
        return None;
    }
    let n = points.len() as f64;
    let cr = points.iter().map(|p| p.row as f64).sum::<f64>() / n;
    let cc = points.iter().map(|p| p.col as f64).sum::<f64>() / n;
    (0..points.len()).min_by(|&a, &b| {
        let (pa, pb) = (&points[a], &points[b]);
        pb.confidence
            .total_cmp(&pa.confidence)
            .then_with(|| {
                let da = (pa.row as f64 - cr).hypot(pa.col as f64 - cc);
                let db = (pb.row as f64 - cr).hypot(pb.col as f64 - cc);
                da.total_cmp(&db)
            })
            .then_with(|| (pa.row, pa.col).cmp(&(pb.row, pb.col)))
    })
}

/// Connects a cluster's points into an ordered list of point indices:
/// the reversed second walk followed by the first, sharing the seed.
pub fn connect_indices(points: &[ForegroundPoint], dir: &Grid2D, delta_step: f64, dist_threshold: f64) -> Vec<usize> {
    let Some(start) = seed_point(points) else {
        return Vec::new();
    };
    let mut pool = WalkPool::new(points);
    let first = connect_one_direction(start, &mut pool, dir, delta_step, dist_threshold);
    let second = connect_one_direction(start, &mut pool, dir, delta_step, dist_threshold);
    let mut order: Vec<usize> = second.into_iter().rev().collect();
    order.extend(first.into_iter().skip(1));
    order
}

/// Polyline in ego meters, or an error when fewer than two points connect.
pub fn connect_line(
    points: &[ForegroundPoint],
    class: MapClass,
    dir: &Grid2D,
    bev: &BevConfig,
    delta_step: f64,
    dist_threshold: f64,
) -> Result<Polyline> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("empty cluster".into()));
    }
    let order = connect_indices(points, dir, delta_step, dist_threshold);
    if order.len() < 2 {
        return Err(Error::InvalidArgument("cluster connects to a single point; dropped".into()));
    }
    let confidence = points.iter().map(|p| p.confidence).sum::<f64>() / points.len() as f64;
    Polyline::new(
        class,
        order
            .iter()
            .map(|&i| bev.cell_center(points[i].row, points[i].col))
            .collect(),
        confidence,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vectorized {
    pub map: VectorMap,
    /// Clusters that connected to fewer than two points.
    pub dropped: usize,
}

/// Full post-processing of co-registered class probabilities (background
/// first), embeddings and direction probabilities.
pub fn vectorize(seg: &Grid2D, emb: &Grid2D, dir: &Grid2D, bev: &BevConfig, params: &VectorizeParams) -> Result<Vectorized> {
    let (h, w) = (seg.height(), seg.width());
    if (emb.height(), emb.width()) != (h, w) || (dir.height(), dir.width()) != (h, w) {
        return Err(Error::Shape("prediction grids are not co-registered".into()));
    }
    if (bev.rows(), bev.cols()) != (h, w) {
        return Err(Error::Shape(format!(
            "predictions are {h}x{w}, BEV config is {}x{}",
            bev.rows(),
            bev.cols()
        )));
    }
    if seg.channels() != MapClass::ALL.len() + 1 || dir.channels() < 2 || dir.channels() % 2 != 0 {
        return Err(Error::Shape("unexpected segmentation or direction channel count".into()));
    }
    let mut map = VectorMap::new(*bev);
    let mut dropped = 0;
    for class in MapClass::ALL {
        let k = class.label();
        let fg: Vec<ForegroundPoint> = (0..h)
            .flat_map(|r| (0..w).map(move |c| (r, c)))
            .filter(|&(r, c)| seg.get(r, c, k) > params.threshold)
            .map(|(r, c)| ForegroundPoint {
                row: r,
                col: c,
                confidence: seg.get(r, c, k),
                embedding: emb.cell(r, c).to_vec(),
            })
            .collect();
        let labels = dbscan(&fg, params.eps, params.min_pts);
        let n_clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
        let mut clusters: Vec<Vec<ForegroundPoint>> = vec![Vec::new(); n_clusters];
        for (p, l) in fg.into_iter().zip(&labels) {
            if let Some(id) = l {
                clusters[*id].push(p);
            }
        }
        for cluster in clusters {
            let kept: Vec<ForegroundPoint> = directional_nms(&cluster, h, w)
                .into_iter()
                .map(|i| cluster[i].clone())
                .collect();
            match connect_line(&kept, class, dir, bev, params.delta_step, params.dist_threshold) {
                Ok(line) => map.elements.push(line),
                Err(_) => dropped += 1,
            }
        }
    }
    Ok(Vectorized { map, dropped })
}
