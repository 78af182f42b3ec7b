//! Point clouds, dynamic pillar voxelization and max-pooled pillar features.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::BevConfig;
use crate::numerics::{DenseNetParams, ForwardTrace, Grid2D, NetGradients};

/// Points as `x, y, z` in ego meters followed by `extra` feature scalars.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    extra: usize,
    data: Vec<f64>,
}

impl PointCloud {
    pub fn new(extra: usize) -> Self {
        Self {
            extra,
            data: Vec::new(),
        }
    }

    pub fn from_vec(extra: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() % (extra + 3) != 0 {
            return Err(Error::Shape(format!(
                "{} values is not a whole number of {}-wide records",
                data.len(),
                extra + 3
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point cloud".into()));
        }
        Ok(Self { extra, data })
    }

    pub fn push(&mut self, record: &[f64]) -> Result<()> {
        if record.len() != self.extra + 3 {
            return Err(Error::Shape(format!("record has {} values, expected {}", record.len(), self.extra + 3)));
        }
        if record.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point".into()));
        }
        self.data.extend_from_slice(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.extra + 3)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn extra(&self) -> usize {
        self.extra
    }

    pub fn stride(&self) -> usize {
        self.extra + 3
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let s = self.stride();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Reorders points so that new point `i` is old point `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for &i in order {
            data.extend_from_slice(self.point(i));
        }
        Self {
            extra: self.extra,
            data,
        }
    }
}

/// Non-empty pillars keyed by row-major cell index, each listing its points.
#[derive(Debug, Clone, PartialEq)]
pub struct PillarIndex {
    pub bev: BevConfig,
    pub pillars: BTreeMap<usize, Vec<usize>>,
    pub outside: usize,
}

impl PillarIndex {
    pub fn member_count(&self) -> usize {
        self.pillars.values().map(Vec::len).sum()
    }
}

/// Assigns every in-extent point to the pillar containing its `(x, y)`.
pub fn voxelize_dynamic(points: &PointCloud, bev: &BevConfig) -> PillarIndex {
    let mut pillars: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut outside = 0;
    let cols = bev.cols();
    for i in 0..points.len() {
        let p = points.point(i);
        match bev.cell_of(p[0], p[1]) {
            Some((r, c)) => pillars.entry(r * cols + c).or_default().push(i),
            None => outside += 1,
        }
    }
    PillarIndex {
        bev: *bev,
        pillars,
        outside,
    }
}

/// Per-point network input: the raw record followed by the offset from the
/// pillar center.
pub fn augmented_point(points: &PointCloud, bev: &BevConfig, cell: usize, i: usize) -> Vec<f64> {
    let cols = bev.cols();
    let [cx, cy] = bev.cell_center(cell / cols, cell % cols);
    let p = points.point(i);
    let mut v = Vec::with_capacity(p.len() + 2);
    v.extend_from_slice(p);
    v.push(p[0] - cx);
    v.push(p[1] - cy);
    v
}

/// Pillar features plus what the backward pass needs.
#[derive(Debug, Clone)]
pub struct PillarFeatures {
    pub grid: Grid2D,
    /// Batched per-point forward pass, rows in canonical order.
    pub trace: ForwardTrace,
    /// `(cell, point)` for each batch row.
    pub rows: Vec<(usize, usize)>,
    /// Per non-empty cell, the winning batch row of each channel.
    pub argmax: BTreeMap<usize, Vec<usize>>,
}

/// Channelwise max of `pn` over each pillar's members; empty pillars are zero.
pub fn aggregate_pillars(index: &PillarIndex, points: &PointCloud, pn: &DenseNetParams) -> Result<Grid2D> {
    Ok(aggregate_pillars_traced(index, points, pn)?.grid)
}

pub fn aggregate_pillars_traced(
    index: &PillarIndex,
    points: &PointCloud,
    pn: &DenseNetParams,
) -> Result<PillarFeatures> {
    let want = points.extra() + 5;
    if pn.input_size() != want {
        return Err(Error::Shape(format!(
            "pillar network takes {} inputs, points provide {want}",
            pn.input_size()
        )));
    }
    let bev = &index.bev;
    let ch = pn.output_size();

    // Canonical row order (cell, then point contents) so the batch is the
    // same whatever order the cloud arrived in.
    let mut rows = Vec::with_capacity(index.member_count());
    for (&cell, members) in &index.pillars {
        let mut sorted = members.clone();
        sorted.sort_by(|&a, &b| cmp_records(points.point(a), points.point(b)));
        rows.extend(sorted.into_iter().map(|i| (cell, i)));
    }
    let mut input = Vec::with_capacity(rows.len() * want);
    for &(cell, i) in &rows {
        input.extend(augmented_point(points, bev, cell, i));
    }
    let trace = pn.forward_batch(&input, rows.len())?;
    let out = trace.output();

    let mut grid = Grid2D::zeros(bev.rows(), bev.cols(), ch);
    let mut argmax = BTreeMap::new();
    let mut start = 0;
    while start < rows.len() {
        let cell = rows[start].0;
        let end = start + rows[start..].iter().take_while(|r| r.0 == cell).count();
        let mut best = vec![f64::NEG_INFINITY; ch];
        let mut who = vec![start; ch];
        for row in start..end {
            for k in 0..ch {
                let v = out[row * ch + k];
                if v > best[k] {
                    best[k] = v;
                    who[k] = row;
                }
            }
        }
        grid.cell_mut(cell / bev.cols(), cell % bev.cols()).copy_from_slice(&best);
        argmax.insert(cell, who);
        start = end;
    }
    Ok(PillarFeatures {
        grid,
        trace,
        rows,
        argmax,
    })
}

fn cmp_records(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Accumulates `pn` parameter gradients from the gradient with respect to
/// the pillar grid, routing each channel to the point that won its max.
pub fn backward_pillars(
    pn: &DenseNetParams,
    features: &PillarFeatures,
    upstream: &Grid2D,
    grads: &mut NetGradients,
) -> Result<()> {
    if !upstream.same_shape(&features.grid) {
        return Err(Error::Shape("pillar upstream gradient shape".into()));
    }
    let ch = pn.output_size();
    let w = features.grid.width();
    let mut up = vec![0.0; features.rows.len() * ch];
    for (&cell, who) in &features.argmax {
        let g = upstream.cell(cell / w, cell % w);
        for k in 0..ch {
            up[who[k] * ch + k] += g[k];
        }
    }
    pn.backward_batch(&features.trace, &up, grads)?;
    Ok(())
}
