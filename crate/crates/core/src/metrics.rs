//! IoU, Chamfer distance and CD-thresholded average precision.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::BevConfig;
use crate::map::{MapClass, Polyline, VectorMap};
use crate::numerics::Grid2D;

pub type Point = [f64; 2];

/// Per-channel IoU of two binary grids (a cell is set when its value > 0.5).
/// Both empty gives 1, exactly one empty gives 0.
pub fn iou(pred: &Grid2D, gt: &Grid2D) -> Result<Vec<f64>> {
    Ok(iou_counts(pred, gt)?
        .into_iter()
        .map(|(i, u)| ratio(i, u))
        .collect())
}

fn ratio(inter: usize, union: usize) -> f64 {
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Per-channel `(intersection, union)` cell counts.
pub fn iou_counts(pred: &Grid2D, gt: &Grid2D) -> Result<Vec<(usize, usize)>> {
    if !pred.same_shape(gt) {
        return Err(Error::Shape(format!("iou: {:?} vs {:?}", pred.shape(), gt.shape())));
    }
    let ch = pred.channels();
    let mut counts = vec![(0usize, 0usize); ch];
    for (p, g) in pred.data().chunks_exact(ch.max(1)).zip(gt.data().chunks_exact(ch.max(1))) {
        for k in 0..ch {
            let (a, b) = (p[k] > 0.5, g[k] > 0.5);
            counts[k].0 += (a && b) as usize;
            counts[k].1 += (a || b) as usize;
        }
    }
    Ok(counts)
}

/// Points spaced uniformly by arc length, including both endpoints, with no
/// gap longer than `spacing`.
pub fn sample_polyline(points: &[Point], spacing: f64) -> Result<Vec<Point>> {
    if !(spacing > 0.0) {
        return Err(Error::InvalidArgument(format!("sample spacing {spacing}")));
    }
    if points.len() < 2 {
        return Err(Error::InvalidArgument("polyline needs at least 2 points".into()));
    }
    let seg: Vec<f64> = points
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .collect();
    let total: f64 = seg.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::InvalidArgument("degenerate polyline".into()));
    }
    let n = ((total / spacing) - 1e-9).ceil().max(1.0) as usize;
    let mut out = Vec::with_capacity(n + 1);
    let mut k = 0;
    let mut before = 0.0;
    for i in 0..=n {
        let s = total * i as f64 / n as f64;
        while k + 1 < seg.len() && before + seg[k] < s {
            before += seg[k];
            k += 1;
        }
        let t = if seg[k] > 0.0 {
            ((s - before) / seg[k]).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (a, b) = (points[k], points[k + 1]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    // Pin the endpoint exactly.
    out[n] = points[points.len() - 1];
    Ok(out)
}

/// A Chamfer value that may have been replaced by the cap because a set was empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Directed {
    pub value: f64,
    pub capped: bool,
}

/// Mean over `a` of the distance to the nearest point of `b`.
pub fn chamfer_directed(a: &[Point], b: &[Point], cap: f64) -> Directed {
    if a.is_empty() || b.is_empty() {
        return Directed {
            value: cap,
            capped: true,
        };
    }
    let sum: f64 = a
        .iter()
        .map(|p| {
            b.iter()
                .map(|q| (p[0] - q[0]).hypot(p[1] - q[1]))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Directed {
        value: sum / a.len() as f64,
        capped: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Chamfer {
    /// `CD(a→b) + CD(b→a)`.
    pub sum: f64,
    /// Mean of the two directed values; the headline convention.
    pub average: f64,
    pub capped: bool,
}

pub fn chamfer(a: &[Point], b: &[Point], cap: f64) -> Chamfer {
    let ab = chamfer_directed(a, b, cap);
    let ba = chamfer_directed(b, a, cap);
    Chamfer {
        sum: ab.value + ba.value,
        average: (ab.value + ba.value) / 2.0,
        capped: ab.capped || ba.capped,
    }
}

/// Sampling density and empty-set cap shared by polyline metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdParams {
    pub spacing: f64,
    pub cap: f64,
}

impl CdParams {
    /// Spacing of one BEV pitch, cap of the BEV diagonal.
    pub fn for_bev(bev: &BevConfig) -> Self {
        Self {
            spacing: bev.pitch,
            cap: bev.diagonal(),
        }
    }
}

pub fn sample_all<'a>(lines: impl IntoIterator<Item = &'a Polyline>, spacing: f64) -> Result<Vec<Point>> {
    let mut out = Vec::new();
    for l in lines {
        out.extend(sample_polyline(&l.points, spacing)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApResult {
    pub ap: f64,
    /// Set when there was no ground truth; `ap` is then 0.
    pub no_gt: bool,
}

/// Greedy confidence-ordered matching. Returns, in the order predictions are
/// processed, `(index into preds, is_tp)`.
pub fn match_predictions(preds: &[Polyline], gts: &[Polyline], threshold: f64, cd: &CdParams) -> Result<Vec<(usize, bool)>> {
    let cds = pairwise_cd(preds, gts, cd)?;
    Ok(match_with_cds(preds, &cds, gts.len(), threshold))
}

/// Bidirectional-average CD between every prediction and every GT.
pub fn pairwise_cd(preds: &[Polyline], gts: &[Polyline], cd: &CdParams) -> Result<Vec<Vec<f64>>> {
    let ps = preds
        .iter()
        .map(|p| sample_polyline(&p.points, cd.spacing))
        .collect::<Result<Vec<_>>>()?;
    let gs = gts
        .iter()
        .map(|g| sample_polyline(&g.points, cd.spacing))
        .collect::<Result<Vec<_>>>()?;
    Ok(ps
        .iter()
        .map(|p| gs.iter().map(|g| chamfer(p, g, cd.cap).average).collect())
        .collect())
}

/// Indices of `preds` sorted by descending confidence, stable.
pub fn confidence_order(preds: &[Polyline]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
    order
}

fn match_with_cds(preds: &[Polyline], cds: &[Vec<f64>], n_gt: usize, threshold: f64) -> Vec<(usize, bool)> {
    let mut used = vec![false; n_gt];
    confidence_order(preds)
        .into_iter()
        .map(|i| {
            let best = (0..n_gt)
                .filter(|&g| !used[g])
                .min_by(|&a, &b| cds[i][a].total_cmp(&cds[i][b]));
            let tp = match best {
                Some(g) if cds[i][g] < threshold => {
                    used[g] = true;
                    true
                }
                _ => false,
            };
            (i, tp)
        })
        .collect()
}

/// 10-point interpolated AP of a ranked TP/FP sequence against `n_gt` GTs.
pub fn interpolated_ap(ranked_tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let curve: Vec<(usize, f64)> = ranked_tp
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            tp += t as usize;
            (tp, tp as f64 / (i + 1) as f64)
        })
        .collect();
    let mut total = 0.0;
    for k in 1..=10usize {
        // recall ≥ k/10 compared in integers: 10·tp ≥ k·n_gt.
        let best = curve
            .iter()
            .filter(|(tp, _)| 10 * tp >= k * n_gt)
            .map(|&(_, p)| p)
            .fold(0.0, f64::max);
        total += best;
    }
    total / 10.0
}

pub fn average_precision(preds: &[Polyline], gts: &[Polyline], threshold: f64, cd: &CdParams) -> Result<ApResult> {
    average_precision_scenes(&[(preds, gts)], threshold, cd)
}

/// AP over several scenes: matching stays within a scene, then all
/// predictions are ranked together by confidence (stable in scene order).
pub fn average_precision_scenes(scenes: &[(&[Polyline], &[Polyline])], threshold: f64, cd: &CdParams) -> Result<ApResult> {
    let cds = scenes
        .iter()
        .map(|(p, g)| pairwise_cd(p, g, cd))
        .collect::<Result<Vec<_>>>()?;
    Ok(ap_from_cds(scenes, &cds, threshold))
}

fn ap_from_cds(scenes: &[(&[Polyline], &[Polyline])], cds: &[Vec<Vec<f64>>], threshold: f64) -> ApResult {
    let n_gt: usize = scenes.iter().map(|(_, g)| g.len()).sum();
    let mut ranked: Vec<(f64, bool)> = Vec::new();
    for ((preds, gts), cd) in scenes.iter().zip(cds) {
        for (i, tp) in match_with_cds(preds, cd, gts.len(), threshold) {
            ranked.push((preds[i].confidence, tp));
        }
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let tps: Vec<bool> = ranked.into_iter().map(|(_, t)| t).collect();
    ApResult {
        ap: interpolated_ap(&tps, n_gt),
        no_gt: n_gt == 0,
    }
}

/// One side of an evaluation: a vector map and its per-class binary masks
/// (one channel per [`MapClass`], in label order).
#[derive(Debug, Clone, Copy)]
pub struct EvalInput<'a> {
    pub map: &'a VectorMap,
    pub masks: &'a Grid2D,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub iou: f64,
    /// Directed CD from label points to prediction points.
    pub cd_p: f64,
    /// Directed CD from prediction points to label points.
    pub cd_l: f64,
    /// Mean of `cd_p` and `cd_l`.
    pub cd: f64,
    /// `cd_p + cd_l`.
    pub cd_sum: f64,
    /// True when a CD was replaced by the cap because one side was empty.
    pub cd_capped: bool,
    /// AP at each threshold, in the report's threshold order.
    pub ap: Vec<f64>,
    pub map: f64,
    /// True when the class had no ground-truth elements.
    pub no_gt: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassTable {
    pub divider: ClassMetrics,
    pub ped_crossing: ClassMetrics,
    pub boundary: ClassMetrics,
}

impl ClassTable {
    pub fn get(&self, class: MapClass) -> &ClassMetrics {
        match class {
            MapClass::Divider => &self.divider,
            MapClass::PedCrossing => &self.ped_crossing,
            MapClass::Boundary => &self.boundary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllClass {
    pub iou: f64,
    pub cd_p: f64,
    pub cd_l: f64,
    pub cd: f64,
    pub cd_sum: f64,
    pub ap: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub thresholds: Vec<f64>,
    pub scenes: usize,
    /// Which convention the `cd` column uses.
    pub cd_convention: &'static str,
    pub classes: ClassTable,
    /// Unweighted means over classes; AP means skip classes without ground truth.
    pub all: AllClass,
    /// Mean of the all-class APs over thresholds.
    pub map: f64,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Aligned text table; capped CDs are marked with `*`.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<14}{:>8}{:>8} {:>8} {:>8} {:>8} ", "class", "IoU", "CD_P", "CD_L", "CD(avg)", "CD(sum)");
        for t in &self.thresholds {
            let _ = write!(out, "{:>9}", format!("AP@{t}"));
        }
        let _ = writeln!(out, "{:>8}", "mAP");
        for class in MapClass::ALL {
            let m = self.classes.get(class);
            let star = if m.cd_capped { "*" } else { " " };
            let _ = write!(
                out,
                "{:<14}{:>8.3}{:>8.3}{star}{:>8.3}{star}{:>8.3}{star}{:>8.3}{star}",
                class.name(),
                m.iou,
                m.cd_p,
                m.cd_l,
                m.cd,
                m.cd_sum
            );
            for ap in &m.ap {
                let _ = write!(out, "{:>9.3}", ap);
            }
            let _ = writeln!(out, "{:>8.3}{}", m.map, if m.no_gt { "  (no ground truth)" } else { "" });
        }
        let a = &self.all;
        let _ = write!(
            out,
            "{:<14}{:>8.3}{:>8.3} {:>8.3} {:>8.3} {:>8.3} ",
            "all", a.iou, a.cd_p, a.cd_l, a.cd, a.cd_sum
        );
        for ap in &a.ap {
            let _ = write!(out, "{:>9.3}", ap);
        }
        let _ = writeln!(out, "{:>8.3}", self.map);
        let _ = writeln!(
            out,
            "CD(avg) = (CD_P + CD_L)/2, CD(sum) = CD_P + CD_L; CD_P runs label -> prediction.{}",
            if MapClass::ALL.iter().any(|&c| self.classes.get(c).cd_capped) {
                " * = a side was empty, capped at the BEV diagonal."
            } else {
                ""
            }
        );
        out
    }
}

/// Single-scene evaluation.
pub fn evaluate(pred: EvalInput, gt: EvalInput, thresholds: &[f64]) -> Result<MetricsReport> {
    evaluate_scenes(&[(pred, gt)], thresholds)
}

/// Evaluates several scenes. IoU pools cell counts, CDs average over scenes
/// where the class appears on either side, and AP ranks all predictions
/// together.
pub fn evaluate_scenes(scenes: &[(EvalInput, EvalInput)], thresholds: &[f64]) -> Result<MetricsReport> {
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) || thresholds.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::InvalidArgument("thresholds must be positive and ascending".into()));
    }
    let bev = match scenes.first() {
        Some((p, _)) => p.map.bev,
        None => return Err(Error::InvalidArgument("no scenes to evaluate".into())),
    };
    let d = MapClass::ALL.len();
    for (p, g) in scenes {
        if p.map.bev != bev || g.map.bev != bev {
            return Err(Error::InvalidArgument("prediction and ground truth BEV configs differ".into()));
        }
        for m in [p.masks, g.masks] {
            if m.shape() != (bev.rows(), bev.cols(), d) {
                return Err(Error::Shape(format!(
                    "class masks must be {}x{}x{d}, got {:?}",
                    bev.rows(),
                    bev.cols(),
                    m.shape()
                )));
            }
        }
    }
    let cdp = CdParams::for_bev(&bev);

    let mut counts = vec![(0usize, 0usize); d];
    for (p, g) in scenes {
        for (acc, c) in counts.iter_mut().zip(iou_counts(p.masks, g.masks)?) {
            acc.0 += c.0;
            acc.1 += c.1;
        }
    }

    let mut per_class = Vec::with_capacity(d);
    for (ci, class) in MapClass::ALL.into_iter().enumerate() {
        let mut preds: Vec<Vec<Polyline>> = Vec::new();
        let mut gts: Vec<Vec<Polyline>> = Vec::new();
        let (mut cd_p, mut cd_l, mut n_cd, mut capped) = (0.0, 0.0, 0usize, false);
        for (p, g) in scenes {
            let pl: Vec<Polyline> = p.map.of_class(class).cloned().collect();
            let gl: Vec<Polyline> = g.map.of_class(class).cloned().collect();
            if !(pl.is_empty() && gl.is_empty()) {
                let ps = sample_all(&pl, cdp.spacing)?;
                let gs = sample_all(&gl, cdp.spacing)?;
                let lp = chamfer_directed(&gs, &ps, cdp.cap);
                let pl_ = chamfer_directed(&ps, &gs, cdp.cap);
                cd_p += lp.value;
                cd_l += pl_.value;
                capped |= lp.capped || pl_.capped;
                n_cd += 1;
            }
            preds.push(pl);
            gts.push(gl);
        }
        let pairs: Vec<(&[Polyline], &[Polyline])> =
            preds.iter().zip(&gts).map(|(p, g)| (p.as_slice(), g.as_slice())).collect();
        let cds = pairs
            .iter()
            .map(|(p, g)| pairwise_cd(p, g, &cdp))
            .collect::<Result<Vec<_>>>()?;
        let aps: Vec<ApResult> = thresholds.iter().map(|&t| ap_from_cds(&pairs, &cds, t)).collect();
        let (cd_p, cd_l) = if n_cd == 0 {
            (0.0, 0.0)
        } else {
            (cd_p / n_cd as f64, cd_l / n_cd as f64)
        };
        let ap: Vec<f64> = aps.iter().map(|a| a.ap).collect();
        per_class.push(ClassMetrics {
            iou: ratio(counts[ci].0, counts[ci].1),
            cd_p,
            cd_l,
            cd: (cd_p + cd_l) / 2.0,
            cd_sum: cd_p + cd_l,
            cd_capped: capped,
            map: mean(&ap),
            ap,
            no_gt: aps.first().is_some_and(|a| a.no_gt),
        });
    }

    let with_gt: Vec<&ClassMetrics> = per_class.iter().filter(|m| !m.no_gt).collect();
    let all_ap: Vec<f64> = (0..thresholds.len())
        .map(|t| mean(&with_gt.iter().map(|m| m.ap[t]).collect::<Vec<_>>()))
        .collect();
    let col = |f: fn(&ClassMetrics) -> f64| mean(&per_class.iter().map(f).collect::<Vec<_>>());
    let all = AllClass {
        iou: col(|m| m.iou),
        cd_p: col(|m| m.cd_p),
        cd_l: col(|m| m.cd_l),
        cd: col(|m| m.cd),
        cd_sum: col(|m| m.cd_sum),
        ap: all_ap,
    };
    let mut it = per_class.into_iter();
    let classes = ClassTable {
        divider: it.next().expect("three classes"),
        ped_crossing: it.next().expect("three classes"),
        boundary: it.next().expect("three classes"),
    };
    Ok(MetricsReport {
        thresholds: thresholds.to_vec(),
        scenes: scenes.len(),
        cd_convention: "average",
        map: mean(&all.ap),
        classes,
        all,
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
