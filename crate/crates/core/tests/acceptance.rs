//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! straight to stdout (bypassing the harness capture) before asserting.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bevmap::bevnet::decoder::{decode_backward, decode_forward, im2col, DecoderOutput, DecoderParams, HeadSizes};
use bevmap::bevnet::{
    direction_loss, discriminative_loss, final_loss, pooled_iou, segmentation_loss, train_toy, view_backward,
    view_forward, LossWeights, Model, TrainConfig, TrainingSet,
};
use bevmap::dataset::{load_dataset, write_dataset};
use bevmap::geometry::{ipm_pixel_to_ground, project_ego_to_pixel, BevConfig, CameraModel};
use bevmap::io::{decode_grid, decode_points, decode_vector_map, encode_grid, encode_points, encode_vector_map};
use bevmap::map::{MapClass, Polyline, VectorMap};
use bevmap::metrics::{average_precision, chamfer, chamfer_directed, iou, sample_polyline, CdParams};
use bevmap::numerics::{net_gradient, Activation, DenseNetParams, Grid2D};
use bevmap::pillars::{aggregate_pillars, voxelize_dynamic, PointCloud};
use bevmap::presets;
use bevmap::synth::{gen_scene, ideal_grids, scene_seed, SceneSpec};
use bevmap::vectorize::{vectorize, VectorizeParams};
use bevmap::Error;

fn verdict(n: u32, name: &str, ok: bool, detail: String) {
    let line = format!("{} criterion {n}: {name} ({detail})", if ok { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
    assert!(ok, "{line}");
}

fn secs(d: Duration) -> String {
    format!("{:.2} s", d.as_secs_f64())
}

// ---------------------------------------------------------------- oracles

type Pt = [f64; 2];

fn dist(a: Pt, b: Pt) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn iou_oracle(pred: &Grid2D, gt: &Grid2D) -> Vec<f64> {
    (0..pred.channels())
        .map(|k| {
            let (mut inter, mut union) = (0, 0);
            for r in 0..pred.height() {
                for c in 0..pred.width() {
                    let p = pred.get(r, c, k) > 0.5;
                    let g = gt.get(r, c, k) > 0.5;
                    inter += (p && g) as usize;
                    union += (p || g) as usize;
                }
            }
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        })
        .collect()
}

fn directed_oracle(a: &[Pt], b: &[Pt], cap: f64) -> f64 {
    if a.is_empty() || b.is_empty() {
        return cap;
    }
    let mut total = 0.0;
    for &p in a {
        let mut best = f64::MAX;
        for &q in b {
            best = best.min(dist(p, q));
        }
        total += best;
    }
    total / a.len() as f64
}

/// Evenly spaced arc-length samples, found by searching cumulative lengths.
fn sample_oracle(pts: &[Pt], spacing: f64) -> Vec<Pt> {
    let mut cum = vec![0.0];
    for w in pts.windows(2) {
        cum.push(cum.last().unwrap() + dist(w[0], w[1]));
    }
    let total = *cum.last().unwrap();
    let n = ((total / spacing - 1e-9).ceil() as usize).max(1);
    (0..=n)
        .map(|i| {
            if i == n {
                return *pts.last().unwrap();
            }
            let s = total * i as f64 / n as f64;
            let j = (cum.partition_point(|&c| c < s)).clamp(1, pts.len() - 1) - 1;
            let len = cum[j + 1] - cum[j];
            let t = if len > 0.0 { ((s - cum[j]) / len).clamp(0.0, 1.0) } else { 0.0 };
            [
                pts[j][0] + t * (pts[j + 1][0] - pts[j][0]),
                pts[j][1] + t * (pts[j + 1][1] - pts[j][1]),
            ]
        })
        .collect()
}

fn ap_oracle(preds: &[Polyline], gts: &[Polyline], tau: f64, spacing: f64, cap: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let ps: Vec<Vec<Pt>> = preds.iter().map(|p| sample_oracle(&p.points, spacing)).collect();
    let gs: Vec<Vec<Pt>> = gts.iter().map(|g| sample_oracle(&g.points, spacing)).collect();
    let mut idx: Vec<usize> = (0..preds.len()).collect();
    // Stable: equal confidences keep input order.
    idx.sort_by(|&a, &b| preds[b].confidence.partial_cmp(&preds[a].confidence).unwrap());
    let mut taken = vec![false; gts.len()];
    let mut flags = Vec::new();
    for i in idx {
        let mut best: Option<(usize, f64)> = None;
        for g in 0..gts.len() {
            if taken[g] {
                continue;
            }
            let cd = (directed_oracle(&ps[i], &gs[g], cap) + directed_oracle(&gs[g], &ps[i], cap)) / 2.0;
            if best.is_none_or(|(_, b)| cd < b) {
                best = Some((g, cd));
            }
        }
        let tp = matches!(best, Some((_, cd)) if cd < tau);
        if tp {
            taken[best.unwrap().0] = true;
        }
        flags.push(tp);
    }
    let mut precision = Vec::new();
    let mut recall = Vec::new();
    let mut tp = 0.0;
    for (i, &f) in flags.iter().enumerate() {
        if f {
            tp += 1.0;
        }
        precision.push(tp / (i + 1) as f64);
        recall.push(tp / gts.len() as f64);
    }
    let mut sum = 0.0;
    for k in 1..=10 {
        let r = k as f64 / 10.0;
        let mut best = 0.0f64;
        for (p, rc) in precision.iter().zip(&recall) {
            if *rc >= r {
                best = best.max(*p);
            }
        }
        sum += best;
    }
    sum / 10.0
}

// --------------------------------------------------------------- fixtures

fn random_line(rng: &mut impl Rng, class: MapClass, extent: f64) -> Polyline {
    let n = rng.random_range(2..=4);
    let mut pts: Vec<Pt> = Vec::new();
    while pts.len() < n {
        let p = [rng.random_range(0.0..extent), rng.random_range(0.0..extent)];
        if pts.last().is_none_or(|&q| dist(p, q) > 0.3) {
            pts.push(p);
        }
    }
    let conf = [0.9, 0.8, 0.5, 0.3][rng.random_range(0..4)];
    Polyline::new(class, pts, conf).unwrap()
}

fn perturbed(rng: &mut impl Rng, src: &Polyline, sigma: f64) -> Polyline {
    let pts = src
        .points
        .iter()
        .map(|p| [p[0] + rng.random_range(-sigma..sigma), p[1] + rng.random_range(-sigma..sigma)])
        .collect();
    let conf = [0.9, 0.8, 0.5, 0.3][rng.random_range(0..4)];
    Polyline::new(src.class, pts, conf).unwrap()
}

/// Up to 4 ground-truth lines and 5 predictions, ≤ 30 vertices in total.
fn ap_fixture(rng: &mut impl Rng) -> (Vec<Polyline>, Vec<Polyline>) {
    let extent = 16.0;
    let gts: Vec<Polyline> = (0..rng.random_range(0..=4))
        .map(|_| random_line(rng, MapClass::Divider, extent))
        .collect();
    let mut preds = Vec::new();
    for _ in 0..rng.random_range(0..=5) {
        if !gts.is_empty() && rng.random_bool(0.7) {
            let g = &gts[rng.random_range(0..gts.len())];
            let sigma = [0.05, 0.2, 0.5, 1.2][rng.random_range(0..4)];
            preds.push(perturbed(rng, g, sigma));
        } else {
            preds.push(random_line(rng, MapClass::Divider, extent));
        }
    }
    (preds, gts)
}

// ----------------------------------------------------------------- tests

#[test]
fn criterion_01_metric_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let cap = 45.0;
    for _ in 0..100 {
        let (h, w) = (rng.random_range(1..=32), rng.random_range(1..=32));
        let dens: Vec<f64> = (0..3).map(|_| [0.0, 0.05, 0.3, 0.8][rng.random_range(0..4)]).collect();
        let draw = |rng: &mut ChaCha8Rng| {
            Grid2D::from_fn(h, w, 3, |_, _, k| if rng.random_bool(dens[k]) { 1.0 } else { 0.0 })
        };
        let p = draw(&mut rng);
        let g = draw(&mut rng);
        for (a, b) in iou(&p, &g).unwrap().iter().zip(iou_oracle(&p, &g)) {
            worst = worst.max((a - b).abs());
        }

        let na = rng.random_range(0..=30);
        let nb = rng.random_range(0..=30);
        let a: Vec<Pt> = (0..na).map(|_| [rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0)]).collect();
        let b: Vec<Pt> = (0..nb).map(|_| [rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0)]).collect();
        let d = chamfer_directed(&a, &b, cap);
        worst = worst.max((d.value - directed_oracle(&a, &b, cap)).abs());
        assert_eq!(d.capped, a.is_empty() || b.is_empty());
        let c = chamfer(&a, &b, cap);
        let (ab, ba) = (directed_oracle(&a, &b, cap), directed_oracle(&b, &a, cap));
        worst = worst.max((c.sum - (ab + ba)).abs()).max((c.average - (ab + ba) / 2.0).abs());

        let (preds, gts) = ap_fixture(&mut rng);
        let line = random_line(&mut rng, MapClass::Divider, 16.0).points;
        let s = sample_polyline(&line, 0.5).unwrap();
        assert_eq!(s.len(), sample_oracle(&line, 0.5).len());
        for (x, y) in s.iter().zip(sample_oracle(&line, 0.5)) {
            worst = worst.max(dist(*x, y));
        }
        let tau = [0.2, 0.5, 1.0][rng.random_range(0..3)];
        let cd = CdParams { spacing: 0.5, cap };
        let got = average_precision(&preds, &gts, tau, &cd).unwrap();
        worst = worst.max((got.ap - ap_oracle(&preds, &gts, tau, 0.5, cap)).abs());
        assert_eq!(got.no_gt, gts.is_empty());
    }
    let t = start.elapsed();
    verdict(
        1,
        "iou, chamfer_directed, chamfer and average_precision match brute-force oracles on 100 instances",
        worst <= 1e-12 && t < Duration::from_secs(10),
        format!("max abs error {worst:.2e}, {}", secs(t)),
    );
}

#[test]
fn criterion_02_ap_monotone_in_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let cd = CdParams { spacing: 0.5, cap: 45.0 };
    let mut violations = 0;
    let mut nontrivial = 0;
    for _ in 0..100 {
        let (preds, gts) = ap_fixture(&mut rng);
        let aps: Vec<f64> = [0.2, 0.5, 1.0]
            .iter()
            .map(|&t| average_precision(&preds, &gts, t, &cd).unwrap().ap)
            .collect();
        if !(aps[0] <= aps[1] && aps[1] <= aps[2]) {
            violations += 1;
        }
        if aps[0] < aps[2] {
            nontrivial += 1;
        }
    }
    verdict(
        2,
        "AP@0.2 <= AP@0.5 <= AP@1.0 on 100 random fixtures",
        violations == 0,
        format!("{violations} violations, {nontrivial} fixtures with strict increase"),
    );
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Central difference of `f` with respect to `x[i]`.
fn fd(x: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let up = f(x);
    x[i] = orig - h;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * h)
}

/// Redraws until no L1 coordinate difference or hinge argument sits within
/// `margin` of its kink.
fn clean_embedding(rng: &mut ChaCha8Rng, w: &LossWeights, margin: f64) -> (Grid2D, Vec<u32>) {
    loop {
        let (h, wd, e) = (3, 4, 2);
        let emb = Grid2D::from_fn(h, wd, e, |_, _, _| rng.random_range(-1.5..1.5));
        let ids: Vec<u32> = (0..h * wd).map(|_| rng.random_range(0..4)).collect();
        let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); 4];
        for (i, &id) in ids.iter().enumerate() {
            clusters[id as usize].push(i);
        }
        let means: Vec<Vec<f64>> = clusters[1..]
            .iter()
            .filter(|m| !m.is_empty())
            .map(|m| {
                (0..e)
                    .map(|k| m.iter().map(|&i| emb.data()[i * e + k]).sum::<f64>() / m.len() as f64)
                    .collect()
            })
            .collect();
        let mut ok = true;
        let mut ci = 0;
        for m in clusters[1..].iter().filter(|m| !m.is_empty()) {
            for &i in m {
                let diffs: Vec<f64> = (0..e).map(|k| means[ci][k] - emb.data()[i * e + k]).collect();
                let d: f64 = diffs.iter().map(|v| v.abs()).sum();
                ok &= diffs.iter().all(|v| v.abs() > margin) && (d - w.delta_v).abs() > margin;
            }
            ci += 1;
        }
        for a in 0..means.len() {
            for b in 0..means.len() {
                if a != b {
                    let diffs: Vec<f64> = (0..e).map(|k| means[a][k] - means[b][k]).collect();
                    let d: f64 = diffs.iter().map(|v| v.abs()).sum();
                    ok &= diffs.iter().all(|v| v.abs() > margin) && (2.0 * w.delta_d - d).abs() > margin;
                }
            }
        }
        if ok {
            return (emb, ids);
        }
    }
}

/// Pre-activations of every layer, computed directly from the weights.
fn preactivations(net: &DenseNetParams, x: &[f64]) -> Vec<Vec<f64>> {
    let mut cur = x.to_vec();
    let mut out = Vec::new();
    for l in net.layers() {
        let z: Vec<f64> = (0..l.outputs)
            .map(|o| l.bias[o] + (0..l.inputs).map(|i| l.weight[o * l.inputs + i] * cur[i]).sum::<f64>())
            .collect();
        cur = match l.activation {
            Activation::Identity => z.clone(),
            Activation::Relu => z.iter().map(|v| v.max(0.0)).collect(),
            Activation::Softmax => {
                let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.iter().map(|v| v / s).collect()
            }
        };
        out.push(z);
    }
    out
}

#[test]
fn criterion_03_gradient_checks() {
    let start = Instant::now();
    let h = 1e-4;
    let margin = 1e-2;
    let mut worst = 0.0f64;
    let mut checks = 0usize;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);

        // Discriminative loss.
        let w = LossWeights {
            alpha: rng.random_range(0.5..2.0),
            beta: rng.random_range(0.5..2.0),
            delta_v: 0.5,
            delta_d: 1.0,
        };
        let (emb, ids) = clean_embedding(&mut rng, &w, margin);
        let g = discriminative_loss(&emb, &ids, &w).unwrap().total.grad;
        let mut x = emb.data().to_vec();
        for i in 0..x.len() {
            let n = fd(&mut x, i, h, |v| {
                let e = Grid2D::from_vec(3, 4, 2, v.to_vec()).unwrap();
                discriminative_loss(&e, &ids, &w).unwrap().total.loss
            });
            worst = worst.max(rel_err(g.data()[i], n));
            checks += 1;
        }

        // Direction loss on a few labeled cells.
        let nd = 8;
        let logits = Grid2D::from_fn(3, 3, nd, |_, _, _| rng.random_range(-2.0..2.0));
        let mut labels = Grid2D::zeros(3, 3, nd);
        for r in 0..3 {
            for c in 0..3 {
                if rng.random_bool(0.5) {
                    let b = rng.random_range(0..nd / 2);
                    labels.set(r, c, b, 1.0);
                    labels.set(r, c, b + nd / 2, 1.0);
                }
            }
        }
        let g = direction_loss(&logits, &labels).unwrap().grad;
        let mut x = logits.data().to_vec();
        for i in 0..x.len() {
            let n = fd(&mut x, i, h, |v| {
                direction_loss(&Grid2D::from_vec(3, 3, nd, v.to_vec()).unwrap(), &labels).unwrap().loss
            });
            worst = worst.max(rel_err(g.data()[i], n));
            checks += 1;
        }

        // Segmentation loss.
        let logits = Grid2D::from_fn(3, 3, 4, |_, _, _| rng.random_range(-2.0..2.0));
        let semantic = Grid2D::from_fn(3, 3, 4, {
            let cls: Vec<usize> = (0..9).map(|_| rng.random_range(0..4)).collect();
            move |r, c, k| (cls[r * 3 + c] == k) as u8 as f64
        });
        let g = segmentation_loss(&logits, &semantic).unwrap().grad;
        let mut x = logits.data().to_vec();
        for i in 0..x.len() {
            let n = fd(&mut x, i, h, |v| {
                segmentation_loss(&Grid2D::from_vec(3, 3, 4, v.to_vec()).unwrap(), &semantic).unwrap().loss
            });
            worst = worst.max(rel_err(g.data()[i], n));
            checks += 1;
        }

        // Dense network: parameters and input, loss = Σ u·output.
        let acts = [Activation::Relu, Activation::Identity, Activation::Softmax];
        let (net, input) = loop {
            let sizes = [3, rng.random_range(2..6), rng.random_range(2..5), 3];
            let a: Vec<Activation> = (0..3).map(|i| if i == 2 { acts[rng.random_range(1..3)] } else { acts[rng.random_range(0..2)] }).collect();
            let net = DenseNetParams::init(&sizes, &a, &mut rng).unwrap();
            let input: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let pre = preactivations(&net, &input);
            let clean = net
                .layers()
                .iter()
                .zip(&pre)
                .all(|(l, z)| l.activation != Activation::Relu || z.iter().all(|v| v.abs() > margin));
            if clean {
                break (net, input);
            }
        };
        let u: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (grads, dx) = net_gradient(&net, &input, &u).unwrap();
        let objective = |n: &DenseNetParams, x: &[f64]| -> f64 {
            let pre = preactivations(n, x);
            let last = n.layers().last().unwrap();
            let z = pre.last().unwrap();
            let y: Vec<f64> = match last.activation {
                Activation::Softmax => {
                    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
                    let s: f64 = e.iter().sum();
                    e.iter().map(|v| v / s).collect()
                }
                Activation::Relu => z.iter().map(|v| v.max(0.0)).collect(),
                Activation::Identity => z.clone(),
            };
            y.iter().zip(&u).map(|(a, b)| a * b).sum()
        };
        let mut xin = input.clone();
        for i in 0..3 {
            let n = fd(&mut xin, i, h, |v| objective(&net, v));
            worst = worst.max(rel_err(dx[i], n));
            checks += 1;
        }
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
        let mut probe = net.clone();
        for (ti, a) in analytic.iter().enumerate() {
            for j in 0..a.len() {
                let orig = probe.tensors()[ti][j];
                probe.tensors_mut()[ti][j] = orig + h;
                let up = objective(&probe, &input);
                probe.tensors_mut()[ti][j] = orig - h;
                let down = objective(&probe, &input);
                probe.tensors_mut()[ti][j] = orig;
                worst = worst.max(rel_err(a[j], (up - down) / (2.0 * h)));
                checks += 1;
            }
        }

        // View transform: a dense network shared across channels.
        let vnet = loop {
            let n = DenseNetParams::init(&[6, 4, 4], &[Activation::Relu, Activation::Identity], &mut rng).unwrap();
            let persp = Grid2D::from_fn(2, 3, 2, |r, c, k| ((r * 3 + c) as f64 * 0.37 + k as f64 * 0.91).sin());
            let clean = (0..2).all(|k| {
                let plane: Vec<f64> = (0..6).map(|i| persp.data()[i * 2 + k]).collect();
                preactivations(&n, &plane)[0].iter().all(|v| v.abs() > margin)
            });
            if clean {
                break n;
            }
        };
        let persp = Grid2D::from_fn(2, 3, 2, |r, c, k| ((r * 3 + c) as f64 * 0.37 + k as f64 * 0.91).sin());
        let up = Grid2D::from_fn(2, 2, 2, |_, _, _| rng.random_range(-1.0..1.0));
        let (_, trace) = view_forward(&persp, &vnet, (2, 2)).unwrap();
        let mut vg = vnet.zero_gradients();
        view_backward(&vnet, &trace, &up, &mut vg).unwrap();
        let analytic: Vec<Vec<f64>> = vg.tensors().iter().map(|t| t.to_vec()).collect();
        let mut probe = vnet.clone();
        let vobj = |n: &DenseNetParams| -> f64 {
            let (o, _) = view_forward(&persp, n, (2, 2)).unwrap();
            o.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        };
        for (ti, a) in analytic.iter().enumerate() {
            for j in 0..a.len() {
                let orig = probe.tensors()[ti][j];
                probe.tensors_mut()[ti][j] = orig + h;
                let p = vobj(&probe);
                probe.tensors_mut()[ti][j] = orig - h;
                let m = vobj(&probe);
                probe.tensors_mut()[ti][j] = orig;
                worst = worst.max(rel_err(a[j], (p - m) / (2.0 * h)));
                checks += 1;
            }
        }

        // Decoder: 3×3 convolution trunk and 1×1 heads as dense ops on patches.
        let heads = HeadSizes { seg: 2, emb: 1, dir: 2 };
        let feats = Grid2D::from_fn(3, 3, 2, |_, _, _| rng.random_range(-1.0..1.0));
        let dec = loop {
            let d = DecoderParams::init(2, 3, 1, heads, &mut rng).unwrap();
            let cols = im2col(&feats, 3);
            let trunk = &d.trunk[0].net;
            let clean = (0..9).all(|cell| {
                preactivations(trunk, &cols[cell * 18..(cell + 1) * 18])[0]
                    .iter()
                    .all(|v| v.abs() > margin)
            });
            if clean {
                break d;
            }
        };
        let dout = DecoderOutput {
            seg: Grid2D::from_fn(3, 3, 2, |_, _, _| rng.random_range(-1.0..1.0)),
            emb: Grid2D::from_fn(3, 3, 1, |_, _, _| rng.random_range(-1.0..1.0)),
            dir: Grid2D::from_fn(3, 3, 2, |_, _, _| rng.random_range(-1.0..1.0)),
        };
        let dobj = |d: &DecoderParams, f: &Grid2D| -> f64 {
            let (o, _) = decode_forward(f, d).unwrap();
            [(&o.seg, &dout.seg), (&o.emb, &dout.emb), (&o.dir, &dout.dir)]
                .iter()
                .map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>())
                .sum()
        };
        let (_, dtrace) = decode_forward(&feats, &dec).unwrap();
        let mut dg: Vec<_> = dec.layers().map(|l| l.net.zero_gradients()).collect();
        let dfeat = decode_backward(&dec, &dtrace, &dout, &mut dg).unwrap();
        let mut fx = feats.data().to_vec();
        for i in 0..fx.len() {
            let n = fd(&mut fx, i, h, |v| dobj(&dec, &Grid2D::from_vec(3, 3, 2, v.to_vec()).unwrap()));
            worst = worst.max(rel_err(dfeat.data()[i], n));
            checks += 1;
        }
        for (li, lg) in dg.iter().enumerate() {
            for (ti, a) in lg.tensors().iter().enumerate() {
                for j in 0..a.len() {
                    let mut probe = dec.clone();
                    let orig = probe.layers().nth(li).unwrap().net.tensors()[ti][j];
                    let set = |p: &mut DecoderParams, v: f64| {
                        p.layers_mut().nth(li).unwrap().net.tensors_mut()[ti][j] = v;
                    };
                    set(&mut probe, orig + h);
                    let up = dobj(&probe, &feats);
                    set(&mut probe, orig - h);
                    let down = dobj(&probe, &feats);
                    worst = worst.max(rel_err(a[j], (up - down) / (2.0 * h)));
                    checks += 1;
                }
            }
        }
    }
    let t = start.elapsed();
    verdict(
        3,
        "loss and network gradients agree with central finite differences on 100 seeds",
        worst < 1e-3 && t < Duration::from_secs(30),
        format!("{checks} partials, max relative error {worst:.2e}, {}", secs(t)),
    );
}

#[test]
fn criterion_04_loss_zero_cases() {
    let w = LossWeights::default();
    // Cluster-constant embeddings, means 2δ_d and more apart.
    let emb = Grid2D::from_vec(
        1,
        6,
        2,
        vec![0.0, 0.0, 0.0, 0.0, 6.0, 0.0, 6.0, 0.0, 0.0, 7.5, 0.0, 7.5],
    )
    .unwrap();
    let zero = discriminative_loss(&emb, &[1, 1, 2, 2, 3, 3], &w).unwrap();
    let zero_exact = zero.total.loss == 0.0 && zero.total.grad.data().iter().all(|&v| v == 0.0);
    let same = Grid2D::from_vec(1, 3, 2, vec![1.0, -2.0, 1.0, -2.0, 1.0, -2.0]).unwrap();
    let push = discriminative_loss(&same, &[1, 2, 0], &w).unwrap();
    let expected = w.beta * (2.0 * w.delta_d).powi(2);
    let push_exact = push.var == 0.0 && push.total.loss == expected;
    verdict(
        4,
        "loss is exactly 0 with separated constant clusters and exactly beta(2 delta_d)^2 for coincident means",
        zero_exact && push_exact,
        format!("separated loss {}, coincident loss {} (expected {expected})", zero.total.loss, push.total.loss),
    );
}

#[test]
fn criterion_05_projection_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = 0.0f64;
    let mut n = 0;
    while n < 1000 {
        let cam = CameraModel::from_heading(
            rng.random_range(200.0..1200.0),
            rng.random_range(200.0..1200.0),
            rng.random_range(100.0..900.0),
            rng.random_range(100.0..600.0),
            rng.random_range(-3.1..3.1),
            rng.random_range(0.05..1.2),
            [rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0), rng.random_range(1.0..2.5)],
        )
        .unwrap();
        let p = [rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0), 0.0];
        let px = project_ego_to_pixel(&cam, &p);
        if !px.in_front {
            continue;
        }
        let Some(q) = ipm_pixel_to_ground(&cam, px.u, px.v) else {
            worst = f64::INFINITY;
            break;
        };
        worst = worst.max((q[0] - p[0]).hypot(q[1] - p[1]));
        n += 1;
    }
    verdict(
        5,
        "ground point -> pixel -> ground round trip under 1e-9 m for 1000 points",
        worst < 1e-9,
        format!("max error {worst:.2e} m"),
    );
}

#[test]
fn criterion_06_vectorization_round_trip() {
    let start = Instant::now();
    let bev = presets::full_bev();
    let spec = SceneSpec::default();
    let cdp = CdParams::for_bev(&bev);
    let params = VectorizeParams::default();
    let mut worst = 0.0f64;
    let mut count_mismatch = Vec::new();
    let mut elements = 0;
    for i in 0..50 {
        let s = SceneSpec {
            seed: scene_seed(600, i),
            ..spec.clone()
        };
        let scene = gen_scene(&s, &bev, &[]).unwrap();
        let ideal = ideal_grids(&scene.labels, 16, 3.0);
        let got = vectorize(&ideal.seg, &ideal.emb, &ideal.dir, &bev, &params).unwrap().map;
        for class in MapClass::ALL {
            let gt: Vec<&Polyline> = scene.map.of_class(class).collect();
            let rec: Vec<&Polyline> = got.of_class(class).collect();
            if gt.len() != rec.len() {
                count_mismatch.push(format!("scene {i} {}: {} vs {}", class.name(), rec.len(), gt.len()));
                continue;
            }
            let gs: Vec<Vec<Pt>> = gt.iter().map(|g| sample_polyline(&g.points, cdp.spacing).unwrap()).collect();
            let mut used = vec![false; gt.len()];
            for r in &rec {
                let rs = sample_polyline(&r.points, cdp.spacing).unwrap();
                let (j, cd) = gs
                    .iter()
                    .enumerate()
                    .map(|(j, g)| (j, chamfer(&rs, g, cdp.cap).average))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .unwrap();
                if used[j] {
                    count_mismatch.push(format!("scene {i} {}: two recovered elements share one source", class.name()));
                }
                used[j] = true;
                worst = worst.max(cd);
                elements += 1;
            }
        }
    }
    let t = start.elapsed();
    verdict(
        6,
        "ideal-grid vectorization recovers every element within one BEV pitch on 50 scenes",
        count_mismatch.is_empty() && worst < bev.pitch && t < Duration::from_secs(60),
        format!(
            "{elements} elements, worst CD {worst:.4} m vs pitch {}, count mismatches {:?}, {}",
            bev.pitch,
            count_mismatch,
            secs(t)
        ),
    );
}

#[test]
fn criterion_07_toy_training() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (train_dir, held_dir) = (dir.path().join("train"), dir.path().join("heldout"));
    let bev = presets::toy_bev();
    let rig = presets::toy_rig();
    write_dataset(&train_dir, &presets::toy_spec(), &bev, &rig, 200, 0).unwrap();
    write_dataset(&held_dir, &presets::toy_spec(), &bev, &rig, 20, 1).unwrap();
    let cfg = TrainConfig {
        steps: 2000,
        lr: 1e-3,
        seed: 0,
    };
    let out = train_toy(&train_dir, &presets::toy_model(), &cfg).unwrap();
    let held = load_dataset(&held_dir).unwrap();
    let set = TrainingSet::from_dataset(&out.model, &held).unwrap();
    let ious = pooled_iou(&out.model, &set.inputs, &set.labels).unwrap();
    let first = out.trace[0].loss;
    let last = final_loss(&out.trace, 20).unwrap();
    let last_seg = out.trace[out.trace.len() - 20..].iter().map(|r| r.loss.seg).sum::<f64>() / 20.0;
    let t = start.elapsed();
    verdict(
        7,
        "seed 0, 2000 steps on 200 scenes: held-out divider IoU >= 0.40 and final loss <= half of step 0",
        ious[0] >= 0.40 && last <= 0.5 * first.total && last_seg < first.seg && t < Duration::from_secs(900),
        format!(
            "divider IoU {:.3} (crossing {:.3}, boundary {:.3}), loss {:.3} -> {:.3}, seg {:.3} -> {:.3}, {}",
            ious[0],
            ious[1],
            ious[2],
            first.total,
            last,
            first.seg,
            last_seg,
            secs(t)
        ),
    );
}

#[test]
fn criterion_08_pillar_order_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let bev = BevConfig::new(-4.0, 4.0, -3.0, 3.0, 0.5).unwrap();
    let mut data = Vec::new();
    for _ in 0..400 {
        // Coarse values make exact duplicates and ties likely.
        data.extend([
            (rng.random_range(-90..90) as f64) * 0.05,
            (rng.random_range(-70..70) as f64) * 0.05,
            (rng.random_range(0..4) as f64) * 0.1,
            (rng.random_range(0..3) as f64) * 0.5,
        ]);
    }
    let cloud = PointCloud::from_vec(1, data).unwrap();
    let pn = DenseNetParams::init(&[6, 12, 8], &[Activation::Relu, Activation::Identity], &mut rng).unwrap();
    let base = aggregate_pillars(&voxelize_dynamic(&cloud, &bev), &cloud, &pn).unwrap();
    let bits = |g: &Grid2D| g.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let want = bits(&base);
    let mut differing = 0;
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    for _ in 0..1000 {
        order.shuffle(&mut rng);
        let c = cloud.permuted(&order);
        let g = aggregate_pillars(&voxelize_dynamic(&c, &bev), &c, &pn).unwrap();
        if bits(&g) != want {
            differing += 1;
        }
    }
    verdict(
        8,
        "1000 point-order shuffles give bit-identical pillar grids",
        differing == 0,
        format!("{differing} of 1000 shuffles differ"),
    );
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_09_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let bev = presets::toy_bev();
    let rig = presets::toy_rig();
    let spec = presets::toy_spec();
    let mut same = Vec::new();

    let (a, b) = (dir.path().join("synth_a"), dir.path().join("synth_b"));
    write_dataset(&a, &spec, &bev, &rig, 4, 9).unwrap();
    write_dataset(&b, &spec, &bev, &rig, 4, 9).unwrap();
    let ta = tree_bytes(&a);
    same.push(("synth", !ta.is_empty() && ta == tree_bytes(&b)));

    let cfg = TrainConfig {
        steps: 10,
        lr: 1e-3,
        seed: 3,
    };
    let mut bundles = Vec::new();
    let mut models = Vec::new();
    for name in ["train_a", "train_b"] {
        let out = train_toy(&a, &presets::toy_model(), &cfg).unwrap();
        let p = dir.path().join(name);
        out.model.save(&p, serde_json::json!({ "seed": 3 })).unwrap();
        bundles.push(tree_bytes(&p));
        models.push(out);
    }
    same.push((
        "train",
        bundles[0] == bundles[1] && models[0].trace == models[1].trace,
    ));

    let ds = load_dataset(&a).unwrap();
    let mut texts = Vec::new();
    for _ in 0..2 {
        let model = Model::load(&dir.path().join("train_a")).unwrap();
        let mut text = String::new();
        for s in &ds.scenes {
            let ideal = ideal_grids(&s.labels, 16, 3.0);
            let v = vectorize(&ideal.seg, &ideal.emb, &ideal.dir, &bev, &VectorizeParams::default()).unwrap();
            text.push_str(&encode_vector_map(&v.map));
            let p = model.predict(&model.prepare(&s.images, &s.points).unwrap()).unwrap();
            let v = vectorize(&p.seg, &p.emb, &p.dir, &bev, &VectorizeParams::default()).unwrap();
            text.push_str(&encode_vector_map(&v.map));
        }
        texts.push(text);
    }
    same.push(("vectorize", texts[0] == texts[1]));

    verdict(
        9,
        "synth, train and vectorize are byte-identical across two runs with fixed seeds",
        same.iter().all(|s| s.1),
        same.iter().map(|(n, ok)| format!("{n} {}", if *ok { "identical" } else { "differs" })).collect::<Vec<_>>().join(", "),
    );
}

fn parse_offset(e: &Error) -> Option<usize> {
    match e {
        Error::Parse { offset, .. } => Some(*offset),
        _ => None,
    }
}

#[test]
fn criterion_10_format_conformance() {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut failures = Vec::new();
    let mut truncations = 0usize;

    for i in 0..200 {
        let (h, w, c) = (rng.random_range(0..6), rng.random_range(0..6), rng.random_range(0..4));
        let g = Grid2D::from_fn(h, w, c, |_, _, _| {
            let v: f32 = match rng.random_range(0..4) {
                0 => rng.random_range(-1.0..1.0),
                1 => rng.random_range(-1e30..1e30),
                2 => rng.random_range(-1e-30..1e-30),
                _ => 0.0,
            };
            v as f64
        });
        let bytes = encode_grid(&g).unwrap();
        if decode_grid(&bytes).ok().as_ref() != Some(&g) {
            failures.push(format!("grid {i} round trip"));
        }
        for n in 0..bytes.len() {
            truncations += 1;
            match decode_grid(&bytes[..n]) {
                Err(e) if parse_offset(&e).is_some_and(|o| o <= n) => {}
                _ => failures.push(format!("grid {i} prefix {n} accepted or unpositioned")),
            }
        }
    }

    for i in 0..200 {
        let k = rng.random_range(0..3);
        let n = rng.random_range(0..12);
        let data: Vec<f64> = (0..n * (3 + k)).map(|_| rng.random_range(-100.0f32..100.0) as f64).collect();
        let cloud = PointCloud::from_vec(k, data).unwrap();
        let bytes = encode_points(&cloud).unwrap();
        match decode_points(&bytes) {
            Ok(back) if back.data() == cloud.data() && back.extra() == k => {}
            _ => failures.push(format!("points {i} round trip")),
        }
        for n in 0..bytes.len() {
            truncations += 1;
            match decode_points(&bytes[..n]) {
                Err(e) if parse_offset(&e).is_some_and(|o| o <= n) => {}
                _ => failures.push(format!("points {i} prefix {n} accepted or unpositioned")),
            }
        }
    }

    let micro = |rng: &mut ChaCha8Rng, lo: i64, hi: i64| rng.random_range(lo..hi) as f64 / 1e6;
    for i in 0..200 {
        let bev = BevConfig::new(-30.0, 30.0, -15.0, 15.0, 0.15).unwrap();
        let elements = (0..rng.random_range(0..4))
            .map(|_| {
                let class = MapClass::ALL[rng.random_range(0..3)];
                let pts = (0..rng.random_range(2..6))
                    .map(|_| [micro(&mut rng, -30_000_000, 30_000_000), micro(&mut rng, -15_000_000, 15_000_000)])
                    .collect();
                Polyline::new(class, pts, micro(&mut rng, 0, 1_000_000)).unwrap()
            })
            .collect();
        let vm = VectorMap { bev, elements };
        let text = encode_vector_map(&vm);
        if decode_vector_map(&text).ok().as_ref() != Some(&vm) {
            failures.push(format!("map {i} round trip"));
        }
        let body = text.trim_end();
        for n in (0..body.len()).filter(|&n| body.is_char_boundary(n)) {
            truncations += 1;
            match decode_vector_map(&body[..n]) {
                Err(e) if parse_offset(&e).is_some_and(|o| o <= n) => {}
                _ => failures.push(format!("map {i} prefix {n} accepted or unpositioned")),
            }
        }
    }

    verdict(
        10,
        "BVG1, BVP1 and VectorMap codecs round-trip 200 random values each and reject every truncation with a byte offset",
        failures.is_empty(),
        format!(
            "{truncations} truncations checked, {} failures{}",
            failures.len(),
            failures.first().map(|f| format!(", first: {f}")).unwrap_or_default()
        ),
    );
}
