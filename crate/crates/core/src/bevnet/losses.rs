use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{softmax_cross_entropy, Grid2D, LossGrad};

/// Weights and margins of the instance-embedding loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub delta_v: f64,
    pub delta_d: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            delta_v: 0.5,
            delta_d: 3.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let v = [self.alpha, self.beta, self.delta_v, self.delta_d];
        if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::InvalidArgument(format!("loss weights must be positive: {self:?}")));
        }
        Ok(())
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Breakdown of the instance-embedding loss.
#[derive(Debug, Clone)]
pub struct DiscriminativeLoss {
    pub var: f64,
    pub dist: f64,
    pub total: LossGrad,
}

/// Pull-push embedding loss with L1 distances.
///
/// `L_var = 1/C Σ_c 1/N_c Σ_i [‖μ_c − x_i‖₁ − δ_v]₊²` and
/// `L_dist = 1/(C(C−1)) Σ_{a≠b} [2δ_d − ‖μ_a − μ_b‖₁]₊²` over ordered pairs;
/// the total is `α·L_var + β·L_dist`. Cells with instance 0 are ignored.
/// Gradients include the dependence of each mean on its members.
pub fn discriminative_loss(emb: &Grid2D, instance: &[u32], w: &LossWeights) -> Result<DiscriminativeLoss> {
    if instance.len() != emb.cells() {
        return Err(Error::Shape(format!(
            "{} instance labels for {} cells",
            instance.len(),
            emb.cells()
        )));
    }
    let e = emb.channels();
    let mut ids: Vec<u32> = instance.iter().copied().filter(|&i| i != 0).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut grad = Grid2D::zeros(emb.height(), emb.width(), e);
    let c = ids.len();
    if c == 0 {
        return Ok(DiscriminativeLoss {
            var: 0.0,
            dist: 0.0,
            total: LossGrad { loss: 0.0, grad },
        });
    }
    let slot = |id: u32| ids.binary_search(&id).expect("id collected above");
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (cell, &id) in instance.iter().enumerate() {
        if id != 0 {
            members[slot(id)].push(cell);
        }
    }
    let x = emb.data();
    let means: Vec<Vec<f64>> = members
        .iter()
        .map(|m| {
            let mut mu = vec![0.0; e];
            for &cell in m {
                for k in 0..e {
                    mu[k] += x[cell * e + k];
                }
            }
            let n = m.len() as f64;
            mu.iter_mut().for_each(|v| *v /= n);
            mu
        })
        .collect();

    // Gradient with respect to each mean, pushed to members at the end.
    let mut dmean = vec![vec![0.0; e]; c];
    let g = grad.data_mut();

    let mut var = 0.0;
    for (ci, m) in members.iter().enumerate() {
        let n = m.len() as f64;
        let mu = &means[ci];
        let mut sum = 0.0;
        for &cell in m {
            let xi = &x[cell * e..(cell + 1) * e];
            let d: f64 = (0..e).map(|k| (mu[k] - xi[k]).abs()).sum();
            let h = (d - w.delta_v).max(0.0);
            sum += h * h;
            if h > 0.0 {
                // d/dx of h² through the direct term; the mean term goes to dmean.
                let coef = w.alpha / c as f64 / n * 2.0 * h;
                for k in 0..e {
                    let s = sign(mu[k] - xi[k]);
                    g[cell * e + k] -= coef * s;
                    dmean[ci][k] += coef * s;
                }
            }
        }
        var += sum / n;
    }
    var /= c as f64;

    let mut dist = 0.0;
    if c > 1 {
        let norm = (c * (c - 1)) as f64;
        for a in 0..c {
            for b in 0..c {
                if a == b {
                    continue;
                }
                let d: f64 = (0..e).map(|k| (means[a][k] - means[b][k]).abs()).sum();
                let h = (2.0 * w.delta_d - d).max(0.0);
                dist += h * h;
                if h > 0.0 {
                    let coef = w.beta / norm * 2.0 * h;
                    for k in 0..e {
                        let s = sign(means[a][k] - means[b][k]);
                        dmean[a][k] -= coef * s;
                        dmean[b][k] += coef * s;
                    }
                }
            }
        }
        dist /= norm;
    }

    for (ci, m) in members.iter().enumerate() {
        let n = m.len() as f64;
        for &cell in m {
            for k in 0..e {
                g[cell * e + k] += dmean[ci][k] / n;
            }
        }
    }
    Ok(DiscriminativeLoss {
        var,
        dist,
        total: LossGrad {
            loss: w.alpha * var + w.beta * dist,
            grad,
        },
    })
}

/// Cross-entropy of direction logits against the normalized two-hot labels,
/// averaged over labeled cells only.
pub fn direction_loss(logits: &Grid2D, labels: &Grid2D) -> Result<LossGrad> {
    if !logits.same_shape(labels) {
        return Err(Error::Shape(format!(
            "direction logits {:?} vs labels {:?}",
            logits.shape(),
            labels.shape()
        )));
    }
    let ch = labels.channels();
    let mut target = labels.clone();
    let mut mask = Vec::with_capacity(labels.cells());
    for cell in target.data_mut().chunks_exact_mut(ch.max(1)) {
        let s: f64 = cell.iter().sum();
        if s > 0.0 {
            cell.iter_mut().for_each(|v| *v /= s);
            mask.push(true);
        } else {
            // Masked cells are skipped, but keep the target a valid distribution.
            cell.iter_mut().for_each(|v| *v = 1.0 / ch as f64);
            mask.push(false);
        }
    }
    softmax_cross_entropy(logits, &target, Some(&mask))
}

/// Semantic cross-entropy over every cell.
pub fn segmentation_loss(logits: &Grid2D, semantic: &Grid2D) -> Result<LossGrad> {
    softmax_cross_entropy(logits, semantic, None)
}

/// One greedy connection step: `c + Δ·d` for a unit direction `d`.
pub fn step_node(c: [f64; 2], d: [f64; 2], delta_step: f64) -> Result<[f64; 2]> {
    let n = d[0].hypot(d[1]);
    if (n - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("direction has norm {n}, expected 1")));
    }
    Ok([c[0] + delta_step * d[0], c[1] + delta_step * d[1]])
}
