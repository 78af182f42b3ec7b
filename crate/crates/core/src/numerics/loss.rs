use crate::error::{Error, Result};
use crate::numerics::dense::softmax_in_place;
use crate::numerics::Grid2D;

/// Scalar loss with its gradient with respect to the input grid.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Grid2D,
}

/// Per-cell softmax cross-entropy averaged over the unmasked cells.
///
/// `mask[i] == false` removes cell `i` from both the loss and the gradient.
/// With every cell masked the loss is 0 and the gradient is zero.
pub fn softmax_cross_entropy(logits: &Grid2D, target: &Grid2D, mask: Option<&[bool]>) -> Result<LossGrad> {
    if !logits.same_shape(target) {
        return Err(Error::Shape(format!(
            "logits {:?} vs target {:?}",
            logits.shape(),
            target.shape()
        )));
    }
    let cells = logits.cells();
    if let Some(m) = mask {
        if m.len() != cells {
            return Err(Error::Shape(format!("mask has {} cells, grid {}", m.len(), cells)));
        }
    }
    let ch = logits.channels();
    let active = |i: usize| mask.is_none_or(|m| m[i]);
    let count = (0..cells).filter(|&i| active(i)).count();
    let mut grad = Grid2D::zeros(logits.height(), logits.width(), ch);
    if count == 0 {
        return Ok(LossGrad { loss: 0.0, grad });
    }
    let inv = 1.0 / count as f64;
    let mut loss = 0.0;
    let mut p = vec![0.0; ch];
    for i in 0..cells {
        if !active(i) {
            continue;
        }
        let z = &logits.data()[i * ch..(i + 1) * ch];
        let t = &target.data()[i * ch..(i + 1) * ch];
        let tsum: f64 = t.iter().sum();
        if t.iter().any(|&v| v < 0.0) || (tsum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "target at cell {i} is not a distribution (sum {tsum})"
            )));
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for k in 0..ch {
            if t[k] > 0.0 {
                loss -= t[k] * (z[k] - lse);
            }
        }
        p.copy_from_slice(z);
        softmax_in_place(&mut p);
        let g = &mut grad.data_mut()[i * ch..(i + 1) * ch];
        for k in 0..ch {
            g[k] = (p[k] - t[k]) * inv;
        }
    }
    Ok(LossGrad {
        loss: loss * inv,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_class_uniform_logits_give_ln2() {
        let z = Grid2D::from_vec(1, 1, 2, vec![0.0, 0.0]).unwrap();
        let t = Grid2D::from_vec(1, 1, 2, vec![1.0, 0.0]).unwrap();
        let out = softmax_cross_entropy(&z, &t, None).unwrap();
        assert!((out.loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(out.grad.data(), &[-0.5, 0.5]);
    }

    #[test]
    fn large_margin_drives_loss_to_zero() {
        let z = Grid2D::from_vec(1, 1, 3, vec![60.0, 0.0, 0.0]).unwrap();
        let t = Grid2D::from_vec(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        let out = softmax_cross_entropy(&z, &t, None).unwrap();
        assert!(out.loss >= 0.0 && out.loss < 1e-20);
    }

    #[test]
    fn fully_masked_is_zero() {
        let z = Grid2D::filled(2, 2, 3, 1.0);
        let t = Grid2D::zeros(2, 2, 3);
        let out = softmax_cross_entropy(&z, &t, Some(&[false; 4])).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_four_class_matches_scalar_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let z: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut t: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
            for cell in t.chunks_mut(4) {
                let s: f64 = cell.iter().sum();
                cell.iter_mut().for_each(|v| *v /= s);
            }
            let out = softmax_cross_entropy(
                &Grid2D::from_vec(1, 2, 4, z.clone()).unwrap(),
                &Grid2D::from_vec(1, 2, 4, t.clone()).unwrap(),
                None,
            )
            .unwrap();
            let mut want = 0.0;
            for c in 0..2 {
                let denom: f64 = (0..4).map(|k| z[c * 4 + k].exp()).sum();
                for k in 0..4 {
                    want -= t[c * 4 + k] * (z[c * 4 + k].exp() / denom).ln();
                }
            }
            assert!((out.loss - want / 2.0).abs() < 1e-12);
            assert!(out.loss >= 0.0);
        }
    }

    #[test]
    fn rejects_non_distribution_target() {
        let z = Grid2D::zeros(1, 1, 2);
        let t = Grid2D::from_vec(1, 1, 2, vec![0.7, 0.7]).unwrap();
        assert!(softmax_cross_entropy(&z, &t, None).is_err());
    }
}
