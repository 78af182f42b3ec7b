use crate::error::{Error, Result};
use crate::numerics::dense::{DenseNetParams, NetGradients};

/// First/second moment state for Adam over an ordered list of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// Fresh state for tensors of the given sizes with β1=0.9, β2=0.999, ε=1e-8.
    pub fn new(sizes: &[usize]) -> Self {
        Self::with_hyper(sizes, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(sizes: &[usize], beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            step: 0,
            beta1,
            beta2,
            eps,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_net(net: &DenseNetParams) -> Self {
        let sizes: Vec<usize> = net.tensors().iter().map(|t| t.len()).collect();
        Self::new(&sizes)
    }

    /// One bias-corrected Adam update over matching tensor lists.
    ///
    /// Nothing is modified if any gradient is non-finite or a shape differs.
    pub fn update(&mut self, mut params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {} params and {} gradients",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, ((p, g), m)) in params.iter().zip(&grads).zip(&self.first).enumerate() {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::Shape(format!("tensor {i} size differs from optimizer state")));
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient tensor {i} entry {j} is {}",
                    g[j]
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(&grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

pub fn adam_step(
    params: &mut DenseNetParams,
    gradients: &NetGradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    state.update(params.tensors_mut(), gradients.tensors(), lr)
}
