//! Learned perspective → camera top-down transform, shared across channels.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Activation, DenseNetParams, ForwardTrace, Grid2D, NetGradients};

/// One network per camera mapping `H_pv·W_pv` positions to `H_c·W_c` positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewTransformParams {
    pub nets: Vec<DenseNetParams>,
    pub persp: (usize, usize),
    pub topdown: (usize, usize),
}

impl ViewTransformParams {
    pub fn new(nets: Vec<DenseNetParams>, persp: (usize, usize), topdown: (usize, usize)) -> Result<Self> {
        for (i, n) in nets.iter().enumerate() {
            if n.input_size() != persp.0 * persp.1 || n.output_size() != topdown.0 * topdown.1 {
                return Err(Error::Shape(format!(
                    "view network {i} maps {} → {}, expected {} → {}",
                    n.input_size(),
                    n.output_size(),
                    persp.0 * persp.1,
                    topdown.0 * topdown.1
                )));
            }
        }
        Ok(Self { nets, persp, topdown })
    }

    /// Two dense layers with a relu between them, per camera.
    pub fn init(cameras: usize, persp: (usize, usize), topdown: (usize, usize), hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        let nets = (0..cameras)
            .map(|_| {
                DenseNetParams::init(
                    &[persp.0 * persp.1, hidden, topdown.0 * topdown.1],
                    &[Activation::Relu, Activation::Identity],
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(nets, persp, topdown)
    }
}

/// Channel planes of a channel-last grid, one row per channel.
fn planes(g: &Grid2D) -> Vec<f64> {
    let (cells, ch) = (g.cells(), g.channels());
    let mut out = vec![0.0; cells * ch];
    for (i, cell) in g.data().chunks_exact(ch).enumerate() {
        for (k, &v) in cell.iter().enumerate() {
            out[k * cells + i] = v;
        }
    }
    out
}

fn from_planes(rows: usize, cols: usize, ch: usize, planes: &[f64]) -> Grid2D {
    let cells = rows * cols;
    Grid2D::from_fn(rows, cols, ch, |r, c, k| planes[k * cells + r * cols + c])
}

/// Forward pass keeping the trace for [`view_backward`].
pub fn view_forward(persp: &Grid2D, net: &DenseNetParams, topdown: (usize, usize)) -> Result<(Grid2D, ForwardTrace)> {
    if persp.height() * persp.width() != net.input_size() || topdown.0 * topdown.1 != net.output_size() {
        return Err(Error::Shape(format!(
            "view transform expects {} input positions and {} outputs, got {}x{} → {:?}",
            net.input_size(),
            net.output_size(),
            persp.height(),
            persp.width(),
            topdown
        )));
    }
    let trace = net.forward_batch(&planes(persp), persp.channels())?;
    let out = from_planes(topdown.0, topdown.1, persp.channels(), trace.output());
    Ok((out, trace))
}

/// Accumulates parameter gradients given the gradient of the top-down output.
pub fn view_backward(net: &DenseNetParams, trace: &ForwardTrace, dout: &Grid2D, grads: &mut NetGradients) -> Result<()> {
    net.backward_batch(trace, &planes(dout), grads)?;
    Ok(())
}

pub fn neural_view_transform(persp: &Grid2D, params: &ViewTransformParams, camera: usize) -> Result<Grid2D> {
    let net = params
        .nets
        .get(camera)
        .ok_or_else(|| Error::InvalidArgument(format!("no view network for camera {camera}")))?;
    Ok(view_forward(persp, net, params.topdown)?.0)
}
