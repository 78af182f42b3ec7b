//! BEV decoder: a stack of stride-1 convolutions with a shared trunk feeding
//! segmentation, embedding and direction heads.
//!
//! Each convolution is a dense layer applied to unrolled `k × k` patches, so
//! it reuses the batched dense forward/backward passes.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Activation, DenseLayer, DenseNetParams, ForwardTrace, Grid2D, NetGradients};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// Odd square kernel side.
    pub kernel: usize,
    /// Single dense layer from `kernel²·in` to `out`.
    pub net: DenseNetParams,
}

impl ConvLayer {
    pub fn new(kernel: usize, net: DenseNetParams) -> Result<Self> {
        if kernel % 2 == 0 || net.layers().len() != 1 || net.input_size() % (kernel * kernel) != 0 {
            return Err(Error::Shape(format!("invalid {kernel}x{kernel} conv layer")));
        }
        Ok(Self { kernel, net })
    }

    pub fn init(kernel: usize, inputs: usize, outputs: usize, act: Activation, rng: &mut impl Rng) -> Result<Self> {
        let layer = DenseLayer::init(kernel * kernel * inputs, outputs, act, rng);
        Self::new(kernel, DenseNetParams::new(vec![layer])?)
    }

    pub fn in_channels(&self) -> usize {
        self.net.input_size() / (self.kernel * self.kernel)
    }

    pub fn out_channels(&self) -> usize {
        self.net.output_size()
    }
}

/// Output channel counts of the three heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadSizes {
    pub seg: usize,
    pub emb: usize,
    pub dir: usize,
}

impl HeadSizes {
    pub fn total(&self) -> usize {
        self.seg + self.emb + self.dir
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub trunk: Vec<ConvLayer>,
    /// 1×1 convolution producing all head channels at once.
    pub head: ConvLayer,
    pub heads: HeadSizes,
}

impl DecoderParams {
    pub fn new(trunk: Vec<ConvLayer>, head: ConvLayer, heads: HeadSizes) -> Result<Self> {
        let mut ch = trunk.first().map_or(head.in_channels(), ConvLayer::in_channels);
        for l in trunk.iter().chain(std::iter::once(&head)) {
            if l.in_channels() != ch {
                return Err(Error::Shape(format!("conv expects {} channels, gets {ch}", l.in_channels())));
            }
            ch = l.out_channels();
        }
        if head.out_channels() != heads.total() {
            return Err(Error::Shape(format!(
                "head produces {} channels, heads need {}",
                head.out_channels(),
                heads.total()
            )));
        }
        Ok(Self { trunk, head, heads })
    }

    /// `layers` 3×3 relu convolutions of `width` channels, then the 1×1 heads.
    pub fn init(inputs: usize, width: usize, layers: usize, heads: HeadSizes, rng: &mut impl Rng) -> Result<Self> {
        let mut trunk = Vec::with_capacity(layers);
        let mut ch = inputs;
        for _ in 0..layers {
            trunk.push(ConvLayer::init(3, ch, width, Activation::Relu, rng)?);
            ch = width;
        }
        let head = ConvLayer::init(1, ch, heads.total(), Activation::Identity, rng)?;
        Self::new(trunk, head, heads)
    }

    pub fn in_channels(&self) -> usize {
        self.trunk.first().unwrap_or(&self.head).in_channels()
    }

    pub fn layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.trunk.iter().chain(std::iter::once(&self.head))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut ConvLayer> {
        self.trunk.iter_mut().chain(std::iter::once(&mut self.head))
    }
}

/// Unrolls `k × k` zero-padded patches: one row per cell, ordered
/// `(dr, dc, channel)`.
pub fn im2col(g: &Grid2D, k: usize) -> Vec<f64> {
    let (h, w, ch) = g.shape();
    if k == 1 {
        return g.data().to_vec();
    }
    let rad = (k / 2) as isize;
    let row_len = k * k * ch;
    let mut out = vec![0.0; h * w * row_len];
    for r in 0..h {
        for c in 0..w {
            let dst = &mut out[(r * w + c) * row_len..(r * w + c + 1) * row_len];
            for dr in -rad..=rad {
                let rr = r as isize + dr;
                if rr < 0 || rr >= h as isize {
                    continue;
                }
                for dc in -rad..=rad {
                    let cc = c as isize + dc;
                    if cc < 0 || cc >= w as isize {
                        continue;
                    }
                    let p = ((dr + rad) as usize * k + (dc + rad) as usize) * ch;
                    dst[p..p + ch].copy_from_slice(g.cell(rr as usize, cc as usize));
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: sums patch gradients back onto cells.
pub fn col2im(cols: &[f64], h: usize, w: usize, ch: usize, k: usize) -> Grid2D {
    if k == 1 {
        return Grid2D::from_vec(h, w, ch, cols.to_vec()).expect("shape matches");
    }
    let rad = (k / 2) as isize;
    let row_len = k * k * ch;
    let mut g = Grid2D::zeros(h, w, ch);
    for r in 0..h {
        for c in 0..w {
            let src = &cols[(r * w + c) * row_len..(r * w + c + 1) * row_len];
            for dr in -rad..=rad {
                let rr = r as isize + dr;
                if rr < 0 || rr >= h as isize {
                    continue;
                }
                for dc in -rad..=rad {
                    let cc = c as isize + dc;
                    if cc < 0 || cc >= w as isize {
                        continue;
                    }
                    let p = ((dr + rad) as usize * k + (dc + rad) as usize) * ch;
                    for (d, s) in g.cell_mut(rr as usize, cc as usize).iter_mut().zip(&src[p..p + ch]) {
                        *d += s;
                    }
                }
            }
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderOutput {
    pub seg: Grid2D,
    pub emb: Grid2D,
    pub dir: Grid2D,
}

#[derive(Debug, Clone)]
pub struct DecoderTrace {
    shape: (usize, usize),
    /// Input channel count of each layer, trunk then head.
    channels: Vec<usize>,
    traces: Vec<ForwardTrace>,
}

pub fn decode_forward(features: &Grid2D, params: &DecoderParams) -> Result<(DecoderOutput, DecoderTrace)> {
    if features.channels() != params.in_channels() {
        return Err(Error::Shape(format!(
            "decoder expects {} feature channels, got {}",
            params.in_channels(),
            features.channels()
        )));
    }
    let (h, w) = (features.height(), features.width());
    let mut x = features.clone();
    let mut traces = Vec::new();
    let mut channels = Vec::new();
    for layer in params.layers() {
        channels.push(x.channels());
        let t = layer.net.forward_batch(&im2col(&x, layer.kernel), h * w)?;
        x = Grid2D::from_vec(h, w, layer.out_channels(), t.output().to_vec())?;
        traces.push(t);
    }
    let (seg, rest) = x.split_channels(params.heads.seg);
    let (emb, dir) = rest.split_channels(params.heads.emb);
    Ok((
        DecoderOutput { seg, emb, dir },
        DecoderTrace {
            shape: (h, w),
            channels,
            traces,
        },
    ))
}

pub fn decode_bev(features: &Grid2D, params: &DecoderParams) -> Result<DecoderOutput> {
    Ok(decode_forward(features, params)?.0)
}

/// Accumulates parameter gradients (one entry per layer, trunk then head)
/// and returns the gradient with respect to the input features.
pub fn decode_backward(
    params: &DecoderParams,
    trace: &DecoderTrace,
    dout: &DecoderOutput,
    grads: &mut [NetGradients],
) -> Result<Grid2D> {
    let (h, w) = trace.shape;
    let mut d = Grid2D::concat_channels(&[&dout.seg, &dout.emb, &dout.dir])?;
    let layers: Vec<&ConvLayer> = params.layers().collect();
    if grads.len() != layers.len() {
        return Err(Error::Shape("decoder gradient buffer length".into()));
    }
    for i in (0..layers.len()).rev() {
        let l = layers[i];
        let dcols = l.net.backward_batch(&trace.traces[i], d.data(), &mut grads[i])?;
        d = col2im(&dcols, h, w, trace.channels[i], l.kernel);
    }
    Ok(d)
}
