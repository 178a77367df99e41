use serde::{Deserialize, Serialize};

use super::linalg::{gemm, Window};
use crate::tensor::Tensor;

/// One stage of a sequential network.
///
/// Shapes below are per sample; every layer also carries a leading batch
/// dimension at run time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    /// `[inputs] -> [outputs]`, weight `[outputs, inputs]`.
    Dense { inputs: usize, outputs: usize },
    /// Same-padded, stride-1 convolution `[C, H, W] -> [C', H, W]`,
    /// weight `[C', C, k, k]`. The kernel must be odd.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    /// Stride-2 transposed convolution `[C, H, W] -> [C', 2H, 2W]`,
    /// weight `[C, C', k, k]`. Exact adjoint of a stride-2 convolution with
    /// padding `k / 2` on the `2H × 2W` map. The kernel must be odd.
    ConvTranspose2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Relu,
    Sigmoid,
    /// Row-wise softmax over a flat `[n]` sample.
    Softmax,
    /// Non-overlapping 2×2 max pooling; H and W must be even.
    MaxPool2x2,
    Flatten,
    /// `[C·H·W] -> [C, H, W]`.
    Unflatten {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::ConvTranspose2d { .. } => "conv_transpose2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Softmax => "softmax",
            LayerSpec::MaxPool2x2 => "maxpool2x2",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Unflatten { .. } => "unflatten",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. } | LayerSpec::ConvTranspose2d { .. }
        )
    }

    /// Weight and bias shapes for parameterised layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => Some((vec![outputs, inputs], vec![outputs])),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            )),
            LayerSpec::ConvTranspose2d {
                in_channels,
                out_channels,
                kernel,
            } => Some((
                vec![in_channels, out_channels, kernel, kernel],
                vec![out_channels],
            )),
            _ => None,
        }
    }

    /// Effective fan-in and fan-out used by weight initialisation.
    pub(crate) fn fans(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Dense { inputs, outputs } => (inputs, outputs),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => (in_channels * kernel * kernel, out_channels * kernel * kernel),
            // Each output pixel of a stride-2 transposed conv sees about a
            // quarter of the kernel taps.
            LayerSpec::ConvTranspose2d {
                in_channels,
                out_channels,
                kernel,
            } => (
                (in_channels * kernel * kernel / 4).max(1),
                (out_channels * kernel * kernel / 4).max(1),
            ),
            _ => (0, 0),
        }
    }

    /// Per-sample output shape for a given per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        let expect_rank = |r: usize| {
            if input.len() == r {
                Ok(())
            } else {
                Err(format!(
                    "{} expects a rank-{r} sample, got {input:?}",
                    self.name()
                ))
            }
        };
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return Err("dense dims must be positive".into());
                }
                if input != [inputs] {
                    return Err(format!("dense expects [{inputs}], got {input:?}"));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => {
                expect_rank(3)?;
                check_conv(in_channels, out_channels, kernel)?;
                if input[0] != in_channels {
                    return Err(format!(
                        "conv2d expects {in_channels} input channels, got {}",
                        input[0]
                    ));
                }
                Ok(vec![out_channels, input[1], input[2]])
            }
            LayerSpec::ConvTranspose2d {
                in_channels,
                out_channels,
                kernel,
            } => {
                expect_rank(3)?;
                check_conv(in_channels, out_channels, kernel)?;
                if input[0] != in_channels {
                    return Err(format!(
                        "conv_transpose2d expects {in_channels} input channels, got {}",
                        input[0]
                    ));
                }
                Ok(vec![out_channels, 2 * input[1], 2 * input[2]])
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input.to_vec()),
            LayerSpec::Softmax => {
                expect_rank(1)?;
                Ok(input.to_vec())
            }
            LayerSpec::MaxPool2x2 => {
                expect_rank(3)?;
                if input[1] % 2 != 0 || input[2] % 2 != 0 {
                    return Err(format!("maxpool2x2 needs even spatial dims, got {input:?}"));
                }
                Ok(vec![input[0], input[1] / 2, input[2] / 2])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Unflatten {
                channels,
                height,
                width,
            } => {
                let n = channels * height * width;
                if n == 0 || input != [n] {
                    return Err(format!("unflatten expects [{n}], got {input:?}"));
                }
                Ok(vec![channels, height, width])
            }
        }
    }
}

fn check_conv(cin: usize, cout: usize, kernel: usize) -> Result<(), String> {
    if cin == 0 || cout == 0 || kernel == 0 {
        return Err("conv dims must be positive".into());
    }
    if kernel % 2 == 0 {
        return Err(format!("conv kernel must be odd, got {kernel}"));
    }
    Ok(())
}

/// Weight and bias of one parameterised layer (or their gradients).
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Params {
    pub fn zeros_like(&self) -> Params {
        Params {
            weight: Tensor::zeros(self.weight.shape().to_vec()),
            bias: Tensor::zeros(self.bias.shape().to_vec()),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.weight.all_finite() && self.bias.all_finite()
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weight.data().iter().chain(self.bias.data())
    }
}

fn conv_window(channels: usize, h: usize, w: usize, kernel: usize, stride: usize, out: (usize, usize)) -> Window {
    Window {
        channels,
        height: h,
        width: w,
        kernel,
        stride,
        pad: kernel / 2,
        out_h: out.0,
        out_w: out.1,
    }
}

fn with_batch(batch: usize, sample: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(sample.len() + 1);
    s.push(batch);
    s.extend_from_slice(sample);
    s
}

/// Applies one layer to a batch whose sample shape has already been validated.
pub(crate) fn forward(spec: &LayerSpec, params: Option<&Params>, input: &Tensor) -> Tensor {
    let n = input.batch();
    let in_shape = input.sample_shape();
    let out_sample = spec
        .output_shape(in_shape)
        .expect("layer input shape validated by the network");
    let mut out = Tensor::zeros(with_batch(n, &out_sample));
    match *spec {
        LayerSpec::Dense { inputs, outputs } => {
            let p = params.expect("dense params");
            gemm(false, true, n, outputs, inputs, input.data(), p.weight.data(), 0.0, out.data_mut());
            let bias = p.bias.data();
            for row in out.data_mut().chunks_exact_mut(outputs) {
                for (v, b) in row.iter_mut().zip(bias) {
                    *v += b;
                }
            }
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
        } => {
            let p = params.expect("conv params");
            let (h, w) = (in_shape[1], in_shape[2]);
            let win = conv_window(in_channels, h, w, kernel, 1, (h, w));
            let mut cols = vec![0.0; win.col_rows() * win.col_cols()];
            let out_len = out_channels * h * w;
            for s in 0..n {
                win.im2col(input.sample(s), &mut cols);
                let dst = &mut out.data_mut()[s * out_len..(s + 1) * out_len];
                gemm(false, false, out_channels, h * w, win.col_rows(), p.weight.data(), &cols, 0.0, dst);
                add_channel_bias(dst, p.bias.data(), h * w);
            }
        }
        LayerSpec::ConvTranspose2d {
            in_channels,
            out_channels,
            kernel,
        } => {
            let p = params.expect("conv_transpose params");
            let (h, w) = (in_shape[1], in_shape[2]);
            let win = conv_window(out_channels, 2 * h, 2 * w, kernel, 2, (h, w));
            let mut cols = vec![0.0; win.col_rows() * win.col_cols()];
            let out_len = out_channels * 4 * h * w;
            for s in 0..n {
                gemm(true, false, win.col_rows(), h * w, in_channels, p.weight.data(), input.sample(s), 0.0, &mut cols);
                let dst = &mut out.data_mut()[s * out_len..(s + 1) * out_len];
                win.col2im(&cols, dst);
                add_channel_bias(dst, p.bias.data(), 4 * h * w);
            }
        }
        LayerSpec::Relu => {
            for (o, &x) in out.data_mut().iter_mut().zip(input.data()) {
                *o = x.max(0.0);
            }
        }
        LayerSpec::Sigmoid => {
            for (o, &x) in out.data_mut().iter_mut().zip(input.data()) {
                *o = sigmoid(x);
            }
        }
        LayerSpec::Softmax => {
            let width = in_shape[0];
            for (o, x) in out
                .data_mut()
                .chunks_exact_mut(width)
                .zip(input.data().chunks_exact(width))
            {
                softmax_row(x, o);
            }
        }
        LayerSpec::MaxPool2x2 => {
            let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
            let (oh, ow) = (h / 2, w / 2);
            let src = input.data();
            for (plane_idx, dst) in out.data_mut().chunks_exact_mut(oh * ow).enumerate() {
                let plane = &src[plane_idx * h * w..(plane_idx + 1) * h * w];
                for i in 0..oh {
                    for j in 0..ow {
                        dst[i * ow + j] = plane[pool_argmax(plane, w, i, j)];
                    }
                }
            }
            debug_assert_eq!(out.len(), n * c * oh * ow);
        }
        LayerSpec::Flatten | LayerSpec::Unflatten { .. } => {
            out.data_mut().copy_from_slice(input.data());
        }
    }
    out
}

/// Gradients of one layer given the gradient at its output.
///
/// Returns the gradient at the layer input (when requested) and the
/// parameter gradients (when requested and the layer has parameters).
pub(crate) fn backward(
    spec: &LayerSpec,
    params: Option<&Params>,
    input: &Tensor,
    output: &Tensor,
    grad_out: &Tensor,
    need_input_grad: bool,
    need_param_grad: bool,
) -> (Option<Tensor>, Option<Params>) {
    let n = input.batch();
    let in_shape = input.sample_shape();
    let mut grad_in = need_input_grad.then(|| Tensor::zeros(input.shape().to_vec()));
    let mut grad_params = match (params, need_param_grad) {
        (Some(p), true) => Some(p.zeros_like()),
        _ => None,
    };
    match *spec {
        LayerSpec::Dense { inputs, outputs } => {
            let p = params.expect("dense params");
            if let Some(g) = grad_params.as_mut() {
                gemm(true, false, outputs, inputs, n, grad_out.data(), input.data(), 0.0, g.weight.data_mut());
                let db = g.bias.data_mut();
                for row in grad_out.data().chunks_exact(outputs) {
                    for (b, v) in db.iter_mut().zip(row) {
                        *b += v;
                    }
                }
            }
            if let Some(gi) = grad_in.as_mut() {
                gemm(false, false, n, inputs, outputs, grad_out.data(), p.weight.data(), 0.0, gi.data_mut());
            }
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
        } => {
            let p = params.expect("conv params");
            let (h, w) = (in_shape[1], in_shape[2]);
            let win = conv_window(in_channels, h, w, kernel, 1, (h, w));
            let mut cols = vec![0.0; win.col_rows() * win.col_cols()];
            let out_len = out_channels * h * w;
            let in_len = in_channels * h * w;
            for s in 0..n {
                let dy = &grad_out.data()[s * out_len..(s + 1) * out_len];
                if let Some(g) = grad_params.as_mut() {
                    win.im2col(input.sample(s), &mut cols);
                    gemm(false, true, out_channels, win.col_rows(), h * w, dy, &cols, 1.0, g.weight.data_mut());
                    accumulate_channel_sums(g.bias.data_mut(), dy, h * w);
                }
                if let Some(gi) = grad_in.as_mut() {
                    gemm(true, false, win.col_rows(), h * w, out_channels, p.weight.data(), dy, 0.0, &mut cols);
                    win.col2im(&cols, &mut gi.data_mut()[s * in_len..(s + 1) * in_len]);
                }
            }
        }
        LayerSpec::ConvTranspose2d {
            in_channels,
            out_channels,
            kernel,
        } => {
            let p = params.expect("conv_transpose params");
            let (h, w) = (in_shape[1], in_shape[2]);
            let win = conv_window(out_channels, 2 * h, 2 * w, kernel, 2, (h, w));
            let mut cols = vec![0.0; win.col_rows() * win.col_cols()];
            let out_len = out_channels * 4 * h * w;
            let in_len = in_channels * h * w;
            for s in 0..n {
                let dy = &grad_out.data()[s * out_len..(s + 1) * out_len];
                win.im2col(dy, &mut cols);
                if let Some(g) = grad_params.as_mut() {
                    gemm(false, true, in_channels, win.col_rows(), h * w, input.sample(s), &cols, 1.0, g.weight.data_mut());
                    accumulate_channel_sums(g.bias.data_mut(), dy, 4 * h * w);
                }
                if let Some(gi) = grad_in.as_mut() {
                    let dst = &mut gi.data_mut()[s * in_len..(s + 1) * in_len];
                    gemm(false, false, in_channels, h * w, win.col_rows(), p.weight.data(), &cols, 0.0, dst);
                }
            }
        }
        LayerSpec::Relu => {
            if let Some(gi) = grad_in.as_mut() {
                for ((g, &x), &d) in gi.data_mut().iter_mut().zip(input.data()).zip(grad_out.data()) {
                    *g = if x > 0.0 { d } else { 0.0 };
                }
            }
        }
        LayerSpec::Sigmoid => {
            if let Some(gi) = grad_in.as_mut() {
                for ((g, &y), &d) in gi.data_mut().iter_mut().zip(output.data()).zip(grad_out.data()) {
                    *g = d * y * (1.0 - y);
                }
            }
        }
        LayerSpec::Softmax => {
            if let Some(gi) = grad_in.as_mut() {
                let width = in_shape[0];
                for ((g, y), d) in gi
                    .data_mut()
                    .chunks_exact_mut(width)
                    .zip(output.data().chunks_exact(width))
                    .zip(grad_out.data().chunks_exact(width))
                {
                    let dot: f64 = y.iter().zip(d).map(|(a, b)| a * b).sum();
                    for ((gv, &yv), &dv) in g.iter_mut().zip(y).zip(d) {
                        *gv = yv * (dv - dot);
                    }
                }
            }
        }
        LayerSpec::MaxPool2x2 => {
            if let Some(gi) = grad_in.as_mut() {
                let (h, w) = (in_shape[1], in_shape[2]);
                let (oh, ow) = (h / 2, w / 2);
                let planes = input.len() / (h * w);
                for p_idx in 0..planes {
                    let plane = &input.data()[p_idx * h * w..(p_idx + 1) * h * w];
                    let dy = &grad_out.data()[p_idx * oh * ow..(p_idx + 1) * oh * ow];
                    let dst = &mut gi.data_mut()[p_idx * h * w..(p_idx + 1) * h * w];
                    for i in 0..oh {
                        for j in 0..ow {
                            dst[pool_argmax(plane, w, i, j)] += dy[i * ow + j];
                        }
                    }
                }
            }
        }
        LayerSpec::Flatten | LayerSpec::Unflatten { .. } => {
            if let Some(gi) = grad_in.as_mut() {
                gi.data_mut().copy_from_slice(grad_out.data());
            }
        }
    }
    (grad_in, grad_params)
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_row(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Flat index of the maximum in window `(i, j)`; the first maximum in
/// row-major window order wins ties.
#[inline]
fn pool_argmax(plane: &[f64], width: usize, i: usize, j: usize) -> usize {
    let base = 2 * i * width + 2 * j;
    let mut best = base;
    for idx in [base + 1, base + width, base + width + 1] {
        if plane[idx] > plane[best] {
            best = idx;
        }
    }
    best
}

fn add_channel_bias(dst: &mut [f64], bias: &[f64], plane: usize) {
    for (chunk, &b) in dst.chunks_exact_mut(plane).zip(bias) {
        for v in chunk {
            *v += b;
        }
    }
}

fn accumulate_channel_sums(db: &mut [f64], dy: &[f64], plane: usize) {
    for (b, chunk) in db.iter_mut().zip(dy.chunks_exact(plane)) {
        *b += chunk.iter().sum::<f64>();
    }
}
