//! Sequential CNN feature extractor with hand-written forward and backward
//! passes. The layer vocabulary (conv / relu / 2x2 average pool, with an
//! implicit global average pool at the end) is small on purpose: it covers
//! the bundled test backbone and anything loadable from a weights archive,
//! and every gradient is checked against finite differences in the tests.

use half::f16;
use ndarray::{Array1, Array2, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture description, serialized into checkpoints and weight
/// archives so models rebuild without consulting the registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    AvgPool2,
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    /// [out, in, k, k]
    pub weight: Array4<f32>,
    pub bias: Array1<f32>,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv2d),
    Relu,
    AvgPool2,
}

/// Conv stack ending in an implicit global average pool, so the feature
/// width equals the final channel count.
#[derive(Debug, Clone)]
pub struct SequentialCnn {
    pub layers: Vec<Layer>,
    pub input_channels: usize,
    pub feature_dim: usize,
}

/// Activations captured during a training forward pass: the input of every
/// layer, then the input of the global average pool.
pub struct Trace {
    pub layer_inputs: Vec<Array4<f32>>,
    pub features: Array2<f32>,
}

fn quantize_f16(xs: &mut [f32]) {
    for x in xs {
        *x = f16::from_f32(*x).to_f32();
    }
}

/// Valid output-column range for input width `w`: `ix = ox*stride + off`
/// must land in [0, w).
fn col_range(ow: usize, w: usize, stride: usize, off: isize) -> (usize, usize) {
    let lo = if off >= 0 {
        0
    } else {
        ((-off) as usize).div_ceil(stride)
    };
    let max_ix = w as isize - 1 - off;
    if max_ix < 0 {
        return (0, 0);
    }
    let hi = (max_ix as usize / stride + 1).min(ow);
    (lo.min(hi), hi)
}

fn conv_output_side(h: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = h + 2 * pad;
    if padded < kernel {
        return Err(Error::ShapeMismatch(format!(
            "conv kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

fn conv_forward(conv: &Conv2d, x: &Array4<f32>) -> Result<Array4<f32>> {
    let (n, ci, h, w) = x.dim();
    let (co, ci_w, kh, kw) = conv.weight.dim();
    if ci != ci_w {
        return Err(Error::ShapeMismatch(format!(
            "conv expects {ci_w} input channels, got {ci}"
        )));
    }
    let oh = conv_output_side(h, kh, conv.stride, conv.pad)?;
    let ow = conv_output_side(w, kw, conv.stride, conv.pad)?;
    let mut y = Array4::<f32>::zeros((n, co, oh, ow));

    let xs = x.as_slice().expect("standard layout");
    let ws = conv.weight.as_slice().expect("standard layout");
    let bias = conv.bias.as_slice().expect("standard layout");
    let ys = y.as_slice_mut().expect("standard layout");
    let stride = conv.stride;
    let pad = conv.pad as isize;

    for b in 0..n {
        for o in 0..co {
            let y_plane = &mut ys[(b * co + o) * oh * ow..(b * co + o + 1) * oh * ow];
            y_plane.fill(bias[o]);
            for i in 0..ci {
                let x_plane = &xs[(b * ci + i) * h * w..(b * ci + i + 1) * h * w];
                for kr in 0..kh {
                    for kc in 0..kw {
                        let wv = ws[((o * ci_w + i) * kh + kr) * kw + kc];
                        let off = kc as isize - pad;
                        let (ox_lo, ox_hi) = col_range(ow, w, stride, off);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * stride) as isize + kr as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let x_row = &x_plane[iy as usize * w..(iy as usize + 1) * w];
                            let y_row = &mut y_plane[oy * ow..(oy + 1) * ow];
                            if stride == 1 {
                                let ix_lo = (ox_lo as isize + off) as usize;
                                for (yv, &xv) in y_row[ox_lo..ox_hi]
                                    .iter_mut()
                                    .zip(&x_row[ix_lo..ix_lo + (ox_hi - ox_lo)])
                                {
                                    *yv += wv * xv;
                                }
                            } else {
                                let ix_lo = (ox_lo * stride) as isize + off;
                                for (yv, &xv) in y_row[ox_lo..ox_hi]
                                    .iter_mut()
                                    .zip(x_row[ix_lo as usize..].iter().step_by(stride))
                                {
                                    *yv += wv * xv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

/// (d_weight, d_bias, d_input) of one conv layer.
type ConvGrads = (Array4<f32>, Array1<f32>, Option<Array4<f32>>);

/// Backward for a conv layer. `d_input` is skipped for the first layer of a
/// network.
fn conv_backward(
    conv: &Conv2d,
    x: &Array4<f32>,
    dy: &Array4<f32>,
    need_dx: bool,
) -> Result<ConvGrads> {
    let (n, ci, h, w) = x.dim();
    let (co, _, kh, kw) = conv.weight.dim();
    let (_, _, oh, ow) = dy.dim();
    let stride = conv.stride;
    let pad = conv.pad as isize;

    let mut dw = Array4::<f32>::zeros(conv.weight.dim());
    let mut db = Array1::<f32>::zeros(co);
    let mut dx = need_dx.then(|| Array4::<f32>::zeros(x.dim()));

    let xs = x.as_slice().expect("standard layout");
    let ws = conv.weight.as_slice().expect("standard layout");
    let dys = dy.as_slice().expect("standard layout");
    let dws = dw.as_slice_mut().expect("standard layout");
    let dxs = dx.as_mut().map(|d| d.as_slice_mut().expect("standard layout"));

    for b in 0..n {
        for o in 0..co {
            let dy_plane = &dys[(b * co + o) * oh * ow..(b * co + o + 1) * oh * ow];
            db[o] += dy_plane.iter().sum::<f32>();
        }
    }

    // d_weight: correlate each dy plane with the input.
    for b in 0..n {
        for o in 0..co {
            let dy_plane = &dys[(b * co + o) * oh * ow..(b * co + o + 1) * oh * ow];
            for i in 0..ci {
                let x_plane = &xs[(b * ci + i) * h * w..(b * ci + i + 1) * h * w];
                for kr in 0..kh {
                    for kc in 0..kw {
                        let off = kc as isize - pad;
                        let (ox_lo, ox_hi) = col_range(ow, w, stride, off);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let mut acc = 0.0f32;
                        for oy in 0..oh {
                            let iy = (oy * stride) as isize + kr as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let x_row = &x_plane[iy as usize * w..(iy as usize + 1) * w];
                            let dy_row = &dy_plane[oy * ow..(oy + 1) * ow];
                            if stride == 1 {
                                let ix_lo = (ox_lo as isize + off) as usize;
                                for (&g, &xv) in dy_row[ox_lo..ox_hi]
                                    .iter()
                                    .zip(&x_row[ix_lo..ix_lo + (ox_hi - ox_lo)])
                                {
                                    acc += g * xv;
                                }
                            } else {
                                let ix_lo = (ox_lo * stride) as isize + off;
                                for (&g, &xv) in dy_row[ox_lo..ox_hi]
                                    .iter()
                                    .zip(x_row[ix_lo as usize..].iter().step_by(stride))
                                {
                                    acc += g * xv;
                                }
                            }
                        }
                        dws[((o * ci + i) * kh + kr) * kw + kc] += acc;
                    }
                }
            }
        }
    }

    // d_input: scatter each dy plane back through the kernel.
    if let Some(dxs) = dxs {
        for b in 0..n {
            for o in 0..co {
                let dy_plane = &dys[(b * co + o) * oh * ow..(b * co + o + 1) * oh * ow];
                for i in 0..ci {
                    let dx_plane =
                        &mut dxs[(b * ci + i) * h * w..(b * ci + i + 1) * h * w];
                    for kr in 0..kh {
                        for kc in 0..kw {
                            let wv = ws[((o * ci + i) * kh + kr) * kw + kc];
                            let off = kc as isize - pad;
                            let (ox_lo, ox_hi) = col_range(ow, w, stride, off);
                            if ox_lo >= ox_hi {
                                continue;
                            }
                            for oy in 0..oh {
                                let iy = (oy * stride) as isize + kr as isize - pad;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let dx_row =
                                    &mut dx_plane[iy as usize * w..(iy as usize + 1) * w];
                                let dy_row = &dy_plane[oy * ow..(oy + 1) * ow];
                                if stride == 1 {
                                    let ix_lo = (ox_lo as isize + off) as usize;
                                    for (dxv, &g) in dx_row
                                        [ix_lo..ix_lo + (ox_hi - ox_lo)]
                                        .iter_mut()
                                        .zip(&dy_row[ox_lo..ox_hi])
                                    {
                                        *dxv += wv * g;
                                    }
                                } else {
                                    let ix_lo = (ox_lo * stride) as isize + off;
                                    for (dxv, &g) in dx_row[ix_lo as usize..]
                                        .iter_mut()
                                        .step_by(stride)
                                        .zip(&dy_row[ox_lo..ox_hi])
                                    {
                                        *dxv += wv * g;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    Ok((dw, db, dx))
}

fn relu_forward(x: &Array4<f32>) -> Array4<f32> {
    x.mapv(|v| v.max(0.0))
}

fn relu_backward(x: &Array4<f32>, dy: &Array4<f32>) -> Array4<f32> {
    let mut dx = dy.clone();
    for (d, &v) in dx.iter_mut().zip(x.iter()) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

fn avgpool2_forward(x: &Array4<f32>) -> Array4<f32> {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Array4::<f32>::zeros((n, c, oh, ow));
    let xs = x.as_slice().expect("standard layout");
    let ys = y.as_slice_mut().expect("standard layout");
    for plane in 0..n * c {
        let x_plane = &xs[plane * h * w..(plane + 1) * h * w];
        let y_plane = &mut ys[plane * oh * ow..(plane + 1) * oh * ow];
        for oy in 0..oh {
            let row0 = &x_plane[2 * oy * w..2 * oy * w + 2 * ow];
            let row1 = &x_plane[(2 * oy + 1) * w..(2 * oy + 1) * w + 2 * ow];
            let out_row = &mut y_plane[oy * ow..(oy + 1) * ow];
            for ((yv, a), b) in out_row
                .iter_mut()
                .zip(row0.chunks_exact(2))
                .zip(row1.chunks_exact(2))
            {
                *yv = (a[0] + a[1] + b[0] + b[1]) * 0.25;
            }
        }
    }
    y
}

fn avgpool2_backward(x_dim: (usize, usize, usize, usize), dy: &Array4<f32>) -> Array4<f32> {
    let (n, c, h, w) = x_dim;
    let (_, _, oh, ow) = dy.dim();
    let mut dx = Array4::<f32>::zeros(x_dim);
    let dys = dy.as_slice().expect("standard layout");
    let dxs = dx.as_slice_mut().expect("standard layout");
    for plane in 0..n * c {
        let dy_plane = &dys[plane * oh * ow..(plane + 1) * oh * ow];
        let dx_plane = &mut dxs[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            let dy_row = &dy_plane[oy * ow..(oy + 1) * ow];
            let (top, rest) = dx_plane[2 * oy * w..].split_at_mut(w);
            let bottom = &mut rest[..w];
            for (ox, &g) in dy_row.iter().enumerate() {
                let g = g * 0.25;
                top[2 * ox] += g;
                top[2 * ox + 1] += g;
                bottom[2 * ox] += g;
                bottom[2 * ox + 1] += g;
            }
        }
    }
    dx
}

fn gap_forward(x: &Array4<f32>) -> Array2<f32> {
    let (n, c, h, w) = x.dim();
    let scale = 1.0 / (h * w) as f32;
    let mut y = Array2::<f32>::zeros((n, c));
    for b in 0..n {
        for ch in 0..c {
            let mut acc = 0.0f32;
            for row in x.slice(ndarray::s![b, ch, .., ..]).rows() {
                acc += row.sum();
            }
            y[(b, ch)] = acc * scale;
        }
    }
    y
}

fn gap_backward(x_dim: (usize, usize, usize, usize), dfeat: &Array2<f32>) -> Array4<f32> {
    let (n, c, h, w) = x_dim;
    let scale = 1.0 / (h * w) as f32;
    let mut dx = Array4::<f32>::zeros(x_dim);
    for b in 0..n {
        for ch in 0..c {
            let g = dfeat[(b, ch)] * scale;
            dx.slice_mut(ndarray::s![b, ch, .., ..]).fill(g);
        }
    }
    dx
}

impl SequentialCnn {
    /// Build a zero-parameter network from specs, validating the channel
    /// chain starting at `input_channels`.
    pub fn from_specs(specs: &[LayerSpec], input_channels: usize) -> Result<SequentialCnn> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut channels = input_channels;
        for spec in specs {
            match *spec {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    pad,
                } => {
                    if in_channels != channels {
                        return Err(Error::ShapeMismatch(format!(
                            "conv declares {in_channels} input channels, chain provides {channels}"
                        )));
                    }
                    if kernel == 0 || stride == 0 || out_channels == 0 {
                        return Err(Error::InvalidArgument(
                            "conv kernel/stride/out_channels must be positive".into(),
                        ));
                    }
                    layers.push(Layer::Conv(Conv2d {
                        weight: Array4::zeros((out_channels, in_channels, kernel, kernel)),
                        bias: Array1::zeros(out_channels),
                        stride,
                        pad,
                    }));
                    channels = out_channels;
                }
                LayerSpec::Relu => layers.push(Layer::Relu),
                LayerSpec::AvgPool2 => layers.push(Layer::AvgPool2),
            }
        }
        Ok(SequentialCnn {
            layers,
            input_channels,
            feature_dim: channels,
        })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|layer| match layer {
                Layer::Conv(c) => {
                    let (o, i, k, _) = c.weight.dim();
                    LayerSpec::Conv {
                        in_channels: i,
                        out_channels: o,
                        kernel: k,
                        stride: c.stride,
                        pad: c.pad,
                    }
                }
                Layer::Relu => LayerSpec::Relu,
                Layer::AvgPool2 => LayerSpec::AvgPool2,
            })
            .collect()
    }

    /// He-uniform init for conv weights, zero biases.
    pub fn init_he_uniform<R: Rng>(&mut self, rng: &mut R) {
        for layer in &mut self.layers {
            if let Layer::Conv(c) = layer {
                let (_, i, kh, kw) = c.weight.dim();
                let fan_in = (i * kh * kw) as f64;
                let limit = (6.0 / fan_in).sqrt();
                for w in c.weight.iter_mut() {
                    *w = rng.random_range(-limit..=limit) as f32;
                }
                c.bias.fill(0.0);
            }
        }
    }

    /// Features only (inference path).
    pub fn forward(&self, x: &Array4<f32>, quantize: bool) -> Result<Array2<f32>> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = match layer {
                Layer::Conv(c) => conv_forward(c, &cur)?,
                Layer::Relu => relu_forward(&cur),
                Layer::AvgPool2 => avgpool2_forward(&cur),
            };
            if quantize {
                quantize_f16(cur.as_slice_mut().expect("standard layout"));
            }
        }
        Ok(gap_forward(&cur))
    }

    /// Features plus every layer input, for the backward pass.
    pub fn forward_trace(
        &self,
        x: &Array4<f32>,
        quantize: bool,
    ) -> Result<(Vec<Array4<f32>>, Array2<f32>)> {
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut cur = x.clone();
        for layer in &self.layers {
            let next = match layer {
                Layer::Conv(c) => conv_forward(c, &cur)?,
                Layer::Relu => relu_forward(&cur),
                Layer::AvgPool2 => avgpool2_forward(&cur),
            };
            inputs.push(cur);
            cur = next;
            if quantize {
                quantize_f16(cur.as_slice_mut().expect("standard layout"));
            }
        }
        let features = gap_forward(&cur);
        inputs.push(cur);
        Ok((inputs, features))
    }

    /// Parameter gradients in traversal order (conv weight, conv bias per
    /// conv layer), given the trace and the feature gradient.
    pub fn backward(
        &self,
        layer_inputs: &[Array4<f32>],
        dfeat: &Array2<f32>,
        quantize: bool,
    ) -> Result<Vec<Vec<f32>>> {
        let gap_input = layer_inputs
            .last()
            .ok_or_else(|| Error::ShapeMismatch("empty trace".into()))?;
        let mut dcur = gap_backward(gap_input.dim(), dfeat);

        // Collect (layer index -> grads) walking backwards, then emit in
        // forward order.
        let mut conv_grads: Vec<(usize, Vec<f32>, Vec<f32>)> = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let x = &layer_inputs[idx];
            match layer {
                Layer::Conv(c) => {
                    let need_dx = idx > 0;
                    let (dw, db, dx) = conv_backward(c, x, &dcur, need_dx)?;
                    conv_grads.push((idx, dw.into_raw_vec_and_offset().0, db.to_vec()));
                    if let Some(mut dx) = dx {
                        if quantize {
                            quantize_f16(dx.as_slice_mut().expect("standard layout"));
                        }
                        dcur = dx;
                    } else {
                        break;
                    }
                }
                Layer::Relu => {
                    dcur = relu_backward(x, &dcur);
                }
                Layer::AvgPool2 => {
                    dcur = avgpool2_backward(x.dim(), &dcur);
                }
            }
        }
        conv_grads.sort_by_key(|(idx, _, _)| *idx);
        let mut out = Vec::with_capacity(conv_grads.len() * 2);
        for (_, dw, db) in conv_grads {
            out.push(dw);
            out.push(db);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array4};
    use rand::SeedableRng;

    #[test]
    fn conv_hand_computed_example() {
        // 1x1x3x3 input, one 2x2 kernel, stride 1, no padding.
        let x = Array4::from_shape_vec(
            (1, 1, 3, 3),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        )
        .unwrap();
        let conv = Conv2d {
            weight: Array4::from_shape_vec((1, 1, 2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            bias: arr1(&[0.5]),
            stride: 1,
            pad: 0,
        };
        let y = conv_forward(&conv, &x).unwrap();
        // y[oy][ox] = x[oy][ox] + x[oy+1][ox+1] + 0.5
        assert_eq!(y.dim(), (1, 1, 2, 2));
        assert_eq!(y[(0, 0, 0, 0)], 1.0 + 5.0 + 0.5);
        assert_eq!(y[(0, 0, 0, 1)], 2.0 + 6.0 + 0.5);
        assert_eq!(y[(0, 0, 1, 0)], 4.0 + 8.0 + 0.5);
        assert_eq!(y[(0, 0, 1, 1)], 5.0 + 9.0 + 0.5);
    }

    #[test]
    fn conv_padding_and_stride_geometry() {
        let x = Array4::<f32>::ones((1, 2, 8, 8));
        let conv = Conv2d {
            weight: Array4::ones((3, 2, 3, 3)),
            bias: Array1::zeros(3),
            stride: 2,
            pad: 1,
        };
        let y = conv_forward(&conv, &x).unwrap();
        assert_eq!(y.dim(), (1, 3, 4, 4));
        // Interior output cell sees the full 3x3x2 window of ones.
        assert_eq!(y[(0, 0, 1, 1)], 18.0);
        // Corner cell (0,0) covers a 2x2 window per channel.
        assert_eq!(y[(0, 0, 0, 0)], 8.0);
    }

    #[test]
    fn pool_and_gap_are_means() {
        let x = Array4::from_shape_vec(
            (1, 1, 2, 2),
            vec![1.0, 2.0, 3.0, 4.0],
        )
        .unwrap();
        let y = avgpool2_forward(&x);
        assert_eq!(y[(0, 0, 0, 0)], 2.5);
        let f = gap_forward(&x);
        assert_eq!(f[(0, 0)], 2.5);
    }

    fn tiny_net() -> SequentialCnn {
        let specs = vec![
            LayerSpec::Conv {
                in_channels: 2,
                out_channels: 3,
                kernel: 3,
                stride: 1,
                pad: 1,
            },
            LayerSpec::Relu,
            LayerSpec::AvgPool2,
            LayerSpec::Conv {
                in_channels: 3,
                out_channels: 4,
                kernel: 3,
                stride: 2,
                pad: 1,
            },
            LayerSpec::Relu,
        ];
        let mut net = SequentialCnn::from_specs(&specs, 2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        net.init_he_uniform(&mut rng);
        net
    }

    /// Scalar objective for the gradcheck: sum of features weighted by a
    /// fixed coefficient pattern.
    fn objective(net: &SequentialCnn, x: &Array4<f32>) -> f64 {
        let feats = net.forward(x, false).unwrap();
        feats
            .indexed_iter()
            .map(|((b, c), &v)| ((1 + b + 2 * c) as f64) * f64::from(v))
            .sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut net = tiny_net();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let x = Array4::from_shape_fn((2, 2, 8, 8), |_| rng.random_range(-1.0..1.0f32));

        let (inputs, feats) = net.forward_trace(&x, false).unwrap();
        let dfeat = Array2::from_shape_fn(feats.dim(), |(b, c)| (1 + b + 2 * c) as f32);
        let analytic = net.backward(&inputs, &dfeat, false).unwrap();

        let eps = 1e-3f32;
        let mut checked = 0;
        for (tensor_idx, grads) in analytic.iter().enumerate() {
            // Probe a few scattered entries of every tensor.
            let probes: Vec<usize> = (0..grads.len()).step_by(grads.len().div_ceil(7)).collect();
            for &flat in &probes {
                let orig = {
                    let mut slices = net.conv_param_slices_mut();
                    let v = slices[tensor_idx][flat];
                    slices[tensor_idx][flat] = v + eps;
                    v
                };
                let plus = objective(&net, &x);
                {
                    let mut slices = net.conv_param_slices_mut();
                    slices[tensor_idx][flat] = orig - eps;
                }
                let minus = objective(&net, &x);
                {
                    let mut slices = net.conv_param_slices_mut();
                    slices[tensor_idx][flat] = orig;
                }
                let numeric = (plus - minus) / (2.0 * f64::from(eps));
                let a = f64::from(grads[flat]);
                let denom = numeric.abs().max(a.abs()).max(1e-3);
                assert!(
                    ((a - numeric) / denom).abs() < 2e-2,
                    "tensor {tensor_idx} flat {flat}: analytic {a} vs numeric {numeric}"
                );
                checked += 1;
            }
        }
        assert!(checked >= 20);
    }

    #[test]
    fn spec_roundtrip() {
        let net = tiny_net();
        let specs = net.specs();
        let rebuilt = SequentialCnn::from_specs(&specs, 2).unwrap();
        assert_eq!(rebuilt.specs(), specs);
        assert_eq!(rebuilt.feature_dim, net.feature_dim);
    }

    #[test]
    fn mismatched_channel_chain_rejected() {
        let specs = vec![LayerSpec::Conv {
            in_channels: 5,
            out_channels: 3,
            kernel: 3,
            stride: 1,
            pad: 1,
        }];
        assert!(SequentialCnn::from_specs(&specs, 3).is_err());
    }

    impl SequentialCnn {
        /// Test helper: mutable flat views of conv parameters in traversal
        /// order (weight, bias per conv layer).
        fn conv_param_slices_mut(&mut self) -> Vec<&mut [f32]> {
            let mut out = Vec::new();
            for layer in &mut self.layers {
                if let Layer::Conv(c) = layer {
                    out.push(c.weight.as_slice_mut().unwrap());
                    out.push(c.bias.as_slice_mut().unwrap());
                }
            }
            out
        }
    }
}
