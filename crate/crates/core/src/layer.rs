//! Layer kinds, shape inference and the per-layer forward/backward kernels.
//!
//! Image-like activations use `[channels, height, width]` layout. A fully
//! connected layer accepts any input whose element count matches `inputs`, so
//! no explicit flatten layer is needed between convolutional and dense parts.

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// No padding; output shrinks by `kernel - 1`.
    #[default]
    Valid,
    /// Zero padding of `(kernel - 1) / 2` on every side. Requires an odd kernel.
    Same,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    FullyConnected {
        inputs: usize,
        outputs: usize,
    },
    #[serde(rename = "convolution2d")]
    Convolution2D {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: Padding,
    },
    #[serde(rename = "max_pool2d")]
    MaxPool2D {
        window: usize,
    },
    Relu,
    Softmax,
}

fn one() -> usize {
    1
}

fn image_dims(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::Shape(format!(
            "{what} expects a [channels, height, width] input, got {shape:?}"
        ))),
    }
}

impl LayerSpec {
    /// Number of `(weights, biases)` owned by the layer.
    pub fn param_counts(&self) -> (usize, usize) {
        match *self {
            LayerSpec::FullyConnected { inputs, outputs } => (inputs * outputs, outputs),
            LayerSpec::Convolution2D {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (out_channels * in_channels * kernel * kernel, out_channels),
            _ => (0, 0),
        }
    }

    pub fn has_params(&self) -> bool {
        self.param_counts() != (0, 0)
    }

    fn pad(&self) -> usize {
        match *self {
            LayerSpec::Convolution2D {
                kernel,
                padding: Padding::Same,
                ..
            } => (kernel - 1) / 2,
            _ => 0,
        }
    }

    /// Output shape for the given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let numel: usize = input.iter().product();
        match *self {
            LayerSpec::FullyConnected { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return Err(Error::InvalidNetwork(
                        "fully connected extents must be positive".into(),
                    ));
                }
                if numel != inputs {
                    return Err(Error::Shape(format!(
                        "fully connected layer expects {inputs} inputs, got shape {input:?}"
                    )));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Convolution2D {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err(Error::InvalidNetwork(
                        "convolution extents must be positive".into(),
                    ));
                }
                if padding == Padding::Same && kernel % 2 == 0 {
                    return Err(Error::InvalidNetwork(
                        "same padding needs an odd kernel".into(),
                    ));
                }
                let (c, h, w) = image_dims(input, "convolution")?;
                if c != in_channels {
                    return Err(Error::Shape(format!(
                        "convolution expects {in_channels} channels, got {c}"
                    )));
                }
                let p = self.pad();
                if h + 2 * p < kernel || w + 2 * p < kernel {
                    return Err(Error::Shape(format!(
                        "kernel {kernel} larger than padded input {h}x{w}"
                    )));
                }
                Ok(vec![
                    out_channels,
                    (h + 2 * p - kernel) / stride + 1,
                    (w + 2 * p - kernel) / stride + 1,
                ])
            }
            LayerSpec::MaxPool2D { window } => {
                let (c, h, w) = image_dims(input, "max pooling")?;
                if window == 0 || h < window || w < window {
                    return Err(Error::Shape(format!(
                        "pool window {window} does not fit input {h}x{w}"
                    )));
                }
                Ok(vec![c, h / window, w / window])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Softmax => Ok(vec![numel]),
        }
    }

    /// Evaluates the layer. `in_shape` is the validated input shape.
    pub(crate) fn forward<T: Scalar>(
        &self,
        in_shape: &[usize],
        out_shape: &[usize],
        x: &[T],
        weights: &[T],
        biases: &[T],
    ) -> Vec<T> {
        match *self {
            LayerSpec::FullyConnected { inputs, outputs } => (0..outputs)
                .map(|o| {
                    let row = &weights[o * inputs..(o + 1) * inputs];
                    row.iter()
                        .zip(x)
                        .fold(biases[o], |acc, (&w, &xi)| acc + w * xi)
                })
                .collect(),
            LayerSpec::Convolution2D {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                let (_, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let pad = self.pad();
                let mut y = vec![T::zero(); out_channels * oh * ow];
                for co in 0..out_channels {
                    for r in 0..oh {
                        for c in 0..ow {
                            let mut acc = biases[co];
                            for ci in 0..in_channels {
                                for kr in 0..kernel {
                                    let Some(ir) = (r * stride + kr).checked_sub(pad) else {
                                        continue;
                                    };
                                    if ir >= h {
                                        continue;
                                    }
                                    for kc in 0..kernel {
                                        let Some(ic) = (c * stride + kc).checked_sub(pad) else {
                                            continue;
                                        };
                                        if ic >= w {
                                            continue;
                                        }
                                        let wi = ((co * in_channels + ci) * kernel + kr) * kernel + kc;
                                        acc += weights[wi] * x[(ci * h + ir) * w + ic];
                                    }
                                }
                            }
                            y[(co * oh + r) * ow + c] = acc;
                        }
                    }
                }
                y
            }
            LayerSpec::MaxPool2D { window } => {
                let (ch, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let mut y = Vec::with_capacity(ch * oh * ow);
                for c in 0..ch {
                    for r in 0..oh {
                        for col in 0..ow {
                            let (ir, ic) = argmax_window(x, c, h, w, r, col, window);
                            y.push(x[(c * h + ir) * w + ic]);
                        }
                    }
                }
                y
            }
            LayerSpec::Relu => x.iter().map(|&v| v.max(T::zero())).collect(),
            LayerSpec::Softmax => softmax(x),
        }
    }

    /// Back-propagates `gy` (gradient w.r.t. the layer output) through the
    /// layer. Parameter gradients are accumulated into `gw`/`gb`; the input
    /// gradient is returned when `need_input_grad` is set.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward<T: Scalar>(
        &self,
        in_shape: &[usize],
        out_shape: &[usize],
        x: &[T],
        y: &[T],
        gy: &[T],
        weights: &[T],
        gw: &mut [T],
        gb: &mut [T],
        need_input_grad: bool,
    ) -> Option<Vec<T>> {
        match *self {
            LayerSpec::FullyConnected { inputs, outputs } => {
                for o in 0..outputs {
                    let g = gy[o];
                    gb[o] += g;
                    let grow = &mut gw[o * inputs..(o + 1) * inputs];
                    for (gwi, &xi) in grow.iter_mut().zip(x) {
                        *gwi += g * xi;
                    }
                }
                need_input_grad.then(|| {
                    let mut gx = vec![T::zero(); inputs];
                    for o in 0..outputs {
                        let g = gy[o];
                        let row = &weights[o * inputs..(o + 1) * inputs];
                        for (gxi, &w) in gx.iter_mut().zip(row) {
                            *gxi += g * w;
                        }
                    }
                    gx
                })
            }
            LayerSpec::Convolution2D {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                let (_, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let pad = self.pad();
                let mut gx = need_input_grad.then(|| vec![T::zero(); x.len()]);
                for co in 0..out_channels {
                    for r in 0..oh {
                        for c in 0..ow {
                            let g = gy[(co * oh + r) * ow + c];
                            gb[co] += g;
                            for ci in 0..in_channels {
                                for kr in 0..kernel {
                                    let Some(ir) = (r * stride + kr).checked_sub(pad) else {
                                        continue;
                                    };
                                    if ir >= h {
                                        continue;
                                    }
                                    for kc in 0..kernel {
                                        let Some(ic) = (c * stride + kc).checked_sub(pad) else {
                                            continue;
                                        };
                                        if ic >= w {
                                            continue;
                                        }
                                        let wi = ((co * in_channels + ci) * kernel + kr) * kernel + kc;
                                        let xi = (ci * h + ir) * w + ic;
                                        gw[wi] += g * x[xi];
                                        if let Some(gx) = gx.as_mut() {
                                            gx[xi] += g * weights[wi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                gx
            }
            LayerSpec::MaxPool2D { window } => need_input_grad.then(|| {
                let (ch, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let mut gx = vec![T::zero(); x.len()];
                for c in 0..ch {
                    for r in 0..oh {
                        for col in 0..ow {
                            let (ir, ic) = argmax_window(x, c, h, w, r, col, window);
                            gx[(c * h + ir) * w + ic] += gy[(c * oh + r) * ow + col];
                        }
                    }
                }
                gx
            }),
            LayerSpec::Relu => need_input_grad.then(|| {
                x.iter()
                    .zip(gy)
                    .map(|(&xi, &g)| if xi > T::zero() { g } else { T::zero() })
                    .collect()
            }),
            LayerSpec::Softmax => need_input_grad.then(|| softmax_backward(y, gy)),
        }
    }
}

/// First position (row-major within the window) holding the window maximum.
fn argmax_window<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    r: usize,
    col: usize,
    window: usize,
) -> (usize, usize) {
    let mut best = (r * window, col * window);
    let mut best_v = x[(c * h + best.0) * w + best.1];
    for i in 0..window {
        for j in 0..window {
            let (ir, ic) = (r * window + i, col * window + j);
            let v = x[(c * h + ir) * w + ic];
            if v > best_v {
                best_v = v;
                best = (ir, ic);
            }
        }
    }
    best
}

/// Max-shifted softmax.
pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `ln softmax(z)[k]`, computed without forming the posterior.
pub fn log_softmax_at<T: Scalar>(z: &[T], k: usize) -> T {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = z.iter().map(|&v| (v - m).exp()).sum();
    z[k] - m - s.ln()
}

/// Vector-Jacobian product of softmax: `p ⊙ (g − ⟨g, p⟩)`.
pub(crate) fn softmax_backward<T: Scalar>(p: &[T], g: &[T]) -> Vec<T> {
    let inner = p.iter().zip(g).fold(T::zero(), |acc, (&pi, &gi)| acc + pi * gi);
    p.iter().zip(g).map(|(&pi, &gi)| pi * (gi - inner)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_pool_picks_window_maximum() {
        let pool = LayerSpec::MaxPool2D { window: 2 };
        let shape = [1, 2, 2];
        let out = pool.output_shape(&shape).unwrap();
        assert_eq!(out, vec![1, 1, 1]);
        let y = pool.forward::<f64>(&shape, &out, &[1.0, 2.0, 3.0, 4.0], &[], &[]);
        assert_eq!(y, vec![4.0]);
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let pool = LayerSpec::MaxPool2D { window: 2 };
        let shape = [1, 2, 2];
        let out = [1, 1, 1];
        let x = [1.0, 5.0, 3.0, 4.0];
        let gx = pool
            .backward::<f64>(&shape, &out, &x, &[5.0], &[2.0], &[], &mut [], &mut [], true)
            .unwrap();
        assert_eq!(gx, vec![0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let p = softmax(&[1000.0_f64, 1000.0, -1000.0]);
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((log_softmax_at(&[1000.0_f64, -1000.0], 1) + 2000.0).abs() < 1e-9);
    }

    #[test]
    fn conv_shapes() {
        let conv = LayerSpec::Convolution2D {
            in_channels: 3,
            out_channels: 4,
            kernel: 3,
            stride: 1,
            padding: Padding::Valid,
        };
        assert_eq!(conv.output_shape(&[3, 8, 8]).unwrap(), vec![4, 6, 6]);
        let same = LayerSpec::Convolution2D {
            in_channels: 3,
            out_channels: 4,
            kernel: 3,
            stride: 1,
            padding: Padding::Same,
        };
        assert_eq!(same.output_shape(&[3, 8, 8]).unwrap(), vec![4, 8, 8]);
        assert!(conv.output_shape(&[2, 8, 8]).is_err());
        assert!(conv.output_shape(&[3, 2, 8]).is_err());
        assert_eq!(conv.param_counts(), (4 * 3 * 9, 4));
    }

    #[test]
    fn layer_spec_serde_tags() {
        let l: LayerSpec =
            serde_json::from_str(r#"{"kind":"convolution2d","in_channels":3,"out_channels":8,"kernel":5}"#)
                .unwrap();
        assert_eq!(
            l,
            LayerSpec::Convolution2D {
                in_channels: 3,
                out_channels: 8,
                kernel: 5,
                stride: 1,
                padding: Padding::Valid
            }
        );
        let r: LayerSpec = serde_json::from_str(r#"{"kind":"relu"}"#).unwrap();
        assert_eq!(r, LayerSpec::Relu);
    }
}
