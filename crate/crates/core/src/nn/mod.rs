//! Minimal sequential convnet with explicit backprop.
//!
//! Parameters live in one flat `Vec<f64>` with per-layer sub-ranges, which
//! keeps the optimizer, checkpoints, and finite-difference checks trivial.
//! Training uses [`ConvNet::forward_trace`] + [`ConvNet::backward`]; plain
//! [`ConvNet::forward`] skips activation caching and dropout entirely.

mod adam;
mod ops;

pub use adam::Adam;

use crate::error::{Error, Result};
use crate::seeding;
use ndarray::{Array2, Array4, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::ops::Range;

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    Flatten,
    Linear {
        outputs: usize,
    },
    /// Inverted dropout; active only when a noise stream is supplied.
    Dropout {
        p: f64,
    },
}

#[derive(Clone, Debug)]
enum Resolved {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        range: Range<usize>,
    },
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    Flatten {
        dims: (usize, usize, usize),
    },
    Linear {
        inputs: usize,
        outputs: usize,
        range: Range<usize>,
    },
    Dropout {
        p: f64,
    },
}

#[derive(Clone, Debug)]
enum Act {
    Spatial(Array4<f64>),
    Flat(Array2<f64>),
}

/// Activations recorded during a training-mode forward pass.
pub struct Trace {
    inputs: Vec<Act>,
    masks: Vec<Option<Array2<f64>>>,
    output: Array2<f64>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

#[derive(Clone, Debug)]
pub struct ConvNet {
    input_shape: (usize, usize, usize),
    output_dim: usize,
    layers: Vec<Resolved>,
    params: Vec<f64>,
}

impl ConvNet {
    /// Builds the network, validating layer geometry against `input_shape`
    /// (channels, height, width), and He-initializes all weights from
    /// substreams of `seed`.
    pub fn new(input_shape: (usize, usize, usize), specs: &[LayerSpec], seed: u64) -> Result<Self> {
        enum Dim {
            Spatial(usize, usize, usize),
            Flat(usize),
        }
        let (c0, h0, w0) = input_shape;
        if c0 == 0 || h0 == 0 || w0 == 0 {
            return Err(Error::domain("network input shape has a zero dimension"));
        }
        let mut dim = Dim::Spatial(c0, h0, w0);
        let mut layers = Vec::with_capacity(specs.len());
        let mut offset = 0usize;
        for (i, spec) in specs.iter().enumerate() {
            let bad = |msg: &str| Error::domain(format!("layer {i}: {msg}"));
            match (spec, &dim) {
                (
                    &LayerSpec::Conv {
                        out_channels,
                        kernel,
                        stride,
                        pad,
                    },
                    &Dim::Spatial(c, h, w),
                ) => {
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(bad("conv needs nonzero channels, kernel, and stride"));
                    }
                    let oh = ops::conv_out_side(h, kernel, stride, pad)
                        .filter(|&s| s > 0)
                        .ok_or_else(|| bad("conv window does not fit the input"))?;
                    let ow = ops::conv_out_side(w, kernel, stride, pad)
                        .filter(|&s| s > 0)
                        .ok_or_else(|| bad("conv window does not fit the input"))?;
                    let n = out_channels * (c * kernel * kernel + 1);
                    layers.push(Resolved::Conv {
                        in_ch: c,
                        out_ch: out_channels,
                        kernel,
                        stride,
                        pad,
                        range: offset..offset + n,
                    });
                    offset += n;
                    dim = Dim::Spatial(out_channels, oh, ow);
                }
                (LayerSpec::Conv { .. }, Dim::Flat(_)) => {
                    return Err(bad("conv after flatten"));
                }
                (LayerSpec::Relu, _) => layers.push(Resolved::Relu),
                (&LayerSpec::MaxPool { kernel, stride }, &Dim::Spatial(c, h, w)) => {
                    if kernel == 0 || stride == 0 {
                        return Err(bad("pool needs nonzero kernel and stride"));
                    }
                    let oh = ops::conv_out_side(h, kernel, stride, 0)
                        .filter(|&s| s > 0)
                        .ok_or_else(|| bad("pool window does not fit the input"))?;
                    let ow = ops::conv_out_side(w, kernel, stride, 0)
                        .filter(|&s| s > 0)
                        .ok_or_else(|| bad("pool window does not fit the input"))?;
                    layers.push(Resolved::MaxPool { kernel, stride });
                    dim = Dim::Spatial(c, oh, ow);
                }
                (LayerSpec::MaxPool { .. }, Dim::Flat(_)) => {
                    return Err(bad("pool after flatten"));
                }
                (LayerSpec::Flatten, &Dim::Spatial(c, h, w)) => {
                    layers.push(Resolved::Flatten { dims: (c, h, w) });
                    dim = Dim::Flat(c * h * w);
                }
                (LayerSpec::Flatten, Dim::Flat(_)) => {
                    return Err(bad("flatten applied twice"));
                }
                (&LayerSpec::Linear { outputs }, &Dim::Flat(inputs)) => {
                    if outputs == 0 {
                        return Err(bad("linear needs nonzero outputs"));
                    }
                    let n = outputs * (inputs + 1);
                    layers.push(Resolved::Linear {
                        inputs,
                        outputs,
                        range: offset..offset + n,
                    });
                    offset += n;
                    dim = Dim::Flat(outputs);
                }
                (LayerSpec::Linear { .. }, Dim::Spatial(..)) => {
                    return Err(bad("linear before flatten"));
                }
                (&LayerSpec::Dropout { p }, Dim::Flat(_)) => {
                    if !(0.0..1.0).contains(&p) {
                        return Err(bad("dropout rate must be in [0, 1)"));
                    }
                    layers.push(Resolved::Dropout { p });
                }
                (LayerSpec::Dropout { .. }, Dim::Spatial(..)) => {
                    return Err(bad("dropout only supported on flat activations"));
                }
            }
        }
        let output_dim = match dim {
            Dim::Flat(n) => n,
            Dim::Spatial(..) => {
                return Err(Error::domain("network must end with a flat activation"));
            }
        };

        let mut params = vec![0.0; offset];
        for (i, layer) in layers.iter().enumerate() {
            let (range, fan_in, n_weights) = match layer {
                Resolved::Conv {
                    in_ch,
                    out_ch,
                    kernel,
                    range,
                    ..
                } => {
                    let fan = in_ch * kernel * kernel;
                    (range.clone(), fan, out_ch * fan)
                }
                Resolved::Linear {
                    inputs,
                    outputs,
                    range,
                } => (range.clone(), *inputs, inputs * outputs),
                _ => continue,
            };
            let mut rng = seeding::stream(seed, "he-init", &[i as u64]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                .expect("std is finite and positive");
            for slot in &mut params[range.start..range.start + n_weights] {
                *slot = normal.sample(&mut rng);
            }
            // biases stay zero
        }

        Ok(Self {
            input_shape,
            output_dim,
            layers,
            params,
        })
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Flat-parameter range owned by layer `idx`, if it has weights.
    pub fn layer_param_range(&self, idx: usize) -> Option<Range<usize>> {
        match self.layers.get(idx)? {
            Resolved::Conv { range, .. } | Resolved::Linear { range, .. } => Some(range.clone()),
            _ => None,
        }
    }

    fn check_input(&self, x: &Array4<f64>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if (c, h, w) != self.input_shape {
            return Err(Error::shape(
                format!("{:?}", self.input_shape),
                format!("({c}, {h}, {w})"),
            ));
        }
        Ok(())
    }

    fn conv_views(
        &self,
        range: &Range<usize>,
        out_ch: usize,
        fan: usize,
    ) -> (ArrayView2<'_, f64>, &[f64]) {
        let slice = &self.params[range.clone()];
        let w = ArrayView2::from_shape((out_ch, fan), &slice[..out_ch * fan])
            .expect("range sized at build");
        (w, &slice[out_ch * fan..])
    }

    /// Inference pass: no activation caching, dropout disabled.
    pub fn forward(&self, x: &Array4<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut act = Act::Spatial(x.clone());
        for layer in &self.layers {
            act = self.apply(layer, act, None, &mut None)?;
        }
        match act {
            Act::Flat(y) => Ok(y),
            Act::Spatial(..) => unreachable!("validated at build"),
        }
    }

    /// Training pass: records every layer input so [`ConvNet::backward`] can
    /// run without re-deriving activations. Pass a noise stream to enable
    /// dropout; its masks are recorded too.
    pub fn forward_trace(
        &self,
        x: &Array4<f64>,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Trace> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut masks = vec![None; self.layers.len()];
        let mut act = Act::Spatial(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            inputs.push(act.clone());
            let mut mask_out = None;
            act = self.apply(layer, act, dropout.as_deref_mut(), &mut mask_out)?;
            masks[i] = mask_out;
        }
        let output = match act {
            Act::Flat(y) => y,
            Act::Spatial(..) => unreachable!("validated at build"),
        };
        Ok(Trace {
            inputs,
            masks,
            output,
        })
    }

    fn apply(
        &self,
        layer: &Resolved,
        act: Act,
        dropout: Option<&mut ChaCha8Rng>,
        mask_out: &mut Option<Array2<f64>>,
    ) -> Result<Act> {
        Ok(match (layer, act) {
            (
                Resolved::Conv {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    pad,
                    range,
                },
                Act::Spatial(x),
            ) => {
                let (w, b) = self.conv_views(range, *out_ch, in_ch * kernel * kernel);
                Act::Spatial(ops::conv_forward(&x.view(), &w, b, *kernel, *stride, *pad))
            }
            (Resolved::Relu, Act::Spatial(x)) => Act::Spatial(x.mapv(|v| v.max(0.0))),
            (Resolved::Relu, Act::Flat(x)) => Act::Flat(x.mapv(|v| v.max(0.0))),
            (Resolved::MaxPool { kernel, stride }, Act::Spatial(x)) => {
                Act::Spatial(ops::maxpool_forward(&x.view(), *kernel, *stride))
            }
            (Resolved::Flatten { dims }, Act::Spatial(x)) => {
                let n = x.dim().0;
                let flat = x
                    .into_shape_with_order((n, dims.0 * dims.1 * dims.2))
                    .expect("standard layout");
                Act::Flat(flat)
            }
            (
                Resolved::Linear {
                    inputs,
                    outputs,
                    range,
                },
                Act::Flat(x),
            ) => {
                let (w, b) = self.conv_views(range, *outputs, *inputs);
                let mut y = x.dot(&w.t());
                for mut row in y.rows_mut() {
                    for (v, bv) in row.iter_mut().zip(b) {
                        *v += bv;
                    }
                }
                Act::Flat(y)
            }
            (Resolved::Dropout { p }, Act::Flat(x)) => match dropout {
                Some(rng) => {
                    let keep = 1.0 - p;
                    let mask =
                        Array2::from_shape_fn(x.dim(), |_| {
                            if rng.random::<f64>() < *p {
                                0.0
                            } else {
                                1.0 / keep
                            }
                        });
                    let y = &x * &mask;
                    *mask_out = Some(mask);
                    Act::Flat(y)
                }
                None => Act::Flat(x),
            },
            _ => unreachable!("layer/activation mismatch is rejected at build"),
        })
    }

    /// Backpropagates `dout` (gradient of the loss w.r.t. the network
    /// output) through a recorded trace. Returns the gradient w.r.t. the
    /// flat parameter vector.
    pub fn backward(&self, trace: &Trace, dout: &Array2<f64>) -> Result<Vec<f64>> {
        if dout.dim() != trace.output.dim() {
            return Err(Error::shape(
                format!("{:?}", trace.output.dim()),
                format!("{:?}", dout.dim()),
            ));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut g = Act::Flat(dout.clone());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.inputs[i];
            g = match (layer, input, g) {
                (
                    Resolved::Conv {
                        in_ch,
                        out_ch,
                        kernel,
                        stride,
                        pad,
                        range,
                    },
                    Act::Spatial(x),
                    Act::Spatial(dy),
                ) => {
                    let (w, _) = self.conv_views(range, *out_ch, in_ch * kernel * kernel);
                    let (dw, db, dx) =
                        ops::conv_backward(&x.view(), &w, &dy.view(), *kernel, *stride, *pad);
                    let dst = &mut grads[range.clone()];
                    for (slot, v) in dst.iter_mut().zip(dw.iter().chain(db.iter())) {
                        *slot += v;
                    }
                    Act::Spatial(dx)
                }
                (Resolved::Relu, Act::Spatial(x), Act::Spatial(dy)) => {
                    let mut dx = dy;
                    dx.zip_mut_with(x, |d, &v| {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    Act::Spatial(dx)
                }
                (Resolved::Relu, Act::Flat(x), Act::Flat(dy)) => {
                    let mut dx = dy;
                    dx.zip_mut_with(x, |d, &v| {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    Act::Flat(dx)
                }
                (Resolved::MaxPool { kernel, stride }, Act::Spatial(x), Act::Spatial(dy)) => {
                    Act::Spatial(ops::maxpool_backward(&x.view(), &dy.view(), *kernel, *stride))
                }
                (Resolved::Flatten { dims }, Act::Spatial(x), Act::Flat(dy)) => {
                    let n = x.dim().0;
                    let dx = dy
                        .into_shape_with_order((n, dims.0, dims.1, dims.2))
                        .expect("standard layout");
                    Act::Spatial(dx)
                }
                (
                    Resolved::Linear {
                        inputs,
                        outputs,
                        range,
                    },
                    Act::Flat(x),
                    Act::Flat(dy),
                ) => {
                    let (w, _) = self.conv_views(range, *outputs, *inputs);
                    let dw = dy.t().dot(x);
                    let dst = &mut grads[range.clone()];
                    for (slot, v) in dst.iter_mut().zip(dw.iter()) {
                        *slot += v;
                    }
                    let bias_dst = &mut dst[inputs * outputs..];
                    for row in dy.rows() {
                        for (slot, v) in bias_dst.iter_mut().zip(row) {
                            *slot += v;
                        }
                    }
                    Act::Flat(dy.dot(&w))
                }
                (Resolved::Dropout { .. }, _, Act::Flat(dy)) => match &trace.masks[i] {
                    Some(mask) => Act::Flat(&dy * mask),
                    None => Act::Flat(dy),
                },
                _ => unreachable!("trace mirrors the forward walk"),
            };
        }
        Ok(grads)
    }
}
