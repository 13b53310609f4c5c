use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ops::{self, ConvCache, Window};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Convolution kernel stored as (c_out, c_in, kd, kh, kw).
    Kernel,
    Bias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    pub params: Vec<Param>,
}

impl ParamStore {
    pub fn add(&mut self, name: String, kind: ParamKind, shape: Vec<usize>, value: Vec<f32>) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.params.push(Param {
            name,
            kind,
            shape,
            value,
        });
        self.params.len() - 1
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads(self.params.iter().map(|p| vec![0.0; p.value.len()]).collect())
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }
}

/// Gradient buffers parallel to a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Vec<f32>>);

impl Grads {
    pub fn scale(&mut self, s: f32) {
        for g in &mut self.0 {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|g| g.iter())
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }
}

/// Builder that allocates parameters while layers are declared.
pub struct LayerBuilder<'a, R: Rng> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut R,
}

impl<R: Rng> LayerBuilder<'_, R> {
    /// Convolution with He-normal kernel initialization.
    pub fn conv(&mut self, name: &str, c_in: usize, c_out: usize, win: Window) -> Layer {
        let fan_in = c_in * win.kernel.iter().product::<usize>();
        let std = (2.0 / fan_in as f64).sqrt();
        self.conv_with_std(name, c_in, c_out, win, std)
    }

    pub fn conv_with_std(&mut self, name: &str, c_in: usize, c_out: usize, win: Window, std: f64) -> Layer {
        let n = c_out * c_in * win.kernel.iter().product::<usize>();
        let normal = Normal::new(0.0, std).expect("valid std");
        let value: Vec<f32> = (0..n).map(|_| normal.sample(self.rng) as f32).collect();
        let shape = vec![c_out, c_in, win.kernel[0], win.kernel[1], win.kernel[2]];
        let w = self.store.add(format!("{name}.weight"), ParamKind::Kernel, shape, value);
        let b = self
            .store
            .add(format!("{name}.bias"), ParamKind::Bias, vec![c_out], vec![0.0; c_out]);
        Layer::Conv {
            c_in,
            c_out,
            win,
            weight: w,
            bias: b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv {
        c_in: usize,
        c_out: usize,
        win: Window,
        weight: usize,
        bias: usize,
    },
    Relu,
    AvgPool(Window),
    MaxPool(Window),
    GlobalAvgPool,
    Seq(Vec<Layer>),
    /// Branches applied to the same input, concatenated along channels.
    Concat(Vec<Layer>),
    /// `relu(x + scale * body(x))`.
    Residual { body: Box<Layer>, scale: f32 },
}

pub enum Cache {
    Conv { input: Option<Tensor>, conv: ConvCache },
    Relu { out: Tensor },
    AvgPool { input_shape: [usize; 4] },
    MaxPool { input_shape: [usize; 4], arg: Vec<usize> },
    Gap { input_shape: [usize; 4] },
    Seq(Vec<Cache>),
    Concat { caches: Vec<Cache>, channels: Vec<usize> },
    Residual { body: Box<Cache>, out: Tensor },
}

impl Layer {
    /// Output shape for a given input shape, or `None` if a window does not fit.
    pub fn output_shape(&self, input: [usize; 4]) -> Option<[usize; 4]> {
        let sp = [input[1], input[2], input[3]];
        match self {
            Layer::Conv { c_in, c_out, win, .. } => {
                if input[0] != *c_in {
                    return None;
                }
                win.output(sp).map(|o| [*c_out, o[0], o[1], o[2]])
            }
            Layer::Relu => Some(input),
            Layer::AvgPool(win) | Layer::MaxPool(win) => win.output(sp).map(|o| [input[0], o[0], o[1], o[2]]),
            Layer::GlobalAvgPool => Some([input[0], 1, 1, 1]),
            Layer::Seq(layers) => layers.iter().try_fold(input, |s, l| l.output_shape(s)),
            Layer::Concat(branches) => {
                let mut channels = 0;
                let mut spatial = None;
                for b in branches {
                    let s = b.output_shape(input)?;
                    if spatial.is_some_and(|sp: [usize; 3]| sp != [s[1], s[2], s[3]]) {
                        return None;
                    }
                    spatial = Some([s[1], s[2], s[3]]);
                    channels += s[0];
                }
                spatial.map(|sp| [channels, sp[0], sp[1], sp[2]])
            }
            Layer::Residual { body, .. } => {
                let s = body.output_shape(input)?;
                (s == input).then_some(s)
            }
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: Tensor, train: bool) -> (Tensor, Option<Cache>) {
        match self {
            Layer::Conv {
                c_out,
                win,
                weight,
                bias,
                ..
            } => {
                let (y, cc) = ops::conv_forward(
                    &x,
                    &ps.params[*weight].value,
                    &ps.params[*bias].value,
                    *c_out,
                    win,
                    train,
                );
                let cache = cc.map(|conv| {
                    let needs_input = *win == Window::valid([1, 1, 1], [1, 1, 1]);
                    Cache::Conv {
                        input: needs_input.then_some(x),
                        conv,
                    }
                });
                (y, cache)
            }
            Layer::Relu => {
                let mut y = x;
                for v in &mut y.data {
                    *v = v.max(0.0);
                }
                let cache = train.then(|| Cache::Relu { out: y.clone() });
                (y, cache)
            }
            Layer::AvgPool(win) => {
                let y = ops::avg_pool_forward(&x, win);
                (y, train.then_some(Cache::AvgPool { input_shape: x.shape }))
            }
            Layer::MaxPool(win) => {
                let (y, arg) = ops::max_pool_forward(&x, win);
                (y, train.then_some(Cache::MaxPool { input_shape: x.shape, arg }))
            }
            Layer::GlobalAvgPool => {
                let p = x.plane() as f32;
                let data = (0..x.channels())
                    .map(|c| x.channel(c).iter().sum::<f32>() / p)
                    .collect();
                let y = Tensor {
                    shape: [x.channels(), 1, 1, 1],
                    data,
                };
                (y, train.then_some(Cache::Gap { input_shape: x.shape }))
            }
            Layer::Seq(layers) => {
                let mut caches = Vec::new();
                let mut cur = x;
                for l in layers {
                    let (y, c) = l.forward(ps, cur, train);
                    cur = y;
                    if let Some(c) = c {
                        caches.push(c);
                    }
                }
                (cur, train.then_some(Cache::Seq(caches)))
            }
            Layer::Concat(branches) => {
                let mut outs = Vec::with_capacity(branches.len());
                let mut caches = Vec::new();
                for b in branches {
                    let (y, c) = b.forward(ps, x.clone(), train);
                    outs.push(y);
                    if let Some(c) = c {
                        caches.push(c);
                    }
                }
                let channels: Vec<usize> = outs.iter().map(|t| t.channels()).collect();
                let sp = outs[0].spatial();
                let mut data = Vec::with_capacity(outs.iter().map(|t| t.len()).sum());
                for t in outs {
                    data.extend_from_slice(&t.data);
                }
                let y = Tensor {
                    shape: [channels.iter().sum(), sp[0], sp[1], sp[2]],
                    data,
                };
                (y, train.then_some(Cache::Concat { caches, channels }))
            }
            Layer::Residual { body, scale } => {
                let (b, bc) = body.forward(ps, x.clone(), train);
                let mut y = x;
                for (v, r) in y.data.iter_mut().zip(&b.data) {
                    *v = (*v + scale * r).max(0.0);
                }
                let cache = bc.map(|bc| Cache::Residual {
                    body: Box::new(bc),
                    out: y.clone(),
                });
                (y, cache)
            }
        }
    }

    /// Backpropagates `g` through the layer, accumulating parameter gradients.
    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: Cache,
        g: Tensor,
        grads: &mut Grads,
        need_input: bool,
    ) -> Option<Tensor> {
        match (self, cache) {
            (
                Layer::Conv {
                    win, weight, bias, ..
                },
                Cache::Conv { input, conv },
            ) => {
                let (gw_slot, gb_slot) = two_mut(&mut grads.0, *weight, *bias);
                let dummy = Tensor::zeros([0, 0, 0, 0]);
                ops::conv_backward(
                    input.as_ref().unwrap_or(&dummy),
                    &conv,
                    &ps.params[*weight].value,
                    &g,
                    gw_slot,
                    gb_slot,
                    win,
                    need_input,
                )
            }
            (Layer::Relu, Cache::Relu { out }) => {
                let mut g = g;
                for (v, o) in g.data.iter_mut().zip(&out.data) {
                    if *o <= 0.0 {
                        *v = 0.0;
                    }
                }
                Some(g)
            }
            (Layer::AvgPool(win), Cache::AvgPool { input_shape }) => {
                need_input.then(|| ops::avg_pool_backward(input_shape, &g, win))
            }
            (Layer::MaxPool(_), Cache::MaxPool { input_shape, arg }) => {
                need_input.then(|| ops::max_pool_backward(input_shape, &g, &arg))
            }
            (Layer::GlobalAvgPool, Cache::Gap { input_shape }) => {
                if !need_input {
                    return None;
                }
                let mut gx = Tensor::zeros(input_shape);
                let p = gx.plane();
                for c in 0..input_shape[0] {
                    let v = g.data[c] / p as f32;
                    gx.data[c * p..(c + 1) * p].fill(v);
                }
                Some(gx)
            }
            (Layer::Seq(layers), Cache::Seq(mut caches)) => {
                let mut cur = g;
                for i in (0..layers.len()).rev() {
                    let c = caches.pop().expect("one cache per layer");
                    let need = need_input || i > 0;
                    match layers[i].backward(ps, c, cur, grads, need) {
                        Some(gx) => cur = gx,
                        None => return None,
                    }
                }
                Some(cur)
            }
            (Layer::Concat(branches), Cache::Concat { caches, channels }) => {
                let plane = g.plane();
                let sp = g.spatial();
                let mut acc: Option<Tensor> = None;
                let mut offset = 0;
                for ((b, c), ch) in branches.iter().zip(caches).zip(channels) {
                    let part = Tensor {
                        shape: [ch, sp[0], sp[1], sp[2]],
                        data: g.data[offset * plane..(offset + ch) * plane].to_vec(),
                    };
                    offset += ch;
                    if let Some(gx) = b.backward(ps, c, part, grads, need_input) {
                        match &mut acc {
                            Some(a) => {
                                for (x, y) in a.data.iter_mut().zip(&gx.data) {
                                    *x += y;
                                }
                            }
                            None => acc = Some(gx),
                        }
                    }
                }
                acc
            }
            (Layer::Residual { body, scale }, Cache::Residual { body: bc, out }) => {
                let mut g = g;
                for (v, o) in g.data.iter_mut().zip(&out.data) {
                    if *o <= 0.0 {
                        *v = 0.0;
                    }
                }
                let mut gb = g.clone();
                for v in &mut gb.data {
                    *v *= scale;
                }
                let gbody = body.backward(ps, *bc, gb, grads, need_input);
                if !need_input {
                    return None;
                }
                let mut gx = g;
                if let Some(gbody) = gbody {
                    for (x, y) in gx.data.iter_mut().zip(&gbody.data) {
                        *x += y;
                    }
                }
                Some(gx)
            }
            _ => panic!("layer/cache mismatch in backward pass"),
        }
    }

    /// Visits every convolution in declaration order.
    pub fn convs(&self, out: &mut Vec<(usize, usize, Window)>) {
        match self {
            Layer::Conv {
                weight, bias, win, ..
            } => out.push((*weight, *bias, *win)),
            Layer::Seq(ls) | Layer::Concat(ls) => ls.iter().for_each(|l| l.convs(out)),
            Layer::Residual { body, .. } => body.convs(out),
            _ => {}
        }
    }
}

fn two_mut<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = v.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = v.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

pub(crate) fn check_shape(layer: &Layer, input: [usize; 4], what: &str) -> Result<[usize; 4]> {
    layer
        .output_shape(input)
        .ok_or_else(|| Error::Construction(format!("{what}: input {input:?} does not fit the layer stack")))
}
