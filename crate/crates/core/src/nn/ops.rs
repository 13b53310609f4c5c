//! Convolution and pooling kernels over single-sample tensors.

use super::tensor::Tensor;

/// Geometry of a strided, zero-padded window operation in (d, h, w).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl Window {
    /// Odd kernel with "same" padding.
    pub fn same(kernel: [usize; 3], stride: [usize; 3]) -> Self {
        Self {
            kernel,
            stride,
            pad: [kernel[0] / 2, kernel[1] / 2, kernel[2] / 2],
        }
    }

    pub fn valid(kernel: [usize; 3], stride: [usize; 3]) -> Self {
        Self {
            kernel,
            stride,
            pad: [0; 3],
        }
    }

    pub fn output(&self, input: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let span = input[a] + 2 * self.pad[a];
            if span < self.kernel[a] {
                return None;
            }
            out[a] = (span - self.kernel[a]) / self.stride[a] + 1;
        }
        Some(out)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }

    fn k_volume(&self) -> usize {
        self.kernel.iter().product()
    }
}

/// Input index along one axis for an output position and kernel offset.
#[inline]
fn source(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
    let i = (o * stride + k) as isize - pad as isize;
    if i >= 0 && (i as usize) < len {
        Some(i as usize)
    } else {
        None
    }
}

fn im2col(x: &Tensor, win: &Window, out: [usize; 3]) -> Vec<f32> {
    let [c_in, d, h, w] = x.shape;
    let p = out.iter().product::<usize>();
    let kv = win.k_volume();
    let mut cols = vec![0.0f32; c_in * kv * p];
    for c in 0..c_in {
        let src = x.channel(c);
        for kz in 0..win.kernel[0] {
            for ky in 0..win.kernel[1] {
                for kx in 0..win.kernel[2] {
                    let row = ((c * win.kernel[0] + kz) * win.kernel[1] + ky) * win.kernel[2] + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oz in 0..out[0] {
                        let Some(iz) = source(oz, kz, win.stride[0], win.pad[0], d) else {
                            continue;
                        };
                        for oy in 0..out[1] {
                            let Some(iy) = source(oy, ky, win.stride[1], win.pad[1], h) else {
                                continue;
                            };
                            let base = (iz * h + iy) * w;
                            let obase = (oz * out[1] + oy) * out[2];
                            for ox in 0..out[2] {
                                if let Some(ix) = source(ox, kx, win.stride[2], win.pad[2], w) {
                                    dst[obase + ox] = src[base + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f32], shape: [usize; 4], win: &Window, out: [usize; 3]) -> Tensor {
    let [c_in, d, h, w] = shape;
    let p = out.iter().product::<usize>();
    let mut x = Tensor::zeros(shape);
    let plane = d * h * w;
    for c in 0..c_in {
        let dst = &mut x.data[c * plane..(c + 1) * plane];
        for kz in 0..win.kernel[0] {
            for ky in 0..win.kernel[1] {
                for kx in 0..win.kernel[2] {
                    let row = ((c * win.kernel[0] + kz) * win.kernel[1] + ky) * win.kernel[2] + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oz in 0..out[0] {
                        let Some(iz) = source(oz, kz, win.stride[0], win.pad[0], d) else {
                            continue;
                        };
                        for oy in 0..out[1] {
                            let Some(iy) = source(oy, ky, win.stride[1], win.pad[1], h) else {
                                continue;
                            };
                            let base = (iz * h + iy) * w;
                            let obase = (oz * out[1] + oy) * out[2];
                            for ox in 0..out[2] {
                                if let Some(ix) = source(ox, kx, win.stride[2], win.pad[2], w) {
                                    dst[base + ix] += src[obase + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `c (m x n) = a (m x k) * b (k x n) + beta * c`, all row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f32], a_t: bool, b: &[f32], b_t: bool, beta: f32, c: &mut [f32]) {
    // strides for A (m x k): row-major unless stored transposed as (k x m)
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Saved state for the convolution backward pass.
pub struct ConvCache {
    cols: Option<Vec<f32>>,
    input_shape: [usize; 4],
    out: [usize; 3],
}

/// Cross-correlation with bias. `weight` is (c_out, c_in, kd, kh, kw).
pub fn conv_forward(
    x: &Tensor,
    weight: &[f32],
    bias: &[f32],
    c_out: usize,
    win: &Window,
    keep_cache: bool,
) -> (Tensor, Option<ConvCache>) {
    let out = win
        .output(x.spatial())
        .expect("convolution window larger than padded input");
    let p = out.iter().product::<usize>();
    let k = x.channels() * win.k_volume();
    let mut y = Tensor::zeros([c_out, out[0], out[1], out[2]]);
    for (o, b) in bias.iter().enumerate() {
        y.data[o * p..(o + 1) * p].fill(*b);
    }
    let cols = if win.is_pointwise() {
        gemm(c_out, k, p, weight, false, &x.data, false, 1.0, &mut y.data);
        None
    } else {
        let cols = im2col(x, win, out);
        gemm(c_out, k, p, weight, false, &cols, false, 1.0, &mut y.data);
        Some(cols)
    };
    let cache = keep_cache.then(|| ConvCache {
        cols,
        input_shape: x.shape,
        out,
    });
    (y, cache)
}

/// Accumulates weight/bias gradients and returns the input gradient.
pub fn conv_backward(
    input: &Tensor,
    cache: &ConvCache,
    weight: &[f32],
    grad_out: &Tensor,
    grad_w: &mut [f32],
    grad_b: &mut [f32],
    win: &Window,
    need_input_grad: bool,
) -> Option<Tensor> {
    let c_out = grad_out.channels();
    let p = cache.out.iter().product::<usize>();
    let k = cache.input_shape[0] * win.k_volume();
    for (o, gb) in grad_b.iter_mut().enumerate() {
        *gb += grad_out.data[o * p..(o + 1) * p].iter().sum::<f32>();
    }
    let cols: &[f32] = cache.cols.as_deref().unwrap_or(&input.data);
    // dW (c_out x k) += dY (c_out x p) * cols^T (p x k)
    gemm(c_out, p, k, &grad_out.data, false, cols, true, 1.0, grad_w);
    if !need_input_grad {
        return None;
    }
    // dcols (k x p) = W^T (k x c_out) * dY (c_out x p)
    let mut dcols = vec![0.0f32; k * p];
    gemm(k, c_out, p, weight, true, &grad_out.data, false, 0.0, &mut dcols);
    if cache.cols.is_none() {
        return Some(Tensor {
            shape: cache.input_shape,
            data: dcols,
        });
    }
    Some(col2im(&dcols, cache.input_shape, win, cache.out))
}

/// Average pooling that divides by the number of in-bounds elements.
pub fn avg_pool_forward(x: &Tensor, win: &Window) -> Tensor {
    let out = win.output(x.spatial()).expect("pool window larger than input");
    let [c, d, h, w] = x.shape;
    let mut y = Tensor::zeros([c, out[0], out[1], out[2]]);
    let op = out.iter().product::<usize>();
    for ch in 0..c {
        let src = x.channel(ch);
        for oz in 0..out[0] {
            for oy in 0..out[1] {
                for ox in 0..out[2] {
                    let mut sum = 0.0;
                    let mut n = 0usize;
                    for kz in 0..win.kernel[0] {
                        let Some(iz) = source(oz, kz, win.stride[0], win.pad[0], d) else { continue };
                        for ky in 0..win.kernel[1] {
                            let Some(iy) = source(oy, ky, win.stride[1], win.pad[1], h) else { continue };
                            for kx in 0..win.kernel[2] {
                                let Some(ix) = source(ox, kx, win.stride[2], win.pad[2], w) else { continue };
                                sum += src[(iz * h + iy) * w + ix];
                                n += 1;
                            }
                        }
                    }
                    y.data[ch * op + (oz * out[1] + oy) * out[2] + ox] = if n > 0 { sum / n as f32 } else { 0.0 };
                }
            }
        }
    }
    y
}

pub fn avg_pool_backward(input_shape: [usize; 4], grad_out: &Tensor, win: &Window) -> Tensor {
    let [c, d, h, w] = input_shape;
    let out = grad_out.spatial();
    let op = out.iter().product::<usize>();
    let mut gx = Tensor::zeros(input_shape);
    let plane = d * h * w;
    for ch in 0..c {
        for oz in 0..out[0] {
            for oy in 0..out[1] {
                for ox in 0..out[2] {
                    let mut idx = Vec::with_capacity(win.k_volume());
                    for kz in 0..win.kernel[0] {
                        let Some(iz) = source(oz, kz, win.stride[0], win.pad[0], d) else { continue };
                        for ky in 0..win.kernel[1] {
                            let Some(iy) = source(oy, ky, win.stride[1], win.pad[1], h) else { continue };
                            for kx in 0..win.kernel[2] {
                                let Some(ix) = source(ox, kx, win.stride[2], win.pad[2], w) else { continue };
                                idx.push((iz * h + iy) * w + ix);
                            }
                        }
                    }
                    if idx.is_empty() {
                        continue;
                    }
                    let g = grad_out.data[ch * op + (oz * out[1] + oy) * out[2] + ox] / idx.len() as f32;
                    for i in idx {
                        gx.data[ch * plane + i] += g;
                    }
                }
            }
        }
    }
    gx
}

/// Max pooling; also returns the flat input index of each maximum.
pub fn max_pool_forward(x: &Tensor, win: &Window) -> (Tensor, Vec<usize>) {
    let out = win.output(x.spatial()).expect("pool window larger than input");
    let [c, d, h, w] = x.shape;
    let mut y = Tensor::zeros([c, out[0], out[1], out[2]]);
    let op = out.iter().product::<usize>();
    let plane = d * h * w;
    let mut arg = vec![0usize; c * op];
    for ch in 0..c {
        let src = x.channel(ch);
        for oz in 0..out[0] {
            for oy in 0..out[1] {
                for ox in 0..out[2] {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = usize::MAX;
                    for kz in 0..win.kernel[0] {
                        let Some(iz) = source(oz, kz, win.stride[0], win.pad[0], d) else { continue };
                        for ky in 0..win.kernel[1] {
                            let Some(iy) = source(oy, ky, win.stride[1], win.pad[1], h) else { continue };
                            for kx in 0..win.kernel[2] {
                                let Some(ix) = source(ox, kx, win.stride[2], win.pad[2], w) else { continue };
                                let i = (iz * h + iy) * w + ix;
                                if src[i] > best {
                                    best = src[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    let o = ch * op + (oz * out[1] + oy) * out[2] + ox;
                    y.data[o] = if best_i == usize::MAX { 0.0 } else { best };
                    arg[o] = if best_i == usize::MAX { usize::MAX } else { ch * plane + best_i };
                }
            }
        }
    }
    (y, arg)
}

pub fn max_pool_backward(input_shape: [usize; 4], grad_out: &Tensor, arg: &[usize]) -> Tensor {
    let mut gx = Tensor::zeros(input_shape);
    for (g, &i) in grad_out.data.iter().zip(arg) {
        if i != usize::MAX {
            gx.data[i] += g;
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop correlation used as an oracle.
    fn naive_conv(x: &Tensor, w: &[f32], b: &[f32], c_out: usize, win: &Window) -> Tensor {
        let out = win.output(x.spatial()).unwrap();
        let [c_in, d, h, wd] = x.shape;
        let [kd, kh, kw] = win.kernel;
        let mut y = Tensor::zeros([c_out, out[0], out[1], out[2]]);
        for o in 0..c_out {
            for oz in 0..out[0] {
                for oy in 0..out[1] {
                    for ox in 0..out[2] {
                        let mut s = b[o] as f64;
                        for c in 0..c_in {
                            for z in 0..kd {
                                for yy in 0..kh {
                                    for xx in 0..kw {
                                        let iz = (oz * win.stride[0] + z) as isize - win.pad[0] as isize;
                                        let iy = (oy * win.stride[1] + yy) as isize - win.pad[1] as isize;
                                        let ix = (ox * win.stride[2] + xx) as isize - win.pad[2] as isize;
                                        if iz < 0 || iy < 0 || ix < 0 || iz >= d as isize || iy >= h as isize || ix >= wd as isize {
                                            continue;
                                        }
                                        let xv = x.data[((c * d + iz as usize) * h + iy as usize) * wd + ix as usize];
                                        let wv = w[(((o * c_in + c) * kd + z) * kh + yy) * kw + xx];
                                        s += xv as f64 * wv as f64;
                                    }
                                }
                            }
                        }
                        y.data[((o * out[0] + oz) * out[1] + oy) * out[2] + ox] = s as f32;
                    }
                }
            }
        }
        y
    }

    fn pseudo(n: usize, seed: u32) -> Vec<f32> {
        let mut s = seed.wrapping_mul(2654435761).wrapping_add(1);
        (0..n)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 17;
                s ^= s << 5;
                (s as f32 / u32::MAX as f32) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let cases = [
            (Window::same([3, 3, 3], [1, 1, 1]), [2, 5, 6, 7]),
            (Window::same([3, 3, 3], [2, 2, 1]), [2, 5, 6, 7]),
            (Window::same([1, 3, 3], [1, 2, 2]), [3, 1, 9, 8]),
            (Window::valid([1, 1, 1], [1, 1, 1]), [4, 2, 3, 3]),
            (Window::valid([2, 3, 1], [1, 1, 2]), [1, 4, 5, 6]),
        ];
        for (i, (win, shape)) in cases.iter().enumerate() {
            let x = Tensor::from_vec(*shape, pseudo(shape.iter().product(), i as u32)).unwrap();
            let c_out = 3;
            let w = pseudo(c_out * shape[0] * win.kernel.iter().product::<usize>(), 100 + i as u32);
            let b = pseudo(c_out, 200 + i as u32);
            let (y, _) = conv_forward(&x, &w, &b, c_out, win, false);
            let expected = naive_conv(&x, &w, &b, c_out, win);
            assert_eq!(y.shape, expected.shape);
            for (a, e) in y.data.iter().zip(&expected.data) {
                assert!((a - e).abs() < 1e-4, "case {i}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let win = Window::same([3, 3, 3], [2, 1, 2]);
        let shape = [2, 3, 4, 5];
        let x = Tensor::from_vec(shape, pseudo(120, 1)).unwrap();
        let c_out = 2;
        let w = pseudo(c_out * 2 * 27, 2);
        let b = pseudo(c_out, 3);
        let (y, cache) = conv_forward(&x, &w, &b, c_out, &win, true);
        let upstream = pseudo(y.len(), 4);
        let loss = |x: &Tensor, w: &[f32]| -> f64 {
            let (y, _) = conv_forward(x, w, &b, c_out, &win, false);
            y.data.iter().zip(&upstream).map(|(a, g)| *a as f64 * *g as f64).sum()
        };
        let g_out = Tensor::from_vec(y.shape, upstream.clone()).unwrap();
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; b.len()];
        let gx = conv_backward(&x, cache.as_ref().unwrap(), &w, &g_out, &mut gw, &mut gb, &win, true).unwrap();
        let h = 1e-2f32;
        for i in [0, 7, 33, 80, 119] {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (loss(&xp, &w) - loss(&xm, &w)) / (2.0 * h as f64);
            assert!((fd - gx.data[i] as f64).abs() < 2e-3, "x[{i}]: {fd} vs {}", gx.data[i]);
        }
        for i in [0, 13, 50, 107] {
            let mut wp = w.clone();
            wp[i] += h;
            let mut wm = w.clone();
            wm[i] -= h;
            let fd = (loss(&x, &wp) - loss(&x, &wm)) / (2.0 * h as f64);
            assert!((fd - gw[i] as f64).abs() < 2e-3, "w[{i}]: {fd} vs {}", gw[i]);
        }
        let total: f32 = upstream[..y.plane()].iter().sum();
        assert!((gb[0] - total).abs() < 1e-4);
    }

    #[test]
    fn pooling_forward_and_backward() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let win = Window::valid([1, 2, 2], [1, 2, 2]);
        let y = avg_pool_forward(&x, &win);
        assert_eq!(y.data, vec![2.5]);
        let g = avg_pool_backward(x.shape, &Tensor::from_vec([1, 1, 1, 1], vec![1.0]).unwrap(), &win);
        assert_eq!(g.data, vec![0.25; 4]);
        let (m, arg) = max_pool_forward(&x, &win);
        assert_eq!(m.data, vec![4.0]);
        let g = max_pool_backward(x.shape, &Tensor::from_vec([1, 1, 1, 1], vec![2.0]).unwrap(), &arg);
        assert_eq!(g.data, vec![0.0, 0.0, 0.0, 2.0]);
        // padded average divides by the in-bounds count
        let same = Window::same([1, 3, 3], [1, 1, 1]);
        let y = avg_pool_forward(&x, &same);
        assert_eq!(y.data, vec![2.5; 4]);
    }
}
