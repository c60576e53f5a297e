//! Batched NCHW kernels with explicit backward passes.
//!
//! Per-sample work runs through [`crate::par`]; anything reduced across the
//! batch (weight gradients, batch-norm statistics) is summed sequentially in
//! sample order so results do not depend on the thread count.

use crate::par;

/// Dense NCHW activation tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    #[inline]
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    #[inline]
    pub fn sample(&self, i: usize) -> &[f64] {
        let s = self.sample_len();
        &self.data[i * s..(i + 1) * s]
    }

    fn from_samples(c: usize, h: usize, w: usize, samples: Vec<Vec<f64>>) -> Self {
        let n = samples.len();
        let mut data = Vec::with_capacity(n * c * h * w);
        for s in samples {
            data.extend_from_slice(&s);
        }
        Self { n, c, h, w, data }
    }

    /// Stacks single-sample tensors into one batch.
    pub fn stack(items: &[Tensor]) -> Self {
        let first = &items[0];
        let mut data = Vec::with_capacity(items.len() * first.sample_len());
        for t in items {
            debug_assert_eq!((t.c, t.h, t.w), (first.c, first.h, first.w));
            data.extend_from_slice(&t.data);
        }
        Self {
            n: items.iter().map(|t| t.n).sum(),
            c: first.c,
            h: first.h,
            w: first.w,
            data,
        }
    }
}

/// `C = A·B` for row-major `A: m×k`, `B: k×n` with optional transposes given
/// as the logical (row, col) strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: strides describe exactly the row-major extents of the slices,
    // whose lengths are checked below.
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
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

/// Square-kernel convolution geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_size(&self, size: usize) -> usize {
        (size + 2 * self.pad - self.k) / self.stride + 1
    }
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, g: ConvGeom, oh: usize, ow: usize) -> Vec<f64> {
    let k = g.k;
    let mut cols = vec![0.0; c * k * k * oh * ow];
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut cols[row + oy * ow..row + (oy + 1) * ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, g: ConvGeom, oh: usize, ow: usize) -> Vec<f64> {
    let k = g.k;
    let mut x = vec![0.0; c * h * w];
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * ow..row + (oy + 1) * ow];
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, s) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
    x
}

/// Convolution. `weight` is `out_c × (in_c·k·k)`.
pub fn conv_forward(
    x: &Tensor,
    weight: &[f64],
    bias: Option<&[f64]>,
    out_c: usize,
    g: ConvGeom,
) -> Tensor {
    let (oh, ow) = (g.out_size(x.h), g.out_size(x.w));
    let kk = x.c * g.k * g.k;
    let samples = par::map_range(x.n, |i| {
        let cols = im2col(x.sample(i), x.c, x.h, x.w, g, oh, ow);
        let mut y = vec![0.0; out_c * oh * ow];
        gemm(out_c, kk, oh * ow, weight, false, &cols, false, &mut y, false);
        if let Some(b) = bias {
            for (o, plane) in y.chunks_mut(oh * ow).enumerate() {
                plane.iter_mut().for_each(|v| *v += b[o]);
            }
        }
        y
    });
    Tensor::from_samples(out_c, oh, ow, samples)
}

/// Returns `(dx, dweight, dbias)`.
pub fn conv_backward(
    x: &Tensor,
    weight: &[f64],
    dy: &Tensor,
    g: ConvGeom,
    want_dx: bool,
) -> (Option<Tensor>, Vec<f64>, Vec<f64>) {
    let (out_c, oh, ow) = (dy.c, dy.h, dy.w);
    let kk = x.c * g.k * g.k;
    let per_sample = par::map_range(x.n, |i| {
        let cols = im2col(x.sample(i), x.c, x.h, x.w, g, oh, ow);
        let dyi = dy.sample(i);
        let mut dw = vec![0.0; out_c * kk];
        gemm(out_c, oh * ow, kk, dyi, false, &cols, true, &mut dw, false);
        let db: Vec<f64> = dyi.chunks(oh * ow).map(|p| p.iter().sum()).collect();
        let dx = want_dx.then(|| {
            let mut dcols = vec![0.0; kk * oh * ow];
            gemm(kk, out_c, oh * ow, weight, true, dyi, false, &mut dcols, false);
            col2im(&dcols, x.c, x.h, x.w, g, oh, ow)
        });
        (dx, dw, db)
    });
    reduce_grads(x, per_sample, out_c * kk, out_c)
}

/// Transposed convolution, the adjoint of a stride-`g.stride` convolution
/// from the output grid back onto the input grid. `weight` is
/// `in_c × (out_c·k·k)`; output size is `in·stride` for the k=3, s=2, p=1
/// geometry used by the decoders.
pub fn deconv_forward(
    x: &Tensor,
    weight: &[f64],
    bias: Option<&[f64]>,
    out_c: usize,
    g: ConvGeom,
) -> Tensor {
    let (oh, ow) = (x.h * g.stride, x.w * g.stride);
    let kk = out_c * g.k * g.k;
    let samples = par::map_range(x.n, |i| {
        let mut cols = vec![0.0; kk * x.h * x.w];
        gemm(kk, x.c, x.h * x.w, weight, true, x.sample(i), false, &mut cols, false);
        let mut y = col2im(&cols, out_c, oh, ow, g, x.h, x.w);
        if let Some(b) = bias {
            for (o, plane) in y.chunks_mut(oh * ow).enumerate() {
                plane.iter_mut().for_each(|v| *v += b[o]);
            }
        }
        y
    });
    Tensor::from_samples(out_c, oh, ow, samples)
}

pub fn deconv_backward(
    x: &Tensor,
    weight: &[f64],
    dy: &Tensor,
    g: ConvGeom,
) -> (Option<Tensor>, Vec<f64>, Vec<f64>) {
    let out_c = dy.c;
    let kk = out_c * g.k * g.k;
    let hw = x.h * x.w;
    let per_sample = par::map_range(x.n, |i| {
        let dyi = dy.sample(i);
        let dcols = im2col(dyi, out_c, dy.h, dy.w, g, x.h, x.w);
        let mut dw = vec![0.0; x.c * kk];
        gemm(x.c, hw, kk, x.sample(i), false, &dcols, true, &mut dw, false);
        let mut dx = vec![0.0; x.c * hw];
        gemm(x.c, kk, hw, weight, false, &dcols, false, &mut dx, false);
        let db: Vec<f64> = dyi.chunks(dy.h * dy.w).map(|p| p.iter().sum()).collect();
        (Some(dx), dw, db)
    });
    reduce_grads(x, per_sample, x.c * kk, out_c)
}

#[allow(clippy::type_complexity)]
fn reduce_grads(
    x: &Tensor,
    per_sample: Vec<(Option<Vec<f64>>, Vec<f64>, Vec<f64>)>,
    wlen: usize,
    blen: usize,
) -> (Option<Tensor>, Vec<f64>, Vec<f64>) {
    let mut dw = vec![0.0; wlen];
    let mut db = vec![0.0; blen];
    let mut dxs = Vec::with_capacity(per_sample.len());
    for (dx, w, b) in per_sample {
        dw.iter_mut().zip(&w).for_each(|(a, v)| *a += v);
        db.iter_mut().zip(&b).for_each(|(a, v)| *a += v);
        if let Some(dx) = dx {
            dxs.push(dx);
        }
    }
    let dx = (!dxs.is_empty()).then(|| Tensor::from_samples(x.c, x.h, x.w, dxs));
    (dx, dw, db)
}

pub const BN_EPS: f64 = 1e-5;

/// Saved state of a training-mode batch-norm forward pass.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub x_hat: Tensor,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Batch normalization with statistics of the current batch.
pub fn bn_forward_train(x: &Tensor, gamma: &[f64], beta: &[f64]) -> (Tensor, BnCache) {
    let hw = x.h * x.w;
    let count = (x.n * hw) as f64;
    let mut mean = vec![0.0; x.c];
    let mut var = vec![0.0; x.c];
    for c in 0..x.c {
        let mut s = 0.0;
        for i in 0..x.n {
            s += x.sample(i)[c * hw..(c + 1) * hw].iter().sum::<f64>();
        }
        let m = s / count;
        let mut v = 0.0;
        for i in 0..x.n {
            v += x.sample(i)[c * hw..(c + 1) * hw]
                .iter()
                .map(|a| (a - m) * (a - m))
                .sum::<f64>();
        }
        mean[c] = m;
        var[c] = v / count;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut x_hat = x.clone();
    let mut y = x.clone();
    let sl = x.sample_len();
    for i in 0..x.n {
        for c in 0..x.c {
            let r = i * sl + c * hw..i * sl + (c + 1) * hw;
            for (xh, yv) in x_hat.data[r.clone()].iter_mut().zip(&mut y.data[r]) {
                *xh = (*xh - mean[c]) * inv_std[c];
                *yv = gamma[c] * *xh + beta[c];
            }
        }
    }
    (
        y,
        BnCache {
            x_hat,
            inv_std,
            mean,
            var,
        },
    )
}

/// Batch normalization with frozen running statistics.
pub fn bn_forward_eval(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> Tensor {
    let hw = x.h * x.w;
    let mut y = x.clone();
    for (idx, v) in y.data.iter_mut().enumerate() {
        let c = (idx / hw) % x.c;
        *v = gamma[c] * (*v - running_mean[c]) / (running_var[c] + BN_EPS).sqrt() + beta[c];
    }
    y
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn bn_backward(dy: &Tensor, cache: &BnCache, gamma: &[f64]) -> (Tensor, Vec<f64>, Vec<f64>) {
    let hw = dy.h * dy.w;
    let count = (dy.n * hw) as f64;
    let sl = dy.sample_len();
    let mut dgamma = vec![0.0; dy.c];
    let mut dbeta = vec![0.0; dy.c];
    for c in 0..dy.c {
        for i in 0..dy.n {
            let r = i * sl + c * hw..i * sl + (c + 1) * hw;
            for (g, xh) in dy.data[r.clone()].iter().zip(&cache.x_hat.data[r]) {
                dgamma[c] += g * xh;
                dbeta[c] += g;
            }
        }
    }
    let mut dx = dy.clone();
    for c in 0..dy.c {
        let k = gamma[c] * cache.inv_std[c] / count;
        for i in 0..dy.n {
            let r = i * sl + c * hw..i * sl + (c + 1) * hw;
            for (d, xh) in dx.data[r.clone()].iter_mut().zip(&cache.x_hat.data[r]) {
                *d = k * (count * *d - dbeta[c] - xh * dgamma[c]);
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn relu(x: &mut Tensor) {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Masks `dy` by the ReLU output `y`.
pub fn relu_backward(dy: &mut Tensor, y: &Tensor) {
    dy.data
        .iter_mut()
        .zip(&y.data)
        .for_each(|(d, &v)| {
            if v <= 0.0 {
                *d = 0.0
            }
        });
}

/// Channel concatenation `[a, b]`.
pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!((a.n, a.h, a.w), (b.n, b.h, b.w));
    let samples = (0..a.n)
        .map(|i| {
            let mut s = a.sample(i).to_vec();
            s.extend_from_slice(b.sample(i));
            s
        })
        .collect();
    Tensor::from_samples(a.c + b.c, a.h, a.w, samples)
}

/// Splits a gradient w.r.t. `[a, b]` back into its two parts.
pub fn split_channels(d: &Tensor, ca: usize) -> (Tensor, Tensor) {
    let hw = d.h * d.w;
    let (mut a, mut b) = (Vec::with_capacity(d.n), Vec::with_capacity(d.n));
    for i in 0..d.n {
        let s = d.sample(i);
        a.push(s[..ca * hw].to_vec());
        b.push(s[ca * hw..].to_vec());
    }
    (
        Tensor::from_samples(ca, d.h, d.w, a),
        Tensor::from_samples(d.c - ca, d.h, d.w, b),
    )
}

/// Per-pixel softmax over channels, written channel-last as `n` maps of
/// `h·w·c`.
pub fn softmax_channels(logits: &Tensor) -> Vec<Vec<f64>> {
    let hw = logits.h * logits.w;
    let c = logits.c;
    par::map_range(logits.n, |i| {
        let s = logits.sample(i);
        let mut out = vec![0.0; hw * c];
        for p in 0..hw {
            let mut m = f64::NEG_INFINITY;
            for k in 0..c {
                m = m.max(s[k * hw + p]);
            }
            let mut z = 0.0;
            for k in 0..c {
                let e = (s[k * hw + p] - m).exp();
                out[p * c + k] = e;
                z += e;
            }
            out[p * c..(p + 1) * c].iter_mut().for_each(|v| *v /= z);
        }
        out
    })
}
