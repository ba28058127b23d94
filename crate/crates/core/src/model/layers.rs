//! Building blocks of the desk-scale convnet: im2col convolution, leaky ReLU,
//! 2×2 max pooling, global average pooling, and a linear head. Every layer
//! has an explicit backward pass that can produce parameter gradients,
//! input gradients, or both — input gradients are what the outlier
//! synthesis and ODIN perturbation rely on.

use ndarray::{s, Array1, Array2, Array4, ArrayView2, Axis};
use rand::rngs::StdRng;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::num::Float;

fn he_normal<F: Float>(rng: &mut StdRng, fan_in: usize) -> impl FnMut() -> F + '_ {
    let std = (2.0 / fan_in as f64).sqrt();
    move || {
        let v: f64 = rng.sample(StandardNormal);
        F::from_f64_lossy(v * std)
    }
}

/// 3×3-style convolution, stride 1, stored in GEMM form:
/// `weight` is `[out_ch, in_ch·k·k]`.
#[derive(Debug, Clone)]
pub struct Conv2d<F: Float> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub pad: usize,
}

/// Per-batch state a convolution needs for its backward pass.
pub struct ConvCache<F: Float> {
    cols: Array2<F>,
    in_shape: (usize, usize, usize, usize),
}

impl<F: Float> Conv2d<F> {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, pad: usize, rng: &mut StdRng) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let mut draw = he_normal::<F>(rng, fan_in);
        let weight = Array2::from_shape_fn((out_ch, fan_in), |_| draw());
        Self {
            weight,
            bias: Array1::zeros(out_ch),
            in_ch,
            out_ch,
            kernel,
            pad,
        }
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        (h + 2 * self.pad + 1 - self.kernel, w + 2 * self.pad + 1 - self.kernel)
    }

    fn im2col(&self, x: &Array4<F>) -> Array2<F> {
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (ho, wo) = self.out_spatial(h, w);
        let k = self.kernel;
        let pad = self.pad as isize;
        let mut cols = Array2::<F>::zeros((c * k * k, b * ho * wo));
        let x_slice = x.as_slice().expect("contiguous input");
        let cols_slice = cols.as_slice_mut().expect("contiguous cols");
        let row_len = b * ho * wo;
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let base = row * row_len;
                    for bi in 0..b {
                        for oi in 0..ho {
                            let ii = oi as isize + ki as isize - pad;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            // valid oj range: 0 <= oj + kj - pad < w
                            let lo = (pad - kj as isize).max(0) as usize;
                            let hi = ((w as isize + pad - kj as isize) as usize).min(wo);
                            if lo >= hi {
                                continue;
                            }
                            let src0 = ((bi * c + ci) * h + ii as usize) * w
                                + (lo as isize + kj as isize - pad) as usize;
                            let dst0 = base + (bi * ho + oi) * wo + lo;
                            cols_slice[dst0..dst0 + (hi - lo)]
                                .copy_from_slice(&x_slice[src0..src0 + (hi - lo)]);
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(
        &self,
        cols_grad: &Array2<F>,
        in_shape: (usize, usize, usize, usize),
    ) -> Array4<F> {
        let (b, c, h, w) = in_shape;
        let (ho, wo) = self.out_spatial(h, w);
        let k = self.kernel;
        let pad = self.pad as isize;
        let mut dx = Array4::<F>::zeros(in_shape);
        let dx_slice = dx.as_slice_mut().expect("contiguous dx");
        let cg = cols_grad.as_slice().expect("contiguous cols grad");
        let row_len = b * ho * wo;
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let base = row * row_len;
                    for bi in 0..b {
                        for oi in 0..ho {
                            let ii = oi as isize + ki as isize - pad;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            let lo = (pad - kj as isize).max(0) as usize;
                            let hi = ((w as isize + pad - kj as isize) as usize).min(wo);
                            if lo >= hi {
                                continue;
                            }
                            let dst0 = ((bi * c + ci) * h + ii as usize) * w
                                + (lo as isize + kj as isize - pad) as usize;
                            let src0 = base + (bi * ho + oi) * wo + lo;
                            for t in 0..(hi - lo) {
                                dx_slice[dst0 + t] += cg[src0 + t];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    /// Forward pass returning the output and the backward cache.
    pub fn forward_cached(&self, x: &Array4<F>) -> (Array4<F>, ConvCache<F>) {
        let (b, _, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (ho, wo) = self.out_spatial(h, w);
        let cols = self.im2col(x);
        let out_mat = self.weight.dot(&cols); // [out_ch, b*ho*wo]
        let mut out = Array4::<F>::zeros((b, self.out_ch, ho, wo));
        for bi in 0..b {
            let chunk = out_mat.slice(s![.., bi * ho * wo..(bi + 1) * ho * wo]);
            let mut dst = out.index_axis_mut(Axis(0), bi);
            let reshaped = chunk
                .to_shape((self.out_ch, ho, wo))
                .expect("chunk reshapes to output block");
            dst.assign(&reshaped);
        }
        for (o, &bv) in self.bias.iter().enumerate() {
            out.slice_mut(s![.., o, .., ..]).mapv_inplace(|v| v + bv);
        }
        (
            out,
            ConvCache {
                cols,
                in_shape: (b, x.shape()[1], h, w),
            },
        )
    }

    /// Backward pass. Returns `(dw, db)` when `need_params`, and `dx` when
    /// `need_input`.
    pub fn backward(
        &self,
        cache: &ConvCache<F>,
        dy: &Array4<F>,
        need_params: bool,
        need_input: bool,
    ) -> (Option<(Array2<F>, Array1<F>)>, Option<Array4<F>>) {
        let (b, _, h, w) = cache.in_shape;
        let (ho, wo) = self.out_spatial(h, w);
        // Rearrange dy to [out_ch, b*ho*wo] matching the cols layout.
        let mut dy_mat = Array2::<F>::zeros((self.out_ch, b * ho * wo));
        for bi in 0..b {
            let block = dy.index_axis(Axis(0), bi);
            let flat = block
                .to_shape((self.out_ch, ho * wo))
                .expect("dy block reshapes");
            dy_mat
                .slice_mut(s![.., bi * ho * wo..(bi + 1) * ho * wo])
                .assign(&flat);
        }
        let params = if need_params {
            let dw = dy_mat.dot(&cache.cols.t());
            let db = dy_mat.sum_axis(Axis(1));
            Some((dw, db))
        } else {
            None
        };
        let dx = if need_input {
            let cols_grad = self.weight.t().dot(&dy_mat);
            Some(self.col2im(&cols_grad, cache.in_shape))
        } else {
            None
        };
        (params, dx)
    }
}

/// Negative-side slope of the leaky ReLU. Nonzero so features can never
/// collapse to an exactly constant vector, which the standardization
/// bottleneck rejects.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Leaky ReLU cache: which entries were positive.
pub struct ReluCache {
    active: Vec<bool>,
}

pub fn relu_forward_cached<F: Float>(x: &mut Array4<F>) -> ReluCache {
    let slope = F::from_f64_lossy(LEAKY_SLOPE);
    let mut active = Vec::with_capacity(x.len());
    for v in x.iter_mut() {
        let on = *v > F::zero();
        active.push(on);
        if !on {
            *v = *v * slope;
        }
    }
    ReluCache { active }
}

pub fn relu_backward<F: Float>(cache: &ReluCache, dy: &mut Array4<F>) {
    let slope = F::from_f64_lossy(LEAKY_SLOPE);
    for (v, &on) in dy.iter_mut().zip(cache.active.iter()) {
        if !on {
            *v = *v * slope;
        }
    }
}

/// 2×2 max pooling, stride 2.
pub struct PoolCache {
    argmax: Vec<u8>,
    in_shape: (usize, usize, usize, usize),
}

pub fn maxpool2_forward_cached<F: Float>(x: &Array4<F>) -> (Array4<F>, PoolCache) {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    debug_assert!(h % 2 == 0 && w % 2 == 0, "pooling needs even spatial dims");
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Array4::<F>::zeros((b, c, ho, wo));
    let mut argmax = vec![0u8; b * c * ho * wo];
    let mut idx = 0;
    for bi in 0..b {
        for ci in 0..c {
            for oi in 0..ho {
                for oj in 0..wo {
                    let mut best = x[[bi, ci, 2 * oi, 2 * oj]];
                    let mut arg = 0u8;
                    for (a, (di, dj)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                        let v = x[[bi, ci, 2 * oi + di, 2 * oj + dj]];
                        if v > best {
                            best = v;
                            arg = a as u8;
                        }
                    }
                    out[[bi, ci, oi, oj]] = best;
                    argmax[idx] = arg;
                    idx += 1;
                }
            }
        }
    }
    (
        out,
        PoolCache {
            argmax,
            in_shape: (b, c, h, w),
        },
    )
}

pub fn maxpool2_backward<F: Float>(cache: &PoolCache, dy: &Array4<F>) -> Array4<F> {
    let (b, c, h, w) = cache.in_shape;
    let (ho, wo) = (h / 2, w / 2);
    let mut dx = Array4::<F>::zeros(cache.in_shape);
    let mut idx = 0;
    for bi in 0..b {
        for ci in 0..c {
            for oi in 0..ho {
                for oj in 0..wo {
                    let arg = cache.argmax[idx] as usize;
                    let (di, dj) = [(0, 0), (0, 1), (1, 0), (1, 1)][arg];
                    dx[[bi, ci, 2 * oi + di, 2 * oj + dj]] += dy[[bi, ci, oi, oj]];
                    idx += 1;
                }
            }
        }
    }
    dx
}

/// Mean over the spatial dimensions: `[B,C,H,W] → [B,C]`.
pub fn global_avg_pool<F: Float>(x: &Array4<F>) -> Array2<F> {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let scale = F::one() / F::from_usize_lossy(h * w);
    let mut out = Array2::<F>::zeros((b, c));
    for bi in 0..b {
        for ci in 0..c {
            out[[bi, ci]] = x.slice(s![bi, ci, .., ..]).sum() * scale;
        }
    }
    out
}

pub fn global_avg_pool_backward<F: Float>(
    dy: &Array2<F>,
    spatial: (usize, usize),
) -> Array4<F> {
    let (b, c) = (dy.shape()[0], dy.shape()[1]);
    let (h, w) = spatial;
    let scale = F::one() / F::from_usize_lossy(h * w);
    let mut dx = Array4::<F>::zeros((b, c, h, w));
    for bi in 0..b {
        for ci in 0..c {
            dx.slice_mut(s![bi, ci, .., ..]).fill(dy[[bi, ci]] * scale);
        }
    }
    dx
}

/// Fully-connected layer `y = x Wᵀ + b` with `weight [out, in]`.
#[derive(Debug, Clone)]
pub struct Linear<F: Float> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Float> Linear<F> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut StdRng) -> Self {
        let mut draw = he_normal::<F>(rng, in_dim);
        let weight = Array2::from_shape_fn((out_dim, in_dim), |_| draw());
        Self {
            weight,
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, F>) -> Array2<F> {
        let mut out = x.dot(&self.weight.t());
        out += &self.bias;
        out
    }

    /// Returns `(dw, db)` when `need_params`, and `dx` when `need_input`.
    pub fn backward(
        &self,
        x: ArrayView2<'_, F>,
        dy: ArrayView2<'_, F>,
        need_params: bool,
        need_input: bool,
    ) -> (Option<(Array2<F>, Array1<F>)>, Option<Array2<F>>) {
        let params = if need_params {
            let dw = dy.t().dot(&x);
            let db = dy.sum_axis(Axis(0));
            Some((dw, db))
        } else {
            None
        };
        let dx = if need_input {
            Some(dy.dot(&self.weight))
        } else {
            None
        };
        (params, dx)
    }
}
